# /src/numerics/geo.py
import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from sklearn.cluster import DBSCAN
from sklearn.metrics.pairwise import haversine_distances
from sklearn.neighbors import BallTree

from ..core.errors import DataError

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
NOISE = -1

Point = Tuple[float, float]


def _check_point(p: Point):
    lat, lon = p
    if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
        raise DataError(f"Coordinates out of range: ({lat}, {lon})")


def haversine(p1: Point, p2: Point) -> float:
    """Great-circle distance in meters between two (lat, lon) points in degrees."""
    _check_point(p1)
    _check_point(p2)
    lat1, lon1 = math.radians(p1[0]), math.radians(p1[1])
    lat2, lon2 = math.radians(p2[0]), math.radians(p2[1])
    a = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def to_radians(points: Sequence[Point]) -> np.ndarray:
    arr = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.radians(arr)


def haversine_to(points: Sequence[Point], center: Point) -> np.ndarray:
    """Distances in meters from every point to one center."""
    if len(points) == 0:
        return np.zeros(0)
    return haversine_distances(to_radians(points), to_radians([center]))[:, 0] * EARTH_RADIUS_M


def build_ball_tree(points: Sequence[Point]) -> BallTree:
    return BallTree(to_radians(points), metric="haversine")


def nearest_neighbor_distances(points: Sequence[Point]) -> np.ndarray:
    """Distance in meters from each point to its nearest other point."""
    if len(points) < 2:
        raise DataError("Nearest-neighbor distances need at least 2 points")
    tree = build_ball_tree(points)
    dist, _ = tree.query(to_radians(points), k=2)
    return dist[:, 1] * EARTH_RADIUS_M


def neighbor_counts(points: Sequence[Point], radius_m: float) -> np.ndarray:
    """Number of other points within radius_m of each point."""
    tree = build_ball_tree(points)
    counts = tree.query_radius(to_radians(points), r=radius_m / EARTH_RADIUS_M, count_only=True)
    return np.asarray(counts) - 1


@dataclass(frozen=True)
class DbscanResult:
    cluster_ids: np.ndarray  # per point, NOISE for noise
    num_clusters: int

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_ids == cluster)


def dbscan(points: Sequence[Point], eps: float, min_pts: int) -> DbscanResult:
    """
    Density clustering with the haversine metric.

    A point is core when at least `min_pts` OTHER points lie within `eps` meters.
    Border points join the first cluster (in seed-index order) that reaches them.
    """
    if eps <= 0 or min_pts < 1:
        raise DataError(f"dbscan needs eps > 0 and min_pts >= 1 (got eps={eps}, min_pts={min_pts})")
    if len(points) == 0:
        return DbscanResult(np.zeros(0, dtype=int), 0)
    # sklearn counts the point itself in min_samples
    model = DBSCAN(eps=eps / EARTH_RADIUS_M, min_samples=min_pts + 1, metric="haversine", algorithm="ball_tree")
    labels = model.fit_predict(to_radians(points))
    num_clusters = int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 0
    logger.debug(f"dbscan: {len(points)} points, eps={eps:.1f} m, min_pts={min_pts} -> "
                 f"{num_clusters} clusters, {int((labels == NOISE).sum())} noise")
    return DbscanResult(labels.astype(int), num_clusters)


def cluster_radius_mean(points: Sequence[Point], result: DbscanResult) -> float:
    """Mean over clusters of the max member distance to the cluster's coordinate-mean center."""
    if result.num_clusters == 0:
        raise DataError("No clusters found; cannot compute a cluster radius (try a larger sample)")
    arr = np.asarray(points, dtype=float).reshape(-1, 2)
    radii: List[float] = []
    for cluster in range(result.num_clusters):
        members = arr[result.members(cluster)]
        center = tuple(members.mean(axis=0))
        radii.append(float(haversine_to(members, center).max()))
    return float(np.mean(radii))
