# /src/numerics/kmeans.py
import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from ..core.errors import DataError, InvariantError

logger = logging.getLogger(__name__)

MAX_ITER = 300


@dataclass(frozen=True)
class LabeledClustering:
    k: int
    centers: np.ndarray  # (k, d)
    assignment: np.ndarray  # (n,) center index per point
    inertia: float


def _as_matrix(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


def farthest_point_seeds(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """First center drawn from rng, each next one the point farthest from the chosen centers (ties: lowest index)."""
    chosen = [int(rng.integers(x.shape[0]))]
    nearest = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _inertia(x: np.ndarray, centers: np.ndarray, weights: np.ndarray) -> float:
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return float((d2.min(axis=1) * weights).sum())


def kmeans(points: Sequence, k: int, seed: int, restarts: int = 1,
           weights: Optional[Sequence[float]] = None) -> LabeledClustering:
    """
    Lloyd K-means (at most 300 iterations) from farthest-point seeds, best inertia over `restarts` runs.

    Args:
        points: n points of dimension d (1-D input is treated as d=1).
        k: number of clusters, 1 <= k <= n.
        seed: RNG seed; the same seed always yields the same clustering.
        restarts: number of seeded runs; the lowest inertia wins (ties: earliest run).
        weights: optional per-point multiplicities.
    """
    x = _as_matrix(points)
    n = x.shape[0]
    if k < 1 or k > n:
        raise DataError(f"kmeans needs 1 <= k <= number of points (k={k}, n={n})")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    rng = np.random.default_rng(seed)

    best: Optional[LabeledClustering] = None
    for run in range(max(1, restarts)):
        init = farthest_point_seeds(x, k, rng)
        seed_inertia = _inertia(x, init, w)
        model = KMeans(n_clusters=k, init=init, n_init=1, max_iter=MAX_ITER, tol=0.0,
                       algorithm="lloyd", random_state=seed)
        with warnings.catch_warnings():
            # duplicate points can leave fewer distinct points than k
            warnings.simplefilter("ignore", ConvergenceWarning)
            model.fit(x, sample_weight=w)
        inertia = float(model.inertia_)
        if inertia > seed_inertia * (1 + 1e-9) + 1e-9:
            raise InvariantError(f"kmeans inertia increased from {seed_inertia} to {inertia}")
        result = LabeledClustering(k=k, centers=model.cluster_centers_.copy(),
                                   assignment=model.labels_.astype(int), inertia=inertia)
        logger.debug(f"kmeans k={k} run {run}: inertia={inertia:.6g} after {model.n_iter_} iterations")
        if best is None or result.inertia < best.inertia:
            best = result
    return best
