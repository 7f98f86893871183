# /src/regions/profiler.py
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from ..core.errors import DataError, InvariantError
from ..mining.patterns import TreePattern
from ..numerics.kmeans import LabeledClustering, kmeans

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class StateVector:
    state: str
    vector: np.ndarray  # 0/1 per entry of `patterns`
    patterns: Tuple[TreePattern, ...] = field(repr=False)


@dataclass(frozen=True)
class ClusterReport:
    k: int
    assignment: Dict[str, int]
    dl: float
    dl_by_k: Dict[int, float]
    clusters: Dict[int, List[str]]
    distinguishing: Dict[int, List[TreePattern]]
    degenerate: bool = False
    log_base: str = "e"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "dl": self.dl,
            "log_base": self.log_base,
            "degenerate": self.degenerate,
            "dl_by_k": {str(k): v for k, v in sorted(self.dl_by_k.items())},
            "clusters": [
                {"id": cid, "states": self.clusters[cid],
                 "distinguishing": [p.encoding for p in self.distinguishing[cid]]}
                for cid in sorted(self.clusters)
            ],
        }


def build_state_vectors(per_state_patterns: Mapping[str, Iterable[TreePattern]]) -> List[StateVector]:
    """One-hot presence vectors over the sorted union of all states' patterns."""
    sets = {state: set(patterns) for state, patterns in per_state_patterns.items()}
    universe = tuple(sorted(set().union(*sets.values()))) if sets else ()
    position = {p: i for i, p in enumerate(universe)}
    vectors = []
    for state in sorted(sets):
        vec = np.zeros(len(universe), dtype=float)
        for p in sets[state]:
            vec[position[p]] = 1.0
        vectors.append(StateVector(state, vec, universe))
    logger.info(f"Built {len(vectors)} state vectors over {len(universe)} unique patterns")
    return vectors


def dl_penalty(n: int, k: int) -> float:
    """Parameter (two Gaussian parameters) and cluster-count penalty terms."""
    return 0.5 * 2 * math.log(n) + k * math.log(n)


def description_length(points: Sequence, clustering: LabeledClustering) -> float:
    """
    -sum log p(|x - c_x|) under one Gaussian fitted to all point-to-center distances,
    plus log|X| for its two parameters and K log|X| for the clusters. Natural log.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    n = x.shape[0]
    if n < 2:
        raise DataError(f"description_length needs at least 2 points (got {n})")
    distances = np.linalg.norm(x - clustering.centers[clustering.assignment], axis=1)
    mu = float(distances.mean())
    sigma = max(float(distances.std()), SIGMA_FLOOR)
    neg_log_likelihood = -float(norm.logpdf(distances, loc=mu, scale=sigma).sum())
    return neg_log_likelihood + dl_penalty(n, clustering.k)


def cluster_states(vectors: Sequence[StateVector], k_range: Tuple[int, int] = (2, 10), seed: int = 0,
                   restarts: int = 16, distinguishing_fraction: float = 0.8) -> ClusterReport:
    """
    K-means over state vectors for every K in k_range (inclusive), keeping the K with minimum
    description length. K values above the number of states are skipped.

    Clusters are numbered by their alphabetically first state. A pattern distinguishes a cluster
    when at least `distinguishing_fraction` of its states have it and no other state does.
    """
    ordered = sorted(vectors, key=lambda v: v.state)
    if not ordered:
        raise DataError("No state vectors to cluster")
    states = [v.state for v in ordered]
    patterns = ordered[0].patterns
    x = np.vstack([v.vector for v in ordered])
    n = len(states)

    runs: Dict[int, Tuple[float, LabeledClustering]] = {}
    for k in range(k_range[0], k_range[1] + 1):
        if k > n:
            logger.warning(f"Skipping K={k}: only {n} states")
            continue
        clustering = kmeans(x, k, seed=seed + k, restarts=restarts)
        runs[k] = (description_length(x, clustering), clustering)
        logger.debug(f"K={k}: DL={runs[k][0]:.6g}, inertia={clustering.inertia:.6g}")
    if not runs:
        raise DataError(f"Every K in {k_range[0]}..{k_range[1]} exceeds the {n} available states")

    best_k = min(runs, key=lambda k: (runs[k][0], k))
    best_dl, best = runs[best_k]
    if any(dl < best_dl for dl, _ in runs.values()):
        raise InvariantError("Chosen K does not minimise the description length")

    # relabel by first member state
    members: Dict[int, List[str]] = {}
    for state, raw in zip(states, best.assignment):
        members.setdefault(int(raw), []).append(state)
    relabel = {raw: new for new, raw in enumerate(sorted(members, key=lambda r: members[r][0]))}
    assignment = {state: relabel[int(raw)] for state, raw in zip(states, best.assignment)}
    clusters = {relabel[raw]: sorted(ss) for raw, ss in members.items()}

    distinguishing: Dict[int, List[TreePattern]] = {}
    labels = np.array([assignment[s] for s in states])
    for cid in clusters:
        inside = x[labels == cid]
        outside = x[labels != cid]
        share = inside.mean(axis=0)
        outside_hits = outside.sum(axis=0) if outside.size else np.zeros(x.shape[1])
        keep = (share >= distinguishing_fraction) & (outside_hits == 0)
        distinguishing[cid] = [patterns[j] for j in np.flatnonzero(keep)]

    degenerate = len({tuple(row) for row in x}) < best_k
    if degenerate:
        logger.warning(f"Degenerate clustering: fewer distinct state vectors than K={best_k}")
    logger.info(f"Selected K={best_k} (DL={best_dl:.6g}) over {n} states")
    return ClusterReport(
        k=best_k, assignment=assignment, dl=best_dl,
        dl_by_k={k: v[0] for k, v in runs.items()}, clusters=clusters,
        distinguishing=distinguishing, degenerate=degenerate,
    )
