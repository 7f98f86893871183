# /src/mining/miner.py
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

from ..core.config import PipelineConfig
from ..core.errors import DataError
from ..relations.forest import Forest, PartitionKey, RelationTree
from .patterns import TreePattern, from_preorder, is_canonical_order

logger = logging.getLogger(__name__)

# Occurrence state of a pattern in one host tree:
# (host preorder index of each rightmost-path node, host nodes already used)
State = Tuple[Tuple[int, ...], FrozenSet[int]]


@dataclass(frozen=True)
class FrequentPattern:
    pattern: TreePattern
    tree_count: int
    support: float
    partition_key: PartitionKey
    singleton: bool = False
    tree_indices: Tuple[int, ...] = ()

    @property
    def encoding(self) -> str:
        return self.pattern.encoding

    @property
    def flags(self) -> List[str]:
        return ["singleton"] if self.singleton else []


class HostTree:
    """Preorder arrays of a relation tree: labels, subtree end index and parent index per node."""

    def __init__(self, tree: RelationTree):
        self.ids: List[str] = tree.preorder()
        position = {node: i for i, node in enumerate(self.ids)}
        self.labels: List[str] = [tree.nodes[n] for n in self.ids]
        self.parent: List[int] = [-1] * len(self.ids)
        for p, kids in tree.children.items():
            for c in kids:
                self.parent[position[c]] = position[p]
        self.end: List[int] = list(range(len(self.ids)))
        for i in reversed(range(len(self.ids))):
            if self.parent[i] >= 0:
                self.end[self.parent[i]] = max(self.end[self.parent[i]], self.end[i])

    def __len__(self) -> int:
        return len(self.ids)

    def descendants(self, i: int) -> range:
        return range(i + 1, self.end[i] + 1)


def min_sup(x: float, a: float = 0.004, b: float = 1.5, c: float = 0.05, floor: float = 0.05) -> float:
    """Adaptive minimum support for a forest of x trees: e^-(a*x + b) + c, never below `floor`."""
    if x < 0:
        raise DataError(f"tree count must be >= 0 (got {x})")
    return max(math.exp(-(a * x + b)) + c, floor)


def min_sup_for(tree_count: int, cfg: PipelineConfig) -> float:
    if cfg.fixed_min_sup is not None:
        return cfg.fixed_min_sup
    return min_sup(tree_count, cfg.min_sup_a, cfg.min_sup_b, cfg.min_sup_c, cfg.min_sup_floor)


def contains_embedded(t: RelationTree, p: TreePattern) -> bool:
    """True iff p maps injectively into t, labels preserved, each pattern edge onto an ancestor-descendant pair."""
    host = t if isinstance(t, HostTree) else HostTree(t)
    # pattern nodes in preorder as (label, parent position)
    nodes: List[Tuple[str, int]] = []

    def flatten(node, parent: int):
        nodes.append((node[0], parent))
        me = len(nodes) - 1
        for child in node[1]:
            flatten(child, me)

    flatten(p.tree(), -1)
    image = [-1] * len(nodes)
    used: Set[int] = set()

    def assign(k: int) -> bool:
        if k == len(nodes):
            return True
        label, parent = nodes[k]
        candidates = range(len(host)) if parent < 0 else host.descendants(image[parent])
        for h in candidates:
            if h in used or host.labels[h] != label:
                continue
            image[k] = h
            used.add(h)
            if assign(k + 1):
                return True
            used.discard(h)
        return False

    return assign(0)


class _Miner:
    def __init__(self, forest: Forest, cfg: PipelineConfig):
        self.forest = forest
        self.hosts = [HostTree(t) for t in forest.trees]
        self.n = len(self.hosts)
        self.threshold = min_sup_for(self.n, cfg)
        self.min_count = self._min_count(self.threshold)
        self.max_nodes = cfg.max_pattern_nodes
        self.results: List[FrequentPattern] = []

    def _min_count(self, threshold: float) -> int:
        # smallest tree count whose support reaches the threshold
        count = max(1, math.ceil(threshold * self.n - 1e-9))
        while count > 1 and (count - 1) / self.n >= threshold:
            count -= 1
        while count / self.n < threshold and count <= self.n:
            count += 1
        return count

    def _record(self, nodes: List[Tuple[str, int]], occ: Dict[int, Set[State]]):
        pattern = TreePattern.from_tree(from_preorder(nodes))
        trees = tuple(sorted(occ))
        self.results.append(FrequentPattern(
            pattern=pattern, tree_count=len(trees), support=len(trees) / self.n,
            partition_key=self.forest.partition_key, singleton=len(nodes) == 1, tree_indices=trees,
        ))

    def run(self) -> List[FrequentPattern]:
        seeds: Dict[str, Dict[int, Set[State]]] = defaultdict(lambda: defaultdict(set))
        for t, host in enumerate(self.hosts):
            for h, label in enumerate(host.labels):
                seeds[label][t].add(((h,), frozenset((h,))))
        self.frequent_labels = sorted(l for l, occ in seeds.items() if len(occ) >= self.min_count)
        for label in self.frequent_labels:
            nodes = [(label, 0)]
            self._record(nodes, seeds[label])
            self._grow(nodes, seeds[label])
        return self.results

    def _grow(self, nodes: List[Tuple[str, int]], occ: Dict[int, Set[State]]):
        if len(nodes) >= self.max_nodes:
            return
        frequent = set(self.frequent_labels)
        # (attach depth, label) -> tree -> states
        extensions: Dict[Tuple[int, str], Dict[int, Set[State]]] = defaultdict(lambda: defaultdict(set))
        for t, states in occ.items():
            host = self.hosts[t]
            for rmp, used in states:
                for d, anchor in enumerate(rmp):
                    for h in host.descendants(anchor):
                        label = host.labels[h]
                        if h in used or label not in frequent:
                            continue
                        extensions[(d, label)][t].add((rmp[:d + 1] + (h,), used | {h}))
        for (d, label) in sorted(extensions):
            new_occ = extensions[(d, label)]
            if len(new_occ) < self.min_count:
                continue
            new_nodes = nodes + [(label, d + 1)]
            if not is_canonical_order(from_preorder(new_nodes)):
                continue
            self._record(new_nodes, new_occ)
            self._grow(new_nodes, new_occ)


def mine(forest: Forest, cfg: PipelineConfig) -> List[FrequentPattern]:
    """
    Frequent embedded unordered subtrees of a forest, with per-tree binary support.

    Returns every pattern whose support reaches min_sup (adaptive, or cfg.fixed_min_sup) up to
    cfg.max_pattern_nodes nodes. Single-node patterns are included and flagged `singleton`.
    Sorted by (-support, encoding).
    """
    if not forest.trees:
        raise DataError(f"Cannot mine an empty forest {forest.partition_key}")
    miner = _Miner(forest, cfg)
    results = miner.run()
    results.sort(key=lambda fp: (-fp.support, fp.encoding))
    logger.info(f"Mined {forest.partition_key}: {len(forest.trees)} trees, min_sup={miner.threshold:.4f}, "
                f"{sum(not r.singleton for r in results)} patterns + {sum(r.singleton for r in results)} singletons")
    return results
