# /src/relations/forest.py
import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import InvariantError
from ..core.models import GeoEntity, TrafficLocation
from .extraction import ChildParentRelation

logger = logging.getLogger(__name__)

PartitionKey = Tuple[str, str]  # (state, city)


@dataclass(frozen=True)
class RelationTree:
    """Rooted, labeled, unordered tree of entity ids. Children lists are kept in (start, id) order."""
    root: str
    nodes: Dict[str, str]  # id -> label
    children: Dict[str, List[str]]
    starts: Dict[str, int] = field(default_factory=dict)
    streets: Dict[str, str] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.nodes)

    def edges(self) -> List[Tuple[str, str]]:
        return [(p, c) for p in sorted(self.children) for c in self.children[p]]

    def preorder(self) -> List[str]:
        order, stack = [], [self.root]
        while stack:
            node = stack.pop()
            order.append(node)
            stack.extend(reversed(self.children.get(node, [])))
        return order


@dataclass(frozen=True)
class Forest:
    partition_key: PartitionKey
    trees: List[RelationTree]

    @property
    def state(self) -> str:
        return self.partition_key[0]

    @property
    def city(self) -> str:
        return self.partition_key[1]


def _deterministic_key(r: ChildParentRelation):
    # absent distance sorts after any present one
    return (r.lag, r.distance is None, r.distance if r.distance is not None else 0.0, r.parent_id)


def resolve_parents(relations: Sequence[ChildParentRelation], seed: Optional[int] = None) -> List[ChildParentRelation]:
    """
    Keeps one parent per child: smallest lag, then smallest distance, then parent_id.
    With a seed, the parent is drawn uniformly at random instead.
    """
    by_child: Dict[str, List[ChildParentRelation]] = defaultdict(list)
    for r in relations:
        by_child[r.child_id].append(r)
    rng = np.random.default_rng(seed) if seed is not None else None
    resolved = []
    for child in sorted(by_child):
        candidates = sorted(by_child[child], key=_deterministic_key)
        pick = candidates[int(rng.integers(len(candidates)))] if rng is not None else candidates[0]
        resolved.append(pick)
    dropped = len(relations) - len(resolved)
    if dropped:
        logger.info(f"Parent resolution dropped {dropped} of {len(relations)} relations")
    return sorted(resolved, key=ChildParentRelation.sort_key)


def build_forest(relations: Sequence[ChildParentRelation], entities: Sequence[GeoEntity],
                 node_cap: int = 10000) -> List[Forest]:
    """
    Connected components of the resolved relation graph, grouped by the (state, city) of their root.
    Weather roots take the partition of their earliest traffic child.

    Raises:
        InvariantError: a child with several parents, a cycle, or a tree above `node_cap` nodes.
    """
    if not relations:
        return []
    by_id = {e.id: e for e in entities}
    parent_of: Dict[str, str] = {}
    children: Dict[str, List[str]] = defaultdict(list)
    for r in relations:
        if r.child_id in parent_of:
            raise InvariantError(f"Entity {r.child_id} has several parents; resolve parents first")
        for node in (r.parent_id, r.child_id):
            if node not in by_id:
                raise InvariantError(f"Relation references unknown entity {node}")
        parent_of[r.child_id] = r.parent_id
        children[r.parent_id].append(r.child_id)

    def order(node_id: str):
        return (by_id[node_id].start, node_id)

    for kids in children.values():
        kids.sort(key=order)
    nodes = set(parent_of) | set(children)
    roots = sorted((n for n in nodes if n not in parent_of), key=order)

    grouped: Dict[PartitionKey, List[RelationTree]] = defaultdict(list)
    visited = set()
    for root in roots:
        members, queue = [], deque([root])
        while queue:
            node = queue.popleft()
            if node in visited:
                raise InvariantError(f"Node {node} reached twice while building tree {root}")
            visited.add(node)
            members.append(node)
            queue.extend(children.get(node, []))
        if len(members) > node_cap:
            raise InvariantError(f"Tree rooted at {root} has {len(members)} nodes, above the cap of {node_cap}")
        tree = RelationTree(
            root=root,
            nodes={n: by_id[n].label for n in members},
            children={n: list(children[n]) for n in members if children.get(n)},
            starts={n: by_id[n].start for n in members},
            streets={n: by_id[n].loc.street_name for n in members if isinstance(by_id[n].loc, TrafficLocation)},
        )
        grouped[_partition_of(tree, by_id)].append(tree)

    if len(visited) != len(nodes):
        stuck = sorted(nodes - visited)
        raise InvariantError(f"Cycle in relation graph; unreachable entities: {', '.join(stuck[:10])}")

    forests = [Forest(key, grouped[key]) for key in sorted(grouped)]
    logger.info(f"Built {sum(len(f.trees) for f in forests)} trees in {len(forests)} city partitions")
    return forests


def _partition_of(tree: RelationTree, by_id: Dict[str, GeoEntity]) -> PartitionKey:
    root = by_id[tree.root]
    if isinstance(root.loc, TrafficLocation):
        return (root.loc.state, root.loc.city)
    first = tree.children[tree.root][0]
    loc = by_id[first].loc
    return (loc.state, loc.city)


def forest_summary(forests: Sequence[Forest]) -> Dict[str, Any]:
    sizes = [t.size for f in forests for t in f.trees]
    return {
        "trees": len(sizes),
        "max_nodes": max(sizes) if sizes else 0,
        "partitions": [{"state": f.state, "city": f.city, "trees": len(f.trees)} for f in forests],
    }


def tree_to_record(key: PartitionKey, tree: RelationTree) -> Dict[str, Any]:
    return {
        "state": key[0], "city": key[1], "root": tree.root,
        "edges": [list(e) for e in tree.edges()],
        "labels": dict(sorted(tree.nodes.items())),
        "starts": dict(sorted(tree.starts.items())),
        "streets": dict(sorted(tree.streets.items())),
    }


def forests_from_records(records: Sequence[Dict[str, Any]]) -> List[Forest]:
    grouped: Dict[PartitionKey, List[RelationTree]] = defaultdict(list)
    for rec in records:
        starts = {k: int(v) for k, v in rec.get("starts", {}).items()}
        children: Dict[str, List[str]] = defaultdict(list)
        for parent, child in rec["edges"]:
            children[parent].append(child)
        for kids in children.values():
            kids.sort(key=lambda n: (starts.get(n, 0), n))
        grouped[(rec["state"], rec["city"])].append(RelationTree(
            root=rec["root"], nodes=dict(rec["labels"]), children=dict(children),
            starts=starts, streets=dict(rec.get("streets", {})),
        ))
    return [Forest(key, grouped[key]) for key in sorted(grouped)]
