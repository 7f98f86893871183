# tests/test_miner.py
import itertools
import random
from collections import defaultdict

import pytest

from src.core.config import PipelineConfig
from src.core.errors import DataError
from src.mining.miner import HostTree, contains_embedded, min_sup, min_sup_for, mine
from src.mining.patterns import TreePattern, encode
from src.relations.forest import Forest

from conftest import leaf, make_tree


def test_min_sup_formula():
    assert min_sup(0) == pytest.approx(0.273130, abs=1e-6)
    assert min_sup(1000) == pytest.approx(0.054087, abs=1e-6)
    assert min_sup(10 ** 6) == pytest.approx(0.05)
    assert min_sup(100, floor=0.2) == 0.2
    assert min_sup(10) > min_sup(100) > min_sup(1000)
    with pytest.raises(DataError):
        min_sup(-1)


def test_fixed_min_sup_wins():
    assert min_sup_for(50, PipelineConfig(fixed_min_sup=0.4)) == 0.4
    assert min_sup_for(50, PipelineConfig()) == pytest.approx(min_sup(50))


def test_host_tree_arrays():
    host = HostTree(make_tree(("R", (("A", (leaf("C"),)), leaf("B")))))
    assert host.labels == ["R", "A", "C", "B"]
    assert host.parent == [-1, 0, 1, 0]
    assert host.end == [3, 2, 2, 3]
    assert list(host.descendants(0)) == [1, 2, 3]
    assert 3 not in host.descendants(1)


def test_contains_embedded():
    chain = make_tree(("Rain", (("Accident", (leaf("Congestion"),)),)))
    assert contains_embedded(chain, TreePattern.from_encoding("Rain Congestion ^"))
    assert contains_embedded(chain, TreePattern.from_encoding("Rain Accident Congestion ^ ^"))
    assert not contains_embedded(chain, TreePattern.from_encoding("Accident Rain ^"))
    assert not contains_embedded(chain, TreePattern.from_encoding("Rain Accident ^ Accident ^"))

    fork = make_tree(("Rain", (leaf("Accident"), ("Congestion", (leaf("Accident"),)))))
    assert contains_embedded(fork, TreePattern.from_encoding("Rain Accident ^ Accident ^"))
    assert contains_embedded(fork, TreePattern.from_encoding("Rain Accident ^ Congestion ^"))


def _random_forest(seed, trees=20, labels="ABCDE"):
    rng = random.Random(seed)
    built = []
    for i in range(rng.randint(5, trees)):
        nodes = [[rng.choice(labels), []]]
        for _ in range(rng.randint(1, 8) - 1):
            child = [rng.choice(labels), []]
            rng.choice(nodes)[1].append(child)
            nodes.append(child)

        def freeze(n):
            return (n[0], tuple(freeze(c) for c in n[1]))

        built.append(make_tree(freeze(nodes[0]), prefix=f"t{i}_"))
    return Forest(("OH", "Columbus"), built)


def _ancestors(tree):
    """Node id -> tuple of its ancestors in the host tree, root first."""
    anc = {tree.root: ()}
    stack = [tree.root]
    while stack:
        node = stack.pop()
        for child in tree.children.get(node, []):
            anc[child] = anc[node] + (node,)
            stack.append(child)
    return anc


def _embedded_encodings(tree, max_nodes=4):
    """
    Every pattern of at most max_nodes nodes embedded in tree: for each node subset with a single
    top node, every way of giving the other nodes a parent among their ancestors in the subset.
    """
    anc = _ancestors(tree)
    found = set()
    for size in range(1, max_nodes + 1):
        for subset in itertools.combinations(sorted(anc), size):
            inside = set(subset)
            options = {n: [a for a in anc[n] if a in inside] for n in subset}
            tops = [n for n in subset if not options[n]]
            if len(tops) != 1:
                continue
            others = [n for n in subset if options[n]]
            for parents in itertools.product(*(options[n] for n in others)):
                kids = defaultdict(list)
                for node, parent in zip(others, parents):
                    kids[parent].append(node)

                def build(node):
                    return (tree.nodes[node], tuple(build(c) for c in kids[node]))

                found.add(encode(build(tops[0])))
    return found


def _check_against_enumeration(seed, thresholds):
    forest = _random_forest(seed)
    n = len(forest.trees)
    hits = defaultdict(list)
    for i, tree in enumerate(forest.trees):
        for enc in _embedded_encodings(tree):
            hits[enc].append(i)

    for threshold in thresholds:
        found = {fp.encoding: fp for fp in mine(forest, PipelineConfig(fixed_min_sup=threshold, max_pattern_nodes=4))}
        expected = {enc: tuple(trees) for enc, trees in hits.items() if len(trees) / n >= threshold}
        assert set(found) == set(expected)
        for enc, trees in expected.items():
            assert found[enc].tree_indices == trees
            assert found[enc].tree_count == len(trees)
            assert found[enc].support == pytest.approx(len(trees) / n)


def test_subset_enumeration_agrees_with_containment_on_a_chain():
    chain = make_tree(("A", (("B", (leaf("C"),)),)))
    assert _embedded_encodings(chain) == {"A", "B", "C", "A B ^", "A C ^", "B C ^", "A B C ^ ^", "A B ^ C ^"}
    for enc in _embedded_encodings(chain):
        assert contains_embedded(chain, TreePattern.from_encoding(enc))


@pytest.mark.parametrize("seed", range(20))
def test_mining_matches_enumeration(seed):
    _check_against_enumeration(seed, (0.15, 0.3))


@pytest.mark.slow
def test_mining_matches_enumeration_many_forests():
    for seed in range(100, 200):
        _check_against_enumeration(seed, (0.1, 0.25))


def test_support_threshold_is_inclusive(forest_of):
    chain = ("Rain", (leaf("Accident"),))
    forest = forest_of(chain, chain, chain, leaf("Construction"))
    at = {fp.encoding for fp in mine(forest, PipelineConfig(fixed_min_sup=0.75))}
    above = {fp.encoding for fp in mine(forest, PipelineConfig(fixed_min_sup=0.76))}
    assert "Rain Accident ^" in at
    assert "Rain Accident ^" not in above


def test_results_are_sorted_and_singletons_flagged(forest_of):
    forest = forest_of(
        ("Rain", (("Accident", (leaf("Congestion"),)),)),
        ("Rain", (("Accident", (leaf("Congestion"),)),)),
        ("Accident", (leaf("Congestion"),)),
        ("Snow", (leaf("Accident"),)),
    )
    results = mine(forest, PipelineConfig(fixed_min_sup=0.5))
    keys = [(-fp.support, fp.encoding) for fp in results]
    assert keys == sorted(keys)
    singletons = {fp.encoding for fp in results if fp.singleton}
    assert singletons == {"Accident", "Congestion", "Rain"}
    assert all(fp.flags == ["singleton"] for fp in results if fp.singleton)
    chain = next(fp for fp in results if fp.encoding == "Rain Accident Congestion ^ ^")
    assert chain.tree_count == 2
    assert chain.partition_key == ("OH", "Columbus")


def test_max_pattern_nodes(forest_of):
    deep = ("A", (("B", (("C", (leaf("D"),)),)),))
    forest = forest_of(deep, deep)
    small = mine(forest, PipelineConfig(fixed_min_sup=0.5, max_pattern_nodes=2))
    assert {fp.pattern.node_count for fp in small} == {1, 2}
    # every ancestor-ordered pair of a 4-chain
    assert len([fp for fp in small if fp.pattern.node_count == 2]) == 6
    full = mine(forest, PipelineConfig(fixed_min_sup=0.5, max_pattern_nodes=8))
    assert max(fp.pattern.node_count for fp in full) == 4
    assert "A B C D ^ ^ ^" in {fp.encoding for fp in full}
    assert all(fp.support == 1.0 for fp in full)


def test_empty_forest_is_rejected():
    with pytest.raises(DataError):
        mine(Forest(("OH", "Columbus"), []), PipelineConfig())


def test_identical_trees_give_full_support_to_every_embedded_subtree(forest_of):
    chain = ("A", (("B", (leaf("C"),)),))
    encodings = {fp.encoding for fp in mine(forest_of(chain, chain), PipelineConfig(fixed_min_sup=1.0))}
    # siblings may map onto ancestor-related host nodes, hence "A B ^ C ^"
    expected = {"A", "B", "C", "A B ^", "A C ^", "B C ^", "A B C ^ ^", "A B ^ C ^"}
    assert encodings == expected
