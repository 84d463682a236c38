"""Entropy statistics, merge deltas, and the two-level minimizer.

Every numeric expectation is either computed by the independent oracles in
conftest (plain textbook formulas over explicit edge lists) or asserted as a
frozen constant that those oracles produced.
"""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (
    make_graph,
    node_labels,
    offline_summarizer,
    oracle_h1,
    oracle_h2,
    random_graph,
    two_k5_bridge,
    two_triangle_bridge,
)
from semrag.errors import EmptyGraph, InvalidPartition, NotADistribution, NotAdjacent
from semrag.graph_core import NodeType, RelationType, TypedGraph
from semrag.sem_index import (
    PartitionState,
    base_projection,
    delta_h2_merge,
    h1,
    h2,
    materialize_macronodes,
    replay_dendrogram,
    sem_minimize,
    shannon,
)

# Frozen outputs of the conftest oracles on the two handmade graphs.
TRIANGLES_H1 = 2.556656707462823
TRIANGLES_MIN_H2 = 1.6995138503199656
K5_H1 = 3.3156678763770073
K5_MIN_H2 = 2.3632869239960543


# ---------------------------------------------------------------------------
# shannon


def test_shannon_uniform_four_is_two_bits():
    assert shannon([0.25, 0.25, 0.25, 0.25]) == pytest.approx(2.0, abs=1e-12)


def test_shannon_point_mass_is_zero():
    assert shannon([1.0, 0.0, 0.0]) == 0.0


def test_shannon_rejects_empty_and_negative():
    with pytest.raises(NotADistribution):
        shannon([])
    with pytest.raises(NotADistribution):
        shannon([0.5, -0.5, 1.0])


@given(
    st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=12).filter(
        lambda ps: sum(ps) > 1e-9
    )
)
def test_shannon_bounded_by_log_support(ps):
    total = sum(ps)
    value = shannon([p / total for p in ps])
    assert -1e-9 <= value <= math.log2(len(ps)) + 1e-9


# ---------------------------------------------------------------------------
# h1 against the oracle


def test_h1_two_triangles_frozen():
    g, _ = two_triangle_bridge()
    assert h1(g) == pytest.approx(TRIANGLES_H1, abs=1e-12)


def test_h1_two_k5_frozen():
    g, _ = two_k5_bridge()
    assert h1(g) == pytest.approx(K5_H1, abs=1e-12)


def test_h1_empty_graph_raises():
    with pytest.raises(EmptyGraph):
        h1(TypedGraph())


@pytest.mark.parametrize("seed", range(40))
def test_h1_matches_oracle_on_random_graphs(seed):
    g, edges, n = random_graph(seed, n_max=30, allow_loops=(seed % 3 == 0))
    assert h1(g) == pytest.approx(oracle_h1(n, edges), abs=1e-9)


def test_h1_counts_self_loop_degree_twice():
    # One node with a self loop: volume 2, single degree 2, entropy 0.
    g = make_graph(1, [(0, 0)])
    assert h1(g) == pytest.approx(0.0, abs=1e-12)
    # Self loop plus a pendant edge: degrees (3, 1) over volume 4.
    g2 = make_graph(2, [(0, 0), (0, 1)])
    expected = -(3 / 4) * math.log2(3 / 4) - (1 / 4) * math.log2(1 / 4)
    assert h1(g2) == pytest.approx(expected, abs=1e-12)


# ---------------------------------------------------------------------------
# h2 against the oracle


@pytest.mark.parametrize("seed", range(40))
def test_h2_matches_oracle_on_random_partitions(seed):
    g, edges, n = random_graph(seed, n_max=20, allow_loops=(seed % 4 == 0))
    rng = random.Random(seed * 7 + 1)
    k = rng.randint(1, n)
    labels = [rng.randrange(k) for _ in range(n)]
    partition = {f"n{i}": labels[i] for i in range(n)}
    assert h2(g, partition) == pytest.approx(oracle_h2(n, edges, labels), abs=1e-9)


@pytest.mark.parametrize("seed", range(25))
def test_h2_identities_on_loop_free_graphs(seed):
    g, edges, n = random_graph(seed + 1000, n_max=30, allow_loops=False)
    base = h1(g)
    singles = {f"n{i}": i for i in range(n)}
    together = {f"n{i}": 0 for i in range(n)}
    assert h2(g, singles) == pytest.approx(base, abs=1e-9)
    assert h2(g, together) == pytest.approx(base, abs=1e-9)


def test_h2_rejects_partition_not_covering_nodes():
    g, _ = two_triangle_bridge()
    with pytest.raises(InvalidPartition):
        h2(g, {"n0": 0})
    full = {f"n{i}": 0 for i in range(6)}
    with pytest.raises(InvalidPartition):
        h2(g, {**full, "ghost": 1})


def test_h2_self_loop_never_counts_as_cut():
    # Two communities of one node each, one carrying a self loop; the loop
    # contributes to volume and intra degree but never to the boundary.
    g = make_graph(2, [(0, 0), (0, 1)])
    labels = [0, 1]
    partition = {"n0": 0, "n1": 1}
    assert h2(g, partition) == pytest.approx(oracle_h2(2, [(0, 0), (0, 1)], labels), abs=1e-12)


# ---------------------------------------------------------------------------
# PartitionState and merge deltas


def test_partition_state_h2_matches_function():
    g, edges = two_triangle_bridge()
    state = PartitionState.from_partition(g, {f"n{i}": i // 3 for i in range(6)})
    expected = h2(g, {f"n{i}": i // 3 for i in range(6)})
    assert state.h2() == pytest.approx(expected, abs=1e-12)


def test_merge_delta_k2_is_exactly_zero():
    # A single edge: merging the two singletons leaves the entropy untouched
    # because the intra gain and the boundary relief cancel exactly.
    g = make_graph(2, [(0, 1)])
    state = PartitionState.singletons(g)
    assert delta_h2_merge(state, 0, 1) == 0.0


def test_merge_delta_rejects_same_and_nonadjacent():
    g = make_graph(4, [(0, 1), (2, 3)])
    state = PartitionState.singletons(g)
    with pytest.raises(InvalidPartition):
        delta_h2_merge(state, 0, 0)
    with pytest.raises(NotAdjacent):
        delta_h2_merge(state, 0, 2)


@pytest.mark.parametrize("seed", range(60))
def test_merge_delta_matches_full_recompute(seed):
    g, edges, n = random_graph(seed + 2000, n_max=12, allow_loops=(seed % 5 == 0))
    state = PartitionState.singletons(g)
    labels0 = node_labels(g, state.partition_sets())
    before = oracle_h2(n, edges, labels0)
    pairs = sorted({(min(a, b), max(a, b)) for a, b in edges if a != b})
    for a, b in pairs:
        ca, cb = state.node_comm[f"n{a}"], state.node_comm[f"n{b}"]
        if ca == cb:
            continue
        delta = delta_h2_merge(state, ca, cb)
        merged_labels = list(labels0)
        la, lb = merged_labels[a], merged_labels[b]
        merged_labels = [la if x == lb else x for x in merged_labels]
        after = oracle_h2(n, edges, merged_labels)
        assert delta == pytest.approx(after - before, abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_merge_delta_consistent_along_random_merge_chains(seed):
    # Apply a random sequence of merges and verify each incremental delta
    # against the from-scratch recompute at every step.
    g, edges, n = random_graph(seed + 3000, n_max=12, allow_loops=(seed % 4 == 0))
    state = PartitionState.singletons(g)
    rng = random.Random(seed)
    current = oracle_h2(n, edges, node_labels(g, state.partition_sets()))
    for _ in range(n):
        live = sorted(state.members)
        candidates = [
            (a, b)
            for i, a in enumerate(live)
            for b in live[i + 1 :]
            if state.cross(a, b) > 0
        ]
        if not candidates:
            break
        a, b = rng.choice(candidates)
        delta = delta_h2_merge(state, a, b)
        state.merge(a, b)
        current += delta
        truth = oracle_h2(n, edges, node_labels(g, state.partition_sets()))
        assert current == pytest.approx(truth, abs=1e-9)
        assert state.h2() == pytest.approx(truth, abs=1e-9)


# ---------------------------------------------------------------------------
# sem_minimize


def test_minimize_two_triangles_recovers_cliques():
    g, _ = two_triangle_bridge()
    result = sem_minimize(g)
    communities = {frozenset(m) for m in result.communities.values()}
    assert communities == {
        frozenset({"n0", "n1", "n2"}),
        frozenset({"n3", "n4", "n5"}),
    }
    assert result.h2 == pytest.approx(TRIANGLES_MIN_H2, abs=1e-9)
    assert result.h1 == pytest.approx(TRIANGLES_H1, abs=1e-12)


def test_minimize_two_k5_recovers_cliques():
    g, _ = two_k5_bridge()
    result = sem_minimize(g)
    communities = {frozenset(m) for m in result.communities.values()}
    assert communities == {
        frozenset({f"n{i}" for i in range(5)}),
        frozenset({f"n{i}" for i in range(5, 10)}),
    }
    assert result.h2 == pytest.approx(K5_MIN_H2, abs=1e-9)


@pytest.mark.parametrize("seed", range(25))
def test_minimize_invariants_on_random_graphs(seed):
    g, edges, n = random_graph(seed + 4000, n_max=25, allow_loops=(seed % 6 == 0))
    result = sem_minimize(g)
    # Every recorded merge strictly lowers the entropy.
    for step in result.dendrogram:
        assert step.delta < 0.0
    # The final entropy never exceeds the flat entropy and matches a full
    # recompute from the reported partition.
    assert result.h2 <= result.h1 + 1e-12
    labels = [result.partition[f"n{i}"] for i in range(n)]
    assert result.h2 == pytest.approx(oracle_h2(n, edges, labels), abs=1e-9)
    assert result.h1 == pytest.approx(oracle_h1(n, edges), abs=1e-9)


@pytest.mark.parametrize("seed", range(15))
def test_dendrogram_replay_reaches_final_partition(seed):
    g, _, _ = random_graph(seed + 5000, n_max=25, allow_loops=False)
    result = sem_minimize(g)
    replayed = replay_dendrogram(g, result.dendrogram)
    final = {frozenset(m) for m in result.communities.values()}
    assert replayed == final


def test_levels_end_at_final_partition_and_cover_nodes():
    g, _ = two_k5_bridge()
    result = sem_minimize(g)
    assert result.levels, "at least one coarsening level is recorded"
    assert result.levels[-1] == result.partition
    for level in result.levels:
        assert set(level) == set(g.nodes)


def test_partition_keys_are_smallest_member_ids():
    g, _ = two_triangle_bridge()
    result = sem_minimize(g)
    for key, members in result.communities.items():
        assert key == min(members)
        for nid in members:
            assert result.partition[nid] == key


def test_minimize_empty_graph_raises():
    with pytest.raises(EmptyGraph):
        sem_minimize(TypedGraph())


def test_minimize_is_deterministic():
    g, _ = two_k5_bridge()
    first = sem_minimize(g)
    second = sem_minimize(g)
    assert first.partition == second.partition
    assert [
        (m.a, m.b, m.merged) for m in first.dendrogram
    ] == [(m.a, m.b, m.merged) for m in second.dendrogram]


# ---------------------------------------------------------------------------
# macro node materialization


def _lettered_graph():
    g, _ = two_triangle_bridge()
    return g


def test_materialize_attaches_one_macro_per_community():
    g = _lettered_graph()
    result = sem_minimize(g)
    macro_ids = materialize_macronodes(g, result, offline_summarizer())
    assert len(macro_ids) == len(result.communities)
    for mid in macro_ids:
        node = g.nodes[mid]
        assert node.type is NodeType.MACRO_NODE
        assert node.text


def test_materialize_twice_replaces_instead_of_duplicating():
    g = _lettered_graph()
    result = sem_minimize(g)
    first = materialize_macronodes(g, result, offline_summarizer())
    second = materialize_macronodes(g, result, offline_summarizer())
    assert first == second
    macros = [n for n in g.nodes_of_type(NodeType.MACRO_NODE)]
    assert len(macros) == len(result.communities)


def test_base_projection_hides_macros_from_entropy():
    g = _lettered_graph()
    before = h1(g)
    result = sem_minimize(g)
    materialize_macronodes(g, result, offline_summarizer())
    base = base_projection(g)
    assert h1(base) == pytest.approx(before, abs=1e-12)
    assert not list(base.nodes_of_type(NodeType.MACRO_NODE))


def test_membership_edges_connect_members_to_their_macro():
    g = _lettered_graph()
    result = sem_minimize(g)
    macro_ids = set(materialize_macronodes(g, result, offline_summarizer()))
    for key, members in result.communities.items():
        macro_id = f"macro:{key}"
        assert macro_id in macro_ids
        linked = {
            g.edges[eid].src
            for eid in g.in_edges[macro_id]
            if g.edges[eid].rel is RelationType.MEMBER_OF
        }
        assert linked == set(members)
