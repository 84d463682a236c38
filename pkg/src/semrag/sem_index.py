"""Entropy-guided hierarchical index over the typed graph.

The indexer partitions the graph into communities by greedily minimizing
two-level structural entropy, refines the result with single-node moves and
community dissolution, and then certifies it: a constrained re-merge from
singletons whose strictly improving steps form the dendrogram. Snapshots
taken while coarsening become the retrieval hierarchy's levels, and
materialize_macronodes attaches one summary node per final community.

Degrees are taken on the undirected projection where a self-loop adds two;
self-loops never cross a community boundary, so they shape the intra terms
but never the cut terms.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .errors import (
    EmptyGraph,
    InvalidPartition,
    NotAdjacent,
    NotADistribution,
    SummarizerError,
)
from .graph_core import Edge, Node, NodeType, RelationType, TypedGraph, edge_id

logger = logging.getLogger(__name__)

EPSILON = 1e-12
SNAPSHOT_FRACTION = 0.1
PROB_TOLERANCE = 1e-9


def shannon(probabilities: Iterable[float]) -> float:
    """Entropy in bits of a discrete distribution; zero mass contributes zero."""
    ps = list(probabilities)
    if not ps:
        raise NotADistribution("a distribution needs at least one probability")
    if any(p < 0 for p in ps):
        raise NotADistribution(f"negative probability in {ps}")
    total = sum(ps)
    if abs(total - 1.0) > PROB_TOLERANCE:
        raise NotADistribution(f"probabilities sum to {total}, expected 1")
    return -sum(p * math.log2(p) for p in ps if p > 0)


# --- base projection --------------------------------------------------------

def base_projection(g: TypedGraph) -> TypedGraph:
    """Copy of the graph without macro nodes and membership edges.

    All entropy statistics are defined on this projection so that attaching
    summaries never changes what the index measures.
    """
    out = TypedGraph()
    for nid in sorted(g.nodes):
        node = g.nodes[nid]
        if node.type != NodeType.MACRO_NODE:
            out.add_node(node)
    for eid in sorted(g.edges):
        edge = g.edges[eid]
        if edge.rel == RelationType.MEMBER_OF:
            continue
        if edge.src in out.nodes and edge.dst in out.nodes:
            out.add_edge(edge)
    return out


# --- flat and two-level entropy ---------------------------------------------

def _degree_data(g: TypedGraph):
    """Per-node degree, self-loop count, and aggregated neighbor multiplicities."""
    deg: dict[str, int] = {nid: 0 for nid in g.nodes}
    loops: dict[str, int] = {nid: 0 for nid in g.nodes}
    adj: dict[str, dict[str, int]] = {nid: {} for nid in g.nodes}
    for edge in g.edges.values():
        if edge.src == edge.dst:
            deg[edge.src] += 2
            loops[edge.src] += 1
        else:
            deg[edge.src] += 1
            deg[edge.dst] += 1
            adj[edge.src][edge.dst] = adj[edge.src].get(edge.dst, 0) + 1
            adj[edge.dst][edge.src] = adj[edge.dst].get(edge.src, 0) + 1
    return deg, loops, adj


def h1(g: TypedGraph) -> float:
    """Flat structural entropy of the undirected degree distribution, in bits."""
    if not g.edges:
        raise EmptyGraph("flat entropy requires at least one edge")
    deg, _, _ = _degree_data(g)
    total = float(sum(deg.values()))
    return -sum(
        (d / total) * math.log2(d / total) for d in deg.values() if d > 0
    )


def _check_partition(g: TypedGraph, partition: dict[str, object]) -> None:
    if set(partition) != set(g.nodes):
        missing = sorted(set(g.nodes) - set(partition))[:3]
        extra = sorted(set(partition) - set(g.nodes))[:3]
        raise InvalidPartition(
            f"partition must cover the nodes exactly (missing {missing}, extra {extra})"
        )


def h2(g: TypedGraph, partition: dict[str, object]) -> float:
    """Two-level structural entropy of the partition, in bits.

    Sum over communities of the volume-weighted internal degree entropy,
    plus the boundary term charging each cross edge for the depth of the
    community it enters. Collapses to h1 when every node shares one
    community.
    """
    if not g.edges:
        raise EmptyGraph("two-level entropy requires at least one edge")
    _check_partition(g, partition)
    deg, _, _ = _degree_data(g)
    total = float(sum(deg.values()))
    members: dict[object, list[str]] = {}
    for nid, label in partition.items():
        members.setdefault(label, []).append(nid)
    cut: dict[object, int] = {label: 0 for label in members}
    for edge in g.edges.values():
        if edge.src == edge.dst:
            continue
        a, b = partition[edge.src], partition[edge.dst]
        if a != b:
            cut[a] += 1
            cut[b] += 1
    value = 0.0
    for label, nodes in members.items():
        vol = sum(deg[n] for n in nodes)
        if vol == 0:
            continue
        intra = -sum(
            (deg[n] / vol) * math.log2(deg[n] / vol) for n in nodes if deg[n] > 0
        )
        value += (vol / total) * intra
        value -= (cut[label] / total) * math.log2(vol / total)
    return value


# --- incremental state ------------------------------------------------------

@dataclass
class PartitionState:
    """Sufficient statistics for O(1) merge and move deltas.

    Per community: volume, boundary edge count, and the degree-weighted log
    sum that closes the intra term. The identity used throughout:
    contribution(C) = (Vc*log2(Vc) - S_C - g_C*(log2(Vc) - log2(V))) / V
    and h2 is the sum of contributions.
    """

    volume: float
    deg: dict[str, int]
    loops: dict[str, int]
    adj: dict[str, dict[str, int]]
    node_comm: dict[str, int]
    members: dict[int, set[str]]
    comm_vol: dict[int, int]
    comm_cut: dict[int, int]
    comm_s: dict[int, float]
    next_id: int

    @classmethod
    def from_partition(cls, g: TypedGraph, partition: dict[str, int]) -> "PartitionState":
        if not g.edges:
            raise EmptyGraph("partition state requires at least one edge")
        _check_partition(g, partition)
        deg, loops, adj = _degree_data(g)
        members: dict[int, set[str]] = {}
        for nid, label in partition.items():
            members.setdefault(label, set()).add(nid)
        comm_vol = {c: sum(deg[n] for n in ns) for c, ns in members.items()}
        comm_s = {
            c: sum(deg[n] * math.log2(deg[n]) for n in ns if deg[n] > 0)
            for c, ns in members.items()
        }
        comm_cut = {c: 0 for c in members}
        for edge in g.edges.values():
            if edge.src == edge.dst:
                continue
            a, b = partition[edge.src], partition[edge.dst]
            if a != b:
                comm_cut[a] += 1
                comm_cut[b] += 1
        return cls(
            volume=float(sum(deg.values())),
            deg=deg,
            loops=loops,
            adj=adj,
            node_comm=dict(partition),
            members=members,
            comm_vol=comm_vol,
            comm_cut=comm_cut,
            comm_s=comm_s,
            next_id=max(members) + 1 if members else 0,
        )

    @classmethod
    def singletons(cls, g: TypedGraph) -> "PartitionState":
        order = sorted(g.nodes)
        return cls.from_partition(g, {nid: i for i, nid in enumerate(order)})

    def contribution(self, comm: int) -> float:
        vol = self.comm_vol[comm]
        if vol <= 0:
            return 0.0
        return (
            vol * math.log2(vol)
            - self.comm_s[comm]
            - self.comm_cut[comm] * (math.log2(vol) - math.log2(self.volume))
        ) / self.volume

    def h2(self) -> float:
        return sum(self.contribution(c) for c in self.members)

    def cross(self, a: int, b: int) -> int:
        """Edge multiplicity between two communities; O(smaller boundary)."""
        members_a, members_b = self.members[a], self.members[b]
        if len(members_a) > len(members_b):
            members_a, members_b = members_b, members_a
        count = 0
        for nid in members_a:
            for other, mult in self.adj[nid].items():
                if other in members_b:
                    count += mult
        return count

    def merge_delta(self, a: int, b: int, cross: Optional[int] = None) -> float:
        """Exact change in h2 from merging communities a and b."""
        if cross is None:
            cross = self.cross(a, b)
        v = self.volume
        va, vb = self.comm_vol[a], self.comm_vol[b]
        ga, gb = self.comm_cut[a], self.comm_cut[b]
        vm = va + vb
        gm = ga + gb - 2 * cross
        delta = 0.0
        if vm > 0:
            delta -= (gm / v) * math.log2(vm / v)
        if va > 0:
            delta += (ga / v) * math.log2(va / v)
            delta -= (va / v) * math.log2(va / vm)
        if vb > 0:
            delta += (gb / v) * math.log2(vb / v)
            delta -= (vb / v) * math.log2(vb / vm)
        return delta

    def merge(self, a: int, b: int) -> int:
        cross = self.cross(a, b)
        merged = self.next_id
        self.next_id += 1
        self.members[merged] = self.members.pop(a) | self.members.pop(b)
        for nid in self.members[merged]:
            self.node_comm[nid] = merged
        self.comm_vol[merged] = self.comm_vol.pop(a) + self.comm_vol.pop(b)
        self.comm_s[merged] = self.comm_s.pop(a) + self.comm_s.pop(b)
        self.comm_cut[merged] = self.comm_cut.pop(a) + self.comm_cut.pop(b) - 2 * cross
        return merged

    def edges_into(self, nid: str, comm: int) -> int:
        """Multiplicity of non-loop edges from the node into the community."""
        count = 0
        for other, mult in self.adj[nid].items():
            if self.node_comm[other] == comm:
                count += mult
        return count

    def move_delta(self, nid: str, target: int) -> float:
        source = self.node_comm[nid]
        if source == target:
            return 0.0
        before = self.contribution(source) + self.contribution(target)
        self._apply_move(nid, source, target)
        after = self.contribution(source) + self.contribution(target)
        self._apply_move(nid, target, source)
        return after - before

    def _apply_move(self, nid: str, source: int, target: int) -> None:
        # adj holds no self entries, so these counts exclude self-loops and
        # (for the source side) the node's own former membership
        d = self.deg[nid]
        d_out = d - 2 * self.loops[nid]
        s_term = d * math.log2(d) if d > 0 else 0.0
        e_src = self.edges_into(nid, source)
        e_dst = self.edges_into(nid, target)
        self.members[source].discard(nid)
        self.members[target].add(nid)
        self.node_comm[nid] = target
        self.comm_vol[source] -= d
        self.comm_vol[target] += d
        self.comm_s[source] -= s_term
        self.comm_s[target] += s_term
        self.comm_cut[source] += 2 * e_src - d_out
        self.comm_cut[target] -= 2 * e_dst - d_out

    def move(self, nid: str, target: int) -> None:
        source = self.node_comm[nid]
        if source == target:
            return
        if target not in self.members:  # revived by a rollback
            self.members[target] = set()
            self.comm_vol[target] = 0
            self.comm_cut[target] = 0
            self.comm_s[target] = 0.0
        self._apply_move(nid, source, target)
        if not self.members[source]:
            del self.members[source]
            del self.comm_vol[source]
            del self.comm_cut[source]
            del self.comm_s[source]

    def partition_sets(self) -> set[frozenset[str]]:
        return {frozenset(ns) for ns in self.members.values()}

    def labels_by_min_member(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for ns in self.members.values():
            key = min(ns)
            for nid in ns:
                out[nid] = key
        return out


def delta_h2_merge(state: PartitionState, a: int, b: int) -> float:
    """Public merge delta; requires two distinct communities sharing an edge."""
    if a == b or a not in state.members or b not in state.members:
        raise InvalidPartition(f"communities {a} and {b} are not two live communities")
    cross = state.cross(a, b)
    if cross == 0:
        raise NotAdjacent(f"communities {a} and {b} share no edge")
    return state.merge_delta(a, b, cross)


# --- minimization -----------------------------------------------------------

@dataclass(frozen=True)
class Merge:
    """One strictly improving dendrogram step: a + b -> merged."""

    a: int
    b: int
    merged: int
    delta: float


@dataclass
class MinimizeResult:
    """Final partition with its certifying dendrogram and coarsening levels.

    partition maps node id to a stable community key (the smallest member
    id); levels runs from the first coarsening snapshot down to the final
    partition, each a full node-to-key mapping.
    """

    partition: dict[str, str]
    communities: dict[str, list[str]]
    dendrogram: list[Merge]
    levels: list[dict[str, str]]
    h1: float
    h2: float
    epsilon: float


def _comm_neighbors(state: PartitionState, comm: int) -> set[int]:
    out: set[int] = set()
    for nid in state.members[comm]:
        for other in state.adj[nid]:
            c = state.node_comm[other]
            if c != comm:
                out.add(c)
    return out


def _greedy_merge(
    state: PartitionState,
    epsilon: float,
    snapshots: list[dict[str, str]],
    thresholds: list[int],
) -> None:
    """Largest-decrease-first pairwise merging with a lazily invalidated heap."""
    heap: list[tuple[float, int, int]] = []
    seen: set[tuple[int, int]] = set()
    for comm in sorted(state.members):
        for other in _comm_neighbors(state, comm):
            pair = (min(comm, other), max(comm, other))
            if pair not in seen:
                seen.add(pair)
                heap.append((state.merge_delta(*pair), *pair))
    heapq.heapify(heap)
    while heap:
        delta, a, b = heapq.heappop(heap)
        if a not in state.members or b not in state.members:
            continue  # stale: a side was already merged away
        if delta >= -epsilon:
            break
        merged = state.merge(a, b)
        while thresholds and len(state.members) <= thresholds[0]:
            thresholds.pop(0)
            snapshots.append(state.labels_by_min_member())
        for other in sorted(_comm_neighbors(state, merged)):
            pair = (min(merged, other), max(merged, other))
            heapq.heappush(heap, (state.merge_delta(*pair), *pair))


def _refine(state: PartitionState, epsilon: float) -> None:
    """Single-node moves plus community dissolution until a full quiet pass."""
    improved = True
    while improved:
        improved = False
        for nid in sorted(state.node_comm):
            source = state.node_comm[nid]
            best_delta, best_target = 0.0, None
            for target in sorted({state.node_comm[o] for o in state.adj[nid]} - {source}):
                delta = state.move_delta(nid, target)
                if delta < best_delta:
                    best_delta, best_target = delta, target
            if best_target is not None and best_delta < -epsilon:
                state.move(nid, best_target)
                improved = True
        for comm in sorted(state.members, key=lambda c: min(state.members[c])):
            if comm not in state.members or len(state.members[comm]) <= 1:
                continue
            plan: list[tuple[str, int, int]] = []  # node, source, target
            total = 0.0
            feasible = True
            for nid in sorted(state.members[comm].copy()):
                targets = sorted(
                    {state.node_comm[o] for o in state.adj[nid]}
                    - {state.node_comm[nid]}
                )
                if not targets:
                    feasible = False
                    break
                best_delta, best_target = None, None
                for target in targets:
                    delta = state.move_delta(nid, target)
                    if best_delta is None or delta < best_delta:
                        best_delta, best_target = delta, target
                plan.append((nid, state.node_comm[nid], best_target))
                total += best_delta
                state.move(nid, best_target)
            if feasible and total < -epsilon:
                improved = True
            else:
                for nid, source, _ in reversed(plan):
                    state.move(nid, source)


def _witness(
    g: TypedGraph, target_sets: set[frozenset[str]], epsilon: float
) -> tuple[PartitionState, list[Merge]]:
    """Constrained greedy re-merge from singletons toward the target partition.

    Only pairs inside one target community are considered, so every recorded
    merge strictly lowers h2 and replaying them rebuilds the result. If the
    constrained walk stalls early, its endpoint becomes the result.
    """
    state = PartitionState.singletons(g)
    target_of: dict[str, int] = {}
    for index, nodes in enumerate(sorted(target_sets, key=min)):
        for nid in nodes:
            target_of[nid] = index

    def comm_target(comm: int) -> int:
        return target_of[next(iter(state.members[comm]))]

    merges: list[Merge] = []
    groups: dict[int, set[int]] = {}
    for comm in state.members:
        groups.setdefault(comm_target(comm), set()).add(comm)

    def record(a: int, b: int, delta: float) -> int:
        merged = state.merge(a, b)
        merges.append(Merge(a, b, merged, delta))
        group = groups[comm_target(merged)]
        group.discard(a)
        group.discard(b)
        group.add(merged)
        return merged

    heap: list[tuple[float, int, int]] = []
    for comm in sorted(state.members):
        target = comm_target(comm)
        for other in _comm_neighbors(state, comm):
            if comm_target(other) != target:
                continue
            pair = (min(comm, other), max(comm, other))
            if pair == (comm, other):  # push each adjacent pair once
                heap.append((state.merge_delta(*pair), *pair))
    heapq.heapify(heap)
    while heap:
        delta, a, b = heapq.heappop(heap)
        if a not in state.members or b not in state.members:
            continue
        if delta >= -epsilon:
            break
        merged = record(a, b, delta)
        target = comm_target(merged)
        for other in sorted(_comm_neighbors(state, merged)):
            if comm_target(other) != target:
                continue
            pair = (min(merged, other), max(merged, other))
            heapq.heappush(heap, (state.merge_delta(*pair), *pair))

    # sweep disconnected remainders inside each target community
    for target in sorted(groups):
        improved = True
        while improved and len(groups[target]) > 1:
            improved = False
            ordered = sorted(groups[target])
            best: Optional[tuple[float, int, int]] = None
            for i, a in enumerate(ordered):
                for b in ordered[i + 1 :]:
                    delta = state.merge_delta(a, b)
                    if delta < -epsilon and (best is None or (delta, a, b) < best):
                        best = (delta, a, b)
            if best is not None:
                record(best[1], best[2], best[0])
                improved = True
    return state, merges


def sem_minimize(
    g: TypedGraph,
    epsilon: float = EPSILON,
    snapshot_fraction: float = SNAPSHOT_FRACTION,
) -> MinimizeResult:
    """Partition the graph by minimizing two-level structural entropy.

    Three phases: greedy pairwise merging from singletons, refinement by
    single-node moves and community dissolution, then a constrained
    re-merge that certifies the endpoint with a dendrogram of strictly
    improving steps. Deterministic for a given graph: ties break on
    community ids, nodes are visited in sorted order.
    """
    if not g.edges:
        raise EmptyGraph("minimization requires at least one edge")
    state = PartitionState.singletons(g)
    n0 = len(state.members)
    thresholds = []
    if snapshot_fraction > 0:
        fraction = snapshot_fraction
        while fraction < 1.0:
            count = math.floor(n0 * (1.0 - fraction))
            if count < 1:
                break
            if not thresholds or count < thresholds[-1]:
                thresholds.append(count)
            fraction += snapshot_fraction
    snapshots: list[dict[str, str]] = []
    _greedy_merge(state, epsilon, snapshots, thresholds)
    _refine(state, epsilon)
    final_state, merges = _witness(g, state.partition_sets(), epsilon)
    partition = final_state.labels_by_min_member()
    if final_state.partition_sets() != state.partition_sets():
        logger.warning(
            "witness stalled at %d communities; using its endpoint",
            len(final_state.members),
        )
    levels = [s for s in snapshots if s != partition]
    levels.append(partition)
    communities: dict[str, list[str]] = {}
    for nid, key in partition.items():
        communities.setdefault(key, []).append(nid)
    for key in communities:
        communities[key].sort()
    return MinimizeResult(
        partition=partition,
        communities=communities,
        dendrogram=merges,
        levels=levels,
        h1=h1(g),
        h2=final_state.h2(),
        epsilon=epsilon,
    )


def replay_dendrogram(g: TypedGraph, dendrogram: list[Merge]) -> set[frozenset[str]]:
    """Re-run recorded merges from singletons; returns the partition reached."""
    order = sorted(g.nodes)
    members: dict[int, set[str]] = {i: {nid} for i, nid in enumerate(order)}
    next_id = len(order)
    for step in dendrogram:
        if step.a not in members or step.b not in members or step.merged != next_id:
            raise InvalidPartition(
                f"dendrogram step {step} does not apply to the current state"
            )
        members[next_id] = members.pop(step.a) | members.pop(step.b)
        next_id += 1
    return {frozenset(ns) for ns in members.values()}


# --- macro materialization --------------------------------------------------

SUMMARY_BUDGET_TOKENS = 500

Summarize = Callable[[str, int], tuple[str, int]]


def community_text(g: TypedGraph, members: list[str]) -> str:
    """Member texts joined by newlines, highest degree first, ties by id.

    Operator nodes that carry a rendered expression contribute that
    expression instead of their bare symbol, so formula communities read
    as equations rather than punctuation.
    """
    ranked = sorted(members, key=lambda nid: (-g.degree(nid), nid))
    parts = []
    for nid in ranked:
        node = g.nodes[nid]
        text = node.attrs.get("expr") or node.text
        if text:
            parts.append(text)
    return "\n".join(parts)


def materialize_macronodes(
    g: TypedGraph,
    index: MinimizeResult,
    summarize: Summarize,
    budget_tokens: int = SUMMARY_BUDGET_TOKENS,
) -> list[str]:
    """Attach one summary node per community; safe to run repeatedly.

    Each macro node's id is derived from its community key, so a second
    materialization replaces rather than duplicates. Members point at their
    macro with membership edges; those edges and the macro nodes themselves
    are invisible to the entropy statistics via base_projection.
    """
    base = base_projection(g)
    for stale in sorted(n.id for n in g.nodes_of_type(NodeType.MACRO_NODE)):
        g.remove_node(stale)
    macro_ids = []
    for key in sorted(index.communities):
        members = index.communities[key]
        macro_id = f"macro:{key}"
        text = community_text(base, members)
        try:
            summary, tokens_used = summarize(text, budget_tokens)
        except Exception as exc:
            raise SummarizerError(key, exc) from exc
        g.add_node(
            Node(
                macro_id,
                NodeType.MACRO_NODE,
                summary,
                {
                    "community": key,
                    "members": list(members),
                    "size": len(members),
                    "tokens_used": tokens_used,
                },
            )
        )
        for nid in members:
            g.add_edge(
                Edge(
                    edge_id(nid, RelationType.MEMBER_OF, macro_id),
                    nid,
                    macro_id,
                    RelationType.MEMBER_OF,
                )
            )
        macro_ids.append(macro_id)
    return macro_ids
