"""Typed multimodal graph: storage, merging, traversal, persistence.

The compilers emit GraphFragment values (typed nodes and edges with
provenance in their attribute maps). merge_units folds fragments into one
TypedGraph, unifying Term nodes that share a normalized surface form across
documents. Edges are stored directed and typed but projected to undirected
form for degrees, volumes, and K-hop traversal.

Node ids are namespaced by document ("{doc}:{block}" and suffixes); unified
terms live under the corpus-wide "term:{key}" namespace; macro nodes under
"macro:{community}". Persistence is two JSONL streams plus a checksummed
manifest, see save_graph/load_graph.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from .doc_model import canonical_json_bytes
from .errors import (
    ChecksumError,
    EmptyAnchors,
    FormatVersionError,
    IdCollisionError,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class NodeType(Enum):
    SECTION = "Section"
    PARAGRAPH = "Paragraph"
    TERM = "Term"
    ROW_HEADER = "RowHeader"
    COL_HEADER = "ColHeader"
    CELL = "Cell"
    PREDICATE = "Predicate"
    OPERATOR = "Operator"
    VARIABLE = "Variable"
    CONSTANT = "Constant"
    MACRO_NODE = "MacroNode"


class RelationType(Enum):
    CONTAINS = "Contains"
    REFERS_TO = "RefersTo"
    DEFINES = "Defines"
    ROW_BIND = "RowBind"
    COL_BIND = "ColBind"
    ACTIVATES = "Activates"
    OPERAND_OF = "OperandOf"
    PRECEDES = "Precedes"
    SRC = "Src"
    MEMBER_OF = "MemberOf"


@dataclass
class Node:
    id: str
    type: NodeType
    text: str
    attrs: dict = field(default_factory=dict)


@dataclass
class Edge:
    id: str
    src: str
    dst: str
    rel: RelationType
    attrs: dict = field(default_factory=dict)


def edge_id(src: str, rel: RelationType, dst: str, k: int = 0) -> str:
    return f"{src}|{rel.value}|{dst}#{k}"


@dataclass
class GraphFragment:
    """Nodes and edges emitted by one compiler pass, pre-merge."""

    nodes: list[Node] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)

    def add_node(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    def add_edge(self, src: str, rel: RelationType, dst: str, attrs: Optional[dict] = None) -> Edge:
        k = sum(1 for e in self.edges if e.src == src and e.dst == dst and e.rel == rel)
        edge = Edge(edge_id(src, rel, dst, k), src, dst, rel, attrs or {})
        self.edges.append(edge)
        return edge


def normalize_term(surface: str) -> str:
    """Unification key: lowercase, whitespace collapsed, trailing 's' stripped."""
    key = " ".join(surface.lower().split())
    if len(key) > 1 and key.endswith("s"):
        key = key[:-1]
    return key


class TypedGraph:
    """Directed typed multigraph with per-node adjacency lists."""

    def __init__(self) -> None:
        self.nodes: dict[str, Node] = {}
        self.edges: dict[str, Edge] = {}
        self.out_edges: dict[str, list[str]] = {}
        self.in_edges: dict[str, list[str]] = {}

    def add_node(self, node: Node) -> None:
        existing = self.nodes.get(node.id)
        if existing is not None:
            if (existing.type, existing.text, existing.attrs) != (
                node.type,
                node.text,
                node.attrs,
            ):
                raise IdCollisionError(
                    f"node id {node.id!r} claimed by two distinct payloads"
                )
            return
        self.nodes[node.id] = node
        self.out_edges[node.id] = []
        self.in_edges[node.id] = []

    def add_edge(self, edge: Edge) -> None:
        if edge.src not in self.nodes or edge.dst not in self.nodes:
            raise ValueError(
                f"edge {edge.id!r} references missing endpoint "
                f"({edge.src!r} -> {edge.dst!r})"
            )
        existing = self.edges.get(edge.id)
        if existing is not None:
            if (existing.src, existing.dst, existing.rel, existing.attrs) != (
                edge.src,
                edge.dst,
                edge.rel,
                edge.attrs,
            ):
                raise IdCollisionError(
                    f"edge id {edge.id!r} claimed by two distinct payloads"
                )
            return
        self.edges[edge.id] = edge
        self.out_edges[edge.src].append(edge.id)
        self.in_edges[edge.dst].append(edge.id)

    def remove_edge(self, edge_id: str) -> None:
        edge = self.edges.pop(edge_id)
        self.out_edges[edge.src].remove(edge_id)
        self.in_edges[edge.dst].remove(edge_id)

    def remove_node(self, node_id: str) -> None:
        """Delete the node and every edge touching it."""
        for eid in set(self.out_edges[node_id]) | set(self.in_edges[node_id]):
            self.remove_edge(eid)
        del self.nodes[node_id]
        del self.out_edges[node_id]
        del self.in_edges[node_id]

    def incident_edges(self, node_id: str) -> Iterable[Edge]:
        """All edges touching the node; a self-loop appears once."""
        for eid in self.out_edges[node_id]:
            yield self.edges[eid]
        for eid in self.in_edges[node_id]:
            edge = self.edges[eid]
            if edge.src != edge.dst:
                yield edge

    def degree(self, node_id: str) -> int:
        # undirected projection: parallel edges counted, self-loops count 2
        d = 0
        for edge in self.incident_edges(node_id):
            d += 2 if edge.src == edge.dst else 1
        return d

    def nodes_of_type(self, node_type: NodeType) -> list[Node]:
        return [n for n in self.nodes.values() if n.type == node_type]


def degree_vector(g: TypedGraph) -> list[tuple[str, int]]:
    return [(nid, g.degree(nid)) for nid in sorted(g.nodes)]


def volume(g: TypedGraph) -> int:
    return sum(d for _, d in degree_vector(g))


# --- merging ----------------------------------------------------------------

def merge_units(fragments: Iterable[GraphFragment]) -> TypedGraph:
    """Fold compiler fragments into one graph, unifying Term nodes.

    Term nodes sharing a normalized surface form collapse into a single
    corpus-level node "term:{key}" whose payload comes from the member with
    the smallest original id; all edges are redirected. The result is
    independent of fragment order: everything is sorted before insertion.
    """
    all_nodes: list[Node] = []
    all_edges: list[Edge] = []
    for frag in fragments:
        all_nodes.extend(frag.nodes)
        all_edges.extend(frag.edges)

    # group term nodes by unification key and pick a deterministic representative
    term_groups: dict[str, list[Node]] = {}
    for node in all_nodes:
        if node.type == NodeType.TERM:
            term_groups.setdefault(normalize_term(node.text), []).append(node)
    redirect: dict[str, str] = {}
    unified: dict[str, Node] = {}
    for key, members in term_groups.items():
        members.sort(key=lambda n: n.id)
        canonical_id = f"term:{key}"
        rep = members[0]
        surfaces = sorted({m.text for m in members})
        attrs = dict(rep.attrs)
        attrs["surfaces"] = surfaces
        unified[canonical_id] = Node(canonical_id, NodeType.TERM, rep.text, attrs)
        for m in members:
            redirect[m.id] = canonical_id

    graph = TypedGraph()
    merged_nodes = [n for n in all_nodes if n.id not in redirect]
    merged_nodes.extend(unified.values())
    for node in sorted(merged_nodes, key=lambda n: n.id):
        graph.add_node(node)

    rewritten: list[Edge] = []
    for edge in all_edges:
        src = redirect.get(edge.src, edge.src)
        dst = redirect.get(edge.dst, edge.dst)
        if src != edge.src or dst != edge.dst:
            k = edge.id.rsplit("#", 1)[-1]
            new_id = f"{src}|{edge.rel.value}|{dst}#{k}"
            rewritten.append(Edge(new_id, src, dst, edge.rel, edge.attrs))
        else:
            rewritten.append(edge)
    for edge in sorted(rewritten, key=lambda e: e.id):
        graph.add_edge(edge)
    return graph


# --- traversal --------------------------------------------------------------

@dataclass
class Subgraph:
    """Induced result of a bounded K-hop expansion."""

    nodes: list[str]
    hops: dict[str, int]
    edge_ids: list[str]
    anchors: list[str]


DEFAULT_KHOP_BUDGET = 512


def khop_expand(
    g: TypedGraph,
    anchors: set[str],
    k: int,
    allowed: set[RelationType],
    budget: int = DEFAULT_KHOP_BUDGET,
) -> Subgraph:
    """Breadth-first ball of radius k over allowed relations, both directions.

    Deterministic: each frontier is processed in ascending node id order and
    the node budget cuts the final frontier in that same order.
    """
    valid = sorted(a for a in anchors if a in g.nodes)
    if not valid:
        raise EmptyAnchors("k-hop expansion requires at least one anchor node")
    hops: dict[str, int] = {a: 0 for a in valid}
    frontier = deque(valid)
    while frontier:
        current = frontier.popleft()
        depth = hops[current]
        if depth >= k:
            continue
        neighbors = set()
        for edge in g.incident_edges(current):
            if edge.rel not in allowed:
                continue
            other = edge.dst if edge.src == current else edge.src
            if other not in hops:
                neighbors.add(other)
        for other in sorted(neighbors):
            if len(hops) >= budget:
                break
            hops[other] = depth + 1
            frontier.append(other)
    members = sorted(hops, key=lambda n: (hops[n], n))
    member_set = set(members)
    edge_ids = sorted(
        eid
        for eid, edge in g.edges.items()
        if edge.rel in allowed and edge.src in member_set and edge.dst in member_set
    )
    return Subgraph(nodes=members, hops=hops, edge_ids=edge_ids, anchors=valid)


# --- persistence ------------------------------------------------------------

def _node_line(node: Node) -> bytes:
    return canonical_json_bytes(
        {"id": node.id, "type": node.type.value, "text": node.text, "attrs": node.attrs}
    )


def _edge_line(edge: Edge) -> bytes:
    return canonical_json_bytes(
        {
            "id": edge.id,
            "src": edge.src,
            "dst": edge.dst,
            "rel": edge.rel.value,
            "attrs": edge.attrs,
        }
    )


def save_graph(g: TypedGraph, path: str | Path) -> None:
    """Write nodes.jsonl, edges.jsonl, and a checksummed manifest."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    nodes_blob = b"\n".join(_node_line(g.nodes[nid]) for nid in sorted(g.nodes))
    if g.nodes:
        nodes_blob += b"\n"
    edges_blob = b"\n".join(_edge_line(g.edges[eid]) for eid in sorted(g.edges))
    if g.edges:
        edges_blob += b"\n"
    (out / "nodes.jsonl").write_bytes(nodes_blob)
    (out / "edges.jsonl").write_bytes(edges_blob)
    checksum = hashlib.sha256(nodes_blob + edges_blob).hexdigest()
    manifest = {
        "format_version": FORMAT_VERSION,
        "checksum": checksum,
        "node_count": len(g.nodes),
        "edge_count": len(g.edges),
    }
    (out / "graph_manifest.json").write_bytes(canonical_json_bytes(manifest) + b"\n")


def load_graph(path: str | Path) -> TypedGraph:
    src = Path(path)
    manifest = json.loads((src / "graph_manifest.json").read_text("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatVersionError(
            f"unknown graph format version {manifest.get('format_version')!r}"
        )
    nodes_blob = (src / "nodes.jsonl").read_bytes()
    edges_blob = (src / "edges.jsonl").read_bytes()
    checksum = hashlib.sha256(nodes_blob + edges_blob).hexdigest()
    if checksum != manifest.get("checksum"):
        raise ChecksumError("graph content does not match manifest checksum")
    graph = TypedGraph()
    for line in nodes_blob.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        graph.add_node(
            Node(obj["id"], NodeType(obj["type"]), obj["text"], obj["attrs"])
        )
    for line in edges_blob.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        graph.add_edge(
            Edge(obj["id"], obj["src"], obj["dst"], RelationType(obj["rel"]), obj["attrs"])
        )
    return graph


def graphs_equal(a: TypedGraph, b: TypedGraph) -> bool:
    return (
        {k: (n.type, n.text, n.attrs) for k, n in a.nodes.items()}
        == {k: (n.type, n.text, n.attrs) for k, n in b.nodes.items()}
        and {k: (e.src, e.dst, e.rel, e.attrs) for k, e in a.edges.items()}
        == {k: (e.src, e.dst, e.rel, e.attrs) for k, e in b.edges.items()}
    )
