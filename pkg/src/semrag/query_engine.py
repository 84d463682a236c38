"""Routed retrieval over the indexed graph, ending in cited answers.

A query is featurized (length, entity mentions, symbolic tokens, hit
entropy), routed to one of three strategies, and answered from evidence
records that carry full provenance:

- low: direct vector search over paragraphs and cells;
- med: anchor nodes (gazetteer terms, then best vector hits) expanded a few
  hops along structural relations, candidates re-ranked by similarity;
- high: community summary nodes matched against the query.

The router has a deterministic rule fallback and an optional trained
classifier (a small seeded MLP over standardized features). Verbalization
turns each node kind into one English statement; build_prompt lays the
records out in the evidence format the offline generator understands
(docs/prompt_template.md).
"""

from __future__ import annotations

import logging
import math
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ClassMissingError,
    DanglingNode,
    EmptyIndex,
    NoMacroNodes,
    SchemaError,
)
from .graph_core import NodeType, RelationType, TypedGraph, khop_expand
from .layout_compiler import CellHit, lookup_cell
from .llm_clients import LlmClient, count_tokens
from .sem_index import shannon
from .vector_align import TOPO_DIM, embed_text, fused_embedding, topo_feature

logger = logging.getLogger(__name__)


class Route(Enum):
    LOW = "low"
    MED = "med"
    HIGH = "high"


INDEXED_TYPES = (
    NodeType.SECTION,
    NodeType.PARAGRAPH,
    NodeType.TERM,
    NodeType.ROW_HEADER,
    NodeType.COL_HEADER,
    NodeType.CELL,
    NodeType.PREDICATE,
    NodeType.MACRO_NODE,
)
VERBALIZABLE_TYPES = (
    NodeType.PARAGRAPH,
    NodeType.CELL,
    NodeType.PREDICATE,
    NodeType.OPERATOR,
    NodeType.MACRO_NODE,
)
EXPAND_RELATIONS = frozenset(
    {
        RelationType.ROW_BIND,
        RelationType.COL_BIND,
        RelationType.ACTIVATES,
        RelationType.OPERAND_OF,
        RelationType.DEFINES,
        RelationType.REFERS_TO,
        RelationType.CONTAINS,
    }
)

HIT_ENTROPY_TOP = 10
SYMBOLIC_PATTERN = re.compile(
    r"[=^_\\/]|\b(?:log2?|sum|frac)\b|\d+\s*(?:dB|dBm|GHz|MHz|ms)\b"
)
ACRONYM_PATTERN = re.compile(r"\b[A-Z][A-Z0-9]+\b")


@dataclass
class RetrievalConfig:
    budget: int = 5
    khop: int = 3
    anchor_hits: int = 3
    max_anchors: int = 4
    macro_limit: int = 5
    summary_budget_tokens: int = 500
    log_misroute: bool = False


def retrieval_text(g: TypedGraph, node_id: str) -> str:
    """The text a node is indexed under; cells expose their header context."""
    node = g.nodes[node_id]
    if node.type == NodeType.CELL:
        parts = list(node.attrs.get("row_path", []))
        parts += list(node.attrs.get("col_path", []))
        parts.append(node.attrs.get("value", node.text))
        if node.attrs.get("unit"):
            parts.append(node.attrs["unit"])
        return " ".join(parts)
    if node.type == NodeType.OPERATOR and "expr" in node.attrs:
        return node.attrs["expr"]
    return node.text


# --- evidence ---------------------------------------------------------------

@dataclass
class EvidenceRecord:
    """One verbalized node: a subject-relation-object statement with its
    guard condition, source clause, and resolvable provenance, plus the
    retrieval context that produced it."""

    clause: str
    subject: str
    relation: str
    object: str
    condition: Optional[str]
    provenance: dict
    node_id: str
    node_type: str
    score: float
    route: str
    hop: Optional[int] = None

    @property
    def statement(self) -> str:
        return f"{self.subject} {self.relation} {self.object}"

    @property
    def doc_id(self) -> str:
        return self.provenance["doc_id"]

    @property
    def page(self) -> int:
        return self.provenance["page"]

    def to_json(self) -> dict:
        return {
            "clause": self.clause,
            "subject": self.subject,
            "relation": self.relation,
            "object": self.object,
            "condition": self.condition,
            "provenance": dict(self.provenance),
            "node_id": self.node_id,
            "node_type": self.node_type,
            "score": round(self.score, 9),
            "route": self.route,
            "hop": self.hop,
        }


def _macro_representative(g: TypedGraph, node_id: str) -> Optional[dict]:
    members = g.nodes[node_id].attrs.get("members", [])
    ranked = sorted(
        (m for m in members if m in g.nodes),
        key=lambda m: (-g.degree(m), m),
    )
    for member in ranked:
        prov = g.nodes[member].attrs.get("prov")
        if prov:
            return prov
    return None


def _cell_condition(g: TypedGraph, node_id: str) -> Optional[str]:
    """Guard texts of the predicates activating a cell, in marker order."""
    guards = []
    for eid in g.in_edges[node_id]:
        edge = g.edges[eid]
        if edge.rel == RelationType.ACTIVATES:
            pred = g.nodes[edge.src]
            guards.append((pred.attrs.get("marker", ""), pred.text))
    if not guards:
        return None
    return "; ".join(text for _, text in sorted(guards))


def _enclosing_section_title(g: TypedGraph, node_id: str) -> Optional[str]:
    for eid in g.in_edges[node_id]:
        edge = g.edges[eid]
        if edge.rel == RelationType.CONTAINS:
            parent = g.nodes[edge.src]
            if parent.type == NodeType.SECTION and parent.text:
                return parent.text
    return None


def _statement_fields(
    g: TypedGraph, node_id: str
) -> tuple[str, str, str, Optional[str]]:
    """(subject, relation, object, condition) for one node's statement."""
    node = g.nodes[node_id]
    if node.type == NodeType.CELL:
        value = node.attrs.get("value", node.text)
        unit = node.attrs.get("unit")
        rendered = f"{value} {unit}" if unit else f"{value}"
        row = " / ".join(node.attrs.get("row_path", []))
        col = " / ".join(node.attrs.get("col_path", []))
        subject = row or "the table cell"
        obj = f"{col} = {rendered}" if col else rendered
        return subject, "has value under", obj, _cell_condition(g, node_id)
    if node.type == NodeType.PARAGRAPH:
        subject = _enclosing_section_title(g, node_id) or node.attrs.get(
            "prov", {}
        ).get("doc_id", "the document")
        return subject, "states", node.text, None
    if node.type == NodeType.PREDICATE:
        marker = node.attrs.get("marker")
        subject = f"table note {marker}" if marker else "a table note"
        return subject, "states", node.text, None
    if node.type == NodeType.OPERATOR and "expr" in node.attrs:
        expr = node.attrs["expr"]
        label = node.attrs.get("label")
        if " = " in expr:
            lhs, rhs = expr.split(" = ", 1)
            return label or lhs, "is computed as", rhs, None
        return label or "the expression", "is computed as", expr, None
    if node.type == NodeType.MACRO_NODE:
        key = node.attrs.get("community", node_id)
        size = node.attrs.get("size", 0)
        summary = node.text or f"a community of {size} nodes"
        return f"community {key}", "summarizes", summary, None
    raise DanglingNode(
        f"node {node_id!r} of type {node.type.value} has no statement form"
    )


def evidence_record(
    g: TypedGraph,
    node_id: str,
    score: float,
    route: Route,
    hop: Optional[int] = None,
) -> EvidenceRecord:
    node = g.nodes[node_id]
    prov = node.attrs.get("prov")
    if prov is None and node.type == NodeType.MACRO_NODE:
        prov = _macro_representative(g, node_id)
    if prov is None:
        raise DanglingNode(f"node {node_id!r} carries no provenance")
    subject, relation, obj, condition = _statement_fields(g, node_id)
    if node.type == NodeType.MACRO_NODE:
        clause = str(node.attrs.get("community", node_id))
    else:
        clause = prov["clause_id"]
    return EvidenceRecord(
        clause=clause,
        subject=subject,
        relation=relation,
        object=obj,
        condition=condition,
        provenance=dict(prov),
        node_id=node_id,
        node_type=node.type.value,
        score=float(score),
        route=route.value,
        hop=hop,
    )


def verbalize(
    g: TypedGraph,
    node_ids: Sequence[str],
    route: Route = Route.LOW,
    scores: Optional[Sequence[float]] = None,
    hops: Optional[Sequence[Optional[int]]] = None,
) -> list[EvidenceRecord]:
    """Evidence records for a retrieved node list, in the order given."""
    out = []
    for i, nid in enumerate(node_ids):
        score = scores[i] if scores is not None else 0.0
        hop = hops[i] if hops is not None else None
        out.append(evidence_record(g, nid, score, route, hop))
    return out


# --- router -----------------------------------------------------------------

FEATURE_NAMES = ("query_length", "entity_count", "has_symbolic", "hit_entropy")


def rule_route(features: Sequence[float]) -> Route:
    """Deterministic fallback: symbols or several entities mean structure,
    vague long queries with scattered hits mean summaries, the rest is flat."""
    query_length, entity_count, has_symbolic, hit_entropy = features
    if has_symbolic >= 1.0 or entity_count >= 2:
        return Route.MED
    if entity_count == 0 and query_length >= 12 and hit_entropy >= 2.5:
        return Route.HIGH
    return Route.LOW


@dataclass
class RouterConfig:
    hidden: int = 16
    epochs: int = 300
    lr: float = 0.1
    seed: int = 0


class RouterModel:
    """Seeded one-hidden-layer classifier over standardized features."""

    def __init__(self, config: Optional[RouterConfig] = None):
        self.config = config or RouterConfig()
        self.mean: Optional[np.ndarray] = None
        self.std: Optional[np.ndarray] = None
        self.w1 = self.b1 = self.w2 = self.b2 = None

    def train(self, features: np.ndarray, labels: Sequence[int]) -> list[float]:
        x = np.asarray(features, dtype=np.float64)
        y = np.asarray(labels, dtype=np.int64)
        present = set(int(v) for v in y)
        if present != {0, 1, 2}:
            missing = sorted({0, 1, 2} - present)
            raise ClassMissingError(
                f"training data must include every route, missing classes {missing}"
            )
        cfg = self.config
        self.mean = x.mean(axis=0)
        self.std = x.std(axis=0)
        self.std[self.std == 0] = 1.0
        z = (x - self.mean) / self.std
        rng = np.random.default_rng(cfg.seed)
        n_in, n_hidden, n_out = x.shape[1], cfg.hidden, 3
        self.w1 = rng.normal(0, 1.0 / math.sqrt(n_in), (n_in, n_hidden))
        self.b1 = np.zeros(n_hidden)
        self.w2 = rng.normal(0, 1.0 / math.sqrt(n_hidden), (n_hidden, n_out))
        self.b2 = np.zeros(n_out)
        onehot = np.eye(n_out)[y]
        history = []
        for _ in range(cfg.epochs):
            hidden = np.tanh(z @ self.w1 + self.b1)
            logits = hidden @ self.w2 + self.b2
            logits -= logits.max(axis=1, keepdims=True)
            exp = np.exp(logits)
            probs = exp / exp.sum(axis=1, keepdims=True)
            loss = float(-np.mean(np.log(probs[np.arange(len(y)), y] + 1e-15)))
            history.append(loss)
            grad_logits = (probs - onehot) / len(y)
            grad_w2 = hidden.T @ grad_logits
            grad_b2 = grad_logits.sum(axis=0)
            grad_hidden = (grad_logits @ self.w2.T) * (1 - hidden**2)
            grad_w1 = z.T @ grad_hidden
            grad_b1 = grad_hidden.sum(axis=0)
            self.w2 -= cfg.lr * grad_w2
            self.b2 -= cfg.lr * grad_b2
            self.w1 -= cfg.lr * grad_w1
            self.b1 -= cfg.lr * grad_b1
        return history

    def predict_proba(self, features: Sequence[float]) -> np.ndarray:
        if self.w1 is None:
            raise ClassMissingError("router model is untrained")
        z = (np.asarray(features, dtype=np.float64) - self.mean) / self.std
        hidden = np.tanh(z @ self.w1 + self.b1)
        logits = hidden @ self.w2 + self.b2
        logits -= logits.max()
        exp = np.exp(logits)
        return exp / exp.sum()

    def predict(self, features: Sequence[float]) -> Route:
        index = int(np.argmax(self.predict_proba(features)))
        return (Route.LOW, Route.MED, Route.HIGH)[index]

    def to_json(self) -> dict:
        if self.w1 is None:
            raise ClassMissingError("router model is untrained")
        return {
            "config": {
                "hidden": self.config.hidden,
                "epochs": self.config.epochs,
                "lr": self.config.lr,
                "seed": self.config.seed,
            },
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RouterModel":
        cfg = doc.get("config", {})
        model = cls(
            RouterConfig(
                hidden=int(cfg.get("hidden", 16)),
                epochs=int(cfg.get("epochs", 300)),
                lr=float(cfg.get("lr", 0.1)),
                seed=int(cfg.get("seed", 0)),
            )
        )
        for name in ("mean", "std", "w1", "b1", "w2", "b2"):
            setattr(model, name, np.asarray(doc[name], dtype=np.float64))
        return model


def train_router(
    features: np.ndarray,
    labels: Sequence[int],
    config: Optional[RouterConfig] = None,
) -> tuple[RouterModel, float]:
    """Train a fresh router and report its training accuracy."""
    model = RouterModel(config)
    model.train(features, labels)
    routes = (Route.LOW, Route.MED, Route.HIGH)
    hits = sum(
        1
        for row, label in zip(np.asarray(features, dtype=np.float64), labels)
        if model.predict(row) == routes[int(label)]
    )
    return model, hits / len(labels)


# --- engine -----------------------------------------------------------------

@dataclass
class AnswerResult:
    question: str
    route: str
    features: list[float]
    records: list[EvidenceRecord]
    prompt: str
    answer: str
    latency_ms: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "question": self.question,
            "route": self.route,
            "features": {
                name: round(float(v), 9)
                for name, v in zip(FEATURE_NAMES, self.features)
            },
            "answer": self.answer,
            "evidence": [r.to_json() for r in self.records],
            "latency_ms": {
                name: round(float(v), 3) for name, v in self.latency_ms.items()
            },
        }


PROMPT_HEADER = "Answer the question using only the numbered evidence."
PROMPT_FOOTER = "Answer with citations to the evidence numbers."


def build_prompt(question: str, records: Sequence[EvidenceRecord]) -> str:
    lines = [PROMPT_HEADER, "", f"Question: {question}", "", "Evidence:"]
    for i, record in enumerate(records, start=1):
        guard = f", given {record.condition}" if record.condition else ""
        lines.append(
            f"[{i}] {record.statement}{guard} "
            f"(clause {record.clause}, {record.doc_id} p.{record.page})"
        )
    if not records:
        lines.append("(none)")
    lines += ["", PROMPT_FOOTER]
    return "\n".join(lines)


def index_vectors(
    g: TypedGraph,
    w_text: Optional[np.ndarray] = None,
    w_topo: Optional[np.ndarray] = None,
) -> tuple[list[str], np.ndarray]:
    """Fused embeddings for every indexable node, rows sorted by node id."""
    indexed = set(INDEXED_TYPES)
    ids = []
    rows = []
    for nid in sorted(g.nodes):
        node = g.nodes[nid]
        if node.type not in indexed:
            continue
        ids.append(nid)
        rows.append(
            fused_embedding(
                embed_text(retrieval_text(g, nid)),
                topo_feature(g, nid),
                w_text,
                w_topo,
            )
        )
    matrix = np.vstack(rows) if rows else np.zeros((0, 0), dtype=np.float64)
    return ids, matrix


class QueryEngine:
    """Vector index plus router plus retrieval over one compiled graph."""

    def __init__(
        self,
        g: TypedGraph,
        config: Optional[RetrievalConfig] = None,
        router: Optional[RouterModel] = None,
        w_text: Optional[np.ndarray] = None,
        w_topo: Optional[np.ndarray] = None,
        vectors: Optional[tuple[Sequence[str], np.ndarray]] = None,
    ):
        self.g = g
        self.config = config or RetrievalConfig()
        self.router = router
        self.w_text = w_text
        self.w_topo = w_topo
        self._ids: list[str] = []
        self._types: list[NodeType] = []
        self._matrix: Optional[np.ndarray] = None
        self._gazetteer: dict[str, str] = {}
        self._build(vectors)

    def _build(self, vectors: Optional[tuple[Sequence[str], np.ndarray]]) -> None:
        if vectors is not None:
            ids, matrix = list(vectors[0]), np.asarray(vectors[1], dtype=np.float64)
            expected = [
                nid
                for nid in sorted(self.g.nodes)
                if self.g.nodes[nid].type in set(INDEXED_TYPES)
            ]
            if ids != expected:
                raise SchemaError(
                    "/vectors/ids",
                    "precomputed vectors do not cover the graph's indexable nodes",
                )
        else:
            ids, matrix = index_vectors(self.g, self.w_text, self.w_topo)
        self._ids = ids
        self._types = [self.g.nodes[nid].type for nid in ids]
        self._matrix = matrix if matrix.size else None
        for node in self.g.nodes_of_type(NodeType.TERM):
            surfaces = set(node.attrs.get("surfaces", [])) | {node.text}
            for surface in surfaces:
                if surface.strip():
                    self._gazetteer.setdefault(surface, node.id)

    def embed_query(self, text: str) -> np.ndarray:
        return fused_embedding(
            embed_text(text), np.zeros(TOPO_DIM), self.w_text, self.w_topo
        )

    def search(
        self,
        text: str,
        k: int,
        types: Optional[Sequence[NodeType]] = None,
    ) -> list[tuple[str, float]]:
        """Top-k nodes by fused cosine, ties broken by node id."""
        allowed = set(types) if types is not None else None
        mask = [
            allowed is None or t in allowed for t in self._types
        ]
        if self._matrix is None or not any(mask):
            raise EmptyIndex(
                "vector index holds no nodes"
                + (f" of types {sorted(t.value for t in allowed)}" if allowed else "")
            )
        query = self.embed_query(text)
        scores = self._matrix @ query
        ranked = sorted(
            (
                (self._ids[i], float(scores[i]))
                for i in range(len(self._ids))
                if mask[i]
            ),
            key=lambda pair: (-pair[1], pair[0]),
        )
        return ranked[: max(k, 0)]

    def similarity(self, text: str, node_id: str) -> float:
        index = self._ids.index(node_id)
        return float(self._matrix[index] @ self.embed_query(text))

    # -- features and routing --

    def hit_entropy(self, text: str) -> float:
        """Entropy in bits of the softmax over the strongest hit scores.

        An empty index reads as maximally uncertain.
        """
        try:
            hits = self.search(text, HIT_ENTROPY_TOP)
        except EmptyIndex:
            return math.log2(HIT_ENTROPY_TOP)
        scores = np.array([s for _, s in hits], dtype=np.float64)
        exp = np.exp(scores - scores.max())
        return float(shannon(exp / exp.sum()))

    def _gazetteer_hits(self, text: str) -> tuple[set[str], set[str]]:
        """(term node ids, matched surfaces) for mentions in the text."""
        nodes: set[str] = set()
        surfaces: set[str] = set()
        for surface in sorted(self._gazetteer, key=lambda s: (-len(s), s)):
            if re.search(rf"\b{re.escape(surface)}\b", text, re.IGNORECASE):
                nodes.add(self._gazetteer[surface])
                surfaces.add(surface)
        return nodes, surfaces

    def entity_matches(self, text: str) -> list[str]:
        """Distinct term nodes mentioned in the text, in node id order."""
        nodes, _ = self._gazetteer_hits(text)
        return sorted(nodes)

    def entity_count(self, text: str) -> int:
        """Known-term mentions plus all-caps tokens the gazetteer missed."""
        nodes, surfaces = self._gazetteer_hits(text)
        known = {s.lower() for s in surfaces}
        acronyms = {
            token
            for token in ACRONYM_PATTERN.findall(text)
            if token.lower() not in known
        }
        return len(nodes) + len(acronyms)

    def features(self, text: str) -> list[float]:
        return [
            float(count_tokens(text)),
            float(self.entity_count(text)),
            1.0 if SYMBOLIC_PATTERN.search(text) else 0.0,
            self.hit_entropy(text),
        ]

    def route(self, text: str) -> tuple[Route, list[float]]:
        features = self.features(text)
        if self.router is not None and self.router.w1 is not None:
            return self.router.predict(features), features
        return rule_route(features), features

    # -- retrieval --

    def retrieve(
        self, text: str, route: Optional[Route] = None
    ) -> tuple[Route, list[float], list[EvidenceRecord]]:
        if route is not None:
            chosen, features = route, self.features(text)
        else:
            chosen, features = self.route(text)
        if self.config.log_misroute:
            order = (Route.LOW, Route.MED, Route.HIGH)
            delta = abs(order.index(chosen) - order.index(rule_route(features)))
            if delta:
                logger.info("route distance from rule fallback: %d", delta)
        if chosen == Route.LOW:
            records = self._retrieve_low(text)
        elif chosen == Route.MED:
            records = self._retrieve_med(text)
        else:
            records = self._retrieve_high(text)
        return chosen, features, records

    def _retrieve_low(self, text: str) -> list[EvidenceRecord]:
        hits = self.search(
            text, self.config.budget, types=(NodeType.PARAGRAPH, NodeType.CELL)
        )
        return [
            evidence_record(self.g, nid, score, Route.LOW) for nid, score in hits
        ]

    def _anchors(self, text: str) -> list[str]:
        anchors = self.entity_matches(text)[: self.config.max_anchors]
        if len(anchors) < self.config.max_anchors:
            try:
                hits = self.search(text, self.config.anchor_hits)
            except EmptyIndex:
                hits = []
            for nid, _ in hits:
                if nid not in anchors:
                    anchors.append(nid)
                if len(anchors) >= self.config.max_anchors:
                    break
        return anchors

    def _retrieve_med(self, text: str) -> list[EvidenceRecord]:
        anchors = self._anchors(text)
        if not anchors:
            return []
        subgraph = khop_expand(
            self.g, set(anchors), self.config.khop, set(EXPAND_RELATIONS)
        )
        query = self.embed_query(text)
        id_index = {nid: i for i, nid in enumerate(self._ids)}
        verbalizable = set(VERBALIZABLE_TYPES)
        candidates = []
        for nid in subgraph.nodes:
            node = self.g.nodes[nid]
            if node.type not in verbalizable:
                continue
            if node.type == NodeType.OPERATOR and "expr" not in node.attrs:
                continue
            if nid in id_index:
                score = float(self._matrix[id_index[nid]] @ query)
            else:
                score = float(
                    fused_embedding(
                        embed_text(retrieval_text(self.g, nid)),
                        topo_feature(self.g, nid),
                        self.w_text,
                        self.w_topo,
                    )
                    @ query
                )
            candidates.append((nid, score, subgraph.hops[nid]))
        candidates.sort(key=lambda c: (-c[1], c[2], c[0]))
        return [
            evidence_record(self.g, nid, score, Route.MED, hop)
            for nid, score, hop in candidates[: self.config.budget]
        ]

    def _retrieve_high(self, text: str) -> list[EvidenceRecord]:
        macros = self.g.nodes_of_type(NodeType.MACRO_NODE)
        if not macros:
            raise NoMacroNodes(
                "summary retrieval requires materialized community summaries"
            )
        try:
            hits = self.search(
                text, self.config.macro_limit, types=(NodeType.MACRO_NODE,)
            )
        except EmptyIndex:
            # macros exist in the graph but were added after the index build
            raise NoMacroNodes(
                "community summaries are not in the vector index; rebuild the engine"
            )
        return [
            evidence_record(self.g, nid, score, Route.HIGH) for nid, score in hits
        ]

    # -- relational lookup --

    def lookup(
        self,
        row_path: Sequence[str] = (),
        col_path: Sequence[str] = (),
        predicates: Sequence[str] = (),
    ) -> list[CellHit]:
        return lookup_cell(self.g, row_path, col_path, predicates)

    # -- answering --

    def answer(
        self, text: str, client: LlmClient, route: Optional[Route] = None
    ) -> AnswerResult:
        t0 = time.perf_counter()
        self.embed_query(text)
        t1 = time.perf_counter()
        chosen, features, records = self.retrieve(text, route=route)
        t2 = time.perf_counter()
        prompt = build_prompt(text, records)
        reply = client.generate(prompt)
        t3 = time.perf_counter()
        return AnswerResult(
            question=text,
            route=chosen.value,
            features=features,
            records=records,
            prompt=prompt,
            answer=reply,
            latency_ms={
                "alignment_ms": (t1 - t0) * 1000.0,
                "retrieval_ms": (t2 - t1) * 1000.0,
                "generation_ms": (t3 - t2) * 1000.0,
            },
        )
