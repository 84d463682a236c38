"""End-to-end orchestration: documents in, queryable bundle out.

compile_corpus runs every compiler over every document and merges the
fragments; build_bundle adds the entropy index, community summaries, and a
checksummed on-disk bundle whose manifest is byte-identical across offline
runs (no timestamps, sorted keys). load_bundle verifies and rebuilds; and
make_engine wires the graph to the retrieval engine with optional trained
view alignment.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

from .doc_model import (
    EquationBlock,
    SourceDocument,
    TableBlock,
    canonical_json_bytes,
    validate_corpus,
)
from .errors import ChecksumError, FormatVersionError
from .formula_compiler import Var, compile_formula, link_symbol_definitions
from .graph_core import RelationType, TypedGraph, load_graph, merge_units, save_graph
from .layout_compiler import compile_table, compile_text
from .llm_clients import Clients, make_clients, summarize_with
from .query_engine import QueryEngine, RetrievalConfig, RouterModel, index_vectors
from .sem_index import (
    EPSILON,
    Merge,
    MinimizeResult,
    SNAPSHOT_FRACTION,
    materialize_macronodes,
    sem_minimize,
)
from .vector_align import (
    AlignConfig,
    AlignResult,
    align_views,
    embed_text,
    load_alignment,
    load_vectors,
    save_alignment,
    save_vectors,
    topo_feature,
)

logger = logging.getLogger(__name__)

BUNDLE_FORMAT_VERSION = 1


@dataclass
class PipelineConfig:
    budget: int = 5
    summary_budget_tokens: int = 500
    khop: int = 3
    offline: bool = True
    seed: int = 0
    align: bool = False
    epsilon: float = EPSILON
    snapshot_fraction: float = SNAPSHOT_FRACTION

    def to_json(self) -> dict:
        return asdict(self)


def compile_corpus(
    docs: Sequence[SourceDocument], gazetteer: Sequence[str] = ()
) -> TypedGraph:
    """All compilers over all documents, merged into one graph."""
    report = validate_corpus(list(docs))
    if not report.ok:
        logger.warning(
            "corpus validation found issues: duplicates=%s dangling=%s empty=%s",
            report.duplicate_ids,
            report.dangling_markers,
            report.empty_clauses,
        )
    fragments = []
    for doc in docs:
        fragments.append(compile_text(doc, gazetteer).fragment)
        for block in doc.ordered_blocks():
            if isinstance(block, TableBlock):
                fragments.append(compile_table(doc.id, block).fragment)
            elif isinstance(block, EquationBlock):
                sub = compile_formula(doc.id, block)
                symbols = [Var(name) for name in sorted(sub.variables)]
                pairs, diags = link_symbol_definitions(symbols, doc, block)
                for symbol, para_block_id in pairs:
                    sub.fragment.add_edge(
                        sub.variables[symbol],
                        RelationType.DEFINES,
                        f"{doc.id}:{para_block_id}",
                    )
                for line in diags:
                    logger.debug("symbol linking: %s", line)
                fragments.append(sub.fragment)
    return merge_units(fragments)


# --- bundle persistence -----------------------------------------------------

def _index_to_json(result: MinimizeResult) -> dict:
    return {
        "partition": result.partition,
        "levels": result.levels,
        "dendrogram": [[m.a, m.b, m.merged, m.delta] for m in result.dendrogram],
        "h1": result.h1,
        "h2": result.h2,
        "epsilon": result.epsilon,
    }


def _index_from_json(obj: dict) -> MinimizeResult:
    communities: dict[str, list[str]] = {}
    for nid, key in obj["partition"].items():
        communities.setdefault(key, []).append(nid)
    for key in communities:
        communities[key].sort()
    return MinimizeResult(
        partition=dict(obj["partition"]),
        communities=communities,
        dendrogram=[Merge(a, b, m, d) for a, b, m, d in obj["dendrogram"]],
        levels=[dict(level) for level in obj["levels"]],
        h1=obj["h1"],
        h2=obj["h2"],
        epsilon=obj["epsilon"],
    )


@dataclass
class Bundle:
    path: Path
    graph: TypedGraph
    index: MinimizeResult
    config: PipelineConfig
    clients: Optional[Clients] = None
    vectors: Optional[tuple] = None
    alignment: Optional[AlignResult] = None
    router: Optional[RouterModel] = None


def build_bundle(
    docs: Sequence[SourceDocument],
    gazetteer: Sequence[str],
    out_dir: str | Path,
    config: Optional[PipelineConfig] = None,
    clients: Optional[Clients] = None,
    router: Optional[RouterModel] = None,
) -> Bundle:
    """Compile, index, summarize, and persist one corpus.

    The bundle directory holds the graph (nodes and edges plus their own
    manifest), the hierarchy index with its dendrogram, the vector index
    sidecar, the optional alignment and router models, and a manifest
    with configuration, counts, and content checksums. Wall-clock data
    goes to a separate ledger file outside the checksummed set, so two
    offline runs over the same input produce byte-identical manifests.
    """
    cfg = config or PipelineConfig()
    clients = clients or make_clients(offline=cfg.offline)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    graph = compile_corpus(docs, gazetteer)
    index = sem_minimize(
        graph, epsilon=cfg.epsilon, snapshot_fraction=cfg.snapshot_fraction
    )
    materialize_macronodes(
        graph,
        index,
        lambda text, budget: _summary_tuple(clients, text, budget),
        budget_tokens=cfg.summary_budget_tokens,
    )
    save_graph(graph, out)
    index_bytes = canonical_json_bytes(_index_to_json(index)) + b"\n"
    (out / "index.json").write_bytes(index_bytes)
    gaz_bytes = canonical_json_bytes(sorted(set(gazetteer))) + b"\n"
    (out / "gazetteer.json").write_bytes(gaz_bytes)
    alignment = None
    w_text = w_topo = None
    if cfg.align:
        alignment = train_alignment(graph, seed=cfg.seed)
        save_alignment(out / "align.json", alignment)
        w_text, w_topo = alignment.w_text, alignment.w_topo
    ids, matrix = index_vectors(graph, w_text, w_topo)
    save_vectors(out, ids, matrix)
    if router is not None:
        (out / "router.json").write_bytes(
            canonical_json_bytes(router.to_json()) + b"\n"
        )
    members = [
        "nodes.jsonl",
        "edges.jsonl",
        "index.json",
        "gazetteer.json",
        "vectors.json",
        "vectors.bin",
    ]
    if alignment is not None:
        members.append("align.json")
    if router is not None:
        members.append("router.json")
    checksums = {
        name: hashlib.sha256((out / name).read_bytes()).hexdigest()
        for name in members
    }
    manifest = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "config": cfg.to_json(),
        "counts": {
            "documents": len(docs),
            "nodes": len(graph.nodes),
            "edges": len(graph.edges),
            "communities": len(index.communities),
            "levels": len(index.levels),
        },
        "checksums": checksums,
    }
    (out / "manifest.json").write_bytes(canonical_json_bytes(manifest) + b"\n")
    clients.ledger.to_csv(out / "token_ledger.csv")
    return Bundle(
        path=out,
        graph=graph,
        index=index,
        config=cfg,
        clients=clients,
        vectors=(ids, matrix),
        alignment=alignment,
        router=router,
    )


def _summary_tuple(clients: Clients, text: str, budget: int) -> tuple[str, int]:
    summary = summarize_with(clients.llm, text, budget)
    return summary.text, summary.tokens_used


def load_bundle(path: str | Path, clients: Optional[Clients] = None) -> Bundle:
    src = Path(path)
    manifest = json.loads((src / "manifest.json").read_text("utf-8"))
    if manifest.get("format_version") != BUNDLE_FORMAT_VERSION:
        raise FormatVersionError(
            f"unknown bundle format version {manifest.get('format_version')!r}"
        )
    for name, expected in manifest["checksums"].items():
        actual = hashlib.sha256((src / name).read_bytes()).hexdigest()
        if actual != expected:
            raise ChecksumError(f"bundle member {name} does not match its checksum")
    graph = load_graph(src)
    index = _index_from_json(json.loads((src / "index.json").read_text("utf-8")))
    cfg = PipelineConfig(**manifest["config"])
    vectors = None
    if "vectors.json" in manifest["checksums"]:
        vectors = load_vectors(src)
    alignment = None
    if "align.json" in manifest["checksums"]:
        alignment = load_alignment(src / "align.json")
    router = None
    if "router.json" in manifest["checksums"]:
        router = RouterModel.from_json(
            json.loads((src / "router.json").read_text("utf-8"))
        )
    return Bundle(
        path=src,
        graph=graph,
        index=index,
        config=cfg,
        clients=clients or make_clients(offline=cfg.offline),
        vectors=vectors,
        alignment=alignment,
        router=router,
    )


# --- engine assembly --------------------------------------------------------

def make_engine(
    bundle: Bundle,
    router: Optional[RouterModel] = None,
) -> QueryEngine:
    """Retrieval engine over a bundle, honoring its alignment setting.

    Persisted vectors and models are reused; a bundle from before either
    existed falls back to recomputing them from the graph.
    """
    cfg = bundle.config
    retrieval = RetrievalConfig(
        budget=cfg.budget,
        khop=cfg.khop,
        summary_budget_tokens=cfg.summary_budget_tokens,
    )
    alignment = bundle.alignment
    if cfg.align and alignment is None:
        alignment = train_alignment(bundle.graph, seed=cfg.seed)
    w_text = alignment.w_text if alignment is not None else None
    w_topo = alignment.w_topo if alignment is not None else None
    return QueryEngine(
        bundle.graph,
        config=retrieval,
        router=router if router is not None else bundle.router,
        w_text=w_text,
        w_topo=w_topo,
        vectors=bundle.vectors,
    )


def train_alignment(
    graph: TypedGraph, seed: int = 0, sample_limit: int = 256
) -> AlignResult:
    """Fit the view aligner on the graph's own (text, topology) pairs."""
    from .query_engine import INDEXED_TYPES, retrieval_text

    indexed = set(INDEXED_TYPES)
    ids = [
        nid
        for nid in sorted(graph.nodes)
        if graph.nodes[nid].type in indexed and graph.nodes[nid].text
    ][:sample_limit]
    texts = [embed_text(retrieval_text(graph, nid)) for nid in ids]
    topos = [topo_feature(graph, nid) for nid in ids]
    return align_views(texts, topos, AlignConfig(seed=seed))
