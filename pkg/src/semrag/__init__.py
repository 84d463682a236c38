"""Structure-preserving retrieval over standards documents.

The package compiles intermediate document JSON into a typed graph,
indexes the graph by two-level structural entropy minimization, and
answers queries through routed retrieval that returns provenance-backed
evidence records. All model access goes through pluggable clients with
deterministic offline fallbacks, so every result is reproducible without
network access.
"""

from .cost_model import (
    ChunkSet,
    CostReport,
    Span,
    baseline_tokens,
    chunk,
    chunk_text,
    compare_costs,
    de_overlap,
    expected_retrieval_cost,
    flatten_document,
    scaling_curve,
    sem_tokens,
    simulate_baseline_hierarchy,
)
from .doc_model import (
    CellSpec,
    CorpusReport,
    EquationBlock,
    ParagraphBlock,
    Provenance,
    SectionBlock,
    SourceDocument,
    TableBlock,
    canonical_json_bytes,
    expand_grid,
    load_document,
    serialize,
    validate_corpus,
)
from .errors import SemragError
from .formula_compiler import (
    FormulaSubgraph,
    compile_formula,
    eval_math,
    link_symbol_definitions,
    normalize_math,
    parse_math,
    print_math,
)
from .graph_core import (
    Edge,
    GraphFragment,
    Node,
    NodeType,
    RelationType,
    Subgraph,
    TypedGraph,
    khop_expand,
    load_graph,
    merge_units,
    save_graph,
)
from .layout_compiler import (
    CellHit,
    TableSubgraph,
    TextPrimitiveSet,
    compile_table,
    compile_text,
    lookup_cell,
    resolve_header_paths,
)
from .llm_clients import (
    Clients,
    HttpEmbedClient,
    HttpLlmClient,
    OfflineEmbedClient,
    OfflineLlmClient,
    TokenLedger,
    count_tokens,
    make_clients,
    offline_summarize,
)
from .pipeline import (
    Bundle,
    PipelineConfig,
    build_bundle,
    compile_corpus,
    load_bundle,
    make_engine,
    train_alignment,
)
from .query_engine import (
    AnswerResult,
    EvidenceRecord,
    QueryEngine,
    RetrievalConfig,
    Route,
    RouterConfig,
    RouterModel,
    build_prompt,
    evidence_record,
    index_vectors,
    rule_route,
    train_router,
    verbalize,
)
from .sem_index import (
    Merge,
    MinimizeResult,
    delta_h2_merge,
    h1,
    h2,
    materialize_macronodes,
    replay_dendrogram,
    sem_minimize,
    shannon,
)
from .synth import planted_graph, planted_partition, route_dataset, synthetic_corpus
from .vector_align import (
    AlignConfig,
    AlignResult,
    align_views,
    embed_text,
    align_loss_and_grad,
    fused_embedding,
    jsd,
    load_alignment,
    load_vectors,
    save_alignment,
    save_vectors,
    topo_feature,
)

__version__ = "0.1.0"

__all__ = [
    "AlignConfig",
    "AlignResult",
    "AnswerResult",
    "Bundle",
    "CellHit",
    "CellSpec",
    "ChunkSet",
    "Clients",
    "CorpusReport",
    "CostReport",
    "Edge",
    "EquationBlock",
    "EvidenceRecord",
    "FormulaSubgraph",
    "GraphFragment",
    "HttpEmbedClient",
    "HttpLlmClient",
    "Merge",
    "MinimizeResult",
    "Node",
    "NodeType",
    "OfflineEmbedClient",
    "OfflineLlmClient",
    "ParagraphBlock",
    "PipelineConfig",
    "Provenance",
    "QueryEngine",
    "RelationType",
    "RetrievalConfig",
    "Route",
    "RouterConfig",
    "RouterModel",
    "SectionBlock",
    "SemragError",
    "SourceDocument",
    "Span",
    "Subgraph",
    "TableBlock",
    "TableSubgraph",
    "TextPrimitiveSet",
    "TokenLedger",
    "TypedGraph",
    "align_loss_and_grad",
    "align_views",
    "baseline_tokens",
    "build_bundle",
    "build_prompt",
    "canonical_json_bytes",
    "chunk",
    "chunk_text",
    "compare_costs",
    "compile_corpus",
    "compile_formula",
    "compile_table",
    "compile_text",
    "count_tokens",
    "de_overlap",
    "delta_h2_merge",
    "embed_text",
    "eval_math",
    "evidence_record",
    "expand_grid",
    "expected_retrieval_cost",
    "flatten_document",
    "fused_embedding",
    "h1",
    "h2",
    "index_vectors",
    "jsd",
    "khop_expand",
    "link_symbol_definitions",
    "load_alignment",
    "load_bundle",
    "load_document",
    "load_graph",
    "load_vectors",
    "lookup_cell",
    "make_clients",
    "make_engine",
    "materialize_macronodes",
    "merge_units",
    "normalize_math",
    "offline_summarize",
    "parse_math",
    "planted_graph",
    "planted_partition",
    "print_math",
    "replay_dendrogram",
    "resolve_header_paths",
    "route_dataset",
    "rule_route",
    "save_alignment",
    "save_graph",
    "save_vectors",
    "scaling_curve",
    "sem_minimize",
    "sem_tokens",
    "serialize",
    "shannon",
    "simulate_baseline_hierarchy",
    "synthetic_corpus",
    "topo_feature",
    "train_alignment",
    "train_router",
    "validate_corpus",
    "verbalize",
]
