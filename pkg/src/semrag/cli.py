"""Command-line interface: index, query, stats, export, benchmarks.

Exit codes are part of the contract: 0 success, 1 user error (bad input
files, bad bundle, nothing to index, a route that the bundle cannot
serve), 2 internal processing failure, 3 upstream service failure
(embedding or generation endpoints). Indexing takes a corpus directory
of intermediate-JSON documents; every other command takes a bundle
directory produced by `semrag index`.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import statistics
import sys
import time
from pathlib import Path
from typing import Optional

import click

from .cost_model import expected_retrieval_cost, scaling_curve
from .doc_model import canonical_json_bytes, load_document
from .errors import (
    ChecksumError,
    EmptyGraph,
    EmptyIndex,
    FormatVersionError,
    GeneratorError,
    HeaderAmbiguityError,
    HttpError,
    NoMacroNodes,
    NotFound,
    OrderError,
    ParseError,
    SchemaError,
    SemragError,
    SpanError,
    SummarizerError,
    UnsupportedConstructError,
)
from .graph_core import NodeType, save_graph
from .pipeline import Bundle, PipelineConfig, build_bundle, load_bundle, make_engine
from .query_engine import Route
from .sem_index import base_projection, h1, h2

logger = logging.getLogger(__name__)

EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2
EXIT_UPSTREAM_ERROR = 3

_USER_ERRORS = (
    SchemaError,
    SpanError,
    OrderError,
    HeaderAmbiguityError,
    UnsupportedConstructError,
    ParseError,
    EmptyGraph,
    NotFound,
    EmptyIndex,
    NoMacroNodes,
    FormatVersionError,
    ChecksumError,
    OSError,
    json.JSONDecodeError,
)
_UPSTREAM_ERRORS = (HttpError, GeneratorError, SummarizerError, TimeoutError)


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _UPSTREAM_ERRORS as exc:
            _fail(str(exc), EXIT_UPSTREAM_ERROR)
        except _USER_ERRORS as exc:
            _fail(str(exc), EXIT_USER_ERROR)
        except SemragError as exc:
            _fail(str(exc), EXIT_INTERNAL_ERROR)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
def cli():
    """Structure-preserving retrieval over standards documents."""


def _read_corpus(corpus_dir: Path) -> tuple[list, list[str]]:
    """Load every intermediate-JSON document in a directory, sorted by name.

    A gazetteer.json file (a JSON array of strings) rides along as the
    entity gazetteer; it is not itself a document.
    """
    docs = []
    gazetteer: list[str] = []
    for path in sorted(corpus_dir.glob("*.json")):
        if path.name == "gazetteer.json":
            gazetteer = [
                str(term)
                for term in json.loads(path.read_text("utf-8"))
                if str(term).strip()
            ]
            continue
        docs.append(load_document(path.read_bytes()))
    return docs, gazetteer


@cli.command("index")
@click.argument("corpus_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option(
    "--gazetteer",
    "gazetteer_path",
    type=click.Path(exists=True, dir_okay=False),
    help="entity list, one term per line (overrides corpus gazetteer.json)",
)
@click.option("--k", default=5, show_default=True, help="evidence budget per query")
@click.option("--ts", default=500, show_default=True, help="summary token budget")
@click.option("--khop", default=3, show_default=True, help="expansion hop bound")
@click.option("--offline/--online", default=True, show_default=True)
@click.option("--align/--no-align", default=False, show_default=True)
@click.option("--seed", default=0, show_default=True)
@_guard
def cmd_index(
    corpus_dir, out_dir, gazetteer_path, k, ts, khop, offline, align, seed
):
    """Compile a corpus directory into an indexed bundle directory.

    Holds a lock file in the output directory while writing; a failed run
    removes the partial output rather than leaving an unloadable bundle.
    """
    docs, gazetteer = _read_corpus(Path(corpus_dir))
    if not docs:
        _fail("no documents found", EXIT_USER_ERROR)
    if gazetteer_path:
        gazetteer = [
            line.strip()
            for line in Path(gazetteer_path).read_text("utf-8").splitlines()
            if line.strip()
        ]
    config = PipelineConfig(
        budget=k,
        summary_budget_tokens=ts,
        khop=khop,
        offline=offline,
        align=align,
        seed=seed,
    )
    out = Path(out_dir)
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(str(lock), os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        _fail(
            f"output directory {out} is locked by another indexing run",
            EXIT_USER_ERROR,
        )
    with os.fdopen(fd, "w") as handle:
        handle.write(str(os.getpid()))
    try:
        bundle = build_bundle(docs, gazetteer, out, config=config)
    except BaseException:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        else:
            lock.unlink(missing_ok=True)
        raise
    lock.unlink(missing_ok=True)
    click.echo(
        f"bundle written to {bundle.path}: "
        f"{len(bundle.graph.nodes)} nodes, {len(bundle.graph.edges)} edges, "
        f"{len(bundle.index.communities)} communities"
    )


def _load(bundle_dir: str) -> Bundle:
    return load_bundle(bundle_dir)


@cli.command("query")
@click.argument("bundle_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("question", required=False)
@click.option("--row", help="comma-separated row header path")
@click.option("--col", help="comma-separated column header path")
@click.option("--given", help="comma-separated footnote markers taken as satisfied")
@click.option(
    "--route",
    "route_name",
    type=click.Choice(["low", "med", "high"]),
    help="bypass the router and force this retrieval route",
)
@click.option("--json", "as_json", is_flag=True, help="print canonical JSON")
@click.option("--k", default=None, type=int, help="override evidence budget")
@_guard
def cmd_query(bundle_dir, question, row, col, given, route_name, as_json, k):
    """Answer a question, or look up a table cell by header paths."""
    bundle = _load(bundle_dir)
    if k is not None:
        bundle.config.budget = k
    engine = make_engine(bundle)
    if row or col:
        hits = engine.lookup(
            tuple(part for part in (row or "").split(",") if part),
            tuple(part for part in (col or "").split(",") if part),
            tuple(part for part in (given or "").split(",") if part),
        )
        if as_json:
            payload = [
                {
                    "node_id": h.node_id,
                    "value": h.value,
                    "unit": h.unit,
                    "condition": h.condition,
                    "prov": h.prov,
                }
                for h in hits
            ]
            click.echo(canonical_json_bytes(payload).decode("utf-8"))
        else:
            for h in hits:
                condition = f" [when: {h.condition}]" if h.condition else ""
                unit = f" {h.unit}" if h.unit else ""
                click.echo(
                    f"{h.value}{unit}{condition} "
                    f"(clause {h.prov.get('clause_id')}, {h.prov.get('doc_id')})"
                )
        return
    if not question:
        raise click.UsageError("provide a question or --row/--col header paths")
    route = Route(route_name) if route_name else None
    result = engine.answer(question, bundle.clients.llm, route=route)
    if as_json:
        click.echo(canonical_json_bytes(result.to_json()).decode("utf-8"))
    else:
        click.echo(f"route: {result.route}")
        for i, record in enumerate(result.records, start=1):
            guard = f" [given: {record.condition}]" if record.condition else ""
            click.echo(
                f"[{i}] {record.statement}{guard} "
                f"(clause {record.clause}, {record.doc_id} p.{record.page})"
            )
        click.echo(f"answer: {result.answer}")


@cli.command("stats")
@click.argument("bundle_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--json", "as_json", is_flag=True)
@_guard
def cmd_stats(bundle_dir, as_json):
    """Entropy, community, and merge-trace statistics for a bundle."""
    bundle = _load(bundle_dir)
    base = base_projection(bundle.graph)
    node_counts: dict[str, int] = {}
    for node in bundle.graph.nodes.values():
        node_counts[node.type.value] = node_counts.get(node.type.value, 0) + 1
    edge_counts: dict[str, int] = {}
    for edge in bundle.graph.edges.values():
        edge_counts[edge.rel.value] = edge_counts.get(edge.rel.value, 0) + 1
    flat = h1(base)
    partitioned = h2(base, bundle.index.partition)
    histogram: dict[int, int] = {}
    for members in bundle.index.communities.values():
        histogram[len(members)] = histogram.get(len(members), 0) + 1
    trace = [m.delta for m in bundle.index.dendrogram]
    payload = {
        "nodes": len(bundle.graph.nodes),
        "edges": len(bundle.graph.edges),
        "node_types": dict(sorted(node_counts.items())),
        "relations": dict(sorted(edge_counts.items())),
        "flat_entropy_bits": round(flat, 9),
        "partition_entropy_bits": round(partitioned, 9),
        "communities": len(bundle.index.communities),
        "levels": len(bundle.index.levels),
        "community_size_histogram": {
            str(size): count for size, count in sorted(histogram.items())
        },
        "merge_deltas": [round(d, 9) for d in trace],
    }
    if as_json:
        click.echo(canonical_json_bytes(payload).decode("utf-8"))
        return
    click.echo(f"nodes: {payload['nodes']}")
    click.echo(f"edges: {payload['edges']}")
    for name, count in payload["node_types"].items():
        click.echo(f"  node type {name}: {count}")
    for name, count in payload["relations"].items():
        click.echo(f"  relation {name}: {count}")
    click.echo(f"flat entropy: {flat:.6f} bits")
    click.echo(f"partition entropy: {partitioned:.6f} bits")
    click.echo(f"communities: {payload['communities']}")
    click.echo(f"levels: {payload['levels']}")
    sizes = " ".join(
        f"{size}x{count}" for size, count in sorted(histogram.items())
    )
    click.echo(f"community sizes: {sizes or '(none)'}")
    shown = [f"{d:+.4f}" for d in trace[:10]]
    suffix = f" ... ({len(trace)} merges)" if len(trace) > 10 else ""
    click.echo(f"merge deltas: {' '.join(shown) or '(none)'}{suffix}")


@cli.command("export-graph")
@click.argument("bundle_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_guard
def cmd_export_graph(bundle_dir, out_dir):
    """Dump a bundle's graph as nodes and edges JSONL with a manifest."""
    bundle = _load(bundle_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_graph(bundle.graph, out)
    click.echo(
        f"graph exported to {out}: "
        f"{len(bundle.graph.nodes)} nodes, {len(bundle.graph.edges)} edges"
    )


@cli.command("bench-indexing")
@click.option(
    "--sizes",
    required=True,
    help="comma-separated corpus sizes in nodes, e.g. 1000,5000,10000",
)
@click.option("--k", default=5, show_default=True, help="summaries kept in context")
@click.option("--ts", default=500, show_default=True, help="summary token budget")
@click.option(
    "--prompt-tokens", default=500, show_default=True, help="baseline tokens per node"
)
@click.option("--community-size", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option(
    "--out",
    "out_path",
    default="-",
    show_default=True,
    help="CSV output path, - for stdout",
)
@_guard
def cmd_bench_indexing(sizes, k, ts, prompt_tokens, community_size, seed, out_path):
    """Summary-context cost against flat per-node cost across corpus sizes."""
    try:
        parsed = [int(part) for part in sizes.split(",") if part.strip()]
    except ValueError:
        raise click.UsageError(f"--sizes must be comma-separated integers: {sizes!r}")
    if not parsed:
        raise click.UsageError("--sizes lists no corpus sizes")
    rows = scaling_curve(
        parsed,
        k=k,
        summary_tokens=ts,
        prompt_tokens=prompt_tokens,
        community_size=community_size,
        seed=seed,
    )
    lines = ["size,sem_tokens,baseline_tokens,build_ms"]
    for row in rows:
        lines.append(
            f"{row['size']},{row['sem_tokens']},"
            f"{row['baseline_tokens']},{row['build_ms']:.3f}"
        )
    text = "\n".join(lines) + "\n"
    if out_path == "-":
        click.echo(text, nl=False)
    else:
        Path(out_path).write_text(text, encoding="utf-8")
        click.echo(f"scaling curve written to {out_path} ({len(rows)} rows)")


@cli.command("bench")
@click.argument("bundle_dir", type=click.Path(exists=True, file_okay=False))
@click.option(
    "--queries",
    "queries_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="file with one question per line",
)
@click.option("--repeat", default=3, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@_guard
def cmd_bench(bundle_dir, queries_path, repeat, as_json):
    """Measure retrieval latency and the expected cost of the route mix."""
    bundle = _load(bundle_dir)
    engine = make_engine(bundle)
    questions = [
        line.strip()
        for line in Path(queries_path).read_text("utf-8").splitlines()
        if line.strip()
    ]
    if not questions:
        raise NotFound("the queries file holds no questions")
    latencies = []
    route_counts = {"low": 0, "med": 0, "high": 0}
    for _ in range(repeat):
        for question in questions:
            start = time.perf_counter()
            route, _, records = engine.retrieve(question)
            latencies.append((time.perf_counter() - start) * 1000.0)
            route_counts[route.value] += 1
    total = sum(route_counts.values())
    mix = [route_counts[r] / total for r in ("low", "med", "high")]
    base = base_projection(bundle.graph)
    mean_degree = (
        2.0 * len(base.edges) / len(base.nodes) if base.nodes else 0.0
    )
    macros = len(bundle.graph.nodes_of_type(NodeType.MACRO_NODE))
    cost = expected_retrieval_cost(
        mix,
        max(len(base.nodes), 1),
        engine.config.max_anchors,
        max(mean_degree, 1.0),
        engine.config.khop,
        macros,
    )
    latencies.sort()
    p50 = statistics.median(latencies)
    p95 = latencies[min(len(latencies) - 1, int(0.95 * len(latencies)))]
    payload = {
        "queries": len(questions),
        "repeat": repeat,
        "p50_ms": round(p50, 3),
        "p95_ms": round(p95, 3),
        "route_mix": {"low": mix[0], "med": mix[1], "high": mix[2]},
        "expected_cost": round(cost, 6),
        "ledger_tokens": bundle.clients.ledger.total_tokens(),
    }
    if as_json:
        click.echo(canonical_json_bytes(payload).decode("utf-8"))
        return
    click.echo(
        f"{payload['queries']} queries x{repeat}: "
        f"p50 {payload['p50_ms']} ms, p95 {payload['p95_ms']} ms"
    )
    click.echo(
        f"route mix low/med/high: {mix[0]:.2f}/{mix[1]:.2f}/{mix[2]:.2f}, "
        f"expected cost {cost:.3f}"
    )


def main():
    try:
        cli(standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_USER_ERROR)
    except click.Abort:
        sys.exit(EXIT_USER_ERROR)


if __name__ == "__main__":
    main()
