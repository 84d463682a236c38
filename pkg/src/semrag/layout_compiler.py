"""Compile text and table blocks into typed graph fragments.

compile_text walks a document in reading order and emits Section, Paragraph,
and Term nodes with Contains, RefersTo, and Defines edges, resolving textual
cross-references (clause numbers, table captions, equation labels) against
the document's own structure. compile_table turns one table into header,
cell, and predicate nodes whose bind edges make cell lookup a set
intersection over header paths.

Every node carries its block's provenance under attrs["prov"]. Each Cell
node additionally carries a Src self-loop edge holding the same payload, so
evidence extraction can read provenance without leaving the graph.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .doc_model import (
    EquationBlock,
    ParagraphBlock,
    Provenance,
    SectionBlock,
    SourceDocument,
    TableBlock,
    expand_grid,
)
from .errors import HeaderAmbiguityError, NotFound
from .graph_core import (
    GraphFragment,
    Node,
    NodeType,
    RelationType,
    TypedGraph,
    normalize_term,
)

logger = logging.getLogger(__name__)

HeaderPath = tuple[str, ...]

# fraction of non-numeric cells a row/column prefix needs to count as header
HEADER_TEXT_FRACTION = 0.8

_CLAUSE_REF = re.compile(r"\bclause\s+(\d+(?:\.\d+){0,2})\b", re.IGNORECASE)
_SECTION_REF = re.compile(r"§\s*(\d+(?:\.\d+){0,2})")
_TABLE_REF = re.compile(r"\bTable\s+(\d+[A-Za-z]?(?:[.-]\d+)*)\b")
_EQ_REF = re.compile(r"\b(?:Eq\.|Equation)\s*\((\d+)\)")


@dataclass
class TextPrimitiveSet:
    """Sections, paragraphs, and terms of one document plus diagnostics."""

    doc_id: str
    fragment: GraphFragment
    term_ids: dict[str, str] = field(default_factory=dict)  # normalized key -> node id
    diagnostics: list[str] = field(default_factory=list)


@dataclass
class TableSubgraph:
    """Header, cell, and predicate nodes compiled from one table block."""

    doc_id: str
    block_id: str
    fragment: GraphFragment
    row_paths: list[HeaderPath]
    col_paths: list[HeaderPath]
    cell_ids: list[str] = field(default_factory=list)


def _prov_attrs(prov: Provenance) -> dict:
    return {"prov": prov.to_json()}


# --- text compilation -------------------------------------------------------

def _definitional(surface: str, text: str) -> bool:
    """True when the paragraph introduces the term rather than just using it."""
    escaped = re.escape(surface)
    if re.match(rf"\s*{escaped}\s+(?:is|are|denotes|means)\b", text, re.IGNORECASE):
        return True
    if re.match(rf"\s*{escaped}\s*:", text, re.IGNORECASE):
        return True
    # expansion pattern: "Long Form (ABBR)" introduces the abbreviation
    if re.search(rf"\w[\w-]*(?:\s+[\w-]+)*\s+\({escaped}\)", text):
        return True
    return False


def _enclosing_section(doc: SourceDocument, block_id: str) -> Optional[SectionBlock]:
    """Nearest section preceding the block in reading order."""
    current: Optional[SectionBlock] = None
    for block in doc.ordered_blocks():
        if isinstance(block, SectionBlock):
            current = block
        if block.id == block_id:
            return current
    return None


def compile_text(doc: SourceDocument, gazetteer: Sequence[str] = ()) -> TextPrimitiveSet:
    """Emit section/paragraph/term nodes and containment/reference edges.

    Cross-references that name a clause, table, or equation absent from the
    document are reported in diagnostics instead of raising; downstream
    consumers decide whether dangling references are fatal.
    """
    frag = GraphFragment()
    out = TextPrimitiveSet(doc_id=doc.id, fragment=frag)

    sections: list[SectionBlock] = []
    section_node: dict[str, str] = {}
    by_clause: dict[str, str] = {}
    for block in doc.ordered_blocks():
        if isinstance(block, SectionBlock):
            node_id = f"{doc.id}:{block.id}"
            attrs = _prov_attrs(block.prov)
            attrs["level"] = block.level
            frag.add_node(Node(node_id, NodeType.SECTION, block.title, attrs))
            section_node[block.id] = node_id
            if block.prov.clause_id:
                by_clause.setdefault(block.prov.clause_id, node_id)
            sections.append(block)

    # nesting edges: each section is contained by the closest shallower one
    stack: list[SectionBlock] = []
    for block in sections:
        while stack and stack[-1].level >= block.level:
            stack.pop()
        if stack:
            frag.add_edge(
                section_node[stack[-1].id],
                RelationType.CONTAINS,
                section_node[block.id],
            )
        stack.append(block)

    # targets for caption/label references
    table_section: dict[str, str] = {}  # caption -> enclosing section node id
    eq_section: dict[str, str] = {}  # label -> enclosing section node id
    for block in doc.ordered_blocks():
        if isinstance(block, (TableBlock, EquationBlock)):
            enclosing = _enclosing_section(doc, block.id)
            if enclosing is None:
                continue
            target = section_node[enclosing.id]
            if isinstance(block, TableBlock):
                table_section[block.caption] = target
            elif block.label:
                eq_section[block.label.strip("()")] = target

    # longest surfaces first so overlapping gazetteer entries match greedily
    vocab = sorted(set(gazetteer), key=lambda s: (-len(s), s))
    patterns = [
        (surface, re.compile(rf"\b{re.escape(surface)}\b", re.IGNORECASE))
        for surface in vocab
        if surface.strip()
    ]

    for block in doc.ordered_blocks():
        if not isinstance(block, ParagraphBlock):
            continue
        para_id = f"{doc.id}:{block.id}"
        frag.add_node(Node(para_id, NodeType.PARAGRAPH, block.text, _prov_attrs(block.prov)))
        frag.add_edge(section_node[block.parent_section], RelationType.CONTAINS, para_id)

        covered: list[tuple[int, int]] = []
        for surface, pattern in patterns:
            for m in pattern.finditer(block.text):
                span = (m.start(), m.end())
                if any(s < span[1] and span[0] < e for s, e in covered):
                    continue  # inside a longer term already matched
                covered.append(span)
                key = normalize_term(surface)
                term_id = out.term_ids.get(key)
                if term_id is None:
                    term_id = f"{doc.id}:term:{key}"
                    frag.add_node(
                        Node(term_id, NodeType.TERM, surface, _prov_attrs(block.prov))
                    )
                    out.term_ids[key] = term_id
                if not any(
                    e.src == para_id and e.dst == term_id and e.rel == RelationType.REFERS_TO
                    for e in frag.edges
                ):
                    frag.add_edge(para_id, RelationType.REFERS_TO, term_id)
                if _definitional(m.group(0), block.text) and not any(
                    e.src == term_id and e.dst == para_id and e.rel == RelationType.DEFINES
                    for e in frag.edges
                ):
                    frag.add_edge(term_id, RelationType.DEFINES, para_id)

        # structural cross-references
        for m in list(_CLAUSE_REF.finditer(block.text)) + list(
            _SECTION_REF.finditer(block.text)
        ):
            target = by_clause.get(m.group(1))
            if target is None:
                out.diagnostics.append(
                    f"{para_id}: unresolved reference to clause {m.group(1)}"
                )
            else:
                frag.add_edge(para_id, RelationType.REFERS_TO, target)
        for m in _TABLE_REF.finditer(block.text):
            hits = [sec for cap, sec in table_section.items() if cap.startswith(m.group(0))]
            if hits:
                frag.add_edge(para_id, RelationType.REFERS_TO, hits[0])
            else:
                out.diagnostics.append(
                    f"{para_id}: unresolved reference to {m.group(0)!r}"
                )
        for m in _EQ_REF.finditer(block.text):
            target = eq_section.get(m.group(1))
            if target is None:
                out.diagnostics.append(
                    f"{para_id}: unresolved reference to equation ({m.group(1)})"
                )
            else:
                frag.add_edge(para_id, RelationType.REFERS_TO, target)
    return out


# --- header detection -------------------------------------------------------

def _is_numeric(text: str) -> bool:
    stripped = text.strip().replace(",", "")
    if not stripped:
        return False
    try:
        float(stripped)
        return True
    except ValueError:
        return False


def _text_fraction(cells: list[str]) -> float:
    filled = [c for c in cells if c.strip()]
    if not filled:
        return 0.0
    return sum(1 for c in filled if not _is_numeric(c)) / len(filled)


def _header_extent(table: TableBlock, grid: list[list[tuple[int, int]]]) -> tuple[int, int]:
    """Number of header rows and header columns (flags first, else heuristic)."""
    n_rows = len(grid)
    n_cols = len(grid[0])

    def spec_at(r: int, c: int):
        ri, ci = grid[r][c]
        return table.rows[ri][ci]

    flagged = any(
        cell.is_header for row in table.rows for cell in row
    )
    if flagged:
        header_rows = 0
        while header_rows < n_rows and all(
            spec_at(header_rows, c).is_header for c in range(n_cols)
        ):
            header_rows += 1
        header_cols = 0
        while header_cols < n_cols and all(
            spec_at(r, header_cols).is_header for r in range(header_rows, n_rows)
        ):
            header_cols += 1
    else:
        header_rows = 0
        while header_rows < n_rows and (
            _text_fraction([spec_at(header_rows, c).text for c in range(n_cols)])
            >= HEADER_TEXT_FRACTION
        ):
            header_rows += 1
        header_cols = 0
        while header_cols < n_cols and (
            _text_fraction(
                [spec_at(r, header_cols).text for r in range(header_rows, n_rows)]
            )
            >= HEADER_TEXT_FRACTION
        ):
            header_cols += 1

    if header_rows == 0 and header_cols == 0:
        raise HeaderAmbiguityError(
            f"table {table.id!r}: no header rows or header columns detected"
        )
    if header_rows >= n_rows or header_cols >= n_cols:
        raise HeaderAmbiguityError(
            f"table {table.id!r}: detected headers leave no data cells"
        )
    return header_rows, header_cols


def _collapse(path: list[str]) -> HeaderPath:
    out: list[str] = []
    for segment in path:
        segment = segment.strip()
        if not segment:
            continue
        if not out or out[-1] != segment:
            out.append(segment)
    return tuple(out)


def resolve_header_paths(table: TableBlock) -> tuple[list[HeaderPath], list[HeaderPath]]:
    """Header path per data row and per data column, spans expanded.

    A spanning header cell contributes its text to every row or column it
    covers; consecutive duplicate segments inside one path collapse so a
    vertical span does not repeat itself. Tables without header columns get
    an empty row-path list (the row side is then unconstrained in lookups).
    """
    grid = expand_grid(table)
    header_rows, header_cols = _header_extent(table, grid)
    n_rows = len(grid)
    n_cols = len(grid[0])

    def text_at(r: int, c: int) -> str:
        ri, ci = grid[r][c]
        return table.rows[ri][ci].text

    row_paths = []
    if header_cols > 0:
        for r in range(header_rows, n_rows):
            row_paths.append(_collapse([text_at(r, c) for c in range(header_cols)]))
    col_paths = []
    if header_rows > 0:
        for c in range(header_cols, n_cols):
            col_paths.append(_collapse([text_at(r, c) for r in range(header_rows)]))
    return row_paths, col_paths


# --- table compilation ------------------------------------------------------

def _strip_markers(text: str, markers: Sequence[str]) -> str:
    for marker in markers:
        text = text.replace(f"[{marker}]", "")
    return text.strip()


def compile_table(doc_id: str, table: TableBlock) -> TableSubgraph:
    """One table block to header/cell/predicate nodes and bind edges.

    Node counts are fully determined: one RowHeader per distinct row path,
    one ColHeader per distinct column path, one Cell per non-empty data
    cell, and one Predicate per footnote referenced by at least one cell.
    Each Cell carries a Src self-loop with the table's provenance.
    """
    frag = GraphFragment()
    grid = expand_grid(table)
    header_rows, header_cols = _header_extent(table, grid)
    row_paths, col_paths = resolve_header_paths(table)
    out = TableSubgraph(
        doc_id=doc_id,
        block_id=table.id,
        fragment=frag,
        row_paths=row_paths,
        col_paths=col_paths,
    )
    base = f"{doc_id}:{table.id}"
    prov = table.prov

    row_header_id: dict[HeaderPath, str] = {}
    for path in row_paths:
        if path and path not in row_header_id:
            node_id = f"{base}:r{len(row_header_id)}"
            attrs = _prov_attrs(prov)
            attrs["path"] = list(path)
            frag.add_node(Node(node_id, NodeType.ROW_HEADER, " | ".join(path), attrs))
            row_header_id[path] = node_id
    col_header_id: dict[HeaderPath, str] = {}
    for path in col_paths:
        if path and path not in col_header_id:
            node_id = f"{base}:c{len(col_header_id)}"
            attrs = _prov_attrs(prov)
            attrs["path"] = list(path)
            frag.add_node(Node(node_id, NodeType.COL_HEADER, " | ".join(path), attrs))
            col_header_id[path] = node_id

    footnote_text = dict(table.footnotes)
    predicate_id: dict[str, str] = {}
    pending_activations: list[tuple[str, str]] = []  # (marker, cell id)

    n_rows = len(grid)
    n_cols = len(grid[0])
    emitted: set[tuple[int, int]] = set()
    for r in range(header_rows, n_rows):
        for c in range(header_cols, n_cols):
            owner = grid[r][c]
            if owner in emitted:
                continue  # spanned continuation of a cell already emitted
            emitted.add(owner)
            spec = table.rows[owner[0]][owner[1]]
            value = _strip_markers(spec.text, spec.footnote_markers)
            if not value:
                continue
            dr, dc = r - header_rows, c - header_cols
            cell_id = f"{base}:cell{dr}_{dc}"
            row_path = row_paths[dr] if row_paths else ()
            col_path = col_paths[dc] if col_paths else ()
            attrs = _prov_attrs(prov)
            attrs.update(
                {
                    "value": value,
                    "unit": spec.unit,
                    "row_path": list(row_path),
                    "col_path": list(col_path),
                    "markers": list(spec.footnote_markers),
                }
            )
            if prov.release_tag is not None:
                attrs["release_tag"] = prov.release_tag
            frag.add_node(Node(cell_id, NodeType.CELL, value, attrs))
            out.cell_ids.append(cell_id)
            frag.add_edge(cell_id, RelationType.SRC, cell_id, _prov_attrs(prov))
            if row_path in row_header_id:
                frag.add_edge(cell_id, RelationType.ROW_BIND, row_header_id[row_path])
            if col_path in col_header_id:
                frag.add_edge(cell_id, RelationType.COL_BIND, col_header_id[col_path])
            for marker in spec.footnote_markers:
                if marker in footnote_text:
                    pending_activations.append((marker, cell_id))

    for marker, _ in pending_activations:
        if marker not in predicate_id:
            index = [m for m, _ in table.footnotes].index(marker)
            node_id = f"{base}:p{index}"
            attrs = _prov_attrs(prov)
            attrs["marker"] = marker
            frag.add_node(
                Node(node_id, NodeType.PREDICATE, footnote_text[marker], attrs)
            )
            predicate_id[marker] = node_id
    for marker, cell_id in pending_activations:
        frag.add_edge(predicate_id[marker], RelationType.ACTIVATES, cell_id)
    return out


# --- cell lookup ------------------------------------------------------------

@dataclass
class CellHit:
    """One table cell matched by header paths, with its guard if any."""

    node_id: str
    value: str
    unit: Optional[str]
    condition: Optional[str]
    prov: dict


def _cells_bound_to(g: TypedGraph, header_ids: list[str], rel: RelationType) -> set[str]:
    cells: set[str] = set()
    for hid in header_ids:
        for eid in g.in_edges[hid]:
            edge = g.edges[eid]
            if edge.rel == rel:
                cells.add(edge.src)
    return cells


def lookup_cell(
    g: TypedGraph,
    row_path: Sequence[str] = (),
    col_path: Sequence[str] = (),
    predicates: Sequence[str] = (),
) -> list[CellHit]:
    """Cells whose row and column header paths match; empty side matches all.

    `predicates` lists footnote markers the caller asserts are satisfied;
    any remaining guard on a hit is surfaced as its condition text. Hits are
    ordered by source position (doc, page, bbox). Raises NotFound when no
    cell matches.
    """
    row_path = tuple(s.strip() for s in row_path)
    col_path = tuple(s.strip() for s in col_path)

    def matching(node_type: NodeType, path: HeaderPath) -> list[str]:
        return [
            n.id
            for n in g.nodes_of_type(node_type)
            if tuple(n.attrs.get("path", ())) == path
        ]

    candidates: Optional[set[str]] = None
    if row_path:
        headers = matching(NodeType.ROW_HEADER, row_path)
        candidates = _cells_bound_to(g, headers, RelationType.ROW_BIND)
    if col_path:
        headers = matching(NodeType.COL_HEADER, col_path)
        bound = _cells_bound_to(g, headers, RelationType.COL_BIND)
        candidates = bound if candidates is None else candidates & bound
    if candidates is None:
        candidates = {n.id for n in g.nodes_of_type(NodeType.CELL)}
    if not candidates:
        raise NotFound(
            f"no cell matches row path {list(row_path)} and column path {list(col_path)}"
        )

    satisfied = set(predicates)
    hits = []
    for cell_id in candidates:
        node = g.nodes[cell_id]
        guards = []
        for eid in g.in_edges[cell_id]:
            edge = g.edges[eid]
            if edge.rel == RelationType.ACTIVATES:
                pred = g.nodes[edge.src]
                if pred.attrs.get("marker") not in satisfied:
                    guards.append((pred.attrs.get("marker", ""), pred.text))
        condition = "; ".join(text for _, text in sorted(guards)) or None
        hits.append(
            CellHit(
                node_id=cell_id,
                value=node.attrs.get("value", node.text),
                unit=node.attrs.get("unit"),
                condition=condition,
                prov=node.attrs.get("prov", {}),
            )
        )
    hits.sort(
        key=lambda h: (
            h.prov.get("doc_id", ""),
            h.prov.get("page", 0),
            tuple(h.prov.get("bbox", ())),
            h.node_id,
        )
    )
    return hits
