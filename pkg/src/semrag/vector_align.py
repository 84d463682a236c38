"""Text and topology views of nodes, and the divergence-based aligner.

Text is embedded with signed feature hashing (sha256-derived buckets, so
vectors are identical across processes and platforms). Topology features
capture degree and the type neighborhood. The aligner projects both views
to a shared simplex via temperature softmax and trains the projections so
matched pairs have low Jensen-Shannon divergence while mismatched pairs
are pushed out to a margin.

Fused embeddings normalize each view before concatenation; a query that
supplies only text therefore ranks nodes purely by text cosine, and the
topology view refines ranking only between equally matched texts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from pathlib import Path
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ChecksumError,
    DimensionMismatch,
    DivergenceError,
    FormatVersionError,
    NotADistribution,
    SchemaError,
)
from .graph_core import NodeType, TypedGraph

logger = logging.getLogger(__name__)

EMBED_DIM = 256
TOPO_DIM = 1 + len(NodeType) + len(NodeType)

_TOKEN = re.compile(r"\w+")
_LN2 = math.log(2.0)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def embed_text(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    """Signed bag-of-words hash embedding, unit length (zero text stays zero)."""
    vec = np.zeros(dim, dtype=np.float64)
    for token in tokenize(text):
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:4], "big") % dim
        sign = 1.0 if digest[4] & 1 else -1.0
        vec[bucket] += sign
    return _unit(vec)


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    return vec / norm if norm > 0 else vec


_TYPE_INDEX = {t: i for i, t in enumerate(NodeType)}


def topo_feature(g: TypedGraph, node_id: str) -> np.ndarray:
    """Log-scaled degree, node-type one-hot, and neighbor-type histogram.

    Every component depends only on the node's own neighborhood, so one
    call costs O(degree) and indexing a graph stays linear in its edges.
    """
    n_types = len(NodeType)
    out = np.zeros(TOPO_DIM, dtype=np.float64)
    out[0] = math.log2(1.0 + g.degree(node_id)) / 16.0
    out[1 + _TYPE_INDEX[g.nodes[node_id].type]] = 1.0
    neighbor_types = []
    for edge in g.incident_edges(node_id):
        other = edge.dst if edge.src == node_id else edge.src
        neighbor_types.append(g.nodes[other].type)
    if neighbor_types:
        histogram = np.zeros(n_types, dtype=np.float64)
        for t in neighbor_types:
            histogram[_TYPE_INDEX[t]] += 1.0
        out[1 + n_types :] = histogram / len(neighbor_types)
    return out


# --- divergence -------------------------------------------------------------

def _check_distribution(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise NotADistribution(f"{name} contains non-finite values")
    if np.any(p < 0):
        raise NotADistribution(f"{name} contains negative probabilities")
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise NotADistribution(f"{name} sums to {float(p.sum())}, expected 1")
    return p


def _jsd_nat(p: np.ndarray, q: np.ndarray) -> float:
    m = 0.5 * (p + q)
    left = float(np.sum(p[p > 0] * np.log(p[p > 0] / m[p > 0])))
    right = float(np.sum(q[q > 0] * np.log(q[q > 0] / m[q > 0])))
    return 0.5 * (left + right)


def jsd(p: Sequence[float], q: Sequence[float]) -> float:
    """Jensen-Shannon divergence in bits; symmetric, bounded by 1."""
    p = _check_distribution(np.asarray(p), "p")
    q = _check_distribution(np.asarray(q), "q")
    if p.shape != q.shape:
        raise DimensionMismatch(f"shapes {p.shape} and {q.shape} differ")
    value = _jsd_nat(p, q) / _LN2
    if not math.isfinite(value):
        raise DivergenceError(f"divergence evaluated to {value}")
    return value


def softmax(a: np.ndarray, tau: float = 1.0) -> np.ndarray:
    z = np.asarray(a, dtype=np.float64) / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


# --- alignment --------------------------------------------------------------

@dataclass
class AlignConfig:
    projection_dim: int = 64
    tau: float = 1.0
    margin: float = 0.5
    lr: float = 0.05
    epochs: int = 200
    seed: int = 0


@dataclass
class AlignResult:
    """Trained projections and the per-epoch mean loss in bits."""

    w_text: np.ndarray
    w_topo: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    def mean_pair_jsd(
        self, texts: np.ndarray, topos: np.ndarray, tau: float = 1.0
    ) -> float:
        values = [
            _jsd_nat(
                softmax(self.w_text.T @ x, tau), softmax(self.w_topo.T @ y, tau)
            )
            / _LN2
            for x, y in zip(texts, topos)
        ]
        return float(np.mean(values))


def _jsd_grad(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the natural-log divergence with respect to p and q."""
    m = 0.5 * (p + q)
    return 0.5 * np.log(p / m), 0.5 * np.log(q / m)


def _softmax_back(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    return p * (grad_p - float(grad_p @ p))


def align_loss_and_grad(
    text_vecs: Sequence[np.ndarray],
    topo_vecs: Sequence[np.ndarray],
    w_text: np.ndarray,
    w_topo: np.ndarray,
    tau: float = 1.0,
    margin: float = 0.5,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean contrastive loss (natural-log units) and its exact gradients.

    Pair i is positive; its negative partner is the next pair's topology
    view, cyclically. The loss per pair is the divergence of the matched
    views plus a hinge pushing the mismatched divergence up to the margin.
    """
    xs = [np.asarray(v, dtype=np.float64) for v in text_vecs]
    ys = [np.asarray(v, dtype=np.float64) for v in topo_vecs]
    if not xs or len(xs) != len(ys):
        raise DimensionMismatch(
            f"need equally many text and topology views, got {len(xs)} and {len(ys)}"
        )
    n = len(xs)
    grad_text = np.zeros_like(w_text)
    grad_topo = np.zeros_like(w_topo)
    total = 0.0
    for i in range(n):
        x, y = xs[i], ys[i]
        p = softmax(w_text.T @ x, tau)
        q = softmax(w_topo.T @ y, tau)
        total += _jsd_nat(p, q)
        gp, gq = _jsd_grad(p, q)
        grad_text += np.outer(x, _softmax_back(p, gp)) / tau
        grad_topo += np.outer(y, _softmax_back(q, gq)) / tau
        if n > 1:
            y_neg = ys[(i + 1) % n]
            q_neg = softmax(w_topo.T @ y_neg, tau)
            d_neg = _jsd_nat(p, q_neg)
            if d_neg < margin:
                total += margin - d_neg
                gp2, gq2 = _jsd_grad(p, q_neg)
                grad_text -= np.outer(x, _softmax_back(p, gp2)) / tau
                grad_topo -= np.outer(y_neg, _softmax_back(q_neg, gq2)) / tau
    return total / n, grad_text / n, grad_topo / n


def align_views(
    text_vecs: Sequence[np.ndarray],
    topo_vecs: Sequence[np.ndarray],
    config: Optional[AlignConfig] = None,
) -> AlignResult:
    """Train both projections by full-batch gradient descent.

    Seeded and fully deterministic; the recorded loss history is in bits.
    """
    cfg = config or AlignConfig()
    xs = [np.asarray(v, dtype=np.float64) for v in text_vecs]
    ys = [np.asarray(v, dtype=np.float64) for v in topo_vecs]
    if not xs or len(xs) != len(ys):
        raise DimensionMismatch(
            f"need equally many text and topology views, got {len(xs)} and {len(ys)}"
        )
    dim_text, dim_topo = xs[0].shape[0], ys[0].shape[0]
    rng = np.random.default_rng(cfg.seed)
    w_text = rng.normal(0.0, 1.0 / math.sqrt(dim_text), (dim_text, cfg.projection_dim))
    w_topo = rng.normal(0.0, 1.0 / math.sqrt(dim_topo), (dim_topo, cfg.projection_dim))
    result = AlignResult(w_text=w_text, w_topo=w_topo)
    for _ in range(cfg.epochs):
        loss, grad_text, grad_topo = align_loss_and_grad(
            xs, ys, w_text, w_topo, cfg.tau, cfg.margin
        )
        w_text -= cfg.lr * grad_text
        w_topo -= cfg.lr * grad_topo
        result.loss_history.append(loss / _LN2)
    return result


def fused_embedding(
    text_vec: np.ndarray,
    topo_vec: np.ndarray,
    w_text: Optional[np.ndarray] = None,
    w_topo: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Concatenate per-view-normalized embeddings, then normalize the whole.

    A missing view is passed as zeros and stays zero through normalization,
    so a text-only query scores nodes by text cosine alone.
    """
    t = text_vec if w_text is None else w_text.T @ np.asarray(text_vec)
    s = topo_vec if w_topo is None else w_topo.T @ np.asarray(topo_vec)
    return _unit(np.concatenate([_unit(np.asarray(t, dtype=np.float64)),
                                 _unit(np.asarray(s, dtype=np.float64))]))


VECTORS_FORMAT_VERSION = 1


def save_vectors(dir_path, ids: Sequence[str], matrix: np.ndarray) -> None:
    """Write a vector index as vectors.bin plus a vectors.json manifest.

    The binary file holds the matrix row-major as little-endian float64;
    the manifest records the dimension, the row order (node ids), and a
    sha256 checksum of the binary payload so a torn write fails closed.
    """
    out = Path(dir_path)
    mat = np.ascontiguousarray(np.asarray(matrix, dtype="<f8"))
    if mat.ndim != 2 or mat.shape[0] != len(ids):
        raise DimensionMismatch(
            f"matrix of shape {mat.shape} does not match {len(ids)} ids"
        )
    payload = mat.tobytes(order="C")
    (out / "vectors.bin").write_bytes(payload)
    manifest = {
        "format_version": VECTORS_FORMAT_VERSION,
        "dtype": "<f8",
        "count": int(mat.shape[0]),
        "dim": int(mat.shape[1]),
        "ids": list(ids),
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    (out / "vectors.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_vectors(dir_path) -> tuple[list[str], np.ndarray]:
    """Load a vector index written by save_vectors, verifying the checksum."""
    src = Path(dir_path)
    manifest = json.loads((src / "vectors.json").read_text(encoding="utf-8"))
    if manifest.get("format_version") != VECTORS_FORMAT_VERSION:
        raise FormatVersionError(
            f"unsupported vector index version {manifest.get('format_version')!r}"
        )
    payload = (src / "vectors.bin").read_bytes()
    digest = hashlib.sha256(payload).hexdigest()
    if digest != manifest.get("checksum"):
        raise ChecksumError("vectors.bin does not match its recorded checksum")
    count, dim = int(manifest["count"]), int(manifest["dim"])
    ids = list(manifest["ids"])
    if len(ids) != count:
        raise SchemaError(f"vector manifest lists {len(ids)} ids for count {count}")
    expected = count * dim * 8
    if len(payload) != expected:
        raise SchemaError(
            f"vectors.bin holds {len(payload)} bytes, expected {expected}"
        )
    matrix = np.frombuffer(payload, dtype="<f8").reshape(count, dim).copy()
    return ids, matrix


def save_alignment(path, result: AlignResult) -> None:
    """Persist trained projections as JSON (row-major nested lists)."""
    doc = {
        "format_version": VECTORS_FORMAT_VERSION,
        "w_text": result.w_text.tolist(),
        "w_topo": result.w_topo.tolist(),
        "loss_history": [float(v) for v in result.loss_history],
    }
    Path(path).write_text(
        json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_alignment(path) -> AlignResult:
    """Load projections written by save_alignment."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != VECTORS_FORMAT_VERSION:
        raise FormatVersionError(
            f"unsupported alignment model version {doc.get('format_version')!r}"
        )
    return AlignResult(
        w_text=np.asarray(doc["w_text"], dtype=np.float64),
        w_topo=np.asarray(doc["w_topo"], dtype=np.float64),
        loss_history=[float(v) for v in doc.get("loss_history", [])],
    )
