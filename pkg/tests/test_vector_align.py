"""Embeddings, divergence, contrastive alignment, and vector persistence."""

import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_graph
from semrag.errors import (
    ChecksumError,
    DimensionMismatch,
    FormatVersionError,
    NotADistribution,
    SchemaError,
)
from semrag.graph_core import Node, NodeType, TypedGraph
from semrag.vector_align import (
    AlignConfig,
    AlignResult,
    TOPO_DIM,
    align_loss_and_grad,
    align_views,
    embed_text,
    fused_embedding,
    jsd,
    load_alignment,
    load_vectors,
    save_alignment,
    save_vectors,
    softmax,
    tokenize,
    topo_feature,
)

# Frozen oracle value: the divergence of a point mass against the uniform
# coin is (1/2)log2(4/3) + (1/2)(1/2)log2 ... computed independently below.
JSD_POINT_VS_FAIR_COIN = 0.31127812445913283


def simplexes(n):
    return st.lists(
        st.floats(min_value=1e-6, max_value=1.0), min_size=n, max_size=n
    ).map(lambda ps: [p / sum(ps) for p in ps])


# ---------------------------------------------------------------------------
# text embedding


def test_embed_text_is_unit_length_and_deterministic():
    v1 = embed_text("the HARQ process retransmits data")
    v2 = embed_text("the HARQ process retransmits data")
    assert np.array_equal(v1, v2)
    assert np.linalg.norm(v1) == pytest.approx(1.0, abs=1e-12)


def test_embed_text_empty_is_zero_vector():
    assert np.linalg.norm(embed_text("")) == 0.0


def test_embed_text_is_case_insensitive():
    assert np.array_equal(embed_text("HARQ Process"), embed_text("harq process"))


def test_similar_texts_score_higher_than_unrelated():
    a = embed_text("maximum transmit power level")
    b = embed_text("the maximum transmit power value")
    c = embed_text("synchronization raster entries")
    assert float(a @ b) > float(a @ c)


def test_tokenize_splits_on_non_word_characters():
    assert tokenize("HARQ-ACK (see 5.2)") == ["harq", "ack", "see", "5", "2"]


# ---------------------------------------------------------------------------
# topology features


def test_topo_feature_encodes_type_and_degree():
    g = make_graph(3, [(0, 1), (0, 2)])
    v = topo_feature(g, "n0")
    assert v.shape == (TOPO_DIM,)
    assert v[0] == pytest.approx(math.log2(3.0) / 16.0)
    type_block = v[1 : 1 + len(NodeType)]
    assert type_block.sum() == 1.0
    hist = v[1 + len(NodeType) :]
    assert hist.sum() == pytest.approx(1.0)


def test_topo_feature_isolated_node_has_empty_histogram():
    g = TypedGraph()
    g.add_node(Node("solo", NodeType.TERM, "alone"))
    v = topo_feature(g, "solo")
    assert v[0] == 0.0
    assert v[1 + len(NodeType) :].sum() == 0.0


def test_topo_feature_histogram_tracks_neighbor_types():
    g = TypedGraph()
    g.add_node(Node("p", NodeType.PARAGRAPH, "para"))
    g.add_node(Node("t1", NodeType.TERM, "one"))
    g.add_node(Node("t2", NodeType.TERM, "two"))
    from semrag.graph_core import Edge, RelationType, edge_id

    for t in ("t1", "t2"):
        g.add_edge(
            Edge(edge_id("p", RelationType.REFERS_TO, t), "p", t, RelationType.REFERS_TO)
        )
    v = topo_feature(g, "p")
    hist = v[1 + len(NodeType) :]
    term_index = list(NodeType).index(NodeType.TERM)
    assert hist[term_index] == 1.0


# ---------------------------------------------------------------------------
# divergence


def test_jsd_frozen_fixture():
    assert jsd([1.0, 0.0], [0.5, 0.5]) == pytest.approx(JSD_POINT_VS_FAIR_COIN, abs=1e-12)


def test_jsd_rejects_non_distributions():
    with pytest.raises(NotADistribution):
        jsd([0.5, 0.6], [0.5, 0.5])
    with pytest.raises(NotADistribution):
        jsd([-0.1, 1.1], [0.5, 0.5])
    with pytest.raises(DimensionMismatch):
        jsd([1.0], [0.5, 0.5])


@given(simplexes(5), simplexes(5))
def test_jsd_symmetric_and_bounded(p, q):
    forward = jsd(p, q)
    backward = jsd(q, p)
    assert forward == pytest.approx(backward, abs=1e-9)
    assert -1e-12 <= forward <= 1.0 + 1e-12


@given(simplexes(4))
def test_jsd_zero_iff_equal(p):
    assert jsd(p, p) == pytest.approx(0.0, abs=1e-12)
    q = list(p)
    q[0], q[1] = q[1], q[0]
    if abs(q[0] - q[1]) > 1e-6:
        assert jsd(p, q) > 0.0


def test_jsd_maximal_for_disjoint_support():
    assert jsd([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-12)


def test_softmax_is_a_distribution_and_shift_invariant():
    a = np.array([1.0, 2.0, 3.0])
    p = softmax(a)
    assert p.sum() == pytest.approx(1.0)
    assert np.allclose(softmax(a + 100.0), p)
    sharp = softmax(a, tau=0.1)
    assert sharp[2] > p[2]


# ---------------------------------------------------------------------------
# alignment loss and gradients


def _random_views(rng, n, d_text=12, d_topo=9):
    texts = [rng.normal(size=d_text) for _ in range(n)]
    topos = [rng.normal(size=d_topo) for _ in range(n)]
    return texts, topos


def _random_weights(rng, d_text=12, d_topo=9, k=6):
    return rng.normal(size=(d_text, k)) * 0.3, rng.normal(size=(d_topo, k)) * 0.3


def test_align_loss_rejects_mismatched_batches():
    rng = np.random.default_rng(0)
    texts, topos = _random_views(rng, 4)
    w_text, w_topo = _random_weights(rng)
    with pytest.raises(DimensionMismatch):
        align_loss_and_grad(texts, topos[:3], w_text, w_topo)
    with pytest.raises(DimensionMismatch):
        align_loss_and_grad([], [], w_text, w_topo)


def test_align_loss_is_zero_for_identical_projections():
    # One pair, both views projecting to the same logits: divergence zero
    # and no negative partner exists.
    rng = np.random.default_rng(1)
    x = rng.normal(size=5)
    w = rng.normal(size=(5, 4))
    loss, gt, gs = align_loss_and_grad([x], [x], w, w)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(gt, -gs)


@pytest.mark.parametrize("seed", range(10))
def test_align_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed + 10)
    texts, topos = _random_views(rng, 3)
    w_text, w_topo = _random_weights(rng)
    loss, grad_text, grad_topo = align_loss_and_grad(texts, topos, w_text, w_topo)
    eps = 1e-6
    for w, grad in ((w_text, grad_text), (w_topo, grad_topo)):
        for _ in range(4):
            i = rng.integers(w.shape[0])
            j = rng.integers(w.shape[1])
            w[i, j] += eps
            up, _, _ = align_loss_and_grad(texts, topos, w_text, w_topo)
            w[i, j] -= 2 * eps
            down, _, _ = align_loss_and_grad(texts, topos, w_text, w_topo)
            w[i, j] += eps
            numeric = (up - down) / (2 * eps)
            scale = max(abs(numeric), abs(grad[i, j]), 1e-8)
            assert abs(numeric - grad[i, j]) / scale < 1e-4


def test_align_views_is_deterministic_and_improves():
    rng = np.random.default_rng(3)
    texts, topos = _random_views(rng, 8)
    cfg = AlignConfig(projection_dim=6, epochs=40, seed=5)
    first = align_views(texts, topos, cfg)
    second = align_views(texts, topos, cfg)
    assert np.array_equal(first.w_text, second.w_text)
    assert first.loss_history == second.loss_history
    assert first.loss_history[-1] < first.loss_history[0]


def test_mean_pair_jsd_drops_after_training():
    rng = np.random.default_rng(4)
    texts, topos = _random_views(rng, 8)
    cfg = AlignConfig(projection_dim=6, epochs=60, seed=5)
    result = align_views(texts, topos, cfg)
    untrained = AlignResult(
        w_text=np.random.default_rng(5).normal(size=result.w_text.shape) * 0.2,
        w_topo=np.random.default_rng(6).normal(size=result.w_topo.shape) * 0.2,
    )
    ts, ys = np.array(texts), np.array(topos)
    assert result.mean_pair_jsd(ts, ys) < untrained.mean_pair_jsd(ts, ys)


# ---------------------------------------------------------------------------
# fusion


def test_fused_embedding_is_unit_and_separates_views():
    text = np.array([3.0, 4.0])
    topo = np.array([0.0, 5.0, 0.0])
    v = fused_embedding(text, topo)
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert v.shape == (5,)
    # each half is the per-view unit vector scaled by 1/sqrt(2)
    assert v[:2] == pytest.approx(np.array([0.6, 0.8]) / math.sqrt(2.0))


def test_fused_embedding_zero_view_leaves_other_half_intact():
    text = np.array([1.0, 0.0])
    v = fused_embedding(text, np.zeros(3))
    assert v[0] == pytest.approx(1.0)
    assert np.all(v[2:] == 0.0)


def test_fused_embedding_applies_projections():
    rng = np.random.default_rng(7)
    w_text = rng.normal(size=(4, 3))
    w_topo = rng.normal(size=(5, 3))
    text, topo = rng.normal(size=4), rng.normal(size=5)
    v = fused_embedding(text, topo, w_text, w_topo)
    assert v.shape == (6,)
    assert np.linalg.norm(v) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# persistence


def _matrix(rng, n=6, d=10):
    return rng.normal(size=(n, d)).astype(np.float64)


def test_vectors_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    ids = [f"node{i}" for i in range(6)]
    matrix = _matrix(rng)
    save_vectors(tmp_path, ids, matrix)
    back_ids, back = load_vectors(tmp_path)
    assert back_ids == ids
    assert np.array_equal(back, matrix)


def test_vectors_bytes_are_stable(tmp_path):
    rng = np.random.default_rng(12)
    ids = ["a", "b"]
    matrix = _matrix(rng, n=2, d=4)
    save_vectors(tmp_path / "x", ids, matrix)
    save_vectors(tmp_path / "y", ids, matrix)
    assert (tmp_path / "x" / "vectors.bin").read_bytes() == (
        tmp_path / "y" / "vectors.bin"
    ).read_bytes()
    assert (tmp_path / "x" / "vectors.json").read_bytes() == (
        tmp_path / "y" / "vectors.json"
    ).read_bytes()


def test_vectors_detect_payload_tampering(tmp_path):
    rng = np.random.default_rng(13)
    save_vectors(tmp_path, ["a", "b"], _matrix(rng, n=2, d=4))
    blob = bytearray((tmp_path / "vectors.bin").read_bytes())
    blob[3] ^= 0xFF
    (tmp_path / "vectors.bin").write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        load_vectors(tmp_path)


def test_vectors_reject_unknown_format_version(tmp_path):
    rng = np.random.default_rng(14)
    save_vectors(tmp_path, ["a"], _matrix(rng, n=1, d=4))
    meta_path = tmp_path / "vectors.json"
    meta = json.loads(meta_path.read_text("utf-8"))
    meta["format_version"] = 99
    meta_path.write_text(json.dumps(meta), "utf-8")
    with pytest.raises(FormatVersionError):
        load_vectors(tmp_path)


def test_vectors_reject_id_count_mismatch(tmp_path):
    rng = np.random.default_rng(15)
    save_vectors(tmp_path, ["a", "b"], _matrix(rng, n=2, d=4))
    meta_path = tmp_path / "vectors.json"
    meta = json.loads(meta_path.read_text("utf-8"))
    meta["ids"] = ["a"]
    meta_path.write_text(json.dumps(meta), "utf-8")
    with pytest.raises(SchemaError):
        load_vectors(tmp_path)


def test_alignment_round_trip(tmp_path):
    rng = np.random.default_rng(16)
    texts, topos = _random_views(rng, 5)
    result = align_views(texts, topos, AlignConfig(projection_dim=4, epochs=10))
    save_alignment(tmp_path / "align.json", result)
    back = load_alignment(tmp_path / "align.json")
    assert np.array_equal(back.w_text, result.w_text)
    assert np.array_equal(back.w_topo, result.w_topo)
    assert back.loss_history == pytest.approx(result.loss_history)
