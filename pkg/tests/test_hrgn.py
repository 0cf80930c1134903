import math

import numpy as np
import pytest
import torch

from strokenet.graphs import attach_stroke_nodes, build_local_graph
from strokenet.hrgn import (
    ATTR_DIMS,
    GEOM_DIM,
    Hrgn,
    agg_stroke_level,
    agg_text_level,
    gat_attention,
    gated_fuse,
    geometric_embedding,
    linkage_predict,
    loss_linkage,
    proposal_geometry,
    rroi_align,
    stroke_graph_update,
    stroke_soft_mask,
)
from strokenet.proposals import Proposal
from strokenet.sapn import FeatureMap

@pytest.fixture(autouse=True, scope="module")
def _double_precision():
    # attention row sums are asserted at 1e-9; run the module on float64
    # without leaking the default into other test modules
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


def make_prop(x, y, **kw):
    base = dict(h1=4.0, h2=4.0, sin=0.0, cos=1.0, width=8.0)
    base.update(kw)
    return Proposal(center=(x, y), **base)


def test_geometric_embedding_zero():
    emb = geometric_embedding(0, 0, 0, 0, 0)
    assert emb.shape == (GEOM_DIM,)
    assert np.allclose(emb[0::2], 0.0)
    assert np.allclose(emb[1::2], 1.0)


def test_geometric_embedding_separability():
    a = geometric_embedding(10, 5, 8, 20, 0.3)
    b = geometric_embedding(25, 5, 8, 20, 0.3)
    x_dim = ATTR_DIMS[0]
    assert not np.allclose(a[:x_dim], b[:x_dim])
    assert np.array_equal(a[x_dim:], b[x_dim:])


def test_geometric_embedding_trig_oracle():
    rng = np.random.default_rng(3)
    vals = rng.uniform(-50, 50, size=5)
    emb = geometric_embedding(*vals)
    pos = 0
    for v, dim in zip(vals, ATTR_DIMS):
        for i in range(dim // 2):
            freq = 1.0 / 10000.0 ** (2.0 * i / dim)
            assert emb[pos] == pytest.approx(math.sin(v * freq), abs=1e-12)
            assert emb[pos + 1] == pytest.approx(math.cos(v * freq), abs=1e-12)
            pos += 2


def test_proposal_geometry_relative_origin():
    p = make_prop(30, 20)
    shifted = proposal_geometry(p, origin=(30, 20))
    assert np.array_equal(shifted, geometric_embedding(0, 0, 8, 8, 0))


def test_rroi_align_constant_field():
    fm = FeatureMap(torch.full((5, 16, 16), 2.5), 4)
    out = rroi_align(fm, make_prop(32, 32))
    assert torch.allclose(out, torch.full((5, 4, 4), 2.5))


def test_rroi_align_axis_aligned_oracle():
    torch.manual_seed(0)
    fm = FeatureMap(torch.randn(3, 16, 16), 4)
    p = make_prop(32, 30, h1=6, h2=6, width=24)
    out = rroi_align(fm, p)
    # plain RoI oracle: box rows 24..36, cols 20..44 in image space
    for r in range(4):
        for c in range(4):
            x = 20 + (c + 0.5) / 4 * 24
            y = 24 + (r + 0.5) / 4 * 12
            fx, fy = x / 4 - 0.5, y / 4 - 0.5
            x0, y0 = int(np.floor(fx)), int(np.floor(fy))
            tx, ty = fx - x0, fy - y0
            expected = (fm.planes[:, y0, x0] * (1 - tx) * (1 - ty)
                        + fm.planes[:, y0, x0 + 1] * tx * (1 - ty)
                        + fm.planes[:, y0 + 1, x0] * (1 - tx) * ty
                        + fm.planes[:, y0 + 1, x0 + 1] * tx * ty)
            assert torch.allclose(out[:, r, c], expected, atol=1e-12)


def test_rroi_align_rotated_oracle():
    torch.manual_seed(1)
    fm = FeatureMap(torch.randn(2, 24, 24), 4)
    rad = math.radians(30)
    p = make_prop(48, 48, h1=5, h2=5, width=20,
                  sin=math.sin(rad), cos=math.cos(rad))
    out = rroi_align(fm, p)
    d = np.array([math.cos(rad), math.sin(rad)])
    u = np.array([math.sin(rad), -math.cos(rad)])
    for r in range(4):
        for c in range(4):
            off_u = p.h1 - (r + 0.5) / 4 * p.height
            off_d = ((c + 0.5) / 4 - 0.5) * p.width
            pt = np.array([48.0, 48.0]) + off_d * d + off_u * u
            fx, fy = pt[0] / 4 - 0.5, pt[1] / 4 - 0.5
            x0, y0 = int(np.floor(fx)), int(np.floor(fy))
            tx, ty = fx - x0, fy - y0
            expected = (fm.planes[:, y0, x0] * (1 - tx) * (1 - ty)
                        + fm.planes[:, y0, x0 + 1] * tx * (1 - ty)
                        + fm.planes[:, y0 + 1, x0] * (1 - tx) * ty
                        + fm.planes[:, y0 + 1, x0 + 1] * tx * ty)
            assert torch.allclose(out[:, r, c], expected, atol=1e-12)


def test_rroi_align_rejects_degenerate():
    fm = FeatureMap(torch.zeros(2, 8, 8), 4)
    with pytest.raises(ValueError):
        p = make_prop(16, 16)
        object.__setattr__(p, "h1", 0.0)
        object.__setattr__(p, "h2", 0.0)
        rroi_align(fm, p)


def test_gat_single_neighbor():
    d = 4
    alpha = gat_attention(torch.randn(d), torch.randn(1, d),
                          torch.eye(d), torch.randn(2 * d))
    assert alpha.shape == (1,)
    assert alpha.item() == pytest.approx(1.0)


def test_gat_identical_neighbors():
    torch.manual_seed(2)
    d = 6
    v = torch.randn(d)
    alpha = gat_attention(torch.randn(d), torch.stack([v, v]),
                          torch.randn(d, d), torch.randn(2 * d))
    assert torch.allclose(alpha, torch.tensor([0.5, 0.5]))


def test_gat_hand_computation():
    # W = I, a = (1,0,0,0): scores depend only on the pivot, so alpha is uniform
    w = torch.eye(2)
    a = torch.tensor([1.0, 0.0, 0.0, 0.0])
    h_s = torch.tensor([0.7, -0.2])
    neigh = torch.tensor([[1.0, 0.0], [0.0, 1.0], [3.0, -1.0]])
    alpha = gat_attention(h_s, neigh, w, a)
    assert torch.allclose(alpha, torch.full((3,), 1 / 3))
    # a = (0,0,1,0): scores = LeakyReLU(h_n[0]) -> hand softmax
    a2 = torch.tensor([0.0, 0.0, 1.0, 0.0])
    alpha2 = gat_attention(h_s, neigh, w, a2)
    scores = np.array([1.0, 0.0, 3.0])  # already positive, LeakyReLU identity
    expected = np.exp(scores) / np.exp(scores).sum()
    assert np.allclose(alpha2.numpy(), expected)


def test_gat_rows_sum_one_and_shift_invariance():
    rng = np.random.default_rng(11)
    d = 8
    for _ in range(100):
        n = int(rng.integers(1, 9))
        h_s = torch.tensor(rng.normal(size=d))
        neigh = torch.tensor(rng.normal(size=(n, d)))
        w = torch.tensor(rng.normal(size=(d, d)))
        a = torch.tensor(rng.normal(size=2 * d))
        alpha = gat_attention(h_s, neigh, w, a)
        assert (alpha >= 0).all()
        assert alpha.sum().item() == pytest.approx(1.0, abs=1e-9)
        shifted = gat_attention(h_s, neigh, w, a, debug_shift=13.7)
        assert torch.allclose(alpha, shifted, atol=1e-9)


def test_gat_empty_neighborhood_errors():
    with pytest.raises(ValueError):
        gat_attention(torch.randn(4), torch.zeros(0, 4), torch.eye(4),
                      torch.randn(8))


def test_stroke_update_single_node():
    out = stroke_graph_update(torch.zeros(1, 1), torch.zeros(1, 3),
                              torch.eye(3), torch.randn(6))
    assert torch.allclose(out, torch.full((1, 3), 0.5))


def test_stroke_update_shared_feature_collapse():
    torch.manual_seed(4)
    v = torch.randn(5)
    feats = v.repeat(4, 1)
    adj = torch.ones(4, 4) - torch.eye(4)
    out = stroke_graph_update(adj, feats, torch.eye(5), torch.randn(10))
    assert torch.allclose(out, torch.sigmoid(v).repeat(4, 1))


def test_stroke_update_matches_dense_oracle():
    rng = np.random.default_rng(5)
    n, d = 5, 6
    feats = torch.tensor(rng.normal(size=(n, d)))
    adj = torch.tensor((rng.uniform(size=(n, n)) < 0.4).astype(np.float64))
    adj.fill_diagonal_(0)
    w = torch.tensor(rng.normal(size=(d, d)))
    a = torch.tensor(rng.normal(size=2 * d))
    out = stroke_graph_update(adj, feats, w, a)
    for s in range(n):
        neigh_idx = [j for j in range(n) if adj[s, j] > 0 or j == s]
        alpha = gat_attention(feats[s], feats[neigh_idx], w, a)
        expected = torch.sigmoid(alpha @ (feats[neigh_idx] @ w.T))
        assert torch.allclose(out[s], expected, atol=1e-12)
    assert (out > 0).all() and (out < 1).all()


def test_agg_text_level():
    a_norm = torch.tensor([[0.5, 0.5], [0.25, 0.75]])
    feats = torch.tensor([[2.0, 0.0], [0.0, 2.0]])
    out = agg_text_level(a_norm, feats)
    assert torch.allclose(out, a_norm @ feats)
    same = torch.tensor([[1.0, 3.0], [1.0, 3.0]])
    assert torch.allclose(agg_text_level(a_norm, same), same)


def test_stroke_soft_mask_cases():
    d = 4
    linked = torch.randn(3, d)
    gates = stroke_soft_mask(linked, torch.zeros(d, d))
    assert torch.allclose(gates, torch.full((3,), 0.5))
    e1 = torch.zeros(1, d)
    e1[0, 0] = 1.0
    g = stroke_soft_mask(e1, torch.eye(d))
    assert g.item() == pytest.approx(torch.sigmoid(torch.tensor(1.0)).item())
    with pytest.raises(ValueError):
        stroke_soft_mask(torch.zeros(0, d), torch.eye(d))


def test_stroke_soft_mask_bilinear_oracle():
    rng = np.random.default_rng(7)
    d = 5
    linked = torch.tensor(rng.normal(size=(3, d)))
    m = torch.tensor(rng.normal(size=(d, d)))
    gates = stroke_soft_mask(linked, m)
    pooled = linked.mean(dim=0).numpy()
    for k in range(3):
        score = float(linked[k].numpy() @ m.numpy() @ pooled)
        assert gates[k].item() == pytest.approx(1 / (1 + math.exp(-score)),
                                                rel=1e-12)


def test_agg_stroke_level():
    f = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
    assert torch.allclose(agg_stroke_level(f, torch.ones(2)),
                          torch.tensor([4.0, 6.0]))
    assert torch.allclose(agg_stroke_level(f[:1], torch.tensor([0.5])),
                          torch.tensor([0.5, 1.0]))


def test_gated_fuse_properties():
    torch.manual_seed(6)
    d = 8
    w = torch.randn(3 * d)
    a = torch.randn(d)
    assert torch.allclose(gated_fuse(a, a.clone(), w, torch.tensor(0.3)), a)
    b = torch.randn(d)
    saturated = gated_fuse(a, b, torch.zeros(3 * d), torch.tensor(50.0))
    assert torch.allclose(saturated, a, atol=1e-12)
    for _ in range(20):
        a, b = torch.randn(d), torch.randn(d)
        out = gated_fuse(a, b, torch.randn(3 * d), torch.randn(()))
        lo, hi = torch.minimum(a, b), torch.maximum(a, b)
        assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()


def test_linkage_predict_cases():
    d = 6
    feats = torch.randn(4, d)
    lap = torch.eye(4)
    p = linkage_predict(feats, lap, torch.zeros(2 * d, 2))
    assert torch.allclose(p, torch.full((4, 2), 0.5))
    # single node with L = [[1]]: direct computation
    torch.manual_seed(7)
    h = torch.randn(1, d)
    w = torch.randn(2 * d, 2)
    got = linkage_predict(h, torch.ones(1, 1), w)
    logits = torch.cat([h, h], dim=1) @ w
    assert torch.allclose(got, torch.softmax(logits, dim=-1))
    rng_p = linkage_predict(torch.randn(6, d), torch.eye(6), torch.randn(2 * d, 2))
    assert torch.allclose(rng_p.sum(dim=1), torch.ones(6), atol=1e-9)
    # determinism under duplication
    again = linkage_predict(h, torch.ones(1, 1), w)
    assert torch.equal(got, again)


def test_loss_linkage():
    confident = torch.tensor([[1e-9, 1.0 - 1e-9], [1.0 - 1e-9, 1e-9]])
    labels = torch.tensor([1, 0])
    assert loss_linkage(confident, labels).item() < 1e-8
    uniform = torch.full((3, 2), 0.5)
    assert loss_linkage(uniform, torch.tensor([0, 1, 0])).item() == \
        pytest.approx(math.log(2))
    rng = np.random.default_rng(9)
    p = torch.tensor(rng.uniform(0.05, 0.95, size=(5, 1)))
    p = torch.cat([p, 1 - p], dim=1)
    labels = torch.tensor(rng.integers(0, 2, size=5))
    got = loss_linkage(p, labels).item()
    expected = float(np.mean([-math.log(p[i, labels[i]]) for i in range(5)]))
    assert got == pytest.approx(expected, rel=1e-12)
    assert loss_linkage(torch.zeros(0, 2), torch.zeros(0)).item() == 0.0


def test_hrgn_full_graph_pass():
    torch.manual_seed(8)
    model = Hrgn().double()
    fm = FeatureMap(torch.randn(32, 32, 32), 4)
    text = [make_prop(20 + 14 * i, 40) for i in range(5)]
    strokes = [make_prop(20 + 14 * i, 40, h1=2, h2=2, width=4, level="stroke")
               for i in range(5)]
    g = build_local_graph(0, text)
    hg = attach_stroke_nodes(g, text, strokes)
    text_feats = model.node_features([text[i] for i in hg.base.nodes], fm,
                                     origin=text[0].center)
    assert text_feats.shape == (g.size, model.dim)
    stroke_feats = model.node_features(strokes, fm)
    updated = model.update_strokes(
        stroke_feats, np.array([s.center for s in strokes]))
    assert (updated > 0).all() and (updated < 1).all()
    fused = model.reason(hg, text_feats, updated)
    assert fused.shape == text_feats.shape
    p = model.linkage(hg, fused)
    assert torch.allclose(p.sum(dim=1), torch.ones(g.size), atol=1e-9)
    # text-only path returns pure stage-1 rows
    stage1_only = model.reason(hg, text_feats, None, use_strokes=False)
    a_norm = torch.as_tensor(hg.base.a_norm, dtype=text_feats.dtype)
    assert torch.allclose(stage1_only, a_norm @ text_feats)
