"""Hierarchical relation graph network over text and stroke proposals.

Node features concatenate a sinusoidal geometric embedding with a rotated-RoI
content embedding. Stroke nodes are refined by graph attention, text nodes
aggregate over their local graph (stage 1) and over gated stroke links
(stage 2); a learned gate fuses both stages and a linear head predicts
pivot-neighbor linkage.
"""

from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .graphs import HeteroGraph, LocalGraph
from .proposals import Proposal
from .sapn import FeatureMap

GEOM_DIM = 64
ATTR_DIMS = (14, 14, 12, 12, 12)  # cx, cy, height, width, angle


def geometric_embedding(cx: float, cy: float, height: float, width: float,
                        theta: float) -> np.ndarray:
    """Interleaved sin/cos encoding of the five geometric attributes."""
    values = (cx, cy, height, width, theta)
    out = np.empty(GEOM_DIM, dtype=np.float64)
    pos = 0
    for value, dim in zip(values, ATTR_DIMS):
        for i in range(dim // 2):
            freq = 1.0 / (10000.0 ** (2.0 * i / dim))
            out[pos] = math.sin(value * freq)
            out[pos + 1] = math.cos(value * freq)
            pos += 2
    return out


def proposal_geometry(p: Proposal, origin: Tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """Geometric embedding of a proposal, optionally relative to an origin."""
    theta = math.atan2(p.sin, p.cos)
    return geometric_embedding(p.center[0] - origin[0], p.center[1] - origin[1],
                               p.height, p.width, theta)


def rroi_align(features: FeatureMap, p: Proposal, grid: int = 4) -> torch.Tensor:
    """Bilinear sampling of a rotated proposal box into a (C, grid, grid) tensor."""
    planes = features.planes
    if planes.dim() == 4:
        planes = planes[0]
    if p.height <= 0 or p.width <= 0:
        raise ValueError("zero-area proposal cannot be pooled")
    c_img = torch.tensor(p.center, dtype=planes.dtype, device=planes.device)
    d = torch.tensor([p.cos, p.sin], dtype=planes.dtype, device=planes.device)
    u = torch.tensor([p.sin, -p.cos], dtype=planes.dtype, device=planes.device)
    rows = torch.arange(grid, dtype=planes.dtype, device=planes.device)
    cols = torch.arange(grid, dtype=planes.dtype, device=planes.device)
    off_u = p.h1 - (rows + 0.5) / grid * p.height          # toward upper edge
    off_d = ((cols + 0.5) / grid - 0.5) * p.width          # along writing
    pts = (c_img[None, None]
           + off_d[None, :, None] * d[None, None]
           + off_u[:, None, None] * u[None, None])         # (grid, grid, 2)
    fx = pts[..., 0] / features.stride - 0.5
    fy = pts[..., 1] / features.stride - 0.5
    h, w = planes.shape[-2:]
    x0 = torch.clamp(fx.floor().long(), 0, w - 1)
    y0 = torch.clamp(fy.floor().long(), 0, h - 1)
    x1 = torch.clamp(x0 + 1, 0, w - 1)
    y1 = torch.clamp(y0 + 1, 0, h - 1)
    tx = torch.clamp(fx - fx.floor(), 0.0, 1.0)
    ty = torch.clamp(fy - fy.floor(), 0.0, 1.0)
    v00 = planes[:, y0, x0]
    v01 = planes[:, y0, x1]
    v10 = planes[:, y1, x0]
    v11 = planes[:, y1, x1]
    top = v00 * (1 - tx) + v01 * tx
    bot = v10 * (1 - tx) + v11 * tx
    return top * (1 - ty) + bot * ty


def gat_attention(h_s: torch.Tensor, h_neighbors: torch.Tensor,
                  w_att: torch.Tensor, a_att: torch.Tensor,
                  slope: float = 0.2, debug_shift: float = 0.0) -> torch.Tensor:
    """Attention coefficients of one node over its neighborhood.

    alpha = softmax_n LeakyReLU(a^T [W h_s (+) W h_n]). debug_shift adds a
    constant to every pre-softmax score; it must never change the result.
    """
    if h_neighbors.numel() == 0:
        raise ValueError("empty neighborhood")
    ws = h_s @ w_att.T
    wn = h_neighbors @ w_att.T
    d = ws.shape[-1]
    scores = F.leaky_relu(wn @ a_att[d:] + (ws @ a_att[:d]), negative_slope=slope)
    return F.softmax(scores + debug_shift, dim=0)


def stroke_graph_update(adjacency: torch.Tensor, feats: torch.Tensor,
                        w_att: torch.Tensor, a_att: torch.Tensor,
                        slope: float = 0.2) -> torch.Tensor:
    """Sigmoid-gated attention update of every node over its A+I neighborhood.

    adjacency is the raw 0/1 matrix without self-loops; rows may be directed.
    """
    n, d = feats.shape
    adj_hat = adjacency.bool() | torch.eye(n, dtype=torch.bool,
                                           device=feats.device)
    wh = feats @ w_att.T
    left = wh @ a_att[:d]
    right = wh @ a_att[d:]
    scores = F.leaky_relu(left[:, None] + right[None, :], negative_slope=slope)
    scores = scores.masked_fill(~adj_hat, -torch.inf)
    alpha = F.softmax(scores, dim=1)
    return torch.sigmoid(alpha @ wh)


def agg_text_level(a_norm: torch.Tensor, feats: torch.Tensor) -> torch.Tensor:
    """Stage-1 weighted-average aggregation: rows of A_norm @ H."""
    return a_norm @ feats


def stroke_soft_mask(linked: torch.Tensor, m_mask: torch.Tensor) -> torch.Tensor:
    """Per-link gate m_k = sigmoid(F_k M mean(F)) for one text node's strokes."""
    if linked.numel() == 0:
        raise ValueError("soft mask needs at least one linked stroke")
    pooled = linked.mean(dim=0)
    scores = linked @ m_mask @ pooled
    return torch.sigmoid(scores)


def agg_stroke_level(linked: torch.Tensor, gates: torch.Tensor) -> torch.Tensor:
    """Stage-2 aggregation: gated sum of linked stroke features."""
    return (gates[:, None] * linked).sum(dim=0)


def gated_fuse(a: torch.Tensor, b: torch.Tensor, w_fuse: torch.Tensor,
               b_fuse: torch.Tensor) -> torch.Tensor:
    """Convex blend p*a + (1-p)*b with p = sigmoid(W [a; a*b; b] + bias)."""
    gate_in = torch.cat([a, a * b, b], dim=-1)
    p = torch.sigmoid(gate_in @ w_fuse + b_fuse)
    return p * a + (1 - p) * b


def linkage_predict(feats: torch.Tensor, laplacian: torch.Tensor,
                    w_link: torch.Tensor) -> torch.Tensor:
    """Row-softmax linkage probabilities: softmax((H (+) L H) W_link)."""
    stacked = torch.cat([feats, laplacian @ feats], dim=-1)
    return F.softmax(stacked @ w_link, dim=-1)


def loss_linkage(p_rows: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over evaluated linkage rows; zero when empty."""
    if p_rows.numel() == 0:
        return torch.zeros((), dtype=p_rows.dtype, device=p_rows.device)
    picked = p_rows.gather(1, labels.long()[:, None]).clamp_min(1e-12)
    return -torch.log(picked).mean()


class Hrgn(nn.Module):
    """Parameter container plus the per-graph forward pass."""

    def __init__(self, feature_channels: int = 32, content_dim: int = 32,
                 grid: int = 4, slope: float = 0.2):
        super().__init__()
        self.grid = grid
        self.slope = slope
        self.dim = GEOM_DIM + content_dim
        self.content_proj = nn.Linear(feature_channels * grid * grid, content_dim)
        d = self.dim
        self.w_att = nn.Parameter(torch.empty(d, d))
        self.a_att = nn.Parameter(torch.empty(2 * d))
        self.m_mask = nn.Parameter(torch.empty(d, d))
        self.w_fuse = nn.Parameter(torch.empty(3 * d))
        self.b_fuse = nn.Parameter(torch.zeros(()))
        self.w_link = nn.Parameter(torch.empty(2 * d, 2))
        for p in (self.w_att, self.m_mask):
            nn.init.orthogonal_(p, gain=0.5)
        for p in (self.a_att, self.w_fuse):
            nn.init.normal_(p, std=0.1)
        nn.init.normal_(self.w_link, std=0.1)

    def node_features(self, props: Sequence[Proposal], features: FeatureMap,
                      origin: Tuple[float, float] = (0.0, 0.0)) -> torch.Tensor:
        """Stack geometric (+) content embeddings for a proposal list."""
        ref = self.content_proj.weight
        if not props:
            return torch.zeros(0, self.dim, dtype=ref.dtype, device=ref.device)
        geom = np.stack([proposal_geometry(p, origin) for p in props])
        geom_t = torch.as_tensor(geom, dtype=ref.dtype, device=ref.device)
        pooled = torch.stack(
            [rroi_align(features, p, self.grid).reshape(-1) for p in props])
        content = self.content_proj(pooled)
        return torch.cat([geom_t, content], dim=1)

    def update_strokes(self, stroke_feats: torch.Tensor,
                       centers: np.ndarray, k: int = 8) -> torch.Tensor:
        """Refine every stroke node over its k nearest neighbors."""
        n = stroke_feats.shape[0]
        if n == 0:
            return stroke_feats
        adj = torch.zeros(n, n, dtype=torch.bool, device=stroke_feats.device)
        if n > 1:
            diff = centers[:, None, :] - centers[None, :, :]
            dist = np.sqrt((diff * diff).sum(-1))
            np.fill_diagonal(dist, np.inf)
            order = np.argsort(dist, axis=1, kind="stable")
            for s in range(n):
                adj[s, order[s, :min(k, n - 1)]] = True
        return stroke_graph_update(adj, stroke_feats, self.w_att, self.a_att,
                                   self.slope)

    def reason(self, hg: HeteroGraph, text_feats: torch.Tensor,
               stroke_feats: Optional[torch.Tensor],
               use_strokes: bool = True) -> torch.Tensor:
        """Fused node features for one heterogeneous graph.

        text_feats rows follow hg.base.nodes order; stroke_feats rows are
        indexed by the global stroke ids stored in hg.stroke_links.
        """
        g = hg.base
        a_norm = torch.as_tensor(g.a_norm, dtype=text_feats.dtype,
                                 device=text_feats.device)
        stage1 = agg_text_level(a_norm, text_feats)
        if not use_strokes or stroke_feats is None:
            return stage1
        fused = []
        for local_i in range(g.size):
            links = hg.stroke_links[local_i]
            if not links:
                fused.append(stage1[local_i])  # stage-2 skip
                continue
            linked = stroke_feats[list(links)]
            gates = stroke_soft_mask(linked, self.m_mask)
            stage2 = agg_stroke_level(linked, gates)
            fused.append(gated_fuse(stage1[local_i], stage2,
                                    self.w_fuse, self.b_fuse))
        return torch.stack(fused)

    def linkage(self, hg: HeteroGraph, fused: torch.Tensor) -> torch.Tensor:
        lap = torch.as_tensor(hg.base.laplacian, dtype=fused.dtype,
                              device=fused.device)
        return linkage_predict(fused, lap, self.w_link)
