"""Pivot-centered local graphs over proposals, plus text-stroke attachment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .proposals import Proposal


@dataclass
class LocalGraph:
    """Two-hop neighborhood of a pivot proposal.

    Node 0 is always the pivot; `nodes` maps local indices to indices into the
    proposal list the graph was built from.
    """

    pivot: int                      # global index of the pivot proposal
    nodes: List[int]                # global indices, nodes[0] == pivot
    hop1: List[int]                 # local indices of 1-hop nodes
    hop2: List[int]                 # local indices of 2-hop nodes
    a_raw: np.ndarray               # symmetric 0/1, no self-loops
    a_norm: np.ndarray              # D^-1 (A + I), row stochastic
    laplacian: np.ndarray           # D^-1/2 (A + I) D^-1/2, symmetric
    edge_attention: Optional[np.ndarray] = None  # filled by the graph layers

    @property
    def size(self) -> int:
        return len(self.nodes)


@dataclass
class HeteroGraph:
    """A text-node LocalGraph plus per-node links into a stroke proposal list."""

    base: LocalGraph
    stroke_links: List[List[int]]   # per local text node, global stroke indices

    def linked(self, local_idx: int) -> List[int]:
        return self.stroke_links[local_idx]


def knn_indices(centers: np.ndarray, query: int, k: int,
                exclude: Sequence[int] = ()) -> List[int]:
    """Indices of the k nearest centers to centers[query], ties by index."""
    skip = set(exclude) | {query}
    diff = centers - centers[query]
    dist = np.sqrt((diff * diff).sum(axis=1))
    order = np.lexsort((np.arange(len(centers)), dist))
    out = [int(i) for i in order if int(i) not in skip]
    return out[:k]


def graph_matrices(a_raw: np.ndarray):
    """Row-stochastic and symmetric normalizations of A + I."""
    n = a_raw.shape[0]
    a_hat = a_raw + np.eye(n)
    deg = a_hat.sum(axis=1)
    a_norm = a_hat / deg[:, None]
    inv_sqrt = 1.0 / np.sqrt(deg)
    laplacian = a_hat * inv_sqrt[:, None] * inv_sqrt[None, :]
    return a_norm, laplacian


def build_local_graph(pivot: int, props: Sequence[Proposal],
                      hop1_k: int = 8, hop2_k: int = 4) -> LocalGraph:
    """Two-hop KNN graph around a pivot proposal.

    1-hop: the hop1_k nearest neighbors of the pivot. 2-hop: for each 1-hop
    node, its hop2_k nearest among all proposals except the pivot and itself;
    new nodes are deduplicated. Edges: pivot to 1-hop, 1-hop to their 2-hop
    picks; self-loops enter through normalization.
    """
    if len(props) == 0:
        raise ValueError("need at least one proposal")
    centers = np.array([p.center for p in props], dtype=np.float64)
    hop1_global = knn_indices(centers, pivot, hop1_k)
    local_of: Dict[int, int] = {pivot: 0}
    nodes = [pivot]
    for g in hop1_global:
        local_of[g] = len(nodes)
        nodes.append(g)
    hop1_local = [local_of[g] for g in hop1_global]

    edges = [(0, local_of[g]) for g in hop1_global]
    hop2_local: List[int] = []
    for g in hop1_global:
        for nb in knn_indices(centers, g, hop2_k, exclude=[pivot]):
            if nb not in local_of:
                local_of[nb] = len(nodes)
                nodes.append(nb)
                hop2_local.append(local_of[nb])
            edges.append((local_of[g], local_of[nb]))

    n = len(nodes)
    a_raw = np.zeros((n, n), dtype=np.float64)
    for u, v in edges:
        a_raw[u, v] = 1.0
        a_raw[v, u] = 1.0
    a_norm, laplacian = graph_matrices(a_raw)
    return LocalGraph(pivot=pivot, nodes=nodes, hop1=hop1_local,
                      hop2=hop2_local, a_raw=a_raw, a_norm=a_norm,
                      laplacian=laplacian)


def point_in_quad(point: np.ndarray, quad: np.ndarray) -> bool:
    """Boundary-inclusive containment test for a convex quadrilateral."""
    signs = []
    for i in range(len(quad)):
        a, b = quad[i], quad[(i + 1) % len(quad)]
        cross = (b[0] - a[0]) * (point[1] - a[1]) - (b[1] - a[1]) * (point[0] - a[0])
        signs.append(cross)
    signs = np.asarray(signs)
    return bool(np.all(signs >= -1e-9) or np.all(signs <= 1e-9))


def attach_stroke_nodes(text_graph: LocalGraph,
                        text_props: Sequence[Proposal],
                        stroke_props: Sequence[Proposal],
                        max_links: int = 3) -> HeteroGraph:
    """Link each text node to up to max_links contained nearest stroke nodes."""
    stroke_centers = np.array([s.center for s in stroke_props], dtype=np.float64) \
        if stroke_props else np.zeros((0, 2))
    links: List[List[int]] = []
    for g in text_graph.nodes:
        quad = text_props[g].quad()
        center = np.asarray(text_props[g].center)
        contained = [
            si for si in range(len(stroke_props))
            if point_in_quad(stroke_centers[si], quad)
        ]
        contained.sort(key=lambda si: (
            float(np.hypot(*(stroke_centers[si] - center))), si))
        links.append(contained[:max_links])
    return HeteroGraph(base=text_graph, stroke_links=links)
