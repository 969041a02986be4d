"""Weighted pixel graphs and the mass-dependent graph Laplacian.

Pixels are indexed row-major, ``i = row * width + col``.  Every edge is
generated by a *neighbor relation*, an integer offset ``(dy, dx)`` in
canonical orientation (``dy > 0``, or ``dy == 0 and dx > 0``), so the
second endpoint of an edge always has the larger index.

Images are handled as arrays of shape ``(H, W)`` or ``(C, H, W)``; all
quadratic forms are evaluated per channel and summed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from .errors import InvalidArgumentError

DEFAULT_FLOOR = 1e-6
DENSE_CAP = 4096

WEIGHT_RULES = ("constant", "inverse-distance")


def neighbor_offsets(radius):
    """Canonical offsets of Euclidean length in ``(0, radius]``."""
    r = int(np.floor(radius))
    out = []
    for dy in range(0, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx <= 0:
                continue
            if dy * dy + dx * dx <= radius * radius:
                out.append((dy, dx))
    return out


@dataclass(frozen=True, eq=False)
class WeightedPixelGraph:
    height: int
    width: int
    radius: float
    edges: np.ndarray  # (E, 2) int, edges[:, 0] < edges[:, 1]
    weights: np.ndarray  # (E,) positive
    volume: np.ndarray  # (n,), sums to one
    neighbor_relations: tuple  # ((dy, dx), ...)
    edge_relation: np.ndarray = field(repr=False)  # (E,) index into neighbor_relations
    relation_weights: np.ndarray = field(repr=False)  # (d,) weight per relation

    @property
    def n(self):
        return self.height * self.width

    @property
    def n_edges(self):
        return len(self.edges)

    @cached_property
    def incidence_unweighted(self):
        """Signed incidence ``B`` (E x n): +1 at the higher index, -1 at the lower."""
        E = self.n_edges
        rows = np.repeat(np.arange(E), 2)
        cols = self.edges[:, ::-1].ravel()
        vals = np.tile([1.0, -1.0], E)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(E, self.n))

    def degree(self):
        deg = np.zeros(self.n)
        np.add.at(deg, self.edges[:, 0], self.weights)
        np.add.at(deg, self.edges[:, 1], self.weights)
        return deg

    def neighbors(self, i):
        mask = (self.edges[:, 0] == i) | (self.edges[:, 1] == i)
        e = self.edges[mask]
        return np.where(e[:, 0] == i, e[:, 1], e[:, 0])

    def channels(self, x):
        """Reshape an image (or batch of images) to ``(..., C, n)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-2:] == (self.height, self.width):
            if x.ndim == 2:
                x = x[None]
            return x.reshape(x.shape[:-2] + (self.n,))
        if x.ndim >= 1 and x.shape[-1] == self.n:
            return x[None] if x.ndim == 1 else x
        raise InvalidArgumentError(
            f"array of shape {x.shape} does not match a {self.height}x{self.width} graph"
        )


def build_grid_graph(height, width, radius=1, weight_rule="constant"):
    """Graph on an ``height x width`` grid joining pixels within ``radius``.

    ``weight_rule`` is ``"constant"`` (every weight 1) or
    ``"inverse-distance"`` (weight ``1/|offset|``).
    """
    if height < 1 or width < 1:
        raise InvalidArgumentError("grid dimensions must be positive")
    if radius < 1:
        raise InvalidArgumentError("radius must be at least 1")
    if weight_rule not in WEIGHT_RULES:
        raise InvalidArgumentError(f"unknown weight rule {weight_rule!r}")

    offsets = neighbor_offsets(radius)
    idx = np.arange(height * width).reshape(height, width)
    edges, rel, rel_w = [], [], []
    for k, (dy, dx) in enumerate(offsets):
        w = 1.0 if weight_rule == "constant" else 1.0 / np.hypot(dy, dx)
        rel_w.append(w)
        r0, r1 = 0, height - dy
        c0, c1 = max(0, -dx), min(width, width - dx)
        if r1 <= r0 or c1 <= c0:
            continue
        a = idx[r0:r1, c0:c1].ravel()
        b = idx[r0 + dy:r1 + dy, c0 + dx:c1 + dx].ravel()
        edges.append(np.stack([a, b], axis=1))
        rel.append(np.full(len(a), k))

    if edges:
        edges = np.concatenate(edges)
        rel = np.concatenate(rel)
    else:
        edges = np.zeros((0, 2), dtype=int)
        rel = np.zeros(0, dtype=int)
    rel_w = np.asarray(rel_w, dtype=float)
    weights = rel_w[rel] if len(rel) else np.zeros(0)

    deg = np.zeros(height * width)
    np.add.at(deg, edges[:, 0], weights)
    np.add.at(deg, edges[:, 1], weights)
    total = deg.sum()
    # a single pixel has no edges; give it the whole volume
    volume = deg / total if total > 0 else np.ones_like(deg)

    return WeightedPixelGraph(
        height=int(height),
        width=int(width),
        radius=radius,
        edges=edges,
        weights=weights,
        volume=volume,
        neighbor_relations=tuple(offsets),
        edge_relation=rel,
        relation_weights=rel_w,
    )


def incidence_operator(graph):
    """Weighted discrete gradient ``D`` (E x n), entries ``+-sqrt(w)``.

    The row of edge ``(i, j)``, ``i < j``, holds ``+sqrt(w_ij)`` at ``j``
    and ``-sqrt(w_ij)`` at ``i``.
    """
    return sparse.diags(np.sqrt(graph.weights)) @ graph.incidence_unweighted


def edge_mass(graph, xc, floor=DEFAULT_FLOOR):
    """``((x_i + floor)/d_i + (x_j + floor)/d_j) / 2`` per edge, any leading dims."""
    scaled = (xc + floor) / graph.volume
    return 0.5 * (scaled[..., graph.edges[:, 0]] + scaled[..., graph.edges[:, 1]])


def laplacian_apply(graph, lam, u):
    """``sum_e lam_e b_e b_e^T u`` with batched conductances ``lam`` (..., E)."""
    e = graph.edges
    flux = lam * (u[..., e[:, 1]] - u[..., e[:, 0]])
    B = graph.incidence_unweighted
    return np.asarray(flux.reshape(-1, flux.shape[-1]) @ B).reshape(u.shape)


class LaplacianState:
    """The operator ``L(x)`` of a graph at a mass vector ``x``.

    ``lam`` holds the per-channel edge conductances
    ``w_ij ((x_i + floor)/d_i + (x_j + floor)/d_j) / 2``, shape ``(C, E)``.
    """

    def __init__(self, graph, x, floor=DEFAULT_FLOOR, dense_cap=DENSE_CAP):
        xc = graph.channels(x)
        if xc.ndim != 2:
            raise InvalidArgumentError("build_laplacian takes a single image")
        if np.any(xc < 0):
            raise InvalidArgumentError("mass vector has negative entries")
        if floor < 0:
            raise InvalidArgumentError("floor must be non-negative")
        self.graph = graph
        self.x = xc
        self.floor = float(floor)
        self.dense_cap = dense_cap
        self.edge_mass = edge_mass(graph, xc, self.floor)
        self.lam = graph.weights * self.edge_mass
        self.lam.setflags(write=False)
        self.edge_mass.setflags(write=False)

    @property
    def channels(self):
        return self.x.shape[0]

    @property
    def n(self):
        return self.graph.n

    def edge_diff(self, u):
        """``u_j - u_i`` per edge for ``u`` of shape ``(..., C, n)``."""
        e = self.graph.edges
        return u[..., e[:, 1]] - u[..., e[:, 0]]

    def apply(self, u):
        """``L(x) u`` per channel; ``u`` is an image or a stack of images."""
        return laplacian_apply(self.graph, self.lam, self.graph.channels(u))

    def quad(self, u, v):
        """``sum_c u_c^T L_c(x) v_c`` for single images ``u``, ``v``."""
        return float(np.sum(self.lam * self.edge_diff(u) * self.edge_diff(v)))

    def trace_directions(self):
        """Yield ``(weight, channel, i, j)`` with ``L = sum weight * b b^T``, ``b = e_j - e_i``."""
        e = self.graph.edges
        for c in range(self.channels):
            for k in range(len(e)):
                yield self.lam[c, k], c, e[k, 0], e[k, 1]

    def dense(self, channel=None):
        """Dense ``n x n`` matrix; block-diagonal over channels when ``channel`` is None."""
        n = self.n
        if n * (self.channels if channel is None else 1) > self.dense_cap:
            raise InvalidArgumentError(
                f"dense materialization of n={n} exceeds cap {self.dense_cap}"
            )
        chans = range(self.channels) if channel is None else [channel]
        B = self.graph.incidence_unweighted
        blocks = [(B.T @ sparse.diags(self.lam[c]) @ B).toarray() for c in chans]
        if len(blocks) == 1:
            return blocks[0]
        out = np.zeros((n * len(blocks),) * 2)
        for k, blk in enumerate(blocks):
            out[k * n:(k + 1) * n, k * n:(k + 1) * n] = blk
        return out

    def sparse(self, channel=0):
        B = self.graph.incidence_unweighted
        return (B.T @ sparse.diags(self.lam[channel]) @ B).tocsr()

    def scaled(self, c):
        """State at ``c * x`` with the same floor (exactly ``c L(x)`` when floor is 0)."""
        return LaplacianState(self.graph, c * self.x, self.floor, self.dense_cap)


def build_laplacian(graph, x, floor=DEFAULT_FLOOR, dense_cap=DENSE_CAP):
    return LaplacianState(graph, x, floor=floor, dense_cap=dense_cap)


class EuclideanMetric:
    """Identity metric with the same quadratic-form surface as ``LaplacianState``."""

    def __init__(self, graph, channels=1):
        self.graph = graph
        self._channels = channels

    @property
    def channels(self):
        return self._channels

    @property
    def n(self):
        return self.graph.n

    def apply(self, u):
        return self.graph.channels(u).copy()

    def quad(self, u, v):
        return float(np.sum(u * v))

    def trace_directions(self):
        for c in range(self._channels):
            for i in range(self.n):
                yield 1.0, c, i, None

    def dense(self, channel=None):
        k = 1 if channel is not None else self._channels
        return np.eye(self.n * k)
