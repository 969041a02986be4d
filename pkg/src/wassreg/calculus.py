"""Riemannian calculus for the discrete Wasserstein-2 metric ``g_x = L(x)^+``.

All functions take a :class:`~wassreg.graph.LaplacianState` (or, where it
makes sense, a :class:`~wassreg.graph.EuclideanMetric`) and arrays shaped
like a single image, ``(H, W)``, ``(C, H, W)`` or flattened ``(C, n)``.
Dense eigen-decompositions are limited to ``L.dense_cap`` pixels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.sparse import linalg as splinalg

from .errors import DegenerateMetricError, InvalidArgumentError
from .graph import DEFAULT_FLOOR, EuclideanMetric, LaplacianState

ZERO_EIG_RTOL = 1e-10


def _flat(L, u, name="u"):
    try:
        uc = L.graph.channels(u)
    except InvalidArgumentError as exc:
        raise InvalidArgumentError(f"{name}: {exc}") from None
    if uc.shape != (L.channels, L.n):
        raise InvalidArgumentError(f"{name} has shape {np.shape(u)}, expected {L.channels} channel(s)")
    return uc


def check_tangent(L, xi, tol=None, name="xi"):
    """Return ``xi`` as ``(C, n)``; raise unless every channel sums to zero."""
    xc = _flat(L, xi, name)
    if tol is None:
        tol = 1e-9 * L.n * max(1.0, float(np.max(np.abs(xc), initial=0.0)))
    s = np.abs(xc.sum(axis=1))
    if np.any(s > tol):
        raise InvalidArgumentError(f"{name} is not tangent: channel sums {s}")
    return xc


def project_tangent(L, xi):
    xc = _flat(L, xi)
    return xc - xc.mean(axis=1, keepdims=True)


# --------------------------------------------------------------------------
# quadratic forms


def quadratic_form(L, u, v=None):
    """``sum_{(i,j)} lam_ij (u_i - u_j)(v_i - v_j)`` summed over channels."""
    uc = _flat(L, u)
    vc = uc if v is None else _flat(L, v, "v")
    return L.quad(uc, vc)


@dataclass(frozen=True)
class NeighborKernel:
    offset: tuple
    weight: float
    diff: np.ndarray  # +1 at the anchor pixel, -1 at the offset pixel
    avg: np.ndarray  # 1/2 at both


def build_kernels(graph):
    """One difference/averaging stencil pair per neighbor relation."""
    out = []
    for (dy, dx), w in zip(graph.neighbor_relations, graph.relation_weights):
        shape = (dy + 1, abs(dx) + 1)
        a = (0, max(0, -dx))
        b = (dy, a[1] + dx)
        K = np.zeros(shape)
        K[a], K[b] = 1.0, -1.0
        M = np.zeros(shape)
        M[a], M[b] = 0.5, 0.5
        out.append(NeighborKernel((dy, dx), float(w), K, M))
    return out


def _correlate(img, kernel):
    if kernel.shape[0] > img.shape[0] or kernel.shape[1] > img.shape[1]:
        return np.zeros((0, 0))
    return signal.correlate(img, kernel, mode="valid", method="direct")


def wasserstein_grad_norm_conv(graph, x, g, floor=DEFAULT_FLOOR, kernels=None):
    """Squared Wasserstein norm of ``g`` at ``x`` through per-relation stencils.

    The per-pixel ``1/d_i`` factor is folded into ``x`` before the averaging
    stencil so every stencil stays translation invariant.
    """
    if kernels is None:
        kernels = build_kernels(graph)
    if len(kernels) != len(graph.neighbor_relations):
        raise RuntimeError("kernel set does not match the graph's neighbor relations")
    H, W = graph.height, graph.width
    try:
        xs = graph.channels(x).reshape(-1, H, W)
        gs = graph.channels(g).reshape(-1, H, W)
    except (InvalidArgumentError, ValueError):
        raise InvalidArgumentError("x and g must match the graph") from None
    if xs.shape != gs.shape:
        raise InvalidArgumentError("x and g have different channel counts")
    vol = graph.volume.reshape(H, W)
    total = 0.0
    for xc, gc in zip(xs, gs):
        scaled = (xc + floor) / vol
        for k in kernels:
            h = _correlate(gc, k.diff)
            if h.size == 0:
                continue
            v = _correlate(scaled, k.avg)
            total += k.weight * np.sum(h * h * v)
    return float(total)


# --------------------------------------------------------------------------
# Laplace-Beltrami


def modified_laplacian(L, hess_quad):
    """``tr(G^{-1} Hess f)`` from directional second derivatives.

    ``hess_quad(direction)`` must return the second derivative of ``f``
    along ``direction`` (an array of shape ``(C, n)``).
    """
    total = 0.0
    shape = (L.channels, L.n)
    for w, c, i, j in L.trace_directions():
        if w == 0.0:
            continue
        d = np.zeros(shape)
        d[c, i] = 1.0
        if j is not None:
            d[c, i] = -1.0
            d[c, j] = 1.0
        total += w * hess_quad(d)
    return float(total)


def _eigh(L, c, check=True):
    lam, vec = np.linalg.eigh(L.dense(c))
    tol = ZERO_EIG_RTOL * max(1.0, abs(lam[-1]))
    nzero = int(np.sum(lam <= tol))
    if check and nzero > 1:
        raise DegenerateMetricError(
            f"L(x) has {nzero} near-zero eigenvalues in channel {c}; the metric is degenerate"
        )
    return lam, vec, tol


def pseudo_inverse(L, c=0):
    lam, vec, tol = _eigh(L, c)
    inv = np.where(lam > tol, 1.0 / np.where(lam > tol, lam, 1.0), 0.0)
    return (vec * inv) @ vec.T


def pseudo_solve(L, xi):
    """Sum-zero ``phi`` with ``L phi = xi`` per channel."""
    xc = _flat(L, xi)
    out = np.empty_like(xc)
    for c in range(L.channels):
        if L.n <= L.dense_cap:
            out[c] = pseudo_inverse(L, c) @ xc[c]
        else:
            A = L.sparse(c)
            phi, info = splinalg.cg(A, xc[c] - xc[c].mean(), rtol=1e-10, maxiter=20 * L.n)
            if info != 0:
                raise DegenerateMetricError(f"conjugate gradient did not converge (info={info})")
            out[c] = phi - phi.mean()
    return out


def log_det_gradient(L):
    """Gradient in ``x`` of ``log det+ L(x)`` (product of the non-zero eigenvalues).

    Jacobi's formula with ``dL/dx_k = sum_{e ~ k} w_e / (2 d_k) b_e b_e^T``
    gives ``sum_{e ~ k} w_e R_e / (2 d_k)`` with ``R_e = b_e^T L^+ b_e``.
    """
    g = L.graph
    i, j = g.edges[:, 0], g.edges[:, 1]
    out = np.zeros((L.channels, L.n))
    for c in range(L.channels):
        P = pseudo_inverse(L, c)
        R = P[i, i] + P[j, j] - 2.0 * P[i, j]
        contrib = g.weights * R
        np.add.at(out[c], i, contrib)
        np.add.at(out[c], j, contrib)
        out[c] /= 2.0 * g.volume
    return out


def log_det(L):
    """``sum_c log det+ L_c(x)`` over the positive eigenvalues."""
    total = 0.0
    for c in range(L.channels):
        lam, _, tol = _eigh(L, c)
        total += float(np.sum(np.log(lam[lam > tol])))
    return total


def volume_correction(L, grad):
    """``grad^T L(x) grad log det(L(x))^{-1/2}``."""
    gc = _flat(L, grad, "grad")
    return float(np.sum(L.apply(gc) * (-0.5 * log_det_gradient(L))))


def laplace_beltrami_full(L, hess, grad):
    """``tr(L(x) Hess f) + grad f^T L(x) grad log det(L(x))^{-1/2}``.

    ``hess`` is the dense ``(C n) x (C n)`` input Hessian in channel-major order.
    """
    if L.floor <= 0 and np.any(L.x <= 0):
        raise DegenerateMetricError("full Laplace-Beltrami needs strictly positive mass or a floor")
    H = np.asarray(hess, dtype=float)
    N = L.channels * L.n
    if H.shape != (N, N):
        raise InvalidArgumentError(f"Hessian has shape {H.shape}, expected {(N, N)}")
    trace = float(np.sum(L.dense() * H))
    return trace + volume_correction(L, grad)


# --------------------------------------------------------------------------
# metric tensor, connection, Hessian, volume


def metric_norm_sq(L, xi):
    """``xi^T L(x)^+ xi`` for a tangent vector ``xi``."""
    xc = check_tangent(L, xi)
    if not np.any(xc):
        return 0.0
    return float(np.sum(xc * pseudo_solve(L, xc)))


def _mass_laplacian_apply(L, sigma, u):
    """``L(sigma) u``: the weighted Laplacian with the mass replaced by ``sigma`` (no floor)."""
    g = L.graph
    i, j = g.edges[:, 0], g.edges[:, 1]
    s = sigma / g.volume
    lam = g.weights * 0.5 * (s[..., i] + s[..., j])
    flux = lam * (u[..., j] - u[..., i])
    out = np.zeros_like(u)
    for c in range(u.shape[0]):
        np.add.at(out[c], j, flux[c])
        np.subtract.at(out[c], i, flux[c])
    return out


def circ_product(L, phi1, phi2):
    """``(1/(2 d_i) sum_{j ~ i} w_ij (phi1_i - phi1_j)(phi2_i - phi2_j))_i``."""
    g = L.graph
    i, j = g.edges[:, 0], g.edges[:, 1]
    prod = g.weights * (phi1[..., j] - phi1[..., i]) * (phi2[..., j] - phi2[..., i])
    out = np.zeros_like(phi1)
    for c in range(phi1.shape[0]):
        np.add.at(out[c], i, prod[c])
        np.add.at(out[c], j, prod[c])
    return out / (2.0 * g.volume)


def christoffel(L, s1, s2):
    """Christoffel symbol ``Gamma_x(s1, s2)`` of the metric ``L(x)^+``; a tangent vector."""
    a = check_tangent(L, s1, name="s1")
    b = check_tangent(L, s2, name="s2")
    phi1 = pseudo_solve(L, a)
    phi2 = pseudo_solve(L, b)
    first = _mass_laplacian_apply(L, a, phi2) + _mass_laplacian_apply(L, b, phi1)
    second = L.apply(circ_product(L, phi1, phi2))
    return -0.5 * first + 0.5 * second


def riemannian_hessian(L, euclid_hess, grad, s1, s2):
    """``Hess F(s1, s2) = s1^T Hess_E F s2 - <Gamma(s1, s2), grad F>``.

    Uses the Levi-Civita sign convention (geodesics solve
    ``x'' + Gamma(x', x') = 0``).
    """
    a = check_tangent(L, s1, name="s1").ravel()
    b = check_tangent(L, s2, name="s2").ravel()
    H = np.asarray(euclid_hess, dtype=float)
    gc = _flat(L, grad, "grad")
    gamma = christoffel(L, s1, s2)
    return float(a @ H @ b - np.sum(gamma * gc))


def riemannian_volume(L):
    """``prod lambda_k^{-1/2}`` over the positive eigenvalues, all channels."""
    if L.floor <= 0 and np.any(L.x <= 0):
        raise DegenerateMetricError("Riemannian volume needs strictly positive mass or a floor")
    logv = 0.0
    for c in range(L.channels):
        lam, _, tol = _eigh(L, c)
        logv -= 0.5 * float(np.sum(np.log(lam[lam > tol])))
    return float(np.exp(logv))


__all__ = [
    "EuclideanMetric",
    "LaplacianState",
    "NeighborKernel",
    "build_kernels",
    "check_tangent",
    "christoffel",
    "circ_product",
    "laplace_beltrami_full",
    "log_det",
    "log_det_gradient",
    "metric_norm_sq",
    "modified_laplacian",
    "project_tangent",
    "pseudo_inverse",
    "pseudo_solve",
    "quadratic_form",
    "riemannian_hessian",
    "riemannian_volume",
    "volume_correction",
    "wasserstein_grad_norm_conv",
]
