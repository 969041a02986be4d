"""Tikhonov penalties from second-order expansion of noise-perturbed losses.

For a scalar prediction ``f`` and loss ``l(f, y)`` the integrated effect of
zero-mean noise with covariance ``eta^2 G(x)^{-1}`` is, to order ``eta^2``,

    E[l(f(x + xi), y)] - l(f(x), y) = eta^2 / 2 * (l'' |grad f|_G^2 + l' Lap_G f).

The functions here evaluate the two terms for the Wasserstein metric
(``G^{-1} = L(x)``) or the Euclidean one, and check the expansion by
Monte Carlo.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import calculus
from .errors import DomainError, InvalidArgumentError
from .graph import EuclideanMetric, LaplacianState, build_laplacian
from .model import (
    default_loss,
    hessian_quad_oracle,
    input_gradient,
    loss_derivatives,
    target_values,
)
from .noise import sample_noise

CE_CLAMP = 1e-7


@dataclass(frozen=True)
class RegularizerConfig:
    metric: str = "wasserstein"
    strength: float = 0.0
    loss_kind: str = "cross_entropy"
    penalty_target: str = "loss_gradient"
    include_laplacian: bool = False
    laplacian_variant: str = "modified"

    def __post_init__(self):
        if self.metric not in ("wasserstein", "euclidean"):
            raise InvalidArgumentError(f"unknown metric {self.metric!r}")
        if self.strength < 0:
            raise InvalidArgumentError("strength must be non-negative")
        if self.loss_kind not in ("square", "cross_entropy"):
            raise InvalidArgumentError(f"unknown loss {self.loss_kind!r}")
        if self.penalty_target not in ("loss_gradient", "function_gradient"):
            raise InvalidArgumentError(f"unknown penalty target {self.penalty_target!r}")
        if self.laplacian_variant not in ("modified", "full"):
            raise InvalidArgumentError(f"unknown Laplacian variant {self.laplacian_variant!r}")


@dataclass
class RegularizerReport:
    grad_term: float
    laplacian_term: float
    total: float
    per_example: list = field(default_factory=list)

    def scaled(self, c):
        return RegularizerReport(
            c * self.grad_term,
            c * self.laplacian_term,
            c * self.total,
            [r.scaled(c) for r in self.per_example],
        )


def laplacian_value(L, variant="modified", hess_oracle=None, hessian=None, grad=None):
    """``Lap_G f`` at the point of ``L``.

    The modified variant needs either a directional second-derivative
    oracle or a dense Hessian; the full variant needs the dense Hessian and
    the gradient (it adds the log-volume drift term).
    """
    if variant == "modified":
        if hess_oracle is not None:
            return calculus.modified_laplacian(L, hess_oracle)
        if hessian is None:
            raise InvalidArgumentError("modified Laplacian needs hess_oracle or hessian")
        return float(np.sum(L.dense() * np.asarray(hessian)))
    if variant == "full":
        if isinstance(L, EuclideanMetric):
            return float(np.trace(np.asarray(hessian)))
        if hessian is None or grad is None:
            raise InvalidArgumentError("full Laplace-Beltrami needs hessian and grad")
        return calculus.laplace_beltrami_full(L, hessian, grad)
    raise InvalidArgumentError(f"unknown Laplacian variant {variant!r}")


def _report(d1, d2, L, grad_f, include_laplacian, variant, hess_oracle, hessian):
    grad_term = d2 * calculus.quadratic_form(L, grad_f)
    lap_term = 0.0
    if include_laplacian and d1 != 0.0:
        lap_term = d1 * laplacian_value(L, variant, hess_oracle, hessian, grad_f)
    return RegularizerReport(float(grad_term), float(lap_term), float(grad_term + lap_term))


def penalty_square_loss(f_val, y, L, grad_f, hess_oracle=None, include_laplacian=True,
                        variant="modified", hessian=None):
    """``l'' |grad f|^2 + l' Lap f`` for ``l = (f - y)^2``: ``l'' = 2``, ``l' = 2(f - y)``."""
    _, d1, d2 = loss_derivatives(f_val, y, "square")
    return _report(float(d1), float(d2), L, grad_f, include_laplacian, variant, hess_oracle, hessian)


def cross_entropy_coefficients(f_val, y):
    """``(l', l'')`` of the binary cross entropy, with ``f`` clamped away from 0 and 1."""
    f = float(f_val)
    if not 0.0 < f < 1.0:
        raise DomainError(f"cross entropy coefficients undefined at f={f}")
    f = min(max(f, CE_CLAMP), 1.0 - CE_CLAMP)
    _, d1, d2 = loss_derivatives(f, y, "cross_entropy")
    return float(d1), float(d2)


def penalty_cross_entropy(f_val, y, L, grad_f, hess_oracle=None, include_laplacian=True,
                          variant="modified", hessian=None):
    """Cross-entropy penalty; vector ``f_val`` means k outputs averaged with weight ``1/k``.

    In the multi-output case ``y``, ``grad_f`` and ``hess_oracle`` (or
    ``hessian``) are sequences with one entry per output.
    """
    if np.ndim(f_val) == 0:
        d1, d2 = cross_entropy_coefficients(f_val, y)
        return _report(d1, d2, L, grad_f, include_laplacian, variant, hess_oracle, hessian)
    k = len(f_val)
    parts = []
    for c in range(k):
        oracle = None if hess_oracle is None else hess_oracle[c]
        hess = None if hessian is None else hessian[c]
        parts.append(penalty_cross_entropy(f_val[c], y[c], L, grad_f[c], oracle,
                                           include_laplacian, variant, hess))
    g = sum(p.grad_term for p in parts) / k
    lap = sum(p.laplacian_term for p in parts) / k
    return RegularizerReport(g, lap, g + lap, parts)


def penalty_nonzero_mean(f_val, y, mean_xi, grad_f, loss_kind="square"):
    """First-order penalty ``l'(f, y) <E[xi], grad f>`` of a biased perturbation."""
    if loss_kind == "cross_entropy":
        d1, _ = cross_entropy_coefficients(f_val, y)
    else:
        _, d1, _ = loss_derivatives(f_val, y, loss_kind)
    a = np.asarray(mean_xi, dtype=float)
    b = np.asarray(grad_f, dtype=float)
    if a.size != b.size:
        raise InvalidArgumentError("mean_xi and grad_f differ in size")
    return float(d1) * float(a.ravel() @ b.ravel())


def metric_penalty_objective(loss_val, L, grad_loss, strength):
    """``loss + strength * <grad loss, G^{-1} grad loss>``; ``L=None`` means Euclidean."""
    if strength < 0:
        raise InvalidArgumentError("strength must be non-negative")
    g = np.asarray(grad_loss, dtype=float)
    quad = float(np.sum(g * g)) if L is None else calculus.quadratic_form(L, g)
    return float(loss_val) + strength * quad


def batch_report(reports, strength=1.0):
    """Mean over examples, times ``strength``, with the per-example breakdown kept."""
    if not reports:
        return RegularizerReport(0.0, 0.0, 0.0, [])
    g = float(np.mean([r.grad_term for r in reports]))
    lap = float(np.mean([r.laplacian_term for r in reports]))
    out = RegularizerReport(g, lap, g + lap, list(reports))
    return out.scaled(strength)


def example_penalty(params, graph, x, y, cfg, floor=None):
    """Second-order noise penalty of one example for a scalar-output model."""
    if params.head == "softmax":
        raise InvalidArgumentError("example_penalty needs a scalar-output model")
    if cfg.metric == "wasserstein":
        L = build_laplacian(graph, x) if floor is None else build_laplacian(graph, x, floor)
    else:
        L = EuclideanMetric(graph, params.n_in // graph.n)
    xf = np.asarray(x, dtype=float).reshape(-1)
    grad = input_gradient(params, xf, y, cfg.loss_kind, "output")
    f = float(target_values(params, xf, y, cfg.loss_kind, "output"))
    oracle = hessian_quad_oracle(params, xf, y, cfg.loss_kind, "output")
    fn = penalty_square_loss if cfg.loss_kind == "square" else penalty_cross_entropy
    hessian = None
    if cfg.include_laplacian and cfg.laplacian_variant == "full":
        from .model import input_hessian
        hessian = input_hessian(params, xf, y, cfg.loss_kind, "output")
    rep = fn(f, y, L, grad.reshape(L.channels, -1), oracle, cfg.include_laplacian,
             cfg.laplacian_variant, hessian)
    return rep.scaled(cfg.strength)


# --------------------------------------------------------------------------
# Monte Carlo check of the expansion


@dataclass
class ExpansionReport:
    eta: float
    empirical_delta: float
    predicted_delta: float
    ratio: float
    stderr: float
    abs_diff: float
    draws: int
    ratio_mode: bool = True

    def as_row(self):
        return {
            "eta": self.eta,
            "empirical_delta": self.empirical_delta,
            "predicted_delta": self.predicted_delta,
            "ratio": self.ratio,
            "stderr": self.stderr,
        }


def predicted_delta(params, L, x, y, eta, loss_kind=None, hess_method="fd"):
    """``eta^2 / 2 (l'' grad f^T L grad f + l' tr(L Hess f))`` at ``x``."""
    loss_kind = loss_kind or default_loss(params)
    xf = np.asarray(x, dtype=float).reshape(-1)
    f = float(target_values(params, xf, y, loss_kind, "output"))
    _, d1, d2 = loss_derivatives(f, y, loss_kind)
    grad = input_gradient(params, xf, y, loss_kind, "output").reshape(L.channels, -1)
    quad = calculus.quadratic_form(L, grad)
    lap = 0.0
    if d1 != 0.0:
        oracle = hessian_quad_oracle(params, xf, y, loss_kind, "output", hess_method)
        lap = calculus.modified_laplacian(L, oracle)
    return 0.5 * eta**2 * (float(d2) * quad + float(d1) * lap)


def verify_expansion_mc(params, example, cfg, draws, loss_kind=None, graph=None,
                        antithetic=True, chunk=50_000, hess_method="fd"):
    """Compare the sampled loss increase under noise with its second-order prediction.

    ``example`` is ``(x, y)``; ``params`` must have a scalar head.  With
    ``antithetic`` each standard-normal draw is used as ``+xi`` and ``-xi``,
    which cancels odd-order terms without biasing the mean.
    """
    if params.head == "softmax":
        raise InvalidArgumentError("expansion check needs a scalar-output model")
    if graph is None:
        raise InvalidArgumentError("a pixel graph is required")
    loss_kind = loss_kind or default_loss(params)
    x, y = example
    L = build_laplacian(graph, x, floor=cfg.floor)
    xf = L.x.reshape(-1)
    base = float(target_values(params, xf, y, loss_kind, "loss"))
    rng = cfg.rng()
    total, total_sq, done = 0.0, 0.0, 0
    while done < draws:
        m = min(chunk, draws - done)
        xi = sample_noise(L, cfg, m, rng=rng).reshape(m, -1)
        yy = np.full(m, y, dtype=float)
        up = target_values(params, xf + xi, yy, loss_kind, "loss")
        if antithetic:
            dn = target_values(params, xf - xi, yy, loss_kind, "loss")
            d = 0.5 * (up + dn) - base
        else:
            d = up - base
        total += float(d.sum())
        total_sq += float(np.sum(d * d))
        done += m
    mean = total / draws
    var = max(total_sq / draws - mean * mean, 0.0) * draws / max(draws - 1, 1)
    stderr = float(np.sqrt(var / draws))
    pred = predicted_delta(params, L, xf, y, cfg.eta, loss_kind, hess_method)
    ratio_mode = abs(pred) > 1e-15
    ratio = mean / pred if ratio_mode else float("nan")
    return ExpansionReport(cfg.eta, mean, pred, ratio, stderr, abs(mean - pred), draws, ratio_mode)
