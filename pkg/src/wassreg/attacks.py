"""White-box sign-gradient attacks and the Wasserstein perturbation budget."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import calculus
from .errors import InvalidArgumentError
from .graph import build_laplacian
from .model import input_gradient

DEFAULT_EPSILON = 8 / 255
DEFAULT_ALPHA = 2 / 255
DEFAULT_STEPS = 20


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "fgsm"
    epsilon: float = DEFAULT_EPSILON
    alpha: float = DEFAULT_ALPHA
    steps: int = 1
    norm_domain: str = "linf"
    clamp: Optional[tuple] = (0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("fgsm", "ifgsm"):
            raise InvalidArgumentError(f"unknown attack {self.kind!r}")
        if self.epsilon < 0:
            raise InvalidArgumentError("epsilon must be non-negative")
        if self.kind == "ifgsm" and (self.alpha <= 0 or self.steps < 1):
            raise InvalidArgumentError("ifgsm needs alpha > 0 and steps >= 1")
        if self.norm_domain not in ("linf", "wasserstein_quadratic"):
            raise InvalidArgumentError(f"unknown norm domain {self.norm_domain!r}")


def _clamp(x, cfg):
    if cfg.clamp is None:
        return x
    return np.clip(x, cfg.clamp[0], cfg.clamp[1])


def fgsm(params, x, y, cfg, loss_kind=None, graph=None):
    """``clamp(x + eps * sign(grad_x loss))``; works on one input or a batch.

    With ``norm_domain="wasserstein_quadratic"`` the sign direction is
    projected to zero mass change and rescaled so that
    ``xi^T L(x)^+ xi = eps`` (single input, needs ``graph``).
    """
    x = np.asarray(x, dtype=float)
    if cfg.epsilon == 0:
        return x.copy()
    step = np.sign(input_gradient(params, x, y, loss_kind, "loss"))
    if cfg.norm_domain == "linf":
        return _clamp(x + cfg.epsilon * step, cfg)
    if graph is None:
        raise InvalidArgumentError("the Wasserstein budget needs the pixel graph")
    L = build_laplacian(graph, x)
    xi = calculus.project_tangent(L, step)
    xi = rescale_to_budget(L, xi, cfg.epsilon, exact=True)
    return _clamp(x + xi.reshape(x.shape), cfg)


def ifgsm(params, x, y, cfg, loss_kind=None):
    """Iterated FGSM with step ``alpha``, projected onto the L-infinity ball of radius ``eps``."""
    x = np.asarray(x, dtype=float)
    if cfg.norm_domain != "linf":
        raise InvalidArgumentError("ifgsm supports the L-infinity budget only")
    lo, hi = x - cfg.epsilon, x + cfg.epsilon
    # x -/+ eps can round one ulp outside the ball; pull the bounds back in
    lo = np.where(x - lo > cfg.epsilon, np.nextafter(lo, x), lo)
    hi = np.where(hi - x > cfg.epsilon, np.nextafter(hi, x), hi)
    xt = x.copy()
    for _ in range(cfg.steps):
        g = input_gradient(params, xt, y, loss_kind, "loss")
        xt = np.clip(_clamp(xt + cfg.alpha * np.sign(g), cfg), lo, hi)
    return xt


def attack(params, x, y, cfg, loss_kind=None, graph=None):
    if cfg.kind == "fgsm":
        return fgsm(params, x, y, cfg, loss_kind, graph)
    return ifgsm(params, x, y, cfg, loss_kind)


class PerturbationSize(NamedTuple):
    size: float
    projected: bool


def wasserstein_perturbation_size(L, xi):
    """``xi^T L(x)^+ xi``; a vector with net mass change is mean-centred first."""
    xc = L.graph.channels(xi)
    try:
        calculus.check_tangent(L, xc)
        projected = False
    except InvalidArgumentError:
        xc = calculus.project_tangent(L, xc)
        projected = True
    return PerturbationSize(calculus.metric_norm_sq(L, xc), projected)


def rescale_to_budget(L, xi, epsilon, exact=False):
    """Scale ``xi`` by ``sqrt(eps / size)`` when its size exceeds ``eps``.

    ``exact=True`` rescales to the budget boundary whatever the size.
    """
    size, projected = wasserstein_perturbation_size(L, xi)
    xi = np.asarray(xi, dtype=float)
    if projected:
        xi = calculus.project_tangent(L, xi).reshape(xi.shape)
    if size == 0.0:
        return xi.copy()
    if size > epsilon or exact:
        return xi * np.sqrt(epsilon / size)
    return xi.copy()
