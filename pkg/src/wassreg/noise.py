"""Wasserstein-Gaussian input noise with covariance ``eta^2 L(x)``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .graph import DEFAULT_FLOOR, edge_mass


@dataclass(frozen=True)
class NoiseConfig:
    eta: float
    seed: int = 0
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if not self.eta > 0:
            raise InvalidArgumentError("eta must be positive")

    def rng(self):
        return np.random.default_rng(self.seed)


def edge_noise(graph, lam, z):
    """Push per-edge standard normals ``z`` (..., E) through ``B^T sqrt(lam)``.

    Every edge adds ``+s`` at one endpoint and ``-s`` at the other, so the
    result sums to zero per channel up to rounding.
    """
    B = graph.incidence_unweighted
    flux = np.sqrt(lam) * z
    return np.asarray(flux.reshape(-1, flux.shape[-1]) @ B).reshape(flux.shape[:-1] + (graph.n,))


def sample_noise(L, cfg, count=1, rng=None):
    """Draw ``count`` tangent vectors ``xi = eta B^T Lambda^{1/2} z``.

    Returns an array of shape ``(count, C, n)``.  ``rng`` overrides the
    generator built from ``cfg.seed``, for callers that keep one stream.
    """
    if count < 1:
        raise InvalidArgumentError("count must be at least 1")
    if rng is None:
        rng = cfg.rng()
    z = rng.standard_normal((count,) + L.lam.shape)
    return cfg.eta * edge_noise(L.graph, L.lam, z)


def sample_noise_batch(graph, X, eta, rng, floor=DEFAULT_FLOOR):
    """One draw per image for a batch ``X`` of shape ``(B, C, n)``."""
    lam = graph.weights * edge_mass(graph, X, floor)
    z = rng.standard_normal(lam.shape)
    return eta * edge_noise(graph, lam, z)
