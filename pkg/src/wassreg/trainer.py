"""Deterministic minibatch SGD under plain, gradient-penalty and noise objectives.

Objectives (``TrainConfig.objective``):

``plain``
    mean cross entropy.
``euclid_penalty`` / ``wass_penalty``
    ``loss + strength * |grad_x T|^2_G`` with ``G^{-1}`` the identity or
    ``L(x)``; ``T`` is the loss (default) or the true-class probability.
    The parameter gradient of the penalty is exact: one R-pass along
    ``2 * strength * G^{-1} grad_x T``.
``noise_aug``
    plain loss on ``x + xi`` with ``xi ~ N(0, eta^2 L(x))`` drawn per step.

With ``include_laplacian`` the penalty also gets ``strength * Lap_G T``,
estimated with Wasserstein (or isotropic) Gaussian probes; its parameter
gradient uses a central difference of exact mixed derivatives with step
``laplacian_fd_step``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, InvalidArgumentError
from .evaluation import MetricsRow, evaluate_robust, natural_error_pct
from .graph import DEFAULT_FLOOR, edge_mass, laplacian_apply
from .model import backward, default_loss, forward_cache, output_seed, rop
from .noise import edge_noise, sample_noise_batch
from .regularizer import RegularizerConfig

OBJECTIVES = ("plain", "euclid_penalty", "wass_penalty", "noise_aug")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 200
    lr: float = 0.1
    lr_decay: dict = field(default_factory=lambda: {100: 0.1, 150: 0.1})
    momentum: float = 0.9
    weight_decay: float = 1e-4
    objective: str = "plain"
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    noise_eta: float = 0.0
    floor: float = DEFAULT_FLOOR
    seed: int = 0
    hutchinson_probes: int = 1
    laplacian_fd_step: float = 1e-4

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise InvalidArgumentError(f"unknown objective {self.objective!r}")
        if not self.lr > 0:
            raise InvalidArgumentError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidArgumentError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidArgumentError("weight_decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidArgumentError("batch_size must be positive, epochs non-negative")
        if self.noise_eta < 0:
            raise InvalidArgumentError("noise_eta must be non-negative")

    def lr_at(self, epoch):
        lr = self.lr
        for start, factor in sorted(self.lr_decay.items()):
            if epoch >= start:
                lr *= factor
        return lr

    @property
    def metric(self):
        if self.objective == "euclid_penalty":
            return "euclidean"
        if self.objective == "wass_penalty":
            return "wasserstein"
        return None


def _flat(images):
    X = np.asarray(images, dtype=float)
    return X.reshape(len(X), -1)


class _PenaltyTerm:
    """Batch value and parameter gradient of ``|grad_x T|^2_G (+ Lap_G T)``."""

    def __init__(self, graph, cfg, loss_kind="cross_entropy"):
        self.graph = graph
        self.cfg = cfg
        self.loss_kind = loss_kind
        self.metric = cfg.metric
        self.target = "loss" if cfg.regularizer.penalty_target == "loss_gradient" else "output"

    def conductance(self, X):
        if self.metric != "wasserstein":
            return None
        g = self.graph
        Xc = X.reshape(len(X), -1, g.n)
        return g.weights * edge_mass(g, Xc, self.cfg.floor)

    def metric_apply(self, lam, U):
        if lam is None:
            return U
        g = self.graph
        Uc = U.reshape(len(U), -1, g.n)
        return laplacian_apply(g, lam, Uc).reshape(U.shape)

    def probes(self, lam, shape, rng):
        if lam is None:
            return rng.standard_normal(shape)
        z = rng.standard_normal(lam.shape)
        return edge_noise(self.graph, lam, z).reshape(shape)

    def __call__(self, params, cache, y, loss_seed, strength, rng):
        """Return ``(per-example penalty, summed parameter gradient)``."""
        if self.target == "loss":
            _, delta, rdelta = loss_seed
        else:
            _, delta, rdelta = output_seed(params, cache.z[-1], y, self.loss_kind, "output")
        _, G = backward(params, cache, delta)
        lam = self.conductance(cache.a[0])
        MG = self.metric_apply(lam, G)
        per = np.sum(G * MG, axis=1)
        grads, _ = rop(params, cache, delta, rdelta, (2.0 * strength) * MG)
        if self.cfg.regularizer.include_laplacian:
            lap, lap_grads = self.laplacian(params, cache, y, lam, strength, rng)
            per = per + lap
            grads = [(a + c, b + d) for (a, b), (c, d) in zip(grads, lap_grads)]
        return per, grads

    def laplacian(self, params, cache, y, lam, strength, rng):
        X = cache.a[0]
        h = self.cfg.laplacian_fd_step
        k = self.cfg.hutchinson_probes
        est = np.zeros(len(X))
        acc = None
        for _ in range(k):
            xi = self.probes(lam, X.shape, rng)
            _, delta, rdelta = output_seed(params, cache.z[-1], y, self.loss_kind, self.target)
            _, hv = rop(params, cache, delta, rdelta, xi)
            est += np.sum(xi * hv, axis=1) / k
            parts = []
            for sgn in (1.0, -1.0):
                c = forward_cache(params, X + sgn * h * xi)
                _, d, rd = output_seed(params, c.z[-1], y, self.loss_kind, self.target)
                parts.append(rop(params, c, d, rd, xi)[0])
            scale = strength / (2.0 * h * k)
            g = [((a - c) * scale, (b - d) * scale) for (a, b), (c, d) in zip(*parts)]
            acc = g if acc is None else [(a + c, b + d) for (a, b), (c, d) in zip(acc, g)]
        return est, acc


def train(params, dataset, cfg, graph=None, test=None, attack=None, callback=None):
    """Train a copy of ``params``; returns ``(params, [MetricsRow, ...])``.

    ``dataset`` (and ``test``) expose ``images`` ``(N, C, H, W)`` and
    ``labels``.  ``graph`` is required for the Wasserstein penalty and for
    noise augmentation.  When ``test`` is given each row carries the natural
    test error, and the robust one when ``attack`` is given too.
    """
    X = _flat(dataset.images)
    y = np.asarray(dataset.labels)
    N = len(X)
    if N == 0:
        raise InvalidArgumentError("empty training set")
    if X.shape[1] != params.n_in:
        raise InvalidArgumentError(f"images have {X.shape[1]} values, model expects {params.n_in}")
    needs_graph = cfg.objective == "wass_penalty" or (
        cfg.objective == "noise_aug" and cfg.noise_eta > 0
    )
    if needs_graph and graph is None:
        raise InvalidArgumentError(f"objective {cfg.objective!r} needs a pixel graph")

    params = params.copy()
    tensors = params.tensors()
    velocity = [np.zeros_like(t) for t in tensors]
    shuffle_ss, noise_ss, probe_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    noise_rng = np.random.default_rng(noise_ss)
    probe_rng = np.random.default_rng(probe_ss)

    strength = cfg.regularizer.strength
    penalty = None
    if cfg.objective in ("euclid_penalty", "wass_penalty") and strength > 0:
        penalty = _PenaltyTerm(graph, cfg, default_loss(params))

    loss_kind = default_loss(params)
    rows = []
    t0 = time.perf_counter()
    # overflow surfaces as a non-finite objective and is reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            lr = cfg.lr_at(epoch)
            order = shuffle_rng.permutation(N)
            loss_sum, pen_sum = 0.0, 0.0
            for start in range(0, N, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                Xb, yb = X[idx], y[idx]
                B = len(idx)
                if cfg.objective == "noise_aug" and cfg.noise_eta > 0:
                    Xc = Xb.reshape(B, -1, graph.n)
                    xi = sample_noise_batch(graph, Xc, cfg.noise_eta, noise_rng, cfg.floor)
                    Xb = Xb + xi.reshape(Xb.shape)
                cache = forward_cache(params, Xb)
                seed = output_seed(params, cache.z[-1], yb, loss_kind, "loss")
                vals = seed[0]
                grads, _ = backward(params, cache, seed[1])
                pen = None
                if penalty is not None:
                    pen, pgrads = penalty(params, cache, yb, seed, strength, probe_rng)
                    grads = [(gw + pw, gb + pb) for (gw, gb), (pw, pb) in zip(grads, pgrads)]
                batch_loss = float(vals.mean())
                batch_pen = 0.0 if pen is None else float(pen.mean())
                if not (np.isfinite(batch_loss) and np.isfinite(batch_pen)):
                    raise DivergenceError(
                        f"non-finite objective at epoch {epoch}",
                        {"epoch": epoch, "batch_start": start, "loss": batch_loss,
                         "penalty": batch_pen, "lr": lr},
                    )
                loss_sum += batch_loss * B
                pen_sum += batch_pen * B
                flat_grads = [t for pair in grads for t in pair]
                for t, g, v in zip(tensors, flat_grads, velocity):
                    g = g / B
                    if cfg.weight_decay:
                        g = g + cfg.weight_decay * t
                    v *= cfg.momentum
                    v += g
                    t -= lr * v
            row = MetricsRow(
                epoch=epoch,
                train_loss=loss_sum / N,
                penalty_value=pen_sum / N,
                natural_test_error_pct=None,
                robust_test_error_pct=None,
                wall_time=time.perf_counter() - t0,
            )
            if test is not None:
                row.natural_test_error_pct = natural_error_pct(params, test.images, test.labels)
                if attack is not None:
                    row.robust_test_error_pct = evaluate_robust(params, test, attack, graph=graph)[
                        "robust_test_error_pct"
                    ]
            rows.append(row)
            if callback is not None:
                callback(row, params)
    params.meta.update({"epoch": cfg.epochs, "seed": cfg.seed})
    return params, rows


def train_with_noise(params, dataset, cfg, graph=None, **kwargs):
    """:func:`train` with the noise-augmentation objective."""
    if cfg.objective != "noise_aug":
        cfg = replace(cfg, objective="noise_aug")
    return train(params, dataset, cfg, graph=graph, **kwargs)


def penalty_value(params, dataset, cfg, graph=None):
    """Mean ``|grad_x T|^2_G`` over ``dataset`` under the penalty metric of ``cfg``."""
    X = _flat(dataset.images)
    y = np.asarray(dataset.labels)
    term = _PenaltyTerm(graph, cfg, default_loss(params))
    if term.metric is None:
        term.metric = "euclidean"
    cache = forward_cache(params, X)
    seed = output_seed(params, cache.z[-1], y, default_loss(params), term.target)
    _, G = backward(params, cache, seed[1])
    MG = term.metric_apply(term.conductance(X), G)
    return float(np.mean(np.sum(G * MG, axis=1)))
