"""Softplus multilayer perceptron with hand-written first and second order passes.

Layer ``l`` computes ``z_l = a_l W_l + b_l``; hidden activations are
``a_{l+1} = softplus(z_l)``.  The last pre-activation feeds one of three
heads: ``softmax`` (k classes), ``sigmoid`` or ``identity`` (one output).

Besides the usual reverse pass, :func:`rop` propagates a tangent of the
*input* through forward and backward passes (Pearlmutter's R-operator).
That yields exact input Hessian-vector products and the mixed derivative
``d/dtheta <v, grad_x T>`` needed to train through a gradient penalty.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .errors import DomainError, InvalidArgumentError

HEADS = ("softmax", "sigmoid", "identity")
TARGETS = ("loss", "output", "logit")
LOSS_KINDS = ("square", "cross_entropy")


@dataclass
class ModelParams:
    weights: list
    biases: list
    head: str = "softmax"
    activation: str = "softplus"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.head not in HEADS:
            raise InvalidArgumentError(f"unknown head {self.head!r}")
        if self.activation != "softplus":
            raise InvalidArgumentError("only softplus activations are supported")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidArgumentError("weights and biases must be non-empty and paired")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise InvalidArgumentError(f"layer {k}: bias/weight shapes disagree")
            if k and W.shape[0] != self.weights[k - 1].shape[1]:
                raise InvalidArgumentError(f"layer {k}: input size does not chain")
        if self.head != "softmax" and self.n_out != 1:
            raise InvalidArgumentError(f"{self.head} head needs a single output")

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_in(self):
        return self.weights[0].shape[0]

    @property
    def n_out(self):
        return self.weights[-1].shape[1]

    def tensors(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self):
        return ModelParams(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.head,
            self.activation,
            dict(self.meta),
        )


def init_params(sizes, head="softmax", seed=0):
    """Fan-in scaled uniform weights ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases, head)


def default_loss(params):
    return "square" if params.head == "identity" else "cross_entropy"


def _batch(params, x):
    x = np.asarray(x, dtype=float)
    if x.size == params.n_in:
        return x.reshape(1, -1), True
    if x.ndim < 2 or int(np.prod(x.shape[1:])) != params.n_in:
        raise InvalidArgumentError(f"input of shape {x.shape} does not match {params.n_in} inputs")
    return x.reshape(len(x), -1), False


def _softplus(z):
    return np.logaddexp(0.0, z)


@dataclass
class Cache:
    a: list  # a[0] is the input batch
    z: list


def forward_cache(params, X):
    a, zs = [X], []
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a[-1] @ W + b
        zs.append(z)
        if k < last:
            a.append(_softplus(z))
    return Cache(a, zs)


def _head(params, z):
    if params.head == "softmax":
        return softmax(z, axis=1)
    if params.head == "sigmoid":
        return expit(z[:, 0])
    return z[:, 0].copy()


def forward(params, x):
    """Class probabilities (softmax head) or the scalar output ``f(x)``."""
    X, single = _batch(params, x)
    out = _head(params, forward_cache(params, X).z[-1])
    return out[0] if single else out


# --------------------------------------------------------------------------
# scalar losses


def loss_derivatives(f, y, kind):
    """``(l, l', l'')`` of a scalar loss with respect to the prediction ``f``."""
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    if kind == "square":
        r = f - y
        return r * r, 2.0 * r, np.full_like(r, 2.0)
    if kind == "cross_entropy":
        if np.any((f <= 0) | (f >= 1)):
            raise DomainError("cross entropy needs predictions strictly inside (0, 1)")
        l = -y * np.log(f) - (1 - y) * np.log1p(-f)
        d1 = -y / f + (1 - y) / (1 - f)
        d2 = y / f**2 + (1 - y) / (1 - f) ** 2
        return l, d1, d2
    raise InvalidArgumentError(f"unknown loss {kind!r}")


def _check_loss(params, loss_kind):
    if loss_kind not in LOSS_KINDS:
        raise InvalidArgumentError(f"unknown loss {loss_kind!r}")
    if params.head == "softmax" and loss_kind != "cross_entropy":
        raise InvalidArgumentError("softmax head supports cross_entropy only")
    if params.head == "identity" and loss_kind == "cross_entropy":
        raise InvalidArgumentError("identity head cannot use cross_entropy")


def output_seed(params, z, y, loss_kind, target):
    """Per-example target values, ``dT/dz`` and the tangent map ``zdot -> d(dT/dz)``."""
    if target not in TARGETS:
        raise InvalidArgumentError(f"unknown target {target!r}")
    B, K = z.shape
    if params.head == "softmax":
        y = np.asarray(y, dtype=int).reshape(B)
        onehot = np.zeros((B, K))
        onehot[np.arange(B), y] = 1.0
        if target == "logit":
            return z[np.arange(B), y], onehot, lambda zd: np.zeros_like(zd)
        p = softmax(z, axis=1)

        def pdot(zd):
            return p * (zd - np.sum(p * zd, axis=1, keepdims=True))

        if target == "loss":
            _check_loss(params, loss_kind)
            val = -log_softmax(z, axis=1)[np.arange(B), y]
            return val, p - onehot, pdot
        py = p[np.arange(B), y][:, None]
        delta = py * (onehot - p)

        def rdelta(zd):
            pd = pdot(zd)
            return pd[np.arange(B), y][:, None] * (onehot - p) - py * pd

        return py[:, 0], delta, rdelta

    zz = z[:, 0]
    if target == "logit":
        return zz.copy(), np.ones((B, 1)), lambda zd: np.zeros_like(zd)
    if params.head == "sigmoid":
        f = expit(zz)
        h1, h2 = f * (1 - f), f * (1 - f) * (1 - 2 * f)
    else:
        f, h1, h2 = zz.copy(), np.ones(B), np.zeros(B)
    if target == "output":
        return f, h1[:, None], lambda zd: (h2[:, None] * zd)
    _check_loss(params, loss_kind)
    y = np.asarray(y, dtype=float).reshape(B)
    if params.head == "sigmoid" and loss_kind == "cross_entropy":
        # stable in the logit; equals l' h' and l'' h'^2 + l' h''
        val = _softplus(zz) - y * zz
        return val, (f - y)[:, None], lambda zd: (h1[:, None] * zd)
    l, d1, d2 = loss_derivatives(f, y, loss_kind)
    c2 = d2 * h1 * h1 + d1 * h2
    return l, (d1 * h1)[:, None], lambda zd: (c2[:, None] * zd)


def backward(params, cache, delta):
    """Reverse pass from ``dT/dz_out``; returns ``([(gW, gb), ...], dT/dx)`` summed over the batch."""
    grads = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        W = params.weights[k]
        grads[k] = (cache.a[k].T @ delta, delta.sum(axis=0))
        back = delta @ W.T
        if k == 0:
            return grads, back
        delta = back * expit(cache.z[k - 1])


def rop(params, cache, delta, rdelta, V):
    """Directional derivative along the input tangent ``V`` of the reverse pass.

    Returns ``([(gW', gb'), ...], (dT/dx)')``; the second item is the input
    Hessian-vector product, the first the mixed derivative
    ``d/dtheta sum_b <V_b, dT_b/dx_b>``.
    """
    adot, zdot = [V], []
    last = len(params.weights) - 1
    for k, W in enumerate(params.weights):
        zd = adot[-1] @ W
        zdot.append(zd)
        if k < last:
            adot.append(expit(cache.z[k]) * zd)
    ddelta = rdelta(zdot[-1])
    grads = [None] * len(params.weights)
    for k in range(last, -1, -1):
        W = params.weights[k]
        grads[k] = (adot[k].T @ delta + cache.a[k].T @ ddelta, ddelta.sum(axis=0))
        back, back_dot = delta @ W.T, ddelta @ W.T
        if k == 0:
            return grads, back_dot
        s = expit(cache.z[k - 1])
        delta, ddelta = back * s, back_dot * s + back * s * (1 - s) * zdot[k - 1]


# --------------------------------------------------------------------------
# public gradients


def target_values(params, x, y=None, loss_kind=None, target="loss"):
    X, single = _batch(params, x)
    loss_kind = loss_kind or default_loss(params)
    z = forward_cache(params, X).z[-1]
    vals = output_seed(params, z, _labels(y, len(X)), loss_kind, target)[0]
    return vals[0] if single else vals


def _labels(y, B):
    if y is None:
        return np.zeros(B)
    y = np.asarray(y)
    return np.broadcast_to(y, (B,)) if y.ndim == 0 else y


def input_gradient(params, x, y=None, loss_kind=None, target="loss"):
    """Exact ``d target / d x`` with the shape of ``x`` (per example for batches)."""
    X, single = _batch(params, x)
    loss_kind = loss_kind or default_loss(params)
    cache = forward_cache(params, X)
    _, delta, _ = output_seed(params, cache.z[-1], _labels(y, len(X)), loss_kind, target)
    _, gx = backward(params, cache, delta)
    return gx.reshape(np.shape(x))


def param_gradient(params, X, y, loss_kind=None):
    """Mean loss over the batch and its parameter gradient ``[(gW, gb), ...]``."""
    X, _ = _batch(params, X)
    loss_kind = loss_kind or default_loss(params)
    cache = forward_cache(params, X)
    vals, delta, _ = output_seed(params, cache.z[-1], _labels(y, len(X)), loss_kind, "loss")
    grads, _ = backward(params, cache, delta / len(X))
    return float(vals.mean()), grads


def input_hvp(params, x, v, y=None, loss_kind=None, target="loss"):
    """Exact input Hessian-vector product ``Hess_x(target) v``."""
    X, single = _batch(params, x)
    V = np.asarray(v, dtype=float).reshape(X.shape)
    loss_kind = loss_kind or default_loss(params)
    cache = forward_cache(params, X)
    _, delta, rdelta = output_seed(params, cache.z[-1], _labels(y, len(X)), loss_kind, target)
    _, hv = rop(params, cache, delta, rdelta, V)
    return hv.reshape(np.shape(x))


def fd_step(x):
    return 1e-4 * (1.0 + float(np.max(np.abs(x))))


def input_dir_second_derivative(params, x, direction, y=None, loss_kind=None,
                                target="loss", method="fd", h=None):
    """``d^T Hess_x(target) d`` for a single input.

    ``method="fd"`` differences the exact input gradient,
    ``(g(x + h d) - g(x - h d)) . d / 2h``; ``"exact"`` uses :func:`input_hvp`.
    """
    d = np.asarray(direction, dtype=float).reshape(-1)
    if not np.any(d):
        raise InvalidArgumentError("direction must be non-zero")
    xf = np.asarray(x, dtype=float).reshape(-1)
    if method == "exact":
        return float(input_hvp(params, xf, d, y, loss_kind, target) @ d)
    if h is None:
        h = fd_step(xf)
    if not h > 1e-12 * (1.0 + np.max(np.abs(xf))):
        raise InvalidArgumentError(f"finite-difference step {h} underflows")
    both = np.stack([xf + h * d, xf - h * d])
    yy = None if y is None else np.broadcast_to(np.asarray(y), (2,))
    g = input_gradient(params, both, yy, loss_kind, target)
    return float((g[0] - g[1]) @ d / (2.0 * h))


def hessian_quad_oracle(params, x, y=None, loss_kind=None, target="output", method="fd"):
    """Callable ``direction -> second derivative`` for :func:`wassreg.calculus.modified_laplacian`."""
    def oracle(direction):
        return input_dir_second_derivative(params, x, direction, y, loss_kind, target, method)
    return oracle


def input_hessian(params, x, y=None, loss_kind=None, target="output"):
    """Dense input Hessian from exact Hessian-vector products (small inputs only)."""
    n = params.n_in
    xf = np.asarray(x, dtype=float).reshape(-1)
    X = np.broadcast_to(xf, (n, n))
    yy = None if y is None else np.broadcast_to(np.asarray(y), (n,))
    H = input_hvp(params, X, np.eye(n), yy, loss_kind, target)
    return 0.5 * (H + H.T)
