"""Natural, adversarial and translation robustness metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError

METRICS_COLUMNS = (
    "epoch",
    "train_loss",
    "penalty_value",
    "natural_test_error_pct",
    "robust_test_error_pct",
    "wall_time",
)


@dataclass
class MetricsRow:
    epoch: int
    train_loss: float
    penalty_value: float
    natural_test_error_pct: Optional[float]
    robust_test_error_pct: Optional[float]
    wall_time: float

    def as_dict(self):
        return asdict(self)


def predict(model, images):
    """Predicted labels for a batch; ``model`` is ``ModelParams`` or a callable."""
    X = np.asarray(images, dtype=float)
    if callable(model):
        return np.asarray(model(X))
    from .model import forward_cache

    z = forward_cache(model, X.reshape(len(X), -1)).z[-1]
    if model.head == "softmax":
        return np.argmax(z, axis=1)
    threshold = 0.0 if model.head == "sigmoid" else 0.5
    return (z[:, 0] > threshold).astype(int)


def natural_error_pct(model, images, labels):
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise InvalidArgumentError("empty evaluation set")
    return float(100.0 * np.mean(predict(model, images) != labels))


def evaluate_robust(model, dataset, attack_cfg, loss_kind=None, graph=None, batch=512):
    """Error percentages on clean and white-box attacked copies of ``dataset``."""
    from .attacks import attack

    X = np.asarray(dataset.images, dtype=float)
    y = np.asarray(dataset.labels)
    natural = natural_error_pct(model, X, y)
    if attack_cfg.epsilon == 0:
        robust = natural
    elif attack_cfg.norm_domain == "linf":
        wrong = 0
        for s in range(0, len(X), batch):
            Xa = attack(model, X[s:s + batch], y[s:s + batch], attack_cfg, loss_kind)
            wrong += int(np.sum(predict(model, Xa) != y[s:s + batch]))
        robust = 100.0 * wrong / len(X)
    else:
        Xa = np.stack([attack(model, x, t, attack_cfg, loss_kind, graph) for x, t in zip(X, y)])
        robust = natural_error_pct(model, Xa, y)
    return {"natural_test_error_pct": natural, "robust_test_error_pct": float(robust)}


def translate(images, shift, direction="horizontal", fill=0.0):
    """Shift images ``(..., H, W)`` by ``shift`` pixels, padding with ``fill``."""
    X = np.asarray(images, dtype=float)
    axis = X.ndim - 1 if direction == "horizontal" else X.ndim - 2
    if direction not in ("horizontal", "vertical"):
        raise InvalidArgumentError(f"unknown direction {direction!r}")
    out = np.full_like(X, fill)
    n = X.shape[axis]
    if abs(shift) >= n:
        return out
    src = [slice(None)] * X.ndim
    dst = [slice(None)] * X.ndim
    if shift >= 0:
        src[axis], dst[axis] = slice(0, n - shift), slice(shift, n)
    else:
        src[axis], dst[axis] = slice(-shift, n), slice(0, n + shift)
    out[tuple(dst)] = X[tuple(src)]
    return out


def count_flips(labels):
    labels = np.asarray(labels)
    return int(np.sum(labels[1:] != labels[:-1]))


def evaluate_translation_flips(model, dataset, direction="horizontal", max_shift=4,
                               sample_count=1000, seed=0):
    """Mean number of label changes along shifts ``-max_shift .. max_shift``."""
    X = np.asarray(dataset.images, dtype=float)
    size = X.shape[-1] if direction == "horizontal" else X.shape[-2]
    if max_shift >= size:
        raise InvalidArgumentError("max_shift must be smaller than the image size")
    m = min(sample_count, len(X))
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(X), size=m, replace=False))
    shifts = np.arange(-max_shift, max_shift + 1)
    preds = np.stack([predict(model, translate(X[pick], s, direction)) for s in shifts], axis=1)
    flips = np.sum(preds[:, 1:] != preds[:, :-1], axis=1)
    return float(flips.mean())
