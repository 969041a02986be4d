import itertools

import numpy as np
import pytest

from wassreg.data import Dataset
from wassreg.errors import DivergenceError, InvalidArgumentError
from wassreg.graph import build_grid_graph
from wassreg.model import init_params, param_gradient
from wassreg.regularizer import RegularizerConfig
from wassreg.trainer import TrainConfig, _PenaltyTerm, penalty_value, train, train_with_noise
from wassreg.model import forward_cache, output_seed


def toy_set(n=60, seed=0):
    """Two classes on 3x3 images, separable by the mean of the left column minus the right."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.1, 0.9, size=(n, 3, 3))
    y = (X[:, :, 0].mean(1) > X[:, :, 2].mean(1)).astype(int)
    gap = np.where(y == 1, 0.1, -0.1)
    X[:, :, 0] = np.clip(X[:, :, 0] + gap[:, None], 0, 1)
    X[:, :, 2] = np.clip(X[:, :, 2] - gap[:, None], 0, 1)
    return Dataset(X, y)


GRAPH = build_grid_graph(3, 3, 1)
FAST = dict(batch_size=16, epochs=5, lr=0.05, lr_decay={})


def _params(seed=0):
    return init_params([9, 12, 2], "softmax", seed=seed)


def _same(a, b):
    return all(s.tobytes() == t.tobytes() for s, t in zip(a.tensors(), b.tensors()))


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(lr=0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(momentum=1.0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(objective="adversarial")


def test_default_schedule():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.momentum, cfg.weight_decay, cfg.lr) == (128, 0.9, 1e-4, 0.1)
    assert cfg.lr_at(99) == 0.1
    assert cfg.lr_at(100) == pytest.approx(0.01)
    assert cfg.lr_at(150) == pytest.approx(0.001)


def test_plain_penalty_column_zero():
    _, rows = train(_params(), toy_set(), TrainConfig(**FAST))
    assert all(r.penalty_value == 0.0 for r in rows)


def test_zero_strength_bitwise():
    data = toy_set()
    ref, ref_rows = train(_params(), data, TrainConfig(**FAST))
    for obj in ("euclid_penalty", "wass_penalty"):
        cfg = TrainConfig(objective=obj, regularizer=RegularizerConfig(strength=0.0), **FAST)
        out, rows = train(_params(), data, cfg, graph=GRAPH)
        assert _same(ref, out)
        assert [r.train_loss for r in rows] == [r.train_loss for r in ref_rows]


def test_zero_noise_bitwise():
    data = toy_set()
    ref, _ = train(_params(), data, TrainConfig(**FAST))
    out, _ = train_with_noise(_params(), data, TrainConfig(noise_eta=0.0, **FAST), graph=GRAPH)
    assert _same(ref, out)


def test_reproducible():
    data = toy_set()
    cfg = TrainConfig(objective="wass_penalty", regularizer=RegularizerConfig(strength=1e-3), **FAST)
    a, ra = train(_params(), data, cfg, graph=GRAPH)
    b, rb = train(_params(), data, cfg, graph=GRAPH)
    assert _same(a, b)
    assert [r.penalty_value for r in ra] == [r.penalty_value for r in rb]


def test_separable_toy_reaches_zero_error():
    data = toy_set()
    cfg = TrainConfig(batch_size=16, epochs=50, lr=0.1, lr_decay={})
    params, rows = train(_params(), data, cfg, test=data)
    assert rows[-1].natural_test_error_pct == 0.0


def test_noise_preserves_mass(monkeypatch):
    import wassreg.trainer as tr

    seen = []
    orig = tr.sample_noise_batch

    def spy(graph, X, eta, rng, floor):
        xi = orig(graph, X, eta, rng, floor)
        seen.append(np.abs(xi.sum(axis=-1)).max())
        return xi

    monkeypatch.setattr(tr, "sample_noise_batch", spy)
    train_with_noise(_params(), toy_set(), TrainConfig(noise_eta=0.05, **FAST), graph=GRAPH)
    assert seen and max(seen) <= 1e-12


def test_noise_gap_shrinks():
    """Noise training approaches plain training as eta shrinks."""
    data = toy_set()
    ref, _ = train(_params(), data, TrainConfig(**FAST))
    gaps = []
    for eta in (0.04, 0.02, 0.01):
        out, _ = train_with_noise(_params(), data, TrainConfig(noise_eta=eta, **FAST), graph=GRAPH)
        gaps.append(abs(param_gradient(out, data.images.reshape(len(data), -1), data.labels)[0]
                        - param_gradient(ref, data.images.reshape(len(data), -1), data.labels)[0]))
    assert gaps[0] >= gaps[1] >= gaps[2]


def test_penalty_monotone_in_strength():
    data = toy_set()
    grid = (0.0, 1e-3, 3e-3, 1e-2, 3e-2)
    vals = []
    for s in grid:
        cfg = TrainConfig(objective="wass_penalty", regularizer=RegularizerConfig(strength=s),
                          batch_size=16, epochs=20, lr=0.05, lr_decay={})
        out, _ = train(_params(), data, cfg, graph=GRAPH)
        vals.append(penalty_value(out, data, cfg, GRAPH))
    pairs = list(itertools.combinations(range(len(grid)), 2))
    ok = sum(vals[j] <= vals[i] for i, j in pairs)
    assert ok >= 0.9 * len(pairs)


@pytest.mark.parametrize("obj,target,lap", [
    ("euclid_penalty", "loss_gradient", False),
    ("wass_penalty", "loss_gradient", False),
    ("wass_penalty", "function_gradient", False),
])
def test_penalty_parameter_gradient(obj, target, lap):
    """The trainer's penalty gradient matches finite differences of the batch penalty."""
    data = toy_set(8, seed=3)
    X = data.images.reshape(8, -1)
    y = data.labels
    p = init_params([9, 5, 2], "softmax", seed=2)
    cfg = TrainConfig(objective=obj, regularizer=RegularizerConfig(
        strength=0.7, penalty_target=target, include_laplacian=lap))
    term = _PenaltyTerm(GRAPH, cfg, "cross_entropy")

    def batch_penalty(q):
        cache = forward_cache(q, X)
        seed = output_seed(q, cache.z[-1], y, "cross_entropy", "loss")
        per, grads = term(q, cache, y, seed, 0.7, np.random.default_rng(0))
        return 0.7 * per.sum(), grads

    _, grads = batch_penalty(p)
    h = 1e-6
    W = p.weights[0]
    for idx in [(0, 0), (4, 2), (8, 4)]:
        q1, q2 = p.copy(), p.copy()
        q1.weights[0][idx] += h
        q2.weights[0][idx] -= h
        fd = (batch_penalty(q1)[0] - batch_penalty(q2)[0]) / (2 * h)
        assert grads[0][0][idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)
    assert W.shape == grads[0][0].shape


def test_hutchinson_laplacian_gradient():
    """With fixed probes the Laplacian-term gradient matches finite differences."""
    data = toy_set(6, seed=4)
    X = data.images.reshape(6, -1)
    y = data.labels
    p = init_params([9, 5, 2], "softmax", seed=1)
    cfg = TrainConfig(objective="wass_penalty", regularizer=RegularizerConfig(
        strength=1.0, include_laplacian=True), laplacian_fd_step=1e-5)
    term = _PenaltyTerm(GRAPH, cfg, "cross_entropy")
    lam = term.conductance(X)

    def lap(q):
        cache = forward_cache(q, X)
        return term.laplacian(q, cache, y, lam, 1.0, np.random.default_rng(9))

    est, grads = lap(p)
    h = 1e-6
    for idx in [(0, 0), (3, 1)]:
        q1, q2 = p.copy(), p.copy()
        q1.weights[0][idx] += h
        q2.weights[0][idx] -= h
        fd = (lap(q1)[0].sum() - lap(q2)[0].sum()) / (2 * h)
        assert grads[0][0][idx] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_divergence_snapshot():
    cfg = TrainConfig(batch_size=16, epochs=5, lr=1e300, lr_decay={}, momentum=0.0)
    with pytest.raises(DivergenceError) as err:
        train(_params(), toy_set(), cfg)
    assert "epoch" in err.value.snapshot


def test_requires_graph():
    cfg = TrainConfig(objective="wass_penalty", regularizer=RegularizerConfig(strength=1.0), **FAST)
    with pytest.raises(InvalidArgumentError):
        train(_params(), toy_set(), cfg)
