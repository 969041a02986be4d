import numpy as np
import pytest

from wassreg.attacks import (
    DEFAULT_ALPHA,
    DEFAULT_EPSILON,
    DEFAULT_STEPS,
    AttackConfig,
    attack,
    fgsm,
    ifgsm,
    rescale_to_budget,
    wasserstein_perturbation_size,
)
from wassreg.errors import InvalidArgumentError
from wassreg.graph import build_grid_graph, build_laplacian
from wassreg.model import init_params, input_gradient, target_values


@pytest.fixture
def model():
    p = init_params([9, 8, 3], "softmax", seed=5)
    p.biases = [np.random.default_rng(1).normal(scale=0.3, size=b.shape) for b in p.biases]
    return p


def test_standard_settings():
    assert DEFAULT_EPSILON == 8 / 255 and DEFAULT_ALPHA == 2 / 255 and DEFAULT_STEPS == 20


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        AttackConfig(epsilon=-0.1)
    with pytest.raises(InvalidArgumentError):
        AttackConfig("ifgsm", alpha=0.0)
    with pytest.raises(InvalidArgumentError):
        AttackConfig("pgd")


def test_epsilon_zero(model, rng):
    x = rng.uniform(size=9)
    for kind in ("fgsm", "ifgsm"):
        np.testing.assert_array_equal(attack(model, x, 1, AttackConfig(kind, 0.0)), x)


def test_sign_step():
    p = init_params([2, 1], "identity")
    p.weights[0][:, 0] = [0.3, -0.2]
    x = np.array([0.5, 0.5])
    out = fgsm(p, x, -10.0, AttackConfig("fgsm", 0.1, clamp=None), loss_kind="square")
    np.testing.assert_allclose(out, [0.6, 0.4])


def test_zero_gradient_no_step():
    p = init_params([2, 1], "identity")
    p.weights[0][:, 0] = [0.0, 1.0]
    out = fgsm(p, np.array([0.5, 0.5]), -1.0, AttackConfig("fgsm", 0.1), loss_kind="square")
    assert out[0] == 0.5


def test_ifgsm_one_step_equals_fgsm(model, rng):
    x = rng.uniform(0.2, 0.8, size=(5, 9))
    y = np.arange(5) % 3
    a = ifgsm(model, x, y, AttackConfig("ifgsm", 0.05, 0.02, 1))
    b = fgsm(model, x, y, AttackConfig("fgsm", 0.02))
    np.testing.assert_array_equal(a, b)


def test_ifgsm_budget(model, rng):
    x = rng.uniform(size=(20, 9))
    y = np.arange(20) % 3
    out = ifgsm(model, x, y, AttackConfig("ifgsm", 0.03, 0.01, 10))
    assert np.abs(out - x).max() <= 0.03 + 1e-12
    assert out.min() >= 0 and out.max() <= 1


def test_ifgsm_more_steps_not_weaker(model, rng):
    better = 0
    for k in range(50):
        x = rng.uniform(0.2, 0.8, size=9)
        y = k % 3
        one = target_values(model, ifgsm(model, x, y, AttackConfig("ifgsm", 0.05, 0.05, 1)), y)
        many = target_values(model, ifgsm(model, x, y, AttackConfig("ifgsm", 0.05, 0.01, 10)), y)
        better += many >= one - 1e-12
    assert better >= 45


def test_ifgsm_rejects_wasserstein(model):
    with pytest.raises(InvalidArgumentError):
        ifgsm(model, np.ones(9), 0, AttackConfig("ifgsm", 0.1, 0.1, 1, "wasserstein_quadratic"))


def test_wasserstein_size_pair(pair):
    L = build_laplacian(pair, [0.5, 0.5], floor=0.0)
    res = wasserstein_perturbation_size(L, [0.1, -0.1])
    assert res.size == pytest.approx(0.01) and not res.projected
    assert wasserstein_perturbation_size(L, [0.0, 0.0]).size == 0.0


def test_wasserstein_size_projects(pair):
    L = build_laplacian(pair, [0.5, 0.5], floor=0.0)
    res = wasserstein_perturbation_size(L, [0.3, 0.1])
    assert res.projected and res.size == pytest.approx(0.01)


def test_rescale_budget(rng):
    g = build_grid_graph(3, 3, 1)
    for _ in range(50):
        L = build_laplacian(g, rng.uniform(0.1, 1, size=9))
        xi = rng.normal(size=9)
        eps = float(rng.uniform(1e-3, 1.0))
        out = rescale_to_budget(L, xi, eps)
        assert wasserstein_perturbation_size(L, out).size <= eps * (1 + 1e-9)


def test_fgsm_wasserstein_domain(model, rng):
    g = build_grid_graph(3, 3, 1)
    x = rng.uniform(0.3, 0.7, size=9)
    cfg = AttackConfig("fgsm", 1e-3, norm_domain="wasserstein_quadratic")
    out = fgsm(model, x, 1, cfg, graph=g)
    L = build_laplacian(g, x)
    assert wasserstein_perturbation_size(L, out - x).size == pytest.approx(1e-3, rel=1e-9)
    with pytest.raises(InvalidArgumentError):
        fgsm(model, x, 1, cfg)


def test_batch_matches_single(model, rng):
    X = rng.uniform(size=(4, 9))
    y = np.array([0, 1, 2, 0])
    batch = fgsm(model, X, y, AttackConfig())
    for k in range(4):
        np.testing.assert_array_equal(batch[k], fgsm(model, X[k], y[k], AttackConfig()))
    assert input_gradient(model, X, y).shape == X.shape
