import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wassreg import calculus as wc
from wassreg.errors import DegenerateMetricError, InvalidArgumentError
from wassreg.graph import build_grid_graph, build_laplacian


def _tangent(rng, n):
    v = rng.normal(size=n)
    return v - v.mean()


# quadratic forms and the stencil path


def test_quadratic_form_hand_value(path3):
    L = build_laplacian(path3, [0.25, 0.5, 0.25], floor=0.0)
    assert wc.quadratic_form(L, [1.0, 0.0, 0.0]) == pytest.approx(1.0, abs=1e-15)


def test_quadratic_form_constant_field(rng):
    g = build_grid_graph(4, 4, 2)
    L = build_laplacian(g, rng.uniform(size=16))
    assert wc.quadratic_form(L, np.full(16, 3.0)) == 0.0


def test_quadratic_form_dense_oracle(rng):
    g = build_grid_graph(8, 8, 2)
    L = build_laplacian(g, rng.uniform(size=64))
    u, v = rng.normal(size=(2, 64))
    A = L.dense()
    assert wc.quadratic_form(L, u) == pytest.approx(u @ A @ u, rel=1e-10)
    assert wc.quadratic_form(L, u, v) == pytest.approx(wc.quadratic_form(L, v, u), rel=1e-12)


def test_quadratic_form_homogeneous(rng):
    g = build_grid_graph(3, 4, 1)
    x = rng.uniform(size=12)
    u = rng.normal(size=12)
    a = wc.quadratic_form(build_laplacian(g, x, floor=0.0), u)
    b = wc.quadratic_form(build_laplacian(g, 2.5 * x, floor=0.0), u)
    assert b == pytest.approx(2.5 * a, rel=1e-14)


@pytest.mark.parametrize("h,w,r", [(4, 4, 1), (8, 8, 2), (5, 7, 3), (6, 3, 4)])
def test_conv_matches_edge_sum(rng, h, w, r):
    g = build_grid_graph(h, w, r)
    x = rng.uniform(size=(h, w))
    gr = rng.normal(size=(h, w))
    conv = wc.wasserstein_grad_norm_conv(g, x, gr)
    assert conv == pytest.approx(wc.quadratic_form(build_laplacian(g, x), gr), rel=1e-10)


def test_conv_constant_gradient(rng):
    g = build_grid_graph(5, 5, 2)
    assert wc.wasserstein_grad_norm_conv(g, rng.uniform(size=25), np.ones(25)) == 0.0


def test_conv_multichannel(rng):
    g = build_grid_graph(4, 5, 2)
    x = rng.uniform(size=(3, 4, 5))
    gr = rng.normal(size=(3, 4, 5))
    ref = wc.quadratic_form(build_laplacian(g, x), gr)
    assert wc.wasserstein_grad_norm_conv(g, x, gr) == pytest.approx(ref, rel=1e-10)


def test_conv_rejects_mismatched_kernels(rng):
    g = build_grid_graph(4, 4, 2)
    kernels = wc.build_kernels(g)[:-1]
    with pytest.raises(RuntimeError):
        wc.wasserstein_grad_norm_conv(g, np.ones(16), np.ones(16), kernels=kernels)


def test_difference_stencil_matches_edge_difference(rng):
    g = build_grid_graph(5, 6, 3)
    u = rng.normal(size=(5, 6))
    L = build_laplacian(g, np.ones(30))
    diffs = L.edge_diff(u.reshape(1, -1))[0]
    for k, kern in enumerate(wc.build_kernels(g)):
        stencil = wc._correlate(u, kern.diff).ravel()
        edge = -diffs[g.edge_relation == k]
        np.testing.assert_allclose(np.sort(stencil), np.sort(edge), atol=1e-12)
        assert np.all(wc._correlate(np.ones((5, 6)), kern.diff) == 0)


# Laplace-Beltrami


def test_modified_laplacian_identity_quadratic(pair):
    L = build_laplacian(pair, [0.5, 0.5], floor=0.0)
    # f = |x|^2 / 2 has Hessian I, so d^T I d = 2 for d = e_i - e_j
    val = wc.modified_laplacian(L, lambda d: float(np.sum(d * d)))
    assert val == pytest.approx(2.0, abs=1e-15)


def test_modified_laplacian_linear(path3):
    L = build_laplacian(path3, [0.2, 0.3, 0.5])
    assert wc.modified_laplacian(L, lambda d: 0.0) == 0.0


def test_modified_laplacian_trace_oracle(path3, rng):
    L = build_laplacian(path3, rng.uniform(size=3))
    A = rng.normal(size=(3, 3))
    A = A + A.T
    val = wc.modified_laplacian(L, lambda d: float(d.ravel() @ A @ d.ravel()))
    assert val == pytest.approx(np.trace(L.dense() @ A), abs=1e-8)


def test_volume_correction_vanishes_on_pair(pair, rng):
    for _ in range(20):
        L = build_laplacian(pair, rng.uniform(0.1, 1.0, size=2))
        assert abs(wc.volume_correction(L, rng.normal(size=2))) <= 1e-10


def test_full_laplacian_linear_pair(pair):
    L = build_laplacian(pair, [0.3, 0.6])
    assert abs(wc.laplace_beltrami_full(L, np.zeros((2, 2)), [1.5, -0.4])) <= 1e-10


def test_full_laplacian_path(path3):
    x = np.array([0.25, 0.5, 0.25])
    L = build_laplacian(path3, x, floor=0.0)
    grad = x.copy()  # f = |x|^2 / 2
    total = wc.laplace_beltrami_full(L, np.eye(3), grad)
    # volume term by central differences of log det
    h = 1e-6
    fd = np.zeros(3)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd[k] = (wc.log_det(build_laplacian(path3, x + e, floor=0.0))
                 - wc.log_det(build_laplacian(path3, x - e, floor=0.0))) / (2 * h)
    expect = 4.0 + grad @ L.dense() @ (-0.5 * fd)
    assert total == pytest.approx(expect, abs=1e-7)


def test_log_det_gradient_finite_difference(rng):
    g = build_grid_graph(2, 3, 2)
    x = rng.uniform(0.2, 1.0, size=6)
    L = build_laplacian(g, x)
    grad = wc.log_det_gradient(L)[0]
    h = 1e-6
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        fd = (wc.log_det(build_laplacian(g, x + e)) - wc.log_det(build_laplacian(g, x - e))) / (2 * h)
        assert grad[k] == pytest.approx(fd, rel=1e-6)


def test_full_laplacian_needs_positive_mass(path3):
    L = build_laplacian(path3, [0.0, 0.5, 0.5], floor=0.0)
    with pytest.raises(DegenerateMetricError):
        wc.laplace_beltrami_full(L, np.eye(3), np.zeros(3))


# metric tensor


def test_metric_norm_pair(pair):
    L = build_laplacian(pair, [0.5, 0.5], floor=0.0)
    assert wc.metric_norm_sq(L, [0.1, -0.1]) == pytest.approx(0.01, rel=1e-12)
    assert wc.metric_norm_sq(L, [0.0, 0.0]) == 0.0


def test_metric_norm_solve_consistency(rng):
    g = build_grid_graph(3, 3, 1)
    L = build_laplacian(g, rng.uniform(0.1, 1, size=9))
    xi = _tangent(rng, 9)
    phi = np.linalg.lstsq(L.dense(), xi, rcond=None)[0]
    assert wc.metric_norm_sq(L, xi) == pytest.approx(xi @ phi, rel=1e-9)


def test_metric_norm_rejects_non_tangent(path3):
    L = build_laplacian(path3, [0.2, 0.3, 0.5])
    with pytest.raises(InvalidArgumentError):
        wc.metric_norm_sq(L, [1.0, 0.0, 0.0])


def test_degenerate_metric(path3):
    L = build_laplacian(path3, [0.0, 0.0, 0.0], floor=0.0)
    with pytest.raises(DegenerateMetricError):
        wc.metric_norm_sq(L, [0.1, 0.0, -0.1])


def test_pseudo_solve_iterative_path(rng):
    g = build_grid_graph(4, 4, 1)
    x = rng.uniform(0.1, 1, size=16)
    xi = _tangent(rng, 16)
    dense = wc.pseudo_solve(build_laplacian(g, x), xi)
    iterative = wc.pseudo_solve(build_laplacian(g, x, dense_cap=4), xi)
    np.testing.assert_allclose(iterative, dense, atol=1e-8)


# connection and Hessian


def test_christoffel_zero_argument(path3, rng):
    L = build_laplacian(path3, rng.uniform(0.1, 1, size=3))
    np.testing.assert_allclose(wc.christoffel(L, np.zeros(3), _tangent(rng, 3)), 0.0)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_christoffel_symmetric_tangent(seed):
    rng = np.random.default_rng(seed)
    g = build_grid_graph(1, 3, 1)
    L = build_laplacian(g, rng.uniform(0.05, 1, size=3))
    s1, s2 = _tangent(rng, 3), _tangent(rng, 3)
    a = wc.christoffel(L, s1, s2)
    b = wc.christoffel(L, s2, s1)
    scale = max(1.0, np.abs(a).max())
    assert np.abs(a - b).max() <= 1e-10 * scale
    assert abs(a.sum()) <= 1e-9 * scale


def test_christoffel_koszul(rng):
    """<Gamma(u, v), w>_g from the metric derivative (Koszul formula, coordinate frame)."""
    g = build_grid_graph(2, 2, 2)
    x = rng.uniform(0.2, 1.0, size=4)
    u, v, w = (_tangent(rng, 4) for _ in range(3))
    L = build_laplacian(g, x)

    def gmet(p, a, b):
        return float(a @ wc.pseudo_solve(build_laplacian(g, p), b).ravel())

    def dg(direction, a, b, h=1e-5):
        return (gmet(x + h * direction, a, b) - gmet(x - h * direction, a, b)) / (2 * h)

    koszul = 0.5 * (dg(u, v, w) + dg(v, u, w) - dg(w, u, v))
    gamma = wc.christoffel(L, u, v).ravel()
    assert gmet(x, gamma, w) == pytest.approx(koszul, rel=1e-6)


def test_riemannian_hessian_critical_point(path3, rng):
    L = build_laplacian(path3, rng.uniform(0.1, 1, size=3))
    H = rng.normal(size=(3, 3))
    H = H + H.T
    s1, s2 = _tangent(rng, 3), _tangent(rng, 3)
    assert wc.riemannian_hessian(L, H, np.zeros(3), s1, s2) == pytest.approx(s1 @ H @ s2, rel=1e-12)


def test_riemannian_hessian_linear(path3, rng):
    L = build_laplacian(path3, rng.uniform(0.1, 1, size=3))
    w = rng.normal(size=3)
    s1, s2 = _tangent(rng, 3), _tangent(rng, 3)
    gamma = wc.christoffel(L, s1, s2).ravel()
    assert wc.riemannian_hessian(L, np.zeros((3, 3)), w, s1, s2) == pytest.approx(-gamma @ w)


def test_riemannian_hessian_along_geodesic(rng):
    """Second derivative of F along an approximate geodesic equals Hess F(v, v)."""
    g = build_grid_graph(1, 3, 1)
    x = np.array([0.3, 0.5, 0.4])
    v = _tangent(rng, 3) * 0.5
    A = rng.normal(size=(3, 3))
    A = A + A.T
    b = rng.normal(size=3)

    def F(p):
        return 0.5 * p @ A @ p + b @ p

    L = build_laplacian(g, x)
    acc = -wc.christoffel(L, v, v).ravel()
    t = 1e-3
    fwd = x + t * v + 0.5 * t * t * acc
    bwd = x - t * v + 0.5 * t * t * acc
    second = (F(fwd) - 2 * F(x) + F(bwd)) / (t * t)
    hess = wc.riemannian_hessian(L, A, A @ x + b, v, v)
    assert hess == pytest.approx(second, rel=1e-5)


def test_riemannian_hessian_symmetric(path3, rng):
    for _ in range(20):
        L = build_laplacian(path3, rng.uniform(0.1, 1, size=3))
        H = rng.normal(size=(3, 3))
        H = H + H.T
        gr = rng.normal(size=3)
        s1, s2 = _tangent(rng, 3), _tangent(rng, 3)
        a = wc.riemannian_hessian(L, H, gr, s1, s2)
        b = wc.riemannian_hessian(L, H, gr, s2, s1)
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


# volume


def test_volume_pair(pair):
    L = build_laplacian(pair, [0.5, 0.5], floor=0.0)
    assert wc.riemannian_volume(L) == pytest.approx(2 ** -0.5, abs=1e-12)


def test_volume_path(path3):
    L = build_laplacian(path3, [0.25, 0.5, 0.25], floor=0.0)
    assert wc.riemannian_volume(L) == pytest.approx(3 ** -0.5, rel=1e-12)


def test_volume_scaling(rng):
    g = build_grid_graph(2, 3, 1)
    x = rng.uniform(0.1, 1, size=6)
    v1 = wc.riemannian_volume(build_laplacian(g, x, floor=0.0))
    v2 = wc.riemannian_volume(build_laplacian(g, 2 * x, floor=0.0))
    assert v2 / v1 == pytest.approx(2 ** (-(6 - 1) / 2), rel=1e-10)
