import numpy as np
import pytest

from regilqr.cost import (
    IsoQuadratic,
    QuadraticTracking,
    SmoothPerturbed,
    mu_total,
    newton_decrement,
    total_cost,
    total_grad_hess,
)
from regilqr.dense_ref import fd_gradient
from regilqr.errors import DimensionError, SingularHessianError

from conftest import random_psd


def _costs(rng, tau=4, n=3):
    W = np.stack([random_psd(rng, n, shift=0.1) for _ in range(tau)])
    return [
        QuadraticTracking(rng.standard_normal((tau, n)), W),
        IsoQuadratic(2.0, tau, n, targets=rng.standard_normal(n)),
        SmoothPerturbed(1.0, 3.0, 0.7, tau, n, targets=rng.standard_normal(n)),
    ]


def test_total_cost_zero():
    c = QuadraticTracking(np.zeros((3, 2)), 0.0)
    assert total_cost(c, np.ones((3, 2))) == 0.0


def test_total_cost_half_norm():
    c = IsoQuadratic(1.0, 2, 2)
    assert total_cost(c, [[1.0, 0.0], [0.0, 2.0]]) == 2.5


def test_total_cost_resum(rng):
    for c in _costs(rng):
        X = rng.standard_normal((c.horizon, c.n_x))
        expect = 0.0
        for t in range(c.horizon):
            expect += c.eval_t(t + 1, X[t])
        assert total_cost(c, X) == pytest.approx(expect, rel=1e-14)


def test_total_cost_shape_error():
    c = IsoQuadratic(1.0, 2, 2)
    with pytest.raises(DimensionError):
        total_cost(c, np.zeros((3, 2)))
    with pytest.raises(DimensionError):
        total_grad_hess(c, np.zeros((2, 3)))


def test_grad_hess_half_norm(rng):
    c = IsoQuadratic(1.0, 3, 2)
    X = rng.standard_normal((3, 2))
    g, H = total_grad_hess(c, X)
    np.testing.assert_array_equal(g, X.ravel())
    np.testing.assert_array_equal(H, np.broadcast_to(np.eye(2), (3, 2, 2)))


def test_grad_at_zero_repeats_g0():
    g0 = np.array([1.5, -2.0])
    c = QuadraticTracking(np.linalg.solve(np.diag([2.0, 4.0]), -g0), np.array([2.0, 4.0]), horizon=3)
    g, _ = total_grad_hess(c, np.zeros((3, 2)))
    np.testing.assert_allclose(g, np.tile(g0, 3), rtol=1e-15)


def test_grad_matches_fd(rng):
    for c in _costs(rng):
        X = rng.standard_normal((c.horizon, c.n_x))
        g, _ = total_grad_hess(c, X)
        gfd = fd_gradient(lambda z: total_cost(c, z.reshape(X.shape)), X.ravel())
        assert np.linalg.norm(g - gfd) <= 1e-5 * np.linalg.norm(g)


def test_hess_symmetric_and_fd(rng):
    for c in _costs(rng):
        for t in range(1, c.horizon + 1):
            x = rng.standard_normal(c.n_x)
            H = c.hess_t(t, x)
            assert np.abs(H - H.T).max() <= 1e-12
            assert np.linalg.eigvalsh(H).min() >= -1e-10
            Hfd = np.column_stack([
                (c.grad_t(t, x + 1e-6 * e) - c.grad_t(t, x - 1e-6 * e)) / 2e-6 for e in np.eye(c.n_x)])
            np.testing.assert_allclose(H, Hfd, atol=1e-6 * max(1.0, np.abs(H).max()))


def test_smooth_perturbed_declared_constants(rng):
    c = SmoothPerturbed(1.0, 3.0, 0.7, 2, 3)
    cc = c.constants
    assert cc.L_h == pytest.approx(3.0)
    assert cc.M_h == pytest.approx(0.7)
    worst_m = 0.0
    for _ in range(2000):
        x, y = rng.standard_normal(3) * 2, rng.standard_normal(3) * 2
        Hx, Hy = c.hess_t(1, x), c.hess_t(1, y)
        ev = np.linalg.eigvalsh(Hx)
        assert cc.mu_h - 1e-12 <= ev.min() and ev.max() <= cc.L_h + 1e-12
        worst_m = max(worst_m, np.linalg.norm(Hx - Hy, 2) / np.linalg.norm(x - y))
    assert worst_m <= cc.M_h * (1 + 1e-9)
    # the curvature bound is attained along a coordinate near the inflection point
    assert worst_m >= 0.3 * cc.M_h


def test_newton_decrement_norm():
    c = IsoQuadratic(1.0, 1, 2)
    assert newton_decrement(c, [[3.0, 4.0]]) == pytest.approx(5.0, rel=1e-15)


def test_newton_decrement_zero_grad(rng):
    T = rng.standard_normal((3, 2))
    c = QuadraticTracking(T, 2.0)
    assert newton_decrement(c, T) == 0.0


def test_newton_decrement_dense_oracle(rng):
    tau, n = 4, 3
    W = np.stack([random_psd(rng, n, shift=0.2) for _ in range(tau)])
    c = QuadraticTracking(rng.standard_normal((tau, n)), W)
    X = rng.standard_normal((tau, n))
    g, H = total_grad_hess(c, X)
    dense = np.zeros((tau * n, tau * n))
    for t in range(tau):
        dense[t * n:(t + 1) * n, t * n:(t + 1) * n] = H[t]
    expect = np.sqrt(g @ np.linalg.solve(dense, g))
    assert newton_decrement(c, X) == pytest.approx(expect, rel=1e-12)


def test_newton_decrement_iso_identity(rng):
    mu = 3.7
    c = IsoQuadratic(mu, 5, 2, targets=[1.0, -1.0])
    X = rng.standard_normal((5, 2))
    g, _ = total_grad_hess(c, X)
    assert newton_decrement(c, X) == pytest.approx(np.linalg.norm(g) / np.sqrt(mu), rel=1e-14)


def test_newton_decrement_singular_block():
    W = np.stack([np.eye(2), np.diag([1.0, 0.0]), np.eye(2)])
    c = QuadraticTracking(np.zeros((3, 2)), W)
    with pytest.raises(SingularHessianError) as err:
        newton_decrement(c, np.ones((3, 2)))
    assert err.value.t == 2


def test_mu_total_examples():
    assert mu_total([2.5] * 7, 0.5) == 2.5
    assert mu_total([1.0, 1.0], 0.75) == pytest.approx(2 ** (-1 / 3), rel=1e-14)
    assert mu_total([1.0, 1.0], 0.75) == pytest.approx(0.7937, abs=1e-4)
    assert mu_total([4.0, 1.0, 9.0], 0.5) == 1.0


@pytest.mark.parametrize("r", [0.5, 0.6, 0.75, 0.9])
@pytest.mark.parametrize("tau", [1, 3, 20])
def test_mu_total_equal_moduli(r, tau):
    mu = 1.7
    assert mu_total([mu] * tau, r) == pytest.approx(mu / tau ** ((2 * r - 1) / (2 * r)), rel=1e-13)


def test_mu_total_errors():
    with pytest.raises(ValueError):
        mu_total([1.0], 0.4)
    with pytest.raises(ValueError):
        mu_total([1.0], 1.0)
    with pytest.raises(ValueError):
        mu_total([1.0, 0.0], 0.5)
    with pytest.raises(ValueError):
        mu_total([1.0, -1.0], 0.75)


def test_gradient_dominance_r_half(rng):
    tau, n = 5, 3
    W = np.stack([random_psd(rng, n, shift=0.3) for _ in range(tau)])
    c = QuadraticTracking(rng.standard_normal((tau, n)), W)
    mu_h = mu_total(c.constants.mu_h_t, 0.5)
    h_star = c.optimum.total
    for _ in range(1000):
        X = rng.standard_normal((tau, n)) * rng.uniform(0.01, 10)
        g, _ = total_grad_hess(c, X)
        assert g @ g >= mu_h * (total_cost(c, X) - h_star) - 1e-10
