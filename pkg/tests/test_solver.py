import math

import numpy as np
import pytest

from regilqr.cost import IsoQuadratic, QuadraticTracking, total_cost
from regilqr.dense_ref import fd_gradient, tail_lqr_qp
from regilqr.dyn import LinearDynamics, rollout
from regilqr.errors import DimensionError, PureQuadraticWarning, RegularizationError
from regilqr.solver import (
    TRACE_COLUMNS,
    LinQuadModel,
    Problem,
    ScheduleConstants,
    SolverConfig,
    adjoint_gradient,
    backward_pass,
    forward_pass,
    objective,
    objective_gradient,
    rollout_ddp,
    rollout_lqr,
    schedule_theorem3,
    schedule_theorem5,
    schedule_theorem6,
    solve,
)

from conftest import dense_direction, random_linquad, random_psd, tanh_chain, zoo_models

ONE = np.ones((1, 1, 1))


def scalar_model():
    return LinQuadModel(ONE, ONE, ONE, np.ones((1, 1)))


# ---------------------------------------------------------------- forward pass


def test_forward_pass_zero_dynamics(rng):
    dyn = LinearDynamics(np.zeros((2, 2)), np.zeros((2, 1)))
    cost = QuadraticTracking(rng.standard_normal((4, 2)), 1.5)
    traj, obj, _ = forward_pass(dyn, cost, [3.0, 4.0], rng.standard_normal((4, 1)))
    assert not traj.states.any()
    assert obj == pytest.approx(sum(cost.eval_t(t, np.zeros(2)) for t in range(1, 5)), rel=1e-15)


def test_forward_pass_scalar():
    dyn = LinearDynamics([[1.0]], [[1.0]])
    cost = IsoQuadratic(1.0, 1, 1)
    traj, obj, model = forward_pass(dyn, cost, [0.0], [[1.0]])
    np.testing.assert_array_equal(traj.states, [[1.0]])
    assert obj == 0.5
    for arr in (model.A, model.B, model.P, model.p):
        np.testing.assert_array_equal(arr.ravel(), [1.0])


def test_forward_pass_chain_reroll(rng):
    dyn = tanh_chain(2)
    cost = QuadraticTracking([1.0, 0.0], 1.0, horizon=12)
    U = rng.standard_normal((12, 1))
    traj, obj, model = forward_pass(dyn, cost, np.zeros(2), U)
    X = rollout(dyn, np.zeros(2), U)
    np.testing.assert_array_equal(traj.states, X)
    assert obj == pytest.approx(total_cost(cost, X), rel=1e-15)
    A, B = dyn.jacobians(X[3], U[4])
    np.testing.assert_array_equal(model.A[4], A)
    np.testing.assert_array_equal(model.B[4], B)


def test_forward_pass_shape_errors():
    dyn = tanh_chain(2)
    cost = IsoQuadratic(1.0, 3, 2)
    with pytest.raises(DimensionError):
        forward_pass(dyn, cost, np.zeros(2), np.zeros((3, 2)))
    with pytest.raises(DimensionError):
        forward_pass(dyn, cost, np.zeros(3), np.zeros((3, 1)))


# --------------------------------------------------------------- backward pass


def test_backward_pass_scalar():
    pol = backward_pass(scalar_model(), 1.0)
    assert pol.K[0, 0, 0] == pytest.approx(-0.5, rel=1e-15)
    assert pol.k[0, 0] == pytest.approx(-0.5, rel=1e-15)
    assert pol.const0 == pytest.approx(-0.25, rel=1e-15)
    assert pol.J[1, 0, 0] == 1.0
    # stage 0 has no state cost: J_0 = A J_1 A - (A J_1 B)^2 / (nu + B J_1 B)
    assert pol.J[0, 0, 0] == pytest.approx(0.5, rel=1e-15)
    for y in (-1.0, 0.3, 2.0):
        val, _ = tail_lqr_qp(scalar_model(), 1.0, 0, [y])
        assert pol.cost_to_go(0, [y]) == pytest.approx(val, rel=1e-14)


def test_backward_pass_zero_linear_terms(rng):
    m = random_linquad(rng, 5, 3, 2)
    m = LinQuadModel(m.A, m.B, m.P, np.zeros_like(m.p))
    pol = backward_pass(m, 0.3)
    assert not pol.k.any()
    assert pol.const0 == 0.0


def test_backward_pass_cost_to_go_random():
    rng = np.random.default_rng(11)
    model = random_linquad(rng, 6, 3, 2)
    for nu in (1e-3, 1.0, 1e3):
        pol = backward_pass(model, nu)
        for t in range(7):
            y = rng.standard_normal(3)
            val, _ = tail_lqr_qp(model, nu, t, y)
            assert abs(pol.cost_to_go(t, y) - val) <= 1e-8 * max(1.0, abs(val))


def test_backward_pass_psd_and_symmetric(rng):
    model = random_linquad(rng, 8, 4, 2, psd_rank=2)
    pol = backward_pass(model, 0.1)
    for J in pol.J:
        np.testing.assert_array_equal(J, J.T)
        ev = np.linalg.eigvalsh(J)
        assert ev.min() >= -1e-9 * max(1.0, ev.max())
    assert pol.const0 <= 0.0


def test_backward_pass_indefinite_raises():
    m = LinQuadModel(ONE, ONE, -2.0 * ONE, np.ones((1, 1)))
    with pytest.raises(RegularizationError) as err:
        backward_pass(m, 1.0)
    assert err.value.t == 0
    with pytest.raises(ValueError):
        backward_pass(scalar_model(), -1.0)


def test_backward_pass_nu0_when_pd():
    pol = backward_pass(scalar_model(), 0.0)
    assert pol.k[0, 0] == pytest.approx(-1.0)


# ------------------------------------------------------------------- roll-outs


def test_rollout_lqr_scalar_and_zero(rng):
    np.testing.assert_allclose(rollout_lqr(backward_pass(scalar_model(), 1.0), scalar_model()), [[-0.5]])
    m = random_linquad(rng, 4, 2, 2)
    m = LinQuadModel(m.A, m.B, m.P, np.zeros_like(m.p))
    assert not rollout_lqr(backward_pass(m, 1.0), m).any()


def test_rollout_lqr_matches_dense(rng):
    for _ in range(10):
        tau, n_x, n_u = rng.integers(1, 11), rng.integers(1, 5), rng.integers(1, 5)
        model = random_linquad(rng, tau, n_x, n_u)
        for nu in (1e-3, 1.0, 1e3):
            v = rollout_lqr(backward_pass(model, nu), model)
            vd = dense_direction(model, nu)
            assert np.linalg.norm(v.ravel() - vd.ravel()) <= 1e-8 * np.linalg.norm(vd)


def test_const0_expected_decrease(rng):
    for _ in range(10):
        model = random_linquad(rng, rng.integers(1, 11), 3, 2)
        pol = backward_pass(model, 0.7)
        v = rollout_lqr(pol, model)
        half = 0.5 * float(np.sum(adjoint_gradient(model) * v))
        assert pol.const0 == pytest.approx(half, rel=1e-8)


def test_rollout_ddp_linear_equals_lqr(rng):
    dyn = LinearDynamics(rng.standard_normal((3, 3)) * 0.5, rng.standard_normal((3, 2)))
    cost = QuadraticTracking(rng.standard_normal((7, 3)), 1.0)
    U = rng.standard_normal((7, 2))
    traj, _, model = forward_pass(dyn, cost, rng.standard_normal(3), U)
    pol = backward_pass(model, 0.2)
    v = rollout_lqr(pol, model)
    w, states = rollout_ddp(pol, dyn, traj, U)
    assert np.abs(w - v).max() <= 1e-12 * max(1.0, np.abs(v).max())
    np.testing.assert_allclose(states, rollout(dyn, traj.x0, U + w), rtol=1e-12, atol=1e-12)


def test_rollout_ddp_zero_k(rng):
    dyn = tanh_chain(2)
    cost = QuadraticTracking([1.0, 0.0], 1.0, horizon=5)
    U = rng.standard_normal((5, 1))
    traj, _, model = forward_pass(dyn, cost, np.zeros(2), U)
    m0 = LinQuadModel(model.A, model.B, model.P, np.zeros_like(model.p))
    w, states = rollout_ddp(backward_pass(m0, 1.0), dyn, traj, U)
    assert not w.any()
    np.testing.assert_array_equal(states, traj.states)


def test_rollout_ddp_quadratic_proximity(chain_fixture):
    exp = chain_fixture
    # a generic command: at u = 0 the chain sits where tanh'' vanishes
    U = np.random.default_rng(0).uniform(-1, 1, (exp.horizon, exp.dyn.n_u))
    traj, _, model = forward_pass(exp.dyn, exp.cost, exp.x0, U)
    ratios, norms = [], []
    for s in [2.0 ** -i for i in range(7)]:
        m = LinQuadModel(model.A, model.B, model.P, s * model.p)
        pol = backward_pass(m, 1.0)
        v = rollout_lqr(pol, m)
        w, _ = rollout_ddp(pol, exp.dyn, traj, U)
        ratios.append(np.linalg.norm(w - v) / np.linalg.norm(v) ** 2)
        norms.append(np.linalg.norm(v))
    # the direction shrinks with the scaling while the ratio stays bounded
    assert norms[-1] < norms[0] / 32
    assert max(ratios) / min(ratios) < 3.0


# -------------------------------------------------------------------- gradient


def test_gradient_zero_cost_gradient(rng):
    dyn = tanh_chain(2)
    U = rng.standard_normal((4, 1))
    X = rollout(dyn, np.zeros(2), U)
    cost = QuadraticTracking(X, 1.0)
    assert not objective_gradient(dyn, cost, np.zeros(2), U).any()


def test_gradient_scalar():
    dyn = LinearDynamics([[1.0]], [[1.0]])
    g = objective_gradient(dyn, IsoQuadratic(1.0, 1, 1), [0.0], [[1.0]])
    np.testing.assert_array_equal(g, [[1.0]])


@pytest.mark.parametrize("name", sorted(zoo_models()))
def test_gradient_fd(name):
    dyn = zoo_models()[name]
    rng = np.random.default_rng(5)
    tau = 15
    cost = QuadraticTracking(rng.standard_normal(dyn.n_x), 1.0, horizon=tau)
    x0 = 0.3 * rng.standard_normal(dyn.n_x)
    U = 0.3 * rng.standard_normal((tau, dyn.n_u))
    g = objective_gradient(dyn, cost, x0, U).ravel()
    gfd = fd_gradient(lambda z: objective(dyn, cost, x0, z.reshape(U.shape)), U.ravel())
    assert np.linalg.norm(g - gfd) <= 1e-5 * np.linalg.norm(g)


# ------------------------------------------------------------------- schedules


def sc(**kw):
    base = dict(l_g=1.0, L_g=1.0, sigma_g=1.0, L_h=1.0, mu_h=1.0, M_h=0.0, eta=0.0)
    base.update(kw)
    return ScheduleConstants(**base)


def test_theorem3_examples():
    assert schedule_theorem3(0.0, sc()) == 0.0
    # L_g = 2, a0 l_g = 3 via L_g L_h l_g^2 = 2 * 1.5 * 1
    c = sc(L_g=2.0, L_h=1.5)
    assert schedule_theorem3(1.0, c) == pytest.approx(3.0, rel=1e-15)
    gamma = 1 + math.sqrt(1 + 3.0)
    assert schedule_theorem3(1.0, c) == pytest.approx(2.0 * 1.0 / 2 * gamma, rel=1e-15)


def test_theorem3_gamma_form(rng):
    for _ in range(20):
        c = sc(l_g=rng.uniform(0.1, 3), L_g=rng.uniform(0.1, 3), L_h=rng.uniform(0.1, 3), M_h=rng.uniform(0, 3))
        x = rng.uniform(0.01, 10)
        a0 = c.M_h * c.l_g ** 3 / 3 + c.L_g * c.L_h * c.l_g
        arg = c.L_g ** 2 * x / (4 * a0 * c.l_g)
        gamma = 1 + math.sqrt(1 + 1 / arg)
        assert schedule_theorem3(x, c) == pytest.approx(c.L_g * x / 2 * gamma, rel=1e-12)


def test_theorem3_pure_quadratic_warns():
    with pytest.warns(PureQuadraticWarning):
        assert schedule_theorem3(1.0, sc(L_g=0.0, M_h=0.0)) == 0.0


def test_theorem5_examples():
    assert schedule_theorem5(0.0, sc()) == 0.0
    assert schedule_theorem5(1.0, sc()) == pytest.approx(2.0, rel=1e-15)
    c = sc(L_g=0.0, M_h=0.9, l_g=1.3, sigma_g=0.4, mu_h=0.7)
    x = 2.0
    expect = 2 * c.l_g ** 2 * (c.M_h * c.l_g ** 2 / 3) * x / (c.sigma_g * c.l_g * c.mu_h)
    assert schedule_theorem5(x, c) == pytest.approx(expect, rel=1e-14)


def test_theorem6_examples():
    assert schedule_theorem6(0.0, sc(eta=1.0)) == 0.0
    # eta = 0 reduces to L_g beta_0 x
    c = sc(L_g=0.8, l_g=1.5, sigma_g=0.5, L_h=2.0, mu_h=0.5, M_h=0.3)
    rho_h, rho_g = 4.0, 3.0
    theta_h = 0.3 / (2 * 0.5 ** 1.5)
    theta_g = 0.8 / (0.25 * math.sqrt(0.5))
    beta0 = (1 + rho_h * rho_g) + rho_g ** 3 * 2 * theta_h / (3 * theta_g)
    assert schedule_theorem6(1.7, c) == pytest.approx(0.8 * beta0 * 1.7, rel=1e-13)


def test_theorem6_unit_condition_numbers():
    # rho_h = rho_g = theta_h = theta_g = 1 and chi = l_g eta / L_g = 1
    c = sc(l_g=1.0, L_g=1.0, sigma_g=1.0, L_h=1.0, mu_h=1.0, M_h=2.0, eta=1.0)
    expect = 1.0 * (2 * 3 + 2 / 3) + 1.0
    assert schedule_theorem6(1.0, c) == pytest.approx(expect, rel=1e-14)


def test_theorem6_lg_zero_finite():
    v = schedule_theorem6(1.0, sc(L_g=0.0, eta=0.5))
    assert math.isfinite(v) and v > 0


# ----------------------------------------------------------------- line search


def _lin_problem(rng, tau=6):
    dyn = LinearDynamics(0.9 * np.eye(2) + 0.1 * rng.standard_normal((2, 2)), rng.standard_normal((2, 2)))
    W = np.stack([random_psd(rng, 2, shift=0.5) for _ in range(tau)])
    cost = QuadraticTracking(rng.standard_normal((tau, 2)), W)
    return Problem(dyn, cost, rng.standard_normal(2), tau)


def test_linesearch_linear_first_trial(rng):
    for nu_bar0 in (1e-6, 1e-3, 1.0, 1e3):
        tr = solve(_lin_problem(rng), SolverConfig(nu_bar0=nu_bar0, max_iters=30))
        assert all(r.trials == 0 for r in tr.rows if r.accepted)


def test_linesearch_doublings_bounded_by_theorem5(chain_fixture):
    exp = chain_fixture
    consts = ScheduleConstants.from_models(exp.traj_constants, exp.cost_constants)
    cfg = SolverConfig(nu_bar0=1e-6, halve_after_accept=False, max_iters=100)
    tr = solve(Problem(exp.dyn, exp.cost, exp.x0, exp.horizon), cfg)
    assert tr.status == "converged"
    assert any(r.trials > 0 for r in tr.rows)
    for r in tr.rows:
        if r.trials > 0:
            # nu = nu_bar * 2^trials * x with trials <= log2(nu_thm5 / (nu_bar x)) + 1
            assert r.nu <= 2.0 * schedule_theorem5(r.grad_cost_norm, consts) * (1 + 1e-12)


def test_linesearch_nu_bar_retained_and_floored(chain_fixture):
    exp = chain_fixture
    cfg = SolverConfig(nu_bar0=1e-6, max_iters=100)
    tr = solve(Problem(exp.dyn, exp.cost, exp.x0, exp.horizon), cfg)
    ratios = [r.nu / r.grad_cost_norm for r in tr.rows if r.accepted]
    assert min(ratios) >= 1e-6 * (1 - 1e-12)


def test_stationary_start():
    dyn = LinearDynamics(np.eye(2), np.eye(2))
    U = np.zeros((3, 2))
    X = rollout(dyn, np.ones(2), U)
    tr = solve(Problem(dyn, QuadraticTracking(X, 1.0), np.ones(2), 3), SolverConfig())
    assert tr.status == "converged"
    assert len(tr.rows) == 1
    assert tr.rows[0].grad_obj_norm == 0.0


# ----------------------------------------------------------------------- solve


def test_solve_linear_converges_fast(rng):
    for _ in range(5):
        tr = solve(_lin_problem(rng), SolverConfig(nu_bar0=1e-12, halve_after_accept=False))
        assert tr.status == "converged"
        assert tr.n_iters <= 3
        assert tr.final.grad_obj_norm <= 1e-9


def test_solve_trace_fields(chain_fixture):
    exp = chain_fixture
    cfg = SolverConfig(max_iters=2)
    tr = solve(Problem(exp.dyn, exp.cost, exp.x0, exp.horizon), cfg)
    assert tr.status == "max_iters"
    assert len(tr.rows) == 3
    objs = [r.objective for r in tr.rows]
    assert all(b <= a for a, b in zip(objs, objs[1:]))
    assert all(r.nu > 0 for r in tr.rows[:-1])
    assert tr.rows[-1].accepted is None


def test_solve_gd(chain_fixture):
    exp = chain_fixture
    step = 1.0 / (exp.cost_constants.L_h * exp.traj_constants.l_g ** 2)
    tr = solve(Problem(exp.dyn, exp.cost, exp.x0, exp.horizon),
               SolverConfig(algorithm="gd", gd_step=step, max_iters=50))
    objs = [r.objective for r in tr.rows]
    assert objs[-1] < objs[0]


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(algorithm="newton")
    with pytest.raises(ValueError):
        SolverConfig(growth=1.0)
    with pytest.raises(ValueError):
        SolverConfig(schedule="theorem5")
    assert SolverConfig().max_iters == 500


def test_trace_csv_columns(tmp_path, chain_fixture):
    exp = chain_fixture
    tr = solve(Problem(exp.dyn, exp.cost, exp.x0, exp.horizon), SolverConfig(max_iters=2))
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert len(lines) == 4


# --------------------------------------------------- per-iterate bound checks


def _theorem5_iterates(exp, n=40):
    consts = ScheduleConstants.from_models(exp.traj_constants, exp.cost_constants)
    U = Problem(exp.dyn, exp.cost, exp.x0, exp.horizon).initial_controls()
    for _ in range(n):
        traj, J, model = forward_pass(exp.dyn, exp.cost, exp.x0, U)
        x = float(np.linalg.norm(model.p))
        if x < 1e-10:
            return
        nu = schedule_theorem5(x, consts)
        pol = backward_pass(model, nu)
        v = rollout_lqr(pol, model)
        yield traj, J, model, x, nu, pol, U, v
        U = U + v


def test_oracle_norm_bound(chain_fixture):
    l_g = chain_fixture.traj_constants.l_g
    for _, _, _, x, nu, _, _, v in _theorem5_iterates(chain_fixture):
        assert np.linalg.norm(v) <= l_g * x / nu * (1 + 1e-12)


def test_model_error_cubic_bound(chain_fixture):
    exp = chain_fixture
    tc, cc = exp.traj_constants, exp.cost_constants
    box = exp.box
    for traj, J, model, x, nu, pol, U, v in _theorem5_iterates(exp):
        # sampled constants only hold on the sampling box
        assert np.all(np.abs(traj.states) <= box.x_high)
        assert np.all(np.abs(U + v) <= box.u_high)
        model_val = pol.const0 - 0.5 * nu * float(np.sum(v * v))
        err = abs(objective(exp.dyn, exp.cost, exp.x0, U + v) - J - model_val)
        nv = np.linalg.norm(v)
        bound = 0.5 * (tc.L_g * x + (cc.M_h * tc.l_g ** 3 / 3 + tc.L_g * cc.L_h * tc.l_g) * nv) * nv ** 2
        assert err <= bound + 1e-12


def test_policy_gains_linear_decrease_bounded(rng):
    dyn = LinearDynamics(np.zeros((2, 2)), np.eye(2))
    cost = IsoQuadratic(1.0, 4, 2, targets=[1.0, 1.0])
    U = rng.standard_normal((4, 2))
    traj, J, model = forward_pass(dyn, cost, np.zeros(2), U)
    pol = backward_pass(model, 1.0)
    v = rollout_lqr(pol, model)
    assert objective(dyn, cost, np.zeros(2), U + v) <= J + pol.const0 + 1e-12
