"""Regularized iterative LQR / DDP on the composed state trajectory.

Each iteration linearizes the dynamics and quadratizes the costs along the
current trajectory, solves the regularized LQR subproblem

    min_v  sum_{t=1}^{tau} 1/2 y_t^T P_t y_t + p_t^T y_t + nu/2 sum_t ||v_t||^2
    s.t.   y_{t+1} = A_t y_t + B_t v_t,  y_0 = 0,

by a Riccati backward pass, and applies its policy either to the linearized
model (ILQR) or to the true dynamics (IDDP). The regularization ``nu`` comes
from one of several schedules scaled by ``||grad h||``.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import numpy.typing as npt

from . import kernels
from .analysis import TrajectoryConstants, chi_from_eta, condition_numbers
from .cost import CostConstants, CostModel, newton_decrement
from .dyn import DynamicConstants, DynamicModel
from .errors import (
    DimensionError,
    DivergenceError,
    LineSearchError,
    PureQuadraticWarning,
    RegularizationError,
    SingularHessianError,
)

FloatArray = npt.NDArray[np.float64]

MAX_DOUBLINGS = 60
TRACE_COLUMNS = (
    "iter", "objective", "gap", "grad_obj_norm", "grad_cost_norm", "newton_decrement",
    "nu", "step_norm", "expected_decrease", "accepted", "phase", "time_ms",
)


@dataclass(frozen=True)
class Trajectory:
    x0: FloatArray
    states: FloatArray  # (tau, n_x): x_1 .. x_tau

    @property
    def tau(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class LinQuadModel:
    """Linearized dynamics and quadratized costs along a trajectory.

    ``A[t], B[t]`` are the Jacobians at ``(x_t, u_t)`` for ``t = 0..tau-1``;
    ``P[t-1], p[t-1]`` the cost Hessian and gradient at ``x_t``, ``t = 1..tau``.
    """

    A: FloatArray
    B: FloatArray
    P: FloatArray
    p: FloatArray

    def __post_init__(self):
        tau, n, m = self.B.shape
        if self.A.shape != (tau, n, n) or self.P.shape != (tau, n, n) or self.p.shape != (tau, n):
            raise DimensionError("inconsistent LinQuadModel shapes")

    @property
    def tau(self) -> int:
        return self.B.shape[0]


@dataclass(frozen=True)
class PolicySequence:
    """Affine policies ``v_t = K_t y_t + k_t`` and the quadratic cost-to-go.

    The optimal cost of the subproblem from stage ``t`` with state ``y`` is
    ``1/2 y^T J[t] y + j[t]^T y + const[t]``.
    """

    K: FloatArray  # (tau, n_u, n_x)
    k: FloatArray  # (tau, n_u)
    J: FloatArray  # (tau+1, n_x, n_x)
    j: FloatArray  # (tau+1, n_x)
    const: FloatArray  # (tau+1,)
    nu: float

    @property
    def const0(self) -> float:
        return float(self.const[0])

    def cost_to_go(self, t: int, y) -> float:
        y = np.asarray(y, dtype=float)
        return float(0.5 * y @ self.J[t] @ y + self.j[t] @ y + self.const[t])


def _check_controls(dyn: DynamicModel, controls) -> FloatArray:
    U = np.asarray(controls, dtype=float)
    if U.ndim != 2 or U.shape[1] != dyn.n_u:
        raise DimensionError(f"controls: expected shape (tau, {dyn.n_u}), got {U.shape}")
    if U.shape[0] < 1:
        raise ValueError("horizon must be >= 1")
    return U


def simulate(dyn: DynamicModel, x0, controls) -> Trajectory:
    U = _check_controls(dyn, controls)
    x = np.asarray(x0, dtype=float)
    if x.shape != (dyn.n_x,):
        raise DimensionError(f"x0: expected shape ({dyn.n_x},), got {x.shape}")
    x0 = x
    X = np.empty((U.shape[0], dyn.n_x))
    for t in range(U.shape[0]):
        x = dyn.eval(x, U[t])
        X[t] = x
    return Trajectory(x0, X)


def objective(dyn: DynamicModel, cost: CostModel, x0, controls) -> float:
    traj = simulate(dyn, x0, controls)
    return float(sum(cost.eval_t(t + 1, traj.states[t]) for t in range(traj.tau)))


def forward_pass(dyn: DynamicModel, cost: CostModel, x0, controls) -> tuple[Trajectory, float, LinQuadModel]:
    """Simulate, evaluate the objective and build the linear-quadratic model."""
    U = _check_controls(dyn, controls)
    tau = U.shape[0]
    if cost.horizon != tau:
        raise DimensionError(f"cost horizon {cost.horizon} does not match controls horizon {tau}")
    n, m = dyn.n_x, dyn.n_u
    A = np.empty((tau, n, n))
    B = np.empty((tau, n, m))
    P = np.empty((tau, n, n))
    p = np.empty((tau, n))
    X = np.empty((tau, n))
    x = np.asarray(x0, dtype=float)
    if x.shape != (n,):
        raise DimensionError(f"x0: expected shape ({n},), got {x.shape}")
    x0 = x
    obj = 0.0
    for t in range(tau):
        A[t], B[t] = dyn.jacobians(x, U[t])
        x = dyn.eval(x, U[t])
        X[t] = x
        val, p[t], P[t] = cost.derivs_t(t + 1, x)
        obj += val
    return Trajectory(x0, X), float(obj), LinQuadModel(A, B, P, p)


def backward_pass(model: LinQuadModel, nu: float) -> PolicySequence:
    """Riccati recursion for the regularized subproblem."""
    if not nu >= 0:
        raise ValueError(f"nu must be >= 0, got {nu}")
    K, k, J, j, const, fail = kernels.backward_pass_arrays(model.A, model.B, model.P, model.p, float(nu))
    if fail >= 0:
        raise RegularizationError(int(fail))
    return PolicySequence(np.asarray(K), np.asarray(k), np.asarray(J), np.asarray(j), np.asarray(const), float(nu))


def rollout_lqr(policies: PolicySequence, model: LinQuadModel) -> FloatArray:
    """Controls of the LQR policy applied to the linearized dynamics."""
    v, _ = kernels.rollout_lqr_arrays(policies.K, policies.k, model.A, model.B)
    return np.asarray(v)


def rollout_ddp(policies: PolicySequence, dyn: DynamicModel, traj: Trajectory, controls) -> tuple[FloatArray, FloatArray]:
    """Controls of the policy applied to the true dynamics around ``traj``.

    Returns ``(w, new_states)`` where the deviation ``y_{t+1}`` is
    ``f(x_t + y_t, u_t + w_t) - x_{t+1}``.
    """
    U = _check_controls(dyn, controls)
    tau = U.shape[0]
    w = np.empty_like(U)
    new = np.empty_like(traj.states)
    y = np.zeros(dyn.n_x)
    x = traj.x0
    for t in range(tau):
        w[t] = policies.K[t] @ y + policies.k[t]
        x = dyn.eval(x, U[t] + w[t])
        new[t] = x
        y = x - traj.states[t]
    return w, new


def adjoint_gradient(model: LinQuadModel) -> FloatArray:
    """Gradient of the objective wrt the controls, shape ``(tau, n_u)``."""
    tau = model.tau
    g = np.empty((tau, model.B.shape[2]))
    lam = model.p[tau - 1].copy()
    for t in range(tau - 1, -1, -1):
        # lam holds the costate of x_{t+1}
        g[t] = model.B[t].T @ lam
        if t > 0:
            lam = model.A[t].T @ lam + model.p[t - 1]
    return g


def objective_gradient(dyn: DynamicModel, cost: CostModel, x0, controls) -> FloatArray:
    _, _, model = forward_pass(dyn, cost, x0, controls)
    return adjoint_gradient(model)


# ----------------------------------------------------------------------------
# regularization schedules


@dataclass(frozen=True)
class ScheduleConstants:
    """Constants driving the closed-form regularization schedules."""

    l_g: float
    L_g: float
    sigma_g: float
    L_h: float
    mu_h: float
    M_h: float
    eta: float = 0.0

    @classmethod
    def from_models(cls, tc: TrajectoryConstants, cc: CostConstants, eta: float = 0.0) -> "ScheduleConstants":
        return cls(tc.l_g, tc.L_g, tc.sigma_g, cc.L_h, cc.mu_h, cc.M_h, eta)


def schedule_theorem3(grad_norm: float, c: ScheduleConstants) -> float:
    """Smallest nu for which the step provably decreases any smooth objective."""
    x = float(grad_norm)
    a0 = c.M_h * c.l_g ** 3 / 3.0 + c.L_g * c.L_h * c.l_g
    a1 = c.L_g * x
    a2 = a0 * c.l_g * x
    if a1 == 0.0 and a2 == 0.0 and x > 0.0:
        warnings.warn("all curvature constants vanish; nu = 0", PureQuadraticWarning, stacklevel=2)
    return 0.5 * (a1 + math.sqrt(a1 * a1 + 4.0 * a2))


def schedule_theorem5(grad_norm: float, c: ScheduleConstants) -> float:
    """Schedule for strongly convex costs."""
    x = float(grad_norm)
    if x == 0.0:
        return 0.0
    num = 2.0 * c.l_g ** 2 * (c.M_h * c.l_g ** 2 / 3.0 + c.L_g * c.L_h) * x
    den = c.L_g * x + c.sigma_g * c.l_g * c.mu_h
    nu = c.L_g * x + num / den
    if nu == 0.0:
        warnings.warn("all curvature constants vanish; nu = 0", PureQuadraticWarning, stacklevel=2)
    return nu


def schedule_theorem6(grad_norm: float, c: ScheduleConstants) -> float:
    """Schedule for the DDP variant; ``c.eta`` bounds the DDP/LQR gap.

    Written without dividing by ``L_g`` so that ``L_g = 0`` is well defined.
    """
    x = float(grad_norm)
    if x == 0.0:
        return 0.0
    rho_h = c.L_h / c.mu_h
    rho_g = c.l_g / c.sigma_g
    theta_h = c.M_h / (2.0 * c.mu_h ** 1.5)
    # L_g * beta
    Lg_beta = ((1.0 + rho_h * rho_g) * (c.L_g + 2.0 * c.l_g * c.eta)
               + rho_g ** 3 * 2.0 * theta_h * c.sigma_g ** 2 * math.sqrt(c.mu_h) / 3.0)
    # rho_h sigma_g^2 theta_g^2 chi^2
    quad = rho_h * c.l_g ** 2 * c.eta ** 2 / (c.sigma_g ** 2 * c.mu_h)
    return Lg_beta * x + quad * x * x


@dataclass
class LineSearchState:
    nu_bar: float
    nu_bar0: float
    growth: float = 2.0
    halve_after_accept: bool = True


# ----------------------------------------------------------------------------
# driver


@dataclass(frozen=True)
class Problem:
    dyn: DynamicModel
    cost: CostModel
    x0: FloatArray
    horizon: int
    u0: Optional[FloatArray] = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.cost.horizon != self.horizon:
            raise DimensionError("cost horizon does not match problem horizon")
        if self.cost.n_x != self.dyn.n_x:
            raise DimensionError("cost and dynamics state dimensions differ")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.dyn.n_x,):
            raise DimensionError(f"x0: expected shape ({self.dyn.n_x},), got {x0.shape}")

    def initial_controls(self) -> FloatArray:
        if self.u0 is None:
            return np.zeros((self.horizon, self.dyn.n_u))
        return _check_controls(self.dyn, np.asarray(self.u0, dtype=float).reshape(self.horizon, -1))


@dataclass(frozen=True)
class SolverConfig:
    algorithm: str = "ilqr"  # ilqr | iddp | gd
    schedule: str = "linesearch"  # theorem3 | theorem5 | theorem6 | linesearch
    nu_bar0: float = 1e-3
    growth: float = 2.0
    halve_after_accept: bool = True
    max_iters: int = 500
    grad_tol: float = 1e-9
    gap_tol: float = 0.0
    optimal_value: Optional[float] = None
    constants: Optional[ScheduleConstants] = None
    gd_step: Optional[float] = None
    record_time: bool = False

    def __post_init__(self):
        if self.algorithm not in ("ilqr", "iddp", "gd"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.schedule not in ("theorem3", "theorem5", "theorem6", "linesearch"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not self.nu_bar0 > 0 or not self.growth > 1:
            raise ValueError("nu_bar0 must be > 0 and growth > 1")
        if self.schedule != "linesearch" and self.algorithm != "gd" and self.constants is None:
            raise ValueError(f"schedule {self.schedule!r} needs constants")
        if self.algorithm == "gd" and self.gd_step is None:
            raise ValueError("gd needs gd_step")


@dataclass
class IterationRecord:
    iter: int
    objective: float
    gap: float
    grad_obj_norm: float
    grad_cost_norm: float
    newton_decrement: float
    nu: float = math.nan
    step_norm: float = math.nan
    expected_decrease: float = math.nan
    accepted: Optional[bool] = None
    phase: str = ""
    time_ms: float = math.nan
    trials: int = 0
    slack: float = math.nan


@dataclass
class ConvergenceTrace:
    rows: list = field(default_factory=list)
    status: str = "running"
    message: str = ""
    controls: Optional[FloatArray] = None

    @property
    def final(self) -> IterationRecord:
        return self.rows[-1]

    @property
    def n_iters(self) -> int:
        return len(self.rows) - 1

    def to_csv(self, path_or_buf) -> None:
        import csv

        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return "1" if v else "0"
            if isinstance(v, float):
                return "" if math.isnan(v) else repr(v)
            return str(v)

        own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
        fh = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.rows:
                w.writerow([fmt(getattr(r, c)) for c in TRACE_COLUMNS])
        finally:
            if own:
                fh.close()


EXIT_CODES = {"converged": 0, "max_iters": 2, "numerical_failure": 3}


def _fp_tol(*vals) -> float:
    # roundoff allowance when comparing objective values
    return 8.0 * np.finfo(float).eps * max(1.0, *(abs(v) for v in vals))


def _schedule_nu(cfg: SolverConfig, x: float) -> float:
    if cfg.schedule == "theorem3":
        return schedule_theorem3(x, cfg.constants)
    if cfg.schedule == "theorem5":
        return schedule_theorem5(x, cfg.constants)
    if cfg.schedule == "theorem6":
        return schedule_theorem6(x, cfg.constants)
    raise AssertionError


def solve(problem: Problem, config: SolverConfig) -> ConvergenceTrace:
    """Run the configured algorithm and return its per-iteration trace.

    Numerical failures end the run with ``status='numerical_failure'`` and
    the error text in ``message``.
    """
    dyn, cost, x0 = problem.dyn, problem.cost, np.asarray(problem.x0, dtype=float)
    u = problem.initial_controls().copy()
    trace = ConvergenceTrace()
    J_star = config.optimal_value
    ls = LineSearchState(config.nu_bar0, config.nu_bar0, config.growth, config.halve_after_accept)
    try:
        traj, J, model = forward_pass(dyn, cost, x0, u)
        for it in range(config.max_iters + 1):
            t0 = time.perf_counter()
            if not np.isfinite(J):
                raise DivergenceError(f"objective is not finite at iteration {it}")
            grad = adjoint_gradient(model)
            gnorm = float(np.linalg.norm(grad))
            x = float(np.linalg.norm(model.p))
            try:
                lam = newton_decrement(cost, traj)
            except SingularHessianError:
                lam = math.nan
            gap = J - J_star if J_star is not None else math.nan
            row = IterationRecord(it, J, gap, gnorm, x, lam)
            trace.rows.append(row)
            if gnorm <= config.grad_tol or (J_star is not None and gap <= config.gap_tol):
                trace.status = "converged"
                break
            if it == config.max_iters:
                trace.status = "max_iters"
                break
            step = _take_step(dyn, cost, x0, u, traj, J, model, grad, x, config, ls)
            row.nu, row.step_norm, row.expected_decrease = step["nu"], step["step_norm"], step["expected"]
            row.accepted, row.trials, row.slack = step["accepted"], step["trials"], step["slack"]
            u = step["u"]
            traj, J, model = forward_pass(dyn, cost, x0, u)
            if config.record_time:
                row.time_ms = (time.perf_counter() - t0) * 1e3
    except (RegularizationError, LineSearchError, DivergenceError, FloatingPointError) as exc:
        trace.status = "numerical_failure"
        trace.message = str(exc)
    trace.controls = u
    return trace


def _take_step(dyn, cost, x0, u, traj, J, model, grad, x, cfg: SolverConfig, ls: LineSearchState) -> dict:
    if cfg.algorithm == "gd":
        v = -cfg.gd_step * grad
        expected = 0.5 * float(np.sum(grad * v))
        J_new = objective(dyn, cost, x0, u + v)
        slack = J + expected - J_new
        return {"u": u + v, "nu": math.nan, "step_norm": float(np.linalg.norm(v)), "expected": expected,
                "accepted": bool(slack >= -_fp_tol(J, J_new)), "trials": 0, "slack": slack}

    if cfg.schedule == "linesearch":
        nu = ls.nu_bar * x
    else:
        nu = _schedule_nu(cfg, x)
    trials = 0
    while True:
        pol = backward_pass(model, nu)
        expected = pol.const0
        if cfg.algorithm == "ilqr":
            v = rollout_lqr(pol, model)
            J_new = objective(dyn, cost, x0, u + v)
        else:
            v, states = rollout_ddp(pol, dyn, traj, u)
            J_new = float(sum(cost.eval_t(t + 1, states[t]) for t in range(len(states))))
        slack = J + expected - J_new
        if np.isfinite(J_new) and slack >= -_fp_tol(J, J_new):
            break
        # theorem schedules only land here when the supplied constants are not valid bounds
        trials += 1
        if trials > MAX_DOUBLINGS:
            raise LineSearchError(f"no sufficient decrease after {MAX_DOUBLINGS} doublings of nu")
        if cfg.schedule == "linesearch":
            ls.nu_bar *= ls.growth
            nu = ls.nu_bar * x
        else:
            nu *= 2.0
    if cfg.schedule == "linesearch" and ls.halve_after_accept:
        ls.nu_bar = max(ls.nu_bar0, ls.nu_bar / 2.0)
    return {"u": u + v, "nu": nu, "step_norm": float(np.linalg.norm(v)), "expected": expected,
            "accepted": True, "trials": trials, "slack": slack}


def estimate_eta(
    problem: Problem,
    nus=(1e-2, 1e-1, 1.0),
    scalings=(1.0, 0.5, 0.25, 0.125),
    n_commands: int = 4,
    seed: int = 0,
    spread: float = 1.0,
) -> float:
    """Empirical bound on ``||w - v|| / ||v||^2`` between DDP and LQR directions.

    Samples commands around ``problem.initial_controls()``, scales the cost
    gradient to shrink the step, and returns the largest observed ratio.
    """
    rng = np.random.default_rng(seed)
    base = problem.initial_controls()
    best = 0.0
    for i in range(n_commands):
        u = base if i == 0 else base + spread * rng.standard_normal(base.shape)
        traj, _, model = forward_pass(problem.dyn, problem.cost, problem.x0, u)
        for s in scalings:
            m = LinQuadModel(model.A, model.B, model.P, s * model.p)
            for nu in nus:
                pol = backward_pass(m, nu)
                v = rollout_lqr(pol, m)
                w, _ = rollout_ddp(pol, problem.dyn, traj, u)
                nv = np.linalg.norm(v)
                if nv > 0:
                    best = max(best, float(np.linalg.norm(w - v) / nv ** 2))
    return best


def condition_summary(dc: DynamicConstants, cc: CostConstants, tc: TrajectoryConstants, eta: float = 0.0) -> dict:
    cn = condition_numbers(tc, cc)
    out = {"dynamics": dc.as_dict(), "cost": cc.as_dict(), "trajectory": tc.as_dict(), "condition": cn.as_dict()}
    if eta:
        out["eta"] = eta
        out["chi"] = chi_from_eta(tc, eta)
    return out
