"""Stage costs on states, their derivatives and curvature constants.

Costs are indexed by ``t = 1 .. tau`` (no cost on the fixed initial state).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt

from .errors import DimensionError, SingularHessianError

FloatArray = npt.NDArray[np.float64]

_SECH2_SLOPE = 4.0 / (3.0 * np.sqrt(3.0))
PD_THRESHOLD = 1e-12


@dataclass(frozen=True)
class CostConstants:
    """Curvature constants of the stage costs.

    ``mu_h_t`` are the per-stage gradient-dominance moduli (for r = 1/2 the
    strong-convexity moduli), ``L_h`` bounds the Hessians and ``M_h`` is the
    Lipschitz constant of the Hessians.
    """

    mu_h_t: tuple
    L_h: float
    M_h: float
    r: float = 0.5
    convex: bool = True
    provenance: str = "analytic"

    def __post_init__(self):
        if not (0.5 <= self.r < 1.0):
            raise ValueError(f"r must lie in [1/2, 1), got {self.r}")
        if self.L_h < 0 or self.M_h < 0 or any(m < 0 for m in self.mu_h_t):
            raise ValueError("cost constants must be nonnegative")

    @property
    def mu_h(self) -> float:
        """Modulus of the total cost (strong convexity for r = 1/2)."""
        return mu_total(self.mu_h_t, self.r)

    def as_dict(self) -> dict:
        return {
            "mu_h": self.mu_h,
            "mu_h_t_min": float(min(self.mu_h_t)),
            "L_h": self.L_h,
            "M_h": self.M_h,
            "r": self.r,
            "convex": self.convex,
            "provenance": self.provenance,
        }


def mu_total(mu_t, r: float = 0.5) -> float:
    """Gradient-dominance modulus of a sum of stage costs.

    For ``r = 1/2`` this is ``min mu_t``. For ``r > 1/2`` it is the inverse of
    the ``q``-norm of ``1/mu_t`` with ``q = 2r / (2r - 1)``.
    """
    mu = np.asarray(mu_t, dtype=float).ravel()
    if mu.size == 0:
        raise ValueError("mu_t must be non-empty")
    if not (0.5 <= r < 1.0):
        raise ValueError(f"r must lie in [1/2, 1), got {r}")
    if np.any(mu <= 0):
        raise ValueError("all mu_t must be > 0")
    if r == 0.5:
        return float(mu.min())
    q = 2 * r / (2 * r - 1)
    # scale to avoid overflow of large powers
    s = mu.min()
    return float(s / np.sum((s / mu) ** q) ** (1.0 / q))


@dataclass(frozen=True)
class CostOptimum:
    minimizers: FloatArray  # (tau, n_x)
    min_values: FloatArray  # (tau,)

    @property
    def total(self) -> float:
        return float(np.sum(self.min_values))


class CostModel:
    """Base class for sums of stage costs ``h_t(x_t)``."""

    n_x: int
    horizon: int
    convex: bool = True
    optimum: Optional[CostOptimum] = None
    constants: Optional[CostConstants] = None

    def eval_t(self, t: int, x: FloatArray) -> float:
        raise NotImplementedError

    def grad_t(self, t: int, x: FloatArray) -> FloatArray:
        raise NotImplementedError

    def hess_t(self, t: int, x: FloatArray) -> FloatArray:
        raise NotImplementedError

    def derivs_t(self, t: int, x: FloatArray) -> tuple[float, FloatArray, FloatArray]:
        return self.eval_t(t, x), self.grad_t(t, x), self.hess_t(t, x)

    def with_horizon(self, horizon: int) -> "CostModel":
        raise NotImplementedError(f"{type(self).__name__} cannot change its horizon")

    def describe(self) -> dict:
        return {"name": type(self).__name__, "n_x": self.n_x, "horizon": self.horizon}


def _targets(targets, horizon, n_x):
    T = np.asarray(targets, dtype=float)
    if T.ndim == 1:
        if T.shape != (n_x,):
            raise DimensionError(f"targets: expected ({n_x},) or ({horizon}, {n_x}), got {T.shape}")
        T = np.tile(T, (horizon, 1))
    if T.shape != (horizon, n_x):
        raise DimensionError(f"targets: expected ({horizon}, {n_x}), got {T.shape}")
    return T


def _weights(weights, horizon, n_x):
    W = np.asarray(weights, dtype=float)
    if W.ndim == 0:
        W = W * np.eye(n_x)
    elif W.ndim == 1:
        if W.shape != (n_x,):
            raise DimensionError(f"weights: expected ({n_x},), got {W.shape}")
        W = np.diag(W)
    if W.ndim == 2:
        if W.shape != (n_x, n_x):
            raise DimensionError(f"weights: expected ({n_x}, {n_x}), got {W.shape}")
        W = np.tile(W, (horizon, 1, 1))
    if W.shape != (horizon, n_x, n_x):
        raise DimensionError(f"weights: expected ({horizon}, {n_x}, {n_x}), got {W.shape}")
    if not np.allclose(W, np.swapaxes(W, 1, 2)):
        raise ValueError("weights must be symmetric")
    return 0.5 * (W + np.swapaxes(W, 1, 2))


class QuadraticTracking(CostModel):
    """``h_t(x) = 1/2 (x - r_t)^T W_t (x - r_t)``."""

    def __init__(self, targets, weights=1.0, horizon: Optional[int] = None, n_x: Optional[int] = None):
        T = np.asarray(targets, dtype=float)
        if horizon is None:
            if T.ndim != 2:
                raise DimensionError("horizon is required with a single target vector")
            horizon = T.shape[0]
        n_x = T.shape[-1] if n_x is None else n_x
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = int(horizon)
        self.n_x = int(n_x)
        self._raw = (targets, weights)
        self.targets = _targets(T, self.horizon, self.n_x)
        self.weights = _weights(weights, self.horizon, self.n_x)
        eig = np.linalg.eigvalsh(self.weights)
        self.convex = bool(eig.min() >= 0)
        self.optimum = CostOptimum(self.targets.copy(), np.zeros(self.horizon)) if self.convex else None
        self.constants = CostConstants(
            mu_h_t=tuple(float(e) for e in np.maximum(eig.min(axis=1), 0.0)),
            L_h=float(np.abs(eig).max()), M_h=0.0, r=0.5, convex=self.convex,
        )

    def eval_t(self, t, x):
        d = x - self.targets[t - 1]
        return 0.5 * float(d @ self.weights[t - 1] @ d)

    def grad_t(self, t, x):
        return self.weights[t - 1] @ (x - self.targets[t - 1])

    def hess_t(self, t, x):
        return self.weights[t - 1].copy()

    def derivs_t(self, t, x):
        W = self.weights[t - 1]
        d = x - self.targets[t - 1]
        g = W @ d
        return 0.5 * float(d @ g), g, W.copy()

    def with_horizon(self, horizon):
        targets, weights = self._raw
        T = np.asarray(targets, dtype=float)
        W = np.asarray(weights, dtype=float)
        if T.ndim != 1 and T.shape[0] != horizon:
            raise DimensionError("per-stage targets cannot be resized to a new horizon")
        if W.ndim == 3 and W.shape[0] != horizon:
            raise DimensionError("per-stage weights cannot be resized to a new horizon")
        return QuadraticTracking(targets, weights, horizon=horizon, n_x=self.n_x)

    def describe(self):
        return {"name": "quadratic_tracking", "n_x": self.n_x, "horizon": self.horizon}


class IsoQuadratic(QuadraticTracking):
    """``h_t(x) = mu/2 ||x - r_t||^2``."""

    def __init__(self, mu: float, horizon: int, n_x: int, targets=None):
        if not mu > 0:
            raise ValueError("mu must be > 0")
        self.mu = float(mu)
        targets = np.zeros(n_x) if targets is None else targets
        super().__init__(targets, self.mu, horizon=horizon, n_x=n_x)
        self._iso_targets = targets

    def with_horizon(self, horizon):
        return IsoQuadratic(self.mu, horizon, self.n_x, self._iso_targets)

    def describe(self):
        return {"name": "iso_quadratic", "n_x": self.n_x, "horizon": self.horizon, "mu": self.mu}


class SmoothPerturbed(CostModel):
    """Strongly convex cost with a non-constant Hessian.

    ``h_t(x) = mu/2 ||d||^2 + c * sum_i log(cosh(a d_i)) / a^2`` with
    ``d = x - r_t``. The Hessian is ``mu I + c diag(sech^2(a d))``, so
    ``mu I <= H <= L I`` for ``c = L - mu``, and its Lipschitz constant is
    ``c a 4/(3 sqrt 3)``, which fixes ``a`` from the requested ``M``.
    """

    def __init__(self, mu: float, L: float, M: float, horizon: int, n_x: int, targets=None):
        if not (0 < mu <= L):
            raise ValueError("need 0 < mu <= L")
        if M < 0:
            raise ValueError("M must be >= 0")
        self.mu, self.L, self.M = float(mu), float(L), float(M)
        self.c = self.L - self.mu
        if self.c == 0.0 or self.M == 0.0:
            # degenerate: plain quadratic (M is then necessarily 0)
            self.c, self.a, self.M = 0.0, 1.0, 0.0
        else:
            self.a = self.M / (self.c * _SECH2_SLOPE)
        self.horizon = int(horizon)
        self.n_x = int(n_x)
        self._raw_targets = np.zeros(n_x) if targets is None else targets
        self.targets = _targets(self._raw_targets, self.horizon, self.n_x)
        self.optimum = CostOptimum(self.targets.copy(), np.zeros(self.horizon))
        self.constants = CostConstants(
            mu_h_t=(self.mu,) * self.horizon,
            L_h=self.mu + self.c, M_h=self.M, r=0.5,
        )

    def _d(self, t, x):
        return x - self.targets[t - 1]

    @staticmethod
    def _logcosh(z):
        z = np.abs(z)
        return z + np.log1p(np.exp(-2 * z)) - np.log(2.0)

    def eval_t(self, t, x):
        d = self._d(t, x)
        return float(0.5 * self.mu * d @ d + self.c * np.sum(self._logcosh(self.a * d)) / self.a ** 2)

    def grad_t(self, t, x):
        d = self._d(t, x)
        return self.mu * d + self.c * np.tanh(self.a * d) / self.a

    def hess_t(self, t, x):
        d = self._d(t, x)
        return np.diag(self.mu + self.c / np.cosh(self.a * d) ** 2)

    def with_horizon(self, horizon):
        if np.asarray(self._raw_targets).ndim != 1:
            raise DimensionError("per-stage targets cannot be resized to a new horizon")
        return SmoothPerturbed(self.mu, self.L, self.M, horizon, self.n_x, self._raw_targets)

    def describe(self):
        return {"name": "smooth_perturbed", "n_x": self.n_x, "horizon": self.horizon,
                "mu": self.mu, "L": self.L, "M": self.M}


def _states(traj) -> FloatArray:
    return np.asarray(getattr(traj, "states", traj), dtype=float)


def _check_states(cost: CostModel, X: FloatArray):
    if X.shape != (cost.horizon, cost.n_x):
        raise DimensionError(f"states: expected ({cost.horizon}, {cost.n_x}), got {X.shape}")


def total_cost(cost: CostModel, traj) -> float:
    """``sum_t h_t(x_t)`` over ``t = 1 .. tau``."""
    X = _states(traj)
    _check_states(cost, X)
    return float(sum(cost.eval_t(t + 1, X[t]) for t in range(cost.horizon)))


def total_grad_hess(cost: CostModel, traj) -> tuple[FloatArray, FloatArray]:
    """Stacked gradient ``(tau * n_x,)`` and Hessian blocks ``(tau, n_x, n_x)``."""
    X = _states(traj)
    _check_states(cost, X)
    g = np.empty_like(X)
    H = np.empty((cost.horizon, cost.n_x, cost.n_x))
    for t in range(cost.horizon):
        g[t] = cost.grad_t(t + 1, X[t])
        H[t] = cost.hess_t(t + 1, X[t])
    return g.ravel(), H


def newton_decrement(cost: CostModel, traj) -> float:
    """``sqrt(grad^T H^{-1} grad)`` of the total cost at the trajectory."""
    X = _states(traj)
    _check_states(cost, X)
    acc = 0.0
    for t in range(cost.horizon):
        g = cost.grad_t(t + 1, X[t])
        H = cost.hess_t(t + 1, X[t])
        w, V = np.linalg.eigh(0.5 * (H + H.T))
        if w.min() <= PD_THRESHOLD:
            raise SingularHessianError(t + 1)
        z = V.T @ g
        acc += float(z @ (z / w))
    return float(np.sqrt(acc))
