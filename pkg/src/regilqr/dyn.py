"""Discrete-time dynamical models, their Jacobians and regularity constants.

Jacobians follow the usual orientation: ``jac_x`` is the ``n_x x n_x`` matrix
``df/dx`` and ``jac_u`` the ``n_x x n_u`` matrix ``df/du``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt

from .errors import DimensionError

FloatArray = npt.NDArray[np.float64]

# max |d/ds sech^2(s)| = 4 / (3 sqrt 3)
_SECH2_SLOPE = 4.0 / (3.0 * np.sqrt(3.0))


def _check_vec(name: str, arr, n: int) -> FloatArray:
    a = np.asarray(arr, dtype=float)
    if a.shape != (n,):
        raise DimensionError(f"{name}: expected shape ({n},), got {a.shape}")
    return a


def _smax(m: FloatArray) -> float:
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, 2))


def _smin(m: FloatArray) -> float:
    """Smallest of the min(rows, cols) singular values."""
    if m.size == 0:
        return 0.0
    return float(np.linalg.svd(m, compute_uv=False)[-1])


@dataclass(frozen=True)
class DynamicConstants:
    """Regularity constants of a single-step model.

    ``sigma_f`` and ``l_f_u`` bound the singular values of ``df/du``, ``l_f_x``
    bounds ``||df/dx||``, and the ``L_f_*`` fields are Lipschitz constants of
    the Jacobians (``L_f_xu`` is the constant of ``df/du`` with respect to x).
    """

    sigma_f: float
    l_f_x: float
    l_f_u: float
    L_f_xx: float
    L_f_uu: float
    L_f_xu: float
    provenance: str = "analytic"

    def __post_init__(self):
        for name in ("sigma_f", "l_f_x", "l_f_u", "L_f_xx", "L_f_uu", "L_f_xu"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.sigma_f > self.l_f_u * (1 + 1e-12) + 1e-15:
            raise ValueError("sigma_f cannot exceed l_f_u")

    def as_dict(self) -> dict:
        return {
            "sigma_f": self.sigma_f,
            "l_f_x": self.l_f_x,
            "l_f_u": self.l_f_u,
            "L_f_xx": self.L_f_xx,
            "L_f_uu": self.L_f_uu,
            "L_f_xu": self.L_f_xu,
            "provenance": self.provenance,
        }


class DynamicModel:
    """Base class: ``x_next = f(x, u)``.

    Subclasses implement ``eval`` and, when ``has_analytic_jacobians`` is
    true, ``jac_x``/``jac_u``. Otherwise central finite differences are used.
    """

    n_x: int
    n_u: int
    has_analytic_jacobians: bool = False
    analytic_constants: Optional[DynamicConstants] = None

    def eval(self, x: FloatArray, u: FloatArray) -> FloatArray:
        raise NotImplementedError

    def jac_x(self, x: FloatArray, u: FloatArray) -> FloatArray:
        from .dense_ref import fd_jacobian

        return fd_jacobian(lambda z: self.eval(z, u), x)

    def jac_u(self, x: FloatArray, u: FloatArray) -> FloatArray:
        from .dense_ref import fd_jacobian

        return fd_jacobian(lambda z: self.eval(x, z), u)

    def jacobians(self, x: FloatArray, u: FloatArray) -> tuple[FloatArray, FloatArray]:
        return self.jac_x(x, u), self.jac_u(x, u)

    def describe(self) -> dict:
        return {"name": type(self).__name__, "n_x": self.n_x, "n_u": self.n_u}


def step(model: DynamicModel, x, u) -> FloatArray:
    """One transition with shape checking."""
    x = _check_vec("x", x, model.n_x)
    u = _check_vec("u", u, model.n_u)
    return model.eval(x, u)


def jacobians(model: DynamicModel, x, u) -> tuple[FloatArray, FloatArray]:
    """``(df/dx, df/du)`` at ``(x, u)`` with shape checking."""
    x = _check_vec("x", x, model.n_x)
    u = _check_vec("u", u, model.n_u)
    A, B = model.jacobians(x, u)
    return np.asarray(A, dtype=float), np.asarray(B, dtype=float)


class LinearDynamics(DynamicModel):
    """``f(x, u) = A x + B u``."""

    has_analytic_jacobians = True

    def __init__(self, A, B):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise DimensionError(f"B must have {A.shape[0]} rows, got {B.shape}")
        self.A = A
        self.B = B
        self.n_x = A.shape[0]
        self.n_u = B.shape[1]
        self.analytic_constants = DynamicConstants(
            sigma_f=_smin(B), l_f_x=_smax(A), l_f_u=_smax(B),
            L_f_xx=0.0, L_f_uu=0.0, L_f_xu=0.0, provenance="analytic",
        )

    def eval(self, x, u):
        return self.A @ x + self.B @ u

    def jac_x(self, x, u):
        return self.A.copy()

    def jac_u(self, x, u):
        return self.B.copy()

    def jacobians(self, x, u):
        return self.A.copy(), self.B.copy()

    def describe(self):
        return {"name": "linear", "n_x": self.n_x, "n_u": self.n_u}


def upper_shift(n: int) -> FloatArray:
    """Matrix with ones on the first superdiagonal."""
    return np.eye(n, k=1)


class Psi:
    """Last-coordinate input map ``psi(y, v)`` of a chain system (scalar v)."""

    kind = "base"

    def value(self, y, v):
        raise NotImplementedError

    def grad_y(self, y, v):
        raise NotImplementedError

    def d_v(self, y, v):
        raise NotImplementedError

    def dv_range(self) -> tuple[float, float]:
        """Inf and sup of ``d psi / d v`` over all arguments."""
        raise NotImplementedError

    def grad_y_extremes(self) -> list[FloatArray]:
        """Vertices of the set of possible ``grad_y psi`` values."""
        raise NotImplementedError

    # Lipschitz constants of grad_y psi in y, d_v psi in v
    lip_yy = 0.0
    lip_vv = 0.0


class AffinePsi(Psi):
    """``psi(y, v) = gain * v - k.y + offset``. Identity when gain=1, k=0."""

    kind = "affine"

    def __init__(self, n: int, gain: float = 1.0, k=None, offset: float = 0.0):
        self.gain = float(gain)
        if self.gain == 0.0:
            raise ValueError("psi gain must be nonzero")
        self.k = np.zeros(n) if k is None else np.asarray(k, dtype=float).reshape(n)
        self.offset = float(offset)

    def value(self, y, v):
        return self.gain * v - self.k @ y + self.offset

    def grad_y(self, y, v):
        return -self.k

    def d_v(self, y, v):
        return self.gain

    def dv_range(self):
        return self.gain, self.gain

    def grad_y_extremes(self):
        return [-self.k]


class TanhMarginPsi(Psi):
    """``psi(y, v) = v + a_v tanh(v) - k.y + a_y tanh(c.y)``.

    ``d psi / d v`` stays in ``[1, 1 + a_v]`` (or ``[1 + a_v, 1]``), so the
    input never loses authority while |a_v| < 1.
    """

    kind = "tanh_margin"

    def __init__(self, n: int, amp_y: float = 0.1, amp_v: float = 0.0, k=None, c=None):
        if not (-1.0 < amp_v):
            raise ValueError("amp_v must exceed -1 to keep d psi/dv > 0")
        self.amp_y = float(amp_y)
        self.amp_v = float(amp_v)
        self.k = np.zeros(n) if k is None else np.asarray(k, dtype=float).reshape(n)
        if c is None:
            c = np.zeros(n)
            c[0] = 1.0
        self.c = np.asarray(c, dtype=float).reshape(n)
        self.lip_yy = abs(self.amp_y) * _SECH2_SLOPE * float(self.c @ self.c)
        self.lip_vv = abs(self.amp_v) * _SECH2_SLOPE

    def value(self, y, v):
        return v + self.amp_v * np.tanh(v) - self.k @ y + self.amp_y * np.tanh(self.c @ y)

    def grad_y(self, y, v):
        s = 1.0 / np.cosh(self.c @ y) ** 2
        return -self.k + self.amp_y * s * self.c

    def d_v(self, y, v):
        return 1.0 + self.amp_v / np.cosh(v) ** 2

    def dv_range(self):
        return min(1.0, 1.0 + self.amp_v), max(1.0, 1.0 + self.amp_v)

    def grad_y_extremes(self):
        return [-self.k, -self.k + self.amp_y * self.c]


class ChainSystem(DynamicModel):
    """Euler-discretized integrator chain.

    ``y_i+ = y_i + delta * y_{i+1}`` for i < n and
    ``y_n+ = y_n + delta * psi(y, v)``, with a scalar input v.
    """

    has_analytic_jacobians = True
    n_u = 1

    def __init__(self, n_x: int, delta: float, psi: Psi | None = None):
        if n_x < 1:
            raise ValueError("n_x must be >= 1")
        if not delta > 0:
            raise ValueError("delta must be > 0")
        self.n_x = int(n_x)
        self.delta = float(delta)
        self.psi = psi if psi is not None else AffinePsi(self.n_x)
        self._base_A = np.eye(self.n_x) + self.delta * upper_shift(self.n_x)
        self.analytic_constants = self._constants()

    def eval(self, x, u):
        v = float(u[0])
        out = x.copy()
        out[:-1] += self.delta * x[1:]
        out[-1] += self.delta * self.psi.value(x, v)
        return out

    def jac_x(self, x, u):
        A = self._base_A.copy()
        A[-1, :] += self.delta * self.psi.grad_y(x, float(u[0]))
        return A

    def jac_u(self, x, u):
        B = np.zeros((self.n_x, 1))
        B[-1, 0] = self.delta * self.psi.d_v(x, float(u[0]))
        return B

    def jacobians(self, x, u):
        return self.jac_x(x, u), self.jac_u(x, u)

    def _constants(self) -> DynamicConstants:
        lo, hi = self.psi.dv_range()
        # spectral norm is convex in the last row, so extremes are attained at vertices
        l_x = 0.0
        for g in self.psi.grad_y_extremes():
            A = self._base_A.copy()
            A[-1, :] += self.delta * g
            l_x = max(l_x, _smax(A))
        return DynamicConstants(
            sigma_f=self.delta * min(abs(lo), abs(hi)),
            l_f_x=l_x,
            l_f_u=self.delta * max(abs(lo), abs(hi)),
            L_f_xx=self.delta * self.psi.lip_yy,
            L_f_uu=self.delta * self.psi.lip_vv,
            L_f_xu=0.0,
            provenance="analytic",
        )

    @property
    def psi_dv_lower(self) -> float:
        lo, hi = self.psi.dv_range()
        return 0.0 if lo * hi <= 0 else min(abs(lo), abs(hi))

    def describe(self):
        return {"name": "chain", "n_x": self.n_x, "n_u": 1, "delta": self.delta, "psi": self.psi.kind}


def deadbeat_gains(n_x: int, delta: float) -> FloatArray:
    """Feedback ``k`` making the linear chain with ``psi = v - k.y`` nilpotent."""
    from .feedlin import brunovsky_data

    Q, c = brunovsky_data(n_x, delta)
    return Q.T @ c / delta


def brunovsky_model(n_x: int) -> LinearDynamics:
    """Shift register ``z+ = D z + w e_n``."""
    e = np.zeros((n_x, 1))
    e[-1, 0] = 1.0
    return LinearDynamics(upper_shift(n_x), e)


class Pendulum(DynamicModel):
    """Damped pendulum, semi-explicit Euler in (angle, rate) with torque input."""

    has_analytic_jacobians = True
    n_x = 2
    n_u = 1

    def __init__(self, delta=0.05, gravity=9.81, length=1.0, mass=1.0, damping=0.1):
        self.delta = float(delta)
        self.g_over_l = float(gravity) / float(length)
        self.inv_inertia = 1.0 / (float(mass) * float(length) ** 2)
        self.damping = float(damping)
        d = self.delta
        l_x = max(
            _smax(np.array([[1.0, d], [-d * self.g_over_l * c, 1.0 - d * self.damping]]))
            for c in (-1.0, 1.0)
        )
        b = d * self.inv_inertia
        self.analytic_constants = DynamicConstants(
            sigma_f=b, l_f_x=l_x, l_f_u=b,
            L_f_xx=d * self.g_over_l, L_f_uu=0.0, L_f_xu=0.0,
        )

    def eval(self, x, u):
        th, om = x
        d = self.delta
        return np.array([
            th + d * om,
            om + d * (-self.g_over_l * np.sin(th) - self.damping * om + self.inv_inertia * u[0]),
        ])

    def jac_x(self, x, u):
        d = self.delta
        return np.array([[1.0, d], [-d * self.g_over_l * np.cos(x[0]), 1.0 - d * self.damping]])

    def jac_u(self, x, u):
        return np.array([[0.0], [self.delta * self.inv_inertia]])

    def describe(self):
        return {"name": "pendulum", "n_x": 2, "n_u": 1, "delta": self.delta}


class MultiRate(DynamicModel):
    """``k`` consecutive steps of ``base`` driven by ``k`` stacked inputs."""

    has_analytic_jacobians = True

    def __init__(self, base: DynamicModel, k: int):
        if int(k) < 1:
            raise ValueError("k must be >= 1")
        self.base = base
        self.k = int(k)
        self.n_x = base.n_x
        self.n_u = self.k * base.n_u
        self.analytic_constants = None

    def _split(self, u):
        m = self.base.n_u
        return [u[i * m:(i + 1) * m] for i in range(self.k)]

    def eval(self, x, u):
        for ui in self._split(u):
            x = self.base.eval(x, ui)
        return x

    def jacobians(self, x, u):
        m = self.base.n_u
        A_tot = np.eye(self.n_x)
        B_tot = np.zeros((self.n_x, self.n_u))
        for i, ui in enumerate(self._split(u)):
            A, B = self.base.jacobians(x, ui)
            # earlier input columns are propagated through the new step
            B_tot[:, :i * m] = A @ B_tot[:, :i * m]
            B_tot[:, i * m:(i + 1) * m] = B
            A_tot = A @ A_tot
            x = self.base.eval(x, ui)
        return A_tot, B_tot

    def jac_x(self, x, u):
        return self.jacobians(x, u)[0]

    def jac_u(self, x, u):
        return self.jacobians(x, u)[1]

    def describe(self):
        return {"name": "multirate", "k": self.k, "n_x": self.n_x, "n_u": self.n_u, "base": self.base.describe()}


def multirate(base: DynamicModel, k: int) -> MultiRate:
    return MultiRate(base, k)


@dataclass(frozen=True)
class SamplingBox:
    """Axis-aligned box of states and inputs used for sampled constants."""

    x_low: FloatArray
    x_high: FloatArray
    u_low: FloatArray
    u_high: FloatArray

    @classmethod
    def symmetric(cls, n_x: int, n_u: int, x_radius, u_radius) -> "SamplingBox":
        xr = np.broadcast_to(np.asarray(x_radius, dtype=float), (n_x,)).copy()
        ur = np.broadcast_to(np.asarray(u_radius, dtype=float), (n_u,)).copy()
        return cls(-xr, xr, -ur, ur)

    def sample(self, rng: np.random.Generator, n: int) -> tuple[FloatArray, FloatArray]:
        xs = rng.uniform(self.x_low, self.x_high, size=(n, len(self.x_low)))
        us = rng.uniform(self.u_low, self.u_high, size=(n, len(self.u_low)))
        return xs, us


def _directions(rng, n, extra=2):
    dirs = list(np.eye(n))
    for _ in range(extra):
        d = rng.standard_normal(n)
        dirs.append(d / np.linalg.norm(d))
    return dirs


def estimate_constants(
    model: DynamicModel,
    box: Optional[SamplingBox] = None,
    n_samples: int = 200,
    seed: int = 0,
    prefer_analytic: bool = True,
    fd_step: float = 1e-5,
) -> DynamicConstants:
    """Regularity constants of ``model``.

    Returns the analytic constants when the model has them (and
    ``prefer_analytic``); otherwise samples the box. First-order constants
    are extremes of Jacobian singular values; second-order ones are the
    largest directional derivatives of the Jacobians, by central differences.
    """
    if prefer_analytic and model.analytic_constants is not None:
        return model.analytic_constants
    if box is None:
        raise ValueError("a sampling box is required when analytic constants are unavailable")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    _check_vec("box.x_low", box.x_low, model.n_x)
    _check_vec("box.u_low", box.u_low, model.n_u)
    if np.any(np.asarray(box.x_high) < box.x_low) or np.any(np.asarray(box.u_high) < box.u_low):
        raise ValueError("sampling box is empty")
    rng = np.random.default_rng(seed)
    xs, us = box.sample(rng, n_samples)
    dx = _directions(rng, model.n_x)
    du = _directions(rng, model.n_u)
    sig = np.inf
    lx = lu = Lxx = Luu = Lxu = 0.0
    for x, u in zip(xs, us):
        A, B = model.jacobians(x, u)
        sig = min(sig, _smin(B))
        lx = max(lx, _smax(A))
        lu = max(lu, _smax(B))
        hx = fd_step * (1.0 + np.linalg.norm(x))
        hu = fd_step * (1.0 + np.linalg.norm(u))
        for d in dx:
            Ap, Bp = model.jacobians(x + hx * d, u)
            Am, Bm = model.jacobians(x - hx * d, u)
            Lxx = max(Lxx, _smax(Ap - Am) / (2 * hx))
            Lxu = max(Lxu, _smax(Bp - Bm) / (2 * hx))
        for d in du:
            _, Bp = model.jacobians(x, u + hu * d)
            _, Bm = model.jacobians(x, u - hu * d)
            Luu = max(Luu, _smax(Bp - Bm) / (2 * hu))
    return DynamicConstants(
        sigma_f=float(min(sig, lu)), l_f_x=float(lx), l_f_u=float(lu),
        L_f_xx=float(Lxx), L_f_uu=float(Luu), L_f_xu=float(Lxu), provenance="sampled",
    )


def rollout(model: DynamicModel, x0, controls) -> FloatArray:
    """States ``x_1 .. x_tau`` for controls of shape ``(tau, n_u)``."""
    x = _check_vec("x0", x0, model.n_x)
    U = np.asarray(controls, dtype=float)
    if U.ndim != 2 or U.shape[1] != model.n_u:
        raise DimensionError(f"controls: expected shape (tau, {model.n_u}), got {U.shape}")
    out = np.empty((U.shape[0], model.n_x))
    for t, u in enumerate(U):
        x = model.eval(x, u)
        out[t] = x
    return out
