"""Dense reference computations used to certify the dynamic-programming solvers.

Everything here forms full ``tau``-sized matrices, so it is only meant for
small problems in tests and certificates.

The dense Jacobian ``G`` uses the gradient convention: it is the
``(tau*n_u) x (tau*n_x)`` matrix whose ``(s, t)`` block is ``d x_{t+1} / d u_s``
transposed. ``G^T`` is therefore block lower triangular.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import numpy.typing as npt
import scipy.linalg as sla

from .errors import DimensionError, RegularizationError

FloatArray = npt.NDArray[np.float64]

MAX_DENSE_SIZE = 512


def _default_step(point: FloatArray) -> float:
    return 1e-6 * (1.0 + float(np.linalg.norm(point)))


def fd_jacobian(func: Callable[[FloatArray], FloatArray], point, h: float | None = None) -> FloatArray:
    """Central-difference Jacobian ``d func / d point`` (rows are outputs)."""
    point = np.asarray(point, dtype=float)
    h = _default_step(point) if h is None else h
    f0 = np.atleast_1d(np.asarray(func(point), dtype=float))
    out = np.empty((f0.size, point.size))
    for i in range(point.size):
        e = np.zeros_like(point)
        e[i] = h
        out[:, i] = (np.atleast_1d(func(point + e)) - np.atleast_1d(func(point - e))) / (2 * h)
    return out


def fd_gradient(func: Callable[[FloatArray], float], point, h: float | None = None) -> FloatArray:
    """Central-difference gradient of a scalar function."""
    return fd_jacobian(lambda z: np.array([func(z)]), point, h)[0]


@dataclass(frozen=True)
class DenseJacobian:
    G: FloatArray
    tau: int
    n_x: int
    n_u: int

    @property
    def jacobian(self) -> FloatArray:
        """Ordinary Jacobian ``d (x_1..x_tau) / d (u_0..u_{tau-1})``."""
        return self.G.T


def _check_size(tau, n_x, n_u):
    if tau * (n_x + n_u) > MAX_DENSE_SIZE:
        raise ValueError(
            f"dense reference limited to tau*(n_x+n_u) <= {MAX_DENSE_SIZE}, got {tau * (n_x + n_u)}"
        )


def _linearize(dyn, x0, U):
    x = np.asarray(x0, dtype=float)
    As, Bs = [], []
    for u in U:
        A, B = dyn.jacobians(x, u)
        As.append(np.asarray(A, dtype=float))
        Bs.append(np.asarray(B, dtype=float))
        x = dyn.eval(x, u)
    return As, Bs


def dense_jacobian(dyn, x0, controls, method: str = "resolvent") -> DenseJacobian:
    """Dense ``G`` for the trajectory started at ``x0`` under ``controls``.

    ``method='resolvent'`` solves ``G = U (I - X)^{-1}`` with the block
    matrices ``U = diag(B_t^T)`` and ``X`` holding ``A_t^T`` on the block
    superdiagonal. ``method='forward'`` multiplies out the transition products.
    """
    U = np.asarray(controls, dtype=float)
    if U.ndim != 2 or U.shape[1] != dyn.n_u:
        raise DimensionError(f"controls: expected shape (tau, {dyn.n_u}), got {U.shape}")
    tau, n_x, n_u = U.shape[0], dyn.n_x, dyn.n_u
    if tau < 1:
        raise ValueError("tau must be >= 1")
    _check_size(tau, n_x, n_u)
    As, Bs = _linearize(dyn, x0, U)
    if method == "resolvent":
        X = np.zeros((tau * n_x, tau * n_x))
        for t in range(1, tau):
            X[(t - 1) * n_x:t * n_x, t * n_x:(t + 1) * n_x] = As[t].T
        Ublk = sla.block_diag(*[B.T for B in Bs])
        # (I - X) is unit upper triangular
        G = sla.solve_triangular(np.eye(tau * n_x) - X, Ublk.T, trans="T", lower=False).T
    elif method == "forward":
        Jac = np.zeros((tau * n_x, tau * n_u))
        for s in range(tau):
            M = Bs[s]
            for t in range(s, tau):
                if t > s:
                    M = As[t] @ M
                Jac[t * n_x:(t + 1) * n_x, s * n_u:(s + 1) * n_u] = M
        G = Jac.T
    else:
        raise ValueError(f"unknown method {method!r}")
    return DenseJacobian(G, tau, n_x, n_u)


def sigma_min_traj(G: FloatArray | DenseJacobian) -> float:
    """Smallest singular value of the dense Jacobian."""
    G = G.G if isinstance(G, DenseJacobian) else np.asarray(G)
    return float(np.linalg.svd(G, compute_uv=False)[-1])


def dense_ggn_step(G, hess_blocks, grad, nu: float) -> FloatArray:
    """Regularized Gauss-Newton direction ``-(G H G^T + nu I)^{-1} G grad``.

    Returned with shape ``(tau, n_u)``.
    """
    DJ = G if isinstance(G, DenseJacobian) else None
    G = DJ.G if DJ is not None else np.asarray(G, dtype=float)
    H = sla.block_diag(*np.asarray(hess_blocks, dtype=float))
    grad = np.asarray(grad, dtype=float).ravel()
    if H.shape[0] != G.shape[1] or grad.size != G.shape[1]:
        raise DimensionError("G, hessian blocks and gradient sizes disagree")
    M = G @ H @ G.T + nu * np.eye(G.shape[0])
    M = 0.5 * (M + M.T)
    try:
        c = sla.cho_factor(M, lower=True)
    except np.linalg.LinAlgError:
        raise RegularizationError(-1, "G H G^T + nu I is not positive definite") from None
    v = -sla.cho_solve(c, G @ grad)
    n_u = DJ.n_u if DJ is not None else None
    if n_u is None:
        return v
    return v.reshape(-1, n_u)


def tail_lqr_qp(model, nu: float, t: int, y_t) -> tuple[float, FloatArray]:
    """Optimal value and controls of the LQR subproblem on stages ``t .. tau``.

    Solved as one dense quadratic program in the controls ``v_t .. v_{tau-1}``
    after eliminating the states; ``model`` is a ``LinQuadModel``. The cost
    includes ``1/2 y_s^T P_s y_s + p_s^T y_s`` for ``s = t .. tau`` (stage 0
    carries no cost) and ``nu/2 ||v_s||^2``. Controls have shape
    ``(tau - t, n_u)``.
    """
    A, B, P, p = model.A, model.B, model.P, model.p
    tau, n_x = p.shape
    n_u = B.shape[2]
    if not 0 <= t <= tau:
        raise ValueError(f"t must be in [0, {tau}]")
    y_t = np.asarray(y_t, dtype=float)

    def P_s(s):
        return np.zeros((n_x, n_x)) if s == 0 else P[s - 1]

    def p_s(s):
        return np.zeros(n_x) if s == 0 else p[s - 1]

    n_stages = tau - t + 1
    n_v = (tau - t) * n_u
    E = np.zeros((n_stages * n_x, n_x))
    F = np.zeros((n_stages * n_x, n_v))
    Phi = np.eye(n_x)
    Fblk = np.zeros((n_x, n_v))
    for i, s in enumerate(range(t, tau + 1)):
        E[i * n_x:(i + 1) * n_x] = Phi
        F[i * n_x:(i + 1) * n_x] = Fblk
        if s < tau:
            Phi = A[s] @ Phi
            Fblk = A[s] @ Fblk
            j = s - t
            Fblk[:, j * n_u:(j + 1) * n_u] += B[s]
    Pbig = sla.block_diag(*[P_s(s) for s in range(t, tau + 1)])
    pbig = np.concatenate([p_s(s) for s in range(t, tau + 1)])
    z0 = E @ y_t
    base = 0.5 * z0 @ Pbig @ z0 + pbig @ z0
    if n_v == 0:
        return float(base), np.zeros((0, n_u))
    _check_size(tau - t, n_x, n_u)
    Hq = F.T @ Pbig @ F + nu * np.eye(n_v)
    Hq = 0.5 * (Hq + Hq.T)
    gq = F.T @ (Pbig @ z0 + pbig)
    try:
        c = sla.cho_factor(Hq, lower=True)
    except np.linalg.LinAlgError:
        raise RegularizationError(t, "tail system is not positive definite") from None
    v = -sla.cho_solve(c, gq)
    return float(base + gq @ v + 0.5 * v @ Hq @ v), v.reshape(-1, n_u)
