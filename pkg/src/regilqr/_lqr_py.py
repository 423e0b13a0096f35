"""Pure numpy LQR kernels (fallback when the compiled module is missing)."""
import numpy as np
import scipy.linalg as sla


def backward_pass_arrays(A, B, P, p, nu):
    """Riccati recursion for the regularized LQR subproblem.

    Arrays: ``A (tau,n,n)``, ``B (tau,n,m)``, ``P (tau,n,n)`` and ``p (tau,n)``
    hold stages 1..tau in rows 0..tau-1 for P and p, and stages 0..tau-1 for
    A and B. Returns ``(K, k, J, j, const, fail_t)`` where ``fail_t`` is -1 on
    success or the stage whose regularized Hessian was not positive definite.
    """
    tau, n, m = B.shape
    K = np.zeros((tau, m, n))
    k = np.zeros((tau, m))
    J = np.zeros((tau + 1, n, n))
    j = np.zeros((tau + 1, n))
    const = np.zeros(tau + 1)
    J[tau] = P[tau - 1]
    j[tau] = p[tau - 1]
    eye = np.eye(m)
    for t in range(tau - 1, -1, -1):
        At, Bt, Jn, jn = A[t], B[t], J[t + 1], j[t + 1]
        JB = Jn @ Bt
        M = nu * eye + Bt.T @ JB
        G = JB.T @ At
        g = Bt.T @ jn
        try:
            c = sla.cho_factor(0.5 * (M + M.T), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            return K, k, J, j, const, t
        if not np.all(np.isfinite(c[0])):
            return K, k, J, j, const, t
        K[t] = -sla.cho_solve(c, G, check_finite=False)
        k[t] = -sla.cho_solve(c, g, check_finite=False)
        Jt = At.T @ Jn @ At + G.T @ K[t]
        jt = At.T @ jn + G.T @ k[t]
        if t > 0:
            Jt += P[t - 1]
            jt += p[t - 1]
        J[t] = 0.5 * (Jt + Jt.T)
        j[t] = jt
        const[t] = const[t + 1] + 0.5 * g @ k[t]
    return K, k, J, j, const, -1


def rollout_lqr_arrays(K, k, A, B):
    """Closed-loop rollout ``v_t = K_t y_t + k_t`` from ``y_0 = 0``.

    Returns ``(v (tau,m), y (tau+1,n))``.
    """
    tau, m, n = K.shape
    v = np.empty((tau, m))
    y = np.zeros((tau + 1, n))
    for t in range(tau):
        v[t] = K[t] @ y[t] + k[t]
        y[t + 1] = A[t] @ y[t] + B[t] @ v[t]
    return v, y
