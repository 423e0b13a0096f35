# cython: language_level=3
"""Compiled LQR kernels. Same contract as ``_lqr_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite

cnp.import_array()


cdef int _cholesky(double[:, ::1] M, int m) noexcept nogil:
    """In-place lower Cholesky factor. Returns 0 on success, 1 otherwise."""
    cdef int i, j, l
    cdef double s
    for j in range(m):
        s = M[j, j]
        for l in range(j):
            s -= M[j, l] * M[j, l]
        if not (s > 0.0) or not isfinite(s):
            return 1
        M[j, j] = sqrt(s)
        for i in range(j + 1, m):
            s = M[i, j]
            for l in range(j):
                s -= M[i, l] * M[j, l]
            M[i, j] = s / M[j, j]
    return 0


cdef void _cho_solve(double[:, ::1] L, int m, double[:] b) noexcept nogil:
    """Solve ``L L^T x = b`` in place."""
    cdef int i, l
    cdef double s
    for i in range(m):
        s = b[i]
        for l in range(i):
            s -= L[i, l] * b[l]
        b[i] = s / L[i, i]
    for i in range(m - 1, -1, -1):
        s = b[i]
        for l in range(i + 1, m):
            s -= L[l, i] * b[l]
        b[i] = s / L[i, i]


def backward_pass_arrays(A_in, B_in, P_in, p_in, double nu):
    cdef double[:, :, ::1] A = np.ascontiguousarray(A_in, dtype=np.float64)
    cdef double[:, :, ::1] B = np.ascontiguousarray(B_in, dtype=np.float64)
    cdef double[:, :, ::1] P = np.ascontiguousarray(P_in, dtype=np.float64)
    cdef double[:, ::1] p = np.ascontiguousarray(p_in, dtype=np.float64)
    cdef int tau = B.shape[0]
    cdef int n = B.shape[1]
    cdef int m = B.shape[2]

    K_arr = np.zeros((tau, m, n))
    k_arr = np.zeros((tau, m))
    J_arr = np.zeros((tau + 1, n, n))
    j_arr = np.zeros((tau + 1, n))
    c_arr = np.zeros(tau + 1)
    cdef double[:, :, ::1] K = K_arr
    cdef double[:, ::1] k = k_arr
    cdef double[:, :, ::1] J = J_arr
    cdef double[:, ::1] j = j_arr
    cdef double[::1] const = c_arr

    # workspace
    cdef double[:, ::1] JB = np.empty((n, m))
    cdef double[:, ::1] M = np.empty((m, m))
    cdef double[:, ::1] G = np.empty((m, n))
    cdef double[:, ::1] JA = np.empty((n, n))
    cdef double[:, ::1] Jt = np.empty((n, n))
    cdef double[::1] g = np.empty(m)
    cdef double[::1] col = np.empty(m)

    cdef int t, a, b, c, fail = -1
    cdef double s

    with nogil:
        for a in range(n):
            j[tau, a] = p[tau - 1, a]
            for b in range(n):
                J[tau, a, b] = P[tau - 1, a, b]

        for t in range(tau - 1, -1, -1):
            # JB = J_{t+1} B_t ; JA = J_{t+1} A_t
            for a in range(n):
                for b in range(m):
                    s = 0.0
                    for c in range(n):
                        s = s + J[t + 1, a, c] * B[t, c, b]
                    JB[a, b] = s
                for b in range(n):
                    s = 0.0
                    for c in range(n):
                        s = s + J[t + 1, a, c] * A[t, c, b]
                    JA[a, b] = s
            # M = nu I + B^T J B (symmetrized), G = B^T J A, g = B^T j
            for a in range(m):
                for b in range(a + 1):
                    s = 0.0
                    for c in range(n):
                        s = s + 0.5 * (B[t, c, a] * JB[c, b] + B[t, c, b] * JB[c, a])
                    M[a, b] = s
                    M[b, a] = s
                M[a, a] += nu
                for b in range(n):
                    s = 0.0
                    for c in range(n):
                        s = s + B[t, c, a] * JA[c, b]
                    G[a, b] = s
                s = 0.0
                for c in range(n):
                    s = s + B[t, c, a] * j[t + 1, c]
                g[a] = s
            if _cholesky(M, m) != 0:
                fail = t
                break
            # K_t = -M^{-1} G ; k_t = -M^{-1} g
            for b in range(n):
                for a in range(m):
                    col[a] = G[a, b]
                _cho_solve(M, m, col)
                for a in range(m):
                    K[t, a, b] = -col[a]
            for a in range(m):
                col[a] = g[a]
            _cho_solve(M, m, col)
            s = 0.0
            for a in range(m):
                k[t, a] = -col[a]
                s = s + g[a] * k[t, a]
            const[t] = const[t + 1] + 0.5 * s
            # J_t = P_t + A^T J A + G^T K ; j_t = p_t + A^T j + G^T k
            for a in range(n):
                for b in range(n):
                    s = 0.0
                    for c in range(n):
                        s = s + A[t, c, a] * JA[c, b]
                    for c in range(m):
                        s = s + G[c, a] * K[t, c, b]
                    if t > 0:
                        s = s + P[t - 1, a, b]
                    Jt[a, b] = s
                s = 0.0
                for c in range(n):
                    s = s + A[t, c, a] * j[t + 1, c]
                for c in range(m):
                    s = s + G[c, a] * k[t, c]
                if t > 0:
                    s = s + p[t - 1, a]
                j[t, a] = s
            for a in range(n):
                for b in range(n):
                    J[t, a, b] = 0.5 * (Jt[a, b] + Jt[b, a])
    return K_arr, k_arr, J_arr, j_arr, c_arr, fail


def rollout_lqr_arrays(K_in, k_in, A_in, B_in):
    cdef double[:, :, ::1] K = np.ascontiguousarray(K_in, dtype=np.float64)
    cdef double[:, ::1] k = np.ascontiguousarray(k_in, dtype=np.float64)
    cdef double[:, :, ::1] A = np.ascontiguousarray(A_in, dtype=np.float64)
    cdef double[:, :, ::1] B = np.ascontiguousarray(B_in, dtype=np.float64)
    cdef int tau = K.shape[0]
    cdef int m = K.shape[1]
    cdef int n = K.shape[2]
    v_arr = np.empty((tau, m))
    y_arr = np.zeros((tau + 1, n))
    cdef double[:, ::1] v = v_arr
    cdef double[:, ::1] y = y_arr
    cdef int t, a, c
    cdef double s
    with nogil:
        for t in range(tau):
            for a in range(m):
                s = k[t, a]
                for c in range(n):
                    s = s + K[t, a, c] * y[t, c]
                v[t, a] = s
            for a in range(n):
                s = 0.0
                for c in range(n):
                    s = s + A[t, a, c] * y[t, c]
                for c in range(m):
                    s = s + B[t, a, c] * v[t, c]
                y[t + 1, a] = s
    return v_arr, y_arr
