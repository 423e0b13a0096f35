"""Static feedback linearization of chain systems into shift-register form.

For the Euler chain ``y+ = (I + delta D) y + delta psi(y, v) e`` the linear
change of variables ``z = Q y`` with ``Q = Pascal_n diag(delta^{i-n})`` and
the input map ``w = c^T Q y + delta psi(y, v)`` give ``z+ = D z + w e``.
After ``n_x`` steps the state in these coordinates is exactly the list of
past inputs, which yields a lower bound on the smallest singular value of
the multi-step input Jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.optimize import brentq

from .dyn import ChainSystem, SamplingBox, multirate, upper_shift

FloatArray = npt.NDArray[np.float64]


def pascal_matrix(n: int) -> FloatArray:
    """Lower-triangular Pascal matrix, entry ``(i, j) = C(i, j)`` (0-based).

    Built by the additive recurrence so no factorials appear; every entry is
    exact in double precision for ``n <= 30``.
    """
    if not 1 <= n <= 30:
        raise ValueError(f"n must be in [1, 30], got {n}")
    P = np.zeros((n, n))
    P[:, 0] = 1.0
    for i in range(1, n):
        P[i, 1:i + 1] = P[i - 1, :i] + P[i - 1, 1:i + 1]
    return P


def brunovsky_data(n_x: int, delta: float) -> tuple[FloatArray, FloatArray]:
    """``(Q, c)`` with ``(D + e c^T) Q = Q (I + delta D)`` and ``Q e = e``."""
    scale = np.array([float(delta) ** (i - n_x) for i in range(1, n_x + 1)])
    Q = pascal_matrix(n_x) * scale[None, :]
    # row n_x of the (n_x + 1) Pascal matrix holds C(n_x, i - 1)
    binom = pascal_matrix(n_x + 1)[n_x, :n_x]
    c = np.array([(-1.0) ** (n_x - i) for i in range(1, n_x + 1)]) * binom
    return Q, c


@dataclass(frozen=True)
class BrunovskyTransform:
    chain: ChainSystem
    Q: FloatArray
    c: FloatArray

    @property
    def n_x(self) -> int:
        return self.chain.n_x

    def state_map(self, y) -> FloatArray:
        return self.Q @ np.asarray(y, dtype=float)

    def input_map(self, y, v: float) -> float:
        y = np.asarray(y, dtype=float)
        return float(self.c @ (self.Q @ y) + self.chain.delta * self.chain.psi.value(y, v))

    def input_map_grad_y(self, y, v: float) -> FloatArray:
        return self.Q.T @ self.c + self.chain.delta * self.chain.psi.grad_y(np.asarray(y, dtype=float), v)

    def input_map_dv(self, y, v: float) -> float:
        return self.chain.delta * float(self.chain.psi.d_v(np.asarray(y, dtype=float), v))

    def input_inverse(self, y, w: float, bracket: float = 1e6) -> float:
        """The input ``v`` with ``input_map(y, v) = w`` (psi is monotone in v)."""
        f = lambda v: self.input_map(y, v) - w  # noqa: E731
        lo, hi = -1.0, 1.0
        while f(lo) * f(hi) > 0:
            lo, hi = 2 * lo, 2 * hi
            if hi > bracket:
                raise ValueError("could not bracket the inverse input map")
        return brentq(f, lo, hi, xtol=1e-14, rtol=1e-15)

    def similarity_residual(self) -> float:
        n = self.n_x
        D = upper_shift(n)
        e = np.zeros(n)
        e[-1] = 1.0
        A = np.eye(n) + self.chain.delta * D
        Bmat = D + np.outer(e, self.c)
        return float(np.abs(Bmat @ self.Q - self.Q @ A).max() / max(1.0, np.abs(self.Q).max()))


def brunovsky_transform(chain: ChainSystem) -> BrunovskyTransform:
    if not chain.psi_dv_lower > 0:
        raise ValueError("psi must have |d psi / dv| bounded away from 0 to be linearizable")
    Q, c = brunovsky_data(chain.n_x, chain.delta)
    return BrunovskyTransform(chain, Q, c)


@dataclass(frozen=True)
class BrunovskyReport:
    similarity_residual: float
    max_abs_deviation: float
    max_rel_deviation: float
    canonical_deviation: float
    shift_e_residual: float
    n_steps: int

    def as_dict(self):
        return dict(self.__dict__)


def verify_brunovsky(
    transform: BrunovskyTransform,
    n_steps: int = 50,
    seed: int = 0,
    y0=None,
    controls=None,
    input_scale: float = 1.0,
) -> BrunovskyReport:
    """Simulate the chain and its shift-register form side by side.

    The relative deviation is taken with respect to ``max(1, max_t ||z_t||)``.
    ``canonical_deviation`` compares the transformed state after ``n_x``
    steps with the first ``n_x`` transformed inputs.
    """
    chain = transform.chain
    n = chain.n_x
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(n) if y0 is None else np.asarray(y0, dtype=float)
    V = input_scale * rng.uniform(-1, 1, n_steps) if controls is None else np.asarray(controls, dtype=float).ravel()
    D = upper_shift(n)
    e = np.zeros(n)
    e[-1] = 1.0
    z = transform.state_map(y)
    ws = []
    dev = 0.0
    scale = max(1.0, float(np.linalg.norm(z)))
    canon = np.nan
    for t in range(len(V)):
        w = transform.input_map(y, V[t])
        ws.append(w)
        y = chain.eval(y, np.array([V[t]]))
        z = D @ z + w * e
        zy = transform.state_map(y)
        dev = max(dev, float(np.abs(zy - z).max()))
        scale = max(scale, float(np.linalg.norm(z)))
        if t + 1 == n:
            canon = float(np.abs(zy - np.array(ws[:n])).max())
    return BrunovskyReport(
        similarity_residual=transform.similarity_residual(),
        max_abs_deviation=dev,
        max_rel_deviation=dev / scale,
        canonical_deviation=canon,
        shift_e_residual=float(np.abs(transform.Q @ e - e).max()),
        n_steps=len(V),
    )


@dataclass(frozen=True)
class SurjectivityCertificate:
    sigma_a: float
    l_a: float
    sigma_b: float
    l_b_y: float
    r: int
    bound: float

    def as_dict(self):
        return dict(self.__dict__)


def surjectivity_bound(sigma_a: float, l_a: float, sigma_b: float, l_b_y: float, r: int) -> SurjectivityCertificate:
    """Lower bound on ``sigma_min`` of the ``k >= r`` step input Jacobian."""
    if not (sigma_a > 0 and l_a > 0 and sigma_b > 0) or l_b_y < 0:
        raise ValueError("sigma_a, l_a, sigma_b must be > 0 and l_b_y >= 0")
    if int(r) != r or r < 1:
        raise ValueError("r must be an integer >= 1")
    bound = sigma_b / l_a / (1.0 + (r - 1) * l_b_y / sigma_a)
    return SurjectivityCertificate(float(sigma_a), float(l_a), float(sigma_b), float(l_b_y), int(r), float(bound))


def chain_certificate(chain: ChainSystem, box: SamplingBox, n_samples: int = 500, seed: int = 0) -> SurjectivityCertificate:
    """Certificate for the ``n_x``-step chain with constants sampled on ``box``."""
    tr = brunovsky_transform(chain)
    sv = np.linalg.svd(tr.Q, compute_uv=False)
    rng = np.random.default_rng(seed)
    ys, vs = box.sample(rng, n_samples)
    sig_b = np.inf
    l_b = 0.0
    for y, v in zip(ys, vs):
        sig_b = min(sig_b, abs(tr.input_map_dv(y, float(v[0]))))
        l_b = max(l_b, float(np.linalg.norm(tr.input_map_grad_y(y, float(v[0])))))
    return surjectivity_bound(float(sv[-1]), float(sv[0]), sig_b, l_b, chain.n_x)


def kstep_sigma_min(chain: ChainSystem, k: int, y0, controls) -> float:
    """Smallest singular value of the ``k``-step input Jacobian at a point."""
    m = multirate(chain, k)
    _, B = m.jacobians(np.asarray(y0, dtype=float), np.asarray(controls, dtype=float).ravel())
    return float(np.linalg.svd(B, compute_uv=False)[-1])
