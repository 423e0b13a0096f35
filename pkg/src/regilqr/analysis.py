"""Constants, condition numbers, iteration bounds and phase labelling.

Everything here is closed-form arithmetic on the regularity constants of the
dynamics and costs. The quantities are:

* trajectory constants of the composed map ``u -> (x_1..x_tau)``:
  ``S = sum_{t<tau} l_f_x^t``, ``sigma_g = sigma_f/(1+l_f_x)``,
  ``l_g = l_f_u S`` and ``L_g = S (L_xx S l_g^2 + 2 L_xu l_g + L_uu)``;
* condition numbers ``rho_h = L_h/mu_h``, ``rho_g = l_g/sigma_g``,
  ``theta_h = M_h/(2 mu_h^{3/2})`` and ``theta_g = L_g/(sigma_g^2 sqrt(mu_h))``
  (with the ``r``-dependent exponents for gradient-dominated costs).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cost import CostConstants
from .dyn import DynamicConstants


@dataclass(frozen=True)
class TrajectoryConstants:
    S: float
    sigma_g: float
    l_g: float
    L_g: float
    tau: int
    provenance: str = "analytic"

    def as_dict(self) -> dict:
        return {"S": self.S, "sigma_g": self.sigma_g, "l_g": self.l_g, "L_g": self.L_g,
                "tau": self.tau, "provenance": self.provenance}


def geometric_sum(a: float, tau: int) -> float:
    """``sum_{t=0}^{tau-1} a^t`` with ``0^0 = 1``."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if a == 1.0:
        return float(tau)
    if a == 0.0:
        return 1.0
    return float((a ** tau - 1.0) / (a - 1.0))


def trajectory_constants(dc: DynamicConstants, tau: int) -> TrajectoryConstants:
    S = geometric_sum(dc.l_f_x, tau)
    l_g = dc.l_f_u * S
    L_g = S * (dc.L_f_xx * S * l_g ** 2 + 2.0 * dc.L_f_xu * l_g + dc.L_f_uu)
    return TrajectoryConstants(
        S=S, sigma_g=dc.sigma_f / (1.0 + dc.l_f_x), l_g=l_g, L_g=L_g, tau=tau,
        provenance=dc.provenance,
    )


@dataclass(frozen=True)
class ConditionNumbers:
    rho_h: float
    rho_g: float
    theta_h: float
    theta_g: float
    alpha: float
    l: float
    L: float
    sigma: float
    varrho: float
    vartheta_g: float
    vartheta_h: float
    r: float = 0.5
    flags: tuple = ()

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "rho_h", "rho_g", "theta_h", "theta_g", "alpha", "l", "L", "sigma",
            "varrho", "vartheta_g", "vartheta_h", "r")}
        d["flags"] = list(self.flags)
        return d


def _div(a, b):
    if b == 0:
        return 0.0 if a == 0 else math.inf
    return a / b


def condition_numbers(tc: TrajectoryConstants, cc: CostConstants, r: Optional[float] = None) -> ConditionNumbers:
    """Condition numbers for gradient-dominance exponent ``r`` (default: cost's)."""
    r = cc.r if r is None else r
    mu = cc.mu_h if r == cc.r else _mu_for(cc, r)
    flags = []
    if mu <= 0:
        raise ValueError("mu_h must be > 0")
    if tc.sigma_g <= 0:
        raise ValueError("sigma_g must be > 0 (dynamics must be surjective)")
    rho_h = cc.L_h / mu ** (2 * r)
    rho_g = tc.l_g / tc.sigma_g
    theta_h = cc.M_h / (2.0 * mu ** (3 * r))
    theta_g = tc.L_g / (tc.sigma_g ** 2 * mu ** r)
    if theta_g == 0.0:
        # ratio theta_h/theta_g: limit form, 0 when theta_h = 0, +inf otherwise
        flags.append("theta_g_zero")
        ratio = 0.0 if theta_h == 0.0 else math.inf
    else:
        ratio = theta_h / theta_g
    alpha = 4.0 * rho_g ** 2 * (2.0 * rho_g ** 2 * ratio / 3.0 + rho_h)
    l = math.sqrt(cc.L_h) * tc.l_g
    L = math.sqrt(cc.L_h) * tc.L_g
    sigma = math.sqrt(mu) * tc.sigma_g
    return ConditionNumbers(
        rho_h=rho_h, rho_g=rho_g, theta_h=theta_h, theta_g=theta_g, alpha=alpha,
        l=l, L=L, sigma=sigma, varrho=math.sqrt(rho_h) * rho_g,
        vartheta_g=math.sqrt(rho_h) * theta_g, vartheta_h=theta_h, r=r, flags=tuple(flags),
    )


def _mu_for(cc: CostConstants, r: float) -> float:
    from .cost import mu_total

    return mu_total(cc.mu_h_t, r)


def _gamma(x: float) -> float:
    """``1 + sqrt(1 + 1/x)``."""
    return 1.0 + math.sqrt(1.0 + 1.0 / x)


@dataclass(frozen=True)
class BoundTerms:
    """An iteration bound split into its named contributions."""

    theorem: str
    terms: dict
    certified: float
    tail_estimate: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.certified + self.tail_estimate

    def as_dict(self) -> dict:
        return {"theorem": self.theorem, "terms": dict(self.terms), "certified": self.certified,
                "tail_estimate": self.tail_estimate, "total": self.total, "extras": dict(self.extras)}


def theorem5_delta_bar(cn: ConditionNumbers) -> float:
    s = math.sqrt(cn.rho_h)
    inner = cn.theta_h * (1.0 + s * cn.rho_g ** 3 / 3.0) + s * cn.theta_g * (1.0 + cn.rho_g * cn.rho_h)
    return _div(1.0, 32.0 * cn.rho_h * inner ** 2)


def theorem5_lambda_bar(cn: ConditionNumbers) -> float:
    """Radius of the quadratic region used by the strongly convex schedule."""
    s = math.sqrt(cn.rho_h)
    inner = cn.theta_h * (1.0 + s * cn.rho_g ** 3 / 3.0) + s * cn.theta_g * (1.0 + cn.rho_g * cn.rho_h)
    return _div(1.0, 4.0 * inner)


def theorem6_beta(cn: ConditionNumbers, chi: float) -> float:
    ratio = 0.0 if cn.theta_h == 0 else _div(cn.theta_h, cn.theta_g)
    return (1.0 + cn.rho_h * cn.rho_g) * (1.0 + 2.0 * chi) + cn.rho_g ** 3 * 2.0 * ratio / 3.0


def chi_from_eta(tc: TrajectoryConstants, eta: float) -> float:
    return _div(tc.l_g * eta, tc.L_g)


def theorem6_delta_bar(cn: ConditionNumbers, tc: TrajectoryConstants, eta: float) -> float:
    # theta_g * beta and theta_g * chi are formed without dividing by L_g
    tg_beta = _theta_g_beta(cn, tc, eta)
    tg_chi = _theta_g_chi(cn, tc, eta)
    s = math.sqrt(cn.rho_h)
    inner = s * (2.0 * cn.theta_g + 2.0 * tg_beta + s * tg_chi) + 4.0 * cn.theta_h
    return _div(1.0, 32.0 * cn.rho_h * inner ** 2)


def _theta_g_chi(cn, tc, eta):
    # theta_g * chi = l_g eta / (sigma_g^2 sqrt(mu_h))
    sqrt_mu = cn.sigma / tc.sigma_g
    return tc.l_g * eta / (tc.sigma_g ** 2 * sqrt_mu)


def _theta_g_beta(cn, tc, eta):
    tg_chi = _theta_g_chi(cn, tc, eta)
    base = (1.0 + cn.rho_h * cn.rho_g) * (cn.theta_g + 2.0 * tg_chi)
    return base + cn.rho_g ** 3 * 2.0 * cn.theta_h / 3.0


def theorem5_nu_bar(tc: TrajectoryConstants, cc: CostConstants) -> float:
    """Upper bound on ``nu / lambda_h`` along the strongly convex schedule."""
    mu = cc.mu_h
    return math.sqrt(cc.L_h) * (
        tc.L_g + 2.0 * tc.l_g * (cc.M_h * tc.l_g ** 2 / 3.0 + tc.L_g * cc.L_h) / (tc.sigma_g * mu)
    )


def quadratic_radius(cn: ConditionNumbers, nu_bar: float) -> float:
    """``lambda_bar`` below which the Newton decrement contracts quadratically."""
    a = 4.0 * cn.vartheta_h + 3.0 * cn.vartheta_g + 2.0 * nu_bar / cn.sigma ** 2
    b = 2.0 * cn.varrho * cn.vartheta_h
    return _div(1.0, max(a, b))


def lnln_tail(lambda_bar: float, lambda_target: float) -> float:
    """Iterations of quadratic contraction from ``lambda_bar/2`` to ``lambda_target``."""
    if lambda_target <= 0:
        return math.inf
    if not math.isfinite(lambda_bar):
        return 1.0
    ratio = lambda_bar / lambda_target
    if ratio <= 2.0:
        return 1.0
    return float(math.ceil(math.log2(math.log2(ratio)))) + 1.0


def _t3_half(delta0, eps, cn):
    t1 = 2.0 * cn.rho_h * math.log(delta0 / eps)
    if cn.theta_g == 0:
        t2 = 0.0
    else:
        x = cn.theta_g * math.sqrt(delta0) / cn.alpha if cn.alpha > 0 else math.inf
        t2 = 4.0 * cn.theta_g * math.sqrt(delta0) * (2.0 if x == math.inf else _gamma(x))
    return {"log_term": t1, "sqrt_term": t2}


def _t3_general(delta0, eps, cn):
    r = cn.r
    t1 = 2.0 / (2 * r - 1) * cn.rho_h / eps ** (2 * r - 1)
    t2 = 2.0 / (1 - r) * cn.theta_g * delta0 ** (1 - r)
    t3 = 0.0
    if cn.theta_g > 0 and cn.alpha > 0:
        y = (cn.alpha / cn.theta_g) ** (1.0 / r)
        lo, hi = eps, min(max(y, eps), delta0)
        a = 1.0 - 1.5 * r
        pref = math.sqrt(2.0 * cn.theta_g * cn.alpha)
        if hi > lo:
            if abs(a) < 1e-12:
                t3 = pref * math.log(hi / lo)
            else:
                t3 = pref * (hi ** a - lo ** a) / a
    return {"rho_term": t1, "theta_term": t2, "mixed_term": t3}


def _t5_terms(d_hi, d_lo, cn):
    if d_hi <= d_lo:
        return {"sqrt_term": 0.0, "log_term": 0.0, "alpha_term": 0.0}
    t1 = 4.0 * cn.theta_g * (math.sqrt(d_hi) - math.sqrt(d_lo))
    t2 = 2.0 * cn.rho_h * math.log(d_hi / d_lo)
    if cn.alpha == 0 or cn.theta_g == 0:
        t3 = 0.0
    else:
        t3 = 2.0 * cn.alpha * math.log(
            (cn.theta_g * math.sqrt(d_hi) + cn.rho_g) / (cn.theta_g * math.sqrt(d_lo) + cn.rho_g))
    return {"sqrt_term": t1, "log_term": t2, "alpha_term": t3}


def iteration_bound(
    theorem: str,
    delta0: float,
    epsilon: float,
    cn: ConditionNumbers,
    tc: Optional[TrajectoryConstants] = None,
    eta: float = 0.0,
    nu_bar: Optional[float] = None,
) -> BoundTerms:
    """Upper bound on the iterations needed to bring the gap from delta0 to epsilon.

    ``theorem`` is one of ``T3_r_half``, ``T3_r_general``, ``T5`` or ``T6``.
    ``T5`` and ``T6`` bound the iterations until the quadratic region is
    reached and add a doubly logarithmic tail estimate, reported separately.
    For ``T5``, ``nu_bar`` bounds ``nu / lambda_h`` along the run and narrows
    the quadratic region the tail starts from.
    """
    if not (delta0 > 0 and epsilon > 0):
        raise ValueError("delta0 and epsilon must be > 0")
    if epsilon >= delta0:
        return BoundTerms(theorem, {}, 0.0)
    if theorem == "T3_r_half":
        if cn.r != 0.5:
            raise ValueError("T3_r_half needs condition numbers with r = 1/2")
        terms = _t3_half(delta0, epsilon, cn)
        return BoundTerms(theorem, terms, sum(terms.values()))
    if theorem == "T3_r_general":
        if not 0.5 < cn.r < 1.0:
            raise ValueError("T3_r_general needs 1/2 < r < 1")
        terms = _t3_general(delta0, epsilon, cn)
        return BoundTerms(theorem, terms, sum(terms.values()))
    lam_target = math.sqrt(2.0 * epsilon)
    if theorem == "T5":
        d_bar = theorem5_delta_bar(cn)
        terms = _t5_terms(delta0, max(d_bar, epsilon), cn)
        lam_bar = theorem5_lambda_bar(cn)
        if nu_bar is not None:
            # regularization that stays proportional to lambda_h shrinks the quadratic region
            lam_bar = min(lam_bar, quadratic_radius(cn, nu_bar))
        tail = lnln_tail(lam_bar, lam_target) if epsilon < d_bar else 0.0
        return BoundTerms(theorem, terms, sum(terms.values()), tail,
                          {"delta_bar": d_bar, "lambda_bar": lam_bar})
    if theorem == "T6":
        if tc is None:
            raise ValueError("T6 needs trajectory constants")
        d_bar = theorem6_delta_bar(cn, tc, eta)
        lo = max(d_bar, epsilon)
        tg_beta = _theta_g_beta(cn, tc, eta)
        tg_chi = _theta_g_chi(cn, tc, eta)
        if delta0 <= lo:
            terms = {"log_term": 0.0, "sqrt_term": 0.0, "linear_term": 0.0}
        else:
            terms = {
                "log_term": 2.0 * cn.rho_h * math.log(delta0 / lo),
                "sqrt_term": 4.0 * tg_beta * (math.sqrt(delta0) - math.sqrt(lo)),
                "linear_term": 2.0 * cn.rho_h * tg_chi ** 2 * (delta0 - lo),
            }
        lam_bar = math.sqrt(2.0 * cn.rho_h * d_bar)
        tail = lnln_tail(lam_bar, lam_target) if epsilon < d_bar else 0.0
        return BoundTerms(theorem, terms, sum(terms.values()), tail,
                          {"delta_bar": d_bar, "lambda_bar": lam_bar})
    raise ValueError(f"unknown theorem {theorem!r}")


def iteration_bound_eps_form(delta0: float, epsilon: float, cn: ConditionNumbers) -> float:
    """Global strongly convex bound written directly in terms of epsilon."""
    terms = _t5_terms(delta0, epsilon, cn)
    return sum(terms.values())


@dataclass(frozen=True)
class PolicyBounds:
    K_bound: float
    k_bound_per_grad: float

    def as_dict(self):
        return {"K_bound": self.K_bound, "k_bound_per_grad": self.k_bound_per_grad}


def policy_norm_bounds(dc: DynamicConstants, cc: CostConstants, nu: float, tau: int) -> PolicyBounds:
    """Bounds on the stacked feedback gains and ``||k|| / ||grad h||``."""
    mu = min(cc.mu_h_t)
    if dc.sigma_f <= 0 or mu <= 0:
        raise ValueError("policy bounds need sigma_f > 0 and mu_h > 0")
    damp = 1.0 + nu / (dc.l_f_u ** 2 * mu)
    K = dc.l_f_x * cc.L_h / (dc.sigma_f * mu) / damp
    q = cc.L_h / mu * dc.l_f_x
    if nu > 0:
        q = q / (1.0 + dc.sigma_f ** 2 * cc.L_h / nu)
    k = geometric_sum(q, tau) / (dc.sigma_f * mu * damp)
    return PolicyBounds(K, k)


@dataclass
class PhaseReport:
    labels: list
    counts: dict
    rates: dict
    lambda_bar: float
    linear_threshold: float
    flags: tuple = ()

    def as_dict(self):
        return {"counts": dict(self.counts), "rates": dict(self.rates),
                "lambda_bar": self.lambda_bar, "linear_threshold": self.linear_threshold,
                "flags": list(self.flags)}


PHASES = ("slow", "linear", "quadratic")


def label_phases(trace, cn: ConditionNumbers, nu_bar: float) -> PhaseReport:
    """Label each trace row slow, linear or quadratic.

    A row is quadratic once the Newton decrement falls below
    ``quadratic_radius``, linear once the gap falls below ``1/theta_g^2``;
    labels never move back to an earlier phase. Rates are least-squares fits
    on ``log lambda``: the per-step factor for the first two phases and the
    constant ``C`` in ``lambda_{k+1} = C lambda_k^2`` for the quadratic one.
    """
    rows = getattr(trace, "rows", trace)
    lam_bar = quadratic_radius(cn, nu_bar)
    lin = math.inf if cn.theta_g == 0 else 1.0 / cn.theta_g ** 2
    idx = 0
    labels = []
    for row in rows:
        lam = row.newton_decrement
        gap = row.gap
        cur = 0
        if lam is not None and np.isfinite(lam) and lam < lam_bar:
            cur = 2
        elif gap is not None and np.isfinite(gap) and gap < lin:
            cur = 1
        idx = max(idx, cur)
        labels.append(PHASES[idx])
    counts = {p: labels.count(p) for p in PHASES}
    rates = {}
    lams = np.array([r.newton_decrement for r in rows], dtype=float)
    for i, p in enumerate(PHASES):
        sel = [j for j, lab in enumerate(labels) if lab == p and lams[j] > 0 and np.isfinite(lams[j])]
        if len(sel) < 2:
            continue
        ll = np.log(lams[sel])
        if p == "quadratic":
            pairs = [(j, j + 1) for j in sel if j + 1 in sel]
            if pairs:
                a = np.array([np.log(lams[j]) for j, _ in pairs])
                b = np.array([np.log(lams[k]) for _, k in pairs])
                rates[p] = float(np.exp(np.mean(b - 2 * a)))
        else:
            slope = np.polyfit(np.array(sel, dtype=float), ll, 1)[0]
            rates[p] = float(np.exp(slope))
    flags = ()
    if not any(r.gap is not None and np.isfinite(r.gap) for r in rows):
        flags = ("gap_missing",)
    return PhaseReport(labels, counts, rates, lam_bar, lin, flags)
