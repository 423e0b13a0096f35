"""Command-line experiment runner.

Subcommands::

    regilqr run CONFIG
    regilqr bench CONFIG --horizons 16,32,64
    regilqr compare CONFIG --algorithms ilqr,iddp,gd
    regilqr certify CONFIG

Exit codes: 0 converged (or certificate holds), 2 iteration budget exhausted,
3 numerical failure (or certificate violated), 4 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import config as cfgmod
from .analysis import (
    condition_numbers,
    iteration_bound,
    label_phases,
    theorem5_nu_bar,
)
from .dense_ref import MAX_DENSE_SIZE, dense_ggn_step, dense_jacobian, sigma_min_traj
from .cost import total_grad_hess
from .dyn import ChainSystem, MultiRate, SamplingBox
from .errors import ConfigError, NumericalError
from .solver import (
    EXIT_CODES,
    ConvergenceTrace,
    Problem,
    ScheduleConstants,
    SolverConfig,
    adjoint_gradient,
    backward_pass,
    estimate_eta,
    forward_pass,
    objective,
    rollout_lqr,
    solve,
)

EXIT_CONFIG = 4
EPS_GAP = 1e-6


def _finite(obj):
    """Replace non-finite floats by None so reports stay valid JSON."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path, payload):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_finite(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def make_problem(exp: cfgmod.Experiment) -> Problem:
    return Problem(exp.dyn, exp.cost, exp.x0, exp.horizon, exp.u0)


def resolve_eta(exp: cfgmod.Experiment) -> tuple[float, str]:
    eta = exp.solver.get("eta", "empirical")
    if eta == "empirical":
        return estimate_eta(make_problem(exp), seed=exp.seed), "empirical"
    return float(eta), "configured"


def make_solver_config(exp: cfgmod.Experiment, algorithm: Optional[str] = None, eta: Optional[float] = None,
                       record_time: bool = False) -> SolverConfig:
    s = dict(exp.solver)
    alg = algorithm or s["algorithm"]
    schedule = s["schedule"]
    if alg == "iddp" and schedule == "theorem5":
        schedule = "theorem6"
    if alg == "ilqr" and schedule == "theorem6":
        schedule = "theorem5"
    need_eta = alg == "iddp" and schedule == "theorem6"
    if need_eta and eta is None:
        eta, _ = resolve_eta(exp)
    consts = ScheduleConstants.from_models(exp.traj_constants, exp.cost_constants, eta or 0.0)
    gd_step = None
    if alg == "gd":
        gd_step = s.get("gd_step", "auto")
        if gd_step == "auto":
            gd_step = 1.0 / (exp.cost_constants.L_h * exp.traj_constants.l_g ** 2)
    return SolverConfig(
        algorithm=alg, schedule=schedule, nu_bar0=s["nu_bar0"], growth=s["growth"],
        halve_after_accept=s["halve_after_accept"], max_iters=s["max_iters"],
        grad_tol=s["grad_tol"], gap_tol=s["gap_tol"], optimal_value=exp.optimal_value(),
        constants=consts, gd_step=gd_step, record_time=record_time,
    )


def _iters_to_gap(trace: ConvergenceTrace, eps: float) -> Optional[int]:
    for r in trace.rows:
        if r.gap is not None and math.isfinite(r.gap) and r.gap <= eps:
            return r.iter
    return None


def run_nu_bar(trace: ConvergenceTrace, nu_bar_thm: float) -> float:
    """Largest ``nu / lambda_h`` of the run, at least the theorem value."""
    obs = [r.nu / r.newton_decrement for r in trace.rows
           if r.accepted and r.newton_decrement and np.isfinite(r.newton_decrement)]
    return max([nu_bar_thm, *obs])


def run_experiment(exp: cfgmod.Experiment, algorithm: Optional[str] = None,
                   record_time: bool = False) -> tuple[ConvergenceTrace, dict]:
    """Solve one experiment and assemble its report."""
    t0 = time.perf_counter()
    eta_info = None
    alg = algorithm or exp.solver["algorithm"]
    eta = None
    if alg == "iddp" and exp.solver["schedule"] in ("theorem5", "theorem6"):
        eta, prov = resolve_eta(exp)
        eta_info = {"eta": eta, "provenance": prov}
    scfg = make_solver_config(exp, algorithm, eta, record_time)
    trace = solve(make_problem(exp), scfg)
    cc, tc = exp.cost_constants, exp.traj_constants
    report = {
        "artifact": {"name": "regilqr", "version": __version__},
        "status": trace.status,
        "exit_code": EXIT_CODES[trace.status],
        "message": trace.message,
        "algorithm": scfg.algorithm,
        "schedule": scfg.schedule,
        "iterations": trace.n_iters,
        "final_objective": trace.final.objective,
        "final_grad_norm": trace.final.grad_obj_norm,
        "final_gap": trace.final.gap,
        "optimal_value": scfg.optimal_value,
        "constants": {
            "dynamics": exp.dyn_constants.as_dict(),
            "cost": cc.as_dict(),
            "trajectory": tc.as_dict(),
        },
    }
    if eta_info:
        report["constants"]["eta"] = eta_info
    if trace.status == "numerical_failure":
        report["failed_at_iteration"] = trace.n_iters
    if tc.sigma_g > 0 and cc.mu_h > 0:
        cn = condition_numbers(tc, cc)
        nu_bar = run_nu_bar(trace, theorem5_nu_bar(tc, cc))
        phases = label_phases(trace, cn, nu_bar)
        for r, lab in zip(trace.rows, phases.labels):
            r.phase = lab
        report["constants"]["condition"] = cn.as_dict()
        report["constants"]["nu_bar"] = nu_bar
        report["phase_summary"] = phases.as_dict()
        delta0 = trace.rows[0].gap
        if cc.r == 0.5 and scfg.optimal_value is not None and delta0 is not None and delta0 > 0:
            b = iteration_bound("T5", delta0, EPS_GAP, cn, nu_bar=nu_bar)
            report["bound_vs_observed"] = {
                "epsilon": EPS_GAP,
                "delta0": delta0,
                "T5": b.as_dict(),
                "observed_iterations": _iters_to_gap(trace, EPS_GAP),
            }
    report["wall_time_s"] = time.perf_counter() - t0
    report["config"] = exp.doc
    return trace, report


def cmd_run(args) -> int:
    doc = cfgmod.load(args.config)
    exp = cfgmod.build(doc)
    out = doc.get("output", {})
    record_time = bool(out.get("record_time", False))
    trace, report = run_experiment(exp, record_time=record_time)
    trace_path = args.trace or out.get("trace_path", "trace.csv")
    report_path = args.report or out.get("report_path", "report.json")
    Path(trace_path).parent.mkdir(parents=True, exist_ok=True)
    trace.to_csv(trace_path)
    _write_json(report_path, report)
    msg = f"{report['status']}: {report['iterations']} iterations, |grad J| = {report['final_grad_norm']:.3e}"
    if trace.message:
        msg += f" ({trace.message})"
    print(msg)
    return report["exit_code"]


# ----------------------------------------------------------------------------
# bench


def iteration_work(problem: Problem, u, nu: float) -> float:
    """One regularized step: linearize, gradient, backward pass, rollout, evaluate."""
    _, _, model = forward_pass(problem.dyn, problem.cost, problem.x0, u)
    adjoint_gradient(model)
    pol = backward_pass(model, nu)
    v = rollout_lqr(pol, model)
    return objective(problem.dyn, problem.cost, problem.x0, u + v)


def dense_iteration_work(problem: Problem, u, nu: float) -> float:
    traj, _, _ = forward_pass(problem.dyn, problem.cost, problem.x0, u)
    G = dense_jacobian(problem.dyn, problem.x0, u)
    g, H = total_grad_hess(problem.cost, traj)
    v = dense_ggn_step(G, H, g, nu)
    return objective(problem.dyn, problem.cost, problem.x0, u + v)


def time_horizon(exp: cfgmod.Experiment, horizon: int, reps: int = 5, calls: Optional[int] = None,
                 dense: bool = False, target_ms: float = 40.0) -> dict:
    """Median wall time of one iteration's work at a given horizon.

    Each repetition times ``calls`` back-to-back iterations; by default enough
    to fill about ``target_ms`` so that timer and scheduler jitter average out.
    """
    prob = Problem(exp.dyn, exp.cost.with_horizon(horizon), exp.x0, horizon)
    u = prob.initial_controls()
    nu = exp.solver["nu_bar0"] * max(1.0, float(np.linalg.norm(forward_pass(prob.dyn, prob.cost, prob.x0, u)[2].p)))
    work = dense_iteration_work if dense else iteration_work
    t0 = time.perf_counter()
    work(prob, u, nu)  # warm-up
    once_ms = (time.perf_counter() - t0) * 1e3
    if calls is None:
        calls = max(3, math.ceil(target_ms / max(once_ms, 1e-3)))
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        for _ in range(calls):
            work(prob, u, nu)
        samples.append((time.perf_counter() - t0) / calls * 1e3)
    return {"horizon": horizon, "method": "dense" if dense else "dp", "median_ms": statistics.median(samples),
            "min_ms": min(samples), "max_ms": max(samples), "reps": reps}


def fit_linear(xs, ys) -> dict:
    """Least-squares ``y = a x + b`` with its coefficient of determination."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if np.ptp(x) == 0:
        # repeated horizons carry no slope information
        return {"slope": math.nan, "intercept": float(y.mean()), "r2": math.nan}
    a, b = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (a * x + b)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(a), "intercept": float(b), "r2": r2}


def bench_horizon(exp: cfgmod.Experiment, horizons, reps: int = 5, calls: Optional[int] = None, dense: bool = False) -> tuple[list, dict]:
    if len(horizons) < 3 or min(horizons) < 8:
        raise ConfigError("need at least 3 horizons, each >= 8", "/horizons")
    if reps < 5:
        raise ConfigError("need at least 5 repetitions", "/reps")
    rows = [time_horizon(exp, h, reps, calls) for h in horizons]
    fit = fit_linear([r["horizon"] for r in rows], [r["median_ms"] for r in rows])
    med = {r["horizon"]: r["median_ms"] for r in rows}
    fit["doubling_ratios"] = {f"{h}->{2 * h}": med[2 * h] / med[h] for h in sorted(med) if 2 * h in med}
    if dense:
        for h in horizons:
            if h * (exp.dyn.n_x + exp.dyn.n_u) <= MAX_DENSE_SIZE:
                rows.append(time_horizon(exp, h, reps, calls, dense=True))
    return rows, fit


def cmd_bench(args) -> int:
    try:
        horizons = [int(h) for h in args.horizons.split(",") if h.strip()]
    except ValueError:
        raise ConfigError("horizons must be a comma-separated list of integers", "/horizons") from None
    exp = cfgmod.build(cfgmod.load(args.config))
    rows, fit = bench_horizon(exp, horizons, args.reps, args.calls, args.dense)
    out = args.out or "bench.csv"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["horizon", "method", "median_ms", "min_ms", "max_ms", "reps"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(json.dumps(_finite(fit), indent=2))
    return 0


# ----------------------------------------------------------------------------
# compare


def _compare_task(doc: dict, algorithm: str, trace_path: str) -> tuple[str, str, int]:
    exp = cfgmod.build(doc)
    trace, report = run_experiment(exp, algorithm)
    trace.to_csv(trace_path)
    return algorithm, trace.status, report["exit_code"]


def _workers(n_tasks: int) -> int:
    try:
        cap = int(os.environ.get("GGN_THREADS", "1"))
    except ValueError:
        raise ConfigError("GGN_THREADS must be an integer", "/env/GGN_THREADS") from None
    return max(1, min(cap, n_tasks))


def compare(doc: dict, algorithms, out: str) -> dict:
    if len(algorithms) < 2:
        raise ConfigError("compare needs at least two algorithms", "/algorithms")
    bad = [a for a in algorithms if a not in ("ilqr", "iddp", "gd")]
    if bad:
        raise ConfigError(f"unknown algorithm {bad[0]!r}", "/algorithms")
    cfgmod.build(doc)  # validate once up front
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    paths = {a: str(out.with_name(f"{out.stem}.{a}.csv")) for a in algorithms}
    n = _workers(len(algorithms))
    if n == 1:
        results = [_compare_task(doc, a, paths[a]) for a in algorithms]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_compare_task, [doc] * len(algorithms), algorithms,
                                    [paths[a] for a in algorithms]))
    # merge per-task traces into aligned columns
    cols = {}
    for a in algorithms:
        with open(paths[a]) as fh:
            cols[a] = list(csv.DictReader(fh))
    n_rows = max(len(v) for v in cols.values())
    header = ["iter"]
    for a in algorithms:
        header += [f"objective_{a}", f"gap_{a}", f"grad_obj_norm_{a}"]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n_rows):
            row = [i]
            for a in algorithms:
                r = cols[a][i] if i < len(cols[a]) else None
                row += [r["objective"], r["gap"], r["grad_obj_norm"]] if r else ["", "", ""]
            w.writerow(row)
    return {a: {"status": s, "exit_code": c, "iterations": len(cols[a]) - 1} for a, s, c in results}


def cmd_compare(args) -> int:
    doc = cfgmod.load(args.config)
    algs = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    summary = compare(doc, algs, args.out or "compare.csv")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return max(v["exit_code"] for v in summary.values())


# ----------------------------------------------------------------------------
# certify


def _chain_base(dyn) -> Optional[ChainSystem]:
    if isinstance(dyn, ChainSystem):
        return dyn
    if isinstance(dyn, MultiRate) and isinstance(dyn.base, ChainSystem):
        return dyn.base
    return None


def certify(exp: cfgmod.Experiment, n_commands: int = 20, n_points: int = 100) -> dict:
    """Numeric checks of the surjectivity certificates for an experiment."""
    from .feedlin import brunovsky_transform, chain_certificate, kstep_sigma_min, verify_brunovsky

    rng = np.random.default_rng(exp.seed)
    dc, tc = exp.dyn_constants, exp.traj_constants
    box = exp.box or SamplingBox.symmetric(exp.dyn.n_x, exp.dyn.n_u, 1.0, 1.0)
    lemma_bound = dc.sigma_f / (1.0 + dc.l_f_x)
    tau = min(exp.horizon, MAX_DENSE_SIZE // (exp.dyn.n_x + exp.dyn.n_u))
    worst_gap = math.inf
    worst_norm = -math.inf
    for _ in range(n_commands):
        U = rng.uniform(box.u_low, box.u_high, size=(tau, exp.dyn.n_u))
        G = dense_jacobian(exp.dyn, exp.x0, U)
        worst_gap = min(worst_gap, sigma_min_traj(G) - lemma_bound)
        worst_norm = max(worst_norm, float(np.linalg.norm(G.G, 2)) - tc.l_g * (1 + 1e-12))
    out = {
        "lemma_sigma_min": {"bound": lemma_bound, "min_margin": worst_gap, "holds": worst_gap >= -1e-10,
                            "n_commands": n_commands, "tau": tau},
        "jacobian_norm": {"bound": tc.l_g, "max_excess": worst_norm, "holds": worst_norm <= 1e-10},
        "constants": dc.as_dict(),
    }
    chain = _chain_base(exp.dyn)
    if chain is not None:
        cbox = SamplingBox(box.x_low, box.x_high, box.u_low[:1], box.u_high[:1])
        cert = chain_certificate(chain, cbox, seed=exp.seed)
        margins = []
        for _ in range(n_points):
            y0 = rng.uniform(cbox.x_low, cbox.x_high)
            v = rng.uniform(cbox.u_low[0], cbox.u_high[0], size=chain.n_x)
            margins.append(kstep_sigma_min(chain, chain.n_x, y0, v) - cert.bound)
        rep = verify_brunovsky(brunovsky_transform(chain), seed=exp.seed)
        out["surjectivity"] = {**cert.as_dict(), "min_margin": min(margins), "holds": min(margins) >= 0,
                               "n_points": n_points}
        out["brunovsky"] = {**rep.as_dict(),
                            "holds": rep.max_rel_deviation <= 1e-9 and rep.canonical_deviation <= 1e-10}
    out["all_hold"] = all(v["holds"] for v in out.values() if isinstance(v, dict) and "holds" in v)
    return out


def cmd_certify(args) -> int:
    exp = cfgmod.build(cfgmod.load(args.config))
    res = certify(exp, args.n_commands)
    if args.out:
        _write_json(args.out, res)
    print(json.dumps(_finite(res), indent=2, sort_keys=True))
    return 0 if res["all_hold"] else 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="regilqr", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"regilqr {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="solve one configured problem")
    r.add_argument("config")
    r.add_argument("--trace", help="trace CSV path (overrides config)")
    r.add_argument("--report", help="report JSON path (overrides config)")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="per-iteration time versus horizon")
    b.add_argument("config")
    b.add_argument("--horizons", required=True, help="comma-separated, e.g. 16,32,64")
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--calls", type=int, default=None, help="iterations timed per repetition (default: adaptive)")
    b.add_argument("--dense", action="store_true", help="add dense-reference contrast rows")
    b.add_argument("--out", help="scaling table CSV path")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("compare", help="run several algorithms from the same start")
    c.add_argument("config")
    c.add_argument("--algorithms", required=True, help="comma-separated subset of ilqr,iddp,gd")
    c.add_argument("--out", help="comparison CSV path")
    c.set_defaults(func=cmd_compare)

    k = sub.add_parser("certify", help="surjectivity certificates and numeric checks")
    k.add_argument("config")
    k.add_argument("--n-commands", type=int, default=20)
    k.add_argument("--out", help="certificate JSON path")
    k.set_defaults(func=cmd_certify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error at {exc.path}: {exc.detail}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
