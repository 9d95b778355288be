"""Command-line front end: ``dcmg {certify,equilibrium,stability,simulate}``.

Exit codes: 0 success or certified, 1 analysis-negative (infeasible,
uncertified, nonconvergent, or collapse under ``--expect-stable``), 2 usage
or configuration error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import __version__
from .document import ConfigDocument, ConfigError, load_document
from .dynamics import SystemState
from .equilibrium import (
    ConvergenceError,
    EquilibriumError,
    balance_residuals,
    certificate,
    primary_only_equilibrium,
    reconstruct_full,
    solve_zie_newton,
    solve_zip_fixed_point,
)
from .network import TopologyError
from .scenarios import collapse_scale, phase_report, run_collapse_scenario, run_paper_scenario
from .simulator import integrate
from .stability import stability_report

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_USAGE = 2


def _vec(x):
    return [float(v) for v in np.asarray(x).ravel()]


def _finite_or_none(value):
    """Replace NaN and infinities by ``None`` so the JSON stays standard."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: _finite_or_none(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite_or_none(v) for v in value]
    return value


def _emit(report: dict, as_json: bool, out=None):
    out = sys.stdout if out is None else out
    if as_json:
        out.write(json.dumps(_finite_or_none(report), indent=2, allow_nan=False) + "\n")
        return
    for key, value in report.items():
        if isinstance(value, list) and value and isinstance(value[0], float):
            value = " ".join(f"{v:.10g}" for v in value)
        elif isinstance(value, float):
            value = f"{value:.10g}"
        out.write(f"{key}: {value}\n")


# -- certify ----------------------------------------------------------------

def certify_report(doc: ConfigDocument) -> dict:
    cert = certificate(doc.config)
    rep = cert.to_dict()
    rep["J_excludes_solutions"] = cert.J_excludes_solutions if cert.feasible else None
    return rep


def cmd_certify(args) -> int:
    doc = load_document(args.config)
    if not doc.config.is_zip():
        sys.stderr.write("certify: the contraction certificate covers ZIP loads only (r = 0 for every "
                         "power term); use `equilibrium --newton` for exponential loads\n")
        return EXIT_USAGE
    rep = certify_report(doc)
    _emit(rep, args.json)
    return EXIT_OK if rep["feasible"] else EXIT_NEGATIVE


# -- equilibrium ------------------------------------------------------------

def solve_voltages(doc: ConfigDocument, method: str | None = None):
    """Equilibrium PC voltages and the method used.

    Without an explicit method, ZIP networks with a feasible certificate use
    the fixed point and everything else uses Newton.
    """
    cfg = doc.config
    if method is None:
        method = "fixed_point" if cfg.is_zip() and certificate(cfg).feasible else "newton"
    if method == "fixed_point":
        V, _ = solve_zip_fixed_point(cfg, tol=doc.solver.tol, max_iter=doc.solver.max_iter)
    else:
        V = solve_zie_newton(cfg, tol=doc.solver.tol, max_iter=doc.solver.max_iter)
    return V, method


def equilibrium_report(doc: ConfigDocument, method: str | None = None) -> dict:
    cfg = doc.config
    V, method = solve_voltages(doc, method)
    sol = reconstruct_full(cfg, doc.gains, V)
    s = cfg.I_s
    res_a, res_b = balance_residuals(cfg, V)
    return {
        "method": method,
        "V_bar": _vec(V),
        "epsilon": sol.epsilon,
        "I_t_bar": _vec(sol.I_t_bar),
        "residual_16a": float(np.max(np.abs(res_a))),
        "residual_16b": abs(float(res_b)),
        "sharing_deviation": sol.sharing_deviation(s),
        "balance_error": abs(float(s @ (V - cfg.V_ref))),
    }


def cmd_equilibrium(args) -> int:
    doc = load_document(args.config)
    try:
        rep = equilibrium_report(doc, args.method)
    except ConvergenceError as exc:
        sys.stderr.write(f"equilibrium: {exc}\nresidual history: {' '.join(f'{h:.3g}' for h in exc.history)}\n")
        return EXIT_NEGATIVE
    except EquilibriumError as exc:
        sys.stderr.write(f"equilibrium: {exc}\n")
        return EXIT_NEGATIVE
    _emit(rep, args.json)
    return EXIT_OK


# -- stability --------------------------------------------------------------

def stability_report_dict(doc: ConfigDocument, method: str | None = None) -> dict:
    V, _ = solve_voltages(doc, method)
    rep = stability_report(doc.config, doc.gains, V)
    out = {"V_bar": _vec(V)}
    out.update(rep.to_dict())
    out["methods_agree"] = rep.methods_agree
    return out


def cmd_stability(args) -> int:
    doc = load_document(args.config)
    try:
        rep = stability_report_dict(doc, args.method)
    except EquilibriumError as exc:
        sys.stderr.write(f"stability: no equilibrium to certify: {exc}\n")
        return EXIT_NEGATIVE
    _emit(rep, args.json)
    return EXIT_OK if rep["verdict"] != "not_certified" else EXIT_NEGATIVE


# -- simulate ---------------------------------------------------------------

def initial_state(doc: ConfigDocument) -> SystemState:
    cfg, gains, sc = doc.config, doc.gains, doc.scenario
    n, m = cfg.n, cfg.m
    if sc.start == "equilibrium":
        V, _ = solve_voltages(doc)
        return reconstruct_full(cfg, gains, V).state()
    closed = range(m) if sc.closed_lines is None else sc.closed_lines
    lines = [] if sc.start == "isolated" else sorted(closed)
    sub, _, line_index = cfg.subsystem(range(n), lines=lines)
    X = primary_only_equilibrium(sub, gains)
    I = np.zeros(m)
    I[line_index] = X.I
    return SystemState(X.V, X.I_t, X.v, I, np.zeros(n))


def run_simulation(doc: ConfigDocument, dt: float | None = None, t_end: float | None = None):
    """Run the document's scenario; returns ``(trace, phases, certificate)``."""
    sc = doc.scenario
    dt = doc.integrator.dt if dt is None else dt
    every = doc.integrator.record_every
    if sc.preset == "six_dgu":
        res = run_paper_scenario(doc.config, doc.gains, dt=dt, record_every=every, check=False)
        return res.trace, res.phases, None
    if sc.preset == "collapse":
        scale = sc.resistance_scale if sc.resistance_scale is not None else collapse_scale(doc.config)
        res = run_collapse_scenario(doc.config, doc.gains, scale, t_end=t_end or doc.integrator.t_end,
                                    dt=dt, record_every=every)
        return res.trace, [], res.certificate
    t_end = doc.integrator.t_end if t_end is None else t_end
    trace = integrate(doc.config, doc.gains, initial_state(doc), sc.events, t_end=t_end, dt=dt,
                      active=sc.active, closed_lines=sc.closed_lines, secondary=sc.secondary,
                      record_every=every)
    bounds = sorted({seg.start for seg in trace.segments} | {float(trace.times[-1])})
    phases = [phase_report(trace, f"segment_{k + 1}", a, b)
              for k, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])) if b - a > trace.dt]
    return trace, phases, None


def write_plot_data(trace, path, per_unit: bool, stride: int = 1):
    """Tab-separated time, PC voltages and filter currents."""
    n = trace.n
    cur = trace.per_unit_currents() if per_unit else trace.I_t
    tag = "It_pu" if per_unit else "It"
    with open(path, "w") as fh:
        fh.write("\t".join(["time"] + [f"V_{i + 1}" for i in range(n)] + [f"{tag}_{i + 1}" for i in range(n)]) + "\n")
        for k in range(0, trace.times.size, stride):
            row = [trace.times[k]] + list(trace.V[k]) + list(cur[k])
            fh.write("\t".join(repr(float(x)) for x in row) + "\n")


def cmd_simulate(args) -> int:
    doc = load_document(args.config)
    trace, phases, cert = run_simulation(doc, args.dt, args.t_end)
    trace.to_csv(args.out, per_unit=args.per_unit)
    if args.plot_data:
        write_plot_data(trace, args.plot_data, args.per_unit, args.plot_stride)
    term = trace.termination
    summary = {
        "termination": term.kind,
        "samples": int(trace.times.size),
        "t_final": float(trace.times[-1]),
    }
    if term.collapsed:
        summary["collapse_node"] = term.node
        summary["collapse_time"] = term.time
    if cert is not None:
        summary["Delta"] = cert.Delta
        summary["certificate_feasible"] = cert.feasible
    summary["phases"] = [
        {"name": p.name, "start": p.start, "end": p.end, "steady_time": p.steady_time, "sharing": p.sharing,
         "balance": p.balance, "primary_error": p.primary_error, "ok": p.ok}
        for p in phases
    ]
    if args.json:
        _emit(summary, True)
    else:
        phase_rows = summary.pop("phases")
        _emit(summary, False)
        for p in phase_rows:
            steady = "none" if p["steady_time"] is None else f"{p['steady_time']:.4g}"
            sys.stdout.write(f"phase {p['name']} [{p['start']:.6g}, {p['end']:.6g}] steady_at={steady} "
                             f"sharing={p['sharing']:.3g} balance={p['balance']:.3g} "
                             f"primary_error={p['primary_error']:.3g} ok={p['ok']}\n")
    if args.expect_stable and (term.collapsed or not all(p.ok for p in phases)):
        return EXIT_NEGATIVE
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def _positive_float(text):
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not x > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return x


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcmg", description="DC microgrid analysis and simulation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, metavar="PATH", help="JSON configuration document")
        p.add_argument("--json", action="store_true", help="machine-readable output")

    def solver_flags(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--newton", dest="method", action="store_const", const="newton")
        g.add_argument("--fixed-point", dest="method", action="store_const", const="fixed_point")
        p.set_defaults(method=None)

    p = sub.add_parser("certify", help="existence certificate for ZIP loads")
    common(p)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("equilibrium", help="steady state under secondary control")
    common(p)
    solver_flags(p)
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("stability", help="Lyapunov certificate at the equilibrium")
    common(p)
    solver_flags(p)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("simulate", help="time-domain run with the configured scenario")
    common(p)
    p.add_argument("--out", required=True, metavar="PATH", help="CSV trace destination")
    p.add_argument("--dt", type=_positive_float, default=None, metavar="SECONDS")
    p.add_argument("--t-end", type=_positive_float, default=None, metavar="SECONDS")
    p.add_argument("--expect-stable", action="store_true",
                   help="exit 1 on voltage collapse or a phase missing its objectives")
    p.add_argument("--per-unit", action="store_true", help="filter currents divided by rated currents")
    p.add_argument("--plot-data", metavar="PATH", help="also write a tab-separated plot file")
    p.add_argument("--plot-stride", type=int, default=10, metavar="K", help="keep every K-th sample in plot data")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, TopologyError) as exc:
        sys.stderr.write(f"{args.command}: configuration error: {exc}\n")
        return EXIT_USAGE
    except OSError as exc:
        sys.stderr.write(f"{args.command}: {exc}\n")
        return EXIT_USAGE
    except ValueError as exc:
        sys.stderr.write(f"{args.command}: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
