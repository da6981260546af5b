"""Command-line front end.

Every subcommand reads a ``key = value`` configuration file, writes one or
more CSV tables plus ``summary.json`` into the output directory and exits
with 0 on success, 1 on configuration errors, 2 on numerical failures and
3 when a verdict was requested but every result was inconclusive.

Example configuration::

    model.kind = refractory
    model.sigma = 1
    model.phi = satquad
    model.b = 0.43
    d = 0.05
"""

from __future__ import annotations

import argparse
import importlib
import logging
import math
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DomainError, ElapsedStabilityError, NumericalError
from .fileio import RawConfig, load_config, parse_config, write_csv, write_summary
from .firing import (ConstantRate, CustomModel, FiringModel, RefractoryModel, SatQuad, Sigmoid9)
from .kernel import kernel_h0
from .scan import (FAMILIES, LEVEL_A_EQ_1, LEVEL_A_EQ_1_PLUS_SIGMA_PHI, bifurcation_scan,
                   find_fold_points, find_level_crossings, pseudo_equilibrium_sequence)
from .simulator import (AgeGrid, detect_period, distance_to_equilibrium, exponential_profile,
                        perturbation_growth_rate, perturbed_equilibrium, simulate)
from .spectrum import (CharFunction, Verdict, classify_stability, critical_delays, delay_grid,
                       dominant_root, trace_dominant_root)
from .steady import density_n_star, find_steady_states

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INCONCLUSIVE = 0, 1, 2, 3

MODEL_KEYS = ("model.kind", "model.sigma", "model.phi", "model.b", "model.b_bar", "model.s",
              "model.rate", "model.d_rate", "model.lower_rate", "model.label")
DELAY_RANGE_KEYS = ("delays.lo", "delays.hi", "delays.max_step", "steady.index")


# ---------------------------------------------------------------------------
# Model construction


def _import_callable(path: str, cfg: RawConfig, key: str) -> Callable:
    module_name, _, attr = path.partition(":")
    if not module_name or not attr:
        raise ConfigurationError(f"{cfg.where(key)}: {key} must look like 'package.module:function'")
    try:
        return getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigurationError(f"{cfg.where(key)}: cannot import {path!r}: {exc}") from None


def build_model(cfg: RawConfig) -> FiringModel:
    """Firing model described by the ``model.*`` keys."""
    kind = cfg.get_str("model.kind", "refractory", ("refractory", "custom"))
    sigma = cfg.get_float("model.sigma", positive=kind == "refractory", nonnegative=True)
    if kind == "custom":
        rate = _import_callable(cfg.get_str("model.rate"), cfg, "model.rate")
        d_rate = None
        if "model.d_rate" in cfg:
            d_rate = _import_callable(cfg.get_str("model.d_rate"), cfg, "model.d_rate")
        return CustomModel(rate, sigma, cfg.get_float("model.lower_rate", positive=True), d_rate,
                           label=cfg.get_str("model.label", "custom"))
    phi_name = cfg.get_str("model.phi", choices=("sigmoid9", "satquad", "constant"))
    if phi_name == "sigmoid9":
        phi = Sigmoid9(cfg.get_float("model.b", nonnegative=True))
    elif phi_name == "satquad":
        if ("model.b" in cfg) == ("model.b_bar" in cfg):
            raise ConfigurationError(f"{cfg.source}: satquad needs exactly one of model.b, model.b_bar")
        if "model.b" in cfg:
            phi = SatQuad(cfg.get_float("model.b", nonnegative=True) ** 2)
        else:
            phi = SatQuad(cfg.get_float("model.b_bar", nonnegative=True))
    else:
        phi = ConstantRate(cfg.get_float("model.s", positive=True))
    return RefractoryModel(sigma, phi)


def _connectivity(model: FiringModel) -> float:
    """The ``b`` a refractory curve was built from, NaN when not applicable."""
    phi = getattr(model, "phi", None)
    if isinstance(phi, Sigmoid9):
        return phi.b
    if isinstance(phi, SatQuad):
        return math.sqrt(phi.b_bar)
    return math.nan


def _root_fields(root) -> tuple:
    if root is None:
        return (math.nan, math.nan, math.nan)
    return (root.z.real, root.z.imag, root.residual)


def _select_state(cfg: RawConfig, states):
    if not states:
        raise NumericalError("no steady state found")
    index = cfg.get_int("steady.index", 0, minimum=0)
    if index >= len(states):
        raise ConfigurationError(f"{cfg.where('steady.index')}: steady.index {index} out of range "
                                 f"({len(states)} steady states)")
    return states[index]


# ---------------------------------------------------------------------------
# Commands


def cmd_steady(cfg: RawConfig, out: Path, threads: int = 1) -> int:
    cfg.reject_unknown(MODEL_KEYS + ("d",))
    model = build_model(cfg)
    d = cfg.get_float("d", 0.0, nonnegative=True)
    states = find_steady_states(model)
    if not states:
        raise NumericalError("no steady state found")
    b = _connectivity(model)
    rows, summary_states = [], []
    for st in states:
        report = classify_stability(model, st, d)
        rows.append((b, st.r_star, st.A_star, st.slope_inv_I, report.verdict.value, st.fold_suspect))
        summary_states.append({"r_star": st.r_star, "A_star": st.A_star,
                               "slope_inv_I": st.slope_inv_I, "classification": report.verdict.value,
                               "clause": report.clause.value})
    write_csv(out / "steady.csv", ["b", "r_star", "A_star", "slope_inv_I", "classification", "fold_suspect"],
              rows, {"model": model.describe(), "d": d})
    write_summary(out / "summary.json", {"command": "steady", "model": model.describe(), "d": d,
                                          "n_roots": len(states), "steady_states": summary_states})
    return EXIT_OK


def cmd_stability(cfg: RawConfig, out: Path, threads: int = 1) -> int:
    cfg.reject_unknown(MODEL_KEYS + ("d", "stability.kernel", "stability.dominant"))
    model = build_model(cfg)
    d = cfg.get_float("d", 0.0, nonnegative=True)
    want_kernel = cfg.get_bool("stability.kernel", False)
    want_dominant = cfg.get_bool("stability.dominant", False)
    states = find_steady_states(model)
    if not states:
        raise NumericalError("no steady state found")
    rows, reports = [], []
    for i, st in enumerate(states):
        kernel = kernel_h0(model, st) if want_kernel else None
        report = classify_stability(model, st, d, kernel=kernel)
        root = report.dominant
        if root is None and want_dominant and d > 0:
            root = dominant_root(CharFunction(st, d))
        rows.append((st.r_star, st.A_star, st.slope_inv_I, d, report.verdict.value, report.clause.value,
                     *_root_fields(root), report.notes))
        entry = {"r_star": st.r_star, "A_star": st.A_star, "verdict": report.verdict.value,
                 "clause": report.clause.value, "notes": report.notes,
                 "dominant_root": None if root is None else [root.z.real, root.z.imag]}
        if kernel is not None:
            write_csv(out / f"kernel_{i}.csv", ["t", "h0"], zip(kernel.times, kernel.values),
                      {"model": model.describe(), "r_star": st.r_star})
            entry.update(l1_partial=kernel.l1_partial, l1_tail_bound=kernel.l1_tail_bound,
                         decay_rate_fit=kernel.decay_rate_fit)
        reports.append(entry)
    write_csv(out / "stability.csv",
              ["r_star", "A_star", "slope_inv_I", "d", "verdict", "clause", "re_z0", "im_z0", "residual",
               "notes"], rows, {"model": model.describe(), "d": d})
    write_summary(out / "summary.json", {"command": "stability", "model": model.describe(), "d": d,
                                          "reports": reports})
    if all(r["verdict"] == Verdict.INCONCLUSIVE.value for r in reports):
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _delay_range(cfg: RawConfig) -> tuple[float, float, float]:
    lo = cfg.get_float("delays.lo", positive=True)
    hi = cfg.get_float("delays.hi", positive=True)
    if not lo < hi:
        raise ConfigurationError(f"{cfg.where('delays.hi')}: delays.hi must exceed delays.lo")
    return lo, hi, cfg.get_float("delays.max_step", 0.01, positive=True)


def cmd_critical_delays(cfg: RawConfig, out: Path, threads: int = 1) -> int:
    cfg.reject_unknown(MODEL_KEYS + DELAY_RANGE_KEYS)
    model = build_model(cfg)
    lo, hi, step = _delay_range(cfg)
    st = _select_state(cfg, find_steady_states(model))
    result = critical_delays(model, st, lo, hi, max_step=step)
    write_csv(out / "critical_delays.csv", ["d_crit", "frequency", "direction"],
              [(c.d_crit, c.frequency, c.direction) for c in result.crossings],
              {"model": model.describe(), "r_star": st.r_star, "d_lo": lo, "d_hi": hi})
    write_summary(out / "summary.json", {
        "command": "critical-delays", "model": model.describe(), "r_star": st.r_star,
        "n_crossings": len(result.crossings),
        "crossings": [{"d_crit": c.d_crit, "frequency": c.frequency, "direction": c.direction}
                      for c in result.crossings],
        "unscanned": [list(iv) for iv in result.unscanned]})
    return EXIT_OK if not result.unscanned else EXIT_NUMERICAL


def cmd_trace_root(cfg: RawConfig, out: Path, threads: int = 1) -> int:
    cfg.reject_unknown(MODEL_KEYS + DELAY_RANGE_KEYS)
    model = build_model(cfg)
    lo, hi, step = _delay_range(cfg)
    st = _select_state(cfg, find_steady_states(model))
    points = trace_dominant_root(model, st, delay_grid(lo, hi, step))
    write_csv(out / "trace.csv", ["d", "re_z0", "im_z0", "residual"],
              [(p.d, *_root_fields(p.root)) for p in points],
              {"model": model.describe(), "r_star": st.r_star})
    failed = [p.d for p in points if p.root is None]
    found = [p for p in points if p.root is not None]
    write_summary(out / "summary.json", {
        "command": "trace-root", "model": model.describe(), "r_star": st.r_star,
        "n_points": len(points), "failed_delays": failed,
        "max_re_z0": max((p.root.z.real for p in found), default=None)})
    return EXIT_OK if not failed else EXIT_NUMERICAL


def cmd_bifurcation(cfg: RawConfig, out: Path, threads: int = 1) -> int:
    cfg.reject_unknown(("scan.family", "scan.b_lo", "scan.b_hi", "scan.n_points", "scan.d_probe",
                        "model.sigma", "model.s"))
    name = cfg.get_str("scan.family", choices=tuple(FAMILIES))
    kwargs = {}
    if "model.sigma" in cfg:
        kwargs["sigma"] = cfg.get_float("model.sigma", positive=True)
    if "model.s" in cfg:
        if name != "constant":
            raise ConfigurationError(f"{cfg.where('model.s')}: model.s only applies to the constant family")
        kwargs["s"] = cfg.get_float("model.s", positive=True)
    family = FAMILIES[name](**kwargs)
    b_lo = cfg.get_float("scan.b_lo", nonnegative=True)
    b_hi = cfg.get_float("scan.b_hi", nonnegative=True)
    if not b_lo < b_hi:
        raise ConfigurationError(f"{cfg.where('scan.b_hi')}: scan.b_hi must exceed scan.b_lo")
    n_points = cfg.get_int("scan.n_points", 200, minimum=50)
    d_probe = cfg.get_float("scan.d_probe", 0.1, positive=True)
    scan = bifurcation_scan(family, b_lo, b_hi, n_points, d_probe, threads=threads)
    folds = find_fold_points(scan)
    crossings = find_level_crossings(scan, LEVEL_A_EQ_1, folds)
    upper = find_level_crossings(scan, LEVEL_A_EQ_1_PLUS_SIGMA_PHI, folds)
    write_csv(out / "bifurcation.csv",
              ["b", "branch_id", "r_star", "A_star", "slope_inv_I", "verdict_d0", "verdict_dpos", "fold_suspect"],
              [(r.b, r.branch_id, r.r_star, r.A_star, r.slope_inv_I, r.verdict_d0, r.verdict_dpos,
                r.fold_suspect) for r in scan.rows],
              {"family": name, "b_lo": b_lo, "b_hi": b_hi, "n_points": n_points, "d_probe": d_probe})
    write_summary(out / "summary.json", {
        "command": "bifurcation", "family": name, "n_branches": len(scan.branch_ids),
        "folds": [{"b": f.b, "r_star": f.r_star, "slope_inv_I": f.slope_inv_I, "resolved": f.resolved,
                   "interval": list(f.interval)} for f in folds],
        "A_eq_1": [{"b": c.b, "branch_id": c.branch_id, "bracketed": c.bracketed} for c in crossings],
        "A_eq_1_plus_sigma_phi": [{"b": c.b, "branch_id": c.branch_id, "bracketed": c.bracketed}
                                  for c in upper],
        "failures": {repr(b): msg for b, msg in sorted(scan.failures.items())}})
    return EXIT_OK if not scan.failures else EXIT_NUMERICAL


SIM_KEYS = ("d", "sim.T", "sim.delta_a", "sim.init", "sim.r0", "sim.snapshots", "sim.period_window",
            "sim.tail")


def cmd_simulate(cfg: RawConfig, out: Path, threads: int = 1) -> int:
    cfg.reject_unknown(MODEL_KEYS + SIM_KEYS + ("steady.index",))
    model = build_model(cfg)
    d = cfg.get_float("d", 0.0, nonnegative=True)
    T = cfg.get_float("sim.T", positive=True)
    st = _select_state(cfg, find_steady_states(model))
    init = cfg.get_str("sim.init", "init-data1", ("init-data1", "init-data2", "equilibrium"))
    if init == "init-data1":
        if not model.is_refractory:
            raise ConfigurationError(f"{cfg.where('sim.init')}: init-data1 needs a refractory model")
        r0 = cfg.get_float("sim.r0", round(st.r_star, 3), positive=True)
        n0 = perturbed_equilibrium(model.sigma, r0)
    elif init == "init-data2":
        r0 = cfg.get_float("sim.r0", 1.0, positive=True)
        n0 = exponential_profile
    else:
        r0 = st.r_star
        n0 = lambda a: density_n_star(model, st.r_star, a)
    delta_a = cfg.get_float("sim.delta_a", model.time_scale / 400, positive=True)
    window = cfg.get_float("sim.period_window", min(20.0, T / 2), positive=True)
    tail = cfg.get_float("sim.tail", min(10.0, T), positive=True)
    snapshots = cfg.get_floats("sim.snapshots")
    if any(ts > T for ts in snapshots):
        raise ConfigurationError(f"{cfg.where('sim.snapshots')}: snapshot times must not exceed sim.T")
    grid = AgeGrid.build(model, delta_a, d)
    trace, state = simulate(model, grid, n0, r0, d, T, snapshot_times=snapshots)
    meta = {"model": model.describe(), "delta_a": grid.delta_a, "a_max": grid.a_max, "d": trace.d,
            "T": trace.T, "init": init, "r0": r0}
    write_csv(out / "trace.csv", ["t", "r"], zip(trace.times, trace.values), meta)
    for ts, density in sorted(state.snapshots.items()):
        write_csv(out / f"density_t{ts!r}.csv", ["a", "n"], zip(grid.centers, density), {**meta, "t": ts})
    period = detect_period(trace, window)
    summary = {"command": "simulate", "model": model.describe(), "d": trace.d, "T": trace.T,
               "init": init, "r_star": st.r_star, "final_r": float(trace.values[-1]),
               "distance": distance_to_equilibrium(trace, st.r_star, tail),
               "mass_error": abs(state.total_mass - 1.0),
               "period": {"kind": period.kind, "period": period.period,
                          "correlation": period.correlation, "amplitude": period.amplitude}}
    t_hi = min(40.0, trace.T)
    if t_hi > 10.0:
        try:
            summary["early_growth_rate"] = perturbation_growth_rate(trace, st.r_star, 5.0, t_hi)
        except ValueError:
            summary["early_growth_rate"] = None
    write_summary(out / "summary.json", summary)
    return EXIT_OK


def cmd_pseudo_eq(cfg: RawConfig, out: Path, threads: int = 1) -> int:
    cfg.reject_unknown(MODEL_KEYS + ("pseudo.x0", "pseudo.K"))
    model = build_model(cfg)
    x0 = cfg.get_float("pseudo.x0", positive=True)
    K = cfg.get_int("pseudo.K", 1000, minimum=1)
    seq = pseudo_equilibrium_sequence(model, x0, K)
    write_csv(out / "pseudo_eq.csv", ["k", "x_k"], enumerate(seq.x),
              {"model": model.describe(), "x0": x0, "K": K})
    summary = {"command": "pseudo-eq", "model": model.describe(), "converged": seq.converged,
               "converged_at": seq.converged_at, "divergent": seq.divergent,
               "fixed_point": seq.fixed_point, "n_iterates": len(seq.x)}
    if seq.converged:
        roots = [st.r_star for st in find_steady_states(model)]
        summary["nearest_steady_state"] = min(roots, key=lambda r: abs(r - seq.fixed_point)) if roots else None
    write_summary(out / "summary.json", summary)
    return EXIT_OK


COMMANDS = {
    "steady": (cmd_steady, "steady states, indicators and d = 0 verdicts"),
    "stability": (cmd_stability, "stability verdict of every steady state at delay d"),
    "critical-delays": (cmd_critical_delays, "delays where the dominant root crosses the imaginary axis"),
    "trace-root": (cmd_trace_root, "dominant characteristic root along a delay grid"),
    "bifurcation": (cmd_bifurcation, "steady-state branches and verdicts over a range of b"),
    "simulate": (cmd_simulate, "time integration of the nonlinear delayed model"),
    "pseudo-eq": (cmd_pseudo_eq, "iterates of x -> 1/I(x)"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elapsed-stability", description=__doc__.split("\n\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=sorted(COMMANDS), help="subcommand to run")
    parser.add_argument("--config", type=Path, help="key = value configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="add or override a configuration entry (repeatable)")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for scans (default: 1)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def _assemble_config(args) -> RawConfig:
    cfg = load_config(args.config) if args.config else parse_config("", "<command line>")
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key.strip() or not value.strip():
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value.strip())
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        if args.threads < 1:
            raise ConfigurationError("--threads must be at least 1")
        cfg = _assemble_config(args)
        code = func(cfg, args.out, args.threads)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ElapsedStabilityError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{args.command}: wrote results to {args.out}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
