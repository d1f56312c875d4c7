"""Command-line front end.

Exit codes: 0 success, 1 configuration or input error, 2 infeasible,
3 solver failure, 4 scenario outside the admissible class.  Errors are also
reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import sdp
from .config import TABLE_COLUMNS, TABLE_RATES, ConfigError, RunConfig, load_config
from .ddesim import ScenarioError, l2_gain_estimate, simulate
from .iqc import (default_frequency_grid, factorization_errors, hard_iqc_trials, realize_filter,
                  verify_spectral_factorization)
from .model import build_augmented
from .synthesis import SynthesisConfig, SynthesisError, SynthesisResult, minimize_gamma, synthesize, verify_analysis

log = logging.getLogger("lpvdelay")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_SCENARIO = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind, self.message = code, kind, message


def _out_dir(args, run: RunConfig) -> Path:
    out = Path(args.out) if args.out else run.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, default=_json_default) + "\n", encoding="utf-8")
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _fmt(x) -> str:
    return "inf" if x is None or not np.isfinite(x) else repr(float(x))


def _synthesis_error(exc: SynthesisError) -> CliError:
    if exc.status == sdp.INFEASIBLE:
        return CliError(EXIT_INFEASIBLE, "infeasible", str(exc))
    return CliError(EXIT_SOLVER, "solver", str(exc))


def _load_result(path) -> SynthesisResult:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        result = SynthesisResult.from_json(data)
    except FileNotFoundError as exc:
        raise CliError(EXIT_CONFIG, "input", f"gains file not found: {path}") from exc
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, "input", f"malformed gains file {path}: {exc}") from exc
    if result.gains is None:
        raise CliError(EXIT_CONFIG, "input", f"gains file {path} holds no recovered gains")
    return result


def _check_gains(run: RunConfig, result: SynthesisResult, realization) -> None:
    aug_cl = run.plant.n_x + realization.n_psi
    F = result.gains.F_c[0]
    if F.shape != (run.plant.n_u, aug_cl):
        raise CliError(EXIT_CONFIG, "input",
                       f"gains have shape {F.shape}, config expects {(run.plant.n_u, aug_cl)}")


def cmd_synthesize(args) -> dict:
    run = load_config(args.config)
    realization = realize_filter(run.multipliers, run.plant.n_x)
    t0 = time.perf_counter()
    try:
        result = synthesize(run.plant, realization, run.synthesis)
    except SynthesisError as exc:
        raise _synthesis_error(exc) from exc
    elapsed = time.perf_counter() - t0
    out = _out_dir(args, run)
    path = _write_json(out / "synthesis.json", {**result.to_json(), "config": run.raw})
    with open(out / "diagnostics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["grid_point", "rho", "worst_block_margin", "recovery_residual", "gain_norm"])
        margins = result.diagnostics["block_margins"]
        for j, rho in enumerate(result.grid):
            tag = f"[{j},"
            mine = [v for k, v in margins.items() if tag in k or k.endswith(f"[{j}]")]
            w.writerow([j, " ".join(repr(float(v)) for v in rho), _fmt(max(mine)),
                        _fmt(result.diagnostics["recovery_residuals"][j]),
                        _fmt(result.diagnostics["recovery_gain_norms"][j])])
    figures = []
    if args.figures and run.plant.domain.dim == 1:
        from .plotting import plot_gains
        figures.append(str(plot_gains(result.gains, out / "gains.png")))
    return {"command": "synthesize", "gamma": result.gamma, "gamma_recovery": result.gamma_recovery,
            "multipliers": [s.kind for s in run.multipliers], "seconds": elapsed,
            "result": str(path), "diagnostics": str(out / "diagnostics.csv"), "figures": figures}


def cmd_analyze(args) -> dict:
    run = load_config(args.config)
    result = _load_result(args.gains)
    realization = realize_filter(run.multipliers, run.plant.n_x)
    _check_gains(run, result, realization)
    if args.gamma is not None:
        gamma = float(args.gamma)
    else:
        gamma = result.gamma * (1.0 + 2.0 * run.synthesis.margin)
    if not gamma > 0:
        raise CliError(EXIT_CONFIG, "input", f"gamma must be positive, got {gamma}")
    aug = build_augmented(run.plant, realization)
    cert = verify_analysis(aug, result.gains, result.grid, run.plant.domain, run.p_basis, run.ax_basis,
                           gamma, form=run.analysis_form)
    out = _out_dir(args, run)
    if cert is None:
        _write_json(out / "certificate.json", {"gamma": gamma, "feasible": False})
        raise CliError(EXIT_INFEASIBLE, "infeasible", f"no analysis certificate at gamma = {gamma:.6g}")
    path = _write_json(out / "certificate.json", {**cert.to_json(), "feasible": True})
    return {"command": "analyze", "gamma": gamma, "feasible": True, "form": run.analysis_form,
            "worst_margin": max(cert.margins.values()), "certificate": str(path)}


def cmd_simulate(args) -> dict:
    run = load_config(args.config)
    result = _load_result(args.gains)
    realization = realize_filter(run.multipliers, run.plant.n_x)
    _check_gains(run, result, realization)
    scenario = run.scenario(args.scenario or "pulse", seed=args.seed)
    try:
        trace = simulate(run.plant, realization, result.gains, scenario)
        ratio = l2_gain_estimate(trace)
    except ScenarioError as exc:
        raise CliError(EXIT_SCENARIO, "scenario", str(exc)) from exc
    except ValueError as exc:
        if "zero disturbance energy" in str(exc):
            raise CliError(EXIT_SCENARIO, "scenario", str(exc)) from exc
        raise
    out = _out_dir(args, run)
    csv_path = out / f"trace_{scenario.name}.csv"
    trace.to_csv(csv_path)
    late = trace.t > 0.9 * trace.t[-1]
    summary = {
        "command": "simulate", "scenario": scenario.name, "gamma": result.gamma,
        "l2_ratio": ratio, "ratio_le_gamma": bool(ratio <= result.gamma),
        "max_abs_u": trace.max_abs_u,
        "final_state_norm": float(np.linalg.norm(trace.x_p[-1])),
        "tail_state_norm_max": float(np.linalg.norm(trace.x_p[late], axis=1).max()),
        "trace": str(csv_path), "scenario_spec": scenario.to_json(), "figures": [],
    }
    if args.figures:
        from .plotting import plot_trace
        summary["figures"].append(str(plot_trace(trace, out / f"trace_{scenario.name}.png",
                                                 title=f"{scenario.name}: ratio {ratio:.4f}")))
    _write_json(out / f"summary_{scenario.name}.json", summary)
    return summary


def _table_cell(run: RunConfig, r: float, tau_bar: float, rate: float | None, grid: int):
    plant = run.plant_with(r, tau_bar, rate)
    realization = realize_filter(run.multipliers_for(plant.delay), plant.n_x)
    dim = plant.domain.dim
    if rate is None:
        cfg = SynthesisConfig.quadratic(dim, grid_counts=(grid,) * dim, condition=False)
    else:
        cfg = SynthesisConfig.parameter_dependent(dim, grid_counts=(grid,) * dim, condition=False)
    try:
        return minimize_gamma(plant, realization, cfg).gamma, "optimal"
    except SynthesisError as exc:
        return None, exc.status


def table_monotonicity(rows, slack: float = -1e-4) -> list[dict]:
    """Violations of gamma(nu_1) <= gamma(nu_2) <= ... <= gamma(quadratic) per column."""
    ordered = [r for r in rows if r[0] != "quadratic"] + [r for r in rows if r[0] == "quadratic"]
    bad = []
    for j in range(len(ordered[0][1])):
        for (m1, v1), (m2, v2) in zip(ordered, ordered[1:]):
            a, b = v1[j], v2[j]
            if a is None or b is None:
                continue
            if b - a < slack:
                bad.append({"column": j, "lower": m1, "upper": m2, "difference": b - a})
    return bad


def cmd_reproduce_table(args) -> dict:
    run = load_config(args.config)
    tab = run.raw.get("table", {})
    columns = [tuple(c) for c in tab.get("columns", TABLE_COLUMNS)]
    rates = list(tab.get("rates", TABLE_RATES))
    grid = int(tab.get("grid", 11))
    methods = [("quadratic", None)] + [(f"pd_nu={nu:g}", nu) for nu in rates]
    rows, statuses = [], {}
    t0 = time.perf_counter()
    for name, nu in methods:
        values = []
        for r, tb in columns:
            try:
                g, status = _table_cell(run, r, tb, nu, grid)
            except ValueError as exc:
                g, status = None, f"invalid: {exc}"
            values.append(g)
            statuses[f"{name}@({r:g},{tb:g})"] = status
            log.info("%s (r=%g, tau_bar=%g): %s", name, r, tb, _fmt(g))
        rows.append((name, values))
    out = _out_dir(args, run)
    path = out / "table.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method"] + [f"r={r:g};tau_bar={tb:g}" for r, tb in columns])
        for name, values in rows:
            w.writerow([name] + [_fmt(v) for v in values])
    summary = {
        "command": "reproduce-table", "table": str(path), "seconds": time.perf_counter() - t0,
        "rows": {name: values for name, values in rows}, "cell_status": statuses,
        "omitted_rows": {"lft_exact_memory": "out of scope"},
        "monotonicity_violations": table_monotonicity(rows), "figures": [],
    }
    if args.figures:
        from .plotting import plot_table
        summary["figures"].append(str(plot_table(columns, rows, out / "table.png")))
    _write_json(out / "table_summary.json", summary)
    return summary


def cmd_validate_iqc(args) -> dict:
    run = load_config(args.config)
    delay = run.plant.delay
    n_x = run.plant.n_x
    realization = realize_filter(run.multipliers, n_x)
    omegas = default_frequency_grid(delay.tau_bar, 100)
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    reports, errors, trials = [], {}, {}
    for k, spec in enumerate(run.multipliers):
        single = realize_filter([spec], n_x)
        rep = verify_spectral_factorization(spec, realization, omegas, k=k)
        reports.append(rep.to_json())
        errors[spec.kind] = factorization_errors(spec, realization, omegas, k)
        res = hard_iqc_trials(single, delay, args.trials, rng)
        worst = min(low / max(energy, 1e-300) for low, energy in res)
        trials[spec.kind] = {"n": len(res), "worst_normalized": worst, "pass": worst >= -1e-6}
    out = _out_dir(args, run)
    with open(out / "factorization.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["omega"] + [f"error_{k}" for k in errors])
        for i, om in enumerate(omegas):
            w.writerow([repr(float(om))] + [repr(float(e[i])) for e in errors.values()])
    passed = all(r["pass"] for r in reports) and all(t["pass"] for t in trials.values())
    summary = {"command": "validate-iqc", "delay": {"tau_bar": delay.tau_bar, "r": delay.r},
               "factorization": reports, "hard_iqc": trials, "pass": passed,
               "csv": str(out / "factorization.csv"), "figures": []}
    if args.figures:
        from .plotting import plot_factorization
        summary["figures"].append(str(plot_factorization(omegas, errors, out / "factorization.png")))
    _write_json(out / "iqc_report.json", summary)
    if not passed:
        raise CliError(EXIT_INFEASIBLE, "iqc", "IQC validation failed: " + json.dumps(summary["factorization"]))
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lpvdelay", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, gains=False):
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--out", help="output directory (default: output_dir from the config)")
        p.add_argument("--seed", type=int, default=None, help="seed for randomized parts")
        p.add_argument("--figures", action="store_true", help="also render PNG figures")
        if gains:
            p.add_argument("--gains", required=True, help="synthesis result JSON with gains")

    p = sub.add_parser("synthesize", help="minimize gamma and recover the gains")
    common(p)
    p.set_defaults(func=cmd_synthesize)
    p = sub.add_parser("analyze", help="check gains against the analysis LMI")
    common(p, gains=True)
    p.add_argument("--gamma", type=float, default=None,
                   help="gain bound to certify (default gamma*(1 + 2 margin))")
    p.set_defaults(func=cmd_analyze)
    p = sub.add_parser("simulate", help="closed-loop simulation with L2 ratio")
    common(p, gains=True)
    p.add_argument("--scenario", default="pulse",
                   help="scenario name: pulse, random, or a key of the config's scenarios")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("reproduce-table", help="gamma over delay classes and rate bounds")
    common(p)
    p.set_defaults(func=cmd_reproduce_table)
    p = sub.add_parser("validate-iqc", help="factorization and hard-IQC checks")
    common(p)
    p.add_argument("--trials", type=int, default=50, help="random (v, tau) pairs per multiplier")
    p.set_defaults(func=cmd_validate_iqc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = args.func(args)
    except ConfigError as exc:
        err = CliError(EXIT_CONFIG, "config", str(exc))
    except CliError as exc:
        err = exc
    else:
        print(json.dumps(summary, default=_json_default))
        return EXIT_OK
    print(json.dumps({"error": err.kind, "message": err.message, "exit_code": err.code}), file=sys.stderr)
    return err.code


if __name__ == "__main__":
    sys.exit(main())
