#!/usr/bin/env python3
"""
Scenario runner: every computation as a subcommand with reproducible outputs.

Usage:
  python3 gl_cli.py fhat --b-grid default
  python3 gl_cli.py minimize --scenario scenarios/uniform.env --set params.kappa=20
  python3 gl_cli.py energy-compare --scenario scenarios/uniform.env --workers 4
  python3 gl_cli.py hc3 --case vanishing --kappa 8
  python3 gl_cli.py verify [--full]

Each run writes its tables (CSV) and reports (JSON) to --out (default GL_OUTPUT_DIR/<command>)
plus manifest.json with the config hash, seed, worker count, versions and wall time.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 acceptance failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from acceptance import AcceptanceFailure, verify
from asymptotics import (
    EXAMPLES, compare_energy, homogenized_leading, leading_energy, psi4_prediction, write_report_json,
    write_rows_csv,
)
from cellproblem import DEFAULT_B_GRID, CellProblem, FhatTable, build_fhat_table, minimize_cell
from criticalfields import CASES, breakdown_scan, gamma_extract, hc3_report, lambda1
from fields import NumericalFailure, write_field_binary
from gauge import vector_potential_from_field
from glsolver import diagnostics, identity_gap, minimize_coupled, minimize_frozen, psi4_integral, write_trace_csv
from scenario import ConfigError, Scenario, Settings, load_scenario
from spectral import SpectralCache, halfplane_lambda, montgomery_lambda, mu1, write_spectral_csv

logger = logging.getLogger("gl_cli")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ACCEPTANCE = 4

COMMANDS = ("fhat", "cell", "minimize", "energy-compare", "psi4", "mu1", "theta0", "montgomery",
            "halfplane", "hc3", "breakdown", "homogenize", "gamma", "verify")

# --case vanishing runs B0 = x1 on [-1, 1]^2 unless the scenario says otherwise
CASE_DEFAULTS = {
    "vanishing": {"domain.size": "2", "domain.center": "0,0", "field.family": "linear",
                  "field.value": "0", "field.gradient": "1,0"},
    "nonvanishing": {"domain.shape": "disk"},
}


def setup_logging(level: str, timestamps: bool = False):
    fmt = "%(asctime)s [%(name)s] %(message)s" if timestamps else "[%(name)s] %(message)s"
    numeric = getattr(logging, level.upper(), None)
    if not isinstance(numeric, int):
        raise ConfigError("log-level", f"unknown level {level!r}")
    logging.basicConfig(level=numeric, format=fmt, force=True)


def _versions() -> Dict[str, str]:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "scikit-image"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def write_manifest(out: Path, command: str, scenario: Scenario, settings: Settings, seconds: float,
                   artifacts: List[Path], argv: List[str]) -> Path:
    manifest = {
        "operation": command,
        "argv": argv,
        "config_hash": scenario.hash,
        "config": scenario.raw,
        "seed": scenario.seed,
        "workers": settings.workers,
        "versions": _versions(),
        "wall_seconds": round(seconds, 3),
        "artifacts": sorted(str(p.relative_to(out)) if p.is_relative_to(out) else str(p) for p in artifacts),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --- shared helpers ---------------------------------------------------------------------

def _floats(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("--list", f"expected comma separated numbers, got {text!r}") from None


def _kappas(args, scenario: Scenario) -> List[float]:
    return [args.kappa] if args.kappa is not None else list(scenario.kappas)


def _field_strength(args, scenario: Scenario, kappa: float) -> float:
    """H from --sigma, params.sigma or params.sigma_hat (H = sigma kappa or sigma_hat kappa^2)."""
    sigma = args.sigma if args.sigma is not None else scenario.sigma
    if sigma is not None:
        return sigma * kappa
    if scenario.sigma_hat is not None:
        return scenario.sigma_hat * kappa ** 2
    if scenario.H_grid:
        return scenario.H_grid[0]
    raise ConfigError("params.sigma", "one of params.sigma, params.sigma_hat or params.H is required")


def _problem(scenario: Scenario, kappa: float):
    grid = scenario.domain.make_grid(scenario.domain.cells_for_kappa(kappa, minimum=scenario.domain.cells))
    return scenario.pinning.sample(grid, kappa), scenario.field_spec.sample(grid)


def _table(args, settings: Settings) -> FhatTable:
    path = args.table or settings.fhat_table or settings.cache_dir / "fhat.csv"
    if Path(path).exists():
        return FhatTable.load_csv(path)
    if args.table:
        raise ConfigError("--table", f"file {path} does not exist")
    logger.warning("no f-hat table at %s: building the default table (this takes a while)", path)
    table = build_fhat_table(workers=settings.workers)
    table.save_csv(path)
    return table


def _spectral(settings: Settings) -> SpectralCache:
    return SpectralCache(settings.cache_dir / "spectral.json", settings.workers)


# --- commands ---------------------------------------------------------------------------

def cmd_fhat(args, scenario, settings, out) -> List[Path]:
    grid = DEFAULT_B_GRID if args.b_grid in (None, "default") else np.asarray(_floats(args.b_grid))
    tol = scenario.param("tol", 0.05)
    table = build_fhat_table(grid, tol, settings.workers, seed=scenario.seed)
    return [table.save_csv(out / "fhat.csv")]


def cmd_cell(args, scenario, settings, out) -> List[Path]:
    b = args.b if args.b is not None else scenario.param("b", 0.5)
    R = args.R if args.R is not None else scenario.param("R", 10.0)
    p = CellProblem.for_field(b, R, scenario.param("alpha", 1.0), bc=scenario.param("bc", "dirichlet", str))
    cell = minimize_cell(p, seeds=scenario.param("seeds", 4, int), seed=scenario.seed)
    report = {"b": b, "R": R, "alpha": p.alpha, "bc": p.bc, "resolution": p.resolution,
              "energy": cell.energy, "e_over_R2": cell.energy / R ** 2, "converged": cell.converged}
    return [write_field_binary(cell.u, out / "cell.bin"), write_report_json(report, out / "cell.json")]


def cmd_minimize(args, scenario, settings, out) -> List[Path]:
    kappa = _kappas(args, scenario)[0]
    H = _field_strength(args, scenario, kappa)
    a, B0 = _problem(scenario, kappa)
    potential = vector_potential_from_field(B0)
    solve = minimize_coupled if args.coupled else minimize_frozen
    state = solve(a, B0, kappa, H, tol=scenario.param("tol"), seed=scenario.seed, potential=potential)
    report = {"kappa": kappa, "H": H, "energy": state.energy, "converged": state.converged,
              "iterations": state.iterations, "residuals": state.residuals,
              "diagnostics": diagnostics(state, a, B0, potential).as_dict()}
    state_dir = state.save(out / "state")
    return [state_dir, write_trace_csv(state, out / "trace.csv"), write_report_json(report, out / "minimize.json")]


def cmd_energy_compare(args, scenario, settings, out) -> List[Path]:
    sigma = args.sigma if args.sigma is not None else scenario.sigma
    if sigma is None:
        raise ConfigError("params.sigma", "required for energy-compare")
    rep = compare_energy(scenario.pinning, scenario.field_spec, scenario.domain, _kappas(args, scenario), sigma,
                         _table(args, settings), coupled=args.coupled, workers=settings.workers)
    if not rep.decreasing:
        logger.warning("relative deviation does not decrease along kappa")
    return [rep.write_csv(out / "energy_compare.csv")]


def cmd_psi4(args, scenario, settings, out) -> List[Path]:
    table = _table(args, settings)
    rows = []
    for kappa in _kappas(args, scenario):
        H = _field_strength(args, scenario, kappa)
        a, B0 = _problem(scenario, kappa)
        state = minimize_frozen(a, B0, kappa, H, seed=scenario.seed)
        rows.append({"kappa": kappa, "H": H, "solver": psi4_integral(state),
                     "prediction": psi4_prediction(None, a, B0, kappa, H, table),
                     "leading": leading_energy(a, B0, kappa, H, table).leading, "energy": state.energy,
                     "identity_gap": identity_gap(state, a, B0)})
    return [write_rows_csv(rows, out / "psi4.csv",
                           ["kappa", "H", "solver", "prediction", "leading", "energy", "identity_gap"])]


def cmd_mu1(args, scenario, settings, out) -> List[Path]:
    cache = _spectral(settings)
    rows = []
    for kappa in _kappas(args, scenario):
        H = _field_strength(args, scenario, kappa)
        a, B0 = _problem(scenario, kappa)
        res = mu1(kappa, H, a, B0, inner=args.inner, seed=scenario.seed)
        row = {"kappa": kappa, "H": H, "mu1": res.value, "residual": res.residual, "flags": "|".join(res.flags)}
        if gamma_extract(B0).empty:
            row["kappa2_Lambda1"] = kappa ** 2 * lambda1(B0, a, H / kappa, cache.theta0().value)
        rows.append(row)
    return [write_rows_csv(rows, out / "mu1.csv", ["kappa", "H", "mu1", "kappa2_Lambda1", "residual", "flags"])]


def cmd_theta0(args, scenario, settings, out) -> List[Path]:
    res = _spectral(settings).theta0()
    return [write_spectral_csv([res], out / "theta0.csv", label_name="quantity")]


def cmd_montgomery(args, scenario, settings, out) -> List[Path]:
    res = _spectral(settings).lambda0()
    taus = _floats(args.tau) or list(np.linspace(-2.0, 1.0, 31))
    rows = [{"tau": t, "lambda": montgomery_lambda(t)} for t in taus]
    return [write_spectral_csv([res], out / "lambda0.csv", label_name="quantity"),
            write_rows_csv(rows, out / "montgomery.csv", ["tau", "lambda"])]


def cmd_halfplane(args, scenario, settings, out) -> List[Path]:
    cache = _spectral(settings)
    if args.theta is None:
        table = cache.halfplane_table()
        rows = [{"theta": t, "lambda": v} for t, v in zip(table.thetas, table.values)]
        return [write_rows_csv(rows, out / "halfplane.csv", ["theta", "lambda"])]
    thetas = _floats(args.theta)
    results = [halfplane_lambda(t) for t in thetas]
    return [write_spectral_csv(results, out / "halfplane.csv", thetas, label_name="theta")]


def cmd_hc3(args, scenario, settings, out) -> List[Path]:
    cache = _spectral(settings)
    paths = []
    for kappa in _kappas(args, scenario):
        a, B0 = _problem(scenario, kappa)
        report = hc3_report(kappa, a, B0, cache, tol=scenario.param("tol", 0.01), inner=args.inner)
        if args.case and report.case != args.case:
            logger.warning("requested case %s but B0 gives %s", args.case, report.case)
        paths.append(report.write_json(out / f"hc3_kappa{kappa:g}.json"))
    return paths


def cmd_breakdown(args, scenario, settings, out) -> List[Path]:
    rows = []
    for kappa in _kappas(args, scenario):
        a, B0 = _problem(scenario, kappa)
        if scenario.H_grid:
            grid = list(scenario.H_grid)
        else:
            power = 1.0 if gamma_extract(B0).empty else 2.0
            grid = [f * kappa ** power for f in np.linspace(0.2, 3.0, 15)]
        res = breakdown_scan(kappa, a, B0, grid, seed=scenario.seed)
        for H, norm in res.history:
            rows.append({"kappa": kappa, "H": H, "l2": norm, "breakdown": int(res.found and H == res.H_break)})
    return [write_rows_csv(rows, out / "breakdown.csv", ["kappa", "H", "l2", "breakdown"])]


def cmd_homogenize(args, scenario, settings, out) -> List[Path]:
    table = _table(args, settings)
    example = args.example or ("kappa-independent" if not scenario.pinning.kappa_dependent
                               else "oscillating" if scenario.pinning.family == "periodic" else "shifted-periodic")
    paths = []
    for kappa in _kappas(args, scenario):
        H = _field_strength(args, scenario, kappa)
        res = homogenized_leading(example, scenario.pinning, scenario.field_spec, scenario.domain, kappa, H, table)
        report = {"example": res.example, "kappa": kappa, "H": H, "homogenized": res.homogenized,
                  "direct": res.direct, "rel_gap": res.rel_gap, "lower_bound": res.lower_bound,
                  "disk": list(res.disk) if res.disk else None}
        paths.append(write_report_json(report, out / f"homogenize_kappa{kappa:g}.json"))
    return paths


def cmd_gamma(args, scenario, settings, out) -> List[Path]:
    grid = scenario.domain.make_grid()
    gamma = gamma_extract(scenario.field_spec.sample(grid))
    pts = [{"x": p[0], "y": p[1], "grad_norm": g} for p, g in zip(gamma.points, gamma.grad_norm)]
    cross = [{"x": p[0], "y": p[1], "grad_norm": g, "theta": t}
             for p, g, t in zip(gamma.crossings, gamma.crossing_grad_norm, gamma.theta)]
    return [write_rows_csv(pts, out / "gamma.csv", ["x", "y", "grad_norm"]),
            write_rows_csv(cross, out / "gamma_crossings.csv", ["x", "y", "grad_norm", "theta"])]


def cmd_verify(args, scenario, settings, out) -> List[Path]:
    path = out / "verify.json"
    try:
        checks = verify(full=args.full, settings=settings)
    except AcceptanceFailure as exc:
        _write_checks(exc.failed, path)
        raise
    _write_checks(checks, path)
    return [path]


def _write_checks(checks, path: Path):
    rows = [{"name": c.name, "passed": c.passed, "seconds": round(c.seconds, 3), "detail": c.detail} for c in checks]
    path.write_text(json.dumps(rows, indent=2, sort_keys=True, default=str) + "\n")


HANDLERS = {
    "fhat": cmd_fhat, "cell": cmd_cell, "minimize": cmd_minimize, "energy-compare": cmd_energy_compare,
    "psi4": cmd_psi4, "mu1": cmd_mu1, "theta0": cmd_theta0, "montgomery": cmd_montgomery,
    "halfplane": cmd_halfplane, "hc3": cmd_hc3, "breakdown": cmd_breakdown, "homogenize": cmd_homogenize,
    "gamma": cmd_gamma, "verify": cmd_verify,
}


# --- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gl_cli.py", description="Pinned Ginzburg-Landau toolkit.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--scenario", type=Path, default=None, help="KEY=VALUE scenario file.")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="Override a scenario entry (repeatable).")
    ap.add_argument("--out", type=Path, default=None, help="Output directory (default GL_OUTPUT_DIR/<command>).")
    ap.add_argument("--workers", type=int, default=None, help="Worker processes for sweeps.")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--log-level", default=None)
    ap.add_argument("--timestamps", action="store_true", help="Prefix log lines with the time.")
    ap.add_argument("--kappa", type=float, default=None)
    ap.add_argument("--sigma", type=float, default=None)
    ap.add_argument("--b-grid", default=None, help="'default' or comma separated b values.")
    ap.add_argument("--b", type=float, default=None)
    ap.add_argument("--R", type=float, default=None)
    ap.add_argument("--table", type=Path, default=None, help="f-hat table CSV.")
    ap.add_argument("--case", choices=CASES, default=None)
    ap.add_argument("--example", choices=EXAMPLES, default=None)
    ap.add_argument("--theta", default=None, help="Comma separated angles in (0, pi).")
    ap.add_argument("--tau", default=None, help="Comma separated Montgomery parameters.")
    ap.add_argument("--inner", choices=("lu", "cg"), default="cg", help="Shift-invert inner solver.")
    ap.add_argument("--coupled", action="store_true", help="Minimize in (psi, A) instead of psi with A = F.")
    ap.add_argument("--full", action="store_true", help="verify: run every desk-scale check.")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        settings = Settings.from_env()
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers", f"must be >= 1, got {args.workers}")
            settings.workers = args.workers
        if args.seed is not None:
            settings.seed = args.seed
        setup_logging(args.log_level or settings.log_level, args.timestamps)
        overrides = list(args.overrides)
        if args.case:
            given = {o.split("=", 1)[0].strip() for o in overrides if "=" in o}
            file_keys = set(load_scenario(args.scenario).raw) if args.scenario else set()
            overrides = [f"{k}={v}" for k, v in CASE_DEFAULTS[args.case].items()
                         if k not in given and k not in file_keys] + overrides
        scenario = load_scenario(args.scenario, overrides, seed=settings.seed)
        out = args.out or scenario.output_dir or settings.output_dir / args.command
        out.mkdir(parents=True, exist_ok=True)
        artifacts = HANDLERS[args.command](args, scenario, settings, out)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        logger.error("numerical failure [%s]: %s (residual %.3e)", exc.flag, exc, exc.residual)
        return EXIT_NUMERICAL
    except AcceptanceFailure as exc:
        logger.error("%s", exc)
        return EXIT_ACCEPTANCE
    seconds = time.perf_counter() - start
    manifest = write_manifest(out, args.command, scenario, settings, seconds, artifacts, argv)
    logger.info("%s: %d artifact(s) in %s (%.1fs)", args.command, len(artifacts), out, seconds)
    print(f"Wrote {manifest}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
