#!/usr/bin/env python3
"""
Desk-scale acceptance checks.

Goals:
- `quick` runs in seconds: exact identities and the 1D spectral constants.
- `full` adds the kappa sweeps, the f-hat table, H_C3 brackets and breakdown scans
  (tens of minutes on a laptop).

Notes:
- Every check returns a Check; verify() raises AcceptanceFailure naming the failed ones.
- Thresholds are the fixed desk-scale constants below; the asymptotic statements
  behind them carry no rates, so most are trend checks.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from asymptotics import (
    compare_energy, homogenization_convergence, homogenized_leading, leading_energy, psi4_prediction,
)
from cellproblem import (
    CellProblem, FhatTable, asymptotic_table, build_fhat_table, fhat_asymptotic, fhat_estimate,
    lipschitz_violations, minimize_cell, monotonicity_drops, scaling_check,
)
from coefficients import DomainSpec, FieldSpec, PinningSpec
from criticalfields import breakdown_scan, gamma_extract, hc3_empirical_local, hc3_formula
from fields import NumericalFailure, ScalarField2D
from gauge import curl, vector_potential_from_field
from glsolver import (
    TestConfigParams, build_test_configuration, diagnostics, identity_gap, minimize_coupled, minimize_frozen,
    psi4_integral,
)
from scenario import Settings
from spectral import SpectralCache, halfplane_lambda, lambda0, mu1, neumann_field_sweep, theta0

logger = logging.getLogger(__name__)

SATURATION_TOL = 0.01
FHAT_TOL = 0.05
SCALING_RTOL = 2e-3
SMALL_B_BAND = (0.7, 1.3)
ENERGY_DEV_MAX = 0.25
TEST_CONFIG_GAP_MAX = 0.3
SUP_EXCESS = 1e-6
THETA0_TOL = 1e-3
LAMBDA0_TOL = 1e-3
HALFPLANE_NEAR = 0.10
SLOPE_BAND = (-1.3, -0.7)
HOMOGENIZED_GAP = 0.10
PSI4_GAP = 0.25
IDENTITY_GAP = 1e-5
HC3_VANISHING_GAP = 0.30
BOUNDED_RATIO = 1.5
NEUMANN_GAP = 0.10

UNIT_SQUARE = DomainSpec("square", 1.0, (0.5, 0.5), 64)
UNIT_DISK = DomainSpec("disk", 1.0, (0.5, 0.5), 64)
CENTERED_SQUARE = DomainSpec("square", 2.0, (0.0, 0.0), 64)
ONE = PinningSpec("constant", {"value": 1.0})
UNIFORM = FieldSpec("constant", {"value": 1.0})
VANISHING = FieldSpec("linear", {"value": 0.0, "gradient": (1.0, 0.0)})


class AcceptanceFailure(RuntimeError):
    def __init__(self, failed: List["Check"]):
        super().__init__("acceptance failed: " + ", ".join(c.name for c in failed))
        self.failed = failed


@dataclass
class Check:
    name: str
    passed: bool
    detail: Dict = field(default_factory=dict)
    seconds: float = 0.0


@dataclass
class Context:
    settings: Settings
    _cache: Optional[SpectralCache] = None
    _table: Optional[FhatTable] = None

    @property
    def spectral(self) -> SpectralCache:
        if self._cache is None:
            self._cache = SpectralCache(self.settings.cache_dir / "spectral.json", self.settings.workers)
        return self._cache

    @property
    def table(self) -> FhatTable:
        if self._table is None:
            path = self.settings.fhat_table or self.settings.cache_dir / "fhat.csv"
            if Path(path).exists():
                self._table = FhatTable.load_csv(path)
            else:
                self._table = build_fhat_table(tol=FHAT_TOL, workers=self.settings.workers)
                self._table.save_csv(path)
        return self._table


def _problem(domain: DomainSpec, pinning: PinningSpec, field_spec: FieldSpec, kappa: float, cells: int = None):
    grid = domain.make_grid(cells or domain.cells_for_kappa(kappa))
    return pinning.sample(grid, kappa), field_spec.sample(grid)


# --- quick ------------------------------------------------------------------------------

def check_saturation_shortcut(ctx: Context) -> Check:
    vals = {b: fhat_estimate(b).value for b in (1.0, 1.5, 2.0)}
    return Check("fhat-saturation", all(abs(v - 0.5) <= SATURATION_TOL for v in vals.values()), vals)


def check_nonpositive_alpha(ctx: Context) -> Check:
    p = CellProblem.for_field(0.5, 8.0, alpha=-0.5)
    e = minimize_cell(p, seeds=1).energy / p.R ** 2
    return Check("cell-alpha-nonpositive", abs(e - 0.125) <= 1e-10, {"e_over_R2": e})


def check_theta0(ctx: Context) -> Check:
    runs = [theta0(n=n) for n in (1000, 2000, 4000)]
    vals = [r.value for r in runs]
    best = runs[-1]
    ok = (max(vals) - min(vals) <= THETA0_TOL and abs(best.value - best.param ** 2) <= THETA0_TOL
          and 0 < best.value < 1)
    return Check("theta0", ok, {"values": vals, "xi0": best.param})


def check_lambda0(ctx: Context) -> Check:
    coarse, fine = lambda0(T=8.0, n=1600), lambda0(T=16.0, n=3200)
    right = halfplane_lambda(math.pi / 2, check_truncation=False).value
    ok = abs(coarse.value - fine.value) <= LAMBDA0_TOL and right < fine.value
    return Check("lambda0", ok, {"lambda0": [coarse.value, fine.value], "halfplane_pi_2": right})


def check_leading_saturation(ctx: Context) -> Check:
    a, B0 = _problem(UNIT_SQUARE, ONE, UNIFORM, 10.0, cells=32)
    table = asymptotic_table()
    lead = leading_energy(a, B0, 10.0, 15.0, table).leading
    pred = psi4_prediction(None, a, B0, 10.0, 15.0, table)
    ok = abs(lead - 50.0) <= 1e-9 and pred == 0.0
    return Check("leading-saturation", ok, {"leading": lead, "psi4": pred})


def check_homogenization_slope(ctx: Context) -> Check:
    rep = homogenization_convergence(lambda t1, t2: 1.0 + 0.5 * np.sin(2 * np.pi * t1), 1.0, 1.0,
                                     (0.0, 1.0 / 3.0, 0.0, 1.0))
    return Check("homogenization-slope", SLOPE_BAND[0] <= rep.slope <= SLOPE_BAND[1],
                 {"slope": rep.slope, "errors": list(rep.errors)})


# --- full -------------------------------------------------------------------------------

def check_saturation_direct(ctx: Context) -> Check:
    vals = {}
    for b in (1.5, 2.0):
        p = CellProblem.for_field(b, 30.0)
        vals[b] = minimize_cell(p, seeds=1).energy / p.R ** 2
    return Check("fhat-saturation-direct", all(abs(v - 0.5) <= SATURATION_TOL for v in vals.values()), vals)


def check_fhat_table(ctx: Context) -> Check:
    table = ctx.table
    bad = lipschitz_violations(table)
    drops = monotonicity_drops(table, FHAT_TOL)
    in_range = all(float(np.min(v)) >= 0.0 and float(np.max(v)) <= 0.5 for v in (table.values, table.raw))
    return Check("fhat-table", not bad and not drops and in_range,
                 {"points": len(table), "lipschitz_violations": bad, "raw_drops": drops, "in_range": in_range})


def check_scaling(ctx: Context) -> Check:
    rng = np.random.default_rng(ctx.settings.seed)
    gaps = []
    for _ in range(10):
        b, R, alpha = rng.uniform(0.2, 0.8), rng.uniform(4.0, 8.0), rng.uniform(0.5, 2.0)
        lhs, rhs = scaling_check(b, R, alpha, seeds=2, seed=ctx.settings.seed)
        gaps.append(abs(lhs - rhs) / max(1.0, abs(lhs)))
    return Check("scaling-identity", max(gaps) <= SCALING_RTOL, {"max_rel_gap": max(gaps)})


def check_small_b(ctx: Context) -> Check:
    ratios = {b: fhat_estimate(b).value / float(fhat_asymptotic(b)) for b in (0.05, 0.02)}
    lo, hi = SMALL_B_BAND
    return Check("fhat-small-b", all(lo <= r <= hi for r in ratios.values()), ratios)


def check_energy_trend(ctx: Context) -> Check:
    rep = compare_energy(ONE, UNIFORM, UNIT_SQUARE, (10.0, 20.0, 40.0), 0.5, ctx.table,
                         workers=ctx.settings.workers, noise=0.0)
    devs = [r.rel_dev for r in rep.rows]
    return Check("energy-trend", rep.decreasing and devs[-1] <= ENERGY_DEV_MAX, {"rel_dev": devs})


def check_test_configuration(ctx: Context) -> Check:
    kappa, H = 20.0, 10.0
    a, B0 = _problem(UNIT_SQUARE, ONE, UNIFORM, kappa)
    potential = vector_potential_from_field(B0)
    state = minimize_frozen(a, B0, kappa, H, potential=potential, seed=ctx.settings.seed)
    test = build_test_configuration(a, B0, kappa, H, TestConfigParams.for_kappa(kappa, H),
                                    fhat=ctx.table, potential=potential)
    lead = leading_energy(a, B0, kappa, H, ctx.table).leading
    gap = (test.energy - lead) / kappa ** 2
    ok = test.energy >= state.energy and gap <= TEST_CONFIG_GAP_MAX
    return Check("test-configuration", ok, {"E_test": test.energy, "E_min": state.energy, "gap": gap})


def check_diagnostics(ctx: Context) -> Check:
    kappa = 16.0
    a, B0 = _problem(UNIT_SQUARE, ONE, UNIFORM, kappa)
    potential = vector_potential_from_field(B0)
    F_curl = curl(potential.F).values
    plaq = a.grid.plaquette_mask()
    excess, scaled = [], []
    for H in (kappa, 2 * kappa, 4 * kappa):
        state = minimize_coupled(a, B0, kappa, H, potential=potential, seed=ctx.settings.seed)
        excess.append(diagnostics(state, a, B0, potential).sup_excess)
        diff = np.where(plaq, curl(state.A).values - F_curl, 0.0)
        scaled.append(H * math.sqrt(a.grid.h ** 2 * float(np.sum(diff ** 2))))
    ok = max(excess) <= SUP_EXCESS and all(s2 <= s1 + 1e-12 for s1, s2 in zip(scaled, scaled[1:]))
    return Check("minimizer-diagnostics", ok, {"sup_excess": excess, "H_curl": scaled})


def check_large_field_neumann(ctx: Context) -> Check:
    grid = UNIT_SQUARE.make_grid(96)
    X, Y = grid.mesh()
    well = ScalarField2D(grid, 1.0 + 8.0 * ((X - 0.5) ** 2 + (Y - 0.5) ** 2))
    ratios = [r["mu_over_B"] for r in neumann_field_sweep(well, [80.0, 160.0, 320.0, 640.0])]
    ok = all(r2 < r1 for r1, r2 in zip(ratios, ratios[1:])) and abs(ratios[-1] - 1.0) <= NEUMANN_GAP
    return Check("neumann-large-field", ok, {"mu_over_B": ratios, "limit": 1.0})


def check_halfplane_limit(ctx: Context) -> Check:
    lam0 = ctx.spectral.lambda0().value
    near = halfplane_lambda(math.pi / 12, check_truncation=False).value
    return Check("halfplane-small-theta", abs(near - lam0) <= HALFPLANE_NEAR * lam0,
                 {"lambda_pi_12": near, "lambda0": lam0})


def check_mu1_nonvanishing(ctx: Context) -> Check:
    th0 = ctx.spectral.theta0().value
    ratios = []
    for kappa in (8.0, 12.0, 16.0):
        a, B0 = _problem(UNIT_DISK, ONE, UNIFORM, kappa)
        H = 2.0 * kappa
        lam1 = (H / kappa) * th0 - 1.0
        mu = mu1(kappa, H, a, B0).value
        ratios.append(abs(mu - kappa ** 2 * lam1) / kappa ** 1.5)
    return Check("mu1-nonvanishing", ratios[-1] <= BOUNDED_RATIO * max(ratios[0], 1e-3), {"ratios": ratios})


def check_hc3_nonvanishing(ctx: Context) -> Check:
    th0 = ctx.spectral.theta0().value
    gaps = []
    for kappa in (8.0, 16.0):
        a, B0 = _problem(UNIT_DISK, ONE, UNIFORM, kappa)
        target = kappa / th0
        br = hc3_empirical_local(kappa, a, B0, (0.6 * target, 1.4 * target))
        gaps.append(abs(br.midpoint / kappa - 1.0 / th0))
    return Check("hc3-nonvanishing", gaps[1] < gaps[0], {"normalized_gaps": gaps})


def check_hc3_vanishing(ctx: Context) -> Check:
    lam0 = ctx.spectral.lambda0().value
    table = ctx.spectral.halfplane_table()
    gaps = []
    for kappa in (8.0, 12.0):
        a, B0 = _problem(CENTERED_SQUARE, ONE, VANISHING, kappa, cells=max(128, CENTERED_SQUARE.cells_for_kappa(kappa)))
        formula = hc3_formula(a, B0, kappa, gamma_extract(B0), lam0=lam0, table=table).value
        br = hc3_empirical_local(kappa, a, B0, (0.5 * formula, 1.5 * formula), tol=0.05)
        gaps.append(abs(br.midpoint - formula) / formula)
    return Check("hc3-vanishing", gaps[0] <= HC3_VANISHING_GAP and gaps[1] <= gaps[0], {"relative_gaps": gaps})


def check_small_field_negativity(ctx: Context) -> Check:
    bump = PinningSpec("radial", {"value": 1.0, "floor": -1.0, "radius": 0.2, "center": (0.5, 0.5)})
    values = {}
    for kappa in (20.0, 40.0):
        a, B0 = _problem(UNIT_SQUARE, bump, UNIFORM, kappa)
        values[kappa] = mu1(kappa, 0.5 / kappa, a, B0).value
    return Check("small-field-negativity", all(v < 0 for v in values.values()), values)


def _breakdown_ratios(domain: DomainSpec, field_spec: FieldSpec, power: float, grid_factors) -> List[float]:
    ratios = []
    for kappa in (8.0, 12.0, 16.0):
        a, B0 = _problem(domain, ONE, field_spec, kappa)
        res = breakdown_scan(kappa, a, B0, [f * kappa ** power for f in grid_factors])
        ratios.append(res.ratio(kappa, power) if res.found else math.inf)
    return ratios


def check_breakdown(ctx: Context) -> Check:
    flat = _breakdown_ratios(UNIT_SQUARE, UNIFORM, 1.0, np.linspace(0.5, 3.0, 11))
    vanishing = _breakdown_ratios(CENTERED_SQUARE, VANISHING, 2.0, np.linspace(0.2, 3.0, 15))

    def bounded(r):
        return all(np.isfinite(r)) and max(r) <= BOUNDED_RATIO * min(r)

    return Check("breakdown-scaling", bounded(flat) and bounded(vanishing),
                 {"H_over_kappa": flat, "H_over_kappa2": vanishing})


def check_homogenized(ctx: Context) -> Check:
    pinning = PinningSpec("periodic", {"mean": 1.0, "amp1": 0.5})
    res = homogenized_leading("oscillating", pinning, UNIFORM, UNIT_SQUARE, 400.0, 200.0, ctx.table)
    return Check("homogenized-leading", res.rel_gap <= HOMOGENIZED_GAP,
                 {"homogenized": res.homogenized, "direct": res.direct})


def check_psi4(ctx: Context) -> Check:
    kappa = 20.0
    a, B0 = _problem(UNIT_SQUARE, ONE, UNIFORM, kappa)
    potential = vector_potential_from_field(B0)
    detail = {}
    ok = True
    for sigma in (0.5, 3.0):
        state = minimize_frozen(a, B0, kappa, sigma * kappa, potential=potential, seed=ctx.settings.seed)
        got = psi4_integral(state)
        pred = psi4_prediction(None, a, B0, kappa, sigma * kappa, ctx.table)
        gap = identity_gap(state, a, B0)
        detail[sigma] = {"solver": got, "prediction": pred, "identity_gap": gap}
        ok &= gap <= IDENTITY_GAP
        if sigma < 1:
            ok &= abs(got - pred) <= PSI4_GAP * pred
        else:
            ok &= pred == 0.0 and got <= 1e-6
    return Check("psi4-identity", ok, detail)


QUICK: List[Callable[[Context], Check]] = [
    check_saturation_shortcut, check_nonpositive_alpha, check_theta0, check_lambda0,
    check_leading_saturation, check_homogenization_slope,
]
FULL: List[Callable[[Context], Check]] = QUICK + [
    check_saturation_direct, check_fhat_table, check_scaling, check_small_b, check_energy_trend,
    check_test_configuration, check_diagnostics, check_large_field_neumann, check_halfplane_limit,
    check_mu1_nonvanishing, check_hc3_nonvanishing, check_hc3_vanishing, check_small_field_negativity,
    check_breakdown, check_homogenized, check_psi4,
]


def run_checks(full: bool = False, settings: Optional[Settings] = None) -> List[Check]:
    ctx = Context(settings or Settings.from_env())
    results = []
    for fn in FULL if full else QUICK:
        start = time.perf_counter()
        try:
            check = fn(ctx)
        except NumericalFailure as exc:
            check = Check(fn.__name__[len("check_"):], False, {"flag": exc.flag, "error": str(exc)})
        check.seconds = time.perf_counter() - start
        logger.info("%-24s %s (%.1fs)", check.name, "ok" if check.passed else "FAILED", check.seconds)
        results.append(check)
    return results


def verify(full: bool = False, settings: Optional[Settings] = None) -> List[Check]:
    results = run_checks(full, settings)
    failed = [c for c in results if not c.passed]
    if failed:
        raise AcceptanceFailure(failed)
    return results
