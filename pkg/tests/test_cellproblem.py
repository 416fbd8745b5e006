import math
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from cellproblem import (  # noqa: E402
    CellCache, CellProblem, FhatEstimate, FhatTable, asymptotic_table, build_fhat_table, cell_energy, cell_gradient,
    fhat_asymptotic, fhat_estimate, fhat_eval, lipschitz_violations, minimize_cell, monotonicity_drops, repair_monotone,
    scaled_energy_identity, scaling_check,
)
from fields import ComplexField2D  # noqa: E402
from scenario import env_flag  # noqa: E402

SLOW = env_flag("GL_SLOW")


def random_state(p, seed=0, scale=0.8):
    rng = np.random.default_rng(seed)
    vals = scale * (rng.standard_normal(p.grid.shape) + 1j * rng.standard_normal(p.grid.shape))
    return ComplexField2D(p.grid, np.where(p.free, vals, 0.0))


class CellProblemTest(unittest.TestCase):

    def test_validation(self):
        for kwargs in ({"b": -0.1}, {"b": 0.5, "R": 0.0}, {"b": 0.5, "zeta": 2}, {"b": 0.5, "bc": "periodic"},
                       {"b": 0.5, "resolution": 8}):
            with self.assertRaises(ValueError):
                CellProblem(**kwargs)

    def test_resolution_follows_core_size(self):
        self.assertEqual(CellProblem.for_field(0.5, 4.0).resolution, 32)
        coarse = CellProblem.for_field(0.9, 20.0).resolution
        fine = CellProblem.for_field(0.05, 20.0).resolution
        self.assertGreater(fine, coarse)

    def test_dirichlet_ring_is_checked(self):
        p = CellProblem(0.5, R=4.0)
        with self.assertRaises(ValueError):
            cell_energy(ComplexField2D(p.grid, np.ones(p.grid.shape)), p)
        self.assertTrue(p.with_bc("neumann").free.all())

    def test_zero_state_energy(self):
        p = CellProblem(0.5, alpha=0.7, R=4.0)
        zero = ComplexField2D.zeros(p.grid)
        self.assertAlmostEqual(cell_energy(zero, p), 0.5 * 0.7 ** 2 * 16.0, places=10)

    def test_scaled_energy_identity(self):
        p = CellProblem(0.4, alpha=2.0, R=6.0)
        lhs, rhs = scaled_energy_identity(random_state(p), p)
        self.assertAlmostEqual(lhs, rhs, delta=1e-12 * abs(lhs))
        with self.assertRaises(ValueError):
            scaled_energy_identity(random_state(p), CellProblem(0.4, alpha=-1.0, R=6.0))

    def test_gradient_matches_finite_differences(self):
        p = CellProblem(0.6, alpha=1.0, R=4.0)
        u = random_state(p, seed=2, scale=0.5)
        v = random_state(p, seed=3, scale=1.0)
        eps = 1e-6
        plus = cell_energy(ComplexField2D(p.grid, u.values + eps * v.values), p)
        minus = cell_energy(ComplexField2D(p.grid, u.values - eps * v.values), p)
        numeric = (plus - minus) / (2 * eps)
        analytic = 2.0 * float(np.real(np.vdot(v.values, cell_gradient(u, p))))
        self.assertAlmostEqual(numeric, analytic, delta=1e-6 * abs(analytic))


class MinimizeCellTest(unittest.TestCase):

    def test_nonpositive_alpha_gives_zero(self):
        p = CellProblem.for_field(0.5, 8.0, alpha=-0.5)
        cell = minimize_cell(p, seeds=1)
        self.assertFalse(cell.u.values.any())
        self.assertAlmostEqual(cell.energy / p.R ** 2, 0.125, places=10)

    def test_minimum_beats_normal_state(self):
        p = CellProblem.for_field(0.5, 4.0)
        cell = minimize_cell(p, seeds=1, seed=7)
        normal = 0.5 * p.R ** 2
        self.assertLessEqual(cell.energy, normal + 1e-12)
        self.assertGreaterEqual(cell.energy, 0.0)
        self.assertLessEqual(float(np.abs(cell.u.values).max()), 1.0 + 1e-12)
        self.assertFalse(cell.u.values[~p.free].any())

    def test_bad_initial_shape(self):
        p = CellProblem(0.5, R=4.0)
        with self.assertRaises(ValueError):
            minimize_cell(p, seeds=0, initial=[np.zeros((5, 5))])

    def test_cache_reuses_entries(self):
        cache = CellCache(seeds=0)
        first = cache.get(1.2, 4.0)
        again = cache.get(1.2, 4.0)
        self.assertIs(first, again)
        self.assertEqual(cache.hits, 1)
        self.assertEqual(len(cache), 1)


class FhatTest(unittest.TestCase):

    def test_saturated_fields_skip_the_solver(self):
        est = fhat_estimate(1.5)
        self.assertEqual(est.value, 0.5)
        self.assertEqual(est.R_used, 0.0)
        with self.assertRaises(ValueError):
            fhat_estimate(0.0)

    def test_table_validation(self):
        with self.assertRaises(ValueError):
            FhatTable([0.2, 0.5], [0.3, 0.2])
        with self.assertRaises(ValueError):
            FhatTable([0.5, 1.5], [0.2, 0.3])
        with self.assertRaises(ValueError):
            FhatTable([0.2, 0.5], [0.2, 0.7])
        with self.assertRaises(ValueError):
            FhatTable([0.5, 0.2], [0.2, 0.3])

    def test_table_csv(self):
        table = FhatTable([0.1, 0.5, 1.0], [0.1, 0.3, 0.5], [10.0, 15.0, 0.0], [0.03, 0.04, 0.0])
        with tempfile.TemporaryDirectory() as tmp:
            back = FhatTable.load_csv(table.save_csv(Path(tmp) / "fhat.csv"))
        np.testing.assert_allclose(back.values, table.values)
        np.testing.assert_allclose(back.R_used, table.R_used)

    def test_repair_monotone(self):
        np.testing.assert_allclose(repair_monotone([0.1, 0.3, 0.2, 0.6]), [0.1, 0.2, 0.2, 0.5])

    def test_table_keeps_raw_estimates(self):
        table = FhatTable([0.1, 0.5, 1.0], [0.1, 0.3, 0.5], raw=[0.1, 0.35, 0.5])
        with tempfile.TemporaryDirectory() as tmp:
            back = FhatTable.load_csv(table.save_csv(Path(tmp) / "fhat.csv"))
        np.testing.assert_allclose(back.raw, [0.1, 0.35, 0.5])
        np.testing.assert_allclose(FhatTable([0.1, 0.5], [0.1, 0.3]).raw, [0.1, 0.3])

    def test_monotonicity_drops(self):
        table = FhatTable([0.2, 0.4, 0.6, 0.8], [0.1, 0.15, 0.15, 0.4], raw=[0.1, 0.3, 0.15, 0.4])
        drops = monotonicity_drops(table, 0.05)
        self.assertEqual(len(drops), 1)
        self.assertEqual(drops[0][:2], (0.4, 0.6))
        self.assertAlmostEqual(drops[0][2], 0.15)
        self.assertEqual(monotonicity_drops(table, 0.1), [])

    def test_build_table_warns_on_non_monotone_estimates(self):
        raw = [0.1, 0.3, 0.15, 0.4]
        estimates = [FhatEstimate(v, 10.0, 0.01) for v in raw]
        with mock.patch("cellproblem.sweep", return_value=estimates), \
                self.assertLogs("cellproblem", level="WARNING") as logs:
            table = build_fhat_table([0.2, 0.4, 0.6, 0.8], tol=0.05)
        np.testing.assert_allclose(table.raw, raw)
        np.testing.assert_allclose(table.values, [0.1, 0.15, 0.15, 0.4])
        self.assertTrue(any("drop by more than 2 tol" in line for line in logs.output))

    def test_build_table_within_tolerance(self):
        estimates = [FhatEstimate(v, 10.0, 0.01) for v in (0.1, 0.3, 0.25, 0.4)]
        with mock.patch("cellproblem.sweep", return_value=estimates):
            table = build_fhat_table([0.2, 0.4, 0.6, 0.8], tol=0.05)
        self.assertEqual(monotonicity_drops(table, 0.05), [])
        np.testing.assert_allclose(table.values, [0.1, 0.25, 0.25, 0.4])

    def test_lipschitz_violations(self):
        self.assertEqual(lipschitz_violations(FhatTable([0.5, 0.6], [0.1, 0.4])), [(0.5, 0.6)])
        self.assertEqual(lipschitz_violations(FhatTable([0.5, 0.6], [0.2, 0.4])), [])
        self.assertEqual(lipschitz_violations(FhatTable([0.1, 0.2], [0.0, 0.4])), [])

    def test_eval(self):
        table = FhatTable([0.1, 0.5, 1.0], [0.1, 0.3, 0.5])
        self.assertEqual(fhat_eval(table, 2.0), 0.5)
        self.assertEqual(fhat_eval(table, 0.0), 0.0)
        self.assertAlmostEqual(fhat_eval(table, 0.3), 0.2)
        self.assertAlmostEqual(fhat_eval(table, 0.05), 0.025 * math.log(20.0))
        self.assertIsInstance(fhat_eval(table, 0.3), float)
        np.testing.assert_allclose(fhat_eval(table, np.array([0.0, 0.3, 1.0])), [0.0, 0.2, 0.5])
        with self.assertRaises(ValueError):
            fhat_eval(table, -0.1)

    def test_asymptotic_table(self):
        table = asymptotic_table()
        self.assertTrue(np.all(np.diff(table.values) >= 0))
        self.assertLessEqual(table.values.max(), 0.5)
        self.assertAlmostEqual(table.values[0], float(fhat_asymptotic(table.b_grid[0])))


@unittest.skipUnless(SLOW, "set GL_SLOW=1 for cell minimizations at desk scale")
class CellScalingSlowTest(unittest.TestCase):

    def test_scaling_identity_after_minimization(self):
        lhs, rhs = scaling_check(0.5, 5.0, 1.5, seeds=2, seed=3)
        self.assertLess(abs(lhs - rhs), 2e-3 * max(1.0, abs(lhs)))

    def test_intermediate_fhat(self):
        est = fhat_estimate(0.5, tol=0.1)
        self.assertGreater(est.value, 0.0)
        self.assertLess(est.value, 0.5)


if __name__ == "__main__":
    unittest.main()
