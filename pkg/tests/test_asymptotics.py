import math
import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from asymptotics import (  # noqa: E402
    _period_weights, compare_energy, find_disk, homogenization_convergence, homogenization_error, homogenized_leading,
    interface_length_estimate, kappa_independent_lower_bound, leading_energy, leading_energy_upper,
    local_leading_energy, periodic_average, psi4_prediction, write_rows_csv,
)
from cellproblem import FhatTable, asymptotic_table  # noqa: E402
from coefficients import DomainSpec, FieldSpec, PeriodicProfile, PinningSpec  # noqa: E402
from fields import Grid2D, ScalarField2D  # noqa: E402
from scenario import env_flag  # noqa: E402

SLOW = env_flag("GL_SLOW")

# piecewise linear stand-in with the right endpoints; enough for formula checks
TABLE = FhatTable([0.1, 0.5, 1.0], [0.1, 0.35, 0.5])


class LeadingEnergyTest(unittest.TestCase):

    def setUp(self):
        self.grid = Grid2D.square(32)
        self.B0 = ScalarField2D.constant(self.grid, 1.0)

    def test_negative_pinning(self):
        a = ScalarField2D.constant(self.grid, -1.0)
        rep = leading_energy(a, self.B0, 10.0, 5.0, TABLE)
        self.assertAlmostEqual(rep.leading, 50.0, places=9)
        self.assertEqual(rep.bulk_pos, 0.0)
        self.assertAlmostEqual(rep.leading, leading_energy_upper(a, 10.0), places=9)

    def test_saturation(self):
        a = ScalarField2D.constant(self.grid, 1.0)
        rep = leading_energy(a, self.B0, 10.0, 15.0, asymptotic_table())
        self.assertAlmostEqual(rep.leading, 50.0, places=9)
        self.assertEqual(psi4_prediction(None, a, self.B0, 10.0, 15.0, asymptotic_table()), 0.0)

    def test_interior_value(self):
        a = ScalarField2D.constant(self.grid, 2.0)
        # sigma |B0| / a = 0.5 / 2 = 0.25, fhat = 0.1 + 0.25 * 0.15 / 0.4
        f = 0.1 + 0.25 * 0.375
        rep = leading_energy(a, self.B0, 4.0, 2.0, TABLE)
        self.assertAlmostEqual(rep.leading, 16.0 * 4.0 * f, places=9)
        self.assertAlmostEqual(psi4_prediction(None, a, self.B0, 4.0, 2.0, TABLE), 4.0 * (1 - 2 * f), places=9)

    def test_tiny_pinning_uses_half_a_squared(self):
        a = ScalarField2D.constant(self.grid, 1e-9)
        rep = leading_energy(a, self.B0, 1.0, 1.0, TABLE)
        self.assertAlmostEqual(rep.leading, 0.5e-18, delta=1e-24)

    def test_local_energy(self):
        X, _ = self.grid.mesh()
        a = ScalarField2D.from_function(self.grid, lambda X, Y: X - 0.5)
        whole = leading_energy(a, self.B0, 5.0, 2.0, TABLE).leading
        self.assertAlmostEqual(local_leading_energy(self.grid.inside, a, self.B0, 5.0, 2.0, TABLE), whole)
        self.assertEqual(local_leading_energy(np.zeros(self.grid.shape, dtype=bool), a, self.B0, 5.0, 2.0, TABLE), 0.0)
        left = local_leading_energy(X < 0.5, a, self.B0, 5.0, 2.0, TABLE)
        right = local_leading_energy(X >= 0.5, a, self.B0, 5.0, 2.0, TABLE)
        self.assertAlmostEqual(left + right, whole, places=9)

    def test_subdomain_must_lie_inside(self):
        disk = Grid2D.disk(32)
        a = ScalarField2D.constant(disk, 1.0)
        B0 = ScalarField2D.constant(disk, 1.0)
        with self.assertRaises(ValueError):
            local_leading_energy(np.ones(disk.shape, dtype=bool), a, B0, 5.0, 2.0, TABLE)
        with self.assertRaises(ValueError):
            leading_energy(a, B0, 5.0, 0.0, TABLE)


class EnergyComparisonTest(unittest.TestCase):

    def test_normal_pinning_matches_exactly(self):
        domain = DomainSpec("square", 1.0, (0.5, 0.5), 32)
        pinning = PinningSpec("constant", {"value": -1.0})
        field_spec = FieldSpec("constant", {"value": 1.0})
        rep = compare_energy(pinning, field_spec, domain, (2.0, 4.0), 0.5, TABLE)
        self.assertEqual([r.kappa for r in rep.rows], [2.0, 4.0])
        for row in rep.rows:
            self.assertLess(row.rel_dev, 1e-9)
        self.assertTrue(rep.decreasing)
        with tempfile.TemporaryDirectory() as tmp:
            text = rep.write_csv(Path(tmp) / "cmp.csv").read_text().splitlines()
        self.assertEqual(text[0], "kappa,H,E_min,E_leading,rel_dev,converged")
        self.assertEqual(len(text), 3)
        with self.assertRaises(ValueError):
            compare_energy(pinning, field_spec, domain, (4.0, 2.0), 0.5, TABLE)


class PeriodicAverageTest(unittest.TestCase):

    def test_simpson_average(self):
        self.assertAlmostEqual(periodic_average(lambda t1, t2: np.sin(2 * np.pi * t1) ** 2, 1.0, 1.0), 0.5, places=10)
        self.assertAlmostEqual(periodic_average(lambda t1, t2: 3.0 + 0 * t1, 2.0, 0.5), 3.0, places=12)
        with self.assertRaises(ValueError):
            periodic_average(lambda t1, t2: t1, 0.0, 1.0)

    def test_weights_sum_to_one(self):
        values, weights = _period_weights(PeriodicProfile(1.0, 0.5, 0.25))
        self.assertAlmostEqual(float(weights.sum()), 1.0, places=12)
        self.assertAlmostEqual(float(values @ weights), 1.0, places=8)

    def test_convergence_rate(self):
        phi = lambda t1, t2: 1.0 + 0.5 * np.sin(2 * np.pi * t1)  # noqa: E731
        rep = homogenization_convergence(phi, 1.0, 1.0, (0.0, 1.0 / 3.0, 0.0, 1.0))
        self.assertAlmostEqual(rep.slope, -1.0, delta=0.05)
        self.assertAlmostEqual(rep.errors[0], 0.75 / (2 * np.pi * 8), delta=1e-6)

    def test_whole_periods_have_no_error(self):
        phi = lambda t1, t2: np.cos(2 * np.pi * t1) * np.cos(2 * np.pi * t2)  # noqa: E731
        self.assertLess(homogenization_error(phi, 1.0, 1.0, (0.0, 1.0, 0.0, 1.0), 4), 1e-8)


class HomogenizedTest(unittest.TestCase):

    def test_example_must_match_pinning(self):
        domain = DomainSpec(cells=16)
        uniform = FieldSpec("constant", {"value": 1.0})
        with self.assertRaises(ValueError):
            homogenized_leading("oscillating", PinningSpec("constant", {"value": 1.0}), uniform, domain,
                                4.0, 2.0, TABLE)
        with self.assertRaises(ValueError):
            homogenized_leading("kappa-independent", PinningSpec("periodic", {"mean": 1.0}), uniform, domain,
                                4.0, 2.0, TABLE)
        with self.assertRaises(ValueError):
            homogenized_leading("no-such-example", PinningSpec(), uniform, domain, 4.0, 2.0, TABLE)

    def test_kappa_independent_example(self):
        domain = DomainSpec(cells=32)
        res = homogenized_leading("kappa-independent", PinningSpec("constant", {"value": 1.0}),
                                  FieldSpec("constant", {"value": 1.0}), domain, 4.0, 2.0, TABLE)
        self.assertEqual(res.homogenized, res.direct)
        self.assertGreater(res.lower_bound, 0.0)
        self.assertLess(res.lower_bound, res.direct)
        self.assertAlmostEqual(res.disk[0], 0.5, delta=1.0 / 32)

    def test_constant_profile_matches_direct(self):
        # amplitude zero: the oscillating formula reduces to the direct one
        pinning = PinningSpec("periodic", {"mean": 1.0})
        res = homogenized_leading("oscillating", pinning, FieldSpec("constant", {"value": 1.0}),
                                  DomainSpec(cells=16), 4.0, 2.0, TABLE, cells=16)
        self.assertAlmostEqual(res.homogenized, res.direct, delta=1e-9 * res.direct)

    def test_shifted_periodic_without_amplitude(self):
        pinning = PinningSpec("sum", {"value": 0.5, "mean": 0.5})
        res = homogenized_leading("shifted-periodic", pinning, FieldSpec("constant", {"value": 1.0}),
                                  DomainSpec(cells=16), 4.0, 2.0, TABLE, cells=16)
        self.assertAlmostEqual(res.homogenized, res.direct, delta=1e-9 * res.direct)
        self.assertLessEqual(res.lower_bound, res.direct + 1e-12)


class GeometryHelpersTest(unittest.TestCase):

    def test_find_disk(self):
        mask = np.zeros((21, 21), dtype=bool)
        mask[5:16, 5:16] = True
        i, j, r = find_disk(mask, 0.1)
        self.assertEqual((i, j), (10, 10))
        self.assertAlmostEqual(r, 0.5)
        self.assertEqual(find_disk(np.zeros((4, 4), dtype=bool), 0.1), (-1, -1, 0.0))

    def test_lower_bound_needs_positive_pinning(self):
        grid = Grid2D.square(16)
        a = ScalarField2D.constant(grid, -1.0)
        self.assertEqual(kappa_independent_lower_bound(a, ScalarField2D.constant(grid, 1.0), 4.0, 2.0, TABLE),
                         (0.0, None))

    def test_interface_length(self):
        grid = Grid2D.square(64)
        a = ScalarField2D.from_function(grid, lambda X, Y: X - 0.5)
        rows = interface_length_estimate(a, [0.125, 0.25])
        self.assertEqual(rows[0]["count"], 7)
        self.assertAlmostEqual(rows[0]["length"], 0.875)

    def test_rows_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_rows_csv([{"a": 1.5, "b": True}, {"a": 2}], Path(tmp) / "rows.csv", ["a", "b"])
            self.assertEqual(path.read_text(), "a,b\n1.5,1\n2,\n")


@unittest.skipUnless(SLOW, "set GL_SLOW=1 for the oscillating example at large kappa")
class HomogenizedSlowTest(unittest.TestCase):

    def test_oscillating_example(self):
        pinning = PinningSpec("periodic", {"mean": 1.0, "amp1": 0.5})
        res = homogenized_leading("oscillating", pinning, FieldSpec("constant", {"value": 1.0}),
                                  DomainSpec(cells=64), 400.0, 200.0, asymptotic_table())
        self.assertLess(res.rel_gap, 0.1)
        self.assertTrue(math.isfinite(res.homogenized))


if __name__ == "__main__":
    unittest.main()
