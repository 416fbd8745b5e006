import math
import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from coefficients import DomainSpec, FieldSpec, PeriodicProfile, PinningSpec, sample_problem  # noqa: E402
from sweep_util import SweepConfig, run_sweep, sweep  # noqa: E402


def square(x):
    return x * x


class DomainSpecTest(unittest.TestCase):

    def test_square_grid(self):
        grid = DomainSpec("square", 2.0, (0.0, 0.0), 16).make_grid()
        self.assertEqual(grid.shape, (16, 16))
        self.assertAlmostEqual(grid.h, 0.125)
        self.assertAlmostEqual(grid.x[0], -1.0 + 0.0625)

    def test_disk_area_and_cells(self):
        disk = DomainSpec("disk", 1.0)
        self.assertAlmostEqual(disk.area, math.pi / 4)
        self.assertFalse(disk.make_grid(32).inside.all())
        self.assertEqual(DomainSpec().cells_for_kappa(40.0), 160)
        self.assertEqual(DomainSpec().cells_for_kappa(2.0), 32)

    def test_validation(self):
        with self.assertRaises(ValueError):
            DomainSpec("hexagon")
        with self.assertRaises(ValueError):
            DomainSpec(size=0.0)


class PinningSpecTest(unittest.TestCase):

    def test_families(self):
        x, y = np.array([0.0, 0.5]), np.array([0.0, 0.25])
        np.testing.assert_allclose(PinningSpec("constant", {"value": 2.0}).evaluate(x, y), [2.0, 2.0])
        lin = PinningSpec("linear", {"value": 1.0, "gradient": (2.0, -4.0)})
        np.testing.assert_allclose(lin.evaluate(x, y), [1.0, 1.0])
        bump = PinningSpec("radial", {"value": 1.0, "floor": -1.0, "radius": 0.2, "center": (0.0, 0.0)})
        self.assertAlmostEqual(float(bump.evaluate(0.0, 0.0)), 1.0)
        self.assertLess(float(bump.evaluate(1.0, 1.0)), -0.99)

    def test_periodic_scales_with_kappa(self):
        p = PinningSpec("periodic", {"mean": 1.0, "amp1": 0.5})
        self.assertTrue(p.kappa_dependent)
        self.assertAlmostEqual(float(p.evaluate(0.125, 0.0, kappa=4.0)), 1.5)
        self.assertEqual(p.profile.minimum, 0.5)
        self.assertEqual(p.base().evaluate(0.3, 0.3).item(), 0.0)

    def test_sum_splits_into_base_and_profile(self):
        p = PinningSpec("sum", {"value": 0.5, "mean": 0.25, "amp2": 0.1})
        self.assertEqual(p.base().family, "linear")
        self.assertAlmostEqual(float(p.evaluate(0.2, 0.0, kappa=9.0)), 0.75)

    def test_profile_is_periodic(self):
        prof = PeriodicProfile(1.0, 0.3, 0.2, 0.5, 2.0)
        self.assertAlmostEqual(float(prof(0.1, 0.7)), float(prof(0.6, 2.7)))
        self.assertAlmostEqual(prof.maximum, 1.5)

    def test_missing_parameters(self):
        with self.assertRaises(ValueError):
            PinningSpec("radial", {"value": 1.0})
        with self.assertRaises(ValueError):
            PinningSpec("tabulated", {"path": "/no/such/table.csv"})
        with self.assertRaises(ValueError):
            PinningSpec("constant", {"value": 1.0}).profile

    def test_tabulated(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "a.csv"
            rows = ["x,y,value"] + [f"{x},{y},{x + 2 * y}" for x in (0.0, 1.0) for y in (0.0, 1.0)]
            path.write_text("\n".join(rows) + "\n")
            p = PinningSpec("tabulated", {"path": str(path)})
            self.assertAlmostEqual(float(p.evaluate(0.5, 0.25)), 1.0)


class FieldSpecTest(unittest.TestCase):

    def test_ring_vanishes_on_its_circle(self):
        f = FieldSpec("radial", {"radius": 0.3, "center": (0.5, 0.5), "scale": 4.0})
        self.assertAlmostEqual(float(f.evaluate(0.8, 0.5)), 0.0)
        self.assertAlmostEqual(float(f.evaluate(0.5, 0.5)), -0.36)

    def test_sample_problem(self):
        grid, a, B0 = sample_problem(DomainSpec(cells=16), PinningSpec(), FieldSpec("linear", {
            "value": 0.0, "gradient": (1.0, 0.0)}), kappa=10.0)
        self.assertEqual(a.values.shape, grid.shape)
        np.testing.assert_allclose(B0.values[:, 0], grid.x)


class SweepTest(unittest.TestCase):

    def test_in_process_sweep_keeps_order(self):
        result = run_sweep(square, [3, 1, 2], SweepConfig(workers=1, label="t"))
        self.assertEqual(result.values, [9, 1, 4])
        self.assertEqual(result.workers, 1)

    def test_pool_sweep_keeps_order(self):
        self.assertEqual(sweep(square, range(6), workers=2), [0, 1, 4, 9, 16, 25])

    def test_config_from_env(self):
        self.assertEqual(SweepConfig.from_env(workers=0).workers, 1)
        self.assertEqual(SweepConfig.from_env(label="x", workers=3).label, "x")


if __name__ == "__main__":
    unittest.main()
