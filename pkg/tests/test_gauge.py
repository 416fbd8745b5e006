import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from fields import Grid2D, ScalarField2D  # noqa: E402
from gauge import (  # noqa: E402
    PoissonSolver, PotentialBundle, curl, divergence, links_to_stream, local_gauge_phase, stream_to_links,
    unit_field_links, vector_potential_from_field,
)


def corner_noise(grid, seed=0):
    """Random stream values on the plaquette corners, zero elsewhere."""
    rng = np.random.default_rng(seed)
    return np.where(grid.plaquette_mask(), rng.standard_normal((grid.nx + 1, grid.ny + 1)), 0.0)


class StreamFunctionTest(unittest.TestCase):

    def setUp(self):
        self.grid = Grid2D.square(10)

    def test_curl_of_perpendicular_gradient_is_laplacian(self):
        u = corner_noise(self.grid)
        got = curl(stream_to_links(self.grid, u)).values
        want = PoissonSolver(self.grid).laplacian(u)
        plaq = self.grid.plaquette_mask()
        np.testing.assert_allclose(got[plaq], want[plaq], atol=1e-9 * np.abs(want).max())

    def test_adjoint_pairing(self):
        rng = np.random.default_rng(3)
        u = rng.standard_normal((self.grid.nx + 1, self.grid.ny + 1))
        gx = rng.standard_normal((self.grid.nx - 1, self.grid.ny))
        gy = rng.standard_normal((self.grid.nx, self.grid.ny - 1))
        A = stream_to_links(self.grid, u)
        lhs = float(np.sum(A.hx * gx) + np.sum(A.hy * gy))
        rhs = float(np.sum(links_to_stream(self.grid, gx, gy) * u))
        self.assertAlmostEqual(lhs, rhs, places=10)

    def test_divergence_free(self):
        u = corner_noise(self.grid, seed=4)
        div = divergence(stream_to_links(self.grid, u)).values
        self.assertLess(np.abs(div).max(), 1e-9)


class PoissonSolverTest(unittest.TestCase):

    def test_solution_meets_max_norm_target(self):
        grid = Grid2D.disk(24)
        solver = PoissonSolver(grid, tol=1e-10)
        rhs = np.where(solver.unknown, 1.0, 0.0)
        u, iterations = solver.solve(rhs)
        self.assertGreater(iterations, 0)
        self.assertLess(np.abs(solver.laplacian(u) - rhs)[solver.unknown].max(), 1e-8)
        self.assertTrue(np.all(u[~solver.unknown] == 0.0))

    def test_zero_rhs(self):
        solver = PoissonSolver(Grid2D.square(8))
        u, iterations = solver.solve(np.zeros((9, 9)))
        self.assertEqual(iterations, 0)
        self.assertFalse(u.any())

    def test_bad_tolerance(self):
        with self.assertRaises(ValueError):
            PoissonSolver(Grid2D.square(8), tol=0.0)


class VectorPotentialTest(unittest.TestCase):

    def test_uniform_field(self):
        grid = Grid2D.square(32)
        bundle = vector_potential_from_field(ScalarField2D.constant(grid, 1.0))
        plaq = grid.plaquette_mask()
        np.testing.assert_allclose(curl(bundle.F).values[plaq], 1.0, atol=1e-8)
        self.assertLess(bundle.residual_curl, 1e-8)
        self.assertEqual(bundle.normal_flux(), 0.0)

    def test_sign_changing_field_on_disk(self):
        grid = Grid2D.disk(32, radius=1.0, center=(0.0, 0.0))
        B0 = ScalarField2D.from_function(grid, lambda X, Y: X)
        bundle = vector_potential_from_field(B0)
        self.assertLess(bundle.residual_curl, 1e-8)
        self.assertEqual(bundle.normal_flux(), 0.0)

    def test_save_and_load(self):
        grid = Grid2D.square(16)
        bundle = vector_potential_from_field(ScalarField2D.constant(grid, 2.0))
        with tempfile.TemporaryDirectory() as tmp:
            back = PotentialBundle.load(bundle.save(tmp), grid)
        np.testing.assert_array_equal(back.F.hx, bundle.F.hx)
        self.assertEqual(back.iterations, bundle.iterations)


class LocalGaugeTest(unittest.TestCase):

    def setUp(self):
        self.grid = Grid2D.square(64)
        self.F = vector_potential_from_field(ScalarField2D.constant(self.grid, 1.0)).F

    def test_uniform_field_is_a_gauge_of_the_unit_potential(self):
        gauge = local_gauge_phase(self.F, (0.5, 0.5), (0.5, 0.5), 0.25)
        self.assertAlmostEqual(gauge.field_value, 1.0, places=7)
        self.assertLess(gauge.defect, 1e-6)

    def test_unit_potential_itself(self):
        F = unit_field_links(self.grid, (0.4, 0.6))
        gauge = local_gauge_phase(F, (0.4, 0.6), (0.45, 0.6), 0.2)
        self.assertLess(gauge.defect, 1e-10)
        self.assertLess(np.abs(gauge.phi.values).max(), 1e-10)

    def test_defect_scales_with_the_square_of_the_side(self):
        grid = Grid2D.square(256)
        X, _ = grid.mesh()
        F = vector_potential_from_field(ScalarField2D(grid, X)).F
        defects = [local_gauge_phase(F, (0.5, 0.5), (0.5, 0.5), ell).defect for ell in (0.4, 0.2, 0.1)]
        for coarse, fine in zip(defects, defects[1:]):
            self.assertGreater(coarse / fine, 3.0)
            self.assertLess(coarse / fine, 5.0)

    def test_square_must_fit(self):
        with self.assertRaises(ValueError):
            local_gauge_phase(self.F, (0.05, 0.5), (0.05, 0.5), 0.25)
        with self.assertRaises(ValueError):
            local_gauge_phase(self.F, (0.5, 0.5), (0.9, 0.5), 0.25)


if __name__ == "__main__":
    unittest.main()
