import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from fields import (  # noqa: E402
    ComplexField2D, Grid2D, GridMismatchError, LinkField2D, ScalarField2D, box_counts, count_boundary_squares,
    covariant_laplacian, covariant_matrix, gradient_links, integrate, kinetic_energy, read_field_binary,
    read_field_csv, read_links_binary, vertex_average, write_field_binary, write_field_csv, write_links_binary,
)
from gauge import unit_field_links  # noqa: E402


def random_links(grid, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    return LinkField2D(grid, scale * rng.standard_normal((grid.nx - 1, grid.ny)),
                       scale * rng.standard_normal((grid.nx, grid.ny - 1)))


def random_psi(grid, seed=1):
    rng = np.random.default_rng(seed)
    return ComplexField2D(grid, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))


class GridTest(unittest.TestCase):

    def test_nodes_are_cell_centres(self):
        g = Grid2D.square(4, 1.0)
        np.testing.assert_allclose(g.x, [0.125, 0.375, 0.625, 0.875])
        self.assertEqual(g.bounds, (0.0, 1.0, 0.0, 1.0))
        self.assertEqual(g.node_count, 16)

    def test_rejects_bad_masks(self):
        with self.assertRaises(ValueError):
            Grid2D(3, 8, 0.1)
        two_parts = np.zeros((8, 8), dtype=bool)
        two_parts[:3, :] = True
        two_parts[5:, :] = True
        with self.assertRaises(ValueError):
            Grid2D(8, 8, 0.1, inside=two_parts)
        ring = np.ones((8, 8), dtype=bool)
        ring[3:5, 3:5] = False
        with self.assertRaises(ValueError):
            Grid2D(8, 8, 0.1, inside=ring)

    def test_disk_area(self):
        g = Grid2D.disk(128, radius=0.5)
        area = integrate(ScalarField2D.constant(g, 1.0))
        self.assertAlmostEqual(area, np.pi / 4, delta=0.02)

    def test_boundary_nodes_of_square(self):
        g = Grid2D.square(8)
        idx, normals, corner = g.boundary_nodes
        self.assertEqual(len(idx), 28)
        self.assertEqual(int(corner.sum()), 4)
        np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0)
        left = idx[:, 0] == 0
        np.testing.assert_allclose(normals[left & ~corner], [[-1.0, 0.0]] * int((left & ~corner).sum()))

    def test_plaquettes_of_square(self):
        g = Grid2D.square(6)
        plaq = g.plaquette_mask()
        self.assertEqual(plaq.shape, (7, 7))
        self.assertEqual(int(plaq.sum()), 25)
        self.assertFalse(plaq[0].any() or plaq[-1].any())


class QuadratureTest(unittest.TestCase):

    def test_midpoint_rule_is_exact_for_linear_functions(self):
        g = Grid2D.square(16, 2.0, origin=(-1.0, 0.0))
        f = ScalarField2D.from_function(g, lambda X, Y: 3.0 + X + 2.0 * Y)
        self.assertAlmostEqual(integrate(f), 2.0 * 2.0 * 3.0 + 0.0 + 2.0 * 2.0 * 2.0, places=10)

    def test_mask_restricts_the_integral(self):
        g = Grid2D.square(10)
        one = ScalarField2D.constant(g, 1.0)
        X, _ = g.mesh()
        self.assertAlmostEqual(integrate(one, X < 0.5), 0.5, places=12)
        with self.assertRaises(GridMismatchError):
            integrate(one, np.ones((4, 4), dtype=bool))

    def test_box_counts(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[2:4, 1:5] = True
        counts = box_counts(mask, np.array([0, 2, 3]), np.array([5, 2, 1]), np.array([0, 0, 0]),
                            np.array([5, 1, 5]))
        np.testing.assert_array_equal(counts, [8, 1, 0])

    def test_vertex_average_of_constant(self):
        g = Grid2D.square(6)
        avg = vertex_average(ScalarField2D.constant(g, 2.5))
        self.assertTrue(np.allclose(avg.values[avg.grid.inside], 2.5))


class InterfaceSquaresTest(unittest.TestCase):

    def test_straight_interface(self):
        g = Grid2D.square(64)
        a = ScalarField2D.from_function(g, lambda X, Y: X - 0.5)
        self.assertEqual(count_boundary_squares(a, 0.125), 7)

    def test_single_sign_has_no_interface(self):
        g = Grid2D.square(32)
        self.assertEqual(count_boundary_squares(ScalarField2D.constant(g, 1.0), 0.25), 0)

    def test_side_below_resolution(self):
        g = Grid2D.square(16)
        with self.assertRaises(ValueError):
            count_boundary_squares(ScalarField2D.constant(g, 1.0), g.h)


class CovariantOperatorTest(unittest.TestCase):

    def setUp(self):
        self.grid = Grid2D.square(9)
        self.A = random_links(self.grid)
        self.psi = random_psi(self.grid)

    def test_matrix_is_hermitian(self):
        M = covariant_matrix(self.grid, self.A, 1.7)
        self.assertLess(abs(M - M.conj().T).max(), 1e-12)

    def test_quadratic_form_is_kinetic_energy(self):
        c = 1.7
        M = covariant_matrix(self.grid, self.A, c)
        v = self.psi.values[self.grid.inside]
        form = np.vdot(v, M @ v)
        self.assertAlmostEqual(form.imag, 0.0, places=8)
        kin = kinetic_energy(self.psi, self.A, c)
        self.assertAlmostEqual(form.real * self.grid.h ** 2, kin, delta=1e-9 * kin)

    def test_matrix_matches_stencil(self):
        c = 0.8
        M = covariant_matrix(self.grid, self.A, c)
        stencil = covariant_laplacian(self.psi, self.A, c)
        np.testing.assert_allclose(M @ self.psi.values.ravel() * self.grid.h ** 2, stencil.ravel(), atol=1e-10)

    def test_constants_are_neumann_ground_states(self):
        M = covariant_matrix(self.grid, None, 1.0)
        np.testing.assert_allclose(M @ np.ones(self.grid.node_count), 0.0, atol=1e-9)

    def test_dirichlet_face_adds_to_diagonal(self):
        M = covariant_matrix(self.grid, None, 1.0, dirichlet=("left",))
        h2 = self.grid.h ** 2
        # node (0, 4): two vertical neighbours, one horizontal, plus the Dirichlet face
        row = 4
        self.assertAlmostEqual(M[row, row].real * h2, 5.0)
        with self.assertRaises(ValueError):
            covariant_matrix(self.grid, None, 1.0, dirichlet=("north",))

    def test_gauge_invariance(self):
        c = 1.3
        rng = np.random.default_rng(5)
        chi = rng.standard_normal(self.grid.shape)
        moved = ComplexField2D(self.grid, self.psi.values * np.exp(1j * c * chi))
        A2 = self.A + gradient_links(self.grid, chi)
        kin = kinetic_energy(self.psi, self.A, c)
        self.assertAlmostEqual(kinetic_energy(moved, A2, c), kin, delta=1e-10 * kin)

    def test_unit_field_flux(self):
        g = Grid2D.square(12, 2.0)
        A = unit_field_links(g, (1.0, 1.0))
        circulation = A.hx[:, :-1] + A.hy[1:, :] - A.hx[:, 1:] - A.hy[:-1, :]
        np.testing.assert_allclose(circulation, g.h ** 2, rtol=1e-12)

    def test_links_on_other_grid(self):
        other = random_links(Grid2D.square(10))
        with self.assertRaises(GridMismatchError):
            self.A + other
        with self.assertRaises(GridMismatchError):
            LinkField2D(self.grid, np.zeros((3, 3)), np.zeros((3, 3)))


class FieldIOTest(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.grid = Grid2D.disk(16)

    def tearDown(self):
        self._tmp.cleanup()

    def test_binary_and_csv(self):
        psi = random_psi(self.grid)
        back = read_field_binary(write_field_binary(psi, self.tmp / "psi.bin"), self.grid)
        np.testing.assert_array_equal(back.values, psi.values)
        csv = read_field_csv(write_field_csv(psi, self.tmp / "psi.csv"), self.grid)
        np.testing.assert_allclose(csv.values, psi.values, rtol=1e-15)
        A = random_links(self.grid)
        links = read_links_binary(write_links_binary(A, self.tmp / "A.bin"), self.grid)
        np.testing.assert_array_equal(links.hx, A.hx)

    def test_values_outside_domain_are_zeroed(self):
        psi = ComplexField2D(self.grid, np.ones(self.grid.shape, dtype=complex))
        self.assertEqual(psi.values[0, 0], 0.0)

    def test_header_must_match_grid(self):
        f = ScalarField2D.constant(self.grid, 1.0)
        path = write_field_binary(f, self.tmp / "f.bin")
        with self.assertRaises(GridMismatchError):
            read_field_binary(path, Grid2D.square(12))
        with self.assertRaises(ValueError):
            read_links_binary(path, self.grid)


if __name__ == "__main__":
    unittest.main()
