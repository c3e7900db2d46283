import unittest

import numpy as np
import scipy.fft
from numpy.testing import assert_allclose, assert_array_equal

from operators import dft2, unvec
from pps import (boundary_gap, image_from_periodic, laplacian_symbol, neumann_laplacian_symbol, periodic_laplacian,
                 pps_decompose, smooth_component)
from spectral_filter import elliptic_keys


class TestBoundaryGap(unittest.TestCase):

    def test_two_by_two(self):
        B = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert_array_equal(boundary_gap(B), [[3.0, 1.0], [-1.0, -3.0]])

    def test_periodic_image_has_no_gap(self):
        B = np.random.default_rng(0).standard_normal((5, 6))
        B[-1, :] = B[0, :]
        B[:, -1] = B[:, 0]
        assert_array_equal(boundary_gap(B), np.zeros_like(B))

    def test_column_vector(self):
        b = np.array([[1.0], [2.0], [4.0]])
        assert_array_equal(boundary_gap(b), [[3.0], [0.0], [-3.0]])

    def test_rejects_vectors(self):
        with self.assertRaises(ValueError):
            boundary_gap(np.zeros(4))


class TestDecomposition(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(1)
        ramp = np.add.outer(np.linspace(0, 1, 32), np.linspace(0, 2, 32))
        self.images = [rng.standard_normal((32, 32)) for _ in range(10)]
        self.images += [ramp + 0.1 * rng.standard_normal((32, 32)) for _ in range(10)]

    def test_sum_is_exact(self):
        for B in self.images:
            P, S = pps_decompose(B)
            assert_allclose(P + S, B, atol=1e-12)

    def test_smooth_part_solves_poisson_equation(self):
        for B in self.images:
            S = smooth_component(B)
            lhs = laplacian_symbol(32, 32) * dft2(S)
            rhs = dft2(boundary_gap(B))
            rhs[0, 0] = 0.0
            assert_allclose(lhs, rhs, atol=1e-10)

    def test_smooth_part_has_zero_mean(self):
        for B in self.images:
            self.assertAlmostEqual(float(smooth_component(B).mean()), 0.0, places=12)

    def test_constant_image(self):
        P, S = pps_decompose(np.full((6, 4), 0.3))
        assert_allclose(S, 0.0, atol=1e-14)
        assert_allclose(P, 0.3, atol=1e-14)

    def test_single_pixel(self):
        P, S = pps_decompose(np.array([[2.0]]))
        assert_array_equal(P, [[2.0]])
        assert_array_equal(S, [[0.0]])

    def test_two_rows(self):
        B = np.random.default_rng(2).standard_normal((2, 5))
        P, S = pps_decompose(B)
        assert_allclose(P + S, B, atol=1e-12)

    def test_high_frequencies_suppressed(self):
        ramp = np.add.outer(np.arange(16.0), 2.0 * np.arange(16.0))
        P, _ = pps_decompose(ramp)
        radial = unvec(elliptic_keys(16, 16), 16, 16)
        top = radial >= np.quantile(radial, 0.9)
        self.assertLess(np.sum(np.abs(dft2(P)[top]) ** 2), np.sum(np.abs(dft2(ramp)[top]) ** 2))


class TestInverse(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(3)

    def test_periodic_laplacian_symbol(self):
        B = self.rng.standard_normal((12, 10))
        assert_allclose(dft2(periodic_laplacian(B)), laplacian_symbol(12, 10) * dft2(B), atol=1e-10)

    def test_free_boundary_laplacian_in_dct_basis(self):
        B = self.rng.standard_normal((12, 10))
        free = periodic_laplacian(B) - boundary_gap(B)
        assert_allclose(scipy.fft.dctn(free, norm="ortho"),
                        neumann_laplacian_symbol(12, 10) * scipy.fft.dctn(B, norm="ortho"), atol=1e-10)

    def test_rebuilds_image_from_periodic_component(self):
        for shape in ((32, 32), (2, 5), (7, 1), (1, 6)):
            B = self.rng.standard_normal(shape) + np.add.outer(np.arange(shape[0]), np.arange(shape[1]))
            P, _ = pps_decompose(B)
            assert_allclose(image_from_periodic(P), B, atol=1e-9, err_msg=str(shape))

    def test_periodic_component_of_rebuilt_image(self):
        Q = self.rng.standard_normal((16, 24))
        B = image_from_periodic(Q)
        assert_allclose(pps_decompose(B).P, Q, atol=1e-9)
        self.assertAlmostEqual(float(B.mean()), float(Q.mean()), places=12)

    def test_single_pixel(self):
        assert_array_equal(image_from_periodic(np.array([[1.5]])), [[1.5]])


if __name__ == "__main__":
    unittest.main()
