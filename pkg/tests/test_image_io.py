import os
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from image_io import read_csv_matrix, read_data, read_pgm, write_csv_matrix, write_data, write_pgm


class TestPgm(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.image = np.array([[0.0, 0.5, 1.0], [0.25, 0.75, 0.1]])
        self.levels = np.rint(self.image * 255) / 255

    def tearDown(self):
        self.tmp.cleanup()

    def test_binary_round_trip(self):
        path = os.path.join(self.tmp.name, "image.pgm")
        write_pgm(path, self.image)
        assert_allclose(read_pgm(path), self.levels, atol=1e-12)

    def test_plain_round_trip(self):
        path = os.path.join(self.tmp.name, "plain.pgm")
        write_pgm(path, self.image, binary=False)
        with open(path) as f:
            self.assertEqual(f.readline().strip(), "P2")
        assert_allclose(read_pgm(path), self.levels, atol=1e-12)

    def test_values_are_clipped(self):
        path = os.path.join(self.tmp.name, "clipped.pgm")
        write_pgm(path, np.array([[-1.0, 2.0]]))
        assert_allclose(read_pgm(path), [[0.0, 1.0]])

    def test_missing_file_names_path(self):
        path = os.path.join(self.tmp.name, "missing.pgm")
        with self.assertRaises(FileNotFoundError) as ctx:
            read_pgm(path)
        self.assertIn("missing.pgm", str(ctx.exception))

    def test_bad_maxval(self):
        with self.assertRaises(ValueError):
            write_pgm(os.path.join(self.tmp.name, "x.pgm"), self.image, maxval=1000)


class TestCsv(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_exact(self):
        matrix = np.random.default_rng(0).standard_normal((4, 3))
        path = os.path.join(self.tmp.name, "m.csv")
        write_csv_matrix(path, matrix)
        assert_array_equal(read_csv_matrix(path), matrix)

    def test_vector_written_as_column(self):
        path = os.path.join(self.tmp.name, "v.csv")
        write_csv_matrix(path, np.arange(3.0))
        self.assertEqual(read_csv_matrix(path).shape, (3, 1))

    def test_dispatch_on_suffix(self):
        path = os.path.join(self.tmp.name, "d.csv")
        write_data(path, np.eye(2))
        assert_array_equal(read_data(path), np.eye(2))

    def test_unsupported_suffix(self):
        with self.assertRaises(ValueError):
            read_data(os.path.join(self.tmp.name, "image.png"))
        with self.assertRaises(ValueError):
            write_data(os.path.join(self.tmp.name, "image.png"), np.eye(2))

    def test_unparsable_csv(self):
        path = os.path.join(self.tmp.name, "bad.csv")
        with open(path, "w") as f:
            f.write("1,2\nthree,4\n")
        with self.assertRaises(ValueError):
            read_csv_matrix(path)


if __name__ == "__main__":
    unittest.main()
