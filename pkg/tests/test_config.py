import json
import logging
import os
import tempfile
import unittest

from config import (DEFAULT_K_MAX, ConfigError, ExperimentConfig, env_workers, load_env, load_experiment_config,
                    parse_experiment_config, parse_size, resolve_log_level)

EXAMPLE = """
# reference problem at two noise levels
problems = gaussian_blur:sigma=2.0, separable_kron
methods = df, lcurve, ncp, discrepancy, wgcv
orderings = hyperbolic, elliptic
alphas = 1e-2, 1e-4
seeds = 20
k_max = 150
image_size = 64x64
epsilon = 1e-2
"""


class TestExperimentConfig(unittest.TestCase):

    def test_parse_example(self):
        config = parse_experiment_config(EXAMPLE)
        self.assertEqual(config.problems, ["gaussian_blur:sigma=2.0", "separable_kron"])
        self.assertEqual(config.methods, ["df", "lcurve", "ncp", "discrepancy", "wgcv"])
        self.assertEqual(config.alphas, [1e-2, 1e-4])
        self.assertEqual(config.seeds, 20)
        self.assertEqual(config.image_size, (64, 64))
        self.assertEqual(config.epsilon, 1e-2)
        self.assertIsNone(config.h)

    def test_defaults(self):
        config = parse_experiment_config("")
        self.assertEqual(config.k_max, DEFAULT_K_MAX)
        self.assertEqual(config.workers, 1)
        self.assertFalse(config.timing)

    def test_spec_continuation(self):
        config = parse_experiment_config("problems = gaussian_blur:sigma=1.5, boundary=periodic, dense_1d:size=32")
        self.assertEqual(config.problems, ["gaussian_blur:sigma=1.5,boundary=periodic", "dense_1d:size=32"])

    def test_errors_collect_every_key(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_experiment_config("foo = 1\nseeds = -3\nmethods = df, bogus\nk_max = 10")
        self.assertEqual(ctx.exception.keys, ["foo", "seeds", "methods"])
        self.assertIn("bogus", str(ctx.exception))

    def test_duplicate_key(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_experiment_config("seeds = 2\nseeds = 3")
        self.assertEqual(ctx.exception.keys, ["seeds"])

    def test_line_without_value(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_experiment_config("seeds = 2\nproblems")
        self.assertEqual(ctx.exception.keys, ["line 2"])

    def test_empty_problems(self):
        with self.assertRaises(ConfigError):
            parse_experiment_config("problems = ,")

    def test_timing_flag(self):
        self.assertTrue(parse_experiment_config("timing = yes").timing)
        with self.assertRaises(ConfigError):
            parse_experiment_config("timing = maybe")

    def test_look_ahead(self):
        self.assertEqual(ExperimentConfig().look_ahead(4096), 41)
        self.assertEqual(ExperimentConfig(h=5).look_ahead(4096), 5)
        self.assertEqual(ExperimentConfig(h=50).look_ahead(10), 9)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_experiment_config("/nonexistent/experiment.cfg")

    def test_load_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "experiment.cfg")
            with open(path, "w") as f:
                f.write("problems = identity\nseeds = 1\n")
            config = load_experiment_config(path)
        self.assertEqual(config.problems, ["identity"])
        self.assertEqual(config.seeds, 1)


class TestParseSize(unittest.TestCase):

    def test_sizes(self):
        self.assertEqual(parse_size("64x48"), (64, 48))
        self.assertEqual(parse_size("32"), (32, 32))
        self.assertEqual(parse_size(" 8 X 4 "), (8, 4))

    def test_invalid(self):
        for text in ("", "0x4", "axb", "4x"):
            with self.assertRaises(ValueError):
                parse_size(text)


class TestEnv(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "env.json")

    def tearDown(self):
        self.tmp.cleanup()

    def _write(self, text):
        with open(self.path, "w") as f:
            f.write(text)

    def test_missing_file(self):
        self.assertEqual(load_env(self.path), {})

    def test_invalid_json(self):
        self._write("{not json")
        with self.assertRaises(ValueError):
            load_env(self.path)

    def test_unknown_keys_warn(self):
        self._write(json.dumps({"log_level": "DEBUG", "api_key": "x"}))
        with self.assertLogs(level="WARNING") as logs:
            env = load_env(self.path)
        self.assertEqual(env, {"log_level": "DEBUG"})
        self.assertIn("api_key", logs.output[0])

    def test_log_level(self):
        self.assertEqual(resolve_log_level(2, {}), logging.DEBUG)
        self.assertEqual(resolve_log_level(1, {"log_level": "ERROR"}), logging.INFO)
        self.assertEqual(resolve_log_level(0, {"log_level": "error"}), logging.ERROR)
        self.assertEqual(resolve_log_level(0, {"log_level": "loud"}), logging.WARNING)
        self.assertEqual(resolve_log_level(0, {}), logging.WARNING)

    def test_workers(self):
        self.assertEqual(env_workers({"workers": 4}), 4)
        self.assertEqual(env_workers({"workers": 0}), 1)
        self.assertEqual(env_workers({"workers": "many"}), 1)
        self.assertEqual(env_workers({}), 1)


if __name__ == "__main__":
    unittest.main()
