import csv
import os
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_allclose

from experiments import gaussian_psf, procedural_image
from gkb import gkb_run, pls_solve
from operators import Blur2dOperator, DenseOperator, unvec, vec
from stopping import (DfRule, DiscrepancyRule, LCurveRule, NcpRule, StoppingDecision, lcurve_corner,
                      menger_curvature, ncp_distance, ncp_vector, run_stopping_rules, write_trace_csv)


class TestDfRule(unittest.TestCase):

    def _replay(self, values, **kwargs):
        rule = DfRule(np.zeros(4), **kwargs)
        decision = None
        for k, f in enumerate(values, start=1):
            decision = rule.update(k, f)
            if decision is not None:
                break
        return rule, decision

    def test_minimum_then_rise(self):
        _, decision = self._replay([10, 5, 1, 2, 3, 4, 5, 6, 7])
        self.assertEqual(decision.stop_iteration, 8)
        self.assertEqual(decision.selected_iteration, 3)
        self.assertEqual(decision.reason, "minimum-found")

    def test_constant_levels_off(self):
        _, decision = self._replay([4.0] * 10)
        self.assertEqual(decision.stop_iteration, 6)
        self.assertEqual(decision.selected_iteration, 1)
        self.assertEqual(decision.reason, "leveled-off")

    def test_steady_decrease_runs_out(self):
        rule, decision = self._replay([2.0 ** -k for k in range(8)])
        self.assertIsNone(decision)
        final = rule.finalize("max-iter")
        self.assertEqual(final.stop_iteration, 8)
        self.assertEqual(final.selected_iteration, 8)
        self.assertEqual(final.reason, "max-iter")

    def test_exact_fit_stops(self):
        _, decision = self._replay([3.0, 0.0, 1.0])
        self.assertEqual(decision.stop_iteration, 2)
        self.assertEqual(decision.selected_iteration, 2)

    def test_parameters_validated(self):
        with self.assertRaises(ValueError):
            DfRule(np.zeros(3), delta=0.0)
        with self.assertRaises(ValueError):
            DfRule(np.zeros(3), p=0)

    def test_from_image(self):
        rule = DfRule.from_image(np.random.default_rng(0).standard_normal((8, 8)), "elliptic")
        self.assertEqual(rule.name, "df-elliptic")
        self.assertIn("k0", rule.flags)
        self.assertEqual(rule.b_hat.shape, (64,))


class TestLCurve(unittest.TestCase):

    def test_right_angle_corner(self):
        points = [(4, 0), (3, 0), (2, 0), (1, 0), (0, 0), (0, 1), (0, 2), (0, 3), (0, 4)]
        result = lcurve_corner(points)
        self.assertEqual(result.index, 5)
        self.assertFalse(result.low_confidence)

    def test_hyperbola_corner(self):
        t = np.logspace(-0.7, 0.7, 51)
        result = lcurve_corner(np.column_stack([1 / t, t]))
        self.assertEqual(result.index, 26)

    def test_too_few_points(self):
        self.assertIsNone(lcurve_corner([(0, 0), (1, 1), (2, 0)]))

    def test_straight_line_is_low_confidence(self):
        result = lcurve_corner([(float(i), float(i)) for i in range(6)])
        self.assertTrue(result.low_confidence)

    def test_menger_sign(self):
        self.assertGreater(menger_curvature((1, 0), (0, 0), (0, 1)), 0)
        self.assertLess(menger_curvature((0, 1), (0, 0), (1, 0)), 0)
        self.assertEqual(menger_curvature((0, 0), (1, 1), (2, 2)), 0.0)

    def test_constant_curve_stops_after_p(self):
        # the first corner needs four points, so the p stagnant iterations are counted from k = 4
        rule = LCurveRule(p=5)
        decision = None
        for k in range(1, 20):
            decision = rule.update(k, 1.0, 1.0)
            if decision is not None:
                break
        self.assertEqual(decision.stop_iteration, 9)
        self.assertEqual(decision.selected_iteration, 2)
        self.assertTrue(decision.flags["low_confidence"])


class TestNcp(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_v_shaped_distances(self):
        rule = NcpRule((4, 4), p=5)
        decision = None
        for k in range(1, 30):
            decision = rule.update(k, abs(k - 7) + 1.0)
            if decision is not None:
                break
        self.assertEqual(decision.stop_iteration, 12)
        self.assertEqual(decision.selected_iteration, 7)

    def test_vector_length_and_range(self):
        R = self.rng.standard_normal((8, 8))
        c = ncp_vector(R).c
        self.assertEqual(c.size, 24)
        self.assertEqual(ncp_vector(R, include_dc=True).c.size, 25)
        self.assertAlmostEqual(c[-1], 1.0)
        self.assertTrue(np.all(np.diff(c) >= 0))

    def test_zero_residual_is_degenerate(self):
        result = ncp_vector(np.zeros((6, 6)))
        self.assertTrue(result.degenerate)
        self.assertEqual(ncp_distance(result.c), 0.0)

    def test_white_scores_below_low_pass(self):
        blur = Blur2dOperator(gaussian_psf(2.0), (32, 32), "periodic")
        wins = 0
        for _ in range(100):
            white = self.rng.standard_normal((32, 32))
            smooth = unvec(blur.matvec(vec(self.rng.standard_normal((32, 32)))), 32, 32)
            wins += int(ncp_distance(ncp_vector(white).c) < ncp_distance(ncp_vector(smooth).c))
        self.assertGreaterEqual(wins, 95)


class TestDiscrepancy(unittest.TestCase):

    def test_threshold(self):
        rule = DiscrepancyRule(noise_std=1.0, m=9, tau=1.0)
        decisions = [rule.update(k, r) for k, r in enumerate([10, 5, 3, 2.9], start=1)]
        self.assertIsNone(decisions[1])
        self.assertEqual(decisions[2].stop_iteration, 3)
        self.assertEqual(decisions[2].selected_iteration, 3)

    def test_negative_std(self):
        with self.assertRaises(ValueError):
            DiscrepancyRule(-1.0, 4)


class TestSharedRun(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(2)
        self.X = procedural_image(16, 16)
        self.A = Blur2dOperator(gaussian_psf(1.5), (16, 16), "zero")
        b_true = self.A.matvec(vec(self.X))
        self.s = 0.01 * np.max(np.abs(b_true))
        self.b = b_true + self.s * rng.standard_normal(b_true.size)
        self.B = unvec(self.b, 16, 16)

    def _rules(self):
        return [DfRule.from_image(self.B, "hyperbolic"), DfRule.from_image(self.B, "elliptic"), LCurveRule(),
                NcpRule((16, 16)), DiscrepancyRule(self.s, 256)]

    def test_all_rules_decide(self):
        run = run_stopping_rules(self.A, self.b, self._rules(), 40)
        self.assertEqual(set(run.decisions), {"df-hyperbolic", "df-elliptic", "lcurve", "ncp", "discrepancy"})
        for decision in run.decisions.values():
            self.assertGreaterEqual(decision.selected_iteration, 1)
            self.assertLessEqual(decision.selected_iteration, decision.stop_iteration)
            self.assertLessEqual(decision.stop_iteration, 40)

    def test_solution_matches_standalone_run(self):
        run = run_stopping_rules(self.A, self.b, self._rules(), 40)
        k = run.decisions["df-hyperbolic"].selected_iteration
        expected = pls_solve(gkb_run(self.A, self.b, k)).x
        assert_allclose(run.solution("df-hyperbolic"), expected, rtol=1e-8, atol=1e-10)

    def test_run_to_k_max(self):
        run = run_stopping_rules(self.A, self.b, [LCurveRule()], 25, run_to_k_max=True)
        self.assertEqual(run.fac.k, 25)
        self.assertEqual(sorted(run.coefficients), list(range(1, 26)))

    def test_df_observe_matches_definition(self):
        rule = DfRule.from_image(self.B, "hyperbolic")
        run = run_stopping_rules(self.A, self.b, [rule], 10, run_to_k_max=True)
        k, f = rule.trace[2]
        x = run.solution_at(k)
        self.assertAlmostEqual(f, float(np.sum((rule.b_hat - self.A.matvec(x)) ** 2)), places=8)

    def test_df_decision_is_scale_invariant(self):
        decisions = []
        for c in (1.0, 8.0):
            rule = DfRule.from_image(c * self.B, "hyperbolic")
            decisions.append(run_stopping_rules(self.A, c * self.b, [rule], 40).decisions["df-hyperbolic"])
        self.assertEqual(decisions[0].stop_iteration, decisions[1].stop_iteration)
        self.assertEqual(decisions[0].selected_iteration, decisions[1].selected_iteration)
        assert_allclose([64.0 * f for _, f in decisions[0].trace], [f for _, f in decisions[1].trace], rtol=1e-12)

    def test_duplicate_names_rejected(self):
        with self.assertRaises(ValueError):
            run_stopping_rules(self.A, self.b, [LCurveRule(), LCurveRule()], 5)

    def test_breakdown_reason(self):
        A = DenseOperator(np.diag([1.0, 2.0, 0.0]))
        run = run_stopping_rules(A, np.array([1.0, 1.0, 0.0]), [LCurveRule()], 3)
        self.assertTrue(run.fac.breakdown)
        self.assertEqual(run.decisions["lcurve"].reason, "breakdown")


class TestTrace(unittest.TestCase):

    def test_csv(self):
        decision = StoppingDecision("df", 2, 1, "leveled-off", [(1, 0.5), (2, 0.25)])
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "trace.csv")
            write_trace_csv(path, decision)
            with open(path) as f:
                rows = list(csv.reader(f))
        self.assertEqual(rows, [["k", "criterion_value"], ["1", "0.5"], ["2", "0.25"]])

    def test_to_dict(self):
        decision = StoppingDecision("ncp", 12, 7, "minimum-found", flags={"degenerate": False})
        self.assertEqual(decision.to_dict()["selected_iteration"], 7)
        self.assertNotIn("trace", decision.to_dict())


if __name__ == "__main__":
    unittest.main()
