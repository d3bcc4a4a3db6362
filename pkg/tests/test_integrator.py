import math
import unittest
from unittest.mock import patch

import numpy as np

from harmonicshoot.coefficients import MultPair, beta
from harmonicshoot.errors import DomainError, StepFailure
from harmonicshoot.integrator import (
    EventKind,
    Fate,
    IntegratorControls,
    OdeStateX,
    TerminationCause,
    _crossed_levels,
    _monotone_pieces,
    _refine_crossings,
    derivative_bound_check,
    integrate,
    level_value,
    lyapunov_check,
    nearest_level,
    ode_residual,
    rhs,
    w_limit_check,
)


def identity_start(x):
    return OdeStateX(x, math.atan(math.exp(x)), math.exp(x) / (1.0 + math.exp(2.0 * x)))


class TestIntegratorBasics(unittest.TestCase):

    def test_rhs(self):
        state = OdeStateX(0.0, math.pi / 4, 1.0)
        self.assertAlmostEqual(rhs(MultPair(2, 4), state), 0.5)

    def test_controls_validation(self):
        with self.assertRaises(DomainError):
            IntegratorControls.from_settings(rel_tol=-1.0)
        with self.assertRaises(DomainError):
            IntegratorControls.from_settings(x_max=math.inf)
        with self.assertRaises(DomainError):
            IntegratorControls.from_settings(handoff_t=0.5)
        controls = IntegratorControls.from_settings(rel_tol=None)
        self.assertEqual(controls.rel_tol, 1e-10)

    def test_tightened_controls(self):
        controls = IntegratorControls.from_settings()
        tight = controls.tightened()
        self.assertAlmostEqual(tight.rel_tol, controls.rel_tol / 10.0)
        self.assertAlmostEqual(tight.abs_tol, controls.abs_tol / 10.0)
        self.assertEqual(tight.eps_conv, controls.eps_conv)
        self.assertEqual(controls.with_x_max(30).x_max, 30.0)

    def test_termination_labels(self):
        self.assertEqual(TerminationCause.converged(2).label, "Converged(2)")
        self.assertEqual(TerminationCause.blow_up(1).label, "BlowUpPlus")
        self.assertEqual(str(TerminationCause.blow_up(-1)), "BlowUpMinus")
        self.assertTrue(TerminationCause.blow_up(-1).is_blow_up)
        self.assertFalse(TerminationCause(Fate.REACHED_X_MAX).is_converged)

    def test_levels(self):
        self.assertEqual(_crossed_levels(0.0, 5.0), [0, 1])
        self.assertEqual(_crossed_levels(5.0, 0.0), [1, 0])
        self.assertEqual(_crossed_levels(1.0, 1.2), [])
        self.assertEqual(_crossed_levels(-2.0, 0.0), [-1])
        self.assertEqual(nearest_level(level_value(1) + 0.1), 1)
        self.assertEqual(nearest_level(-0.1), -1)
        self.assertAlmostEqual(level_value(-1), -math.pi / 2)

    def test_start_validation(self):
        pair = MultPair(2, 2)
        with self.assertRaises(DomainError):
            integrate(pair, OdeStateX(70.0, 1.0, 0.0))
        with self.assertRaises(DomainError):
            integrate(pair, OdeStateX(0.0, math.nan, 0.0))


class TestIdentityTrajectory(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.pair = MultPair(2, 2)
        cls.traj = integrate(cls.pair, identity_start(-5.0), v=1.0)

    def test_converges_to_level_zero(self):
        traj = self.traj
        self.assertEqual(traj.termination.label, "Converged(0)")
        self.assertTrue(traj.match.converged)
        self.assertAlmostEqual(traj.match.w, -1.0, places=6)
        self.assertEqual(traj.crossings(), [])
        windows = [e for e in traj.events if e.kind is EventKind.CONVERGENCE_WINDOW]
        self.assertEqual(len(windows), 1)
        self.assertAlmostEqual(traj.x_end, windows[0].x + 5.0)
        self.assertGreater(windows[0].x, 10.0)

    def test_follows_closed_form(self):
        xs = np.linspace(-5.0, 15.0, 81)
        r, rp = self.traj.states_at(xs)
        np.testing.assert_allclose(r, np.arctan(np.exp(xs)), atol=1e-7)
        np.testing.assert_allclose(rp, np.exp(xs) / (1.0 + np.exp(2 * xs)), atol=1e-7)
        r0, _ = self.traj.state_at(0.0)
        self.assertAlmostEqual(r0, math.pi / 4, places=7)

    def test_range_checks(self):
        with self.assertRaises(DomainError):
            self.traj.state_at(self.traj.x_end + 1.0)
        with self.assertRaises(DomainError):
            self.traj.states_at([0.0, -10.0])

    def test_samples_are_read_only(self):
        with self.assertRaises(ValueError):
            self.traj.samples[0, 1] = 0.0

    def test_lyapunov_columns(self):
        traj = self.traj
        np.testing.assert_allclose(
            traj.w_values - traj.v_values, beta(self.pair, traj.x), atol=1e-12
        )
        self.assertEqual(len(traj.to_rows()), traj.samples.shape[0])

    def test_checks(self):
        self.assertTrue(lyapunov_check(self.traj).ok)
        self.assertTrue(derivative_bound_check(self.traj).ok)
        self.assertTrue(derivative_bound_check(self.traj).applicable)
        w_report = w_limit_check(self.traj)
        self.assertTrue(w_report.ok)
        self.assertAlmostEqual(w_report.target, 1.0)
        self.assertLess(ode_residual(self.pair, self.traj), 1e-8)

    def test_window_beyond_x_max(self):
        controls = IntegratorControls.from_settings(x_max=10.0)
        traj = integrate(self.pair, identity_start(-5.0), controls, v=1.0)
        self.assertIs(traj.termination.fate, Fate.REACHED_X_MAX)
        self.assertFalse(w_limit_check(traj).applicable)
        self.assertFalse(derivative_bound_check(traj).applicable)


class TestBlowUp(unittest.TestCase):

    def test_derivative_trigger_then_crossing(self):
        pair = MultPair(2, 2)
        traj = integrate(pair, OdeStateX(2.0, math.pi / 2 + 0.3, 1.5))
        self.assertIs(traj.termination.fate, Fate.BLOW_UP_PLUS)
        triggers = [e for e in traj.events if e.kind is EventKind.DERIV_BLOWUP_TRIGGER]
        self.assertEqual(len(triggers), 1)
        self.assertEqual(triggers[0].direction, 1)
        crossings = traj.crossings(level=1)
        self.assertEqual(len(crossings), 1)
        self.assertAlmostEqual(crossings[0].state.r, 1.5 * math.pi, places=9)
        self.assertAlmostEqual(traj.x_end, crossings[0].x)

    def test_mirrored_start_blows_down(self):
        pair = MultPair(2, 2)
        traj = integrate(pair, OdeStateX(2.0, math.pi / 2 - 0.3, -1.5))
        self.assertIs(traj.termination.fate, Fate.BLOW_UP_MINUS)
        self.assertEqual(len(traj.crossings(level=-1)), 1)
        self.assertEqual(traj.crossings(level=-1)[0].direction, -1)

    def test_stripe_escape(self):
        pair = MultPair(4, 2)
        traj = integrate(pair, OdeStateX(3.0, math.pi / 2 - 0.2, 0.8))
        kinds = [e.kind for e in traj.events]
        self.assertIn(EventKind.STRIPE_ESCAPE, kinds)
        self.assertNotIn(EventKind.DERIV_BLOWUP_TRIGGER, kinds)
        self.assertIs(traj.termination.fate, Fate.BLOW_UP_PLUS)
        self.assertEqual(traj.crossings(level=0)[0].direction, 1)


class TestStepRefinement(unittest.TestCase):

    def test_extremum_splits_the_step(self):
        def parabola(x):
            return (x - 0.5) ** 2, 2.0 * (x - 0.5)

        pieces = _monotone_pieces(parabola, 0.0, 1.0, 0.25, 0.25, -1.0, 1.0, 1e-12)
        self.assertEqual(len(pieces), 2)
        self.assertAlmostEqual(pieces[0][1], 0.5, places=10)
        self.assertAlmostEqual(pieces[0][3], 0.0, places=10)

    def test_sampled_slopes_disagreeing_with_evaluator(self):
        def rising(x):
            return x, 1.0

        pieces = _monotone_pieces(rising, 0.0, 1.0, 0.0, 1.0, -1.0, 1.0, 1e-12)
        self.assertEqual(pieces, [(0.0, 1.0, 0.0, 1.0)])

    def test_crossing_outside_evaluator_range(self):
        def shifted(x):
            return x + 10.0, 1.0

        found = _refine_crossings(shifted, 0.0, 1.0, 0.0, 3.0, 1e-12)
        self.assertEqual([item[1] for item in found], [0])
        self.assertEqual(found[0][0], 0.0)

    def test_root_finder_errors_become_step_failures(self):
        pair = MultPair(2, 2)
        error = ValueError("f(a) and f(b) must have different signs")
        with patch("harmonicshoot.integrator._ForwardRun.run", side_effect=error):
            with self.assertRaises(StepFailure) as ctx:
                integrate(pair, identity_start(-5.0), v=1.0)
        self.assertIs(ctx.exception.__cause__, error)
        with patch("harmonicshoot.integrator._ForwardRun.run", side_effect=DomainError("bad")):
            with self.assertRaises(DomainError):
                integrate(pair, identity_start(-5.0), v=1.0)


if __name__ == '__main__':
    unittest.main()
