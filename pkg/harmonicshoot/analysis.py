"""Winding numbers, the linearized angle equation, the limiting profile and reflections.

Angles are measured on the reflected profile phi(y) = r(-y) - pi/2, which solves the
equation of the swapped pair. theta is the continuous lift of the angle of (phi, phi') and
the winding number is Omega = -(theta(inf) - theta(-d+)) / pi.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import config, state
from .coefficients import MultPair, alpha, constants
from .errors import DomainError, NoSettle, NoTransition, NumericalError, UndefinedLift
from .integrator import (
    Event,
    EventKind,
    IntegratorControls,
    OdeStateX,
    TerminationCause,
    Trajectory,
    TrajectorySegment,
    level_value,
    ode_residual,
    sample_block,
    scan_crossings,
)
from .shooting import BvpSolution, ShotOutcome, brouwer_degree, nodal_transition, shoot, solve_bvp

log = logging.getLogger("Analysis")

HALF_PI = 0.5 * math.pi
_LIFT_STEP = 0.05
_LIFT_BLOCK = 20.0
_MAX_REFINE = 30


@dataclass(frozen=True)
class WindingReport:
    pair: MultPair
    v: float
    theta_start: float
    theta_end: float
    omega: float
    nodal: int | None = None
    x_start: float = math.nan
    substituted_start: bool = False
    settled: bool = True
    path: tuple = field(default=(), compare=False, repr=False)

    @property
    def consistent(self):
        if self.nodal is None:
            return True
        return abs(math.floor(self.omega) - self.nodal) <= 1

    def to_dict(self):
        return {
            "pair": self.pair.to_json(),
            "v": self.v,
            "theta_start": self.theta_start,
            "theta_end": self.theta_end,
            "omega": self.omega,
            "nodal": self.nodal,
            "x_start": self.x_start,
            "substituted_start": self.substituted_start,
            "settled": self.settled,
            "consistent": self.consistent,
        }


def _phi_angles(traj, xs):
    r, rp = traj.states_at(xs)
    phi = r - HALF_PI
    dphi = -rp
    if np.any(np.hypot(phi, dphi) == 0.0):
        raise UndefinedLift(f"phi and phi' vanish together for {traj.pair} v={traj.v!r}")
    return np.arctan2(dphi, phi)


def _refined_lift(traj, xs):
    """Insert midpoints until no wrapped step of the angle exceeds pi/2."""
    angles = _phi_angles(traj, xs)
    for _ in range(_MAX_REFINE):
        steps = np.abs(np.angle(np.exp(1j * np.diff(angles))))
        bad = np.nonzero(steps >= HALF_PI)[0]
        if bad.size == 0:
            return xs, np.unwrap(angles)
        mids = 0.5 * (xs[bad] + xs[bad + 1])
        xs = np.insert(xs, bad + 1, mids)
        angles = np.insert(angles, bad + 1, _phi_angles(traj, mids))
    raise UndefinedLift(f"Angle of phi does not resolve for {traj.pair} v={traj.v!r}")


def winding_from_trajectory(traj, nodal=None):
    """Winding report of the angle lift of phi, starting at x = d+ and running to x -> -inf."""
    pair = traj.pair
    consts = constants(pair)
    x_right = consts.d_plus
    substituted = False
    if traj.x_end < x_right:
        log.warning("Trajectory %s v=%r ends at x=%.6g left of d+=%.6g; starting there",
                    pair, traj.v, traj.x_end, x_right)
        state.add_flag(
            "substituted_winding_start", f"x_end {traj.x_end!r} < d+ {x_right!r}",
            pair=pair.to_json(), v=traj.v,
        )
        x_right = traj.x_end
        substituted = True

    settle = config.THETA_SETTLE
    x_floor = x_right - config.THETA_X_SPAN
    xs_all = np.array([x_right])
    th_all = np.unwrap(_phi_angles(traj, xs_all))
    settled = False
    x_hi = x_right
    while not settled and x_hi > x_floor:
        x_lo = max(x_hi - _LIFT_BLOCK, x_floor)
        n = max(2, int(math.ceil((x_hi - x_lo) / _LIFT_STEP)) + 1)
        block = np.linspace(x_hi, x_lo, n)
        block_x, block_th = _refined_lift(traj, block)
        block_th = block_th - block_th[0] + th_all[-1]
        xs_all = np.concatenate([xs_all, block_x[1:]])
        th_all = np.concatenate([th_all, block_th[1:]])
        x_hi = x_lo
        tail = xs_all >= x_hi
        tail &= xs_all <= x_hi + config.THETA_SETTLE_WINDOW
        if np.count_nonzero(tail) > 1:
            rate = np.abs(np.diff(th_all[tail]) / np.diff(xs_all[tail]))
            settled = bool(np.max(rate) < settle)
    if not settled:
        log.warning("Angle of %s v=%r not settled by x=%.4g", pair, traj.v, x_hi)

    theta_start = float(th_all[0])
    theta_end = float(th_all[-1])
    omega = -(theta_end - theta_start) / math.pi
    return WindingReport(
        pair=pair,
        v=traj.v,
        theta_start=theta_start,
        theta_end=theta_end,
        omega=omega,
        nodal=nodal,
        x_start=x_right,
        substituted_start=substituted,
        settled=settled,
        path=(xs_all, th_all),
    )


def winding_from_outcome(outcome):
    if outcome.degenerate or outcome.trajectory is None:
        raise UndefinedLift(f"Shot {outcome.pair} v={outcome.v!r} is constant; no angle")
    return winding_from_trajectory(outcome.trajectory, outcome.nodal)


def winding(pair, v, controls=None):
    return winding_from_outcome(shoot(pair, v, controls))


def _theta_rhs(pair):
    swapped = pair.swapped()
    m0 = pair.m0

    def fun(y, theta):
        s = math.sin(theta[0])
        c = math.cos(theta[0])
        return [-s * s + float(alpha(swapped, y)) * s * c - m0 * c * c]

    return fun


def linearized_theta(pair, theta_init, x_init, controls=None):
    """Limit of the linearized angle equation started at (x_init, theta_init)."""
    fun = _theta_rhs(pair)
    window = config.THETA_SETTLE_WINDOW
    x_stop = x_init + config.THETA_X_SPAN
    theta = float(theta_init)
    x = float(x_init)
    while x < x_stop:
        x_next = min(x + window, x_stop)
        sol = solve_ivp(fun, (x, x_next), [theta], method="DOP853", rtol=1e-12, atol=1e-14,
                        dense_output=True)
        if not sol.success:
            raise NumericalError(f"Angle integration failed for {pair}: {sol.message}")
        grid = np.linspace(x, x_next, 51)
        rates = np.array([fun(y, sol.sol(y))[0] for y in grid])
        theta = float(sol.y[0, -1])
        if np.max(np.abs(rates)) < config.THETA_SETTLE:
            log.debug("Linearized angle for %s settled at x=%.4g: %.15g", pair, x_next, theta)
            return theta
        x = x_next
    raise NoSettle(f"Linearized angle for {pair} not settled by x={x_stop:.4g}")


def linearized_theta_path(pair, theta_init, x_init, xs):
    xs = np.asarray(xs, dtype=float)
    sol = solve_ivp(_theta_rhs(pair), (x_init, float(xs[-1])), [float(theta_init)],
                    method="DOP853", rtol=1e-12, atol=1e-14, t_eval=xs)
    if not sol.success:
        raise NumericalError(f"Angle integration failed for {pair}: {sol.message}")
    return sol.y[0]


@dataclass(frozen=True)
class ComparisonReport:
    pair: MultPair
    v: float
    max_violation: float
    omega_v: float
    omega_l: float
    tolerance: float

    @property
    def ok(self):
        return self.max_violation <= self.tolerance and self.omega_v <= self.omega_l + self.tolerance

    def to_dict(self):
        return {
            "pair": self.pair.to_json(),
            "v": self.v,
            "max_violation": self.max_violation,
            "omega_v": self.omega_v,
            "omega_l": self.omega_l,
            "ok": self.ok,
        }


def comparison_check(pair, v, controls=None):
    """Co-integrate the linearized angle from the shot's angle at -d+ and compare."""
    if pair.m0 < 6:
        log.warning("Angle comparison for %s is only guaranteed for m0 >= 6", pair)
    report = winding(pair, v, controls)
    xs, thetas = report.path
    ys = -xs
    theta_l = linearized_theta_path(pair, report.theta_start, ys[0], ys)
    violation = float(np.max(theta_l - thetas))
    limit_l = linearized_theta(pair, report.theta_start, ys[0])
    omega_l = -(limit_l - report.theta_start) / math.pi
    return ComparisonReport(pair, float(v), max(violation, 0.0), report.omega, omega_l,
                            config.COMPARISON_TOL)


def nodal_upper_bound(pair):
    """Upper bound on the nodal number of every shot of a pair with m0 >= 6."""
    m0, m1 = pair.m0, pair.m1
    if m0 < 6:
        raise DomainError(f"Nodal bound requires m0 >= 6, got {pair}")
    arg = (4.0 * math.sqrt(m0) + m1 - m0) / (m0 + m1 - 2)
    if not -1.0 < arg < 1.0:
        raise DomainError(f"Nodal bound for {pair}: artanh argument {arg!r} outside (-1, 1)")
    x0 = math.atanh(arg)
    l1 = -0.5 * (2 * m0 + m1 + 1)
    d_plus = constants(pair).d_plus
    return 3.0 - (x0 + d_plus) * l1 / math.pi


@dataclass(frozen=True)
class PlateauReport:
    pair: MultPair
    max_nodal: int
    bound: float
    v_top: float
    transition: tuple | None = None

    @property
    def ok(self):
        return self.max_nodal <= self.bound and self.transition is None

    def to_dict(self):
        return {
            "pair": self.pair.to_json(),
            "max_nodal": self.max_nodal,
            "bound": self.bound,
            "v_top": self.v_top,
            "transition": None if self.transition is None else list(self.transition),
            "ok": self.ok,
        }


def nodal_plateau_check(pair, rows, controls=None):
    """Largest nodal count of sweep rows against the bound; no transition may lie above it."""
    bound = nodal_upper_bound(pair)
    counted = [row for row in rows if row.get("nodal") is not None]
    if not counted:
        raise NumericalError(f"No classified shot among {len(rows)} sweep rows for {pair}")
    max_nodal = max(row["nodal"] for row in counted)
    v_top = max(row["v"] for row in counted)
    try:
        bracket = nodal_transition(pair, max_nodal, v_seed=v_top, controls=controls)
    except NoTransition:
        log.info("Nodal count of %s stays at most %d up to v=%.3g", pair, max_nodal,
                 config.V_CEILING)
        transition = None
    else:
        log.warning("Nodal count of %s exceeds %d in [%.17g, %.17g]", pair, max_nodal,
                    bracket.v_lo, bracket.v_hi)
        transition = (bracket.v_lo, bracket.v_hi)
    return PlateauReport(pair, max_nodal, bound, v_top, transition)


@dataclass(frozen=True)
class LimitProfile:
    m0: int
    samples: np.ndarray = field(compare=False, repr=False)
    tail_value: float = math.nan
    x_start: float = math.nan
    x_end: float = math.nan

    @property
    def ok(self):
        return abs(self.tail_value) < config.LIMIT_TAIL_TOL

    def to_dict(self):
        return {
            "m0": self.m0,
            "x_start": self.x_start,
            "x_end": self.x_end,
            "tail_value": self.tail_value,
            "ok": self.ok,
        }


def limit_profile(m0, controls=None, x_start=None, x_end=None):
    """psi'' + (m0 - 1) psi' + m0 sin(2 psi) / 2 = 0 with psi ~ -pi/2 + e^x at -inf."""
    if isinstance(m0, bool) or int(m0) != m0 or m0 < 2:
        raise DomainError(f"Limit profile needs an integer m0 >= 2, got {m0!r}")
    m0 = int(m0)
    controls = controls or IntegratorControls.from_settings()
    x_start = config.LIMIT_X_START if x_start is None else float(x_start)
    x_end = config.LIMIT_X_END if x_end is None else float(x_end)
    if not x_start < x_end:
        raise DomainError(f"Limit profile needs x_start < x_end, got {x_start!r}, {x_end!r}")

    def fun(x, y):
        return [y[1], -(m0 - 1) * y[1] - 0.5 * m0 * math.sin(2.0 * y[0])]

    def escaped(x, y):
        return math.pi - abs(y[0])

    escaped.terminal = True
    seed = math.exp(x_start)
    xs = np.linspace(x_start, x_end, int(math.ceil((x_end - x_start) / 0.1)) + 1)
    sol = solve_ivp(fun, (x_start, x_end), [-HALF_PI + seed, seed], method="DOP853",
                    rtol=min(controls.rel_tol, 1e-12), atol=min(controls.abs_tol, 1e-14),
                    t_eval=xs, events=escaped)
    if not sol.success:
        raise NumericalError(f"Limit profile for m0={m0} failed: {sol.message}")
    if sol.t_events[0].size:
        raise NumericalError(
            f"Limit profile for m0={m0} left [-pi, pi] at x={sol.t_events[0][0]:.6g}"
        )
    samples = np.column_stack([sol.t, sol.y[0], sol.y[1]])
    samples.setflags(write=False)
    tail = float(sol.y[0, -1])
    if 2 <= m0 <= 5 and abs(tail) >= config.LIMIT_TAIL_TOL:
        log.warning("Limit profile for m0=%d ends at %.3e", m0, tail)
    return LimitProfile(m0, samples, tail, x_start, x_end)


def rho(pair, trajectory, x):
    """Distance of (r, r') from (pi/2, 0); vectorized over x."""
    if trajectory.pair != pair:
        raise DomainError(f"Trajectory belongs to {trajectory.pair}, not {pair}")
    if np.ndim(x) == 0:
        r, rp = trajectory.state_at(x)
        return math.hypot(r - HALF_PI, rp)
    r, rp = trajectory.states_at(x)
    return np.hypot(r - HALF_PI, rp)


@dataclass(frozen=True)
class ConvergenceReport:
    rows: tuple = ()
    decreasing: bool | None = None
    eventually_below: bool | None = None

    @property
    def ok(self):
        return self.decreasing is not False and self.eventually_below is not False

    def to_dict(self):
        return {
            "rows": list(self.rows),
            "decreasing": self.decreasing,
            "eventually_below": self.eventually_below,
            "ok": self.ok,
        }


def limiting_convergence_check(solutions, t_interval=(0.3, 1.2), eps=0.1):
    """sup of rho over the x-image of ``t_interval`` for solutions ordered by v."""
    solutions = sorted(solutions, key=lambda s: s.v)
    if not solutions:
        return ConvergenceReport()
    pairs = {s.pair for s in solutions}
    if len(pairs) != 1:
        raise DomainError(f"Solutions mix pairs {sorted(pairs)}")
    t0, t1 = t_interval
    if not 0.0 < t0 < t1 < HALF_PI:
        raise DomainError(f"Interval must satisfy 0 < t0 < t1 < pi/2, got {t_interval!r}")
    xs = np.log(np.tan(np.linspace(t0, t1, 401)))
    rows = []
    for sol in solutions:
        sup = float(np.max(rho(sol.pair, sol.trajectory, xs)))
        rows.append({"v": sol.v, "nodal": sol.nodal, "sup_rho": sup})
    sups = [row["sup_rho"] for row in rows]
    decreasing = all(b < a for a, b in zip(sups[:-1], sups[1:]))
    return ConvergenceReport(tuple(rows), decreasing, sups[-1] < eps)


def _reflected_segment(seg, top):
    def evaluate(x):
        r, rp = seg.evaluate(-np.asarray(x, dtype=float))
        return top - r, rp

    knots = -np.asarray(seg.knots, dtype=float)[::-1]
    return TrajectorySegment(f"reflected_{seg.kind}", -seg.x_hi, -seg.x_lo, evaluate, knots)


def reflect_mm(solution, k):
    """Reflection x -> (2k+1) pi/2 - r(-x) of a solution of an (m, m) problem."""
    pair = solution.pair
    if pair.m0 != pair.m1:
        raise DomainError(f"Reflection requires m0 = m1, got {pair}")
    traj = solution.trajectory
    if traj is None or traj.match is None:
        raise DomainError(f"Solution {pair} v={solution.v!r} has no matched bounded branch")
    k = int(k)
    top = level_value(k)
    controls = IntegratorControls.from_settings()
    if k != solution.ell:
        log.warning("Reflection of %s with k=%d != ell=%d starts at %s", pair, k, solution.ell,
                    f"{k - solution.ell}*pi")
        state.add_flag("boundary_shift", f"k={k}, ell={solution.ell}", pair=pair.to_json())

    xs = -traj.x[::-1]
    rs = top - traj.r[::-1]
    rps = traj.r_prime[::-1].copy()

    # the series start of r continues s to the right
    v_r = traj.v
    x_box = math.log(max(abs(v_r), 1.0) / controls.eps_conv) + 1.0
    x_stop = max(xs[-1], x_box) + controls.x_window
    extra = xs[-1] + 0.25 * np.arange(1, int(math.ceil((x_stop - xs[-1]) / 0.25)) + 1)
    er, erp = traj.states_at(-extra)
    xs = np.concatenate([xs, extra])
    rs = np.concatenate([rs, top - er])
    rps = np.concatenate([rps, erp])

    segments = tuple(_reflected_segment(seg, top) for seg in reversed(traj.segments))
    samples = sample_block(pair, xs, rs, rps)
    samples.setflags(write=False)
    s_traj = Trajectory(
        pair=pair,
        v=-traj.match.w,
        samples=samples,
        events=(),
        termination=TerminationCause.converged(k),
        x_end=float(xs[-1]),
        segments=segments,
    )

    def evaluate(x):
        return s_traj.state_at(x)

    events = scan_crossings(evaluate, xs, rs, rps, controls.event_tol)
    inside = (np.abs(rs - top) < controls.eps_conv) & (np.abs(rps) < controls.eps_conv)
    outside = np.nonzero(~inside)[0]
    first = 0 if outside.size == 0 else min(outside[-1] + 1, len(xs) - 1)
    events.append(
        Event(EventKind.CONVERGENCE_WINDOW, float(xs[first]),
              OdeStateX(float(xs[first]), float(rs[first]), float(rps[first])), k, 0)
    )
    s_traj = Trajectory(
        pair=pair,
        v=s_traj.v,
        samples=samples,
        events=tuple(sorted(events, key=lambda e: e.x)),
        termination=s_traj.termination,
        x_end=s_traj.x_end,
        segments=segments,
    )

    residual = ode_residual(pair, s_traj)
    if residual > config.REFLECT_RESIDUAL_TOL:
        log.warning("Reflection of %s v=%r has residual %.3e", pair, solution.v, residual)
    crossings = tuple(s_traj.crossings())
    outcome = ShotOutcome(
        pair=pair,
        v=s_traj.v,
        fate=s_traj.termination,
        nodal=sum(1 for e in crossings if e.level == 0),
        crossings=crossings,
        ell=k,
        trajectory=s_traj,
    )
    flags = ("boundary_shift",) if k != solution.ell else ()
    return BvpSolution(
        outcome=outcome,
        v_bracket=(outcome.v, outcome.v),
        degree=brouwer_degree(k, pair),
        trajectory=s_traj,
        flags=flags,
        mismatch=solution.mismatch,
        residual=residual,
    )


@dataclass(frozen=True)
class RobustnessReport:
    pair: MultPair
    k: int
    base: dict
    tight: dict
    v_shift: float
    omega_shift: float
    tolerance: float

    @property
    def ok(self):
        if self.base != self.tight or not self.v_shift <= self.tolerance:
            return False
        return math.isnan(self.omega_shift) or self.omega_shift <= self.tolerance

    def to_dict(self):
        return {
            "pair": self.pair.to_json(),
            "k": self.k,
            "base": dict(self.base),
            "tight": dict(self.tight),
            "v_shift": self.v_shift,
            "omega_shift": self.omega_shift,
            "ok": self.ok,
        }


def _integer_outputs(solution):
    return {
        "fate": solution.outcome.fate_label,
        "nodal": solution.nodal,
        "ell": solution.ell,
        "degree": solution.degree,
    }


def _omega_or_nan(solution):
    try:
        return winding_from_outcome(solution.outcome).omega
    except NumericalError:
        return math.nan


def tightened_resolve_check(solution, k, controls=None, factor=10.0):
    """Solve again with tolerances tightened by ``factor`` and compare the outputs.

    Fates, nodal numbers, boundary levels and degrees must agree; the slope may move by
    ROBUST_TOL relative to max(1, |v|) and the winding number by ROBUST_TOL.
    """
    controls = controls or IntegratorControls.from_settings()
    tight = solve_bvp(solution.pair, k, controls.tightened(factor))
    v_shift = abs(tight.v - solution.v) / max(1.0, abs(solution.v))
    omega_shift = abs(_omega_or_nan(tight) - _omega_or_nan(solution))
    report = RobustnessReport(
        solution.pair, int(k), _integer_outputs(solution), _integer_outputs(tight),
        v_shift, omega_shift, config.ROBUST_TOL,
    )
    if not report.ok:
        log.warning("Re-solve of %s k=%d at tolerances / %g changed the outputs: %s -> %s, "
                    "v shift %.3e", solution.pair, k, factor, report.base, report.tight, v_shift)
    return report
