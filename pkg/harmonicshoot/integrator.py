"""Integration of the x-form equation r'' = alpha r' - beta sin 2r.

The forward run is stepped by hand with scipy's DOP853 so that every accepted step can be
inspected through its dense output: level crossings are refined on the interpolant, the
blow-up criteria are applied, and a fresh entry into a small box around a level arms the
bounded-branch match that certifies convergence.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy.integrate import DOP853, OdeSolution, solve_ivp
from scipy.optimize import brentq, newton

from . import config
from .coefficients import alpha, beta, constants
from .errors import DomainError, NumericalError, StepFailure
from .singular_ivp import HALF_PI, series_at_pi_half, series_state_at_x

log = logging.getLogger("Integrator")

TAIL_SPACING = 0.25


@dataclass(frozen=True)
class OdeStateX:
    x: float
    r: float
    r_prime: float

    def to_dict(self):
        return {"x": self.x, "r": self.r, "rp": self.r_prime}


class EventKind(Enum):
    HALF_PI_CROSS = "HalfPiCross"
    DERIV_BLOWUP_TRIGGER = "DerivBlowupTrigger"
    STRIPE_ESCAPE = "StripeEscape"
    CONVERGENCE_WINDOW = "ConvergenceWindow"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    x: float
    state: OdeStateX
    level: int | None = None
    direction: int = 0

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "x": self.x,
            "level": self.level,
            "direction": self.direction,
            "state": self.state.to_dict(),
        }


class Fate(Enum):
    CONVERGED = "Converged"
    BLOW_UP_PLUS = "BlowUpPlus"
    BLOW_UP_MINUS = "BlowUpMinus"
    REACHED_X_MAX = "ReachedXMax"
    STEP_FAILURE = "StepFailure"


@dataclass(frozen=True)
class TerminationCause:
    fate: Fate
    ell: int | None = None

    @classmethod
    def converged(cls, ell):
        return cls(Fate.CONVERGED, int(ell))

    @classmethod
    def blow_up(cls, direction):
        return cls(Fate.BLOW_UP_PLUS if direction > 0 else Fate.BLOW_UP_MINUS)

    @property
    def is_converged(self):
        return self.fate is Fate.CONVERGED

    @property
    def is_blow_up(self):
        return self.fate in (Fate.BLOW_UP_PLUS, Fate.BLOW_UP_MINUS)

    @property
    def label(self):
        if self.is_converged:
            return f"Converged({self.ell})"
        return self.fate.value

    def __str__(self):
        return self.label


@dataclass(frozen=True)
class IntegratorControls:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    eps_conv: float = 1e-6
    x_window: float = 5.0
    x_max: float = 60.0
    event_tol: float = 1e-12
    max_step: float = 0.25
    match_radius: float = 0.5
    series_order: int = 9
    handoff_t: float | None = None

    @classmethod
    def from_settings(cls, **overrides):
        values = {
            "rel_tol": config.REL_TOL,
            "abs_tol": config.ABS_TOL,
            "eps_conv": config.EPS_CONV,
            "x_window": config.X_WINDOW,
            "x_max": config.X_MAX,
            "event_tol": config.EVENT_TOL,
            "max_step": config.MAX_STEP,
            "match_radius": config.MATCH_RADIUS,
            "series_order": config.SERIES_ORDER,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        controls = cls(**values)
        controls.validate()
        return controls

    def validate(self):
        for name in ("rel_tol", "abs_tol", "eps_conv", "x_window", "event_tol", "max_step",
                     "match_radius"):
            value = getattr(self, name)
            if not value > 0 or not math.isfinite(value):
                raise DomainError(f"Control {name} must be positive, got {value!r}")
        if not math.isfinite(self.x_max):
            raise DomainError(f"x_max must be finite, got {self.x_max!r}")
        if self.handoff_t is not None and not 0.0 < self.handoff_t < 0.1:
            raise DomainError(f"handoff_t must lie in (0, 0.1), got {self.handoff_t!r}")
        return self

    def tightened(self, factor=10.0):
        return dataclasses.replace(
            self,
            rel_tol=self.rel_tol / factor,
            abs_tol=self.abs_tol / factor,
            event_tol=self.event_tol / factor,
        )

    def with_x_max(self, x_max):
        return dataclasses.replace(self, x_max=float(x_max))

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class TrajectorySegment:
    kind: str
    x_lo: float
    x_hi: float
    evaluate: Callable = field(compare=False, repr=False)
    knots: np.ndarray = field(compare=False, repr=False)

    def contains(self, x):
        return self.x_lo <= x <= self.x_hi


@dataclass(frozen=True)
class MatchInfo:
    x_joint: float
    level: int
    w: float
    mismatch: float
    x_branch: float
    converged: bool
    series: object = field(default=None, compare=False, repr=False)
    branch: object = field(default=None, compare=False, repr=False)

    def to_dict(self):
        return {
            "x_joint": self.x_joint,
            "level": self.level,
            "w": self.w,
            "mismatch": self.mismatch,
            "x_branch": self.x_branch,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class Trajectory:
    pair: object
    v: float
    samples: np.ndarray = field(compare=False, repr=False)
    events: tuple = ()
    termination: TerminationCause = TerminationCause(Fate.REACHED_X_MAX)
    x_end: float = math.nan
    segments: tuple = field(default=(), compare=False, repr=False)
    match: MatchInfo | None = field(default=None, compare=False)

    @property
    def x(self):
        return self.samples[:, 0]

    @property
    def r(self):
        return self.samples[:, 1]

    @property
    def r_prime(self):
        return self.samples[:, 2]

    @property
    def w_values(self):
        return self.samples[:, 3]

    @property
    def v_values(self):
        return self.samples[:, 4]

    @property
    def x_start(self):
        return float(self.samples[0, 0])

    @property
    def x_lo(self):
        return self.segments[0].x_lo if self.segments else self.x_start

    @property
    def joints(self):
        return [seg.x_hi for seg in self.segments[:-1]]

    def state_at(self, x):
        x = float(x)
        for seg in self.segments:
            if seg.contains(x):
                r, rp = seg.evaluate(x)
                return float(r), float(rp)
        raise DomainError(f"x={x!r} lies outside the trajectory range [{self.x_lo}, {self.x_end}]")

    def states_at(self, xs):
        xs = np.asarray(xs, dtype=float)
        r = np.full_like(xs, np.nan)
        rp = np.full_like(xs, np.nan)
        done = np.zeros(xs.shape, dtype=bool)
        for seg in self.segments:
            mask = ~done & (xs >= seg.x_lo) & (xs <= seg.x_hi)
            if np.any(mask):
                r[mask], rp[mask] = seg.evaluate(xs[mask])
                done |= mask
        if not np.all(done):
            bad = xs[~done]
            raise DomainError(
                f"x={float(bad[0])!r} lies outside the trajectory range [{self.x_lo}, {self.x_end}]"
            )
        return r, rp

    def crossings(self, level=None):
        return [
            e for e in self.events
            if e.kind is EventKind.HALF_PI_CROSS and (level is None or e.level == level)
        ]

    def with_prefix(self, segment):
        return dataclasses.replace(self, segments=(segment,) + tuple(self.segments))

    def to_rows(self):
        return [
            {"x": float(x), "r": float(r), "rp": float(rp), "w": float(w), "v": float(v)}
            for x, r, rp, w, v in self.samples
        ]


def lyapunov_w(pair, x, r, rp):
    return 0.5 * rp**2 + beta(pair, x) * np.sin(r) ** 2


def lyapunov_v(pair, x, r, rp):
    return 0.5 * rp**2 - beta(pair, x) * np.cos(r) ** 2


def sample_block(pair, xs, rs, rps):
    xs = np.asarray(xs, dtype=float)
    rs = np.asarray(rs, dtype=float)
    rps = np.asarray(rps, dtype=float)
    return np.column_stack(
        [xs, rs, rps, lyapunov_w(pair, xs, rs, rps), lyapunov_v(pair, xs, rs, rps)]
    )


def rhs(pair, state):
    return float(
        alpha(pair, state.x) * state.r_prime - beta(pair, state.x) * math.sin(2.0 * state.r)
    )


def vector_field(pair):
    a1 = 0.5 * (pair.m0 + pair.m1 - 2)
    a0 = 0.5 * (pair.m1 - pair.m0)
    b1 = 0.25 * (pair.m0 + pair.m1)
    b0 = 0.25 * (pair.m1 - pair.m0)

    def fun(x, y):
        th = math.tanh(x)
        return np.array([y[1], (a1 * th + a0) * y[1] - (b1 * th + b0) * math.sin(2.0 * y[0])])

    return fun


def level_value(level):
    return (2 * level + 1) * HALF_PI


def nearest_level(r):
    return int(round((r - HALF_PI) / math.pi))


def _crossed_levels(r0, r1):
    """Levels crossed going from r0 to r1, in the order they are met."""
    if r0 == r1:
        return []
    lo, hi = min(r0, r1), max(r0, r1)
    levels = []
    for level in range(math.ceil((lo - HALF_PI) / math.pi), math.floor((hi - HALF_PI) / math.pi) + 1):
        d0 = r0 - level_value(level)
        d1 = r1 - level_value(level)
        if (d0 < 0.0 <= d1) or (d0 > 0.0 >= d1):
            levels.append(level)
    return levels if r1 > r0 else levels[::-1]


def _solution_evaluator(sol):
    def evaluate(x):
        y = sol(x)
        return y[0], y[1]

    return evaluate


def series_evaluator(series):
    def evaluate(x):
        return series_state_at_x(series, x)

    return evaluate


def _monotone_pieces(evaluate, xa, xb, ra, rb, rpa, rpb, tol):
    """Split [xa, xb] at an interior extremum of r so that r is monotone on each piece."""
    if rpa * rpb >= 0.0:
        return [(xa, xb, ra, rb)]

    def slope(x):
        return float(evaluate(x)[1])

    # the evaluator decides the bracket; sampled slopes may come from another solution
    if slope(xa) * slope(xb) >= 0.0:
        return [(xa, xb, ra, rb)]
    xe = brentq(slope, xa, xb, xtol=tol)
    if not xa < xe < xb:
        return [(xa, xb, ra, rb)]
    re = float(evaluate(xe)[0])
    return [(xa, xe, ra, re), (xe, xb, re, rb)]


def _refine_crossings(evaluate, xa, xb, ra, rb, tol):
    found = []
    for level in _crossed_levels(ra, rb):
        target = level_value(level)

        def gap(x, target=target):
            return float(evaluate(x)[0]) - target

        if rb == target:
            xc = xb
        else:
            ga, gb = gap(xa), gap(xb)
            if gb == 0.0:
                xc = xb
            elif ga * gb > 0.0:
                xc = xa if abs(ga) < abs(gb) else xb
            else:
                xc = brentq(gap, xa, xb, xtol=tol)
        r, rp = evaluate(xc)
        found.append((xc, level, 1 if rb > ra else -1, OdeStateX(float(xc), float(r), float(rp))))
    return found


def scan_crossings(evaluate, xs, rs, rps, tol):
    """HalfPiCross events along a sampled path with a dense evaluator."""
    events = []
    for i in range(len(xs) - 1):
        for xa, xb, ra, rb in _monotone_pieces(
            evaluate, xs[i], xs[i + 1], rs[i], rs[i + 1], rps[i], rps[i + 1], tol
        ):
            for xc, level, direction, st in _refine_crossings(evaluate, xa, xb, ra, rb, tol):
                events.append(Event(EventKind.HALF_PI_CROSS, float(xc), st, level, direction))
    return events


def _branch_state(pair, level, w, x_joint, x_branch, controls):
    series = series_at_pi_half(pair, level, w, controls.series_order)
    if x_joint >= x_branch:
        r, rp = series_state_at_x(series, x_joint)
        return float(r), float(rp), series, None
    r0, rp0 = series_state_at_x(series, x_branch)
    sol = solve_ivp(
        vector_field(pair),
        (x_branch, x_joint),
        [float(r0), float(rp0)],
        method="DOP853",
        rtol=controls.rel_tol,
        atol=controls.abs_tol,
        max_step=controls.max_step,
        dense_output=True,
    )
    if not sol.success:
        raise StepFailure(f"Bounded branch integration failed for {pair}: {sol.message}")
    return float(sol.y[0, -1]), float(sol.y[1, -1]), series, sol


def match_bounded_branch(pair, x_joint, r_joint, rp_joint, controls, level=None):
    """Fit the bounded solution from t = pi/2 to the state at ``x_joint``.

    The slope w of the bounded branch is chosen so that r agrees at the joint; the returned
    mismatch is the difference of r' there.
    """
    level = nearest_level(r_joint) if level is None else int(level)
    u_joint = math.atan(math.exp(-x_joint))
    w0 = (r_joint - level_value(level)) / u_joint
    try:
        u_hand = series_at_pi_half(pair, level, w0, controls.series_order).validity_radius
    except NumericalError:
        u_hand = config.SERIES_T_MIN
    x_branch = -math.log(math.tan(u_hand))

    def gap(w):
        return _branch_state(pair, level, w, x_joint, x_branch, controls)[0] - r_joint

    step = max(1e-6, 1e-4 * abs(w0))
    try:
        w = float(newton(gap, w0, x1=w0 + step, tol=1e-13 * max(1.0, abs(w0)), maxiter=50))
        r_b, rp_b, series, sol = _branch_state(pair, level, w, x_joint, x_branch, controls)
    except (RuntimeError, OverflowError, ZeroDivisionError, NumericalError) as e:
        log.debug("No bounded branch at x=%.6g for %s: %s", x_joint, pair, e)
        return MatchInfo(x_joint, level, w0, math.inf, x_branch, False)

    mismatch = rp_b - rp_joint
    converged = (
        math.isfinite(mismatch)
        and abs(mismatch) < controls.eps_conv
        and abs(r_b - r_joint) < controls.eps_conv
    )
    log.debug(
        "Match at x=%.6g level %d: w=%.12g mismatch %.3e", x_joint, level, w, mismatch
    )
    return MatchInfo(x_joint, level, w, float(mismatch), x_branch, converged, series, sol)


class _ForwardRun:
    def __init__(self, pair, start, controls, v):
        self.pair = pair
        self.start = start
        self.controls = controls
        self.v = v
        self.consts = constants(pair)
        self.c = float(self.consts.c)
        self.big_b = self.consts.big_b
        self.d_plus = self.consts.d_plus
        self.x_gate = self.consts.x_gate
        self.fun = vector_field(pair)
        self.xs = [start.x]
        self.rs = [start.r]
        self.rps = [start.r_prime]
        self.ts = [start.x]
        self.interpolants = []
        self.events = []
        self.blow_direction = 0
        self.termination = None
        self.x_end = None
        self.match = None
        self.composite = None

    def run(self):
        controls = self.controls
        solver = DOP853(
            self.fun,
            self.start.x,
            [self.start.r, self.start.r_prime],
            t_bound=controls.x_max,
            rtol=controls.rel_tol,
            atol=controls.abs_tol,
            max_step=controls.max_step,
        )
        armed = True
        while self.termination is None:
            if solver.status == "finished":
                self.termination = TerminationCause(Fate.REACHED_X_MAX)
                self.x_end = self.xs[-1]
                break
            message = solver.step()
            if solver.status == "failed":
                log.error("Step failure for %s v=%r at x=%.6g: %s", self.pair, self.v, solver.t, message)
                self.termination = TerminationCause(Fate.STEP_FAILURE)
                self.x_end = self.xs[-1]
                break
            dense = solver.dense_output()
            self.ts.append(solver.t)
            self.interpolants.append(dense)
            if self._process_step(dense, solver.t_old, solver.t, solver.y):
                break
            x1, r1, rp1 = solver.t, float(solver.y[0]), float(solver.y[1])
            if x1 < self.x_gate or self.blow_direction:
                continue
            in_box = (
                abs(r1 - level_value(nearest_level(r1))) < controls.match_radius
                and abs(rp1) < controls.match_radius
            )
            if in_box and armed:
                info = match_bounded_branch(self.pair, x1, r1, rp1, controls)
                if info.converged:
                    self._accept_match(info)
                    break
                armed = False
            elif not in_box:
                armed = True
        return self._build()

    def _evaluate(self, dense):
        def evaluate(x):
            y = dense(x)
            return y[0], y[1]

        return evaluate

    def _process_step(self, dense, x0, x1, y1):
        """Record the events of one step; True when the run terminates inside it."""
        evaluate = self._evaluate(dense)
        tol = self.controls.event_tol
        r0, rp0 = self.rs[-1], self.rps[-1]
        r1, rp1 = float(y1[0]), float(y1[1])

        pending = []
        for xa, xb, ra, rb in _monotone_pieces(evaluate, x0, x1, r0, r1, rp0, rp1, tol):
            for xc, level, direction, st in _refine_crossings(evaluate, xa, xb, ra, rb, tol):
                pending.append((xc, 1, Event(EventKind.HALF_PI_CROSS, float(xc), st, level, direction)))

        if not self.blow_direction and x1 > self.c and abs(rp1) > self.big_b:
            direction = 1 if rp1 > 0 else -1
            x_lo = max(x0, self.c)
            target = direction * self.big_b

            def excess(x):
                return evaluate(x)[1] - target

            xt = x_lo if direction * excess(x_lo) > 0 else brentq(excess, x_lo, x1, xtol=tol)
            r, rp = evaluate(xt)
            st = OdeStateX(float(xt), float(r), float(rp))
            pending.append((xt, 0, Event(EventKind.DERIV_BLOWUP_TRIGGER, float(xt), st, None, direction)))

        pending.sort(key=lambda item: (item[0], item[1]))
        for xe, _, event in pending:
            self.events.append(event)
            if event.kind is EventKind.DERIV_BLOWUP_TRIGGER:
                self.blow_direction = event.direction
                log.debug("Derivative trigger at x=%.6g for %s v=%r", xe, self.pair, self.v)
                continue
            if self.blow_direction and event.direction == self.blow_direction:
                self._terminate(event, TerminationCause.blow_up(self.blow_direction))
                return True
            if xe > self.d_plus:
                self.events.append(
                    Event(EventKind.STRIPE_ESCAPE, event.x, event.state, event.level, event.direction)
                )
                self._terminate(event, TerminationCause.blow_up(event.direction))
                return True

        self.xs.append(x1)
        self.rs.append(r1)
        self.rps.append(rp1)
        return False

    def _terminate(self, event, cause):
        if event.x > self.xs[-1]:
            self.xs.append(event.x)
            self.rs.append(event.state.r)
            self.rps.append(event.state.r_prime)
        self.termination = cause
        self.x_end = event.x

    def _forward_segment(self):
        if len(self.ts) < 2:
            return None
        sol = OdeSolution(self.ts, self.interpolants)
        return TrajectorySegment(
            "forward", self.ts[0], self.xs[-1], _solution_evaluator(sol), np.asarray(self.xs)
        )

    def _accept_match(self, info):
        controls = self.controls
        level = info.level
        target = level_value(level)
        x_joint = info.x_joint

        parts_x = [np.asarray(self.xs)]
        parts_r = [np.asarray(self.rs)]
        parts_rp = [np.asarray(self.rps)]
        segments = []
        tail_start = x_joint
        if info.branch is not None:
            bx = info.branch.t[::-1][1:]
            by = info.branch.y[:, ::-1][:, 1:]
            branch_eval = _solution_evaluator(info.branch.sol)
            r_joint, rp_joint = branch_eval(x_joint)
            self.events.extend(
                scan_crossings(
                    branch_eval,
                    np.concatenate([[x_joint], bx]),
                    np.concatenate([[float(r_joint)], by[0]]),
                    np.concatenate([[float(rp_joint)], by[1]]),
                    controls.event_tol,
                )
            )
            parts_x.append(bx)
            parts_r.append(by[0])
            parts_rp.append(by[1])
            segments.append(
                TrajectorySegment(
                    "bounded_branch", x_joint, info.x_branch, branch_eval,
                    np.concatenate([[x_joint], bx]),
                )
            )
            tail_start = info.x_branch

        n_tail = max(1, int(math.ceil((controls.x_max - tail_start) / TAIL_SPACING)))
        tx = tail_start + TAIL_SPACING * np.arange(1, n_tail + 1)
        tx = tx[tx <= controls.x_max]
        tr, trp = series_state_at_x(info.series, tx)
        parts_x.append(tx)
        parts_r.append(np.asarray(tr, dtype=float))
        parts_rp.append(np.asarray(trp, dtype=float))

        xs = np.concatenate(parts_x)
        rs = np.concatenate(parts_r)
        rps = np.concatenate(parts_rp)

        eps = controls.eps_conv
        inside = (np.abs(rs - target) < eps) & (np.abs(rps) < eps) & (xs >= self.x_gate)
        x_box = None
        if inside.size and inside[-1]:
            outside = np.nonzero(~inside)[0]
            first = 0 if outside.size == 0 else outside[-1] + 1
            x_box = float(xs[first])

        tail_eval = series_evaluator(info.series)
        if x_box is None or x_box + controls.x_window > controls.x_max:
            log.debug("Window not reached before x_max for %s v=%r", self.pair, self.v)
            self.termination = TerminationCause(Fate.REACHED_X_MAX)
            x_end = float(xs[-1])
        else:
            x_end = x_box + controls.x_window
            keep = xs < x_end
            xs, rs, rps = xs[keep], rs[keep], rps[keep]
            r_end, rp_end = self._composite_state(x_end, segments, tail_eval, tail_start)
            xs = np.append(xs, x_end)
            rs = np.append(rs, float(r_end))
            rps = np.append(rps, float(rp_end))
            r_box, rp_box = self._composite_state(x_box, segments, tail_eval, tail_start)
            self.events.append(
                Event(
                    EventKind.CONVERGENCE_WINDOW,
                    x_box,
                    OdeStateX(x_box, float(r_box), float(rp_box)),
                    level,
                    0,
                )
            )
            self.termination = TerminationCause.converged(level)

        segments.append(
            TrajectorySegment(
                "series_tail", tail_start, max(x_end, tail_start), tail_eval,
                np.concatenate([[tail_start], tx[tx <= x_end]]),
            )
        )
        self.x_end = x_end
        self.match = info
        self.composite = (xs, rs, rps, segments)

    def _composite_state(self, x, segments, tail_eval, tail_start):
        if x <= self.xs[-1]:
            forward = self._forward_segment()
            if forward is None:
                return self.rs[-1], self.rps[-1]
            return forward.evaluate(x)
        for seg in segments:
            if seg.contains(x):
                return seg.evaluate(x)
        return tail_eval(x)

    def _build(self):
        forward = self._forward_segment()
        segments = [forward] if forward is not None else []
        if self.composite is not None:
            xs, rs, rps, extra = self.composite
            segments.extend(extra)
        else:
            xs, rs, rps = np.asarray(self.xs), np.asarray(self.rs), np.asarray(self.rps)
        samples = sample_block(self.pair, xs, rs, rps)
        samples.setflags(write=False)
        events = tuple(sorted(self.events, key=lambda e: e.x))
        return Trajectory(
            pair=self.pair,
            v=self.v,
            samples=samples,
            events=events,
            termination=self.termination,
            x_end=float(self.x_end),
            segments=tuple(segments),
            match=self.match,
        )


def integrate(pair, start, controls=None, v=math.nan):
    """Integrate from ``start`` and classify the fate of the trajectory."""
    controls = controls or IntegratorControls.from_settings()
    if not all(math.isfinite(value) for value in (start.x, start.r, start.r_prime)):
        raise DomainError(f"Start state must be finite, got {start}")
    if start.x >= controls.x_max:
        raise DomainError(f"Start x={start.x!r} is not below x_max={controls.x_max!r}")
    try:
        trajectory = _ForwardRun(pair, start, controls, v).run()
    except DomainError:
        raise
    except (ValueError, ArithmeticError) as e:
        log.exception("Integration of %s v=%r from x=%.4g failed", pair, v, start.x)
        raise StepFailure(f"Integration of {pair} v={v!r} failed: {e}") from e
    log.debug(
        "Integrated %s v=%r from x=%.4g: %s at x=%.6g",
        pair, v, start.x, trajectory.termination, trajectory.x_end,
    )
    return trajectory


@dataclass(frozen=True)
class LyapunovReport:
    w_violation: float
    v_violation: float
    tolerance: float
    w_samples: int
    v_samples: int

    @property
    def ok(self):
        return self.w_violation < self.tolerance and self.v_violation < self.tolerance

    def to_dict(self):
        return {
            "w_violation": self.w_violation,
            "v_violation": self.v_violation,
            "tolerance": self.tolerance,
            "w_samples": self.w_samples,
            "v_samples": self.v_samples,
            "ok": self.ok,
        }


def lyapunov_check(traj, tolerance=None):
    """W must not decrease right of z_alpha and V must not increase left of it."""
    if traj.samples.shape[0] == 0:
        raise DomainError("Lyapunov check needs a non-empty trajectory")
    tolerance = config.LYAPUNOV_TOL if tolerance is None else tolerance
    za = float(constants(traj.pair).z_alpha)
    x = traj.x
    right = x >= za
    left = x <= za
    w = traj.w_values[right]
    v = traj.v_values[left]
    w_violation = max(0.0, -float(np.min(np.diff(w)))) if w.size > 1 else 0.0
    v_violation = max(0.0, float(np.max(np.diff(v)))) if v.size > 1 else 0.0
    return LyapunovReport(w_violation, v_violation, tolerance, int(w.size), int(v.size))


@dataclass(frozen=True)
class DerivativeBoundReport:
    applicable: bool
    excess_right_of_beta: float
    excess_right_of_alpha: float
    excess_left_of_alpha: float
    slack: float

    @property
    def ok(self):
        return not self.applicable or max(
            self.excess_right_of_beta, self.excess_right_of_alpha, self.excess_left_of_alpha
        ) <= self.slack

    def to_dict(self):
        return {
            "applicable": self.applicable,
            "excess_right_of_beta": self.excess_right_of_beta,
            "excess_right_of_alpha": self.excess_right_of_alpha,
            "excess_left_of_alpha": self.excess_left_of_alpha,
            "slack": self.slack,
            "ok": self.ok,
        }


def _excess(values, bound):
    return float(np.max(np.abs(values)) - bound) if values.size else -math.inf


def derivative_bound_check(traj, slack=None):
    slack = config.DERIVATIVE_SLACK if slack is None else slack
    if not traj.termination.is_converged:
        return DerivativeBoundReport(False, -math.inf, -math.inf, -math.inf, slack)
    consts = constants(traj.pair)
    za = float(consts.z_alpha)
    m0, m1 = traj.pair.m0, traj.pair.m1
    x, rp = traj.x, traj.r_prime
    return DerivativeBoundReport(
        True,
        _excess(rp[x >= consts.z_beta], math.sqrt(m1)),
        _excess(rp[x >= za], math.sqrt(m1 + 1)),
        _excess(rp[x <= za], math.sqrt(m0)),
        slack,
    )


@dataclass(frozen=True)
class WLimitReport:
    applicable: bool
    w_end: float
    target: float
    tolerance: float

    @property
    def deviation(self):
        return abs(self.w_end - self.target)

    @property
    def ok(self):
        return not self.applicable or self.deviation <= self.tolerance

    def to_dict(self):
        return {
            "applicable": self.applicable,
            "w_end": self.w_end,
            "target": self.target,
            "deviation": self.deviation,
            "ok": self.ok,
        }


def w_limit_check(traj, tolerance=None):
    tolerance = config.W_LIMIT_TOL if tolerance is None else tolerance
    target = 0.5 * traj.pair.m1
    return WLimitReport(
        traj.termination.is_converged, float(traj.w_values[-1]), target, tolerance
    )


def ode_residual(pair, traj, x_lo=None, x_hi=None):
    """Largest residual of the x-form equation at step midpoints.

    r'' comes from a five-point stencil of r' taken inside a single step, where the dense
    evaluator is smooth.
    """
    x_lo = traj.x_start if x_lo is None else x_lo
    x_hi = traj.x_end if x_hi is None else x_hi
    worst = 0.0
    for seg in traj.segments:
        knots = np.asarray(seg.knots, dtype=float)
        for a, b in zip(knots[:-1], knots[1:]):
            if b - a < 1e-9 or a < x_lo or b > x_hi or a < seg.x_lo or b > seg.x_hi:
                continue
            m = 0.5 * (a + b)
            h = min(1e-3, (b - a) / 8.0)
            fp2 = float(seg.evaluate(m + 2 * h)[1])
            fp1 = float(seg.evaluate(m + h)[1])
            fm1 = float(seg.evaluate(m - h)[1])
            fm2 = float(seg.evaluate(m - 2 * h)[1])
            rpp = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h)
            r, rp = seg.evaluate(m)
            residual = rpp - alpha(pair, m) * float(rp) + beta(pair, m) * math.sin(2.0 * float(r))
            worst = max(worst, abs(float(residual)))
    return worst
