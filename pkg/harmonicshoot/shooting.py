"""Shooting from t = 0: shots, nodal transitions, BVP solutions and sweeps."""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import newton

from . import config, state
from .coefficients import MultPair, constants
from .errors import DomainError, HarmonicShootError, NoConvergence, NoTransition, StepFailure
from .integrator import (
    Fate,
    IntegratorControls,
    OdeStateX,
    TerminationCause,
    TrajectorySegment,
    integrate,
    level_value,
    match_bounded_branch,
    series_evaluator,
    vector_field,
)
from .singular_ivp import series_at_zero, to_x_state

log = logging.getLogger("Shooting")

_EXPAND_STEPS = 200


@dataclass(frozen=True)
class ShotOutcome:
    pair: MultPair
    v: float
    fate: object
    nodal: int
    crossings: tuple = ()
    ell: int | None = None
    degenerate: bool = False
    trajectory: object = field(default=None, compare=False, repr=False)

    @property
    def is_converged(self):
        return not self.degenerate and self.fate.is_converged

    @property
    def fate_label(self):
        return "Degenerate" if self.degenerate else self.fate.label

    def to_dict(self):
        return {
            "pair": self.pair.to_json(),
            "v": self.v,
            "fate": self.fate_label,
            "nodal": self.nodal,
            "ell": self.ell,
            "degenerate": self.degenerate,
            "x_end": None if self.trajectory is None else self.trajectory.x_end,
            "crossings": [e.to_dict() for e in self.crossings],
        }


def _start_state(pair, v, controls):
    series = series_at_zero(pair, v, controls.series_order)
    t0 = controls.handoff_t if controls.handoff_t is not None else series.validity_radius
    x0, r0, rp0 = to_x_state(series, t0)
    return series, OdeStateX(x0, r0, rp0)


def shoot(pair, v, controls=None):
    """Integrate the regular solution with initial slope ``v`` and classify it."""
    controls = controls or IntegratorControls.from_settings()
    constants(pair)
    v = float(v)
    if not math.isfinite(v):
        raise DomainError(f"Slope must be finite, got {v!r}")
    if v == 0.0:
        log.debug("v = 0 for %s is the constant solution", pair)
        return ShotOutcome(
            pair, 0.0, TerminationCause(Fate.REACHED_X_MAX), 0, (), None, degenerate=True
        )

    series, start = _start_state(pair, v, controls)
    traj = integrate(pair, start, controls, v=v)
    if traj.termination.fate is Fate.REACHED_X_MAX:
        retry = controls.with_x_max(2.0 * controls.x_max)
        log.info("Shot %s v=%r undecided at x=%.4g, retrying to x=%.4g",
                 pair, v, traj.x_end, retry.x_max)
        traj = integrate(pair, start, retry, v=v)
    if traj.termination.fate is Fate.STEP_FAILURE:
        raise StepFailure(f"Integration failed for {pair} v={v!r} near x={traj.x_end:.6g}")

    prefix = TrajectorySegment(
        "series_start", -math.inf, start.x, series_evaluator(series), np.array([start.x])
    )
    traj = traj.with_prefix(prefix)
    crossings = tuple(traj.crossings())
    nodal = sum(1 for e in crossings if e.level == 0)
    return ShotOutcome(
        pair=pair,
        v=v,
        fate=traj.termination,
        nodal=nodal,
        crossings=crossings,
        ell=traj.termination.ell,
        trajectory=traj,
    )


def brouwer_degree(ell, pair):
    ell = int(ell)
    m0_even = pair.m0 % 2 == 0
    m1_even = pair.m1 % 2 == 0
    if m0_even and m1_even:
        return 2 * ell + 1
    if ell % 2 == 1 and not m0_even and m1_even:
        return -1
    return 1


class TransitionBracket(NamedTuple):
    v_lo: float
    v_hi: float


class _ShotCache:
    """Shots by slope; a found solution ends the search when ``target`` is set."""

    def __init__(self, pair, controls, target=None):
        self.pair = pair
        self.controls = controls
        self.target = target
        self.shots = {}
        self.found = None

    def __call__(self, v):
        if v not in self.shots:
            outcome = shoot(self.pair, v, self.controls)
            self.shots[v] = outcome
            log.debug("Shot %s v=%.17g: %s nodal %d", self.pair, v, outcome.fate_label, outcome.nodal)
            if (
                self.target is not None
                and self.found is None
                and outcome.is_converged
                and outcome.nodal == self.target
            ):
                self.found = outcome
        return self.shots[v]


def _check_regime(pair, what):
    if not (2 <= pair.m0 <= 5 and pair.m0 <= pair.m1):
        log.warning("%s for %s lies outside 2 <= m0 <= 5, m0 <= m1; transitions may not exist",
                    what, pair)


def _search(pair, k, v_seed, cache):
    """Expand then bisect on nodal(v) <= k; stops early once ``cache.found`` is set."""
    if isinstance(k, bool) or int(k) != k or k < 0:
        raise DomainError(f"Nodal number must be a non-negative integer, got {k!r}")
    v_seed = float(v_seed)
    if not (math.isfinite(v_seed) and v_seed > 0.0):
        raise DomainError(f"Seed slope must be positive and finite, got {v_seed!r}")

    ceiling = config.V_CEILING
    v_lo = v_hi = None
    if cache(v_seed).nodal <= k:
        v_lo = v_seed
        v = v_seed
        while v_hi is None:
            if cache.found:
                return v_lo, v
            v = 2.0 * v
            if v > ceiling:
                raise NoTransition(
                    f"No transition above nodal {k} for {pair} up to v={ceiling:.3g} "
                    f"(nodal {cache(v_lo).nodal} at v={v_lo:.6g})"
                )
            if cache(v).nodal <= k:
                v_lo = v
            else:
                v_hi = v
    else:
        v_hi = v_seed
        v = v_seed
        for _ in range(_EXPAND_STEPS):
            if cache.found:
                return v, v_hi
            v = 0.5 * v
            if cache(v).nodal <= k:
                v_lo = v
                break
            v_hi = v
        if v_lo is None:
            raise NoTransition(f"Nodal count stays above {k} for {pair} down to v={v:.3g}")

    while v_hi - v_lo > config.BISECT_RTOL * v_hi and not cache.found:
        mid = 0.5 * (v_lo + v_hi)
        if mid in (v_lo, v_hi):
            break
        if cache(mid).nodal <= k:
            v_lo = mid
        else:
            v_hi = mid
    return v_lo, v_hi


def _flag_irregular(pair, k, cache, v_lo, v_hi):
    n_lo = cache(v_lo).nodal
    n_hi = cache(v_hi).nodal
    if n_lo != k or n_hi != k + 1:
        log.warning("Bracket for %s k=%d has nodal counts %d and %d", pair, k, n_lo, n_hi)
        state.add_flag(
            "nodal_bracket_irregular",
            f"nodal {n_lo} at v_lo, {n_hi} at v_hi",
            pair=pair.to_json(), k=k, v_lo=v_lo, v_hi=v_hi,
        )


def nodal_transition(pair, k, v_seed=1.0, controls=None):
    """Bracket [v_lo, v_hi] where the nodal number steps from k to k + 1."""
    controls = controls or IntegratorControls.from_settings()
    _check_regime(pair, "nodal_transition")
    cache = _ShotCache(pair, controls)
    v_lo, v_hi = _search(pair, k, v_seed, cache)
    _flag_irregular(pair, k, cache, v_lo, v_hi)
    log.info("Transition %s k=%d in [%.17g, %.17g]", pair, k, v_lo, v_hi)
    return TransitionBracket(v_lo, v_hi)


@dataclass(frozen=True)
class BvpSolution:
    outcome: ShotOutcome
    v_bracket: tuple
    degree: int
    trajectory: object = field(compare=False, repr=False)
    flags: tuple = ()
    mismatch: float = math.nan
    residual: float = math.nan

    @property
    def pair(self):
        return self.outcome.pair

    @property
    def v(self):
        return self.outcome.v

    @property
    def ell(self):
        return self.outcome.ell

    @property
    def nodal(self):
        return self.outcome.nodal

    @property
    def boundary_value(self):
        return level_value(self.ell)

    def to_dict(self):
        return {
            "pair": self.pair.to_json(),
            "v": self.v,
            "fate": self.outcome.fate_label,
            "nodal": self.nodal,
            "ell": self.ell,
            "degree": self.degree,
            "v_bracket": list(self.v_bracket),
            "mismatch": self.mismatch,
            "residual": self.residual,
            "x_end": self.trajectory.x_end,
            "flags": list(self.flags),
        }


def joint_mismatch(pair, v, x_joint, level, controls):
    """Slope mismatch at ``x_joint`` between the shot from t = 0 and the bounded branch."""
    _, start = _start_state(pair, v, controls)
    sol = solve_ivp(
        vector_field(pair),
        (start.x, x_joint),
        [start.r, start.r_prime],
        method="DOP853",
        rtol=controls.rel_tol,
        atol=controls.abs_tol,
        max_step=controls.max_step,
    )
    if not sol.success:
        raise StepFailure(f"Forward integration to the joint failed for {pair} v={v!r}")
    info = match_bounded_branch(pair, x_joint, sol.y[0, -1], sol.y[1, -1], controls, level)
    return info.mismatch


def _polish(pair, outcome, k, controls, v_other=None):
    """Secant on the joint mismatch; returns the re-shot outcome or None."""
    match = outcome.trajectory.match if outcome.trajectory is not None else None
    if match is None:
        return None
    x_joint, level = match.x_joint, match.level

    def mismatch(v):
        value = joint_mismatch(pair, v, x_joint, level, controls)
        if not math.isfinite(value):
            raise NoConvergence(f"No bounded branch at x={x_joint:.6g} for v={v!r}")
        return value

    v0 = outcome.v
    v1 = v_other if v_other is not None and v_other != v0 else v0 * (1.0 + 1e-9)
    try:
        v_new = float(newton(mismatch, v0, x1=v1, tol=4e-16 * abs(v0), maxiter=30))
    except (RuntimeError, OverflowError, ZeroDivisionError, HarmonicShootError) as e:
        log.info("Polish of %s v=%.17g did not converge: %s", pair, v0, e)
        return None
    if v_new == v0:
        return None
    polished = shoot(pair, v_new, controls)
    if polished.is_converged and polished.nodal == k:
        return polished
    log.info("Polished v=%.17g for %s is %s nodal %d; keeping v=%.17g",
             v_new, pair, polished.fate_label, polished.nodal, v0)
    return None


def _closest_approach(outcome):
    """Step end right of the gate where the shot is nearest to a level, as a match stand-in."""
    traj = outcome.trajectory
    gate = constants(outcome.pair).x_gate
    x = traj.x
    mask = x >= gate
    if not np.any(mask):
        return None
    r = traj.r[mask]
    rp = traj.r_prime[mask]
    levels = np.round((r - 0.5 * math.pi) / math.pi)
    distance = np.abs(r - (2.0 * levels + 1.0) * 0.5 * math.pi) + np.abs(rp)
    i = int(np.argmin(distance))
    return float(x[mask][i]), int(levels[i])


def _rescue(pair, k, cache, v_lo, v_hi, controls):
    for v in (v_lo, v_hi):
        if cache(v).is_converged and cache(v).nodal == k:
            return cache(v)
    outcome = cache(v_lo)
    approach = _closest_approach(outcome) if outcome.trajectory is not None else None
    if approach is None:
        return None
    x_joint, level = approach

    def mismatch(v):
        value = joint_mismatch(pair, v, x_joint, level, controls)
        if not math.isfinite(value):
            raise NoConvergence(f"No bounded branch at x={x_joint:.6g} for v={v!r}")
        return value

    try:
        v_new = float(newton(mismatch, v_lo, x1=v_hi, tol=4e-16 * abs(v_lo), maxiter=30))
    except (RuntimeError, OverflowError, ZeroDivisionError, HarmonicShootError) as e:
        log.info("Joint secant for %s k=%d failed: %s", pair, k, e)
        return None
    shot = shoot(pair, v_new, controls)
    if shot.is_converged and shot.nodal == k:
        return shot
    return None


def solve_bvp(pair, k, controls=None, v_seed=1.0):
    """Solution of the boundary value problem with nodal number ``k``.

    The search is the transition search for k; it stops at the first shot that converges
    with nodal number k, and the slope of that shot is then polished on the joint mismatch.
    """
    controls = controls or IntegratorControls.from_settings()
    _check_regime(pair, "solve_bvp")
    cache = _ShotCache(pair, controls, target=k)
    v_lo, v_hi = _search(pair, k, v_seed, cache)
    flags = []

    outcome = cache.found or _rescue(pair, k, cache, v_lo, v_hi, controls)
    if outcome is None:
        raise NoConvergence(
            f"No converged shot with nodal {k} for {pair} in [{v_lo!r}, {v_hi!r}]: "
            f"{cache(v_lo).fate_label} nodal {cache(v_lo).nodal} / "
            f"{cache(v_hi).fate_label} nodal {cache(v_hi).nodal}"
        )
    if not cache.found:
        flags.append("rescued_from_bracket")

    other = v_hi if v_hi != outcome.v else v_lo
    polished = _polish(pair, outcome, k, controls, other)
    if polished is not None:
        log.info("Polished %s k=%d: v %.17g -> %.17g, mismatch %.3e -> %.3e",
                 pair, k, outcome.v, polished.v,
                 outcome.trajectory.match.mismatch, polished.trajectory.match.mismatch)
        outcome = polished

    degree = brouwer_degree(outcome.ell, pair)
    if abs(degree) == 3:
        log.warning("Degree %d solution for %s k=%d at v=%.17g", degree, pair, k, outcome.v)
        state.add_flag("degree_three", f"degree {degree}", pair=pair.to_json(), k=k, v=outcome.v)
        flags.append("degree_three")

    traj = outcome.trajectory
    log.info("Solved %s k=%d: v=%.17g %s degree %d", pair, k, outcome.v, outcome.fate_label, degree)
    return BvpSolution(
        outcome=outcome,
        v_bracket=(min(v_lo, v_hi), max(v_lo, v_hi)),
        degree=degree,
        trajectory=traj,
        flags=tuple(flags),
        mismatch=traj.match.mismatch if traj.match is not None else 0.0,
    )


def _thread_count(threads):
    threads = config.THREADS if threads is None else int(threads)
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def _sweep_row(pair, v, controls):
    try:
        outcome = shoot(pair, v, controls)
        return {
            "v": v,
            "fate": outcome.fate_label,
            "nodal": outcome.nodal,
            "ell": outcome.ell,
            "error": None,
        }
    except (HarmonicShootError, ValueError, ArithmeticError) as e:
        log.exception("Sweep point %s v=%r failed", pair, v)
        return {"v": v, "fate": None, "nodal": None, "ell": None, "error": str(e)}


def sweep(pair, v_grid, controls=None, threads=None):
    """Independent shots over ``v_grid``; rows come back ordered by v."""
    controls = controls or IntegratorControls.from_settings()
    grid = sorted(float(v) for v in v_grid)
    if not grid:
        raise DomainError("Sweep grid is empty")
    if not all(math.isfinite(v) and v > 0 for v in grid):
        raise DomainError("Sweep grid must hold positive finite slopes")
    workers = min(_thread_count(threads), len(grid))
    log.info("Sweeping %s over %d slopes with %d workers", pair, len(grid), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(lambda v: _sweep_row(pair, v, controls), grid))
    return rows


def parse_grid(text):
    """Parse ``lo:hi:n`` (linear) or ``lo:hi:n:log`` into a list of slopes."""
    parts = str(text).split(":")
    if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] not in ("log", "lin")):
        raise DomainError(f"Grid must look like lo:hi:n[:log], got {text!r}")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as e:
        raise DomainError(f"Grid must look like lo:hi:n[:log], got {text!r}") from e
    if n < 1 or not (math.isfinite(lo) and math.isfinite(hi)) or lo <= 0 or hi < lo:
        raise DomainError(f"Grid needs 0 < lo <= hi and n >= 1, got {text!r}")
    if len(parts) == 4 and parts[3] == "log":
        return [float(v) for v in np.geomspace(lo, hi, n)]
    return [float(v) for v in np.linspace(lo, hi, n)]


def _mirrored_fate(outcome):
    fate = outcome.fate
    if fate.is_converged:
        return f"Converged({-fate.ell - 1})"
    if fate.fate is Fate.BLOW_UP_PLUS:
        return Fate.BLOW_UP_MINUS.value
    if fate.fate is Fate.BLOW_UP_MINUS:
        return Fate.BLOW_UP_PLUS.value
    return fate.label


@dataclass(frozen=True)
class SymmetryReport:
    pair: MultPair
    v: float
    fate: str
    mirrored_fate: str
    expected_fate: str
    mirrored_nodal: int
    expected_nodal: int

    @property
    def ok(self):
        return self.mirrored_fate == self.expected_fate and self.mirrored_nodal == self.expected_nodal

    def to_dict(self):
        return {
            "pair": self.pair.to_json(),
            "v": self.v,
            "fate": self.fate,
            "mirrored_fate": self.mirrored_fate,
            "expected_fate": self.expected_fate,
            "mirrored_nodal": self.mirrored_nodal,
            "expected_nodal": self.expected_nodal,
            "ok": self.ok,
        }


def sign_symmetry_check(pair, v, controls=None):
    """Compare the shot at -v with the mirror image r -> -r of the shot at v."""
    controls = controls or IntegratorControls.from_settings()
    forward = shoot(pair, v, controls)
    mirrored = shoot(pair, -v, controls)
    expected_nodal = sum(1 for e in forward.crossings if e.level == -1)
    return SymmetryReport(
        pair=pair,
        v=float(v),
        fate=forward.fate_label,
        mirrored_fate=mirrored.fate_label,
        expected_fate=_mirrored_fate(forward),
        mirrored_nodal=mirrored.nodal,
        expected_nodal=expected_nodal,
    )


@dataclass(frozen=True)
class RestrictionReport:
    rows: tuple
    degree_three: int

    @property
    def ok(self):
        return all(row["ok"] for row in self.rows)

    def to_dict(self):
        return {"rows": list(self.rows), "degree_three": self.degree_three, "ok": self.ok}


def degree_restriction_check(solutions):
    """Boundary level in {-1, 0, 1} and |degree| in {1, 3} for every solution."""
    rows = []
    degree_three = 0
    for sol in solutions:
        ok = sol.ell in (-1, 0, 1) and abs(sol.degree) in (1, 3)
        if abs(sol.degree) == 3:
            degree_three += 1
            log.warning("Watchdog: %s v=%.17g has degree %d", sol.pair, sol.v, sol.degree)
        rows.append({
            "pair": sol.pair.to_json(),
            "v": sol.v,
            "nodal": sol.nodal,
            "ell": sol.ell,
            "degree": sol.degree,
            "ok": ok,
        })
    return RestrictionReport(tuple(rows), degree_three)


def large_velocity_check(solutions, v_min):
    """Solutions with v >= v_min must end at +-pi/2 with degree +-1."""
    rows = []
    for sol in solutions:
        if sol.v < v_min:
            continue
        ok = abs(sol.degree) == 1 and sol.ell in (-1, 0)
        rows.append({"v": sol.v, "ell": sol.ell, "degree": sol.degree, "ok": ok})
    return RestrictionReport(tuple(rows), 0)

