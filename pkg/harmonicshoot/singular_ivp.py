"""Power-series starts at the singular endpoints t = 0 and t = pi/2.

Near t = 0 the equation, multiplied by sin^2 t cos^2 t, becomes

    s^2 c^2 r'' - (m1 s^3 c - m0 s c^3) r' + (m1 s^2 - m0 c^2) sin(2 r) / 2 = 0

with s = sin t, c = cos t. Substituting r = sum a_k t^k, the coefficient of t^k is affine in
a_k with slope (k - 1)(k + m0), so a_1 = v is free and every later coefficient follows from
the lower ones. Only odd powers are populated; the residual check at the handoff point is
what validates that choice.
"""

import functools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.polynomial import polynomial as P

from . import config
from .errors import DomainError, SeriesError

log = logging.getLogger("SingularIVP")

HALF_PI = 0.5 * math.pi
TANGENCY_TOL = 1e-10


class Endpoint(Enum):
    AT_ZERO = "at_zero"
    AT_PI_HALF = "at_pi_half"


def _mul(a, b):
    return np.convolve(a, b)[: len(a)]


def _sin_cos(u):
    """Taylor coefficients of sin(u(t)) and cos(u(t)) for a truncated series u."""
    n = len(u)
    s = np.zeros(n)
    c = np.zeros(n)
    s[0] = math.sin(u[0])
    c[0] = math.cos(u[0])
    du = np.arange(n) * u
    for k in range(1, n):
        s[k] = np.dot(du[1 : k + 1], c[k - 1 :: -1]) / k
        c[k] = -np.dot(du[1 : k + 1], s[k - 1 :: -1]) / k
    return s, c


@functools.lru_cache(maxsize=128)
def _ode_coefficient_series(m0, m1, order):
    t = np.zeros(order + 1)
    t[1] = 1.0
    s, c = _sin_cos(t)
    s2 = _mul(s, s)
    c2 = _mul(c, c)
    p2 = _mul(s2, c2)
    p1 = m1 * _mul(_mul(s2, s), c) - m0 * _mul(s, _mul(c2, c))
    p0 = 0.5 * (m1 * s2 - m0 * c2)
    for arr in (p2, p1, p0):
        arr.setflags(write=False)
    return p2, p1, p0


def _equation_series(a, p2, p1, p0):
    n = len(a)
    k = np.arange(n)
    rd = np.zeros(n)
    rd[:-1] = k[1:] * a[1:]
    rdd = np.zeros(n)
    rdd[:-2] = k[2:] * (k[2:] - 1) * a[2:]
    s2r, _ = _sin_cos(2.0 * a)
    return _mul(p2, rdd) - _mul(p1, rd) + _mul(p0, s2r)


def _solve_coefficients(m0, m1, v, order):
    p2, p1, p0 = _ode_coefficient_series(m0, m1, order)
    a = np.zeros(order + 1)
    a[1] = v
    for k in range(3, order + 1, 2):
        divisor = (k - 1) * (k + m0)
        if abs(divisor) < 1e-14:
            raise SeriesError(f"Order-{k} coefficient equation is singular for m0={m0}")
        a[k] = -_equation_series(a, p2, p1, p0)[k] / divisor
    return a


def _top_index(coeffs):
    top = len(coeffs) - 1
    return top if top % 2 == 1 else top - 1


def _handoff_radius(coeffs, v):
    top = _top_index(coeffs)
    a_top = abs(coeffs[top])
    scale = 1.0 if abs(v) <= config.LARGE_V else config.LARGE_V / abs(v)
    lo = config.SERIES_T_MIN * scale
    hi = config.SERIES_T_MAX * scale
    if a_top == 0.0:
        return hi
    t_trunc = (config.SERIES_TRUNC_TOL / a_top) ** (1.0 / top)
    return min(max(t_trunc, lo), hi)


def _relative_residual(m0, m1, coeffs, v, t):
    s, c = math.sin(t), math.cos(t)
    r = P.polyval(t, coeffs)
    rd = P.polyval(t, P.polyder(coeffs))
    rdd = P.polyval(t, P.polyder(coeffs, 2))
    e = (
        s * s * c * c * rdd
        - (m1 * s**3 * c - m0 * s * c**3) * rd
        + 0.5 * (m1 * s * s - m0 * c * c) * math.sin(2.0 * r)
    )
    return abs(e) / ((m0 + m1) * max(1.0, abs(v)) * t)


def _check_tangency(series):
    grid = np.linspace(series.validity_radius / 16.0, series.validity_radius, 16)
    r = series.value(grid)
    rd = series.slope(grid)
    level = np.round((r - HALF_PI) / math.pi)
    gap = np.abs(r - (2.0 * level + 1.0) * HALF_PI)
    if np.any((gap < TANGENCY_TOL) & (np.abs(rd) < TANGENCY_TOL)):
        raise SeriesError(f"Series for {series.pair} at v={series.v!r} touches a level tangentially")


@dataclass(frozen=True)
class SeriesStart:
    pair: object
    endpoint: Endpoint
    v: float
    coeffs: np.ndarray = field(compare=False, repr=False)
    order: int = 9
    validity_radius: float = 0.0
    level: int = 0
    residual: float = 0.0

    def value(self, s):
        return P.polyval(s, self.coeffs)

    def slope(self, s):
        return P.polyval(s, P.polyder(self.coeffs))

    def curvature(self, s):
        return P.polyval(s, P.polyder(self.coeffs, 2))

    def t_state(self, t):
        """(r, dr/dt) at the angle t."""
        if self.endpoint is Endpoint.AT_ZERO:
            return self.value(t), self.slope(t)
        u = HALF_PI - t
        return self.value(u), -self.slope(u)

    def x_state(self, x):
        return series_state_at_x(self, x)

    def to_dict(self):
        return {
            "endpoint": self.endpoint.value,
            "level": self.level,
            "v": self.v,
            "order": self.order,
            "coeffs": [float(a) for a in self.coeffs],
            "validity_radius": self.validity_radius,
            "residual": self.residual,
        }


def series_at_zero(pair, v, order=None):
    """Regular solution r(t) = v t + ... at t = 0."""
    order = config.SERIES_ORDER if order is None else int(order)
    if order < 5:
        raise DomainError(f"Series order must be at least 5, got {order}")
    v = float(v)
    if not math.isfinite(v):
        raise DomainError(f"Initial slope must be finite, got {v!r}")

    coeffs = _solve_coefficients(pair.m0, pair.m1, v, order)
    radius = _handoff_radius(coeffs, v)
    residual = _relative_residual(pair.m0, pair.m1, coeffs, v, radius)
    if residual > config.SERIES_TOL:
        raise SeriesError(
            f"Series residual {residual:.3e} at t={radius:.3e} exceeds {config.SERIES_TOL:.1e} "
            f"for {pair}, v={v!r}"
        )
    coeffs.setflags(write=False)
    series = SeriesStart(
        pair=pair,
        endpoint=Endpoint.AT_ZERO,
        v=v,
        coeffs=coeffs,
        order=order,
        validity_radius=radius,
        residual=residual,
    )
    _check_tangency(series)
    log.debug("Series %s v=%r: radius %.3e residual %.2e", pair, v, radius, residual)
    return series


def series_at_pi_half(pair, k, w, order=None):
    """Bounded solution r = (2k+1) pi/2 + w u + ... in u = pi/2 - t.

    r(pi/2 - u) - (2k+1) pi/2 solves the equation of the swapped pair in u.
    """
    base = series_at_zero(pair.swapped(), w, order)
    coeffs = np.array(base.coeffs)
    coeffs[0] += (2 * int(k) + 1) * HALF_PI
    coeffs.setflags(write=False)
    return SeriesStart(
        pair=pair,
        endpoint=Endpoint.AT_PI_HALF,
        v=base.v,
        coeffs=coeffs,
        order=base.order,
        validity_radius=base.validity_radius,
        level=int(k),
        residual=base.residual,
    )


def series_state_at_x(series, x):
    """(r, dr/dx) of the series at x; works on scalars and arrays."""
    if series.endpoint is Endpoint.AT_ZERO:
        s = np.arctan(np.exp(x))
        factor = np.sin(s) * np.cos(s)
        return series.value(s), series.slope(s) * factor
    u = np.arctan(np.exp(-np.asarray(x, dtype=float)))
    factor = np.sin(u) * np.cos(u)
    return series.value(u), -series.slope(u) * factor


def to_x_state(series, t):
    """Convert the series state at the angle t to (x, r, dr/dx)."""
    t = float(t)
    if not 0.0 < t < HALF_PI:
        raise DomainError(f"t must lie in (0, pi/2), got {t!r}")
    local = t if series.endpoint is Endpoint.AT_ZERO else HALF_PI - t
    if local > series.validity_radius:
        log.debug("Evaluating series at %.3e beyond its radius %.3e", local, series.validity_radius)
    x = math.log(math.tan(t))
    r, rdot = series.t_state(t)
    return x, float(r), float(rdot) * math.sin(t) * math.cos(t)


def t_form_residual(series, t):
    """Residual of the t-form equation r'' - (m1 tan t - m0 cot t) r' + ... at t."""
    m0, m1 = series.pair.m0, series.pair.m1
    if series.endpoint is Endpoint.AT_ZERO:
        r, rd, rdd = series.value(t), series.slope(t), series.curvature(t)
    else:
        u = HALF_PI - t
        r, rd, rdd = series.value(u), -series.slope(u), series.curvature(u)
    s, c = math.sin(t), math.cos(t)
    return float(
        rdd
        - (m1 * s / c - m0 * c / s) * rd
        + 0.5 * (m1 / (c * c) - m0 / (s * s)) * math.sin(2.0 * r)
    )
