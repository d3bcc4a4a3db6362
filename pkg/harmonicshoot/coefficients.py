"""Coefficient functions of the x-form equation and the structural constants of a pair.

In the variable x = log(tan t) the profile equation reads

    r''(x) = alpha(x) r'(x) - beta(x) sin(2 r(x))

with alpha = ((m0 + m1 - 2) tanh x + m1 - m0) / 2 and beta = ((m0 + m1) tanh x + m1 - m0) / 4.
Every constant that is defined as a root has a closed form; it is returned only after the
defining residual is checked and an independent bracketing root agrees with it.
"""

import functools
import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from . import config, state
from .errors import ConstantCheckError, DomainError

log = logging.getLogger("Coefficients")

TABLE1_EXPECTED = {2: 4, 3: 27, 4: 60, 5: 106}

# tanh is exactly +-1 in double precision beyond this
_FAR = 40.0


class Extent(Enum):
    FINITE = "finite"
    POS_INF = "+inf"
    NEG_INF = "-inf"


@dataclass(frozen=True)
class ExtendedReal:
    kind: Extent
    value: float = 0.0

    @classmethod
    def finite(cls, value):
        value = float(value)
        if math.isnan(value):
            raise DomainError("NaN is not an extended real")
        if math.isinf(value):
            return cls.pos_inf() if value > 0 else cls.neg_inf()
        return cls(Extent.FINITE, value)

    @classmethod
    def pos_inf(cls):
        return cls(Extent.POS_INF, math.inf)

    @classmethod
    def neg_inf(cls):
        return cls(Extent.NEG_INF, -math.inf)

    @property
    def is_finite(self):
        return self.kind is Extent.FINITE

    def __float__(self):
        return self.value

    def to_json(self):
        return self.value if self.is_finite else self.kind.value

    def __str__(self):
        return repr(self.value) if self.is_finite else self.kind.value


@dataclass(frozen=True, order=True)
class MultPair:
    m0: int
    m1: int

    def __post_init__(self):
        for name in ("m0", "m1"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise DomainError(f"Multiplicity {name} must be an integer, got {value!r}")
            if value < 1:
                raise DomainError(f"Multiplicity {name} must be at least 1, got {value}")
            object.__setattr__(self, name, int(value))

    @classmethod
    def parse(cls, text):
        """Parse ``"m0,m1"`` (parentheses and blanks allowed)."""
        cleaned = str(text).strip().strip("()[]")
        parts = [p.strip() for p in cleaned.split(",")]
        if len(parts) != 2:
            raise DomainError(f"Pair must look like m0,m1, got {text!r}")
        try:
            return cls(int(parts[0]), int(parts[1]))
        except ValueError as e:
            raise DomainError(f"Pair must hold two integers, got {text!r}") from e

    def swapped(self):
        return MultPair(self.m1, self.m0)

    def to_json(self):
        return [self.m0, self.m1]

    def __str__(self):
        return f"({self.m0},{self.m1})"


def alpha(pair, x):
    return 0.5 * ((pair.m0 + pair.m1 - 2) * np.tanh(x) + pair.m1 - pair.m0)


def beta(pair, x):
    return 0.25 * ((pair.m0 + pair.m1) * np.tanh(x) + pair.m1 - pair.m0)


def big_b(m1):
    if m1 < 2:
        raise DomainError(f"B is undefined for m1 = {m1}")
    return m1 / (2.0 * (m1 - 1))


def q(pair, x):
    """beta/alpha as an extended real; signed infinity at the zero of alpha."""
    if pair.m0 == pair.m1 and pair.m0 > 1:
        return ExtendedReal.finite(big_b(pair.m1))
    a = float(alpha(pair, x))
    b = float(beta(pair, x))
    if a == 0.0:
        if b > 0.0:
            return ExtendedReal.pos_inf()
        if b < 0.0:
            return ExtendedReal.neg_inf()
        return ExtendedReal.finite(0.0)
    return ExtendedReal.finite(b / a)


def _q_array(pair, xs):
    a = alpha(pair, xs)
    b = beta(pair, xs)
    with np.errstate(divide="ignore", invalid="ignore"):
        return b / a


def _z_alpha_value(pair):
    if pair.m0 == pair.m1:
        return 0.0
    if pair.m0 == 1:
        return -math.inf
    if pair.m1 == 1:
        return math.inf
    return math.atanh((pair.m0 - pair.m1) / (pair.m0 + pair.m1 - 2))


@dataclass(frozen=True)
class StructuralConstants:
    pair: MultPair
    z_alpha: ExtendedReal
    z_beta: float
    big_b: float
    c: ExtendedReal
    d_plus: float
    d_minus: float | None
    cap_c: float | None
    cap_l: ExtendedReal | None
    cap_r: ExtendedReal
    cap_c_roots: int = 0

    @property
    def x_gate(self):
        """Left end of the region where convergence may be certified."""
        return max(self.d_plus, 0.0)

    def to_dict(self):
        return {
            "pair": self.pair.to_json(),
            "z_alpha": self.z_alpha.to_json(),
            "z_beta": self.z_beta,
            "big_b": self.big_b,
            "c": self.c.to_json(),
            "d_plus": self.d_plus,
            "d_minus": self.d_minus,
            "cap_c": self.cap_c,
            "cap_l": None if self.cap_l is None else self.cap_l.to_json(),
            "cap_r": self.cap_r.to_json(),
            "cap_c_roots": self.cap_c_roots,
        }


def _checked_root(name, pair, func, closed, lo, hi):
    residual = abs(float(func(closed)))
    if residual > config.ROOT_RESIDUAL_TOL:
        raise ConstantCheckError(
            f"{name} for {pair}: residual {residual:.3e} of the closed form exceeds "
            f"{config.ROOT_RESIDUAL_TOL:.1e}"
        )
    bracketed = brentq(func, lo, hi, xtol=1e-15, maxiter=200)
    if abs(bracketed - closed) > config.CROSS_CHECK_TOL:
        raise ConstantCheckError(
            f"{name} for {pair}: closed form {closed!r} and bracketed root {bracketed!r} disagree"
        )
    log.debug("%s for %s = %.17g (bracketed %.17g)", name, pair, closed, bracketed)
    return closed


def _cap_c_closed_form(pair):
    """Largest root of 2 beta = q^2 for the swapped pair, from the quadratic in tanh x."""
    sp = pair.swapped()
    a1 = sp.m0 + sp.m1 - 2
    a0 = sp.m1 - sp.m0
    b1 = sp.m0 + sp.m1
    b0 = sp.m1 - sp.m0
    t_alpha = -a0 / a1
    candidates = []
    roots = np.roots([2.0 * a1 * a1, 4.0 * a1 * a0 - b1, 2.0 * a0 * a0 - b0])
    for root in roots:
        if abs(root.imag) < 1e-14 and t_alpha < root.real < 1.0:
            candidates.append(math.atanh(root.real))
    # the zero of beta is a root as well when it lies inside the domain
    t_beta = -b0 / b1
    if t_alpha < t_beta < 1.0:
        candidates.append(math.atanh(t_beta))
    return max(candidates) if candidates else None


def _scan_cap_c(pair):
    sp = pair.swapped()
    za = _z_alpha_value(sp)
    if not math.isfinite(za):
        return None, 0

    def g(x):
        return 2.0 * beta(sp, x) - _q_array(sp, x) ** 2

    offsets = np.geomspace(1e-10, config.CAP_C_SCAN_WIDTH, int(config.CAP_C_SCAN_POINTS))
    xs = za + offsets
    values = g(xs)
    signs = np.sign(values)
    roots = [float(xs[i]) for i in np.nonzero(values == 0.0)[0]]
    for i in np.nonzero(signs[:-1] * signs[1:] < 0)[0]:
        roots.append(brentq(g, xs[i], xs[i + 1], xtol=1e-15, maxiter=200))
    if not roots:
        raise ConstantCheckError(f"No root of 2 beta = q^2 found for the swap of {pair}")
    cap_c = max(roots)
    residual = abs(float(g(cap_c)))
    if residual > config.ROOT_RESIDUAL_TOL:
        raise ConstantCheckError(f"cap_c for {pair}: residual {residual:.3e} too large")
    closed = _cap_c_closed_form(pair)
    if closed is None or abs(closed - cap_c) > config.CROSS_CHECK_TOL:
        raise ConstantCheckError(
            f"cap_c for {pair}: scanned root {cap_c!r} disagrees with closed form {closed!r}"
        )
    return cap_c, len(roots)


@functools.lru_cache(maxsize=512)
def constants(pair):
    """Structural constants of ``pair``. Requires m1 >= 2."""
    if pair.m1 < 2:
        raise DomainError(f"constants require m1 >= 2, got {pair}")
    m0, m1 = pair.m0, pair.m1
    bb = big_b(m1)

    def f_alpha(x):
        return alpha(pair, x)

    def f_beta(x):
        return beta(pair, x)

    za = _z_alpha_value(pair)
    if math.isfinite(za):
        za = _checked_root("z_alpha", pair, f_alpha, za, -_FAR, _FAR)
    z_alpha = ExtendedReal.finite(za)

    z_beta = _checked_root(
        "z_beta", pair, f_beta, math.atanh((m0 - m1) / (m0 + m1)), -_FAR, _FAR
    )

    def f_dplus(x):
        return 2.0 * beta(pair, x) - bb * bb

    d_plus = _checked_root(
        "d_plus", pair, f_dplus, math.atanh((2.0 * bb * bb - (m1 - m0)) / (m0 + m1)),
        -_FAR, _FAR,
    )

    if m0 == m1:
        c = ExtendedReal.finite(0.0)
    elif m0 < m1:
        def f_c(x):
            return beta(pair, x) + bb * alpha(pair, x)

        closed = math.atanh(
            -(m1 - m0) * (1.0 + 2.0 * bb) / ((m0 + m1) + 2.0 * bb * (m0 + m1 - 2))
        )
        lo = za if math.isfinite(za) else -_FAR
        c = ExtendedReal.finite(_checked_root("c", pair, f_c, closed, lo, z_beta))
    else:
        # q > B on (z_alpha, inf): the derivative criterion never applies
        c = ExtendedReal.pos_inf()

    cap_c, n_roots = _scan_cap_c(pair)
    if n_roots > 1:
        log.warning("Pair %s: %d roots of 2 beta = q^2 in the scan window", pair, n_roots)
        state.add_flag("multiple_cap_c_roots", f"{n_roots} roots", pair=pair.to_json())

    if cap_c is None:
        d_minus = None
        cap_l = None
    else:
        d_minus = -cap_c
        cap_l = ExtendedReal.finite(za + cap_c)
    cap_r = ExtendedReal.finite(d_plus - za)

    return StructuralConstants(
        pair=pair,
        z_alpha=z_alpha,
        z_beta=z_beta,
        big_b=bb,
        c=c,
        d_plus=d_plus,
        d_minus=d_minus,
        cap_c=cap_c,
        cap_l=cap_l,
        cap_r=cap_r,
        cap_c_roots=n_roots,
    )


@dataclass(frozen=True)
class DegreeBounds:
    pair: MultPair
    r_bound: float
    l_bound_pi: float
    l_lower: float
    r_check: bool | None
    l_check: bool | None
    l_lower_check: bool | None

    @property
    def ok(self):
        return all(check is not False for check in (self.r_check, self.l_check, self.l_lower_check))

    def to_dict(self):
        return {
            "r_bound": self.r_bound,
            "l_bound_pi": self.l_bound_pi,
            "l_lower": self.l_lower,
            "r_check": self.r_check,
            "l_check": self.l_check,
            "l_lower_check": self.l_lower_check,
            "ok": self.ok,
        }


def absch1_bounds(pair):
    """Closed-form bounds on R and L and the checks they imply for ``pair``.

    A check is ``None`` when its hypothesis on m1 does not hold for the pair.
    """
    m0, m1 = pair.m0, pair.m1
    if m0 < 2:
        raise DomainError(f"Bounds require m0 >= 2, got {pair}")
    sqrt17 = math.sqrt(17.0)
    r_bound = math.atanh(5.0 / (8 * m0 - 3))
    l_bound_pi = math.sqrt(m0) * math.atanh(1.0 / (3 * m0 - 4))
    l_lower = math.atanh((1.0 + sqrt17) / (16 * m0 - (17.0 + sqrt17)))

    consts = constants(pair)
    slack = config.VERIFY_SLACK
    cap_r = float(consts.cap_r)
    cap_l = float(consts.cap_l)

    r_check = None
    if m1 >= max(m0, 4):
        r_check = cap_r <= r_bound + slack
    l_check = None
    if m1 >= m0:
        l_check = math.sqrt(m0) * cap_l <= l_bound_pi + slack and l_bound_pi < math.pi / 2
    l_lower_check = None
    if m1 >= 3 * m0 - 4:
        l_lower_check = cap_l >= l_lower - slack

    return DegreeBounds(pair, r_bound, l_bound_pi, l_lower, r_check, l_check, l_lower_check)


def dplus_excursion_bound(pair):
    """Upper bound on |r(d+)| for solutions converging at t = pi/2."""
    if pair.m0 < 2:
        raise DomainError(f"Excursion bound requires m0 >= 2, got {pair}")
    consts = constants(pair)
    za = float(consts.z_alpha)
    return (
        math.pi
        + math.sqrt(pair.m0) * float(consts.cap_l)
        + math.sqrt(pair.m1 + 1) * (consts.z_beta - za)
        + math.sqrt(pair.m1) * (consts.d_plus - consts.z_beta)
    )


def within_degree_bound(pair):
    return dplus_excursion_bound(pair) <= 1.5 * math.pi


def m1_max(m0):
    """Largest m1 such that the excursion bound stays below 3 pi / 2 for all m0 <= m1' <= m1."""
    if isinstance(m0, bool) or not isinstance(m0, (int, np.integer)) or not 2 <= m0 <= 5:
        raise DomainError(f"m1_max is defined for 2 <= m0 <= 5, got {m0!r}")
    limit = int(config.TABLE_M1_LIMIT)
    for m1 in range(m0, limit + 1):
        if not within_degree_bound(MultPair(m0, m1)):
            log.debug("m0=%d: bound first exceeds 3pi/2 at m1=%d", m0, m1)
            return m1 - 1
    raise ConstantCheckError(f"m0={m0}: bound still holds at the scan limit m1={limit}")


def table1():
    rows = []
    for m0, expected in TABLE1_EXPECTED.items():
        value = m1_max(m0)
        rows.append({"m0": m0, "m1_max": value, "expected": expected, "match": value == expected})
    return rows
