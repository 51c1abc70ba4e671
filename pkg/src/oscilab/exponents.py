"""Exact exponent arithmetic and log-log fitting.

Every threshold here is a :class:`fractions.Fraction`; floats only appear
in :func:`loglog_fit`, which summarizes numerical sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cmp_to_key
from fractions import Fraction
from itertools import combinations, product
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, UnboundedError

Rational = Fraction | int


def _q(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        raise TypeError("exponent arithmetic is exact; pass int, Fraction or a 'a/b' string")
    return Fraction(x)


# ---------------------------------------------------------------------------
# admissible-p thresholds


def threshold_p(n: int) -> Fraction:
    """Critical Lebesgue exponent for dimension ``n`` from the multi-level
    transversality bookkeeping: max over 2 <= k <= n of
    2*min(k/(k-1), (2n-k+1)/(2n-k-1))."""
    if n < 3:
        raise DomainError(f"threshold_p needs n >= 3, got {n}")
    best = None
    for k in range(2, n + 1):
        m = min(Fraction(k, k - 1), Fraction(2 * n - k + 1, 2 * n - k - 1))
        if best is None or m > best:
            best = m
    return 2 * best


def threshold_case_formula(n: int) -> Fraction:
    """The same threshold written as a closed form depending on n mod 3."""
    if n < 3:
        raise DomainError(f"case formula needs n >= 3, got {n}")
    r = n % 3
    if r == 0:
        return Fraction(2 * (4 * n + 3), 4 * n - 3)
    if r == 1:
        return Fraction(2 * n + 1, n - 1)
    return Fraction(4 * (n + 1), 2 * n - 1)


def named_thresholds(n: int = 3) -> dict[str, Fraction]:
    """Reference exponents reported next to the threshold table."""
    return {
        "trilinear": Fraction(10, 3),
        "wolff_kakeya": Fraction(33, 10),
        "optimal_kakeya": Fraction(36, 11),
        "polynomial_partitioning": Fraction(2 * (n + 2), n),
    }


# ---------------------------------------------------------------------------
# interpolation in 1/q


def interpolation_threshold(bound1: tuple, bound2: tuple) -> Fraction:
    """Zero crossing of a scale exponent that is affine in 1/q.

    Each bound is ``(q, e)``: at Lebesgue exponent q the norm is bounded by
    (scale)^e. Returns the q at which the interpolated exponent vanishes.
    """
    q1, e1 = _q(bound1[0]), _q(bound1[1])
    q2, e2 = _q(bound2[0]), _q(bound2[1])
    if q1 <= 0 or q2 <= 0:
        raise DomainError("Lebesgue exponents must be positive")
    if e1 == 0:
        return q1
    if e2 == 0:
        return q2
    if (e1 > 0) == (e2 > 0):
        raise DomainError("exponents have the same sign; no crossing")
    s1, s2 = 1 / q1, 1 / q2
    s = s1 - e1 * (s2 - s1) / (e2 - e1)
    return 1 / s


# ---------------------------------------------------------------------------
# sup over (lambda, mu) of a minimum of monomials


@dataclass(frozen=True)
class Monomial:
    """lambda^lam * mu^mu * delta^delta with rational powers."""

    lam: Fraction = Fraction(0)
    mu: Fraction = Fraction(0)
    delta: Fraction = Fraction(0)

    def __post_init__(self):
        for name in ("lam", "mu", "delta"):
            object.__setattr__(self, name, _q(getattr(self, name)))

    def scaled(self, t: Fraction) -> "Monomial":
        return Monomial(self.lam * t, self.mu * t, self.delta * t)

    def __mul__(self, other: "Monomial") -> "Monomial":
        return Monomial(self.lam + other.lam, self.mu + other.mu, self.delta + other.delta)


@dataclass(frozen=True)
class ScaleBound:
    """A norm bound at Lebesgue exponent ``q`` given as the minimum of monomials."""

    q: Fraction
    terms: tuple[Monomial, ...]

    def __post_init__(self):
        object.__setattr__(self, "q", _q(self.q))
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise DomainError("a bound needs at least one monomial")


def _as_monomial(t) -> Monomial:
    if isinstance(t, Monomial):
        return t
    lam, mu, delta = t
    return Monomial(lam, mu, delta)


def _objective_rows(terms: Sequence[Monomial]) -> list[tuple[Fraction, Fraction, Fraction]]:
    # In u = log(1/lambda)/L, w = log(mu)/L, L = log(1/delta) the log of a
    # term divided by L is  -delta - lam*u + mu*w ; return (const, du, dw).
    return [(-m.delta, -m.lam, m.mu) for m in terms]


def _has_ascent_ray(rows) -> bool:
    """Is there (du, dw) >= 0 along which every term grows strictly?"""
    gs = [(a, b) for _, a, b in rows]
    rays = [(Fraction(1), Fraction(0)), (Fraction(0), Fraction(1))]
    for a, b in gs:
        # boundary a*du + b*dw = 0 inside the closed quadrant
        if a != 0 and b != 0 and (a > 0) != (b > 0):
            rays.append((abs(b), abs(a)))
    # sort by angle using the slope dw/du (exact: compare cross products)
    uniq = []
    for r in rays:
        if not any(r[0] * s[1] == r[1] * s[0] for s in uniq):
            uniq.append(r)

    def cmp(r, s):
        c = r[0] * s[1] - r[1] * s[0]
        return -1 if c > 0 else (1 if c < 0 else 0)

    uniq.sort(key=cmp_to_key(cmp))
    cands = list(uniq)
    cands += [(r[0] + s[0], r[1] + s[1]) for r, s in zip(uniq, uniq[1:])]
    return any(min(a * du + b * dw for a, b in gs) > 0 for du, dw in cands)


def _solve3(A, b):
    """Cramer's rule over the rationals; None if singular."""
    def det(m):
        return (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
    d = det(A)
    if d == 0:
        return None
    out = []
    for j in range(3):
        m = [list(row) for row in A]
        for i in range(3):
            m[i][j] = b[i]
        out.append(det(m) / d)
    return out


@dataclass(frozen=True)
class WorstCase:
    exponent: Fraction
    lam_power: Fraction  # worst lambda = delta^lam_power
    mu_power: Fraction   # worst mu = delta^mu_power


def worst_case(*terms) -> WorstCase:
    """Exact sup over lambda in (0,1], mu >= 1 of min(terms), as a power of delta.

    Solved as a two-variable linear program in logarithmic coordinates;
    the optimum sits on a vertex so vertices are enumerated exactly.
    """
    mons = [_as_monomial(t) for t in terms]
    if not mons:
        raise DomainError("need at least one term")
    rows = _objective_rows(mons)
    if _has_ascent_ray(rows):
        raise UnboundedError("the supremum over (lambda, mu) is infinite")
    # variables (t, u, w); constraints t - du*u - dw*w <= const, -u <= 0, -w <= 0
    planes = [((Fraction(1), -a, -b), c) for c, a, b in rows]
    planes += [((Fraction(0), Fraction(1), Fraction(0)), Fraction(0)),
               ((Fraction(0), Fraction(0), Fraction(1)), Fraction(0))]
    best = None
    for trio in combinations(planes, 3):
        sol = _solve3([p[0] for p in trio], [p[1] for p in trio])
        if sol is None:
            continue
        t, u, w = sol
        if u < 0 or w < 0:
            continue
        if any(t > c + a * u + b * w for c, a, b in rows):
            continue
        if best is None or t > best[0] or (t == best[0] and (u, w) < (best[1], best[2])):
            best = (t, u, w)
    assert best is not None, "bounded LP without a vertex"
    t, u, w = best
    return WorstCase(exponent=-t, lam_power=u, mu_power=-w)


def worst_case_min_exponent(*terms) -> Fraction:
    """delta-exponent E with sup_{lambda, mu} min(terms) = delta^E."""
    return worst_case(*terms).exponent


# ---------------------------------------------------------------------------
# Hoelder interpolation of two bounds


def _interpolated_terms(low: ScaleBound, high: ScaleBound, theta: Fraction) -> list[Monomial]:
    return [a.scaled(theta) * b.scaled(1 - theta) for a, b in product(low.terms, high.terms)]


def _exponent_at(low, high, theta) -> Fraction | None:
    try:
        return worst_case_min_exponent(*_interpolated_terms(low, high, theta))
    except UnboundedError:
        return None


def _admissible(low, high, theta) -> bool:
    e = _exponent_at(low, high, theta)
    return e is not None and e >= 0


def pair_threshold(low: ScaleBound, high: ScaleBound, max_denominator: int = 10**6) -> Fraction:
    """Smallest q reachable by interpolating two bounds with a nonnegative delta-exponent.

    ``low`` holds at the smaller Lebesgue exponent. The admissible Hoelder
    weights form an interval (the exponent is concave in the weight), whose
    right end is located by rational bisection, snapped to a small-denominator
    rational and then certified exactly.
    """
    if not low.q < high.q:
        raise DomainError("low bound must sit at the smaller exponent")
    if not _admissible(low, high, Fraction(0)):
        raise DomainError("the high-exponent bound itself is not admissible")
    if _admissible(low, high, Fraction(1)):
        theta = Fraction(1)
    else:
        lo, hi = Fraction(0), Fraction(1)
        for _ in range(64):
            mid = (lo + hi) / 2
            if _admissible(low, high, mid):
                lo = mid
            else:
                hi = mid
        theta = lo.limit_denominator(max_denominator)
        if theta > hi or theta < lo:
            theta = lo
        step = Fraction(1, 2**40)
        # certify: theta admissible and anything beyond it is not
        if not _admissible(low, high, theta) or _admissible(low, high, theta + step):
            raise ArithmeticError("could not certify the interpolation endpoint exactly")
    inv_q = theta / low.q + (1 - theta) / high.q
    return 1 / inv_q


# Bound data: low-exponent bound at L^3 and high-exponent bound at L^{10/3}.
# Kakeya input enters through the delta-power of the second high term.

def _mon(lam="0", mu="0", delta="0") -> Monomial:
    return Monomial(Fraction(lam), Fraction(mu), Fraction(delta))


def kakeya_bound_pairs(inputs: str = "optimal") -> list[tuple[ScaleBound, ScaleBound]]:
    three, ten3 = Fraction(3), Fraction(10, 3)
    if inputs == "optimal":
        return [
            (ScaleBound(three, (_mon("-1/2", "1"),)), ScaleBound(ten3, (_mon("1/10", "-1/5"),))),
            (ScaleBound(three, (_mon(mu="1"),)), ScaleBound(ten3, (_mon(mu="-1/5"),))),
        ]
    if inputs == "wolff":
        gain = "1/10"
    elif inputs == "trivial":
        gain = "-1/5"
    else:
        raise DomainError(f"unknown Kakeya input set {inputs!r}")
    low = ScaleBound(three, (_mon(delta="-1/6"),))
    return [
        (low, ScaleBound(ten3, (_mon("1/10", "-1/5"), _mon("-1/2", "1", gain)))),
        (low, ScaleBound(ten3, (_mon(mu="-1/5"), _mon(mu="1", delta=gain)))),
    ]


def kakeya_improved_threshold(inputs: str = "optimal") -> Fraction:
    """Restriction-type threshold obtained from the bound pairs for a Kakeya input.

    ``optimal`` assumes a lossless maximal function bound on L^3, ``wolff``
    uses the 5/2-dimensional bound and ``trivial`` no Kakeya information.
    Both pieces of the argument must close, so the larger threshold wins.
    """
    return max(pair_threshold(lo, hi) for lo, hi in kakeya_bound_pairs(inputs))


def kakeya_threshold_from_gain(w) -> Fraction:
    """Threshold as a function of the L^{5/3} Kakeya loss exponent ``w``.

    A loss (1/kappa)^w turns the second high-exponent term into
    lambda^{-1/2} mu delta^{1/5 - w/2}; the result is interpolated against
    the L^3 bound delta^{-1/6}.
    """
    w = _q(w)
    e_hi = worst_case_min_exponent(_mon("1/10", "-1/5"), Monomial(Fraction(-1, 2), Fraction(1), Fraction(1, 5) - w / 2))
    return interpolation_threshold((3, Fraction(-1, 6)), (Fraction(10, 3), e_hi))


# ---------------------------------------------------------------------------
# log-log regression


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    residual_rms: float
    n: int

    def within(self, target: float, tol: float) -> bool:
        return abs(self.slope - target) <= tol

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "residual_rms": self.residual_rms, "n": self.n}


def loglog_fit(samples: Iterable[tuple[float, float]]) -> ExponentFit:
    pts = [(float(s), float(v)) for s, v in samples]
    if len(pts) < 2:
        raise DomainError("a log-log fit needs at least two samples")
    if any(not (s > 0 and v > 0) or not (math.isfinite(s) and math.isfinite(v)) for s, v in pts):
        raise DomainError("log-log fit needs positive finite scales and values")
    x = np.log([s for s, _ in pts])
    y = np.log([v for _, v in pts])
    if np.ptp(x) == 0:
        raise DomainError("scales must not all coincide")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    rms = float(np.sqrt(np.mean(resid**2)))
    return ExponentFit(float(slope), float(intercept), rms, len(pts))
