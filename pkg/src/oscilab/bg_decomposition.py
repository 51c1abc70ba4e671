"""Pointwise broad/narrow classification of cap coefficients and the
inequalities it certifies.

Coefficients c_alpha are one nonnegative number per cap (normally the
mollified majorant of T_alpha f on a K-ball). Everything here is relative
to c_* = max c_alpha, so classification is invariant under scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import CertificateError, DomainError, PreconditionError
from .surface_geometry import CapPartition, Surface, gauss_normal, transversality_volume

BROAD = "broad"
NARROW = "narrow-non-transverse"
COPLANAR = "transverse-coplanar"


@dataclass(frozen=True, eq=False)
class CapCoefficients:
    """Per-cap coefficients with cap centers at scale 1/K.

    Only the caps listed need be present, so sparse inputs at large K are
    cheap; ``count`` is the number of caps in the full partition.
    """

    values: np.ndarray
    centers: np.ndarray
    K: int
    K1: int
    count: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, float).ravel()
        c = np.asarray(self.centers, float)
        if c.ndim != 2 or len(c) != len(v):
            raise DomainError("one center per coefficient is required")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise DomainError("coefficients must be finite and nonnegative")
        if self.K < 1 or self.K1 < 1:
            raise DomainError("K and K1 must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "centers", c)
        if self.count is None:
            object.__setattr__(self, "count", len(v))

    @classmethod
    def from_partition(cls, partition: CapPartition, values, K1: int) -> "CapCoefficients":
        return cls(values, partition.centers(), partition.K, K1, len(partition))

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def scaled(self, s: float) -> "CapCoefficients":
        return CapCoefficients(self.values * s, self.centers, self.K, self.K1, self.count)

    def star(self) -> int:
        """Index of the largest coefficient, lowest index on ties."""
        return int(np.argmax(self.values))


def random_cap_coefficients(rng: np.random.Generator, K: int, K1: int) -> CapCoefficients:
    """Fuzz input on the K x K partition: one to five dominant caps plus sparse
    noise whose level ranges over seven decades."""
    part = CapPartition(K, 2)
    c = np.zeros(len(part))
    k = int(rng.integers(1, 6))
    hot = rng.choice(len(part), size=k, replace=False)
    c[hot] = rng.random(k) + 0.1
    noise = rng.random(len(part)) * 10.0 ** rng.uniform(-8, -1)
    c += noise * (rng.random(len(part)) < 0.3)
    return CapCoefficients.from_partition(part, c, K1)


@dataclass(frozen=True)
class PointClass:
    tag: str
    indices: tuple[int, ...]
    alpha_star: int
    c_star: float
    threshold: float
    line: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    # for the coplanar case: whether every cap off the 10^3 K1/K strip
    # around the line is below threshold
    strip_condition: bool | None = None

    def as_row(self) -> dict:
        return {"tag": self.tag, "witness": " ".join(str(i) for i in self.indices),
                "alpha_star": self.alpha_star}


# ---------------------------------------------------------------------------
# three dimensions


def _dist_to_line(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    r = p - a
    cross = r[..., 0] * d[1] - r[..., 1] * d[0]
    return np.abs(cross) / np.hypot(d[0], d[1])


def _hull(points: np.ndarray) -> list[int]:
    """Indices of convex hull vertices, counter-clockwise (monotone chain)."""
    order = sorted(range(len(points)), key=lambda i: (points[i, 0], points[i, 1]))
    if len(order) < 3:
        return order

    def cross(o, a, b):
        return ((points[a, 0] - points[o, 0]) * (points[b, 1] - points[o, 1])
                - (points[a, 1] - points[o, 1]) * (points[b, 0] - points[o, 0]))

    lower: list[int] = []
    for i in order:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], i) <= 0:
            lower.pop()
        lower.append(i)
    upper: list[int] = []
    for i in reversed(order):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], i) <= 0:
            upper.pop()
        upper.append(i)
    return lower[:-1] + upper[:-1]


def _ordered_triangles(P: np.ndarray, tri):
    """The two orderings (alpha, beta, gamma) with |ab| >= |ag|: ab the middle
    side, then ab the longest side, alpha always the endpoint nearer gamma."""
    i, j, k = tri
    sides = sorted(((float(np.linalg.norm(P[u] - P[v])), (u, v), w) for (u, v), w in
                    (((i, j), k), ((i, k), j), ((j, k), i))), key=lambda s: s[0])
    for _, (a, b), g in (sides[1], sides[2]):
        if np.linalg.norm(P[b] - P[g]) < np.linalg.norm(P[a] - P[g]):
            a, b = b, a
        yield a, b, g


def _satisfies_noncoplanar(P: np.ndarray, a: int, b: int, g: int, margin: float) -> bool:
    ab = np.linalg.norm(P[a] - P[b])
    ag = np.linalg.norm(P[a] - P[g])
    if ab == 0:
        return False
    h = float(_dist_to_line(P[g], P[a], P[b]))
    return bool(ab >= ag >= h > margin)


def _best_heights(P: np.ndarray, i, j, k) -> np.ndarray:
    """Twice the area over the middle side length: the largest height that
    can appear in the ordered condition for the triangle."""
    a, b, c = P[i], P[j], P[k]
    area2 = np.abs((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                   - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))
    sides = np.sort(np.stack([np.linalg.norm(a - b, axis=-1), np.linalg.norm(a - c, axis=-1),
                              np.linalg.norm(b - c, axis=-1)]), axis=0)
    mid = sides[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(mid > 0, area2 / mid, 0.0)


def find_noncoplanar_triple(P: np.ndarray, margin: float) -> tuple[int, int, int] | None:
    """Exact search for an ordered triple with
    |y_a - y_b| >= |y_a - y_g| >= dist(y_g, line(y_a, y_b)) > margin.

    For a triangle with sides s1 <= s2 <= s3 the side ab can be s2 or s3
    (taking a as the endpoint nearer g). The height onto s2 is the larger
    one and bounds both, so 2 area / s2 > margin filters candidates; each
    survivor is then checked in both orderings. Hull vertices are tried
    first; the full set is searched only if they fail.
    """
    m = len(P)
    if m < 3:
        return None
    diam = max(float(np.max(np.linalg.norm(P - p, axis=1))) for p in P)
    if diam <= margin:
        return None
    hull = _hull(P)
    for pool in (hull, list(range(m))):
        if len(pool) < 3:
            continue
        if len(pool) <= 120:
            idx = np.array(list(combinations(pool, 3)))
            h = _best_heights(P, idx[:, 0], idx[:, 1], idx[:, 2])
            for t in np.flatnonzero(h > margin):
                for tri in _ordered_triangles(P, tuple(int(v) for v in idx[t])):
                    if _satisfies_noncoplanar(P, *tri, margin):
                        return tri
            continue
        pool_arr = np.array(pool)
        for x in range(len(pool)):
            for y in range(x + 1, len(pool) - 1):
                rest = pool_arr[y + 1:]
                h = _best_heights(P, np.full(len(rest), pool[x]), np.full(len(rest), pool[y]), rest)
                for t in np.flatnonzero(h > margin):
                    for tri in _ordered_triangles(P, (pool[x], pool[y], int(rest[t]))):
                        if _satisfies_noncoplanar(P, *tri, margin):
                            return tri
    return None


def classify_point_3d(coeffs: CapCoefficients, *, margin_const: float = 1e3, line_const: float = 1e3,
                      threshold_power: int = 4) -> PointClass:
    """Test the non-coplanar, non-transverse and transverse-coplanar cases in that order.

    ``margin_const / K`` is the non-collinearity margin and
    ``line_const * K1 / K`` the strip half-width used for the coplanar report.
    """
    if coeffs.dim != 2:
        raise DomainError("the three-case classification lives on a two-dimensional parameter domain")
    c = coeffs.values
    P = coeffs.centers
    K, K1 = coeffs.K, coeffs.K1
    star = coeffs.star()
    cstar = float(c[star])
    thr = cstar * float(K) ** (-threshold_power)
    big = np.flatnonzero(c > thr)

    tri = find_noncoplanar_triple(P[big], margin_const / K)
    if tri is not None:
        return PointClass(BROAD, tuple(int(big[i]) for i in tri), star, cstar, thr)

    far = big[np.linalg.norm(P[big] - P[star], axis=1) > 1.0 / K1]
    if len(far) == 0:
        return PointClass(NARROW, (star,), star, cstar, thr)

    # largest coefficient among the far caps, lowest index on ties
    star2 = int(far[np.argmax(c[far])])
    a, b = P[star], P[star2]
    d = (b - a) / np.linalg.norm(b - a)
    off = _dist_to_line(P[big], a, b) > line_const * K1 / K
    return PointClass(COPLANAR, (star, star2), star, cstar, thr,
                      line=(tuple(a.tolist()), tuple(d.tolist())), strip_condition=not bool(off.any()))


# ---------------------------------------------------------------------------
# n dimensions


@dataclass(frozen=True, eq=False)
class NdLevel:
    m: int
    kind: str                       # "broad" or "descend"
    indices: tuple[int, ...] = ()   # broad witness
    volume: float = 0.0
    basis: np.ndarray | None = None  # rows span V_{m-1} when descending
    radius: float = 0.0              # neighbourhood radius actually needed
    scale: float = 0.0               # the nominal 1/K_m neighbourhood
    members: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    threshold: float = 0.0

    @property
    def within_scale(self) -> bool:
        return self.radius <= self.scale


def _dist_to_subspace(N: np.ndarray, basis: np.ndarray) -> np.ndarray:
    if basis.size == 0:
        return np.linalg.norm(N, axis=-1)
    proj = (N @ basis.T) @ basis
    return np.linalg.norm(N - proj, axis=-1)


def _greedy_transverse(N: np.ndarray, order: np.ndarray, m: int, tau: float, starts: int = 32):
    """Greedy volume growth from several starting caps; returns (tuple, volume)."""
    best = (None, 0.0)
    for s in order[:starts]:
        chosen = [int(s)]
        for _ in range(m - 1):
            vols = np.array([transversality_volume(N[chosen + [int(j)]]) if j not in chosen else -1.0
                             for j in order])
            j = int(order[int(np.argmax(vols))])
            chosen.append(j)
        vol = transversality_volume(N[chosen])
        if vol > best[1]:
            best = (tuple(chosen), vol)
        if vol > tau:
            return tuple(chosen), vol
    return best


def classify_point_nd(coeffs: CapCoefficients, surface: Surface, m: int, V=None, *, Km: float | None = None,
                      active=None, transversality: float | None = None) -> NdLevel:
    """One level of the n-dimensional descent.

    Among ``active`` caps, those with c > Km^{-m} max are significant. Either
    m of them have normals spanning volume > transversality (default
    Km^{-(m-1)}), or an (m-1)-dimensional subspace is fitted to the
    coefficient-weighted normals by SVD and every significant cap lies within
    ``radius`` of it.
    """
    n = surface.n
    if m < 2:
        raise DomainError("the descent stops at m = 2")
    if m > n:
        raise DomainError("level exceeds the ambient dimension")
    if coeffs.dim != n - 1:
        raise DomainError("coefficients do not match the surface dimension")
    Km = float(coeffs.K if Km is None else Km)
    tau = Km ** (-(m - 1)) if transversality is None else float(transversality)
    basis_m = np.eye(n) if V is None else np.atleast_2d(np.asarray(V, float))
    if basis_m.shape != (m, n):
        raise DomainError("V must have m orthonormal rows")
    active = np.arange(len(coeffs.values)) if active is None else np.asarray(active, int)
    c = coeffs.values[active]
    N = gauss_normal(surface, coeffs.centers[active])
    cmax = float(c.max()) if len(c) else 0.0
    thr = cmax * Km ** (-m)
    sig = np.flatnonzero(c > thr)
    order = sig[np.lexsort((sig, -c[sig]))]
    if len(sig) >= m:
        tup, vol = _greedy_transverse(N, order, m, tau)
        if tup is not None and vol > tau:
            return NdLevel(m, "broad", tuple(int(active[i]) for i in tup), vol, threshold=thr)
    W = N[sig] * c[sig, None] if len(sig) else np.zeros((1, n))
    W = W @ basis_m.T @ basis_m
    _, _, Vt = np.linalg.svd(W, full_matrices=True)
    new = Vt[:m - 1]
    # keep the new basis inside V_m
    new = new @ basis_m.T @ basis_m
    q, _ = np.linalg.qr(new.T)
    new = q.T[:m - 1]
    dist = _dist_to_subspace(N, new)
    radius = float(dist[sig].max()) if len(sig) else 0.0
    members = active[dist <= radius * (1 + 1e-12) + 1e-15]
    return NdLevel(m, "descend", basis=new, radius=radius, scale=1.0 / Km, members=members, threshold=thr)


def classify_nd(coeffs: CapCoefficients, surface: Surface, Ks: dict | None = None, **kw) -> list[NdLevel]:
    """Run the descent from m = n until a broad tuple appears or m = 2 is exhausted."""
    n = surface.n
    Ks = Ks or {}
    levels: list[NdLevel] = []
    V = None
    active = None
    for m in range(n, 1, -1):
        lev = classify_point_nd(coeffs, surface, m, V, Km=Ks.get(m), active=active, **kw)
        levels.append(lev)
        if lev.kind == "broad":
            break
        V, active = lev.basis, lev.members
    return levels


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class Certificate:
    lhs: float
    rhs: float
    factor: float
    holds: bool

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else (0.0 if self.lhs == 0 else math.inf)


def certificate_factor(K: float, n: int, count: int, threshold_power: int) -> float:
    """max(#caps, K^{n-1}) * K^t: bounds sum c_alpha by the witnesses' geometric mean."""
    return max(float(count), float(K) ** (n - 1)) * float(K) ** threshold_power


def broad_pointwise_certificate(tf_value: complex, coeffs: CapCoefficients, witness: Sequence[int], *,
                                n: int = 3, threshold_power: int | None = None, eps_moll: float = 0.1,
                                strict: bool = True) -> Certificate:
    """Check |Tf(x)| <= factor * (prod c_witness)^{1/k} * (1 + eps_moll)."""
    t = (4 if n == 3 else n) if threshold_power is None else threshold_power
    w = np.asarray(coeffs.values[list(witness)], float)
    gm = float(np.exp(np.mean(np.log(w)))) if np.all(w > 0) else 0.0
    factor = certificate_factor(coeffs.K, n, coeffs.count, t)
    lhs = abs(complex(tf_value))
    rhs = factor * gm * (1 + eps_moll)
    cert = Certificate(lhs, rhs, factor, lhs <= rhs)
    if strict and not cert.holds:
        raise CertificateError(f"|Tf| = {lhs:.6g} exceeds {rhs:.6g}; classification is inconsistent")
    return cert


# ---------------------------------------------------------------------------
# quadruple filter


@dataclass(frozen=True)
class QuadrupleResult:
    accepted: bool
    reason: str
    bound: Fraction | None = None        # on |t1 - t2| and |t1' - t2'|
    bound_const: Fraction | None = None  # C' with bound = C' K1^2 / K
    diffs: tuple[Fraction, Fraction] | None = None

    @property
    def conclusion_holds(self) -> bool | None:
        if not self.accepted:
            return None
        return max(abs(self.diffs[0]), abs(self.diffs[1])) <= self.bound


def quadruple_bound(K, K1, C, sep_const) -> tuple[Fraction, Fraction]:
    """Bound B on |t1 - t2| implied by the two constraints, and C' = B K / K1^2.

    With a = t1 - t2, b = t1' - t2', s = t1 + t2, s' = t1' + t2' and
    eps = C K1 / K, the constraints read |a - b| <= eps and |a s - b s'| <= eps.
    Then a (s - s') = (a s - b s') - (a - b) s', so |a| |s - s'| <= 3 eps
    because s' <= 2. Since s - s' = 2 (t1 - t1') - (a - b) we have
    |s - s'| >= 2 sep - eps with sep = sep_const / K1, hence
    |a| <= 3 eps / (2 sep - eps), and |b| <= |a| + eps.
    """
    K, K1, C, sep_const = (Fraction(v) for v in (K, K1, C, sep_const))
    eps = C * K1 / K
    sep = sep_const / K1
    if 2 * sep <= eps:
        raise PreconditionError("separation too small relative to C K1 / K for any bound")
    a_bound = 3 * eps / (2 * sep - eps)
    B = a_bound + eps
    return B, B * K / (K1 * K1)


def coplanar_quadruple_filter(t1, t2, t1p, t2p, K, K1, C=1, *, sep_const=10**6) -> QuadrupleResult:
    """Accept a quadruple of line parameters iff both cancellation constraints hold.

    All arithmetic is exact on the rational values of the inputs.
    """
    t1, t2, t1p, t2p = (Fraction(v) for v in (t1, t2, t1p, t2p))
    K, K1, Cf, sep = Fraction(K), Fraction(K1), Fraction(C), Fraction(sep_const)
    if not all(0 <= t <= 1 for t in (t1, t2, t1p, t2p)):
        return QuadrupleResult(False, "precondition: parameters must lie in [0, 1]")
    if abs(t1 - t2) > 2 / K1 or abs(t1p - t2p) > 2 / K1:
        return QuadrupleResult(False, "precondition: pair spread exceeds 2/K1")
    if not abs(t1 - t1p) > sep / K1:
        return QuadrupleResult(False, "precondition: pairs are not separated by sep/K1")
    eps = Cf * K1 / K
    if abs(t1 - t2 - t1p + t2p) > eps:
        return QuadrupleResult(False, "linear constraint fails")
    if abs(t1 * t1 - t2 * t2 - t1p * t1p + t2p * t2p) > eps:
        return QuadrupleResult(False, "quadratic constraint fails")
    B, Cp = quadruple_bound(K, K1, Cf, sep)
    return QuadrupleResult(True, "accepted", B, Cp, (t1 - t2, t1p - t2p))


@dataclass(frozen=True)
class SweepReport:
    checked: int
    accepted: int
    violations: int
    bound_units: Fraction


def quadruple_sweep(K: int, K1: int, C: int = 1, sep_const: int = 10, anchor_step: int | None = None,
                    anchors=None) -> SweepReport:
    """Exhaustive integer sweep of the filter at resolution 1/K.

    Parameters are integers u = t K. For every anchor pair (t1, t1') the
    spreads a = t1 - t2 and b = t1' - t2' range over all integers with
    |a|, |b| <= 2K/K1; the linear constraint is applied as a band, the
    quadratic one exactly in integers, and every survivor is checked
    against the derived bound.
    """
    if anchors is None:
        step = anchor_step or K // 20
        grid = range(0, K + 1, step)
        anchors = [(u, v) for u in grid for v in grid if K1 * abs(u - v) > sep_const * K]
    amax = (2 * K) // K1
    eps_units = C * K1                    # eps * K
    quad_units = C * K1 * K               # eps * K^2
    B, _ = quadruple_bound(K, K1, C, sep_const)
    bound_units = B * K
    limit = math.floor(bound_units)
    a = np.arange(-amax, amax + 1, dtype=np.int64)[:, None]
    b = a + np.arange(-eps_units, eps_units + 1, dtype=np.int64)[None, :]
    in_range = np.abs(b) <= amax
    checked = accepted = violations = 0
    for u1, v1 in anchors:
        valid = in_range & (u1 - a >= 0) & (u1 - a <= K) & (v1 - b >= 0) & (v1 - b <= K)
        # t1^2 - t2^2 = a (2 t1 - a) in units^2
        q = a * (2 * u1 - a) - b * (2 * v1 - b)
        acc = valid & (np.abs(q) <= quad_units)
        checked += int(valid.sum())
        accepted += int(acc.sum())
        spread = np.maximum(np.abs(a), np.abs(b))
        violations += int(np.sum(acc & (spread > limit)))
    return SweepReport(checked, accepted, violations, bound_units)


# ---------------------------------------------------------------------------
# hyperbolic directions


def hyperbolic_degenerate_direction_test(v, K1: float) -> str:
    v = np.asarray(v, float)
    if v.shape != (2,) or abs(np.linalg.norm(v) - 1) > 1e-9:
        raise DomainError("direction must be a unit vector in the plane")
    return "strip-case" if min(abs(v[0]), abs(v[1])) < 1.0 / K1 else "generic"


# ---------------------------------------------------------------------------
# evaluation pipeline


@dataclass(frozen=True, eq=False)
class BallDecomposition:
    center: np.ndarray
    coeffs: CapCoefficients
    tf: complex
    point_class: PointClass
    certificate: Certificate | None


def decompose_ball(phase, f, partition: CapPartition, a, K1: int, *, margin_const: float = 1e3,
                   line_const: float = 1e3, eps_moll: float = 0.1, threads: int | None = None) -> BallDecomposition:
    """Majorant coefficients on the K-ball around ``a``, its class, and the broad certificate."""
    from .oscillatory_core import CellRegion, evaluate_T, mollified_majorant

    a = np.asarray(a, float)
    K = partition.K
    vals = np.zeros(len(partition))
    for i in range(len(partition)):
        cell = CellRegion(partition, i)
        if np.any(f.restrict(cell).values):
            vals[i] = mollified_majorant(phase, f, cell, a, K, threads=threads).value
    coeffs = CapCoefficients.from_partition(partition, vals, K1)
    pc = classify_point_3d(coeffs, margin_const=margin_const, line_const=line_const)
    tf = complex(evaluate_T(phase, f, a[None, :], threads=threads)[0])
    cert = None
    if pc.tag == BROAD:
        cert = broad_pointwise_certificate(tf, coeffs, pc.indices, n=3, eps_moll=eps_moll)
    return BallDecomposition(a, coeffs, tf, pc, cert)
