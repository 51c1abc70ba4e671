"""Rasterized δ-tube families and Kakeya-type integrals.

Tubes are δ-neighbourhoods of polynomial curves ``γ: [0, 1] -> R^n``.
Membership of a lattice node is decided by its distance to the core,
found by nearest-parameter search (coarse seeds, Newton polish) for
curved cores and by clamped projection for segments.  All integrals are
lattice sums over a cell-centred grid whose spacing resolves the tubes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as cheb
from numpy.polynomial import polynomial as poly

from .errors import DomainError, ResolutionError
from .parallel import ordered_map

NARROW = "narrow"
BROAD = "broad"

_TIE_TOL = 1e-12
_CANDIDATE_CHUNK = 1 << 21
_TRIPLE_CHUNK = 1 << 21


# ----------------------------------------------------------------------------
# Curves and tubes
# ----------------------------------------------------------------------------


class PolyCurve:
    """Polynomial curve on [0, 1]; ``coeffs[i]`` holds ascending monomial
    coefficients of coordinate i."""

    def __init__(self, coeffs, c2_bound: float | None = None, max_degree: int = 32):
        c = np.atleast_2d(np.asarray(coeffs, dtype=float))
        if c.ndim != 2 or c.shape[1] < 1:
            raise DomainError("coefficients must be an (n, d+1) array")
        # trim trailing zero columns so the degree is honest
        last = c.shape[1]
        while last > 1 and not np.any(c[:, last - 1]):
            last -= 1
        self.coeffs = c[:, :last].copy()
        self.coeffs.setflags(write=False)
        if self.degree > max_degree:
            raise DomainError(f"degree {self.degree} exceeds the configured maximum {max_degree}")
        self._d1 = poly.polyder(self.coeffs.T, axis=0) if last > 1 else np.zeros((1, self.dim))
        self._d2 = poly.polyder(self._d1, axis=0) if self._d1.shape[0] > 1 else np.zeros((1, self.dim))
        if c2_bound is not None and self.c2_norm() > c2_bound * (1 + 1e-9):
            raise DomainError(f"sup |γ''| = {self.c2_norm():.4g} exceeds the bound {c2_bound}")
        self.c2_bound = c2_bound

    @classmethod
    def segment(cls, a, b) -> "PolyCurve":
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return cls(np.stack([a, b - a], axis=1))

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def is_straight(self) -> bool:
        return self.degree <= 1

    def point(self, t) -> np.ndarray:
        return _polyval_rows(self.coeffs.T, np.asarray(t, dtype=float))

    def deriv(self, t) -> np.ndarray:
        return _polyval_rows(self._d1, np.asarray(t, dtype=float))

    def second(self, t) -> np.ndarray:
        return _polyval_rows(self._d2, np.asarray(t, dtype=float))

    def c2_norm(self, samples: int = 1025) -> float:
        if self.degree <= 3:
            # γ'' is affine, so its norm peaks at an endpoint
            return float(np.linalg.norm(self.second(np.array([0.0, 1.0])), axis=-1).max())
        return float(np.linalg.norm(self.second(np.linspace(0, 1, samples)), axis=-1).max())

    def length(self, samples: int = 257) -> float:
        if self.is_straight:
            return float(np.linalg.norm(self.coeffs[:, 1])) if self.degree == 1 else 0.0
        p = self.point(np.linspace(0, 1, samples))
        return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())

    def to_dict(self) -> dict:
        return {"coefficients": self.coeffs.tolist()}

    def __repr__(self) -> str:
        return f"PolyCurve(dim={self.dim}, degree={self.degree})"


def _polyval_rows(c: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate ascending coefficient rows ``c[k]`` (shape (d+1, n)) at t;
    result has shape t.shape + (n,)."""
    out = np.zeros(t.shape + (c.shape[1],))
    for k in range(c.shape[0] - 1, -1, -1):
        out = out * t[..., None] + c[k]
    return out


@dataclass(frozen=True)
class Tube:
    core: PolyCurve
    delta: float
    base: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError("tube radius must be positive")
        if self.base is not None:
            object.__setattr__(self, "base", tuple(float(v) for v in self.base))

    @property
    def dim(self) -> int:
        return self.core.dim

    def nearest(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Distance to the core and the minimizing parameter for each point.
        Among equidistant core points the lowest parameter wins."""
        return _nearest(self.core, np.atleast_2d(np.asarray(points, dtype=float)))

    def contains(self, points) -> np.ndarray:
        return self.nearest(points)[0] <= self.delta

    def inside_ball(self, radius: float = 1.0) -> bool:
        pts = self.core.point(np.linspace(0, 1, 129))
        return bool(np.linalg.norm(pts, axis=1).max() <= radius + 1e-12)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        pts = self.core.point(np.linspace(0, 1, 257 if not self.core.is_straight else 2))
        pad = self.delta
        if not self.core.is_straight:
            # the sampled polyline can undershoot the curve by at most C2·step²/8
            pad += self.core.c2_norm() / (8 * 256**2)
        return pts.min(axis=0) - pad, pts.max(axis=0) + pad

    def to_dict(self) -> dict:
        return {"coefficients": self.core.coeffs.tolist(), "delta": self.delta,
                "base": None if self.base is None else list(self.base)}

    @classmethod
    def from_dict(cls, d: dict) -> "Tube":
        return cls(PolyCurve(d["coefficients"]), float(d["delta"]), d.get("base"))


def _nearest(curve: PolyCurve, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if curve.degree == 0:
        return np.linalg.norm(x - curve.coeffs[:, 0], axis=1), np.zeros(len(x))
    if curve.is_straight:
        p0 = curve.coeffs[:, 0]
        d = curve.coeffs[:, 1]
        t = np.clip((x - p0) @ d / (d @ d), 0.0, 1.0)
        return np.linalg.norm(x - p0 - t[:, None] * d, axis=1), t
    return _nearest_curved(curve, x)


def _newton_polish(curve: PolyCurve, x: np.ndarray, t: np.ndarray, iters: int = 12) -> np.ndarray:
    """Minimize |γ(t) - x| over t ∈ [0, 1] from starting parameters ``t``
    (shape (m,) or (m, k)); x has shape (m, n)."""
    xb = x if t.ndim == 1 else np.broadcast_to(x[:, None, :], t.shape + (x.shape[1],))
    for _ in range(iters):
        g = curve.point(t) - xb
        d1 = curve.deriv(t)
        grad = (g * d1).sum(-1)
        speed = (d1 * d1).sum(-1)
        hess = np.maximum(speed + (g * curve.second(t)).sum(-1), 0.5 * speed + 1e-300)
        t_new = np.clip(t - grad / hess, 0.0, 1.0)
        moved = np.abs(t_new - t).max() if t.size else 0.0
        t = t_new
        if moved < 1e-13:
            break
    return t


def _nearest_curved(curve: PolyCurve, x: np.ndarray, seeds: int | None = None,
                    keep: int = 3) -> tuple[np.ndarray, np.ndarray]:
    if seeds is None:
        seeds = int(np.clip(16 * curve.degree + 8 * math.ceil(curve.length()), 33, 513))
    ts = np.linspace(0.0, 1.0, seeds)
    samples = curve.point(ts)
    keep = min(keep, seeds)
    out_d = np.empty(len(x))
    out_t = np.empty(len(x))
    step = max(1, (1 << 20) // seeds)
    for s in range(0, len(x), step):
        xc = x[s:s + step]
        d2 = ((xc[:, None, :] - samples[None]) ** 2).sum(-1)
        # local minima of the sampled distance seed separate basins
        pad = np.pad(d2, ((0, 0), (1, 1)), constant_values=np.inf)
        local = (d2 <= pad[:, :-2]) & (d2 <= pad[:, 2:])
        score = np.where(local, d2, np.inf)
        idx = np.argsort(score, axis=1, kind="stable")[:, :keep]
        t = _newton_polish(curve, xc, ts[idx])
        dist = np.linalg.norm(curve.point(t) - xc[:, None, :], axis=-1)
        # seeds that were not sampled local minima carry inf scores; drop them
        dist = np.where(np.isfinite(np.take_along_axis(score, idx, axis=1)), dist, np.inf)
        best = dist.min(axis=1, keepdims=True)
        tied = dist <= best + _TIE_TOL * (1.0 + best)
        out_d[s:s + step] = best[:, 0]
        out_t[s:s + step] = np.where(tied, t, np.inf).min(axis=1)
    return out_d, out_t


def tangent_field(tube: Tube, x) -> np.ndarray:
    """Unit tangent of the core at the point nearest to ``x``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    dist, t = tube.nearest(pts)
    if np.any(dist > tube.delta * (1 + 1e-12)):
        raise DomainError("point lies outside the tube")
    v = _unit_tangents(tube.core, t)
    return v[0] if single else v


def _unit_tangents(curve: PolyCurve, t: np.ndarray) -> np.ndarray:
    v = curve.deriv(t)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise DomainError("core has a vanishing tangent")
    return v / n


@dataclass
class TubeFamily:
    tubes: list[Tube]
    dim: int | None = None
    angle_condition: bool = False

    def __post_init__(self):
        self.tubes = list(self.tubes)
        if self.dim is None:
            if not self.tubes:
                raise DomainError("an empty family needs an explicit dimension")
            self.dim = self.tubes[0].dim
        if any(t.dim != self.dim for t in self.tubes):
            raise DomainError("tubes of different dimensions in one family")
        if self.angle_condition and len(self.tubes) > 1:
            if any(t.base is None for t in self.tubes):
                raise DomainError("the angle condition needs base points")
            base = np.array([t.base for t in self.tubes])
            sep = _min_pair_distance(base)
            if sep < self.delta * (1 - 1e-9):
                raise DomainError(f"base points are {sep:.3g}-separated, below δ = {self.delta}")

    def __len__(self) -> int:
        return len(self.tubes)

    def __iter__(self):
        return iter(self.tubes)

    @property
    def delta(self) -> float:
        ds = {t.delta for t in self.tubes}
        if len(ds) != 1:
            raise DomainError("family does not share a single δ")
        return ds.pop()

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        b = [t.bounds() for t in self.tubes]
        return np.min([x[0] for x in b], axis=0), np.max([x[1] for x in b], axis=0)

    def extended(self, more: Iterable[Tube]) -> "TubeFamily":
        return TubeFamily(self.tubes + list(more), self.dim, False)

    def to_json(self) -> str:
        return json.dumps([t.to_dict() for t in self.tubes])

    @classmethod
    def from_json(cls, text: str, angle_condition: bool = False) -> "TubeFamily":
        return cls([Tube.from_dict(d) for d in json.loads(text)], angle_condition=angle_condition)


def _min_pair_distance(pts: np.ndarray) -> float:
    best = np.inf
    for i in range(len(pts) - 1):
        best = min(best, float(np.linalg.norm(pts[i + 1:] - pts[i], axis=1).min()))
    return best


def angle_condition_ratio(family: TubeFamily) -> float:
    """Smallest angle(v_i, v_j) / |y_i - y_j| over all pairs of straight tubes."""
    if not all(t.core.is_straight for t in family):
        raise DomainError("the pairwise check uses constant directions of straight tubes")
    v = np.array([t.core.coeffs[:, 1] / np.linalg.norm(t.core.coeffs[:, 1]) for t in family])
    y = np.array([t.base for t in family])
    best = np.inf
    for i in range(len(v) - 1):
        cos = np.clip(v[i + 1:] @ v[i], -1.0, 1.0)
        ang = np.arccos(cos)
        gap = np.linalg.norm(y[i + 1:] - y[i], axis=1)
        ok = gap > 0
        if np.any(ok):
            best = min(best, float((ang[ok] / gap[ok]).min()))
    return best


# ----------------------------------------------------------------------------
# Family constructors
# ----------------------------------------------------------------------------


def delta_grid(delta: float, dim: int, lo: float = -0.5, hi: float = 0.5) -> np.ndarray:
    """Cell-centred points at spacing δ covering [lo, hi)^dim."""
    m = max(1, int(round((hi - lo) / delta)))
    ax = lo + (np.arange(m) + 0.5) * (hi - lo) / m
    return np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1).reshape(-1, dim)


def paraboloid_family(delta: float, dim: int = 3, half_length: float = 1.0,
                      ys: np.ndarray | None = None) -> TubeFamily:
    """Straight tubes through the origin pointing along (y, 1)/|(y, 1)| for y
    on the δ-grid of [-1/2, 1/2]^(dim-1): a bush with δ-separated directions."""
    ys = delta_grid(delta, dim - 1) if ys is None else np.atleast_2d(ys)
    tubes = []
    for y in ys:
        v = np.append(y, 1.0)
        v = v / np.linalg.norm(v) * half_length
        tubes.append(Tube(PolyCurve.segment(-v, v), delta, tuple(y)))
    return TubeFamily(tubes, dim, angle_condition=True)


def scattered_family(delta: float, dim: int = 3, seed: int = 0, spread: float = 0.5,
                     half_length: float = 0.5) -> TubeFamily:
    """Same directions as :func:`paraboloid_family` but each tube is centred at
    an independent uniform point of [-spread, spread]^dim."""
    ys = delta_grid(delta, dim - 1)
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-spread, spread, size=(len(ys), dim))
    tubes = []
    for y, c in zip(ys, centers):
        v = np.append(y, 1.0)
        v = v / np.linalg.norm(v) * half_length
        tubes.append(Tube(PolyCurve.segment(c - v, c + v), delta, tuple(y)))
    return TubeFamily(tubes, dim, angle_condition=True)


def transverse_family(axis: int, count: int, delta: float, dim: int = 3, seed: int = 0,
                      tilt: float = 0.25, offset: float | None = None,
                      half_length: float = 0.9) -> TubeFamily:
    """``count`` straight tubes with directions near ``e_axis`` (Gaussian tilt),
    each passing through a uniform point of the ball of radius ``offset``
    (default δ) about the origin."""
    rng = np.random.default_rng([seed, axis, count])
    offset = delta if offset is None else offset
    tubes = []
    for _ in range(count):
        v = tilt * rng.standard_normal(dim)
        v[axis] = 1.0
        v /= np.linalg.norm(v)
        c = rng.standard_normal(dim)
        c *= offset * rng.uniform() ** (1 / dim) / np.linalg.norm(c)
        base = tuple(np.delete(v, axis))
        tubes.append(Tube(PolyCurve.segment(c - half_length * v, c + half_length * v), delta, base))
    return TubeFamily(tubes, dim)


def crossing_pair(theta: float, delta: float, dim: int = 4, half_length: float = 0.9) -> tuple[Tube, Tube]:
    """Two straight tubes through the origin, along e_1 and cos θ e_1 + sin θ e_2."""
    v1 = np.zeros(dim)
    v1[0] = 1.0
    v2 = np.zeros(dim)
    v2[:2] = math.cos(theta), math.sin(theta)
    return (Tube(PolyCurve.segment(-half_length * v1, half_length * v1), delta),
            Tube(PolyCurve.segment(-half_length * v2, half_length * v2), delta))


def phase_curve(y, shifted: bool = False) -> PolyCurve:
    """Core curve of the twisted example in R^3, parametrized by x3 = t in [0, 1]:
    x1 = y1 t + y2 t^2 (+ y2 when shifted), x2 = y1 t^2 + y2 (t + t^3)."""
    y1, y2 = map(float, y)
    return PolyCurve([[y2 if shifted else 0.0, y1, y2, 0.0],
                      [0.0, y2, y1, y2],
                      [0.0, 1.0, 0.0, 0.0]])


def curved_family_from_phase(delta: float, shifted: bool = False) -> TubeFamily:
    """One tube per point of the δ-grid of [-1/2, 1/2]^2 (N = δ^-2 tubes)."""
    if not 0 < delta <= 0.25:
        raise DomainError("δ must lie in (0, 1/4]")
    ys = delta_grid(delta, 2)
    return TubeFamily([Tube(phase_curve(y, shifted), delta, tuple(y)) for y in ys], 3)


# ----------------------------------------------------------------------------
# Raster
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class RasterGrid:
    """Cell-centred lattice: node i along an axis sits at lo + (i + 1/2) h."""

    lo: tuple[float, ...]
    counts: tuple[int, ...]
    spacing: float

    @classmethod
    def covering(cls, lo, hi, spacing: float) -> "RasterGrid":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        counts = np.maximum(1, np.ceil((hi - lo) / spacing - 1e-9).astype(int))
        return cls(tuple(lo.tolist()), tuple(int(c) for c in counts), float(spacing))

    @classmethod
    def for_families(cls, *families: TubeFamily, refine: int = 2) -> "RasterGrid":
        if refine < 2:
            raise ResolutionError("raster spacing must be at most δ/2", required=2, actual=refine)
        delta = _shared_delta(families)
        h = delta / refine
        lo = np.min([f.bounds()[0] for f in families], axis=0) - h
        hi = np.max([f.bounds()[1] for f in families], axis=0) + h
        return cls.covering(lo, hi, h)

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @property
    def size(self) -> int:
        return int(np.prod(self.counts, dtype=np.int64))

    def coords(self, flat: np.ndarray) -> np.ndarray:
        idx = np.stack(np.unravel_index(flat, self.counts), axis=1)
        return np.asarray(self.lo) + (idx + 0.5) * self.spacing

    def check(self, delta: float) -> None:
        if self.spacing > delta / 2 * (1 + 1e-12):
            raise ResolutionError(f"raster spacing {self.spacing:.4g} does not resolve δ = {delta}",
                                  required=delta / 2, actual=self.spacing)

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "counts": list(self.counts), "spacing": self.spacing}


def _shared_delta(families: Sequence[TubeFamily]) -> float:
    ds = {t.delta for f in families for t in f}
    if len(ds) != 1:
        raise DomainError("all tubes must share one δ")
    return ds.pop()


@dataclass
class Membership:
    """Sparse node-by-tube incidence sorted by (node, tube)."""

    nodes: np.ndarray
    tubes: np.ndarray
    tangents: np.ndarray
    grid: RasterGrid

    def unique_nodes(self) -> np.ndarray:
        return np.unique(self.nodes)

    def restricted(self, keep_nodes: np.ndarray) -> "Membership":
        m = np.isin(self.nodes, keep_nodes)
        return Membership(self.nodes[m], self.tubes[m], self.tangents[m], self.grid)

    def node_runs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Distinct nodes with their start offset and run length."""
        u, start, cnt = np.unique(self.nodes, return_index=True, return_counts=True)
        return u, start, cnt


def _ball_offsets(dim: int, r: int) -> np.ndarray:
    ax = np.arange(-r, r + 1)
    off = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    return off[(off ** 2).sum(1) <= (r + 1) ** 2]


def tube_nodes(tube: Tube, grid: RasterGrid, box: tuple[np.ndarray, np.ndarray] | None = None
               ) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices of nodes within δ of the core (ascending) and the core
    parameter nearest to each."""
    grid.check(tube.delta)
    h = grid.spacing
    lo = np.asarray(grid.lo)
    counts = np.asarray(grid.counts)
    length = tube.core.length()
    m = max(2, int(math.ceil(length / h)) + 1)
    pts = tube.core.point(np.linspace(0.0, 1.0, m))
    base = np.unique(np.floor((pts - lo) / h).astype(np.int64), axis=0)
    # sampled points are ≤ h/2 from the curve, so δ + h reaches every member
    off = _ball_offsets(grid.dim, int(math.ceil(tube.delta / h)) + 1)
    if box is not None:
        blo = np.maximum(0, np.floor((np.asarray(box[0]) - lo) / h).astype(np.int64))
        bhi = np.minimum(counts - 1, np.ceil((np.asarray(box[1]) - lo) / h).astype(np.int64))
    else:
        blo = np.zeros_like(counts)
        bhi = counts - 1
    per = max(1, _CANDIDATE_CHUNK // len(off))
    found = []
    for s in range(0, len(base), per):
        cand = (base[s:s + per, None, :] + off[None]).reshape(-1, grid.dim)
        ok = np.all((cand >= blo) & (cand <= bhi), axis=1)
        if not np.any(ok):
            continue
        flat = np.unique(np.ravel_multi_index(cand[ok].T, grid.counts))
        found.append(flat)
    if not found:
        return np.empty(0, np.int64), np.empty(0)
    flat = np.unique(np.concatenate(found))
    pts_c = grid.coords(flat)
    if tube.core.is_straight:
        dist, t = tube.nearest(pts_c)
    else:
        # consecutive samples are ≤ h apart, so a node farther than δ + h from
        # every sample cannot be within δ of the curve
        sd, si = _nearest_sample(pts_c, pts)
        near = sd <= tube.delta + h
        flat, pts_c = flat[near], pts_c[near]
        t = _newton_polish(tube.core, pts_c, si[near] / (m - 1.0))
        dist = np.linalg.norm(tube.core.point(t) - pts_c, axis=1)
    inside = dist <= tube.delta
    return flat[inside], t[inside]


def _nearest_sample(x: np.ndarray, samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    out = np.empty(len(x))
    arg = np.empty(len(x), np.int64)
    step = max(1, (1 << 22) // len(samples))
    s2 = (samples ** 2).sum(1)
    for s in range(0, len(x), step):
        xc = x[s:s + step]
        d2 = (xc ** 2).sum(1)[:, None] - 2 * xc @ samples.T + s2[None]
        a = d2.argmin(axis=1)
        arg[s:s + step] = a
        out[s:s + step] = np.sqrt(np.clip(d2[np.arange(len(a)), a], 0, None))
    return out, arg


def rasterize(family: TubeFamily, grid: RasterGrid | None = None, threads: int | None = None,
              box=None) -> Membership:
    grid = RasterGrid.for_families(family) if grid is None else grid

    def one(i):
        nodes, t = tube_nodes(family.tubes[i], grid, box)
        return nodes, np.full(len(nodes), i, np.int64), _unit_tangents(family.tubes[i].core, t) \
            if len(t) else np.empty((0, family.dim))

    parts = ordered_map(one, range(len(family)), threads)
    if not parts:
        return Membership(np.empty(0, np.int64), np.empty(0, np.int64), np.empty((0, family.dim)), grid)
    nodes = np.concatenate([p[0] for p in parts])
    tubes = np.concatenate([p[1] for p in parts])
    tang = np.concatenate([p[2] for p in parts])
    order = np.lexsort((tubes, nodes))
    return Membership(nodes[order], tubes[order], tang[order], grid)


# ----------------------------------------------------------------------------
# Integrals
# ----------------------------------------------------------------------------


def indicator_sum_lp(family: TubeFamily, p: float, weights=None, grid: RasterGrid | None = None,
                     threads: int | None = None) -> float:
    """Lattice L^p norm of Σ w_i χ_{T_i}."""
    if p < 1:
        raise DomainError("p must be at least 1")
    grid = RasterGrid.for_families(family) if grid is None else grid
    mem = rasterize(family, grid, threads)
    w = np.ones(len(family)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(family),):
        raise DomainError("one weight per tube is required")
    if len(mem.nodes) == 0:
        return 0.0
    u, inv = np.unique(mem.nodes, return_inverse=True)
    vals = np.abs(np.bincount(inv, weights=w[mem.tubes], minlength=len(u)))
    if math.isinf(p):
        return float(vals.max())
    return float((np.sum(vals ** p) * grid.cell_volume) ** (1.0 / p))


def union_volume(family: TubeFamily, grid: RasterGrid | None = None, threads: int | None = None) -> float:
    grid = RasterGrid.for_families(family) if grid is None else grid
    mem = rasterize(family, grid, threads)
    return float(len(mem.unique_nodes()) * grid.cell_volume)


def wedge_norm(*vectors: np.ndarray) -> np.ndarray:
    """|v_1 ∧ ... ∧ v_k| row-wise, as the square root of the Gram determinant."""
    v = np.stack(vectors, axis=-2)
    gram = v @ np.swapaxes(v, -1, -2)
    return np.sqrt(np.clip(np.linalg.det(gram), 0.0, None))


@dataclass(frozen=True)
class KakeyaIntegral:
    value: float
    bound: float
    delta: float
    count: int
    dim: int
    spacing: float

    @property
    def ratio(self) -> float:
        return self.value / self.bound if self.bound else math.inf

    def as_row(self, p: float | str = "") -> dict:
        return {"delta": self.delta, "N": self.count, "p": p, "value": self.value,
                "bound": self.bound, "ratio": self.ratio}


def _pair_expand(start_a, cnt_a, start_b, cnt_b):
    """Per-node Cartesian product of two runs; returns row indices into a and b
    and the node position of each pair."""
    pc = cnt_a * cnt_b
    total = int(pc.sum())
    node = np.repeat(np.arange(len(pc)), pc)
    first = np.repeat(np.cumsum(pc) - pc, pc)
    local = np.arange(total) - first
    ia = start_a[node] + local // cnt_b[node]
    ib = start_b[node] + local % cnt_b[node]
    return ia, ib, node


def multilinear_kakeya_integral(fam_i: TubeFamily, fam_j: TubeFamily, fam_k: TubeFamily,
                                grid: RasterGrid | None = None, constant: float = 1.0,
                                refine: int = 2, threads: int | None = None) -> KakeyaIntegral:
    """Lattice value of ∫ [Σχ_i Σχ_j Σχ_k |v_i ∧ v_j ∧ v_k|]^{1/2}, reported
    with the bound ``constant`` · δ^n · N^{3/2}."""
    fams = (fam_i, fam_j, fam_k)
    dim = fam_i.dim
    if any(f.dim != dim for f in fams) or dim < 3:
        raise DomainError("three families in a common dimension ≥ 3 are required")
    delta = _shared_delta(fams)
    grid = RasterGrid.for_families(*fams, refine=refine) if grid is None else grid
    grid.check(delta)
    count = max(len(f) for f in fams)
    bound = constant * delta ** dim * count ** 1.5
    mems = [rasterize(f, grid, threads) for f in fams]
    common = mems[0].unique_nodes()
    for m in mems[1:]:
        common = np.intersect1d(common, m.unique_nodes(), assume_unique=True)
    if len(common) == 0:
        return KakeyaIntegral(0.0, bound, delta, count, dim, grid.spacing)
    mems = [m.restricted(common) for m in mems]
    runs = [m.node_runs() for m in mems]
    cnt = [r[2] for r in runs]
    weight = cnt[0] * cnt[1] * cnt[2]
    node_sum = np.zeros(len(common))
    # chunk over nodes so the triple expansion stays bounded in memory
    edges = np.searchsorted(np.cumsum(weight), np.arange(0, int(weight.sum()), _TRIPLE_CHUNK), "right")
    edges = np.unique(np.concatenate([[0], edges, [len(common)]]))
    for a, b in zip(edges[:-1], edges[1:]):
        if a == b:
            continue
        s = slice(a, b)
        ia, ib, node = _pair_expand(runs[0][1][s], cnt[0][s], runs[1][1][s], cnt[1][s])
        pair_cnt = cnt[0][s] * cnt[1][s]
        pair_start = np.cumsum(pair_cnt) - pair_cnt
        ip, ik, node3 = _pair_expand(pair_start, pair_cnt, runs[2][1][s], cnt[2][s])
        w = wedge_norm(mems[0].tangents[ia[ip]], mems[1].tangents[ib[ip]], mems[2].tangents[ik])
        node_sum[a:b] += np.bincount(node3, weights=w, minlength=b - a)
    value = float(np.sqrt(node_sum).sum() * grid.cell_volume)
    return KakeyaIntegral(value, bound, delta, count, dim, grid.spacing)


def _overlap_box(t1: Tube, t2: Tube, pad: float):
    """Box around the part of t1's core that comes within ``pad`` of t2's core."""
    s = np.linspace(0, 1, 513)
    p1 = t1.core.point(s)
    d, _ = t2.nearest(p1)
    near = p1[d <= pad]
    if len(near) == 0:
        return None
    return near.min(axis=0) - pad, near.max(axis=0) + pad


def bilinear_kakeya_integral(t1: Tube, t2: Tube, grid: RasterGrid | None = None,
                             refine: int = 4) -> float:
    """Lattice value of ∫ χ_{T1} χ_{T2} |v1 ∧ v2|.

    The overlap of two crossing tubes spans only a few δ/2 cells, so the
    default raster is δ/4.
    """
    if t1.delta != t2.delta:
        raise DomainError("both tubes must share δ")
    if t1.dim != t2.dim:
        raise DomainError("tubes live in different dimensions")
    fam = TubeFamily([t1, t2])
    grid = RasterGrid.for_families(fam, refine=refine) if grid is None else grid
    grid.check(t1.delta)
    # polyline sampling error on the coarse check stays well inside this pad
    pad = 2 * t1.delta + 2 * grid.spacing + max(t1.core.c2_norm(), t2.core.c2_norm()) / 512**2
    box = _overlap_box(t1, t2, pad)
    if box is None:
        return 0.0
    nodes, s = tube_nodes(t1, grid, box)
    if len(nodes) == 0:
        return 0.0
    d2, u = t2.nearest(grid.coords(nodes))
    inside = d2 <= t2.delta
    if not np.any(inside):
        return 0.0
    v1 = _unit_tangents(t1.core, s[inside])
    v2 = _unit_tangents(t2.core, u[inside])
    return float(wedge_norm(v1, v2).sum() * grid.cell_volume)


# ----------------------------------------------------------------------------
# Clumps
# ----------------------------------------------------------------------------


def assign_clumps(base_points, K: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """Clump label of each base point: its cell in the K^m grid of [lo, hi]^m."""
    y = np.atleast_2d(np.asarray(base_points, dtype=float))
    cell = np.clip(np.floor((y - lo) / (hi - lo) * K).astype(np.int64), 0, K - 1)
    return np.ravel_multi_index(cell.T, (K,) * y.shape[1])


def narrow_from_clump_counts(counts, K: float, clump_const: float = 1e4) -> str:
    """Narrow iff fewer than clump_const·K clumps hold at least half the tubes.
    A point in no tube is narrow."""
    c = np.sort(np.asarray(counts, dtype=np.int64))[::-1]
    total = int(c.sum())
    if total == 0:
        return NARROW
    needed = int(np.searchsorted(np.cumsum(c), total / 2.0, side="left")) + 1
    return NARROW if needed < clump_const * K else BROAD


def clump_classify(family: TubeFamily, clumps, x, K: float, clump_const: float = 1e4) -> str:
    clumps = np.asarray(clumps)
    if clumps.shape != (len(family),):
        raise DomainError("every tube needs a clump label")
    x = np.asarray(x, dtype=float)[None]
    through = np.array([t.contains(x)[0] for t in family], dtype=bool)
    _, counts = np.unique(clumps[through], return_counts=True)
    return narrow_from_clump_counts(counts, K, clump_const)


# ----------------------------------------------------------------------------
# Polynomial approximation
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class JacksonApproximation:
    curve: PolyCurve
    chebyshev: np.ndarray
    error: float
    degree: int
    k: int

    @property
    def rate(self) -> float:
        return float(self.degree) ** (-self.k)


def jackson_approximate(f: Callable[[np.ndarray], np.ndarray] | tuple, k: int, d: int,
                        check_points: int = 4097) -> JacksonApproximation:
    """Degree-d Chebyshev interpolant of f on [0, 1], returned in monomial form
    with its measured sup error on a fine grid.

    ``f`` is either a vectorized callable or a pair ``(xs, ys)`` of samples;
    samples are fitted in the Chebyshev basis by least squares.
    """
    if d < 1:
        raise DomainError("degree must be at least 1")
    if callable(f):
        nodes = 0.5 * (1.0 + np.cos(np.pi * (np.arange(d + 1) + 0.5) / (d + 1)))
        c = cheb.chebfit(2 * nodes - 1, np.asarray(f(nodes), dtype=float), d)
        xs = np.linspace(0.0, 1.0, check_points)
        ys = np.asarray(f(xs), dtype=float)
    else:
        xs, ys = (np.asarray(a, dtype=float) for a in f)
        c = cheb.chebfit(2 * xs - 1, ys, d)
    series = np.polynomial.Chebyshev(c, domain=[0.0, 1.0])
    mono = series.convert(kind=np.polynomial.Polynomial, domain=[-1.0, 1.0], window=[-1.0, 1.0]).coef
    curve = PolyCurve(np.asarray(mono)[None], max_degree=max(32, d))
    err = float(np.abs(curve.point(xs)[:, 0] - ys).max())
    return JacksonApproximation(curve, c, err, d, k)


def jackson_degree(delta: float, k: int) -> int:
    """Degree rule d = ⌈δ^{-1/k}⌉."""
    return int(math.ceil(delta ** (-1.0 / k) - 1e-12))
