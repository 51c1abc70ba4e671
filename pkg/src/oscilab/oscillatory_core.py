"""Riemann-sum evaluation of oscillatory integrals Tf(x) = sum f(y) e^{i phi(x,y)} dy.

Two evaluation routes share one quadrature rule (midpoint sum on a
cell-centred lattice):

* a direct route over arbitrary point lists, chunked over y with a
  compensated running sum in fixed chunk order;
* a tensor route for phases of the form c * x'.y + psi(x_n, y) on product
  x-grids: for each x_n layer the lattice values are multiplied by
  e^{i psi} and contracted axis by axis against 1-D exponential matrices.

The direct route is the reference for the tensor route in the tests. Both
are bit-reproducible for any thread count because work is split into
independent pieces whose results never get re-associated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, ResolutionError
from .parallel import ordered_map
from .surface_geometry import Cap, CapPartition, Surface

C_NYQ = 1.0 / 6.0
_X_BLOCK = 256
_Y_CHUNK = 4096


# ---------------------------------------------------------------------------
# phases


class PhaseKind(str, Enum):
    EXTENSION = "extension"
    HORMANDER = "hormander"
    EXAMPLE = "elliptic-example"
    HYPERBOLIC_EXAMPLE = "hyperbolic-example"


def _phi1_split(surface: Surface, ys: Sequence[np.ndarray]) -> np.ndarray:
    A = surface.matrix
    d = len(ys)
    out = 0.0
    for i in range(d):
        out = out + A[i, i] * ys[i] * ys[i]
        for j in range(i + 1, d):
            if A[i, j] != 0:
                out = out + 2.0 * A[i, j] * ys[i] * ys[j]
    for i, j, k, c in surface.cubic:
        out = out + c * ys[i] * ys[j] * ys[k]
    return out


@dataclass(frozen=True)
class PhaseFunction:
    """A phase phi(x, y) with x in R^n and y in R^{n-1}.

    ``perturbation`` (Hoermander kind only) lists monomials
    (alpha_x, alpha_y, coefficient) of the correction phi_nu; the phase adds
    lam * phi_nu(x / lam, y).
    """

    kind: PhaseKind
    surface: Surface | None = None
    lam: float = 1.0
    perturbation: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", PhaseKind(self.kind))
        if not self.lam > 0:
            raise DomainError("lambda must be positive")
        if self.kind in (PhaseKind.EXTENSION, PhaseKind.HORMANDER) and self.surface is None:
            raise DomainError(f"{self.kind.value} phase needs a surface")
        if self.kind is PhaseKind.EXTENSION and self.lam != 1.0:
            raise DomainError("extension phases carry lambda = 1")
        pert = tuple((tuple(int(a) for a in ax), tuple(int(b) for b in ay), float(c))
                     for ax, ay, c in self.perturbation)
        object.__setattr__(self, "perturbation", pert)
        if pert and self.kind is not PhaseKind.HORMANDER:
            raise DomainError("only the Hoermander kind takes a perturbation")
        for ax, ay, _ in pert:
            if len(ax) != self.n or len(ay) != self.n - 1:
                raise DomainError("perturbation multi-index has the wrong length")
            if sum(ax) < 2 or sum(ay) < 2:
                raise DomainError("perturbation monomials must be at least quadratic in x and in y")

    # -- constructors
    @classmethod
    def extension(cls, surface: Surface) -> "PhaseFunction":
        return cls(PhaseKind.EXTENSION, surface)

    @classmethod
    def hormander(cls, surface: Surface, perturbation, lam: float) -> "PhaseFunction":
        return cls(PhaseKind.HORMANDER, surface, lam, tuple(perturbation))

    @classmethod
    def example(cls, lam: float = 1.0) -> "PhaseFunction":
        return cls(PhaseKind.EXAMPLE, None, lam)

    @classmethod
    def hyperbolic_example(cls, lam: float = 1.0) -> "PhaseFunction":
        return cls(PhaseKind.HYPERBOLIC_EXAMPLE, None, lam)

    @property
    def n(self) -> int:
        return self.surface.n if self.surface is not None else 3

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "lam": self.lam,
                "surface": None if self.surface is None else self.surface.to_dict(),
                "perturbation": [[list(a), list(b), c] for a, b, c in self.perturbation]}

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseFunction":
        surf = Surface.from_dict(d["surface"]) if d.get("surface") else None
        return cls(PhaseKind(d["kind"]), surf, float(d.get("lam", 1.0)),
                   tuple(tuple(t) for t in d.get("perturbation", [])))

    # -- evaluation
    def value(self, x, y) -> np.ndarray:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        k = self.kind
        if k is PhaseKind.EXAMPLE:
            x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
            y1, y2 = y[..., 0], y[..., 1]
            v = -x1 * y1 - x2 * y2 + 0.5 * x3 * y1**2 + x3**2 * y1 * y2 + 0.5 * (x3 + x3**3) * y2**2
            return self.lam * v
        if k is PhaseKind.HYPERBOLIC_EXAMPLE:
            x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
            y1, y2 = y[..., 0], y[..., 1]
            return self.lam * (-x1 * y1 - x2 * y2 + 2 * x3 * y1 * y2 + x3**2 * y2**2)
        v = np.sum(x[..., :-1] * y, axis=-1) + x[..., -1] * self.surface.phi1(y)
        for ax, ay, c in self.perturbation:
            scale = c * self.lam ** (1 - sum(ax))
            v = v + scale * _mono(x, ax) * _mono(y, ay)
        return v

    def grad_x(self, x, y) -> np.ndarray:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        k = self.kind
        if k is PhaseKind.EXAMPLE:
            x3 = x[..., 2]
            y1, y2 = y[..., 0], y[..., 1]
            g = [-y1, -y2, 0.5 * y1**2 + 2 * x3 * y1 * y2 + 0.5 * (1 + 3 * x3**2) * y2**2]
            return self.lam * np.stack(np.broadcast_arrays(*g), axis=-1)
        if k is PhaseKind.HYPERBOLIC_EXAMPLE:
            x3 = x[..., 2]
            y1, y2 = y[..., 0], y[..., 1]
            g = [-y1, -y2, 2 * y1 * y2 + 2 * x3 * y2**2]
            return self.lam * np.stack(np.broadcast_arrays(*g), axis=-1)
        shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        g = np.zeros(shape + (self.n,))
        g[..., :-1] = y
        g[..., -1] = self.surface.phi1(y)
        for ax, ay, c in self.perturbation:
            scale = c * self.lam ** (1 - sum(ax))
            my = _mono(y, ay)
            for i, a in enumerate(ax):
                if a:
                    g[..., i] += scale * a * _mono(x, ax, drop=i) * my
        return g

    def grad_y(self, x, y) -> np.ndarray:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        k = self.kind
        if k is PhaseKind.EXAMPLE:
            x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
            y1, y2 = y[..., 0], y[..., 1]
            g = [-x1 + x3 * y1 + x3**2 * y2, -x2 + x3**2 * y1 + (x3 + x3**3) * y2]
            return self.lam * np.stack(np.broadcast_arrays(*g), axis=-1)
        if k is PhaseKind.HYPERBOLIC_EXAMPLE:
            x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
            y1, y2 = y[..., 0], y[..., 1]
            g = [-x1 + 2 * x3 * y2, -x2 + 2 * x3 * y1 + 2 * x3**2 * y2]
            return self.lam * np.stack(np.broadcast_arrays(*g), axis=-1)
        g = x[..., :-1] + x[..., -1:] * self.surface.grad_phi1(y)
        for ax, ay, c in self.perturbation:
            scale = c * self.lam ** (1 - sum(ax))
            mx = _mono(x, ax)
            for j, b in enumerate(ay):
                if b:
                    g[..., j] += scale * b * mx * _mono(y, ay, drop=j)
        return g

    def split(self):
        """(coef, psi) with phi(x, y) = coef * x'.y + psi(x_n, ys), or None.

        ``psi`` takes the last ambient coordinate and a tuple of broadcastable
        per-axis y arrays.
        """
        lam = self.lam
        if self.kind is PhaseKind.EXTENSION:
            s = self.surface
            return 1.0, lambda t, ys: t * _phi1_split(s, ys)
        if self.kind is PhaseKind.EXAMPLE:
            def psi(t, ys):
                y1, y2 = ys
                return lam * (0.5 * t * y1 * y1 + (t * t) * y1 * y2 + 0.5 * (t + t**3) * y2 * y2)
            return -lam, psi
        if self.kind is PhaseKind.HYPERBOLIC_EXAMPLE:
            def psi(t, ys):
                y1, y2 = ys
                return lam * (2 * t * y1 * y2 + (t * t) * y2 * y2)
            return -lam, psi
        return None

    def sup_grad(self, xlo, xhi, ylo, yhi, which: str = "y", samples: int = 7) -> float:
        """Sampled sup of |grad_y phi| (or |grad_x phi|) over a product of boxes."""
        xs = _box_samples(xlo, xhi, samples)
        ys = _box_samples(ylo, yhi, samples)
        fn = self.grad_y if which == "y" else self.grad_x
        best = 0.0
        for chunk in np.array_split(xs, max(1, len(xs) // 512)):
            g = fn(chunk[:, None, :], ys[None, :, :])
            best = max(best, float(np.sqrt(np.max(np.sum(g * g, axis=-1)))))
        return best


def _mono(v: np.ndarray, powers, drop: int | None = None) -> np.ndarray:
    out = 1.0
    for i, a in enumerate(powers):
        e = a - 1 if i == drop else a
        if e:
            out = out * v[..., i] ** e
    return np.asarray(out, float)


def _box_samples(lo, hi, m: int) -> np.ndarray:
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    axes = [np.linspace(a, b, m) if b > a else np.array([a]) for a, b in zip(lo, hi)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=-1)


# ---------------------------------------------------------------------------
# lattices and sampled fields


@dataclass(frozen=True)
class Lattice:
    """Cell-centred uniform lattice on a box; nodes sit at cell midpoints."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if any(c < 1 for c in self.counts) or any(h <= l for l, h in zip(self.lo, self.hi)):
            raise DomainError("degenerate lattice")

    @classmethod
    def box(cls, lo, hi, h: float, multiple_of: int = 1) -> "Lattice":
        """Finest-needed lattice with spacing <= h on each axis; counts are
        rounded up to a multiple of ``multiple_of`` (per unit length)."""
        if not h > 0:
            raise DomainError("lattice spacing must be positive")
        counts = []
        for l, u in zip(lo, hi):
            c = math.ceil((u - l) / h - 1e-9)
            if multiple_of > 1:
                unit = (u - l) * multiple_of
                per = max(1, math.ceil(c / unit - 1e-9)) if unit >= 1 else c
                c = int(round(per * unit)) if unit >= 1 and abs(unit - round(unit)) < 1e-9 else c
            counts.append(max(1, c))
        return cls(tuple(lo), tuple(hi), tuple(counts))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple((u - l) / c for l, u, c in zip(self.lo, self.hi, self.counts))

    @property
    def max_h(self) -> float:
        return max(self.h)

    @property
    def weight(self) -> float:
        return float(np.prod(self.h))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def axes(self) -> list[np.ndarray]:
        return [l + (np.arange(c) + 0.5) * h for l, c, h in zip(self.lo, self.counts, self.h)]

    def nodes(self) -> np.ndarray:
        g = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([a.ravel() for a in g], axis=-1)

    def mesh(self) -> list[np.ndarray]:
        """Per-axis broadcastable coordinate arrays (sparse mesh)."""
        return np.meshgrid(*self.axes, indexing="ij", sparse=True)

    def index_range(self, lo, hi) -> tuple[slice, ...]:
        """Slices of the nodes whose coordinates fall in the closed box [lo, hi]."""
        out = []
        for ax, a, b in zip(self.axes, lo, hi):
            i0 = int(np.searchsorted(ax, a - 1e-12, side="left"))
            i1 = int(np.searchsorted(ax, b + 1e-12, side="right"))
            out.append(slice(i0, max(i0, i1)))
        return tuple(out)

    def sub(self, slices: tuple[slice, ...]) -> "Lattice":
        lo, hi, counts = [], [], []
        for l, h, c, s in zip(self.lo, self.h, self.counts, slices):
            i0, i1, _ = s.indices(c)
            lo.append(l + i0 * h)
            hi.append(l + i1 * h)
            counts.append(i1 - i0)
        return Lattice(tuple(lo), tuple(hi), tuple(counts))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "counts": list(self.counts)}


@dataclass(frozen=True, eq=False)
class SampledField:
    lattice: Lattice
    values: np.ndarray
    sup_bound: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != self.lattice.shape:
            raise DomainError(f"values shape {v.shape} does not match lattice {self.lattice.shape}")
        object.__setattr__(self, "values", v)
        m = float(np.max(np.abs(v))) if v.size else 0.0
        if m > self.sup_bound * (1 + 1e-12):
            raise DomainError(f"field exceeds its sup bound ({m} > {self.sup_bound})")

    @classmethod
    def from_function(cls, lattice: Lattice, fn: Callable, sup_bound: float = 1.0) -> "SampledField":
        return cls(lattice, np.asarray(fn(lattice.mesh()), dtype=complex) * np.ones(lattice.shape), sup_bound)

    @property
    def h(self) -> float:
        return self.lattice.max_h

    def restrict(self, region) -> "SampledField":
        """Crop to the region's bounding box and zero nodes outside it."""
        lo, hi = region_bounds(region)
        sl = self.lattice.index_range(lo, hi)
        sub = self.lattice.sub(sl) if all(s.stop > s.start for s in sl) else None
        if sub is None:
            return SampledField(self.lattice, np.zeros(self.lattice.shape), self.sup_bound)
        # membership is decided on the parent's node coordinates so that
        # neighbouring regions agree on shared faces
        g = np.meshgrid(*[ax[s] for ax, s in zip(self.lattice.axes, sl)], indexing="ij")
        pts = np.stack([a.ravel() for a in g], axis=-1)
        vals = self.values[sl] * region_contains(region, pts).reshape(sub.shape)
        return SampledField(sub, vals, self.sup_bound)

    def l2_norm_sq(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.lattice.weight)

    def __add__(self, other: "SampledField") -> "SampledField":
        if other.lattice != self.lattice:
            raise DomainError("fields live on different lattices")
        return SampledField(self.lattice, self.values + other.values, self.sup_bound + other.sup_bound)

    def scaled(self, c: complex) -> "SampledField":
        return SampledField(self.lattice, self.values * c, self.sup_bound * abs(c))


@dataclass(frozen=True)
class CellRegion:
    """One cell of a CapPartition, with the partition's own membership rule."""

    partition: CapPartition
    index: int

    @property
    def center(self) -> tuple[float, ...]:
        return tuple(self.partition.centers()[self.index])

    def contains(self, y) -> np.ndarray:
        return self.partition.assign(y) == self.index

    def bounds(self):
        return self.partition.cell_bounds(self.index)


@dataclass(frozen=True)
class BoxRegion:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @property
    def center(self):
        return tuple((a + b) / 2 for a, b in zip(self.lo, self.hi))

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, float)
        return np.all((y >= np.asarray(self.lo)) & (y < np.asarray(self.hi)), axis=-1)

    def bounds(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)


def region_bounds(region):
    if isinstance(region, Cap):
        c = np.asarray(region.center)
        return c - region.radius, c + region.radius
    return region.bounds()


def region_contains(region, y) -> np.ndarray:
    return region.contains(y)


def region_center(region) -> np.ndarray:
    return np.asarray(region.center, float)


# ---------------------------------------------------------------------------
# evaluation grids


@dataclass(frozen=True, eq=False)
class EvaluationGrid:
    """Product grid with a mask; masked-in nodes are the evaluation points."""

    axes: tuple[np.ndarray, ...]
    mask: np.ndarray | None = None
    center: tuple[float, ...] | None = None
    radius: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(np.asarray(a, float) for a in self.axes))
        if self.mask is not None:
            m = np.asarray(self.mask, bool)
            if m.shape != self.shape:
                raise DomainError("mask shape mismatch")
            object.__setattr__(self, "mask", m)

    @classmethod
    def ball(cls, center, R: float, spacing) -> "EvaluationGrid":
        center = np.asarray(center, float)
        sp = np.broadcast_to(np.asarray(spacing, float), center.shape)
        axes = []
        for c, s in zip(center, sp):
            J = int(math.floor(R / s + 1e-9))
            axes.append(c + s * np.arange(-J, J + 1))
        g = np.meshgrid(*axes, indexing="ij", sparse=True)
        r2 = sum((a - c) ** 2 for a, c in zip(g, center))
        mask = r2 <= R * R * (1 + 1e-12)
        return cls(tuple(axes), np.broadcast_to(mask, tuple(len(a) for a in axes)).copy(), tuple(center), R)

    @classmethod
    def box(cls, lo, hi, spacing) -> "EvaluationGrid":
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        sp = np.broadcast_to(np.asarray(spacing, float), lo.shape)
        axes = []
        for a, b, s in zip(lo, hi, sp):
            if b <= a:
                axes.append(np.array([a]))
                continue
            m = max(1, int(math.ceil((b - a) / s - 1e-9)))
            axes.append(a + (b - a) * (np.arange(m + 1) / m))
        return cls(tuple(axes))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(float(a[1] - a[0]) if len(a) > 1 else 1.0 for a in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def full_mask(self) -> np.ndarray:
        return np.ones(self.shape, bool) if self.mask is None else self.mask

    @property
    def count(self) -> int:
        return int(self.full_mask.sum())

    @property
    def measure(self) -> float:
        return self.count * self.cell_volume

    def points(self) -> np.ndarray:
        g = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack([a.ravel() for a in g], axis=-1)
        return pts[self.full_mask.ravel()]

    def bounds(self):
        return np.array([a[0] for a in self.axes]), np.array([a[-1] for a in self.axes])

    def with_mask(self, mask) -> "EvaluationGrid":
        return EvaluationGrid(self.axes, np.asarray(mask, bool) & self.full_mask, self.center, self.radius)


def default_spacing(phase: PhaseFunction, ylo, yhi, xlo=None, xhi=None) -> float:
    """Half the oscillation-resolving step pi / sup|grad_x phi|."""
    n = phase.n
    xlo = np.zeros(n) if xlo is None else xlo
    xhi = np.zeros(n) if xhi is None else xhi
    g = phase.sup_grad(xlo, xhi, ylo, yhi, which="x")
    return math.pi / (2.0 * max(g, 1e-12))


def check_grid_resolution(phase: PhaseFunction, grid: EvaluationGrid, lattice: Lattice) -> None:
    lo, hi = grid.bounds()
    g = phase.sup_grad(lo, hi, lattice.lo, lattice.hi, which="x")
    limit = math.pi / max(g, 1e-12)
    if max(grid.spacing) > limit * (1 + 1e-9):
        raise ResolutionError(f"evaluation grid spacing {max(grid.spacing):.4g} exceeds pi/sup|grad_x phi| = {limit:.4g}",
                              required=limit, actual=max(grid.spacing))


# ---------------------------------------------------------------------------
# resolution guard


def required_h(phase: PhaseFunction, xlo, xhi, ylo, yhi, c_nyq: float = C_NYQ) -> float:
    return c_nyq / (1.0 + phase.sup_grad(xlo, xhi, ylo, yhi, which="y"))


# Hoermander phases are only meaningful for |x| small against lambda
HORMANDER_X_FRACTION = 0.25


def _check_x_domain(phase: PhaseFunction, xlo, xhi) -> None:
    if phase.kind is not PhaseKind.HORMANDER:
        return
    reach = float(np.max(np.abs(np.concatenate([np.ravel(xlo), np.ravel(xhi)]))))
    if reach > HORMANDER_X_FRACTION * phase.lam:
        raise DomainError(f"Hoermander phase evaluated at |x| = {reach:.4g}; "
                          f"need |x| <= {HORMANDER_X_FRACTION} * lambda = {HORMANDER_X_FRACTION * phase.lam:.4g}")


def _check_nyquist(phase: PhaseFunction, f: SampledField, xlo, xhi, c_nyq: float) -> None:
    _check_x_domain(phase, xlo, xhi)
    need = required_h(phase, xlo, xhi, f.lattice.lo, f.lattice.hi, c_nyq)
    if f.h > need * (1 + 1e-9):
        raise ResolutionError(
            f"y-lattice step {f.h:.4g} too coarse for this x-range; need h <= {need:.4g}",
            required=need, actual=f.h)


# ---------------------------------------------------------------------------
# direct route


def _neumaier_add(s: np.ndarray, c: np.ndarray, v: np.ndarray) -> None:
    """s += v in place, carrying the rounding error of each add in c."""
    for part in ("real", "imag"):
        sp, vp = getattr(s, part), getattr(v, part)
        tp = sp + vp
        corr = np.where(np.abs(sp) >= np.abs(vp), (sp - tp) + vp, (vp - tp) + sp)
        getattr(c, part)[...] += corr
        sp[...] = tp


def _direct(phase: PhaseFunction, f: SampledField, xs: np.ndarray, threads: int | None,
            extra_phase: Callable | None = None) -> np.ndarray:
    vals = f.values.ravel()
    nz = np.flatnonzero(vals)
    Y = f.lattice.nodes()[nz]
    fv = vals[nz]
    chunks = [slice(i, min(i + _Y_CHUNK, len(nz))) for i in range(0, len(nz), _Y_CHUNK)]

    def block(i0: int) -> np.ndarray:
        xb = xs[i0:i0 + _X_BLOCK]
        s = np.zeros(len(xb), complex)
        c = np.zeros(len(xb), complex)
        for ch in chunks:
            ph = phase.value(xb[:, None, :], Y[None, ch, :])
            if extra_phase is not None:
                ph = ph - extra_phase(xb)[:, None]
            part = np.sum(np.exp(1j * ph) * fv[None, ch], axis=1)
            _neumaier_add(s, c, part)
        return s + c

    parts = ordered_map(block, range(0, len(xs), _X_BLOCK), threads)
    out = np.concatenate(parts) if parts else np.zeros(0, complex)
    return out * f.lattice.weight


def evaluate_T(phase: PhaseFunction, f: SampledField, xs, *, c_nyq: float = C_NYQ,
               threads: int | None = None, check: bool = True) -> np.ndarray:
    """Tf at each point of ``xs`` (shape (m, n)) by the direct route."""
    xs = np.atleast_2d(np.asarray(xs, float))
    if xs.shape[-1] != phase.n or f.lattice.dim != phase.n - 1:
        raise DomainError("dimension mismatch between phase, field and points")
    if len(xs) == 0:
        return np.zeros(0, complex)
    if check:
        _check_nyquist(phase, f, xs.min(axis=0), xs.max(axis=0), c_nyq)
    return _direct(phase, f, xs, threads)


# ---------------------------------------------------------------------------
# tensor route


def _nonzero_slices(values: np.ndarray) -> list[np.ndarray]:
    """Per-axis indices carrying any nonzero value."""
    nzmask = values != 0
    out = []
    for ax in range(values.ndim):
        other = tuple(i for i in range(values.ndim) if i != ax)
        out.append(np.flatnonzero(nzmask.any(axis=other)) if other else np.flatnonzero(nzmask))
    return out


def _tensor(phase: PhaseFunction, f: SampledField, grid: EvaluationGrid, threads: int | None,
            groups: np.ndarray | None = None, carrier_y: np.ndarray | None = None) -> np.ndarray:
    """Values on the full product grid, shape grid.shape (or (G,) + shape with groups).

    ``groups`` labels indices of the last y-axis (label -1 = dropped); each
    group is contracted separately, sharing the work on the other axes.
    """
    coef, psi = phase.split()
    d = f.lattice.dim
    keep = _nonzero_slices(f.values)
    yaxes = [ax[k] for ax, k in zip(f.lattice.axes, keep)]
    fv = f.values[np.ix_(*keep)]
    xaxes = grid.axes
    E = [np.exp(1j * coef * np.multiply.outer(xaxes[k], yaxes[k])) for k in range(d)]
    ymesh = np.meshgrid(*yaxes, indexing="ij", sparse=True)
    if groups is not None:
        labels = np.asarray(groups)[keep[-1]]
        ids = sorted(int(g) for g in set(labels.tolist()) if g >= 0)
        gidx = [np.flatnonzero(labels == g) for g in ids]
    w = f.lattice.weight
    if carrier_y is not None:
        # y-point whose phase is removed: phi(x, y_a) is subtracted per layer
        ya = np.asarray(carrier_y, float)

    def layer(j: int) -> np.ndarray:
        t = float(xaxes[-1][j])
        G = fv * np.exp(1j * psi(t, ymesh))
        R = G
        for k in range(d - 1):
            R = np.tensordot(R, E[k], axes=([0], [1]))
        # R now has the last y-axis first, x-axes 0..d-2 after it
        if groups is None:
            R = np.tensordot(R, E[d - 1], axes=([0], [1]))
            out = R * w
        else:
            outs = [np.tensordot(R[gi], E[d - 1][:, gi], axes=([0], [1])) * w for gi in gidx]
            out = np.stack(outs) if outs else np.zeros((0,) + tuple(len(a) for a in xaxes[:-1]), complex)
        if carrier_y is not None:
            g = np.meshgrid(*xaxes[:-1], indexing="ij", sparse=True)
            ph = coef * sum(gk * yk for gk, yk in zip(g, ya)) + psi(t, tuple(np.asarray(v) for v in ya))
            out = out * np.exp(-1j * ph)
        return out

    layers = ordered_map(layer, range(len(xaxes[-1])), threads)
    arr = np.stack(layers, axis=-1)
    if grid.mask is not None:
        arr = arr * grid.mask
    return arr


def evaluate_T_grid(phase: PhaseFunction, f: SampledField, grid: EvaluationGrid, *,
                    c_nyq: float = C_NYQ, threads: int | None = None, method: str = "auto",
                    check: bool = True) -> np.ndarray:
    """Tf at the masked-in nodes of ``grid`` (flat, in grid order)."""
    if grid.n != phase.n:
        raise DomainError("grid dimension does not match the phase")
    if check:
        lo, hi = grid.bounds()
        _check_nyquist(phase, f, lo, hi, c_nyq)
    use_tensor = method == "tensor" or (method == "auto" and phase.split() is not None)
    if use_tensor:
        if phase.split() is None:
            raise DomainError("phase is not separable; use the direct route")
        arr = _tensor(phase, f, grid, threads)
        return arr.ravel()[grid.full_mask.ravel()]
    return _direct(phase, f, grid.points(), threads)


def evaluate_T_groups(phase: PhaseFunction, f: SampledField, grid: EvaluationGrid, labels, *,
                      c_nyq: float = C_NYQ, threads: int | None = None, check: bool = True) -> np.ndarray:
    """Separate integrals over groups of last-axis lattice indices.

    Returns shape (G, m): one row per group label (sorted), masked nodes in columns.
    """
    if check:
        lo, hi = grid.bounds()
        _check_nyquist(phase, f, lo, hi, c_nyq)
    arr = _tensor(phase, f, grid, threads, groups=np.asarray(labels))
    return arr.reshape(arr.shape[0], -1)[:, grid.full_mask.ravel()]


# ---------------------------------------------------------------------------
# caps


@dataclass(frozen=True, eq=False)
class CapValues:
    values: np.ndarray      # T_alpha f(x)
    modulated: np.ndarray   # e^{-i phi(x, y_alpha)} T_alpha f(x)
    carrier: np.ndarray     # e^{i phi(x, y_alpha)}


def evaluate_T_cap(phase: PhaseFunction, f: SampledField, cap, xs, *, c_nyq: float = C_NYQ,
                   threads: int | None = None) -> CapValues:
    """Cap-restricted integral and its carrier-free (modulated) form.

    ``cap`` is a Cap (ball), a CellRegion of a partition, or a BoxRegion.
    The modulated form is summed with the phase difference phi(x,y) - phi(x,y_a)
    inside the exponential rather than by dividing afterwards.
    """
    xs = np.atleast_2d(np.asarray(xs, float))
    _check_nyquist(phase, f, xs.min(axis=0), xs.max(axis=0), c_nyq)
    g = f.restrict(cap)
    ya = region_center(cap)
    ref = lambda xb: phase.value(xb, ya[None, :])
    plain = _direct(phase, g, xs, threads)
    mod = _direct(phase, g, xs, threads, extra_phase=ref)
    carrier = np.exp(1j * phase.value(xs, ya[None, :]))
    return CapValues(plain, mod, carrier)


def evaluate_T_cap_grid(phase: PhaseFunction, f: SampledField, cap, grid: EvaluationGrid, *,
                        c_nyq: float = C_NYQ, threads: int | None = None,
                        modulated: bool = False) -> np.ndarray:
    """Tensor-route cap integral on a grid (masked nodes, grid order)."""
    lo, hi = grid.bounds()
    _check_nyquist(phase, f, lo, hi, c_nyq)
    g = f.restrict(cap)
    if not np.any(g.values):
        return np.zeros(grid.count, complex)
    if phase.split() is None:
        xs = grid.points()
        if modulated:
            ya = region_center(cap)
            return _direct(phase, g, xs, threads, extra_phase=lambda xb: phase.value(xb, ya[None, :]))
        return _direct(phase, g, xs, threads)
    arr = _tensor(phase, g, grid, threads, carrier_y=region_center(cap) if modulated else None)
    return arr.ravel()[grid.full_mask.ravel()]


# ---------------------------------------------------------------------------
# lattice norms


def lattice_lp_norm(values, grid: EvaluationGrid | float, p: float, averaged: bool = False) -> float:
    """(sum |v|^p * cell volume)^{1/p}; the averaged form divides by the lattice
    measure of the grid. ``grid`` may be a bare cell volume."""
    v = np.abs(np.asarray(values).ravel())
    if v.size == 0:
        raise DomainError("empty grid")
    p = float(p)
    if p < 1:
        raise DomainError("p must lie in [1, inf]")
    if math.isinf(p):
        return float(v.max())
    cell = grid.cell_volume if isinstance(grid, EvaluationGrid) else float(grid)
    total = float(np.sum(v**p)) * cell
    if averaged:
        total /= v.size * cell
    return total ** (1.0 / p)


# ---------------------------------------------------------------------------
# mollified majorant


def eta(r: np.ndarray, n: int) -> np.ndarray:
    """Normalized radial Gaussian in R^n."""
    return (2 * math.pi) ** (-n / 2) * np.exp(-0.5 * np.asarray(r, float) ** 2)


def zeta(r: np.ndarray, n: int) -> np.ndarray:
    """sup of eta over the unit ball around a point at distance r."""
    return eta(np.maximum(np.asarray(r, float) - 1.0, 0.0), n)


def zeta_l1(n: int) -> float:
    """Integral of zeta over R^n (radial quadrature, exact to ~1e-12)."""
    r = np.linspace(0, 40, 400001)
    area = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
    integrand = zeta(r, n) * area * r ** (n - 1)
    return float(np.sum((integrand[1:] + integrand[:-1]) * 0.5) * (r[1] - r[0]))


@dataclass(frozen=True)
class Majorant:
    value: float
    window: EvaluationGrid
    kernel_mass: float  # lattice integral of zeta_K over the window


def majorant_from_samples(abs_values: np.ndarray, window: EvaluationGrid, a, K: float) -> Majorant:
    a = np.asarray(a, float)
    pts = window.points()
    r = np.linalg.norm(pts - a, axis=-1) / K
    n = window.n
    ker = zeta(r, n) * K ** (-n)
    cell = window.cell_volume
    return Majorant(float(np.sum(np.abs(abs_values) * ker) * cell), window, float(np.sum(ker) * cell))


def majorant_window(phase: PhaseFunction, f: SampledField, cap, a, K: float, reach: float = 6.0,
                    spacing: float | None = None) -> EvaluationGrid:
    a = np.asarray(a, float)
    W = (1.0 + reach) * K
    if spacing is None:
        lo, hi = region_bounds(cap)
        ya = region_center(cap)
        xs = _box_samples(a - W, a + W, 3)
        ys = _box_samples(lo, hi, 5)
        gx = phase.grad_x(xs[:, None, :], ys[None, :, :]) - phase.grad_x(xs[:, None, :], ya[None, None, :])
        spread = float(np.sqrt(np.max(np.sum(gx * gx, axis=-1))))
        spacing = min(K / 4.0, math.pi / (4.0 * max(spread, 1e-12)))
    return EvaluationGrid.ball(a, W, spacing)


def mollified_majorant(phase: PhaseFunction, f: SampledField, cap, a, K: float, *,
                       reach: float = 6.0, spacing: float | None = None, c_nyq: float = C_NYQ,
                       threads: int | None = None) -> Majorant:
    """c = integral of |T_cap f(z)| zeta_K(z - a) dz over a window around a.

    zeta_K(z) = K^{-n} zeta(z / K) with zeta the unit-ball sup of a normalized
    Gaussian, so |T_cap f| on B(a, K) is dominated by c up to the error of
    reproducing the cap's frequency band with the Gaussian.
    """
    window = majorant_window(phase, f, cap, a, K, reach, spacing)
    vals = evaluate_T_cap_grid(phase, f, cap, window, c_nyq=c_nyq, threads=threads)
    return majorant_from_samples(np.abs(vals), window, a, K)


# ---------------------------------------------------------------------------
# local orthogonality


@dataclass(frozen=True)
class OrthogonalityResult:
    ratio: float
    R: float
    per_cap: np.ndarray  # integral of |T_alpha f|^2 over B_R, per cell
    f_norm_sq: float


def bessel_orthogonality_check(phase: PhaseFunction, f: SampledField, R: float, *, center=None,
                               spacing: float | None = None, c_nyq: float = C_NYQ,
                               threads: int | None = None) -> OrthogonalityResult:
    """sum_alpha int_{B_R} |T_alpha f|^2 / (R ||f||_2^2) for caps of side 1/R."""
    n = phase.n
    K = int(round(R))
    if K < 1 or abs(K - R) > 1e-9:
        raise DomainError("R must be a positive integer so caps of side 1/R tile the domain")
    lat = f.lattice
    part = CapPartition(K, lat.dim, lat.lo, lat.hi)
    c = np.zeros(n) if center is None else np.asarray(center, float)
    if spacing is None:
        spacing = default_spacing(phase, lat.lo, lat.hi, c - R, c + R)
    grid = EvaluationGrid.ball(c, R, spacing)
    lo, hi = grid.bounds()
    _check_nyquist(phase, f, lo, hi, c_nyq)
    sums = np.zeros(len(part))
    for i in range(len(part)):
        vals = evaluate_T_cap_grid(phase, f, CellRegion(part, i), grid, c_nyq=c_nyq, threads=threads)
        sums[i] = float(np.sum(np.abs(vals) ** 2)) * grid.cell_volume
    fn = f.l2_norm_sq()
    if fn == 0:
        raise DomainError("f vanishes; ratio undefined")
    return OrthogonalityResult(float(sums.sum() / (R * fn)), float(R), sums, fn)


# ---------------------------------------------------------------------------
# candidate fields and the Q_R lower bound


CATALOG = ("constant", "random-cap-signs", "knapp", "hyperbolic-chirp", "strip-chirps")


def example_strips(lam: float, c: float = 0.5, c0: float = 0.5) -> list[tuple[int, float, float]]:
    """(s, lower, upper) for the strips s/sqrt(lam) <= y2 <= (s + c)/sqrt(lam)."""
    r = math.sqrt(lam)
    smax = int(math.floor(c0 * r + 1e-12))
    return [(s, s / r, (s + c) / r) for s in range(smax + 1)]


def strip_labels(y2: np.ndarray, lam: float, c: float = 0.5, c0: float = 0.5) -> np.ndarray:
    """Strip index for each y2 node, -1 off the strips."""
    lab = np.full(y2.shape, -1, int)
    for s, a, b in example_strips(lam, c, c0):
        lab[(y2 >= a) & (y2 <= b)] = s
    return lab


def candidate_extremizer(name: str, lattice: Lattice, params: dict | None = None) -> SampledField:
    """A field with |f| <= 1 from the named family."""
    p = dict(params or {})
    mesh = lattice.mesh()
    shape = lattice.shape
    if name == "constant":
        vals = np.ones(shape, complex)
    elif name == "random-cap-signs":
        K = int(p.get("K", 8))
        rng = np.random.default_rng(int(p.get("seed", 0)))
        part = CapPartition(K, lattice.dim, lattice.lo, lattice.hi)
        signs = rng.choice([-1.0, 1.0], size=len(part))
        vals = signs[part.assign(lattice.nodes())].reshape(shape).astype(complex)
    elif name == "knapp":
        r = float(p.get("radius", 0.25))
        c = np.asarray(p.get("center", [0.0] * lattice.dim), float)
        d2 = sum((m - ci) ** 2 for m, ci in zip(mesh, c))
        vals = (d2 <= r * r).astype(complex) * np.ones(shape)
    elif name == "hyperbolic-chirp":
        lam = float(p.get("lam", 1.0))
        vals = np.exp(1j * lam * mesh[0] ** 2) * np.ones(shape)
    elif name == "strip-chirps":
        if lattice.dim != 2:
            raise DomainError("strip-chirps lives on a two-dimensional parameter domain")
        lam = float(p.get("lam", 100.0))
        c = float(p.get("c", 0.5))
        c0 = float(p.get("c0", 0.5))
        strips = example_strips(lam, c, c0)
        signs = p.get("signs")
        if signs is None:
            signs = [1.0] * len(strips)
        elif signs == "random":
            rng = np.random.default_rng(int(p.get("seed", 0)))
            signs = rng.choice([-1.0, 1.0], size=len(strips))
        y1, y2 = mesh
        lab = strip_labels(y2.ravel(), lam, c, c0).reshape(y2.shape)
        vals = np.zeros(shape, complex)
        r = math.sqrt(lam)
        for (s, _, _), sg in zip(strips, signs):
            vals = vals + sg * (lab == s) * np.exp(1j * lam * (s / r) * y1)
    else:
        raise DomainError(f"unknown candidate {name!r}; choose from {CATALOG}")
    return SampledField(lattice, vals, 1.0)


@dataclass(frozen=True)
class QREstimate:
    value: float
    best: str
    values: dict
    R: float
    p: float


def qr_lattice(surface: Surface, R: float, c_nyq: float = C_NYQ, lo=None, hi=None) -> Lattice:
    d = surface.n - 1
    lo = (-0.5,) * d if lo is None else tuple(lo)
    hi = (0.5,) * d if hi is None else tuple(hi)
    phase = PhaseFunction.extension(surface)
    h = required_h(phase, [-R] * surface.n, [R] * surface.n, lo, hi, c_nyq)
    return Lattice.box(lo, hi, h)


def estimate_QR(surface: Surface, p: float, R: float, catalog: Iterable[str] | None = None, seed: int = 0, *,
                lattice: Lattice | None = None, spacing: float | None = None, params: dict | None = None,
                c_nyq: float = C_NYQ, threads: int | None = None) -> QREstimate:
    """Largest L^p(B_R) norm of Tf over a finite catalog: a lower bound for Q_R."""
    if p < 1:
        raise DomainError("p must be at least 1")
    phase = PhaseFunction.extension(surface)
    lattice = lattice or qr_lattice(surface, R, c_nyq)
    if spacing is None:
        spacing = default_spacing(phase, lattice.lo, lattice.hi)
    grid = EvaluationGrid.ball(np.zeros(surface.n), R, spacing)
    params = params or {}
    out = {}
    for name in (catalog or CATALOG):
        prm = {"seed": seed, **params.get(name, {})}
        if name == "strip-chirps":
            prm.setdefault("lam", float(R))
        f = candidate_extremizer(name, lattice, prm)
        vals = evaluate_T_grid(phase, f, grid, c_nyq=c_nyq, threads=threads)
        out[name] = lattice_lp_norm(vals, grid, p)
    best = max(out, key=lambda k: (out[k], -list(out).index(k)))
    return QREstimate(out[best], best, out, float(R), float(p))


# ---------------------------------------------------------------------------
# rescaling identity via two independent evaluation paths


@dataclass(frozen=True)
class RescalePaths:
    direct: float
    rescaled: float
    ratio: float
    spacing: float


def rescaling_paths(surface: Surface, cap: Cap, amplitude: Callable, p: float, R: float, spacing: float,
                    h_unit: float | None = None, c_nyq: float = C_NYQ, threads: int | None = None) -> RescalePaths:
    """Compare ||Tf||_{L^p(B_R)} with factor * ||Tg||_{L^p(X(B_R))}, g(u) = f(a + rho u).

    ``amplitude`` maps broadcastable unit-disc coordinates u (tuple of arrays)
    to complex values and is supported in |u| <= 1.
    """
    from .surface_geometry import parabolic_rescale_map

    rmap = parabolic_rescale_map(cap, surface)
    rho = rmap.rho
    n = surface.n
    a = np.asarray(cap.center)
    phase = PhaseFunction.extension(surface)
    # path A: direct evaluation on the cap's lattice
    latA_lo, latA_hi = a - rho, a + rho
    hA = required_h(phase, [-R] * n, [R] * n, latA_lo, latA_hi, c_nyq)
    if h_unit is not None:
        hA = min(hA, h_unit * rho * 0.71)
    latA = Lattice.box(latA_lo, latA_hi, hA)
    fA = SampledField.from_function(latA, lambda m: amplitude(tuple((mi - ai) / rho for mi, ai in zip(m, a))))
    gridA = EvaluationGrid.ball(np.zeros(n), R, spacing)
    valsA = evaluate_T_grid(phase, fA, gridA, c_nyq=c_nyq, threads=threads)
    normA = lattice_lp_norm(valsA, gridA, p)
    # path B: unit-scale problem on the image of B_R
    corners = _box_samples(-np.full(n, R), np.full(n, R), 2)
    img = rmap.x_to_X(corners)
    lo, hi = img.min(axis=0), img.max(axis=0)
    hB = required_h(phase, lo, hi, -np.ones(n - 1), np.ones(n - 1), c_nyq)
    if h_unit is not None:
        hB = min(hB, h_unit)
    latB = Lattice.box(-np.ones(n - 1), np.ones(n - 1), hB)
    fB = SampledField.from_function(latB, amplitude)
    gridB = EvaluationGrid.box(lo, hi, spacing * rho)
    inside = np.linalg.norm(rmap.X_to_x(gridB.points()), axis=-1) <= R * (1 + 1e-12)
    gridB = gridB.with_mask(inside.reshape(gridB.shape))
    valsB = evaluate_T_grid(phase, fB, gridB, c_nyq=c_nyq, threads=threads)
    normB = rmap.factor(p) * lattice_lp_norm(valsB, gridB, p)
    return RescalePaths(normA, normB, normA / normB, spacing)
