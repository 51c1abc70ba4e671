"""Closed-form hypersurfaces, caps, normals and the rescaling maps built on them.

A surface is the graph y -> (y, phi1(y)) over a parameter domain in
R^{n-1}; phi1 is a quadratic form plus optional homogeneous cubic terms
(or y1*y2 for the saddle).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, UnsupportedError


class SurfaceKind(str, Enum):
    ELLIPTIC = "elliptic-paraboloid"
    PERTURBED = "perturbed-elliptic"
    HYPERBOLIC = "hyperbolic-paraboloid"


@dataclass(frozen=True)
class Surface:
    kind: SurfaceKind
    n: int
    A: tuple[tuple[float, ...], ...]
    cubic: tuple[tuple[int, int, int, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", SurfaceKind(self.kind))
        if self.n < 2:
            raise DomainError("ambient dimension must be at least 2")
        A = np.asarray(self.A, dtype=float)
        d = self.n - 1
        if A.shape != (d, d) or not np.allclose(A, A.T):
            raise DomainError(f"quadratic part must be a symmetric {d}x{d} matrix")
        if self.kind is SurfaceKind.HYPERBOLIC:
            if np.linalg.det(A) == 0 or np.all(np.linalg.eigvalsh(A) > 0):
                raise DomainError("hyperbolic kind needs an indefinite non-degenerate form")
        elif not np.all(np.linalg.eigvalsh(A) > 0):
            raise DomainError("elliptic kinds need a positive-definite quadratic part")
        if self.cubic and self.kind is not SurfaceKind.PERTURBED:
            raise DomainError("cubic corrections are only allowed for the perturbed kind")
        for i, j, k, _ in self.cubic:
            if not all(0 <= t < d for t in (i, j, k)):
                raise DomainError("cubic index out of range")

    # -- constructors -------------------------------------------------------
    @classmethod
    def paraboloid(cls, n: int, A=None) -> "Surface":
        A = np.eye(n - 1) if A is None else np.asarray(A, float)
        return cls(SurfaceKind.ELLIPTIC, n, _tuplify(A))

    @classmethod
    def perturbed(cls, n: int, cubic: Iterable[tuple[int, int, int, float]], A=None) -> "Surface":
        A = np.eye(n - 1) if A is None else np.asarray(A, float)
        cub = tuple((int(i), int(j), int(k), float(c)) for i, j, k, c in cubic)
        return cls(SurfaceKind.PERTURBED, n, _tuplify(A), cub)

    @classmethod
    def hyperbolic(cls, n: int = 3) -> "Surface":
        if n != 3:
            raise DomainError("the saddle y1*y2 is defined for n = 3")
        return cls(SurfaceKind.HYPERBOLIC, 3, ((0.0, 0.5), (0.5, 0.0)))

    # -- evaluation ---------------------------------------------------------
    @property
    def is_elliptic(self) -> bool:
        return self.kind is not SurfaceKind.HYPERBOLIC

    @property
    def is_quadratic(self) -> bool:
        return not self.cubic

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.A, dtype=float)

    def phi1(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        val = np.einsum("...i,ij,...j->...", y, self.matrix, y)
        for i, j, k, c in self.cubic:
            val = val + c * y[..., i] * y[..., j] * y[..., k]
        return val

    def grad_phi1(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        g = 2.0 * np.einsum("ij,...j->...i", self.matrix, y)
        for i, j, k, c in self.cubic:
            g[..., i] += c * y[..., j] * y[..., k]
            g[..., j] += c * y[..., i] * y[..., k]
            g[..., k] += c * y[..., i] * y[..., j]
        return g

    def hess_phi1(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        d = self.n - 1
        H = np.broadcast_to(2.0 * self.matrix, y.shape[:-1] + (d, d)).copy()
        for i, j, k, c in self.cubic:
            for a, b, m in ((i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)):
                H[..., a, b] += c * y[..., m]
        return H

    def grad_bound(self, radius: float) -> float:
        """Upper bound for |grad phi1| on the ball of given radius."""
        op = np.linalg.norm(2.0 * self.matrix, 2) * radius
        cub = sum(3.0 * abs(c) for *_, c in self.cubic) * radius**2
        return float(op + cub)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "n": self.n, "A": [list(r) for r in self.A],
                "cubic": [list(t) for t in self.cubic]}

    @classmethod
    def from_dict(cls, d: dict) -> "Surface":
        kind = SurfaceKind(d["kind"])
        n = int(d["n"])
        if kind is SurfaceKind.HYPERBOLIC:
            return cls.hyperbolic(n)
        A = d.get("A")
        if kind is SurfaceKind.PERTURBED:
            return cls.perturbed(n, [tuple(t) for t in d.get("cubic", [])], A)
        return cls.paraboloid(n, A)


def _tuplify(A: np.ndarray) -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(float(v) for v in row) for row in np.atleast_2d(A))


def gauss_normal(surface: Surface, y) -> np.ndarray:
    """Unit normal of the graph at parameter point(s) y (last axis = coordinates)."""
    g = surface.grad_phi1(y)
    v = np.concatenate([-g, np.ones(g.shape[:-1] + (1,))], axis=-1)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def transversality_volume(normals) -> float:
    """Volume of the parallelotope spanned by k vectors in R^n, k <= n."""
    V = np.atleast_2d(np.asarray(normals, dtype=float))
    k, n = V.shape
    if k > n:
        raise DomainError(f"{k} vectors cannot be transverse in {n} dimensions")
    G = V @ V.T
    return float(math.sqrt(max(np.linalg.det(G), 0.0)))


# ---------------------------------------------------------------------------
# caps


@dataclass(frozen=True)
class Cap:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise DomainError("cap radius must be positive")
        if self.radius > 1:
            raise DomainError("cap radius must not exceed 1")

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.linalg.norm(y - np.asarray(self.center), axis=-1) <= self.radius


@dataclass(frozen=True)
class CapPartition:
    """Caps centred on a uniform grid of spacing 1/K over a box.

    Every parameter point is assigned to the grid cell containing it, so the
    cells give a genuine partition while the circumscribed balls give the cover.
    """

    K: int
    dim: int
    lo: tuple[float, ...] = field(default=())
    hi: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.K < 1:
            raise DomainError("K must be a positive integer")
        lo = self.lo or (-0.5,) * self.dim
        hi = self.hi or (0.5,) * self.dim
        object.__setattr__(self, "lo", tuple(float(v) for v in lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in hi))

    @property
    def spacing(self) -> float:
        return 1.0 / self.K

    @property
    def scale(self) -> float:
        return 1.0 / self.K

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(max(1, int(round((h - l) * self.K))) for l, h in zip(self.lo, self.hi))

    @property
    def radius(self) -> float:
        return math.sqrt(self.dim) / 2 * self.spacing

    def __len__(self) -> int:
        return int(np.prod(self.shape))

    def centers(self) -> np.ndarray:
        axes = [l + (np.arange(m) + 0.5) * self.spacing for l, m in zip(self.lo, self.shape)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    @property
    def caps(self) -> list[Cap]:
        return [Cap(tuple(c), self.radius) for c in self.centers()]

    def assign(self, y) -> np.ndarray:
        """Flat index of the cell containing each point (points on shared faces go up)."""
        y = np.asarray(y, dtype=float)
        idx = []
        for d, (l, m) in enumerate(zip(self.lo, self.shape)):
            i = np.floor((y[..., d] - l) * self.K + 1e-9).astype(int)
            idx.append(np.clip(i, 0, m - 1))
        return np.ravel_multi_index(tuple(idx), self.shape)

    def cell_bounds(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        multi = np.unravel_index(index, self.shape)
        lo = np.array([l + i * self.spacing for l, i in zip(self.lo, multi)])
        return lo, lo + self.spacing


def noncollinearity_test(centers: Sequence, margin: float) -> bool:
    """True iff the third center lies farther than ``margin`` from the line
    through the first two."""
    a, b, c = (np.asarray(p, dtype=float) for p in centers)
    d = b - a
    nd = np.linalg.norm(d)
    if nd == 0:
        return bool(np.linalg.norm(c - a) > margin)
    r = c - a
    perp = r - (r @ d) / (nd * nd) * d
    return bool(np.linalg.norm(perp) > margin)


# ---------------------------------------------------------------------------
# rescalings


@dataclass(frozen=True)
class ParabolicRescale:
    """Affine change of variables carrying a rho-cap problem to unit scale.

    With g(y'') = f(a + rho y'') one has, for a quadratic phi1,
        Tf(x) = carrier(x) * rho^{n-1} * Tg(X(x)),
        X' = rho (x' + x_n grad phi1(a)),  X_n = rho^2 x_n,
    and the L^p norm picks up rho^{n-1-(n+1)/p}.
    """

    center: tuple[float, ...]
    rho: float
    shear: tuple[float, ...]
    exact: bool
    n: int

    def factor(self, p: float) -> float:
        if math.isinf(p):
            return self.rho ** (self.n - 1)
        return self.rho ** (self.n - 1 - (self.n + 1) / p)

    def y_to_unit(self, y) -> np.ndarray:
        return (np.asarray(y, float) - np.asarray(self.center)) / self.rho

    def unit_to_y(self, u) -> np.ndarray:
        return np.asarray(self.center) + self.rho * np.asarray(u, float)

    def x_to_X(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        xn = x[..., -1:]
        Xp = self.rho * (x[..., :-1] + xn * np.asarray(self.shear))
        return np.concatenate([Xp, self.rho**2 * xn], axis=-1)

    def X_to_x(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        xn = X[..., -1:] / self.rho**2
        xp = X[..., :-1] / self.rho - xn * np.asarray(self.shear)
        return np.concatenate([xp, xn], axis=-1)

    @property
    def jacobian(self) -> float:
        """dX = jacobian * dx."""
        return self.rho ** (self.n + 1)


def parabolic_rescale_map(cap: Cap, surface: Surface | None = None, rho: float | None = None) -> ParabolicRescale:
    surface = surface or Surface.paraboloid(cap.dim + 1)
    if not surface.is_elliptic:
        raise UnsupportedError("parabolic rescaling needs an elliptic surface; use the strip map for the saddle")
    if cap.dim != surface.n - 1:
        raise DomainError("cap dimension does not match the surface")
    rho = cap.radius if rho is None else float(rho)
    if not 0 < rho <= 1:
        raise DomainError("rescaling radius must lie in (0, 1]")
    shear = tuple(float(v) for v in surface.grad_phi1(np.asarray(cap.center)))
    return ParabolicRescale(cap.center, rho, shear, surface.is_quadratic, surface.n)


def hyperbolic_strip_rescale(K1: float, q) -> float:
    """Norm factor K1^{-1+2/q} of the strip map
    (x, y) -> (x1, K1 x2, K1 x3; y1, y2/K1) for the saddle."""
    q = float(q)
    if q < 2:
        raise DomainError("strip rescaling is stated for q >= 2")
    return float(K1) ** (-1.0 + 2.0 / q)


# ---------------------------------------------------------------------------
# dual boxes


def _frame_with_normal(normal: np.ndarray, hint: np.ndarray | None = None) -> np.ndarray:
    """Orthonormal rows whose last row is ``normal``.

    Transverse rows come from Gram-Schmidt on ``hint`` rows (the standard
    basis by default), which keeps frames of nearby normals nearly aligned.
    """
    n = normal.size
    basis = np.eye(n) if hint is None else np.asarray(hint, float)
    rows = [normal / np.linalg.norm(normal)]
    for v in basis:
        w = v - sum((v @ r) * r for r in rows)
        nw = np.linalg.norm(w)
        if nw > 1e-10:
            rows.append(w / nw)
        if len(rows) == n:
            break
    frame = np.array(rows[1:] + rows[:1])
    return frame


@dataclass(frozen=True)
class DualBox:
    center: np.ndarray
    axes: np.ndarray  # rows; last row is the long (normal) axis
    sides: np.ndarray

    def corners(self) -> np.ndarray:
        n = self.sides.size
        signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * n, indexing="ij")).reshape(n, -1).T
        return self.center + (signs * self.sides / 2) @ self.axes

    def contains(self, points, rtol: float = 1e-12) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, float)) - self.center
        coords = p @ self.axes.T
        return np.all(np.abs(coords) <= self.sides / 2 * (1 + rtol), axis=-1)


def dual_box_of(cap: Cap, K: float = 1.0, surface: Surface | None = None,
                center=None, frame_hint=None, delta: float | None = None) -> DualBox:
    """Box of sides (K/delta, ..., K/delta, K/delta^2) with its long axis along
    the normal at the cap centre; delta defaults to the cap radius."""
    surface = surface or Surface.paraboloid(cap.dim + 1)
    if not surface.is_elliptic:
        raise UnsupportedError("dual boxes are defined for elliptic caps")
    delta = cap.radius if delta is None else float(delta)
    nrm = gauss_normal(surface, np.asarray(cap.center))
    axes = _frame_with_normal(nrm, frame_hint)
    n = surface.n
    sides = np.full(n, K / delta)
    sides[-1] = K / delta**2
    c = np.zeros(n) if center is None else np.asarray(center, float)
    return DualBox(c, axes, sides)
