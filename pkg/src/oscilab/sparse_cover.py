"""Covering a finite union of unit cubes by few sparse collections of balls.

A collection of ``N`` balls of common radius ``R`` is sparse when every two
centres are more than ``(N R)^C`` apart.  The strengthened test replaces the
threshold with ``N^{(n+1)/(n(n-1))} R^{2n/(n-1)}``.

The construction runs over ``K = ceil(1/delta)`` scales.  Each cube gets the
first scale at which the number of nearby cube centres grows by at most a
factor ``|E|^{1/K}`` on passing to the next scale; by pigeonhole such a scale
exists.  Cubes of one scale are grouped around a maximal separated set of
centres, and a greedy colouring of those centres (densest first) splits them
into at most ``|E|^{1/K}`` sparse collections.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError
from .parallel import ordered_map

BASIC = "basic"
STRENGTHENED = "strengthened"

_PAIR_CHUNK = 512


def _safe_pow(base: float, exponent: float) -> float:
    if base <= 0:
        return 0.0
    try:
        return float(base) ** exponent
    except OverflowError:
        return math.inf


def strengthened_exponents(n: int) -> tuple[float, float]:
    """Exponents of the count and the radius in the strengthened threshold."""
    if n < 2:
        raise DomainError(f"strengthened sparsity needs n >= 2, got {n}")
    return (n + 1) / (n * (n - 1)), 2 * n / (n - 1)


def default_exponent(n: int) -> float:
    """Smallest convenient ``C`` for which the basic test implies the
    strengthened one whenever ``N, R >= 1``."""
    if n < 2:
        return 2.0
    return max(strengthened_exponents(n)) + 1.0


@dataclass(frozen=True)
class CubeSet:
    """Distinct unit cubes ``[c, c + 1]^n`` given by integer corners ``c``.

    Corners are stored in lexicographic order so that every downstream
    computation is independent of input order.
    """

    corners: np.ndarray

    def __init__(self, corners: Iterable[Sequence[int]]):
        arr = np.asarray([tuple(int(v) for v in c) for c in corners], dtype=np.int64)
        if arr.size == 0:
            arr = arr.reshape(0, 0)
        elif arr.ndim != 2:
            raise DomainError("cube corners must be equal-length integer tuples")
        if len(arr):
            order = np.lexsort(arr.T[::-1])
            arr = arr[order]
            if np.any(np.all(arr[1:] == arr[:-1], axis=1)):
                raise DomainError("cubes must be distinct")
        arr.setflags(write=False)
        object.__setattr__(self, "corners", arr)

    def __len__(self) -> int:
        return len(self.corners)

    @property
    def dim(self) -> int:
        return self.corners.shape[1]

    @property
    def centers(self) -> np.ndarray:
        return self.corners + 0.5

    def union(self, other: "CubeSet") -> "CubeSet":
        merged = {tuple(c) for c in self.corners.tolist()} | {tuple(c) for c in other.corners.tolist()}
        return CubeSet(sorted(merged))

    @classmethod
    def row(cls, count: int, n: int = 3, step: int = 1) -> "CubeSet":
        """``count`` cubes along the first axis, ``step`` apart."""
        corners = np.zeros((count, n), dtype=np.int64)
        corners[:, 0] = np.arange(count) * step
        return cls(corners)

    def to_json(self) -> str:
        return json.dumps(self.corners.tolist())

    @classmethod
    def from_json(cls, text: str) -> "CubeSet":
        data = json.loads(text)
        if not isinstance(data, list):
            raise DomainError("a cube set is a JSON list of integer tuples")
        return cls(data)


def _finite_or_none(x: float) -> float | None:
    return x if math.isfinite(x) else None


@dataclass(frozen=True)
class SparseCheck:
    ok: bool
    min_distance: float
    threshold: float
    worst_pair: tuple[int, int] | None
    mode: str

    def to_dict(self) -> dict:
        return {"ok": self.ok, "min_distance": _finite_or_none(self.min_distance),
                "threshold": _finite_or_none(self.threshold),
                "worst_pair": list(self.worst_pair) if self.worst_pair else None, "mode": self.mode}


@dataclass(frozen=True)
class SparseCollection:
    """Balls of a common ``radius`` about ``centers``; ``members[i]`` lists
    the indices (into the sorted cube set) of cubes assigned to ball ``i``."""

    centers: np.ndarray
    radius: float
    C: float
    members: tuple[tuple[int, ...], ...] = field(default=())
    scale: int = 0

    @property
    def N(self) -> int:
        return len(self.centers)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def threshold(self, mode: str = BASIC) -> float:
        if mode == BASIC:
            return _safe_pow(self.N * self.radius, self.C)
        if mode == STRENGTHENED:
            a, b = strengthened_exponents(self.dim)
            return _safe_pow(self.N, a) * _safe_pow(self.radius, b)
        raise DomainError(f"unknown sparsity mode {mode!r}")

    def covers(self, cubes: CubeSet) -> np.ndarray:
        """Flags, per cube, whether some ball contains all of its corners."""
        corners = cubes.corners.astype(float)
        out = np.zeros(len(cubes), dtype=bool)
        for center in self.centers:
            far = np.abs(corners + 0.5 - center) + 0.5
            out |= np.sqrt(np.sum(far * far, axis=1)) <= self.radius
        return out

    def to_dict(self) -> dict:
        return {"radius": self.radius, "C": self.C, "scale": self.scale,
                "centers": self.centers.tolist(), "members": [list(m) for m in self.members]}

    @classmethod
    def from_dict(cls, d: dict) -> "SparseCollection":
        centers = np.asarray(d["centers"], dtype=float)
        return cls(centers.reshape(len(centers), -1), float(d["radius"]), float(d["C"]),
                   tuple(tuple(m) for m in d.get("members", ())), int(d.get("scale", 0)))


def _chunk_min(centers: np.ndarray, start: int) -> tuple[float, int, int]:
    stop = min(start + _PAIR_CHUNK, len(centers))
    block = centers[start:stop]
    d2 = np.sum((block[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
    rows = np.arange(stop - start)[:, None] + start
    d2[np.arange(len(centers))[None, :] <= rows] = np.inf
    idx = int(np.argmin(d2))
    i, j = divmod(idx, len(centers))
    return float(d2.flat[idx]), start + i, j


def verify_sparse(collection: SparseCollection, n: int | None = None, mode: str = BASIC,
                  threads: int | None = None) -> SparseCheck:
    """Exhaustive pairwise test with strict inequality at the threshold."""
    if n is not None and collection.N and n != collection.dim:
        raise DomainError(f"collection lives in dimension {collection.dim}, not {n}")
    threshold = collection.threshold(mode)
    if collection.N < 2:
        return SparseCheck(True, math.inf, threshold, None, mode)
    centers = np.asarray(collection.centers, dtype=float)
    parts = ordered_map(lambda s: _chunk_min(centers, s), range(0, len(centers) - 1, _PAIR_CHUNK), threads)
    d2, i, j = min(parts)
    dist = math.sqrt(d2)
    return SparseCheck(dist > threshold, dist, threshold, (i, j), mode)


# --- construction ------------------------------------------------------------


def _pair_distances(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _far_corner_distance(center: np.ndarray, cube_centers: np.ndarray) -> np.ndarray:
    far = np.abs(cube_centers - center) + 0.5
    return np.sqrt(np.sum(far * far, axis=-1))


def scale_radii(size: int, n: int, delta: float, C: float) -> tuple[list[float], list[float]]:
    """Counting radii ``r_0..r_K`` and nominal ball radii ``R_0..R_{K-1}``.

    ``r_{k+1} - r_k = (size R_k)^C`` is exactly the separation demanded of a
    sparse collection at scale ``k``.
    """
    levels = _level_count(delta)
    half_diag = math.sqrt(n) / 2
    r = [0.5]
    R = []
    for _ in range(levels):
        R.append(max(1.0, 2 * r[-1] + half_diag))
        r.append(r[-1] + _safe_pow(size * R[-1], C))
    return r, R


def _level_count(delta: float) -> int:
    return max(1, math.ceil(1 / delta - 1e-12))


def _already_sparse(cubes: CubeSet, C: float) -> SparseCollection | None:
    radius = max(1.0, math.sqrt(cubes.dim) / 2)
    coll = SparseCollection(cubes.centers, radius, C, tuple((i,) for i in range(len(cubes))), 0)
    return coll if verify_sparse(coll).ok else None


def cover(cubes: CubeSet, delta: float, C: float | None = None) -> list[SparseCollection]:
    """Sparse collections whose balls jointly contain every cube of ``cubes``."""
    if len(cubes) < 1:
        raise DomainError("the cube set must be non-empty")
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    n = cubes.dim
    C = default_exponent(n) if C is None else float(C)
    if C <= 0:
        raise DomainError(f"sparsity exponent must be positive, got {C}")

    trivial = _already_sparse(cubes, C)
    if trivial is not None:
        return [trivial]

    size = len(cubes)
    levels = _level_count(delta)
    growth = size ** (1 / levels) * (1 + 1e-12)
    r, R = scale_radii(size, n, delta, C)
    pts = cubes.centers
    dist = _pair_distances(pts)
    counts = np.stack([np.count_nonzero(dist <= rk, axis=1) for rk in r])

    ratios = counts[1:] / counts[:-1]
    ok = ratios <= growth
    # pigeonhole guarantees a hit; argmin is a numerical safety net only
    level_of = np.where(ok.any(axis=0), np.argmax(ok, axis=0), np.argmin(ratios, axis=0))

    out: list[SparseCollection] = []
    for k in range(levels):
        idx = np.flatnonzero(level_of == k)
        if not len(idx):
            continue
        order = idx[np.lexsort((idx, -counts[k, idx]))]
        chosen: list[int] = []
        owner: dict[int, list[int]] = {}
        for q in order:
            hit = next((a for a in chosen if dist[q, a] <= 2 * r[k]), None)
            if hit is None:
                chosen.append(int(q))
                owner[int(q)] = [int(q)]
            else:
                owner[hit].append(int(q))
        sep = r[k + 1] - r[k]
        colour: dict[int, int] = {}
        for a in chosen:
            taken = {colour[b] for b in colour if dist[a, b] <= sep}
            colour[a] = next(c for c in range(len(chosen) + 1) if c not in taken)
        for c in range(max(colour.values()) + 1):
            heads = [a for a in chosen if colour[a] == c]
            need = max(float(_far_corner_distance(pts[a], pts[owner[a]]).max()) for a in heads)
            out.append(SparseCollection(pts[heads], max(1.0, need), C,
                                        tuple(tuple(sorted(owner[a])) for a in heads), k))
    return out


@dataclass(frozen=True)
class CoverReport:
    """Measured constants: ``A`` in the count bound and ``log_B`` (natural
    log of ``B``) in the radius bound."""

    count: int
    A: float
    max_radius: float
    log_B: float
    covered: bool
    basic_ok: bool
    strengthened_ok: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def cover_report(cubes: CubeSet, delta: float, collections: Sequence[SparseCollection],
                 C: float | None = None, threads: int | None = None) -> CoverReport:
    C = default_exponent(cubes.dim) if C is None else float(C)
    size = len(cubes)
    count = len(collections)
    covered = np.zeros(size, dtype=bool)
    for coll in collections:
        covered |= coll.covers(cubes)
    max_radius = max(c.radius for c in collections)
    log_B = math.log(max_radius) - _safe_pow(C, 1 / delta) * math.log(size)
    basic = all(verify_sparse(c, mode=BASIC, threads=threads).ok for c in collections)
    strong = cubes.dim < 2 or all(verify_sparse(c, mode=STRENGTHENED, threads=threads).ok
                                  for c in collections)
    A = count / (size ** delta / delta)
    return CoverReport(count, A, max_radius, log_B, bool(covered.all()), basic, strong)


def collections_to_json(cubes: CubeSet, delta: float, collections: Sequence[SparseCollection],
                        C: float | None = None, threads: int | None = None) -> str:
    report = cover_report(cubes, delta, collections, C, threads)
    body = []
    for coll in collections:
        entry = coll.to_dict()
        entry["check"] = {m: verify_sparse(coll, mode=m, threads=threads).to_dict()
                          for m in ((BASIC, STRENGTHENED) if cubes.dim >= 2 else (BASIC,))}
        body.append(entry)
    return json.dumps({"n": cubes.dim, "delta": delta, "cubes": cubes.corners.tolist(),
                       "collections": body, "report": report.to_dict()}, sort_keys=True)


def collections_from_json(text: str) -> tuple[CubeSet, float, list[SparseCollection]]:
    data = json.loads(text)
    return (CubeSet(data["cubes"]), float(data["delta"]),
            [SparseCollection.from_dict(d) for d in data["collections"]])
