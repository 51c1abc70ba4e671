"""Optimality constructions for the three-dimensional model phases.

The elliptic construction superposes modulated strips in y2 so that each
strip integral is stationary on a thin slab around the surface
x2 = x1 x3; its L^q norm on that slab decays like λ^-(3/4 + 1/(2q)).
The hyperbolic construction uses a chirp in y1 that completes a square
with the phase, giving |Tf| ~ λ^-1/2 on a 1/λ-neighbourhood of the same
surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ResolutionError
from .exponents import ExponentFit, loglog_fit
from .oscillatory_core import (
    C_NYQ, EvaluationGrid, Lattice, PhaseFunction, SampledField, evaluate_T,
    evaluate_T_grid, example_strips, lattice_lp_norm,
)

Y1_RANGE = (-1.5, 0.5)
X3_RANGE = (0.5, 1.0)


@dataclass(frozen=True)
class ExampleConfig:
    """Parameters of the strip construction.

    ``signs`` is "averaged" (square-function form) or a sequence of ±1, one
    per strip.  ``tol`` sets the slab half-width tol/√λ, ``x1_half`` the
    range |x1| ≤ x1_half where the stationary points stay interior.
    """

    lam: float
    q: float = 10 / 3
    c: float = 0.5
    signs: str | tuple[float, ...] = "averaged"
    tol: float = 0.1
    c0: float = 0.5
    x1_half: float = 0.1
    x2_margin: float = 0.1
    x1_step: float = 0.025
    x3_step: float = 1 / 16
    slab_nodes: int = 16

    def __post_init__(self):
        if self.lam < 16:
            raise DomainError("λ must be at least 16")
        if not 0 < self.c < 1:
            raise DomainError("strip width constant c must lie in (0, 1)")
        if not 0 < self.c0 < 1:
            raise DomainError("strip count constant must lie in (0, 1)")
        if self.q < 1:
            raise DomainError("q must be at least 1")
        if not isinstance(self.signs, str):
            s = tuple(float(v) for v in self.signs)
            if any(v not in (-1.0, 1.0) for v in s):
                raise DomainError("signs must be ±1")
            if len(s) != len(self.strips()):
                raise DomainError(f"expected {len(self.strips())} signs, got {len(s)}")
            object.__setattr__(self, "signs", s)
        elif self.signs != "averaged":
            raise DomainError("signs must be 'averaged' or a ±1 sequence")

    @property
    def slab_half_width(self) -> float:
        return self.tol / math.sqrt(self.lam)

    def strips(self) -> list[tuple[int, float, float]]:
        return example_strips(self.lam, self.c, self.c0)

    def with_signs(self, signs) -> "ExampleConfig":
        return ExampleConfig(**{**self.__dict__, "signs": signs})


def local_box(cfg: ExampleConfig) -> EvaluationGrid:
    """Box around the slab: |x1| ≤ a, |x2| ≤ a + margin, x3 ∈ [1/2, 1].
    The x2 step resolves the slab with ``slab_nodes`` steps per half-width."""
    a = cfg.x1_half
    b = a + cfg.x2_margin
    step2 = cfg.slab_half_width / cfg.slab_nodes
    return EvaluationGrid.box([-a, -b, X3_RANGE[0]], [a, b, X3_RANGE[1]],
                              [cfg.x1_step, step2, cfg.x3_step])


def region_mask(grid: EvaluationGrid, lam: float, tol: float) -> np.ndarray:
    x1, x2, x3 = np.meshgrid(*grid.axes, indexing="ij", sparse=True)
    inside = (x3 >= X3_RANGE[0]) & (x3 <= X3_RANGE[1])
    return inside & (np.abs(x2 - x1 * x3) <= tol / math.sqrt(lam) * (1 + 1e-12)) & grid.full_mask


def build_region_R(lam: float, tol: float = 0.1, grid: EvaluationGrid | None = None,
                   cfg: ExampleConfig | None = None) -> EvaluationGrid:
    """Nodes with x3 ∈ [1/2, 1] and |x2 - x1 x3| ≤ tol/√λ."""
    if grid is None:
        cfg = ExampleConfig(lam, tol=tol) if cfg is None else cfg
        grid = local_box(cfg)
    region = grid.with_mask(region_mask(grid, lam, tol))
    if region.count == 0:
        need = tol / math.sqrt(lam)
        raise ResolutionError(f"no grid node lies in the slab of half-width {need:.3g}",
                              required=need, actual=max(grid.spacing))
    return region


def strip_field(cfg: ExampleConfig, s: int, lower: float, upper: float, h: float) -> SampledField:
    """1 on the strip lower ≤ y2 ≤ upper, modulated by e^{iλ (s/√λ) y1}."""
    lat = Lattice.box([Y1_RANGE[0], lower], [Y1_RANGE[1], upper], h)
    y1 = lat.axes[0]
    carrier = np.exp(1j * math.sqrt(cfg.lam) * s * y1)
    return SampledField(lat, np.repeat(carrier[:, None], lat.counts[1], axis=1), 1.0)


def strip_step(cfg: ExampleConfig, grid: EvaluationGrid, c_nyq: float = C_NYQ) -> float:
    """Lattice step resolving both the phase and the strip carriers."""
    phase = PhaseFunction.example(cfg.lam)
    lo, hi = grid.bounds()
    top = cfg.strips()[-1][2]
    g = phase.sup_grad(lo, hi, [Y1_RANGE[0], 0.0], [Y1_RANGE[1], top], which="y")
    carrier = math.sqrt(cfg.lam) * cfg.strips()[-1][0]
    return c_nyq / (1.0 + g + carrier)


def strip_integrals(cfg: ExampleConfig, grid: EvaluationGrid, threads: int | None = None,
                    c_nyq: float = C_NYQ) -> np.ndarray:
    """One row per strip: the strip's integral at every masked node of ``grid``."""
    phase = PhaseFunction.example(cfg.lam)
    h = strip_step(cfg, grid, c_nyq)
    rows = []
    for s, lo, hi in cfg.strips():
        f = strip_field(cfg, s, lo, hi, h)
        rows.append(evaluate_T_grid(phase, f, grid, c_nyq=c_nyq, threads=threads, method="tensor"))
    return np.array(rows)


def combine_strips(values: np.ndarray, signs) -> np.ndarray:
    """Square function for "averaged", signed sum otherwise."""
    if isinstance(signs, str):
        return np.sqrt(np.sum(np.abs(values) ** 2, axis=0))
    return np.abs(np.asarray(signs, dtype=float) @ values)


@dataclass(frozen=True)
class ExampleNorm:
    lam: float
    q: float
    norm: float
    region_norm: float
    region_volume: float
    strips: int

    def as_row(self) -> dict:
        return {"lambda": self.lam, "q": self.q, "norm": self.norm, "region_norm": self.region_norm}


def elliptic_example_norm(cfg: ExampleConfig, threads: int | None = None,
                          c_nyq: float = C_NYQ) -> ExampleNorm:
    """L^q norms of the strip construction on the local box and on the slab.

    The x grid is coarse on purpose: in averaged mode only the moduli of the
    strip integrals enter, and those vary on the 1/√λ scale of the slab.
    """
    box = local_box(cfg)
    region = build_region_R(cfg.lam, cfg.tol, box)
    vals = strip_integrals(cfg, box, threads, c_nyq)
    combined = combine_strips(vals, cfg.signs)
    inside = region.full_mask.ravel()
    return ExampleNorm(cfg.lam, cfg.q, lattice_lp_norm(combined, box, cfg.q),
                       lattice_lp_norm(combined[inside], box, cfg.q), region.measure, len(vals))


def sign_average_check(cfg: ExampleConfig, patterns: int = 64, seed: int = 0,
                       threads: int | None = None) -> tuple[float, float]:
    """(mean over random sign patterns of ∫_R |Σ σ_s I_s|^2, ∫_R Σ |I_s|^2)."""
    region = build_region_R(cfg.lam, cfg.tol, cfg=cfg)
    vals = strip_integrals(cfg, region, threads)
    rng = np.random.default_rng(seed)
    sigma = rng.choice([-1.0, 1.0], size=(patterns, len(vals)))
    cell = region.cell_volume
    signed = np.mean(np.sum(np.abs(sigma @ vals) ** 2, axis=1)) * cell
    square = float(np.sum(np.abs(vals) ** 2)) * cell
    return float(signed), square


def completed_square_phase(x, y, s: float, lam: float) -> np.ndarray:
    """φ(x, y) + (s/√λ) y1 for the twisted model phase, written as
    ½ x3 [U² + V²] + η with U, V the shifted squares."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    y1, y2 = y[..., 0], y[..., 1]
    b = s / math.sqrt(lam)
    a = b / x3
    defect = x1 * x3 - x2
    u = y1 + x3 * y2 - x1 / x3 + a
    v = y2 - b + defect / x3
    eta = -0.5 * (x1**2 + defect**2) / x3 + b * (x1 / x3 + defect) - 0.5 * x3 * (a * a + b * b)
    return 0.5 * x3 * (u * u + v * v) + eta


# ----------------------------------------------------------------------------
# hyperbolic construction


def chirp_field(lattice: Lattice, lam: float) -> SampledField:
    """e^{iλ y1²}, which completes the square with the saddle phase."""
    y1 = lattice.axes[0]
    return SampledField(lattice, np.repeat(np.exp(1j * lam * y1**2)[:, None], lattice.counts[1], axis=1), 1.0)


def _row_bands(lattice: Lattice, max_nodes: int) -> list[Lattice]:
    """Split a 2D lattice into bands of whole y2 rows with the same nodes."""
    n1, n2 = lattice.counts
    h2 = lattice.h[1]
    rows = max(1, max_nodes // n1)
    out = []
    for r0 in range(0, n2, rows):
        r1 = min(n2, r0 + rows)
        out.append(Lattice((lattice.lo[0], lattice.lo[1] + r0 * h2),
                           (lattice.hi[0], lattice.lo[1] + r1 * h2), (n1, r1 - r0)))
    return out


def hyperbolic_example_value(lam: float, x, c_nyq: float = C_NYQ, threads: int | None = None,
                             lo=(-0.5, -0.5), hi=(0.5, 0.5), band_nodes: int = 1 << 22) -> np.ndarray:
    """∫ e^{iλ ψ(x, y)} e^{iλ y1²} dy over the box for each row of ``x``.

    The y lattice is swept in bands of rows and the band sums are added in
    order, so memory stays bounded at large λ.
    """
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    phase = PhaseFunction.hyperbolic_example(lam)
    g = phase.sup_grad(xs.min(axis=0), xs.max(axis=0), lo, hi, which="y")
    # the chirp contributes 2λ|y1| to the y-gradient
    h = c_nyq / (1.0 + g + 2 * lam * max(abs(lo[0]), abs(hi[0])))
    total = np.zeros(len(xs), complex)
    for band in _row_bands(Lattice.box(lo, hi, h), band_nodes):
        total += evaluate_T(phase, chirp_field(band, lam), xs, c_nyq=c_nyq, threads=threads)
    return total


def surface_point(x1: float, x3: float, defect: float = 0.0) -> np.ndarray:
    """(x1, x1 x3 + defect, x3)."""
    return np.array([x1, x1 * x3 + defect, x3])


# ----------------------------------------------------------------------------
# rate certificates


@dataclass(frozen=True)
class RateCertificate:
    fit: ExponentFit
    claimed: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.fit.within(self.claimed, self.tol)


def lq_rate_certificate(samples: Iterable[tuple[float, float]], claimed: float,
                        tol: float = 0.07) -> RateCertificate:
    """Least-squares log-log slope of (scale, value) samples against a claim.
    Needs at least four samples spanning a factor of eight in scale."""
    pts = [(float(a), float(b)) for a, b in samples]
    if len(pts) < 4:
        raise DomainError("at least four scale samples are required")
    scales = [a for a, _ in pts]
    if max(scales) < 8 * min(scales):
        raise DomainError("scales must span a factor of at least eight")
    return RateCertificate(loglog_fit(pts), claimed, tol)


def elliptic_sweep(lams: Sequence[float], q: float = 10 / 3, threads: int | None = None,
                   **cfg_kwargs) -> list[dict]:
    """Rows (lambda, q, norm, region_norm, slope_so_far) over a λ sweep."""
    rows = []
    pts = []
    for lam in lams:
        r = elliptic_example_norm(ExampleConfig(lam, q, **cfg_kwargs), threads)
        pts.append((lam, r.region_norm))
        slope = loglog_fit(pts).slope if len(pts) >= 2 else float("nan")
        rows.append({**r.as_row(), "slope_so_far": slope})
    return rows
