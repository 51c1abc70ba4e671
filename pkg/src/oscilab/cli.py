"""Batch experiment driver.

Every subcommand reads defaults, then an optional JSON config, then command
line flags, validates the merged config, runs its module preflight checks,
computes, and writes ``<subcommand>.csv`` plus a ``<subcommand>.json`` result
record to the output directory.  One verdict line goes to stdout.

Exit codes: 0 pass or informational, 1 a gate failed or replay mismatched,
2 config schema error, 3 module precondition refused the run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import re
import sys
import tempfile
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import OscilabError, ResolutionError
from .exponents import loglog_fit
from .parallel import set_default_threads

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_PRECONDITION = 0, 1, 2, 3

# keys that steer the run but cannot change its numbers
RUNTIME_KEYS = ("threads", "out")


class ConfigError(Exception):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


# --- config values -----------------------------------------------------------------

_RATIONAL = re.compile(r"^\s*[-+]?\d+(\s*/\s*\d+)?\s*$")


def parse_number(text) -> Fraction | float:
    """Rationals stay exact (``"10/3"``, ``7``); anything else becomes a float."""
    if isinstance(text, bool):
        raise ValueError(f"not a number: {text!r}")
    if isinstance(text, int):
        return Fraction(text)
    if isinstance(text, float):
        return text
    s = str(text).strip()
    if _RATIONAL.match(s):
        return Fraction(s.replace(" ", ""))
    return float(s)


def parse_list(text) -> list:
    """``"3..6"`` (inclusive integer range), ``"64,128"``, or a JSON list."""
    if isinstance(text, list):
        return [parse_number(v) for v in text]
    s = str(text).strip()
    m = re.fullmatch(r"(-?\d+)\s*\.\.\s*(-?\d+)", s)
    if m:
        return [Fraction(v) for v in range(int(m.group(1)), int(m.group(2)) + 1)]
    return [parse_number(v) for v in s.split(",") if v.strip()]


def _canon(value):
    if isinstance(value, dict):
        return {str(k): _canon(value[k]) for k in sorted(value)}
    if isinstance(value, (list, tuple)):
        return [_canon(v) for v in value]
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, Fraction):
        return int(value) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return int(v) if v.is_integer() and abs(v) < 2**53 else v
    if isinstance(value, str) and _RATIONAL.match(value):
        return _canon(Fraction(value.replace(" ", "")))
    return value


def canonical_config(cfg: dict) -> dict:
    """Sorted keys, rationals in lowest terms, runtime-only keys dropped."""
    return _canon({k: v for k, v in cfg.items() if k not in RUNTIME_KEYS})


def config_hash(cfg: dict) -> str:
    text = json.dumps(canonical_config(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _num(v) -> float:
    return float(parse_number(v))


def _nums(v) -> list[float]:
    return [float(x) for x in parse_list(v)]


def _ints(v) -> list[int]:
    out = []
    for x in parse_list(v):
        if x != int(x):
            raise ValueError(f"{x} is not an integer")
        out.append(int(x))
    return out


def _frac_text(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


# --- results -------------------------------------------------------------------------


@dataclass
class Outcome:
    rows: list[dict]
    fits: dict = field(default_factory=dict)
    gates: dict = field(default_factory=dict)
    summary: str = ""
    artifacts: dict = field(default_factory=dict)  # extra JSON files: name -> text

    @property
    def verdict(self) -> str:
        if not self.gates:
            return "INFO"
        return "PASS" if all(self.gates.values()) else "FAIL"


def _cell(v) -> str:
    if isinstance(v, Fraction):
        return _frac_text(v)
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [c for c in r if c not in cols]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def _slopes(pts) -> list[float]:
    return [loglog_fit(pts[: i + 1]).slope if i else math.nan for i in range(len(pts))]


def _fit_dict(pts) -> dict:
    return loglog_fit(pts).as_dict()


# --- subcommands ------------------------------------------------------------------------
#
# Each entry holds the default config and a prepare function.  Prepare turns
# config values into typed arguments and runs the module preflight checks; it
# returns a closure that does the computation.


def _prep_thresholds(cfg):
    from .exponents import (interpolation_threshold, kakeya_improved_threshold, threshold_case_formula,
                            threshold_p, worst_case_min_exponent)

    ns = _ints(cfg["n"])
    if not ns or min(ns) < 3:
        raise ResolutionError("thresholds are defined for n >= 3", 3, min(ns) if ns else None)

    def run(threads):
        rows = []
        for n in ns:
            t, f = threshold_p(n), threshold_case_formula(n)
            rows.append({"n": n, "threshold": t, "case_formula": f, "equal": t == f})
        F = Fraction
        checks = {
            "interpolation": interpolation_threshold((3, F(-1, 6)), (F(10, 3), F(1, 60))) == F(33, 10),
            "kakeya_improved": kakeya_improved_threshold() == F(36, 11),
            "worst_case": worst_case_min_exponent((F(1, 10), F(-1, 5), 0), (F(-1, 2), 1, F(1, 10))) == F(1, 60),
        }
        gates = {"table_matches_case_formula": all(r["equal"] for r in rows), **checks}
        first = ", ".join(f"({r['n']}, {_frac_text(r['threshold'])})" for r in rows[:2])
        return Outcome(rows, {}, gates, f"{len(rows)} rows; {first}")

    return run


def _surface(cfg):
    from .surface_geometry import Surface

    n = int(_num(cfg["n"]))
    kind = cfg.get("surface", "paraboloid")
    if kind == "paraboloid":
        return Surface.paraboloid(n)
    if kind == "hyperbolic":
        return Surface.hyperbolic(n)
    raise ValueError(f"unknown surface {kind!r}")


def _slope_gates(fit: dict, cfg) -> dict:
    gates = {}
    if cfg.get("max_slope") is not None:
        gates["slope_at_most"] = fit["slope"] <= _num(cfg["max_slope"])
    if cfg.get("min_slope") is not None:
        gates["slope_at_least"] = fit["slope"] >= _num(cfg["min_slope"])
    return gates


def _prep_qr(cfg):
    from .oscillatory_core import CATALOG, estimate_QR

    surface = _surface(cfg)
    p = _num(cfg["p"])
    Rs = _nums(cfg["R"])
    catalog = list(cfg["catalog"]) if cfg.get("catalog") else list(CATALOG)
    bad = [c for c in catalog if c not in CATALOG]
    if bad:
        raise ValueError(f"unknown catalog entries {bad}; choose from {list(CATALOG)}")
    if p < 1:
        raise ResolutionError("p must be at least 1", 1.0, p)
    seed = int(cfg["seed"])

    def run(threads):
        rows, pts = [], []
        for R in Rs:
            est = estimate_QR(surface, p, R, catalog, seed, threads=threads)
            pts.append((R, est.value))
            rows.append({"R": R, "p": p, "value": est.value, "best": est.best,
                         **{name: est.values[name] for name in catalog}})
        for r, s in zip(rows, _slopes(pts)):
            r["slope_so_far"] = s
        fit = _fit_dict(pts) if len(pts) > 1 else {}
        gates = _slope_gates(fit, cfg) if fit else {}
        return Outcome(rows, {"value_vs_R": fit}, gates, f"slope {fit.get('slope', math.nan):.4f}")

    return run


def _prep_decompose(cfg):
    from .bg_decomposition import (BROAD, COPLANAR, NARROW, broad_pointwise_certificate, classify_point_3d,
                                   quadruple_sweep, random_cap_coefficients)

    K, K1, samples = int(_num(cfg["K"])), int(_num(cfg["K1"])), int(_num(cfg["samples"]))
    if K < 1 or K1 < 1 or samples < 0:
        raise ResolutionError("K, K1 must be positive and samples nonnegative", 1.0, min(K, K1))
    margin, line = _num(cfg["margin_const"]), _num(cfg["line_const"])
    quad = cfg.get("quadruple")
    seed = int(cfg["seed"])

    def run(threads):
        rng = np.random.default_rng(seed)
        rows = []
        cert_ok = True
        for i in range(samples):
            coeffs = random_cap_coefficients(rng, K, K1)
            pc = classify_point_3d(coeffs, margin_const=margin, line_const=line)
            ratio = math.nan
            if pc.tag == BROAD:
                tf = coeffs.values.sum() * rng.random() * np.exp(2j * np.pi * rng.random())
                cert = broad_pointwise_certificate(tf, coeffs, pc.indices, eps_moll=0.0, strict=False)
                cert_ok &= cert.holds
                ratio = cert.ratio
            rows.append({"sample": i, **pc.as_row(), "c_star": pc.c_star, "certificate_ratio": ratio})
        tags = {r["tag"] for r in rows}
        gates = {"exhaustive": tags <= {BROAD, NARROW, COPLANAR}, "certificate_holds": cert_ok}
        fits = {"tag_counts": {t: sum(r["tag"] == t for r in rows) for t in (BROAD, NARROW, COPLANAR)}}
        if quad:
            rep = quadruple_sweep(int(quad["K"]), int(quad["K1"]), int(quad.get("C", 1)),
                                  int(quad.get("sep_const", 10)), quad.get("anchor_step"))
            fits["quadruple"] = {"checked": rep.checked, "accepted": rep.accepted,
                                 "violations": rep.violations, "bound_units": _frac_text(rep.bound_units)}
            gates["quadruple_no_violations"] = rep.violations == 0
        return Outcome(rows, fits, gates, f"{samples} points classified")

    return run


def _prep_kakeya(cfg):
    from . import kakeya_lab as kl

    mode = cfg["mode"]
    seed = int(cfg["seed"])
    refine = int(_num(cfg["refine"]))
    if refine < 2:
        raise ResolutionError("raster refinement must be at least 2", 2.0, refine)
    deltas = _nums(cfg["delta"])
    if not deltas or min(deltas) <= 0:
        raise ValueError("delta values must be positive")

    def family(delta):
        name = cfg["family"]
        if name == "bush":
            return kl.paraboloid_family(delta)
        if name == "scattered":
            return kl.scattered_family(delta, 3, seed=seed)
        if name in ("curved", "curved-shifted"):
            return kl.curved_family_from_phase(delta, shifted=name == "curved-shifted")
        raise ValueError(f"unknown family {name!r}")

    if mode == "lp":
        p = _num(cfg["p"])
        if p < 1:
            raise ResolutionError("p must be at least 1", 1.0, p)
        family(max(deltas))  # preflight: rejects unknown families and bad δ

        def run(threads):
            rows, pts = [], []
            for d in deltas:
                fam = family(d)
                grid = kl.RasterGrid.for_families(fam, refine=refine)
                norm = kl.indicator_sum_lp(fam, p, grid=grid, threads=threads)
                vol = kl.union_volume(fam, grid, threads=threads)
                pts.append((1 / d, norm))
                rows.append({"delta": d, "N": len(fam.tubes), "p": p, "norm": norm, "union_volume": vol})
            for r, s in zip(rows, _slopes(pts)):
                r["slope_so_far"] = s
            fit = _fit_dict(pts) if len(pts) > 1 else {}
            return Outcome(rows, {"norm_vs_inverse_delta": fit}, _slope_gates(fit, cfg) if fit else {},
                           f"{len(rows)} families")
        return run

    if mode == "multilinear":
        Ns = _ints(cfg["N"])
        delta = deltas[0]

        def run(threads):
            rows = []
            for N in Ns:
                fams = [kl.transverse_family(a, N, delta, 3, seed=seed) for a in range(3)]
                res = kl.multilinear_kakeya_integral(*fams, refine=refine, threads=threads)
                rows.append(res.as_row())
            ratios = [r["ratio"] for r in rows]
            spread = max(ratios) / min(ratios) if min(ratios) > 0 else math.inf
            gates = {}
            if cfg.get("max_spread") is not None:
                gates["normalized_spread"] = spread <= _num(cfg["max_spread"])
            return Outcome(rows, {"normalized_spread": spread}, gates, f"spread {spread:.3f}")
        return run

    if mode == "bilinear":
        thetas = _nums(cfg["theta"])
        delta = deltas[0]

        def run(threads):
            rows = []
            for th in thetas:
                val = kl.bilinear_kakeya_integral(*kl.crossing_pair(th, delta), refine=max(refine, 4))
                rows.append({"theta": th, "delta": delta, "value": val, "ratio_to_delta4": val / delta**4})
            gates = {}
            if cfg.get("band") is not None:
                band = _num(cfg["band"])
                gates["within_band"] = all(1 / band <= r["ratio_to_delta4"] <= band for r in rows)
            return Outcome(rows, {}, gates, f"{len(rows)} angles")
        return run

    raise ValueError(f"unknown kakeya mode {mode!r}")


def _prep_elliptic(cfg):
    from .lower_bound_examples import ExampleConfig, build_region_R, elliptic_sweep, lq_rate_certificate

    lams = _nums(cfg["lambda"])
    q = _num(cfg["q"])
    tol = _num(cfg["tol"])
    for lam in lams:
        ExampleConfig(lam, q)  # preflight

    def run(threads):
        rows = elliptic_sweep(lams, q, threads=threads)
        for r in rows:
            r["region_volume"] = build_region_R(r["lambda"]).measure
        claimed = -(0.75 + 1 / (2 * q))
        fits, gates = {}, {}
        norm_pts = [(r["lambda"], r["region_norm"]) for r in rows]
        vol_pts = [(r["lambda"], r["region_volume"]) for r in rows]
        if len(rows) >= 2:
            fits = {"region_norm": _fit_dict(norm_pts), "region_volume": _fit_dict(vol_pts),
                    "box_norm": _fit_dict([(r["lambda"], r["norm"]) for r in rows]), "claimed": claimed}
        if len(rows) >= 4:
            gates["region_norm_rate"] = lq_rate_certificate(norm_pts, claimed, tol).passed
            gates["region_volume_rate"] = loglog_fit(vol_pts).within(-0.5, 0.05)
        return Outcome(rows, fits, gates, f"region slope {fits.get('region_norm', {}).get('slope', math.nan):.4f}")

    return run


def _prep_hyperbolic(cfg):
    from .lower_bound_examples import hyperbolic_example_value, surface_point

    lams = _nums(cfg["lambda"])
    if min(lams) <= 0:
        raise ValueError("lambda values must be positive")
    x1, x3, defect, tol = (_num(cfg[k]) for k in ("x1", "x3", "defect", "tol"))

    def run(threads):
        rows, pts = [], []
        pts_x = [surface_point(x1, x3), surface_point(x1, x3, defect)]
        for lam in lams:
            on, off = np.abs(hyperbolic_example_value(lam, pts_x, threads=threads))
            pts.append((lam, float(on)))
            rows.append({"lambda": lam, "on_surface": float(on), "off_surface": float(off)})
        for r, s in zip(rows, _slopes(pts)):
            r["slope_so_far"] = s
        fit = _fit_dict(pts) if len(pts) > 1 else {}
        gates = {"rate": abs(fit["slope"] + 0.5) <= tol} if len(pts) >= 3 else {}
        return Outcome(rows, {"on_surface": fit}, gates, f"slope {fit.get('slope', math.nan):.4f}")

    return run


def _fixture_cubes(name):
    from .sparse_cover import CubeSet

    if name == "single":
        return CubeSet([(0, 0, 0)])
    m = re.fullmatch(r"row-(\d+)", str(name))
    if m:
        return CubeSet.row(int(m.group(1)))
    raise ValueError(f"unknown cube fixture {name!r}; use 'single' or 'row-<count>'")


def _prep_cover(cfg):
    from .errors import DomainError
    from .sparse_cover import CubeSet, collections_to_json, cover, cover_report, verify_sparse

    if cfg.get("cubes") is not None:
        src = cfg["cubes"]
        cubes = CubeSet.from_json(Path(src).read_text()) if isinstance(src, str) else CubeSet(src)
    else:
        cubes = _fixture_cubes(cfg["fixture"])
    delta = _num(cfg["delta"])
    C = None if cfg.get("C") is None else _num(cfg["C"])
    if len(cubes) < 1:
        raise DomainError("the cube set must be non-empty")
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    sizes = _ints(cfg["growth_sizes"]) if cfg.get("growth_sizes") else []

    def run(threads):
        colls = cover(cubes, delta, C)
        rep = cover_report(cubes, delta, colls, C, threads)
        rows = []
        for i, c in enumerate(colls):
            checks = {m: verify_sparse(c, mode=m, threads=threads) for m in ("basic", "strengthened")}
            rows.append({"collection": i, "scale": c.scale, "N": c.N, "radius": c.radius,
                         "min_distance": checks["basic"].min_distance,
                         "basic_threshold": checks["basic"].threshold, "basic_ok": checks["basic"].ok,
                         "strengthened_threshold": checks["strengthened"].threshold,
                         "strengthened_ok": checks["strengthened"].ok})
        fits = {"report": rep.to_dict()}
        gates = {"covered": rep.covered, "basic": rep.basic_ok, "strengthened": rep.strengthened_ok}
        if sizes:
            counts = [(m, len(cover(CubeSet.row(m, cubes.dim), delta, C))) for m in sizes]
            fit = _fit_dict(counts)
            fits["count_growth"] = {**fit, "counts": [c for _, c in counts]}
            gates["count_growth"] = fit["slope"] <= delta + 0.1
        art = {"collections": collections_to_json(cubes, delta, colls, C, threads)}
        return Outcome(rows, fits, gates, f"{len(colls)} collection(s), A = {rep.A:.4g}", art)

    return run


def _prep_orthogonality(cfg):
    from .oscillatory_core import PhaseFunction, bessel_orthogonality_check, candidate_extremizer, qr_lattice

    surface = _surface(cfg)
    Rs = _nums(cfg["R"])
    if any(abs(R - round(R)) > 1e-9 or R < 1 for R in Rs):
        raise ResolutionError("R must be a positive integer so caps of side 1/R tile the domain", 1.0, min(Rs))
    tol, seed, cand = _num(cfg["tol"]), int(cfg["seed"]), cfg["candidate"]

    def run(threads):
        phase = PhaseFunction.extension(surface)
        rows, pts = [], []
        for R in Rs:
            f = candidate_extremizer(cand, qr_lattice(surface, R), {"seed": seed})
            res = bessel_orthogonality_check(phase, f, R, threads=threads)
            pts.append((R, res.ratio))
            rows.append({"R": R, "ratio": res.ratio})
        for r, s in zip(rows, _slopes(pts)):
            r["slope_so_far"] = s
        fit = _fit_dict(pts) if len(pts) > 1 else {}
        gates = {"flat_ratio": abs(fit["slope"]) <= tol} if len(pts) >= 3 else {}
        return Outcome(rows, {"ratio_vs_R": fit}, gates, f"slope {fit.get('slope', math.nan):.4f}")

    return run


SUBCOMMANDS: dict[str, tuple[dict, Callable]] = {
    "thresholds": ({"n": "3..60"}, _prep_thresholds),
    "qr-sweep": ({"n": 3, "surface": "paraboloid", "p": 4, "R": [8, 16, 32, 64], "catalog": None,
                  "max_slope": None, "min_slope": None, "seed": 0}, _prep_qr),
    "decompose": ({"K": 20, "K1": 4, "samples": 1000, "margin_const": 1.0, "line_const": 1e3,
                   "quadruple": None, "seed": 0}, _prep_decompose),
    "kakeya": ({"mode": "lp", "family": "bush", "delta": ["1/8", "1/16"], "p": "5/3", "N": [16, 32, 64],
                "theta": None, "refine": 2, "max_spread": None, "band": None, "max_slope": None,
                "min_slope": None, "seed": 0}, _prep_kakeya),
    "example-elliptic": ({"lambda": [64, 128, 256, 512], "q": "10/3", "tol": 0.07}, _prep_elliptic),
    "example-hyperbolic": ({"lambda": [64, 256, 1024], "x1": 0.1, "x3": 0.7, "defect": 0.1, "tol": 0.05},
                           _prep_hyperbolic),
    "cover": ({"fixture": "single", "cubes": None, "delta": "1/3", "C": None, "growth_sizes": None},
              _prep_cover),
    "orthogonality": ({"n": 3, "surface": "paraboloid", "R": [8, 16, 32], "candidate": "random-cap-signs",
                       "tol": 0.15, "seed": 0}, _prep_orthogonality),
}

# sweep flags accepted on the command line, mapped to config keys
SWEEP_FLAGS = {
    "thresholds": ["n"],
    "qr-sweep": ["n", "p", "R", "max_slope", "min_slope"],
    "decompose": ["K", "K1", "samples"],
    "kakeya": ["mode", "family", "delta", "p", "N", "theta", "refine"],
    "example-elliptic": ["lambda", "q"],
    "example-hyperbolic": ["lambda"],
    "cover": ["fixture", "cubes", "delta", "C"],
    "orthogonality": ["R"],
}


def build_config(sub: str, file_cfg: dict | None, flags: dict) -> dict:
    defaults, _ = SUBCOMMANDS[sub]
    cfg = dict(defaults)
    problems = []
    if file_cfg is not None:
        if not isinstance(file_cfg, dict):
            raise ConfigError(["config must be a JSON object"])
        kind = file_cfg.get("kind", sub)
        if kind != sub:
            problems.append(f"config kind {kind!r} does not match subcommand {sub!r}")
        for k, v in file_cfg.items():
            if k == "kind" or k in RUNTIME_KEYS:
                continue
            if k not in defaults:
                problems.append(f"unknown key {k!r} for {sub}; allowed: {sorted(defaults)}")
            else:
                cfg[k] = v
    for k, v in flags.items():
        if v is not None:
            cfg[k] = v
    if problems:
        raise ConfigError(problems)
    cfg["kind"] = sub
    return cfg


def prepare(cfg: dict) -> Callable:
    """Typed preflight for a merged config; returns the compute closure."""
    sub = cfg["kind"]
    _, prep = SUBCOMMANDS[sub]
    body = {k: v for k, v in cfg.items() if k != "kind"}
    try:
        return prep(body)
    except OscilabError:
        raise
    except (KeyError, ValueError, TypeError, ZeroDivisionError) as exc:
        raise ConfigError([f"{type(exc).__name__}: {exc}"]) from exc


def execute(cfg: dict, out_dir: Path, threads: int) -> tuple[Outcome, dict]:
    run = prepare(cfg)
    set_default_threads(threads)
    t0 = time.perf_counter()
    outcome = run(threads)
    wall = time.perf_counter() - t0
    sub = cfg["kind"]
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_name = f"{sub}.csv"
    (out_dir / csv_name).write_text(rows_to_csv(outcome.rows))
    for name, text in outcome.artifacts.items():
        (out_dir / f"{sub}-{name}.json").write_text(text)
    record = {
        "subcommand": sub,
        "config": canonical_config(cfg),
        "config_hash": config_hash(cfg),
        "csv": csv_name,
        "rows": len(outcome.rows),
        "fits": _canon(_jsonable(outcome.fits)),
        "gates": outcome.gates,
        "verdict": outcome.verdict,
        "wall_clock": wall,
    }
    (out_dir / f"{sub}.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return outcome, record


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _verdict_line(record: dict, outcome: Outcome) -> str:
    failed = [k for k, ok in outcome.gates.items() if not ok]
    tail = f" failed={','.join(failed)}" if failed else ""
    return (f"{record['subcommand']} {outcome.verdict} hash={record['config_hash'][:12]} "
            f"{outcome.summary} ({record['wall_clock']:.2f}s){tail}")


# --- replay ----------------------------------------------------------------------------------


def csv_diff(old: str, new: str) -> list[dict]:
    """Cell-level differences between two CSV texts (header included)."""
    a = list(csv.reader(io.StringIO(old)))
    b = list(csv.reader(io.StringIO(new)))
    diffs = []
    if (a[:1] or [[]])[0] != (b[:1] or [[]])[0]:
        diffs.append({"row": "header", "old": a[:1], "new": b[:1]})
        return diffs
    header = a[0] if a else []
    for i in range(1, max(len(a), len(b))):
        ra = a[i] if i < len(a) else None
        rb = b[i] if i < len(b) else None
        if ra is None or rb is None:
            diffs.append({"row": i - 1, "column": None, "old": ra, "new": rb})
            continue
        for c, (x, y) in enumerate(zip(ra, rb)):
            if x != y:
                diffs.append({"row": i - 1, "column": header[c], "old": x, "new": y})
    return diffs


def replay(record_path: Path, threads: int, seed: int | None = None) -> dict:
    """Re-run a recorded config and compare the CSV bytes."""
    record = json.loads(record_path.read_text())
    cfg = dict(record["config"])
    cfg["kind"] = record["subcommand"]
    hash_ok = config_hash(cfg) == record["config_hash"]
    if seed is not None:
        if "seed" not in cfg:
            raise ConfigError([f"{record['subcommand']} has no seed"])
        cfg["seed"] = seed
    old = (record_path.parent / record["csv"]).read_text()
    with tempfile.TemporaryDirectory() as tmp:
        execute(cfg, Path(tmp), threads)
        new = (Path(tmp) / record["csv"]).read_text()
    diffs = csv_diff(old, new)
    return {"subcommand": record["subcommand"], "config_hash": record["config_hash"], "hash_ok": hash_ok,
            "identical": old == new, "threads": threads, "seed": seed, "diffs": diffs,
            "columns": sorted({d["column"] for d in diffs if d.get("column")})}


# --- argument parsing -------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--out", type=Path, help="output directory (default $OSCILAB_OUT or ./oscilab-out)")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    common.add_argument("--seed", type=int, default=None, help="seed for randomized inputs")
    ap = argparse.ArgumentParser(prog="oscilab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, keys in SWEEP_FLAGS.items():
        sp = sub.add_parser(name, parents=[common])
        for k in keys:
            sp.add_argument(f"--{k}", dest=k, default=None)
    rp = sub.add_parser("replay", parents=[common], help="re-run a result record and compare CSV bytes")
    rp.add_argument("record", type=Path, help="path to a <subcommand>.json result record")
    return ap


def _flag_values(sub: str, ns: argparse.Namespace) -> dict:
    out = {}
    for k in SWEEP_FLAGS[sub]:
        v = getattr(ns, k)
        if v is None:
            continue
        default = SUBCOMMANDS[sub][0][k]
        out[k] = parse_list(v) if isinstance(default, list) else v
    if ns.seed is not None:
        if "seed" not in SUBCOMMANDS[sub][0]:
            raise ConfigError([f"{sub} takes no seed"])
        out["seed"] = ns.seed
    return out


def _emit_error(kind: str, payload: dict) -> None:
    print(json.dumps({**payload, "error": kind}, sort_keys=True), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    ns = _parser().parse_args(argv)
    threads = ns.threads or int(os.environ.get("OSCILAB_THREADS", "1") or 1)
    if ns.command == "replay":
        try:
            rep = replay(ns.record, threads, ns.seed)
        except ConfigError as exc:
            _emit_error("config", {"problems": exc.problems})
            return EXIT_CONFIG
        ok = rep["identical"] and rep["hash_ok"]
        print(f"replay {'PASS' if ok else 'FAIL'} {rep['subcommand']} hash={rep['config_hash'][:12]} "
              f"threads={threads} diffs={len(rep['diffs'])}")
        if not ok:
            print(json.dumps(rep, indent=2), file=sys.stderr)
        return EXIT_OK if ok else EXIT_FAIL

    out_dir = ns.out or Path(os.environ.get("OSCILAB_OUT") or "oscilab-out")
    try:
        file_cfg = json.loads(ns.config.read_text()) if ns.config else None
        cfg = build_config(ns.command, file_cfg, _flag_values(ns.command, ns))
        outcome, record = execute(cfg, out_dir, threads)
    except json.JSONDecodeError as exc:
        _emit_error("config", {"problems": [f"invalid JSON: {exc}"]})
        return EXIT_CONFIG
    except ConfigError as exc:
        _emit_error("config", {"problems": exc.problems})
        return EXIT_CONFIG
    except ResolutionError as exc:
        _emit_error("precondition", exc.report())
        return EXIT_PRECONDITION
    except OscilabError as exc:
        _emit_error("precondition", {"message": str(exc), "type": type(exc).__name__})
        return EXIT_PRECONDITION
    print(_verdict_line(record, outcome))
    return EXIT_FAIL if outcome.verdict == "FAIL" else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
