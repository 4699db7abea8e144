"""Experiment runner: convergence ladders, order-of-convergence estimates,
prefix-sum state preparation, CSV/plot emission, and the command-line tool.

The observed order of convergence over three nested meshes N_i = N_{i-1} * r
is

    chi' = log((lambda_{N_i} - lambda_{N_{i+1}}) /
               (lambda_{N_{i+1}} - lambda_{N_{i+2}})) / log(r)

oriented so that a power law lambda_N = lambda* + c N^(-chi) gives chi' = chi
(positive for converging ladders); p' = 1/chi' estimates the mesh-count
exponent.  The theoretical worst case for a checkerboard with contrast D_max
is chi* = (4/pi) atan(sqrt(1/D_max)), p* = 1/chi*.
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .assembly import assemble_2d_p1, assemble_LAC, export_matrix_text
from .bpx import bpx_build, interp_multi, verify_flft
from .eigensolve import build_H, coarse_seed, generalized_leading, qpe_emulate
from .errors import ConvergenceFailure, EncodingDefect, StraddleError, UndefinedEstimateError
from .geometry import (
    Box,
    ElementKind,
    MaterialProps,
    MeshSpec,
    RegionMap,
    build_checkerboard,
    region_map_from_text,
)

__all__ = [
    "LadderEntry",
    "ConvergenceLadder",
    "OrderEstimate",
    "AxisRange",
    "GramPrefix",
    "ExperimentConfig",
    "ConfigError",
    "parse_experiment_config",
    "run_ladder",
    "observed_order",
    "theoretical_order",
    "gram_prefix_sum",
    "stateprep_amplitudes",
    "export_csv",
    "read_ladder_csv",
    "emit_plot",
    "fit_loglog_slope",
    "main",
]


# ---------------------------------------------------------------------------
# ladder data and order estimation
# ---------------------------------------------------------------------------

class LadderEntry(NamedTuple):
    level: int
    n_elements: int
    lam: float


@dataclass
class ConvergenceLadder:
    entries: list[LadderEntry]
    skipped: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        ns = [e.n_elements for e in self.entries]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("element counts must increase strictly")

    @property
    def ratio(self) -> int:
        ns = [e.n_elements for e in self.entries]
        if len(ns) < 2:
            raise ValueError("ratio needs at least two levels")
        r = ns[1] / ns[0]
        for a, b in zip(ns, ns[1:]):
            if abs(b / a - r) > 1e-9:
                raise ValueError("element counts are not in a fixed ratio")
        return int(round(r))

    def entry_at_level(self, level: int) -> LadderEntry:
        for e in self.entries:
            if e.level == level:
                return e
        raise KeyError(f"no ladder entry at level {level}")


@dataclass(frozen=True)
class OrderEstimate:
    chi_prime: float
    p_prime: float
    triple: tuple[int, int, int]
    base_level: int


def observed_order(ladder: ConvergenceLadder, i: int) -> OrderEstimate:
    """Order estimate from ladder levels i, i+1, i+2."""
    e0 = ladder.entry_at_level(i)
    e1 = ladder.entry_at_level(i + 1)
    e2 = ladder.entry_at_level(i + 2)
    r = e1.n_elements / e0.n_elements
    if abs(e2.n_elements / e1.n_elements - r) > 1e-9:
        raise ValueError("refinement ratio is not constant over the triple")
    d01 = e0.lam - e1.lam
    d12 = e1.lam - e2.lam
    if d01 == 0.0 or d12 == 0.0 or (d01 > 0) != (d12 > 0):
        raise UndefinedEstimateError(
            f"eigenvalue differences {d01:.3e}, {d12:.3e} are zero or flip sign"
        )
    chi = math.log(d01 / d12) / math.log(r)
    if chi == 0.0:
        raise UndefinedEstimateError("estimated exponent is zero")
    return OrderEstimate(chi, 1.0 / chi, (e0.n_elements, e1.n_elements, e2.n_elements), i)


def theoretical_order(d_max: float) -> tuple[float, float]:
    """Worst-case exponents (chi*, p*) for contrast d_max (d_min normalized to 1)."""
    if d_max < 1.0:
        raise ValueError("normalize so that D_max >= D_min = 1")
    chi = (4.0 / math.pi) * math.atan(math.sqrt(1.0 / d_max))
    return chi, 1.0 / chi


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------

class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    region_map: RegionMap
    element: ElementKind = ElementKind.Q1
    levels: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    tol: float = 1e-10
    workers: int = 1


_KNOWN_KEYS = {
    "schema", "geometry", "blocks", "d_low", "d_max", "sigma_a",
    "nu_sigma_f", "dim", "element", "levels", "tol", "workers",
}


def _parse_levels(text: str) -> list[int]:
    text = text.strip()
    if ".." in text:
        a, b = text.split("..")
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ConfigError(f"empty or reversed level range {text!r}")
        return list(range(lo, hi + 1))
    return [int(t) for t in text.replace(",", " ").split()]


def parse_experiment_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    """Key = value lines with an explicit schema version; unknown keys are
    rejected so stale experiment files fail loudly."""
    kv = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        kv[key] = val
    if kv.get("schema") != "1":
        raise ConfigError("config must declare 'schema = 1'")

    dim = int(kv.get("dim", "2"))
    geometry = kv.get("geometry", "homogeneous")
    sigma_a = float(kv.get("sigma_a", "1"))
    nu_sigma_f = float(kv.get("nu_sigma_f", "1"))
    if geometry == "homogeneous":
        d = float(kv.get("d_max", kv.get("d_low", "1")))
        box = Box((Fraction(0),) * dim, (Fraction(1),) * dim)
        region_map = RegionMap(dim, ((box, MaterialProps(d, sigma_a, nu_sigma_f)),))
    elif geometry == "checkerboard":
        region_map = build_checkerboard(
            int(kv.get("blocks", "4")),
            float(kv.get("d_low", "1")),
            float(kv.get("d_max", "1")),
            sigma_a,
            nu_sigma_f,
            dim=dim,
        )
    elif geometry.startswith("file:"):
        import os

        path = os.path.join(base_dir, geometry[5:])
        with open(path) as f:
            region_map = region_map_from_text(f.read())
    else:
        raise ConfigError(f"unknown geometry {geometry!r}")

    element = ElementKind(kv.get("element", "q1"))
    levels = _parse_levels(kv["levels"]) if "levels" in kv else [1, 2, 3, 4, 5]
    return ExperimentConfig(
        region_map,
        element,
        levels,
        float(kv.get("tol", "1e-10")),
        int(kv.get("workers", "1")),
    )


# ---------------------------------------------------------------------------
# ladder runs
# ---------------------------------------------------------------------------

def _solve_level(config: ExperimentConfig, level: int, tol: float) -> LadderEntry:
    if config.element == ElementKind.P1_TRIANGLE:
        lmat, amat, cmat = assemble_2d_p1(level, config.region_map)
        spec = MeshSpec(2, level, ElementKind.P1_TRIANGLE)
    else:
        spec = MeshSpec(config.region_map.dim, level)
        lmat, amat, cmat = assemble_LAC(spec, config.region_map)
    pair = generalized_leading(lmat, amat, cmat, tol=tol, spec=spec)
    return LadderEntry(level, spec.n_cells, pair.lambda_h)


def run_ladder(config: ExperimentConfig) -> ConvergenceLadder:
    """Assemble and solve every level; straddling levels are reported and
    skipped.  If the requested tolerance is not at least 100x below the
    smallest consecutive eigenvalue gap, all levels are re-solved tighter.
    """
    tol = config.tol
    min_level = config.region_map.min_supported_level()
    usable, skipped = [], []
    for lev in config.levels:
        if lev < min_level:
            skipped.append(
                (lev, f"cells at level {lev} straddle regions (need >= {min_level})")
            )
        else:
            usable.append(lev)

    for _ in range(4):
        if config.workers > 1 and len(usable) > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                entries = list(
                    pool.map(lambda lv: _solve_level(config, lv, tol), usable)
                )
        else:
            entries = [_solve_level(config, lv, tol) for lv in usable]
        entries.sort(key=lambda e: e.level)
        gaps = [abs(a.lam - b.lam) for a, b in zip(entries, entries[1:])]
        min_gap = min(gaps) if gaps else math.inf
        if tol * 100.0 <= min_gap or tol <= 1e-14:
            break
        tol = max(min_gap / 1000.0, 1e-14)
    return ConvergenceLadder(entries, skipped)


# ---------------------------------------------------------------------------
# Gram-matrix prefix sums and hierarchical state preparation
# ---------------------------------------------------------------------------

class AxisRange(NamedTuple):
    """Arithmetic range of relative positions start + i*step, i < count,
    inside one coarse cell (positions in [0, 1])."""

    start: float
    step: float
    count: int


def _axis_gram(r: AxisRange) -> np.ndarray:
    c = r.count
    if c < 0:
        raise ValueError("count must be non-negative")
    if c == 0:
        return np.zeros((2, 2))
    last = r.start + r.step * (c - 1)
    if r.start < -1e-12 or last > 1.0 + 1e-12:
        raise ValueError(
            "positions leave the coarse cell; decompose the range first"
        )
    s_i = c * (c - 1) / 2.0
    s_ii = (c - 1) * c * (2 * c - 1) / 6.0
    s0 = float(c)
    s1 = c * r.start + r.step * s_i
    s2 = c * r.start**2 + 2.0 * r.start * r.step * s_i + r.step**2 * s_ii
    return np.array([[s0 - 2.0 * s1 + s2, s1 - s2], [s1 - s2, s2]])


@dataclass(frozen=True)
class GramPrefix:
    """Per-axis 2x2 Gram matrices with the coarse endpoint values."""

    grams: tuple[np.ndarray, ...]
    values: np.ndarray

    def total(self) -> float:
        g = self.grams[0]
        for gi in self.grams[1:]:
            g = np.kron(g, gi)
        v = self.values.reshape(-1)
        return float(v @ g @ v)


def gram_prefix_sum(coarse_values: np.ndarray, node_positions: Sequence[AxisRange]) -> float:
    """Sum of squared multilinear-interpolated values over a lattice of fine
    nodes inside one coarse cell, in time independent of the node count.

    coarse_values holds the 2^d corner values (shape (2,)*d, last axis
    fastest); node_positions gives one AxisRange per axis.
    """
    vals = np.asarray(coarse_values, dtype=float)
    d = len(node_positions)
    if vals.size != 2**d:
        raise ValueError(f"need 2^{d} corner values, got {vals.size}")
    grams = tuple(_axis_gram(AxisRange(*r)) for r in node_positions)
    return GramPrefix(grams, vals).total()


class _CoarseField:
    """Coarse nodal values with ghost zeros; supports pointwise multilinear
    evaluation and per-coarse-cell corner extraction."""

    def __init__(self, coarse_vec: np.ndarray, coarse_level: int, dim: int):
        n_c = 2**coarse_level - 1
        if coarse_vec.size != n_c**dim:
            raise ValueError(
                f"coarse vector has {coarse_vec.size} entries, expected {n_c**dim}"
            )
        self.dim = dim
        self.cells = 2**coarse_level
        grid = np.zeros((n_c + 2,) * dim)
        grid[(slice(1, n_c + 1),) * dim] = coarse_vec.reshape((n_c,) * dim)
        self.grid = grid

    def corners(self, cell: tuple[int, ...]) -> np.ndarray:
        # cell k in [0, cells) per axis spans coarse coords [k, k+1]
        slc = tuple(slice(k, k + 2) for k in cell)
        return self.grid[slc]

    def value_at(self, cell: tuple[int, ...], rel: tuple[float, ...]) -> float:
        corners = self.corners(cell)
        out = corners
        for x in rel:
            out = (1.0 - x) * out[0] + x * out[1]
        return float(out)


def _axis_groups(i0: int, i1: int, ratio: int):
    """Split fine 1-based indices [i0, i1) of one axis into per-coarse-cell
    AxisRanges: runs strictly inside a cell plus pinned points on coarse
    nodes (position 0 of the right-hand cell)."""
    groups = []
    i = i0
    while i < i1:
        cell, rem = divmod(i, ratio)
        if rem == 0:
            groups.append((cell, AxisRange(0.0, 1.0, 1)))
            i += 1
        else:
            run_end = min(i1, (cell + 1) * ratio)
            count = run_end - i
            groups.append((cell, AxisRange(rem / ratio, 1.0 / ratio, count)))
            i = run_end
    return groups


def _flat_range_boxes(lo: int, hi: int, shape: tuple[int, ...]):
    """Decompose a flat lexicographic index range [lo, hi) over a grid into
    axis-aligned boxes (per-axis half-open index intervals)."""
    if lo >= hi:
        return []
    if len(shape) == 1:
        return [((lo, hi),)]
    inner = int(np.prod(shape[1:]))
    first, fo = divmod(lo, inner)
    last, lo_rem = divmod(hi, inner)
    boxes = []
    if first == last:
        return [((first, first + 1),) + b for b in _flat_range_boxes(fo, lo_rem, shape[1:])]
    boxes += [((first, first + 1),) + b for b in _flat_range_boxes(fo, inner, shape[1:])]
    if last > first + 1:
        boxes.append(((first + 1, last),) + tuple((0, s) for s in shape[1:]))
    boxes += [((last, last + 1),) + b for b in _flat_range_boxes(0, lo_rem, shape[1:])]
    return boxes


def _box_sum_squares(field: _CoarseField, box, ratio: int) -> float:
    axis_groups = [
        _axis_groups(a0 + 1, a1 + 1, ratio) for (a0, a1) in box
    ]  # fine indices are 1-based
    total = 0.0
    idx = [0] * len(axis_groups)
    while True:
        cells = tuple(axis_groups[a][idx[a]][0] for a in range(len(axis_groups)))
        ranges = [axis_groups[a][idx[a]][1] for a in range(len(axis_groups))]
        total += gram_prefix_sum(field.corners(cells), ranges)
        for a in range(len(axis_groups) - 1, -1, -1):
            idx[a] += 1
            if idx[a] < len(axis_groups[a]):
                break
            idx[a] = 0
        else:
            break
    return total


def stateprep_amplitudes(
    coarse_eigvec: np.ndarray, coarse_level: int, fine_level: int, dim: int
) -> np.ndarray:
    """Signed, normalized fine-grid vector assembled top-down by binary range
    splitting, every split evaluated with gram_prefix_sum; signs come from
    pointwise multilinear interpolation.  Equals the directly interpolated
    and normalized vector."""
    if coarse_level > fine_level:
        raise ValueError("coarse_level must not exceed fine_level")
    field = _CoarseField(np.asarray(coarse_eigvec, dtype=float), coarse_level, dim)
    ratio = 2 ** (fine_level - coarse_level)
    n_f = 2**fine_level - 1
    shape = (n_f,) * dim
    n_tot = n_f**dim

    def range_ss(lo, hi):
        return sum(
            _box_sum_squares(field, box, ratio) for box in _flat_range_boxes(lo, hi, shape)
        )

    mags = np.zeros(n_tot)

    def split(lo, hi, mass):
        if mass <= 0.0:
            return
        if hi - lo == 1:
            mags[lo] = math.sqrt(max(mass, 0.0))
            return
        mid = (lo + hi) // 2
        split(lo, mid, range_ss(lo, mid))
        split(mid, hi, range_ss(mid, hi))

    total = range_ss(0, n_tot)
    if total <= 0.0:
        raise ValueError("coarse vector has no mass")
    split(0, n_tot, total)

    out = np.empty(n_tot)
    for flat in range(n_tot):
        rest, coords = flat, []
        for _ in range(dim):
            coords.append(rest % n_f + 1)
            rest //= n_f
        coords.reverse()
        cells_rel = []
        for i in coords:
            cell, rem = divmod(i, ratio)
            cells_rel.append((cell, rem / ratio))
        val = field.value_at(
            tuple(c for c, _ in cells_rel), tuple(x for _, x in cells_rel)
        )
        out[flat] = math.copysign(mags[flat], val) if val != 0.0 else 0.0
    nrm = np.linalg.norm(out)
    return out / nrm


# ---------------------------------------------------------------------------
# CSV and plots
# ---------------------------------------------------------------------------

def export_csv(obj, path, p_star: float = float("nan")) -> None:
    """Ladder -> 'level,N,lambda'; estimates -> 'level,chi_prime,p_prime,p_star'."""
    with open(path, "w") as f:
        if isinstance(obj, ConvergenceLadder):
            f.write("level,N,lambda\n")
            for e in obj.entries:
                f.write(f"{e.level},{e.n_elements},{e.lam!r}\n")
        else:
            f.write("level,chi_prime,p_prime,p_star\n")
            for est in obj:
                f.write(
                    f"{est.base_level},{est.chi_prime!r},{est.p_prime!r},{p_star!r}\n"
                )


def read_ladder_csv(path) -> ConvergenceLadder:
    entries = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "level,N,lambda":
            raise ValueError(f"unexpected CSV header {header!r}")
        for line in f:
            if not line.strip():
                continue
            lev, n, lam = line.split(",")
            entries.append(LadderEntry(int(lev), int(n), float(lam)))
    return ConvergenceLadder(entries)


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    lx, ly = np.log10(np.asarray(x, float)), np.log10(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


def emit_plot(series, path, loglog: bool = False, title: str | None = None) -> dict:
    """Write a standalone SVG; for log-log plots the fitted slope of every
    series is recorded in the SVG metadata.  Returns the metadata dict."""
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4.2))
    slopes = {}
    for x, y, label in series:
        ax.plot(x, y, marker="o", label=label)
        if loglog:
            slopes[label] = fit_loglog_slope(x, y)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    if title:
        ax.set_title(title)
    if series:
        ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    meta = {
        "Description": "; ".join(
            f"slope({k})={v:.6f}" for k, v in slopes.items()
        ) or "neutronlab plot"
    }
    fig.savefig(path, format="svg", metadata=meta)
    plt.close(fig)
    return meta


# ---------------------------------------------------------------------------
# command-line interface
# ---------------------------------------------------------------------------

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_VERIFICATION = 4


def _load_config(args) -> ExperimentConfig:
    if args.config:
        import os

        with open(args.config) as f:
            cfg = parse_experiment_config(f.read(), os.path.dirname(args.config) or ".")
    else:
        box = Box((Fraction(0), Fraction(0)), (Fraction(1), Fraction(1)))
        cfg = ExperimentConfig(
            RegionMap(2, ((box, MaterialProps(1.0, 1.0, 1.0)),))
        )
    if getattr(args, "dmax", None) is not None:
        cfg = ExperimentConfig(
            build_checkerboard(4, 1.0, args.dmax, 1.0, 1.0, dim=cfg.region_map.dim),
            cfg.element, cfg.levels, cfg.tol, cfg.workers,
        )
    if getattr(args, "element", None):
        cfg.element = ElementKind(args.element)
    if getattr(args, "levels", None):
        cfg.levels = _parse_levels(args.levels)
    if getattr(args, "tol", None) is not None:
        cfg.tol = args.tol
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    return cfg


def _cmd_assemble(args) -> int:
    cfg = _load_config(args)
    out_dir = args.out or "."
    import os

    os.makedirs(out_dir, exist_ok=True)
    for lev in cfg.levels:
        if cfg.element == ElementKind.P1_TRIANGLE:
            mats = assemble_2d_p1(lev, cfg.region_map)
        else:
            mats = assemble_LAC(MeshSpec(cfg.region_map.dim, lev), cfg.region_map)
        for name, m in zip(("L", "A", "C"), mats):
            path = os.path.join(out_dir, f"{name}_level{lev}.txt")
            export_matrix_text(m, path)
            print(f"wrote {path} (n={m.n}, nnz={m.nnz})")
    return EXIT_OK


def _cmd_eig(args) -> int:
    cfg = _load_config(args)
    lev = cfg.levels[-1]
    spec = MeshSpec(cfg.region_map.dim, lev)
    if cfg.element == ElementKind.P1_TRIANGLE:
        lmat, amat, cmat = assemble_2d_p1(lev, cfg.region_map)
    else:
        lmat, amat, cmat = assemble_LAC(spec, cfg.region_map)
    pair = generalized_leading(lmat, amat, cmat, tol=cfg.tol, spec=spec)
    print(
        f"level={lev} N={spec.n_cells} lambda={pair.lambda_h:.12f} "
        f"k={pair.k_h:.12f} residual={pair.residual:.3e}"
    )
    if args.seed_level is not None and cfg.element == ElementKind.Q1:
        eps = args.epsilon or 1e-4
        hact = build_H(lmat, amat, cmat, solver_tol=min(cfg.tol, eps / 100.0),
                       spec=spec, map=cfg.region_map)
        seed = coarse_seed(cfg.region_map, args.seed_level, lev)
        res = qpe_emulate(hact, seed, eps)
        print(
            f"qpe: k_estimate={res.k_estimate:.10f} success_prob={res.success_prob:.4f} "
            f"reliable={res.reliable}"
        )
    return EXIT_OK


def _cmd_ladder(args) -> int:
    cfg = _load_config(args)
    ladder = run_ladder(cfg)
    for lev, why in ladder.skipped:
        print(f"level {lev}: skipped ({why})")
    for e in ladder.entries:
        print(f"level {e.level}: N={e.n_elements} lambda={e.lam:.12f}")
    if args.out:
        export_csv(ladder, args.out)
        print(f"wrote {args.out}")
    if args.plot:
        series = [(
            [e.n_elements for e in ladder.entries],
            [e.lam for e in ladder.entries],
            "lambda",
        )]
        emit_plot(series, args.plot, loglog=False, title="eigenvalue ladder")
        print(f"wrote {args.plot}")
    return EXIT_OK


def _cmd_order(args) -> int:
    ladder = read_ladder_csv(args.csv)
    p_star = float("nan")
    if args.dmax is not None:
        _, p_star = theoretical_order(args.dmax)
    print("orientation: chi' is positive for converging ladders (p' = 1/chi')")
    estimates = []
    levels = [e.level for e in ladder.entries]
    for lev in levels[:-2]:
        try:
            est = observed_order(ladder, lev)
        except (UndefinedEstimateError, KeyError):
            continue
        estimates.append(est)
        print(
            f"levels {lev}..{lev + 2}: chi'={est.chi_prime:.4f} p'={est.p_prime:.4f}"
            + (f" (p*={p_star:.4f})" if p_star == p_star else "")
        )
    if args.out:
        export_csv(estimates, args.out, p_star=p_star)
        print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_bpx_verify(args) -> int:
    worst = 0.0
    for d, lev in ((1, 2), (1, 3), (2, 2), (2, 3)):
        bpx = bpx_build(d, lev)
        from .assembly import tensor_stiffness

        homo = verify_flft(bpx, tensor_stiffness(d, lev))
        region_map = build_checkerboard(2, 1.0, 100.0, 1.0, 1.0, dim=d)
        lmat, _, _ = assemble_LAC(MeshSpec(d, lev), region_map)
        hetero = verify_flft(bpx, lmat)
        worst = max(worst, homo, hetero)
        print(f"d={d} L={lev}: FLFT residual homo={homo:.3e} hetero={hetero:.3e}")
    norm_ok = True
    for d, lev in ((1, 3), (2, 3)):
        bpx = bpx_build(d, lev)
        bound = 2.0 * 2.0 ** (d * lev / 2.0)
        nrm = float(np.linalg.norm(bpx.f, 2))
        ok = nrm <= bound
        norm_ok &= ok
        print(f"d={d} L={lev}: |F| = {nrm:.4f} <= {bound:.4f}: {ok}")
    if worst > 1e-9 or not norm_ok:
        print("bpx verification FAILED")
        return EXIT_VERIFICATION
    print("bpx verification ok")
    return EXIT_OK


def _cmd_blockenc_verify(args) -> int:
    from . import blockenc as bq

    items = []
    try:
        for l in (1, 2):
            p = bq.oracle_P_interp(l, l)
            q = bq.oracle_Q_interp(l, l)
            m = 2 ** (l + 1)
            target = np.zeros((m, m))
            blk = interp_multi(1, l, l + 1).matrix
            target[: blk.shape[0], : blk.shape[1]] = blk
            items.append((f"interp_pq(l={l})", bq.combine_PQ(p, q, target)))
        for lev in (2, 3):
            items.append((f"lcu_fhat(d=1,L={lev})", bq.lcu_assemble_Fhat(1, lev)))
        lmat, amat, cmat = assemble_LAC(
            MeshSpec(1, 2), build_checkerboard(2, 1.0, 10.0, 1.0, 1.0, dim=1)
        )
        hd = 0.25
        items.append(
            ("load_A_over_h", bq.load_sparse_encoding(
                amat, norm=float(np.linalg.norm(amat.to_dense() / hd, 2)) * hd * 1.01,
                sparsity=3,
            ))
        )
        for k in range(6):
            fwd = bq.perm_col_index(k, 2, 3, 4)
            back = bq.perm_col_index_inv(fwd, 2, 3, 4)
            if back != k:
                raise EncodingDefect("permutation round trip failed", defect=1.0)
    except EncodingDefect as exc:
        print(f"blockenc verification FAILED: {exc}")
        return EXIT_VERIFICATION
    sys.stdout.write(bq.verification_report(items))
    print("blockenc verification ok")
    return EXIT_OK


def _cmd_stateprep(args) -> int:
    cfg = _load_config(args)
    fine = cfg.levels[-1]
    coarse = args.seed_level if args.seed_level is not None else max(
        cfg.region_map.min_supported_level(), 2
    )
    dim = cfg.region_map.dim
    spec_c = MeshSpec(dim, coarse)
    lmat, amat, cmat = assemble_LAC(spec_c, cfg.region_map)
    pair = generalized_leading(lmat, amat, cmat, tol=cfg.tol, spec=spec_c)
    u_c = pair.u if pair.u.mean() >= 0 else -pair.u
    amps = stateprep_amplitudes(u_c, coarse, fine, dim)
    direct = interp_multi(dim, coarse, fine).matrix @ u_c
    direct = direct / np.linalg.norm(direct)
    dev = float(np.max(np.abs(amps - direct)))
    print(f"coarse level {coarse} -> fine level {fine}: max deviation {dev:.3e}")
    seed = coarse_seed(cfg.region_map, coarse, fine)
    print(f"seed norm {np.linalg.norm(seed):.12f}, dimension {seed.size}")
    if args.out:
        np.savetxt(args.out, amps)
        print(f"wrote {args.out}")
    if dev > 1e-10:
        print("stateprep verification FAILED")
        return EXIT_VERIFICATION
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="neutronlab",
        description="Desk-scale diffusion k-eigenvalue workbench",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, levels_default=None):
        p.add_argument("--config", help="experiment config file")
        p.add_argument("--levels", default=levels_default, help="level range a..b")
        p.add_argument("--dmax", type=float, help="4x4 checkerboard contrast")
        p.add_argument("--element", choices=["q1", "p1"])
        p.add_argument("--tol", type=float)
        p.add_argument("--out", help="output path")
        p.add_argument("--workers", type=int)
        p.add_argument("--seed-level", dest="seed_level", type=int)
        p.add_argument("--epsilon", type=float)

    p = sub.add_parser("assemble", help="dump L, A, C in triplet text form")
    common(p)
    p.set_defaults(func=_cmd_assemble)

    p = sub.add_parser("eig", help="single eigenvalue solve")
    common(p)
    p.set_defaults(func=_cmd_eig)

    p = sub.add_parser("ladder", help="convergence ladder")
    common(p)
    p.add_argument("--plot", help="SVG output path")
    p.set_defaults(func=_cmd_ladder)

    p = sub.add_parser("order", help="order estimates from a ladder CSV")
    p.add_argument("csv", help="ladder CSV produced by the ladder command")
    p.add_argument("--dmax", type=float)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_order)

    p = sub.add_parser("bpx-verify", help="pseudoinverse identity and norm checks")
    common(p)
    p.set_defaults(func=_cmd_bpx_verify)

    p = sub.add_parser("blockenc-verify", help="block-encoding verification suite")
    common(p)
    p.set_defaults(func=_cmd_blockenc_verify)

    p = sub.add_parser("stateprep", help="hierarchical state-preparation pipeline")
    common(p)
    p.set_defaults(func=_cmd_stateprep)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, StraddleError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceFailure as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except EncodingDefect as exc:
        print(f"verification defect: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION


if __name__ == "__main__":
    sys.exit(main())
