"""Uniform dyadic meshes on the unit domain and piecewise-constant material maps.

Meshes live on [0,1]^d with cell size h = 2^-level.  Material regions are
axis-aligned boxes with dyadic-rational corners, so "does a cell straddle a
region boundary" is decidable exactly with Fraction arithmetic.  Node and
cell indices are 1-based multi-indices; the linear ordering is lexicographic
with the last axis fastest.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import StraddleError

__all__ = [
    "ElementKind",
    "MeshSpec",
    "MaterialProps",
    "Box",
    "RegionMap",
    "build_checkerboard",
    "cell_material",
    "node_linear_index",
    "node_from_linear_index",
    "fission_node_mask",
    "region_map_to_text",
    "region_map_from_text",
]


class ElementKind(str, Enum):
    Q1 = "q1"
    P1_TRIANGLE = "p1"


@dataclass(frozen=True)
class MeshSpec:
    """Uniform mesh on [0,1]^dim with 2^level cells per axis."""

    dim: int
    level: int
    element_kind: ElementKind = ElementKind.Q1

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.level < 1:
            raise ValueError(f"level must be >= 1, got {self.level}")
        if self.element_kind == ElementKind.P1_TRIANGLE and self.dim != 2:
            raise ValueError("P1 triangle elements are 2D only")

    @property
    def h(self) -> Fraction:
        return Fraction(1, 2**self.level)

    @property
    def cells_per_axis(self) -> int:
        return 2**self.level

    @property
    def nodes_per_axis(self) -> int:
        return 2**self.level - 1

    @property
    def n_nodes(self) -> int:
        """Interior node count N = (2^level - 1)^dim."""
        return self.nodes_per_axis**self.dim

    @property
    def n_cells(self) -> int:
        n = self.cells_per_axis**self.dim
        if self.element_kind == ElementKind.P1_TRIANGLE:
            n *= 2
        return n


@dataclass(frozen=True)
class MaterialProps:
    """Diffusion coefficient, absorption and fission production of one region."""

    d: float
    sigma_a: float
    nu_sigma_f: float

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError(f"D must be positive, got {self.d}")
        if not self.sigma_a > 0:
            raise ValueError(f"sigma_a must be positive, got {self.sigma_a}")
        if self.nu_sigma_f < 0:
            raise ValueError(f"nu_sigma_f must be non-negative, got {self.nu_sigma_f}")


def _as_fraction(x) -> Fraction:
    f = Fraction(x)
    if f.denominator & (f.denominator - 1):
        raise ValueError(f"corner {x} is not a dyadic rational")
    return f


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with dyadic-rational corners, lo <= x < hi per axis."""

    lo: tuple[Fraction, ...]
    hi: tuple[Fraction, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(_as_fraction(x) for x in self.lo))
        object.__setattr__(self, "hi", tuple(_as_fraction(x) for x in self.hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("corner dimension mismatch")
        for a, b in zip(self.lo, self.hi):
            if not (0 <= a < b <= 1):
                raise ValueError(f"box interval [{a}, {b}) not inside [0, 1]")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> Fraction:
        v = Fraction(1)
        for a, b in zip(self.lo, self.hi):
            v *= b - a
        return v

    def contains_point(self, point: Sequence[Fraction]) -> bool:
        # half-open per axis, closed at the domain's upper face so that the
        # boxes tile [0,1]^d without gaps
        for x, a, b in zip(point, self.lo, self.hi):
            if not (a <= x < b or (b == 1 and x == 1)):
                return False
        return True

    def contains_interval(self, axis: int, a: Fraction, b: Fraction) -> bool:
        return self.lo[axis] <= a and b <= self.hi[axis]


@dataclass(frozen=True)
class RegionMap:
    """Piecewise-constant material field: boxes tiling [0,1]^dim exactly."""

    dim: int
    regions: tuple[tuple[Box, MaterialProps], ...]

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        if not self.regions:
            raise ValueError("RegionMap needs at least one region")
        for box, _ in self.regions:
            if box.dim != self.dim:
                raise ValueError("region box dimension mismatch")
        vol = sum(box.volume for box, _ in self.regions)
        if vol != 1:
            raise ValueError(f"region boxes do not tile the unit domain (volume {vol})")
        # pairwise disjoint interiors; exact with Fractions, O(z^2) is fine
        # at desk-scale region counts
        for i in range(len(self.regions)):
            for j in range(i + 1, len(self.regions)):
                bi, bj = self.regions[i][0], self.regions[j][0]
                if all(
                    bi.lo[a] < bj.hi[a] and bj.lo[a] < bi.hi[a]
                    for a in range(self.dim)
                ):
                    raise ValueError("region boxes overlap")

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    def material_at(self, point: Sequence) -> MaterialProps:
        pt = tuple(Fraction(x).limit_denominator(2**60) for x in point)
        for box, mat in self.regions:
            if box.contains_point(pt):
                return mat
        raise ValueError(f"point {point} outside the unit domain")

    def min_supported_level(self) -> int:
        """Smallest mesh level at which no cell straddles a region boundary."""
        lev = 1
        for box, _ in self.regions:
            for x in (*box.lo, *box.hi):
                lev = max(lev, (x.denominator - 1).bit_length())
        return max(lev, 1)

    def coefficient_range(self, name: str) -> tuple[float, float]:
        vals = [getattr(mat, name) for _, mat in self.regions]
        return min(vals), max(vals)

    def uniform_coefficient(self, name: str) -> float | None:
        """The coefficient's value if it is the same in every region, else None."""
        vals = {getattr(mat, name) for _, mat in self.regions}
        return vals.pop() if len(vals) == 1 else None


def build_checkerboard(
    n_blocks_per_axis: int,
    d_low: float,
    d_high: float,
    sigma_a: float,
    nu_sigma_f: float,
    dim: int = 2,
) -> RegionMap:
    """Checkerboard of n^dim blocks: even-parity blocks get d_high, odd d_low.

    Parity of a block is the sum of its 0-based block coordinates; sigma_a
    and nu_sigma_f are constant everywhere.  n_blocks_per_axis must be a
    power of two so that every mesh at level >= log2(n) resolves the blocks.
    """
    n = n_blocks_per_axis
    if n < 1 or (n & (n - 1)):
        raise ValueError(
            f"n_blocks_per_axis must be a power of two, got {n} "
            "(mesh cells would straddle block boundaries at some levels)"
        )
    lo_mat = MaterialProps(d_low, sigma_a, nu_sigma_f)
    hi_mat = MaterialProps(d_high, sigma_a, nu_sigma_f)
    w = Fraction(1, n)
    regions = []
    for flat in range(n**dim):
        coords = []
        r = flat
        for _ in range(dim):
            coords.append(r % n)
            r //= n
        coords.reverse()
        box = Box(
            tuple(c * w for c in coords),
            tuple((c + 1) * w for c in coords),
        )
        mat = hi_mat if sum(coords) % 2 == 0 else lo_mat
        regions.append((box, mat))
    return RegionMap(dim, tuple(regions))


def cell_material(map: RegionMap, spec: MeshSpec, cell: Sequence[int]) -> MaterialProps:
    """Material of the open cell interior; errors if the cell straddles regions."""
    if map.dim != spec.dim:
        raise ValueError(f"region map is {map.dim}D but mesh is {spec.dim}D")
    cell = tuple(int(c) for c in cell)
    if len(cell) != spec.dim:
        raise ValueError(f"cell index has {len(cell)} axes, mesh has {spec.dim}")
    for c in cell:
        if not (1 <= c <= spec.cells_per_axis):
            raise IndexError(f"cell index {cell} outside [1, {spec.cells_per_axis}]")
    h = spec.h
    lo = tuple((c - 1) * h for c in cell)
    hi = tuple(c * h for c in cell)
    for box, mat in map.regions:
        if all(box.contains_interval(a, lo[a], hi[a]) for a in range(spec.dim)):
            return mat
    raise StraddleError(
        f"cell {cell} at level {spec.level} straddles a region boundary "
        f"(map resolves at level >= {map.min_supported_level()})"
    )


def node_linear_index(node: Sequence[int], spec: MeshSpec) -> int:
    """1-based node multi-index -> linear index in [0, N), last axis fastest."""
    node = tuple(int(m) for m in node)
    if len(node) != spec.dim:
        raise ValueError(f"node index has {len(node)} axes, mesh has {spec.dim}")
    n = spec.nodes_per_axis
    idx = 0
    for m in node:
        if not (1 <= m <= n):
            raise IndexError(f"node index {node} outside [1, {n}]")
        idx = idx * n + (m - 1)
    return idx


def node_from_linear_index(index: int, spec: MeshSpec) -> tuple[int, ...]:
    """Inverse of node_linear_index."""
    n = spec.nodes_per_axis
    if not (0 <= index < spec.n_nodes):
        raise IndexError(f"linear index {index} outside [0, {spec.n_nodes})")
    out = []
    for _ in range(spec.dim):
        out.append(index % n + 1)
        index //= n
    return tuple(reversed(out))


def _cell_coefficients(map: RegionMap, spec: MeshSpec) -> np.ndarray:
    """(n_cells_per_axis,)*dim arrays of (D, sigma_a, nu_sigma_f) per cell.

    Vectorized over region boxes: every box covers an exact range of cells,
    or a straddle is reported.
    """
    if map.dim != spec.dim:
        raise ValueError(f"region map is {map.dim}D but mesh is {spec.dim}D")
    nc = spec.cells_per_axis
    out = np.full((3,) + (nc,) * spec.dim, np.nan)
    for box, mat in map.regions:
        slc = []
        for a in range(spec.dim):
            lo_c = box.lo[a] * nc
            hi_c = box.hi[a] * nc
            if lo_c.denominator != 1 or hi_c.denominator != 1:
                raise StraddleError(
                    f"region boundary at {box.lo[a]}..{box.hi[a]} cuts through "
                    f"cells at level {spec.level}"
                )
            slc.append(slice(int(lo_c), int(hi_c)))
        idx = (slice(None),) + tuple(slc)
        out[idx] = np.array([mat.d, mat.sigma_a, mat.nu_sigma_f])[
            (slice(None),) + (None,) * spec.dim
        ]
    if np.isnan(out).any():
        raise ValueError("region boxes do not cover every cell")
    return out


def fission_node_mask(map: RegionMap, spec: MeshSpec) -> np.ndarray:
    """Boolean mask over interior nodes: True where some incident cell has
    nu_sigma_f > 0 (the B1 block of the fission matrix)."""
    coeffs = _cell_coefficients(map, spec)
    fis = coeffs[2] > 0
    n = spec.nodes_per_axis
    mask = np.zeros((n,) * spec.dim, dtype=bool)
    # node (i1..id), 1-based, touches cells (i+t) for t in {0,1}^d
    for t in np.ndindex(*(2,) * spec.dim):
        slc = tuple(slice(1 - tt, 1 - tt + n) for tt in t)
        mask |= fis[slc]
    return mask.reshape(-1)


# ---------------------------------------------------------------------------
# text serialization
# ---------------------------------------------------------------------------

_HEADER = "regionmap v1"


def region_map_to_text(map: RegionMap) -> str:
    lines = [_HEADER, f"dim {map.dim}"]
    for box, mat in map.regions:
        spans = " ".join(f"{a}:{b}" for a, b in zip(box.lo, box.hi))
        lines.append(
            f"region {spans} D={mat.d!r} sigma_a={mat.sigma_a!r} "
            f"nu_sigma_f={mat.nu_sigma_f!r}"
        )
    return "\n".join(lines) + "\n"


def region_map_from_text(text: str) -> RegionMap:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != _HEADER:
        raise ValueError(f"expected '{_HEADER}' header")
    if not lines[1].startswith("dim "):
        raise ValueError("expected 'dim <d>' after header")
    dim = int(lines[1].split()[1])
    regions = []
    for ln in lines[2:]:
        parts = ln.split()
        if parts[0] != "region":
            raise ValueError(f"unexpected line: {ln!r}")
        spans = parts[1 : 1 + dim]
        lo, hi = [], []
        for sp in spans:
            a, b = sp.split(":")
            lo.append(Fraction(a))
            hi.append(Fraction(b))
        kv = dict(p.split("=", 1) for p in parts[1 + dim :])
        mat = MaterialProps(
            float(kv["D"]), float(kv["sigma_a"]), float(kv["nu_sigma_f"])
        )
        regions.append((Box(tuple(lo), tuple(hi)), mat))
    return RegionMap(dim, tuple(regions))
