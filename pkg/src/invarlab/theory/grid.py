"""Grid-cell discretisation of representation densities and the partition value."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError, DataError

# cells beyond this count are summed in floating point instead of exactly
EXACT_CELL_LIMIT = 200_000
# relative inset used when testing cell corners against a region predicate
CORNER_INSET = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """``n`` cells per axis on ``[-B, B]^p``; cell j on an axis is ``[-B + 2jB/n, -B + 2(j+1)B/n]``."""

    n: int
    B: float
    p: int

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or not self.B > 0:
            raise ConfigError(f"grid needs n >= 1, B > 0, p >= 1; got n={self.n}, B={self.B}, p={self.p}")

    @property
    def cell_count(self) -> int:
        return self.n**self.p

    @property
    def width(self) -> float:
        return 2.0 * self.B / self.n

    def edges(self) -> np.ndarray:
        return -self.B + self.width * np.arange(self.n + 1)

    def multi_index(self, cells: np.ndarray) -> np.ndarray:
        """Flat cell ids to (m, p) per-axis indices; axis 0 is most significant."""
        return np.stack(np.unravel_index(np.asarray(cells), (self.n,) * self.p), axis=1)

    def lower_corner(self, cells: np.ndarray) -> np.ndarray:
        return -self.B + self.width * self.multi_index(cells)

    def centers(self) -> np.ndarray:
        return self.lower_corner(np.arange(self.cell_count)) + 0.5 * self.width

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Flat cell id per point, or -1 outside the box.

        A point on an interior edge belongs to the higher-index cell; the
        outer faces at +B stay in the last cell.
        """
        z = np.asarray(points, dtype=np.float64)
        inside = np.all(np.abs(z) <= self.B, axis=1)
        idx = np.floor((z + self.B) * self.n / (2.0 * self.B)).astype(np.int64)
        idx = np.clip(idx, 0, self.n - 1)
        flat = np.ravel_multi_index(tuple(idx.T), (self.n,) * self.p) if self.p > 0 else idx
        return np.where(inside, flat, -1)


@dataclass
class DensityEstimate:
    grid: GridSpec
    masses: np.ndarray  # (N, n^p)
    tail_mass: np.ndarray  # (N,)
    counts: Optional[np.ndarray] = None  # integer histogram when built from samples
    totals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.masses = np.atleast_2d(np.asarray(self.masses, dtype=np.float64))
        self.tail_mass = np.asarray(self.tail_mass, dtype=np.float64).reshape(-1)
        if self.masses.shape[1] != self.grid.cell_count or self.tail_mass.shape[0] != self.masses.shape[0]:
            raise DataError(
                f"masses {self.masses.shape} / tail {self.tail_mass.shape} do not fit {self.grid.cell_count} cells"
            )
        if np.any(self.masses < 0) or np.any(self.tail_mass < 0):
            raise DataError("masses must be non-negative")
        totals = self.masses.sum(axis=1) + self.tail_mass
        if np.any(np.abs(totals - 1.0) > 1e-9):
            raise DataError(f"per-domain masses must sum to 1, got {totals}")

    @property
    def N(self) -> int:
        return self.masses.shape[0]

    @classmethod
    def from_counts(cls, grid: GridSpec, counts: np.ndarray, totals: np.ndarray) -> "DensityEstimate":
        counts = np.atleast_2d(np.asarray(counts, dtype=np.int64))
        totals = np.asarray(totals, dtype=np.int64).reshape(-1)
        if np.any(totals < 1):
            raise DataError("every domain needs at least one sample")
        inside = counts.sum(axis=1)
        if np.any(inside > totals):
            raise DataError("cell counts exceed the domain total")
        masses = counts / totals[:, None]
        return cls(grid, masses, (totals - inside) / totals, counts, totals)


def estimate_density(samples: Sequence[np.ndarray], grid: GridSpec) -> DensityEstimate:
    """Histogram each domain's samples on the grid."""
    counts, totals = [], []
    for i, s in enumerate(samples):
        z = np.asarray(s, dtype=np.float64)
        if z.ndim == 1:
            z = z[:, None] if grid.p == 1 else z[None, :]
        if z.shape[0] < 1:
            raise DataError(f"domain {i} has no samples")
        if z.shape[1] != grid.p:
            raise DataError(f"domain {i} samples have dimension {z.shape[1]}, grid has p={grid.p}")
        cells = grid.locate(z)
        counts.append(np.bincount(cells[cells >= 0], minlength=grid.cell_count))
        totals.append(z.shape[0])
    if not counts:
        raise DataError("no domains given")
    return DensityEstimate.from_counts(grid, np.array(counts), np.array(totals))


@dataclass
class RegionAssignment:
    """Cell -> owning domain, plus per-domain boundary (M_1) and interior (M_2) cell sets."""

    owner: np.ndarray  # (n^p,) domain index, -1 when no domain covers the cell
    boundary: List[np.ndarray] = field(default_factory=list)
    interior: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        for i, (b, c) in enumerate(zip(self.boundary, self.interior)):
            if np.intersect1d(b, c).size:
                raise DataError(f"domain {i}: boundary and interior cell sets overlap")


@dataclass
class PartitionValue:
    value: float  # sum over cells of the max mass
    lower: float  # value plus the best single-domain tail share
    upper: float  # value plus every domain's tail
    assignment: RegionAssignment


def _cell_maximum_sum(est: DensityEstimate) -> float:
    if est.counts is not None and est.grid.cell_count * est.N <= EXACT_CELL_LIMIT:
        total = Fraction(0)
        for cell in range(est.grid.cell_count):
            total += max(Fraction(int(c), int(t)) for c, t in zip(est.counts[:, cell], est.totals))
        return float(total)
    return math.fsum(est.masses.max(axis=0))


def partition_value(est: DensityEstimate) -> PartitionValue:
    """Best total success of a disjoint region assignment on the grid.

    The supremum over partitions decomposes cell by cell, so each cell goes
    to the domain with the largest mass there (lowest index on ties).
    """
    owner = np.argmax(est.masses, axis=0)  # argmax returns the first maximiser
    value = _cell_maximum_sum(est)
    cells = np.arange(est.grid.cell_count)
    interior = [cells[owner == i] for i in range(est.N)]
    boundary = [np.zeros(0, dtype=np.int64) for _ in range(est.N)]
    tail = est.tail_mass
    return PartitionValue(
        value, value + float(tail.max()), value + math.fsum(tail), RegionAssignment(owner, boundary, interior)
    )


def tv_relation_check(est: DensityEstimate) -> Tuple[float, float]:
    """Two-domain check that the partition value exceeds 1 by the total variation.

    With tail mass outside the box the identity becomes
    ``value - 1 = tv - (tail_1 + tail_2) / 2``.
    """
    if est.N != 2:
        raise DataError(f"total-variation relation needs exactly 2 domains, got {est.N}")
    tv = 0.5 * math.fsum(np.abs(est.masses[0] - est.masses[1]))
    value_minus_one = partition_value(est).value - 1.0
    slack = 0.5 * float(est.tail_mass.sum())
    if abs(value_minus_one + slack - tv) > 1e-9:
        raise ArithmeticError(f"value - 1 = {value_minus_one} disagrees with tv = {tv} (tail slack {slack})")
    return tv, value_minus_one


def _corners(grid: GridSpec, cell: int) -> np.ndarray:
    lo = grid.lower_corner(np.array([cell]))[0]
    inset = CORNER_INSET * grid.width
    offsets = np.array(list(itertools.product((inset, grid.width - inset), repeat=grid.p)))
    return lo + offsets


def region_assignment(grid: GridSpec, regions: Sequence[Callable[[np.ndarray], np.ndarray]]) -> RegionAssignment:
    """Discretise continuous regions by testing the 2^p (slightly inset) corners of each cell.

    A cell is interior to region i when all corners are inside, boundary
    when they are mixed. Insetting the corners keeps a region whose edge
    coincides with a cell face from counting the neighbouring cell as boundary.
    The owner of a cell is the lowest-index region containing its centre.
    """
    n_cells = grid.cell_count
    inside = np.zeros((len(regions), n_cells, 2**grid.p), dtype=bool)
    for c in range(n_cells):
        corners = _corners(grid, c)
        for i, region in enumerate(regions):
            inside[i, c] = np.asarray(region(corners), dtype=bool)
    centres = grid.centers()
    owner = np.full(n_cells, -1, dtype=np.int64)
    for i in range(len(regions) - 1, -1, -1):
        owner[np.asarray(regions[i](centres), dtype=bool)] = i
    all_in = inside.all(axis=2)
    any_in = inside.any(axis=2)
    cells = np.arange(n_cells)
    boundary = [cells[any_in[i] & ~all_in[i]] for i in range(len(regions))]
    interior = [cells[all_in[i]] for i in range(len(regions))]
    return RegionAssignment(owner, boundary, interior)


def boundary_interior_counts(
    grid: GridSpec, regions: Sequence[Callable[[np.ndarray], np.ndarray]]
) -> List[Tuple[int, int]]:
    """Per region: (number of boundary cells, number of interior cells)."""
    ra = region_assignment(grid, regions)
    return [(int(b.size), int(c.size)) for b, c in zip(ra.boundary, ra.interior)]
