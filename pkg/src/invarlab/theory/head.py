"""Explicit discriminator head whose argmax regions are exactly prescribed grid cells.

On one axis with ``n`` cells the j-th row (1-based) gets slope
``j * pi / (2 (n + 1))`` and an intercept chosen so that rows j-1 and j
cross exactly on the shared cell edge. Slopes increase with j, so the
upper envelope visits the rows in order and row j wins strictly inside
cell j. In p dimensions a cell's row is the sum of its per-axis forms,
which is maximal exactly when every axis term is.
"""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from ..errors import ConfigError
from .grid import GridSpec

UNASSIGNED_BIAS = -1e6


def axis_forms(n: int, B: float) -> Tuple[np.ndarray, np.ndarray]:
    """Slopes and intercepts of the n one-dimensional rows on ``[-B, B]``."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    j = np.arange(1, n + 1)
    w = j * np.pi / (2.0 * (n + 1))
    b = np.empty(n)
    b[0] = B * w[0]
    for i in range(1, n):
        edge = -B + 2.0 * B * i / n
        b[i] = (w[i - 1] - w[i]) * edge + b[i - 1]
    return w, b


def cell_rows(grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """(W, b) with one row per grid cell, in flat cell order."""
    w1, b1 = axis_forms(grid.n, grid.B)
    idx = grid.multi_index(np.arange(grid.cell_count))
    W = w1[idx]  # (cells, p): slope of the cell's index on each axis
    b = b1[idx].sum(axis=1)
    return W, b


def constructive_head(owner: Sequence[int], grid: GridSpec, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Head with ``k`` rows where row ``owner[c]`` wins strictly inside cell ``c``.

    ``owner`` maps each cell to a row id in ``[0, k)`` or -1 for no owner.
    Each row may own at most one cell (a row's winning region is convex);
    rows owning nothing get weight 0 and a large negative bias.
    """
    owner = np.asarray(owner, dtype=np.int64).reshape(-1)
    if owner.size != grid.cell_count:
        raise ConfigError(f"owner map has {owner.size} entries for {grid.cell_count} cells")
    used = owner[owner >= 0]
    if used.size and (used.max() >= k or np.unique(used).size != used.size):
        raise ConfigError("each row may own at most one cell and ids must lie in [0, k)")
    Wc, bc = cell_rows(grid)
    W = np.zeros((k, grid.p))
    B = np.full(k, UNASSIGNED_BIAS)
    cells = np.flatnonzero(owner >= 0)
    W[owner[cells]] = Wc[cells]
    B[owner[cells]] = bc[cells]
    return W, B


def head_scores(W: np.ndarray, B: np.ndarray, z: np.ndarray) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) @ np.asarray(W).T + np.asarray(B)
