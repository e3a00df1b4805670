"""Invariance of linear-in-basis encoders ``phi(x) = M Gamma(x)``.

The kernel component ``f(x) = M^- M Gamma(x) - Gamma(x)`` is invisible to
the encoder, so the adversary's total success computed from ``phi(x)``
must match the success computed from the projected coefficients
``Gamma(x) + f(x)`` mapped back through the pseudo-inverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from ..errors import ConfigError, ShapeError
from ..model import argmax_rows

RELATIVE_CUTOFF = 1e-10


def pseudo_inverse(M: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Moore-Penrose inverse and an orthonormal kernel basis, via SVD.

    Singular values below ``1e-10 * sigma_max`` are treated as zero.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ShapeError("pseudo_inverse needs a matrix")
    if not np.all(np.isfinite(M)):
        raise ConfigError("matrix has non-finite entries")
    rows, cols = M.shape
    if M.size == 0:
        return np.zeros((cols, rows)), np.eye(cols)
    U, sv, Vt = np.linalg.svd(M, full_matrices=True)
    cutoff = RELATIVE_CUTOFF * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > cutoff)) if sv.size and sv[0] > 0 else 0
    inv = (Vt[:rank].T / sv[:rank]) @ U[:, :rank].T
    return inv, Vt[rank:].T.copy()


@dataclass
class LinearPhiDecomposition:
    basis: Callable[[np.ndarray], np.ndarray]  # (n, d) -> (n, m) basis evaluations
    coef: np.ndarray  # (s, m)

    def __post_init__(self):
        self.coef = np.atleast_2d(np.asarray(self.coef, dtype=np.float64))
        self.pinv, self.kernel = pseudo_inverse(self.coef)
        if np.max(np.abs(self.coef @ self.pinv @ self.coef - self.coef), initial=0.0) > 1e-9:
            raise ArithmeticError("pseudo-inverse fails M M^- M = M")

    def gamma(self, xs: np.ndarray) -> np.ndarray:
        g = np.asarray(self.basis(xs), dtype=np.float64)
        if g.ndim != 2 or g.shape[1] != self.coef.shape[1]:
            raise ShapeError(f"basis gives {g.shape}, coefficient matrix expects {self.coef.shape[1]} columns")
        return g

    def phi(self, xs: np.ndarray) -> np.ndarray:
        return self.gamma(xs) @ self.coef.T

    def kernel_component(self, xs: np.ndarray) -> np.ndarray:
        g = self.gamma(xs)
        return g @ (self.pinv @ self.coef).T - g


@dataclass
class InvarianceReport:
    adversary_success: float
    preimage_success: float
    per_domain: List[Tuple[float, float]]
    kernel_residual: float
    preimage_residual: float
    tolerance: float
    sides_agree: bool
    epsilon: float
    invariant: bool
    sample_count: int


def invariance_check(
    decomp: LinearPhiDecomposition,
    samplers: Sequence[Callable[[np.random.Generator, int], np.ndarray]],
    W: np.ndarray,
    B: np.ndarray,
    epsilon: float,
    sample_count: int,
    rng: np.random.Generator,
) -> InvarianceReport:
    """Compare adversary success computed two ways on common samples.

    Direct side: ``argmax(W phi(x) + B)``. Coefficient side: with
    ``v = Gamma(x) + f(x)`` the unique preimage in representation space is
    ``z = pinv(M^-) v = M v``; ``v`` lies in ``M^- I_i`` when ``M^- z = v``
    and ``z`` is in region i of the head.
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    B = np.asarray(B, dtype=np.float64).reshape(-1)
    rows = np.column_stack([W, B])
    if len(np.unique(rows, axis=0)) < rows.shape[0]:
        raise ConfigError("head rows must be pairwise distinct so ties have measure zero")
    if sample_count < 1:
        raise ConfigError("sample_count must be >= 1")
    M, Minv = decomp.coef, decomp.pinv
    lhs, rhs, per = 0.0, 0.0, []
    kernel_res, pre_res = 0.0, 0.0
    for i, (sampler, child) in enumerate(zip(samplers, rng.spawn(len(samplers)))):
        xs = sampler(child, sample_count)
        g = decomp.gamma(xs)
        f = decomp.kernel_component(xs)
        kernel_res = max(kernel_res, float(np.max(np.linalg.norm(f @ M.T, axis=1))))
        direct = argmax_rows(g @ M.T @ W.T + B, child)
        v = g + f
        z = v @ M.T
        pre_res = max(pre_res, float(np.max(np.abs(z @ Minv.T - v))))
        via_coef = argmax_rows(z @ W.T + B, child)
        a, b = float(np.mean(direct == i)), float(np.mean(via_coef == i))
        per.append((a, b))
        lhs += a
        rhs += b
    tol = 3.0 / np.sqrt(sample_count)
    return InvarianceReport(
        lhs, rhs, per, kernel_res, pre_res, tol, bool(abs(lhs - rhs) <= tol), epsilon, bool(lhs <= epsilon),
        sample_count,
    )
