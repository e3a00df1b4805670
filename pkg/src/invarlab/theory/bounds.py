"""Calculators for the finite-k deviation bound and the worst-case unseen-domain bound.

All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

from ..errors import ConfigError, InfeasibleRegimeError


def high_mass_threshold(k: int) -> float:
    """Domains with mu-mass at least k^(-1/4) count as high-mass."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    return k ** -0.25


def m_k(k: int, n_high: int) -> int:
    """Guaranteed repeat count ``ceil(k^(3/4) - sqrt((k ln|H| + k^(3/4)) / sqrt 2))``."""
    if k < 1 or n_high < 1:
        raise InfeasibleRegimeError(f"m_k needs k >= 1 and at least one high-mass domain (k={k}, |H|={n_high})")
    k34 = k**0.75
    value = math.ceil(k34 - math.sqrt((k * math.log(n_high) + k34) / math.sqrt(2.0)))
    if value <= 0:
        raise InfeasibleRegimeError(f"m_k = {value} <= 0: k={k} is too small for |H|={n_high}")
    return value


def cells_per_axis(mk: int, p: int) -> int:
    """floor(m_k^(1/p)), guarded against floating error at perfect powers."""
    r = int(round(mk ** (1.0 / p)))
    while r**p > mk:
        r -= 1
    while (r + 1) ** p <= mk:
        r += 1
    return r


def combined_vc(k: int, v_xi: float) -> float:
    """VC dimension of the k-row discriminator class: k V ln(V)^2."""
    if v_xi <= 0:
        raise ConfigError("V_Xi must be positive")
    return k * v_xi * math.log(v_xi) ** 2


def subgaussian_radius(sigma: float, N: int, p: int, eps: float) -> float:
    """Box half-width with at most eps tail mass for N centred sub-Gaussian laws on R^p."""
    if sigma <= 0 or eps <= 0 or N < 1 or p < 1:
        raise ConfigError("sigma, eps must be positive and N, p >= 1")
    return sigma * math.sqrt(2.0 * math.log(2.0 * N * p / eps))


@dataclass
class BoundInputs:
    k: int
    N: int
    n_i: List[int]
    lam: float
    t1: float
    t2: float
    V_Lambda: float
    V_Xi: float
    B_rho: float
    B_of_inv_sqrt_k: float
    n_high: int
    boundary_cell_count: float
    p: int
    c: float = 1.0

    def __post_init__(self):
        self.n_i = list(self.n_i)
        if len(self.n_i) == 1 and self.k > 1:
            self.n_i = self.n_i * self.k  # one shared sample size
        scalars = {k: v for k, v in asdict(self).items() if k != "n_i"}
        for name, v in list(scalars.items()) + [(f"n_i[{j}]", v) for j, v in enumerate(self.n_i)]:
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and non-negative, got {v}")
        if self.n_high > self.N:
            raise ConfigError(f"|H_k| = {self.n_high} exceeds N = {self.N}")
        if len(self.n_i) != self.k:
            raise ConfigError(f"need one sample size per seen domain: k={self.k}, got {len(self.n_i)}")
        if self.p < 1:
            raise ConfigError("p must be >= 1")


def _vc_sqrt(v: float, n: float) -> float:
    """sqrt(V ln(n / V)), with the log clipped at 0 when n <= V."""
    if v <= 0:
        return 0.0
    return math.sqrt(v * max(math.log(n / v), 0.0))


def bound_rhs(inp: BoundInputs) -> Dict[str, float]:
    k = inp.k
    mk = m_k(k, inp.n_high)
    n_axis = cells_per_axis(mk, inp.p)
    v_ck = combined_vc(k, inp.V_Xi)
    leading = (1 + k * inp.lam) * inp.t1 + 2 * inp.lam / math.sqrt(k) + inp.N * inp.t2
    term_i = inp.lam * max(inp.N - inp.n_high, 0)
    term_ii = 2 * inp.lam * inp.B_rho * inp.B_of_inv_sqrt_k**inp.p / n_axis**inp.p * inp.boundary_cell_count
    term_iii = (2 * inp.c / k) * math.fsum(
        (k * _vc_sqrt(v_ck, n) + _vc_sqrt(inp.V_Lambda, n)) / math.sqrt(n) for n in inp.n_i
    )
    return {
        "leading": leading,
        "term_I": term_i,
        "term_II": term_ii,
        "term_III": term_iii,
        "m_k": mk,
        "cells_per_axis": n_axis,
        "V_Ck": v_ck,
        "probability_floor": 1
        - math.exp(-(k**0.25))
        - math.fsum(4 * math.exp(-n * inp.t1**2) for n in inp.n_i)
        - 2 * inp.N * math.exp(-2 * k * inp.t2**2),
        "total": leading + term_i + term_ii + term_iii,
    }


@dataclass
class WorstCaseBound:
    bound: float
    vc_term: float
    probability_expression: str
    probability: Optional[float] = None
    inputs: Dict[str, float] = field(default_factory=dict)


def worst_case_bound(
    p_l: float,
    delta: float,
    beta_hat: float,
    t: float,
    c: float = 1.0,
    V_Lambda: Optional[float] = None,
    n_min: Optional[int] = None,
    vc_term: Optional[float] = None,
    k: Optional[int] = None,
    n_i: Optional[Sequence[int]] = None,
) -> WorstCaseBound:
    """``(2 / p_l) (beta_hat + t + vc) + delta`` with ``vc = c sqrt(V ln(n/V) / n)``.

    ``vc_term`` may be passed directly instead of (V_Lambda, n_min). With
    ``k`` and ``n_i`` the probability floor is evaluated as well.
    """
    if not 0.0 < p_l < 1.0:
        raise ConfigError(f"p_l must lie in (0, 1), got {p_l}")
    for name, v in (("delta", delta), ("beta_hat", beta_hat), ("t", t), ("c", c)):
        if v < 0 or not math.isfinite(v):
            raise ConfigError(f"{name} must be finite and non-negative")
    if vc_term is None:
        if V_Lambda is None or n_min is None:
            raise ConfigError("give either vc_term or both V_Lambda and n_min")
        if V_Lambda < 0:
            raise ConfigError("V_Lambda must be non-negative")
        if V_Lambda > 0 and n_min <= V_Lambda:
            raise ConfigError(f"n_min = {n_min} must exceed V_Lambda = {V_Lambda}")
        vc_term = c * (math.sqrt(V_Lambda * math.log(n_min / V_Lambda) / n_min) if V_Lambda > 0 else 0.0)
    elif vc_term < 0:
        raise ConfigError("vc_term must be non-negative")
    bound = (2.0 / p_l) * (beta_hat + t + vc_term) + delta
    expr = "1 - exp(-k^2 p_l^2 / 2) / p_l - sum_i 4 exp(-n_i t^2)"
    prob = None
    if k is not None and n_i is not None:
        prob = 1 - math.exp(-(k**2) * p_l**2 / 2) / p_l - math.fsum(4 * math.exp(-n * t**2) for n in n_i)
        expr = f"1 - exp(-{k}^2 * {p_l}^2 / 2) / {p_l} - sum over {len(n_i)} domains of 4 exp(-n_i * {t}^2)"
    inputs = {"p_l": p_l, "delta": delta, "beta_hat": beta_hat, "t": t, "c": c, "vc_term": vc_term}
    if V_Lambda is not None:
        inputs["V_Lambda"] = V_Lambda
    if n_min is not None:
        inputs["n_min"] = n_min
    return WorstCaseBound(bound, vc_term, expr, prob, inputs)
