"""How the best k-domain adversary approaches the partition value as k grows.

Works directly in representation space: each base domain is a density on
R^p and the structure map is the identity.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr
from scipy.stats import chi2, ncx2

from ..errors import ConfigError, InfeasibleRegimeError
from ..model import argmax_rows
from ..nn import AdamState, Mlp, adam_step, make_rng, softmax_ce_loss
from .bounds import cells_per_axis, high_mass_threshold, m_k
from .grid import DensityEstimate, GridSpec, estimate_density, partition_value
from .head import constructive_head, head_scores

LIMIT_HEADER = ["k", "constructive_value", "trained_value", "oracle_value", "seed"]


@dataclass
class RepWorld:
    """N base densities on R^p with prior mu.

    ``samplers[i](rng, n)`` draws (n, p) points. ``cell_masses(edges)``, when
    given, returns exact (N, cells) probabilities for the product cells
    built from per-axis edge arrays (outer edges may be infinite).
    ``radius(eps)`` is a radius B with sum_i P_i(||z|| >= B) <= eps.
    """

    mu: np.ndarray
    p: int
    samplers: List[Callable[[np.random.Generator, int], np.ndarray]]
    radius: Callable[[float], float]
    cell_masses: Optional[Callable[[Sequence[np.ndarray]], np.ndarray]] = None

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if self.mu.size != len(self.samplers) or np.any(self.mu < 0) or abs(self.mu.sum() - 1) > 1e-9:
            raise ConfigError("mu must be a probability vector with one entry per base density")

    @property
    def N(self) -> int:
        return self.mu.size


def gaussian_rep_world(means, sds, mu=None) -> RepWorld:
    """Isotropic Gaussians with exact cell probabilities."""
    means = np.asarray(means, dtype=np.float64)
    if means.ndim == 1:
        means = means[:, None]  # one scalar mean per domain
    N, p = means.shape
    sds = np.broadcast_to(np.asarray(sds, dtype=np.float64), (N,)).copy()
    mu = np.full(N, 1.0 / N) if mu is None else np.asarray(mu, dtype=np.float64)

    def sampler(i):
        return lambda rng, n: means[i] + sds[i] * rng.standard_normal((n, p))

    norms2 = (means**2).sum(axis=1)

    def total_tail(r: float) -> float:
        # sum over domains of P(||z||_2 >= r); ||z||^2 / sd^2 is noncentral chi-square
        return float(sum(ncx2.sf(r * r / sd**2, p, nc / sd**2) if nc > 0 else chi2.sf(r * r / sd**2, p)
                         for sd, nc in zip(sds, norms2)))

    def radius(eps: float) -> float:
        """Smallest B with total tail mass (summed over domains) at most eps."""
        hi = 1.0
        while total_tail(hi) > eps:
            hi *= 2.0
        if hi == 1.0 and total_tail(0.0) <= eps:
            return 1e-12
        return float(brentq(lambda r: total_tail(r) - eps, 0.0, hi, xtol=1e-12))

    def cell_masses(edges: Sequence[np.ndarray]) -> np.ndarray:
        out = []
        for i in range(N):
            per_axis = [np.diff(ndtr((np.asarray(e) - means[i, a]) / sds[i])) for a, e in enumerate(edges)]
            prob = per_axis[0]
            for extra in per_axis[1:]:
                prob = np.multiply.outer(prob, extra)
            out.append(np.asarray(prob).reshape(-1))
        return np.array(out)

    return RepWorld(mu, p, [sampler(i) for i in range(N)], radius, cell_masses)


def oracle_value(world: RepWorld, rng: np.random.Generator, fine_n: Optional[int] = None, mc: int = 10**6) -> float:
    """Partition value of the base densities on a fine grid."""
    fine_n = fine_n or (4096 if world.p == 1 else max(8, int(4096 ** (1.0 / world.p))))
    grid = GridSpec(fine_n, world.radius(1e-12), world.p)
    if world.cell_masses is not None:
        masses = world.cell_masses([grid.edges()] * world.p)
        tail = np.clip(1.0 - masses.sum(axis=1), 0.0, None)
        est = DensityEstimate(grid, masses, tail)
    else:
        est = estimate_density([s(child, mc) for s, child in zip(world.samplers, rng.spawn(world.N))], grid)
    return partition_value(est).value


def draw_bases(mu: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(mu)
    return np.minimum(np.searchsorted(cdf / cdf[-1], rng.random(k), side="right"), mu.size - 1)


def limit_grid(world: RepWorld, k: int) -> GridSpec:
    """floor(m_k^(1/p)) cells per axis on the box of tail mass 1/sqrt(k); one cell when m_k is undefined."""
    n_high = int(np.sum(world.mu >= high_mass_threshold(k)))
    try:
        n_axis = max(1, cells_per_axis(m_k(k, n_high), world.p))
    except InfeasibleRegimeError:
        n_axis = 1
    return GridSpec(n_axis, world.radius(1.0 / math.sqrt(k)), world.p)


def assign_cells(masses: np.ndarray, drawn: np.ndarray) -> np.ndarray:
    """Give every cell its own drawn ID.

    Cells are visited in decreasing order of their best base mass; each
    takes the next unused drawn copy of the heaviest base that still has
    one. A base that appears r times can therefore own at most r cells.
    """
    N, cells = masses.shape
    copies = {b: list(np.flatnonzero(drawn == b)) for b in range(N)}
    owner = np.full(cells, -1, dtype=np.int64)
    for c in np.argsort(-masses.max(axis=0), kind="stable"):
        for b in np.argsort(-masses[:, c], kind="stable"):
            if copies[int(b)]:
                owner[c] = copies[int(b)].pop(0)
                break
    return owner


def extended_edges(grid: GridSpec) -> List[np.ndarray]:
    """Grid edges with the outer ones pushed to infinity: the head's winning regions."""
    e = grid.edges().copy()
    e[0], e[-1] = -np.inf, np.inf
    return [e] * grid.p


def head_success(W: np.ndarray, B: np.ndarray, samples: Sequence[np.ndarray], rng: np.random.Generator) -> float:
    """Sum over IDs j of the fraction of ID j's samples that the head sends to j."""
    return sum(
        float(np.mean(argmax_rows(head_scores(W, B, z), rng) == j)) for j, z in enumerate(samples)
    )


def train_head(
    samples: Sequence[np.ndarray], rng: np.random.Generator, steps: int = 300, lr: float = 0.05
) -> tuple:
    """Fit (W, B) by Adam on domain-balanced softmax cross-entropy; the structure map is the identity."""
    k = len(samples)
    p = samples[0].shape[1]
    z = np.vstack(samples)
    ids = np.concatenate([np.full(len(s), j) for j, s in enumerate(samples)])
    weights = np.concatenate([np.full(len(s), 1.0 / (k * len(s))) for s in samples])
    head = Mlp([0.01 * rng.standard_normal((p, k))], [np.zeros(k)])
    state = AdamState.fresh(head)
    for _ in range(steps):
        logits = z @ head.weights[0] + head.biases[0]
        _, g = softmax_ce_loss(logits, ids, weights)
        grads = Mlp([z.T @ g], [g.sum(axis=0)])
        head, state = adam_step(head, grads, state, lr)
    return head.weights[0].T, head.biases[0]


@dataclass
class LimitRow:
    k: int
    constructive_value: float
    trained_value: float
    oracle_value: float
    seed: int


@dataclass
class LimitTrace:
    rows: List[LimitRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LIMIT_HEADER)
        for r in self.rows:
            w.writerow([r.k, repr(r.constructive_value), repr(r.trained_value), repr(r.oracle_value), r.seed])
        return buf.getvalue()


def adversary_limit_experiment(
    world: RepWorld,
    k_schedule: Sequence[int],
    seed: int,
    mc_per_domain: int = 1000,
    train_per_domain: int = 100,
    train_steps: int = 300,
    train_trained_head: bool = True,
) -> LimitTrace:
    """For each k: draw k IDs from mu, build the constructive head and a trained head, score both.

    The constructive value is exact when the world supplies cell masses and
    a Monte Carlo evaluation of the head otherwise. The trained head is
    always scored on fresh samples.
    """
    ks = list(k_schedule)
    if not ks:
        raise ConfigError("k_schedule is empty")
    if any(b <= a for a, b in zip(ks, ks[1:])) or ks[0] < 1:
        raise ConfigError("k_schedule must be positive and strictly increasing")
    root = make_rng(seed)
    oracle_rng, *k_rngs = root.spawn(len(ks) + 1)
    oracle = oracle_value(world, oracle_rng)
    trace = LimitTrace()
    for k, krng in zip(ks, k_rngs):
        draw_rng, mc_rng, tr_rng, ev_rng = krng.spawn(4)
        drawn = draw_bases(world.mu, k, draw_rng)
        grid = limit_grid(world, k)
        if world.cell_masses is not None:
            masses = world.cell_masses(extended_edges(grid))
        else:
            pts = [s(c, mc_per_domain) for s, c in zip(world.samplers, mc_rng.spawn(world.N))]
            clipped = [np.clip(z, -grid.B, grid.B) for z in pts]
            masses = estimate_density(clipped, grid).masses
        owner = assign_cells(masses, drawn)
        W, B = constructive_head(owner, grid, k)
        cells = np.flatnonzero(owner >= 0)
        constructive = math.fsum(masses[drawn[owner[c]], c] for c in cells)
        trained = float("nan")
        if train_trained_head:
            tr = [world.samplers[b](c, train_per_domain) for b, c in zip(drawn, tr_rng.spawn(k))]
            Wt, Bt = train_head(tr, tr_rng, steps=train_steps)
            ev = [world.samplers[b](c, mc_per_domain) for b, c in zip(drawn, ev_rng.spawn(k))]
            trained = head_success(Wt, Bt, ev, ev_rng)
        trace.rows.append(LimitRow(k, constructive, trained, oracle, seed))
    return trace
