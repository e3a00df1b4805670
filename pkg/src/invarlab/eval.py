"""Unseen-domain evaluation, a logistic-regression baseline, PCA and the k-growth driver."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError, NumericalError, ShapeError
from .model import build_bundle, predict_labels
from .nn import make_rng, sigmoid
from .objective import DomainDataset, empirical_loss
from .trainer import TrainConfig, train
from .worlds import WorldSpec, sample_domain

KGROWTH_HEADER = ["k", "seed", "rvr_accuracy", "logistic_accuracy"]


@dataclass
class EvalReport:
    unseen_accuracy: float
    seen_accuracies: Dict[int, float] = field(default_factory=dict)
    adv_term: Optional[float] = None
    seed: Optional[int] = None
    config: Optional[dict] = None

    def __post_init__(self):
        accs = [self.unseen_accuracy, *self.seen_accuracies.values()]
        if any(not 0.0 <= a <= 1.0 for a in accs):
            raise ValueError("accuracies must lie in [0, 1]")

    def to_json(self) -> str:
        obj = asdict(self)
        obj["seen_accuracies"] = {str(k): v for k, v in self.seen_accuracies.items()}
        return json.dumps(obj, sort_keys=True, indent=2)


def accuracy(bundle, ds: DomainDataset) -> float:
    return float(np.mean(predict_labels(bundle, ds.xs) == ds.ys))


def evaluate_unseen(
    bundle,
    unseen: DomainDataset,
    seen: Optional[Sequence[DomainDataset]] = None,
    lam: float = 0.0,
    seed: Optional[int] = None,
    config: Optional[dict] = None,
) -> EvalReport:
    """Accuracy of ``f(phi(x))`` on the unseen domain; seen domains are optional extras."""
    d = bundle.encoder.net.in_dim
    if unseen.d != d:
        raise ShapeError(f"unseen data has {unseen.d} covariates, bundle expects {d}")
    seen_acc: Dict[int, float] = {}
    adv = None
    if seen:
        seen_acc = {ds.domain_id: accuracy(bundle, ds) for ds in seen}
        if len(seen) == bundle.discriminator.k:
            adv = empirical_loss(seen, bundle, lam, make_rng(0 if seed is None else seed)).adv_term
    return EvalReport(accuracy(bundle, unseen), seen_acc, adv, seed, config)


# --------------------------------------------------------------------------
# logistic regression
# --------------------------------------------------------------------------


def logistic_gradient(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean BCE of ``sigmoid(X w)`` and its gradient ``X^T (sigmoid(X w) - y) / n``."""
    z = X @ w
    p = sigmoid(z)
    # log(1 + e^z) - y z, written stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    return loss, X.T @ (p - y) / X.shape[0]


@dataclass
class LogisticModel:
    mean: np.ndarray
    scale: np.ndarray
    w: np.ndarray  # last entry is the intercept

    def design(self, xs: np.ndarray) -> np.ndarray:
        Z = (np.asarray(xs, dtype=np.float64) - self.mean) / self.scale
        return np.column_stack([Z, np.ones(Z.shape[0])])

    def predict_proba(self, xs: np.ndarray) -> np.ndarray:
        return sigmoid(self.design(xs) @ self.w)

    def predict(self, xs: np.ndarray) -> np.ndarray:
        return (self.predict_proba(xs) > 0.5).astype(np.int64)


def fit_logistic(
    xs: np.ndarray,
    ys: np.ndarray,
    epochs: int = 500,
    lr: float = 0.5,
    rng: Optional[np.random.Generator] = None,
    sample_weights: Optional[np.ndarray] = None,
) -> LogisticModel:
    """Full-batch gradient descent on standardised covariates."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise DataError("logistic regression needs a non-empty 2-D design")
    mean = xs.mean(axis=0)
    scale = xs.std(axis=0)
    scale[scale == 0] = 1.0
    model = LogisticModel(mean, scale, np.zeros(xs.shape[1] + 1))
    if rng is not None:
        model.w = 0.01 * rng.standard_normal(xs.shape[1] + 1)
    X = model.design(xs)
    if sample_weights is not None:
        # fold weights into the gradient by row scaling of the residual
        sw = np.asarray(sample_weights, dtype=np.float64) * xs.shape[0] / np.sum(sample_weights)
    for _ in range(epochs):
        if sample_weights is None:
            _, g = logistic_gradient(model.w, X, ys)
        else:
            g = X.T @ (sw * (sigmoid(X @ model.w) - ys)) / X.shape[0]
        model.w = model.w - lr * g
        if not np.all(np.isfinite(model.w)):
            raise NumericalError("logistic regression diverged")
    return model


def logistic_baseline(
    train_sets: Sequence[DomainDataset],
    test: DomainDataset,
    epochs: int = 500,
    lr: float = 0.5,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Pool the seen domains, fit logistic regression, report test accuracy."""
    if not train_sets:
        raise DataError("no training data for the logistic baseline")
    xs = np.vstack([ds.xs for ds in train_sets])
    ys = np.concatenate([ds.ys for ds in train_sets])
    model = fit_logistic(xs, ys, epochs, lr, rng)
    return float(np.mean(model.predict(test.xs) == test.ys))


# --------------------------------------------------------------------------
# PCA
# --------------------------------------------------------------------------


def _start_block(s: int, b: int) -> np.ndarray:
    # fixed, seed-free starting block with no special alignment to the axes
    i = np.arange(1, s + 1)[:, None]
    j = np.arange(1, b + 1)[None, :]
    Q, _ = np.linalg.qr(np.cos(i * j * 0.7 + j) + 0.1 * i)
    return Q


def pca2(reps: np.ndarray, tol: float = 1e-9, max_iter: int = 20000) -> Tuple[np.ndarray, np.ndarray]:
    """Projection on the top two principal axes and their explained-variance ratios.

    Orthogonal (subspace) iteration on the covariance with a Rayleigh-Ritz
    step; the block carries a few extra vectors to speed up convergence.
    Each axis is signed so its largest-magnitude coordinate is positive.
    """
    X = np.asarray(reps, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise DataError("pca2 needs at least 3 rows of a 2-D array")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / (X.shape[0] - 1)
    total = float(np.trace(C))
    if total <= 0.0:
        raise DataError("representations have zero variance (rank 0)")
    s = C.shape[0]
    b = min(s, 8)
    Q = _start_block(s, b)
    for _ in range(max_iter):
        Q, _ = np.linalg.qr(C @ Q)
        T = Q.T @ C @ Q
        evals, evecs = np.linalg.eigh(T)
        order = np.argsort(evals)[::-1]
        evals, Q = evals[order], Q @ evecs[:, order]
        top = Q[:, :2] if b >= 2 else Q
        resid = np.linalg.norm(C @ top - top * evals[: top.shape[1]], axis=0)
        if np.all(resid <= tol * max(total, 1.0)):
            break
    axes = Q[:, : min(2, b)]
    if axes.shape[1] < 2:
        axes = np.column_stack([axes, np.zeros(s)])
        evals = np.append(evals, 0.0)
    for c in range(axes.shape[1]):
        j = np.argmax(np.abs(axes[:, c]))
        if axes[j, c] < 0:
            axes[:, c] = -axes[:, c]
    explained = np.maximum(evals[:2], 0.0) / total
    return Xc @ axes, explained


# --------------------------------------------------------------------------
# k-growth experiment
# --------------------------------------------------------------------------


@dataclass
class KGrowthRow:
    k: int
    seed: int
    rvr_accuracy: float
    logistic_accuracy: float


@dataclass
class KGrowthResult:
    rows: List[KGrowthRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(KGROWTH_HEADER)
        for r in self.rows:
            w.writerow([r.k, r.seed, repr(r.rvr_accuracy), repr(r.logistic_accuracy)])
        return buf.getvalue()

    def summary(self) -> Dict[str, dict]:
        out = {}
        for k in sorted({r.k for r in self.rows}):
            rv = np.array([r.rvr_accuracy for r in self.rows if r.k == k])
            lg = np.array([r.logistic_accuracy for r in self.rows if r.k == k])
            out[str(k)] = {
                "rvr_mean": float(rv.mean()),
                "rvr_std": float(rv.std(ddof=1)) if rv.size > 1 else 0.0,
                "logistic_mean": float(lg.mean()),
                "logistic_std": float(lg.std(ddof=1)) if lg.size > 1 else 0.0,
                "seeds": int(rv.size),
            }
        return out


def choose_seen_bases(world: WorldSpec, k: int, rng: np.random.Generator) -> List[int]:
    """k distinct seen base domains, drawn without replacement with probability mu."""
    support = np.flatnonzero(world.mu > 0)
    if world.unseen_index is not None:
        support = support[support != world.unseen_index]
    if k > support.size:
        raise ConfigError(f"k={k} needs {k} seen base domains, world offers {support.size}")
    p = world.mu[support] / world.mu[support].sum()
    return [int(i) for i in rng.choice(support, size=k, replace=False, p=p)]


def k_growth_experiment(
    world: WorldSpec,
    k_values: Sequence[int],
    n_per_domain: int,
    config: TrainConfig,
    seeds: Sequence[int],
    n_test: int = 2000,
    lam_times_k: Optional[float] = None,
    logistic_epochs: int = 500,
) -> KGrowthResult:
    """Train on k seen domains and test on the held-out base domain, per seed and k.

    With ``lam_times_k`` the adversary weight is set to ``lam_times_k / k``
    so that the adversarial sum keeps a comparable scale across k.
    """
    k_values = list(k_values)
    if not k_values or any(b <= a for a, b in zip(k_values, k_values[1:])):
        raise ConfigError("k_values must be non-empty and strictly increasing")
    if world.unseen_index is None:
        raise ConfigError("world has no held-out unseen base domain")
    if world.N < max(k_values) + 1:
        raise ConfigError(f"world has {world.N} base domains; k={max(k_values)} needs {max(k_values) + 1}")
    rows = []
    for seed in seeds:
        for k in k_values:
            draw_rng, data_rng, test_rng, init_rng, log_rng = make_rng(seed * 1000 + k).spawn(5)
            bases = choose_seen_bases(world, k, draw_rng)
            seen = [
                sample_domain(world, b, n_per_domain, child, domain_id=i)
                for i, (b, child) in enumerate(zip(bases, data_rng.spawn(k)))
            ]
            test = sample_domain(world, world.unseen_index, n_test, test_rng)
            lam = config.lam if lam_times_k is None else lam_times_k / k
            cfg = TrainConfig(**{**asdict(config), "lam": lam, "seed": seed})
            bundle = build_bundle(k, init_rng, preset=config.preset, d=world.d)
            bundle, _ = train(bundle, seen, cfg)
            rows.append(
                KGrowthRow(
                    k, seed, accuracy(bundle, test), logistic_baseline(seen, test, logistic_epochs, rng=log_rng)
                )
            )
    return KGrowthResult(rows)
