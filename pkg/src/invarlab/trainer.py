"""Alternating minimax training of the encoder/predictor against the discriminator."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .model import ModelBundle, predict_labels
from .nn import AdamState, adam_step, make_rng, split_rng
from .objective import (
    DomainDataset,
    LossReport,
    check_domains,
    empirical_loss,
    encoder_predictor_pass,
    surrogate_discriminator_loss,
)

TRACE_HEADER = ["epoch", "pred_surrogate", "adv_surrogate", "val_pred01", "val_adv01", "val_accuracy"]
LAMBDA_GRID = (0.01, 0.05, 0.1, 0.5, 1.0)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    lam: float = 0.01
    disc_steps: int = 1
    seed: int = 0
    validation_fraction: float = 0.2
    preset: str = "synthetic"
    selection: str = "last"  # or "stable": best trailing-window validation accuracy
    stability_window: int = 10

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must be in (0, 1), got {self.validation_fraction}")
        for name in ("epochs", "batch_size", "disc_steps", "stability_window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if self.selection not in ("last", "stable"):
            raise ConfigError(f"selection must be 'last' or 'stable', got {self.selection!r}")


@dataclass
class EpochRecord:
    epoch: int
    pred_surrogate: float
    adv_surrogate: float
    val_pred01: float
    val_adv01: float
    val_accuracy: float


@dataclass
class TrainTrace:
    records: List[EpochRecord] = field(default_factory=list)
    selected_epoch: Optional[int] = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in self.records:
            w.writerow([r.epoch] + [repr(float(getattr(r, h))) for h in TRACE_HEADER[1:]])
        return buf.getvalue()

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def split_train_validation(
    datasets: Sequence[DomainDataset], fraction: float, rng: np.random.Generator
) -> Tuple[List[DomainDataset], List[DomainDataset]]:
    """Per-domain shuffled split; validation receives ceil(fraction * n_i) points."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fraction must be in (0, 1), got {fraction}")
    train, val = [], []
    for ds in datasets:
        n_val = math.ceil(fraction * ds.n - 1e-9)
        if n_val < 1 or ds.n - n_val < 1:
            raise DataError(f"domain {ds.domain_id} has {ds.n} points, too few to split at {fraction}")
        perm = rng.permutation(ds.n)
        val.append(ds.subset(np.sort(perm[:n_val])))
        train.append(ds.subset(np.sort(perm[n_val:])))
    return train, val


def pooled_accuracy(bundle: ModelBundle, datasets: Sequence[DomainDataset]) -> float:
    hits = sum(int(np.sum(predict_labels(bundle, ds.xs) == ds.ys)) for ds in datasets)
    return hits / sum(ds.n for ds in datasets)


def _index_stream(n: int, length: int, rng: np.random.Generator) -> np.ndarray:
    chunks = []
    total = 0
    while total < length:
        chunks.append(rng.permutation(n))
        total += n
    return np.concatenate(chunks)[:length]


def train(
    bundle: ModelBundle,
    datasets: Sequence[DomainDataset],
    config: TrainConfig,
    validation: Optional[Sequence[DomainDataset]] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> Tuple[ModelBundle, TrainTrace]:
    """Train on ``datasets`` (split internally unless ``validation`` is given).

    Each minibatch round takes ``batch_size`` points from every domain, runs
    ``disc_steps`` discriminator updates and then one encoder+predictor
    update. Deterministic given ``config.seed``.
    """
    k = bundle.discriminator.k
    check_domains(datasets, k)
    d = bundle.encoder.net.in_dim
    for ds in datasets:
        if ds.d != d:
            raise DataError(f"domain {ds.domain_id} has {ds.d} covariates, bundle expects {d}")
    split_rng_, batch_rng, eval_rng = split_rng(make_rng(config.seed), 3)
    if validation is None:
        train_sets, val_sets = split_train_validation(datasets, config.validation_fraction, split_rng_)
    else:
        train_sets, val_sets = list(datasets), list(validation)
    train_sets = sorted(train_sets, key=lambda s: s.domain_id)

    bundle = bundle.copy()
    st_zeta = AdamState.fresh(bundle.discriminator.zeta)
    st_head = AdamState.fresh(bundle.discriminator.head)
    st_enc = AdamState.fresh(bundle.encoder.net)
    st_pred = AdamState.fresh(bundle.predictor.net)
    lr = config.learning_rate
    bs = config.batch_size
    rounds = math.ceil(max(ds.n for ds in train_sets) / bs)

    trace = TrainTrace()
    best_score = -np.inf
    best_bundle = None
    for epoch in range(1, config.epochs + 1):
        streams = [_index_stream(ds.n, rounds * bs, batch_rng) for ds in train_sets]
        pred_acc, adv_acc = 0.0, 0.0
        for r in range(rounds):
            batch = [ds.subset(stream[r * bs : (r + 1) * bs]) for ds, stream in zip(train_sets, streams)]
            for _ in range(config.disc_steps):
                adv_loss, g = surrogate_discriminator_loss(batch, bundle)
                disc = bundle.discriminator
                try:
                    disc.zeta, st_zeta = adam_step(disc.zeta, g["zeta"], st_zeta, lr)
                    disc.head, st_head = adam_step(disc.head, g["head"], st_head, lr)
                except NumericalError as exc:
                    raise NumericalError(f"epoch {epoch}: discriminator update failed: {exc}") from exc
            res = encoder_predictor_pass(batch, bundle, config.lam)
            if not (np.isfinite(res.pred_loss) and np.isfinite(adv_loss)):
                raise NumericalError(f"epoch {epoch}: non-finite training loss")
            try:
                bundle.encoder.net, st_enc = adam_step(bundle.encoder.net, res.grads["encoder"], st_enc, lr)
                bundle.predictor.net, st_pred = adam_step(bundle.predictor.net, res.grads["predictor"], st_pred, lr)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}: encoder/predictor update failed: {exc}") from exc
            pred_acc += res.pred_loss
            adv_acc += adv_loss
        report = empirical_loss(val_sets, bundle, config.lam, eval_rng)
        rec = EpochRecord(
            epoch,
            pred_acc / rounds,
            adv_acc / rounds,
            report.pred_term,
            report.adv_term,
            pooled_accuracy(bundle, val_sets),
        )
        trace.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if config.selection == "stable" and epoch >= min(config.stability_window, config.epochs):
            score = float(np.mean(trace.column("val_accuracy")[-config.stability_window :]))
            if score > best_score:
                best_score, best_bundle = score, bundle.copy()
                trace.selected_epoch = epoch
    if config.selection == "stable" and best_bundle is not None:
        return best_bundle, trace
    trace.selected_epoch = config.epochs
    return bundle, trace


def lambda_grid(k: int) -> List[float]:
    return [g / k for g in LAMBDA_GRID]


def tune_lambda(
    make_bundle: Callable[[], ModelBundle],
    datasets: Sequence[DomainDataset],
    config: TrainConfig,
    grid: Optional[Sequence[float]] = None,
) -> Tuple[float, List[Tuple[float, float]]]:
    """Pick lam from ``grid`` by trailing-window validation accuracy."""
    k = len(datasets)
    grid = lambda_grid(k) if grid is None else list(grid)
    scores = []
    for lam in grid:
        cfg = TrainConfig(**{**asdict(config), "lam": lam})
        _, trace = train(make_bundle(), datasets, cfg)
        scores.append((lam, float(np.mean(trace.column("val_accuracy")[-config.stability_window :]))))
    best = max(scores, key=lambda t: t[1])[0]
    return best, scores
