"""Evaluation-time 0-1 losses and the differentiable training surrogates.

The 0-1 loss is

    L = (1/k) sum_i mean_j 1{f(phi(x_ij)) != y_ij} + lam * sum_i mean_j 1{pi_k(psi_k(phi(x_ij))) = i}

The adversary term is a *sum* over domains while the prediction term is a
mean, so useful values of ``lam`` shrink roughly like 1/k.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .model import ModelBundle, argmax_rows, discriminator_logits, encode, predict_labels
from .nn import Mlp, bce_loss, mlp_backward, mlp_forward, softmax_ce_loss


@dataclass
class DomainDataset:
    domain_id: int
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.ys = np.asarray(self.ys, dtype=np.int64).reshape(-1)
        if self.xs.ndim != 2 or self.xs.shape[0] != self.ys.shape[0]:
            raise ShapeError(f"xs {self.xs.shape} and ys {self.ys.shape} disagree")
        if self.xs.shape[0] < 1:
            raise ValueError(f"domain {self.domain_id} has no examples")
        if not np.all(np.isfinite(self.xs)):
            raise ValueError(f"domain {self.domain_id} has non-finite covariates")
        if not np.all((self.ys == 0) | (self.ys == 1)):
            raise ValueError(f"domain {self.domain_id} has labels outside {{0, 1}}")

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def d(self) -> int:
        return self.xs.shape[1]

    def subset(self, idx: np.ndarray) -> "DomainDataset":
        return DomainDataset(self.domain_id, self.xs[idx], self.ys[idx])


@dataclass
class LossReport:
    pred_term: float
    adv_term: float
    total: float
    lam: float


def check_domains(datasets: Sequence[DomainDataset], k: int) -> None:
    ids = sorted(ds.domain_id for ds in datasets)
    if len(datasets) != k:
        raise ShapeError(f"bundle discriminates {k} domains but {len(datasets)} datasets were given")
    if ids != list(range(k)):
        raise ShapeError(f"domain ids must be exactly 0..{k - 1}, got {ids}")


def empirical_loss(
    datasets: Sequence[DomainDataset], bundle: ModelBundle, lam: float, rng: Optional[np.random.Generator] = None
) -> LossReport:
    """0-1 empirical loss; ties in the discriminator's argmax are broken with ``rng``."""
    k = bundle.discriminator.k
    check_domains(datasets, k)
    pred = 0.0
    adv = 0.0
    for ds in sorted(datasets, key=lambda d: d.domain_id):
        pred += float(np.mean(predict_labels(bundle, ds.xs) != ds.ys))
        logits = discriminator_logits(bundle.discriminator, encode(bundle.encoder, ds.xs))
        adv += float(np.mean(argmax_rows(logits, rng) == ds.domain_id))
    pred /= k
    return LossReport(pred, adv, pred + lam * adv, lam)


def _stack(datasets: Sequence[DomainDataset], k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    check_domains(datasets, k)
    ordered = sorted(datasets, key=lambda d: d.domain_id)
    xs = np.vstack([ds.xs for ds in ordered])
    ys = np.concatenate([ds.ys for ds in ordered]).astype(np.float64)
    ids = np.concatenate([np.full(ds.n, ds.domain_id) for ds in ordered])
    # per-domain mean, then mean over domains
    weights = np.concatenate([np.full(ds.n, 1.0 / (k * ds.n)) for ds in ordered])
    return xs, ys, ids, weights


def _disc_pass(bundle: ModelBundle, reps: np.ndarray, ids: np.ndarray, weights: np.ndarray):
    disc = bundle.discriminator
    zt = mlp_forward(disc.zeta, reps)
    ht = mlp_forward(disc.head, zt.output)
    loss, g_logits = softmax_ce_loss(ht.output, ids, weights)
    d_head, g_z = mlp_backward(disc.head, ht, g_logits)
    d_zeta, g_reps = mlp_backward(disc.zeta, zt, g_z)
    return loss, d_zeta, d_head, g_reps


def surrogate_discriminator_loss(
    datasets: Sequence[DomainDataset], bundle: ModelBundle
) -> Tuple[float, Dict[str, Mlp]]:
    """Domain-balanced softmax cross-entropy of the discriminator.

    Gradients are returned for ``zeta`` and ``head`` (W, B) only; the
    encoder is treated as fixed.
    """
    xs, _, ids, weights = _stack(datasets, bundle.discriminator.k)
    reps = encode(bundle.encoder, xs)
    loss, d_zeta, d_head, _ = _disc_pass(bundle, reps, ids, weights)
    return loss, {"zeta": d_zeta, "head": d_head}


@dataclass
class EncoderPredictorResult:
    loss: float
    pred_loss: float
    adv_loss: float
    grads: Dict[str, Mlp]


def encoder_predictor_pass(
    datasets: Sequence[DomainDataset], bundle: ModelBundle, lam: float
) -> EncoderPredictorResult:
    xs, ys, ids, weights = _stack(datasets, bundle.discriminator.k)
    et = mlp_forward(bundle.encoder.net, xs)
    reps = et.output
    pt = mlp_forward(bundle.predictor.net, reps)
    pred_loss, g_prob = bce_loss(pt.output[:, 0], ys, weights)
    d_pred, g_reps_pred = mlp_backward(bundle.predictor.net, pt, g_prob[:, None])
    if lam != 0.0:
        adv_loss, _, _, g_reps_adv = _disc_pass(bundle, reps, ids, weights)
        g_reps = g_reps_pred - lam * g_reps_adv
    else:
        adv_loss = float("nan")
        g_reps = g_reps_pred
    d_enc, _ = mlp_backward(bundle.encoder.net, et, g_reps)
    total = pred_loss if lam == 0.0 else pred_loss - lam * adv_loss
    return EncoderPredictorResult(total, pred_loss, adv_loss, {"encoder": d_enc, "predictor": d_pred})


def surrogate_encoder_predictor_loss(
    datasets: Sequence[DomainDataset], bundle: ModelBundle, lam: float
) -> Tuple[float, Dict[str, Mlp]]:
    """Prediction BCE minus ``lam`` times the discriminator surrogate.

    The encoder receives gradient from both branches (the adversarial one
    with reversed sign); the predictor only from the prediction branch.
    """
    res = encoder_predictor_pass(datasets, bundle, lam)
    return res.loss, res.grads


def per_domain_sets(xs: np.ndarray, ys: np.ndarray, ids: np.ndarray) -> List[DomainDataset]:
    return [DomainDataset(int(i), xs[ids == i], ys[ids == i]) for i in np.unique(ids)]
