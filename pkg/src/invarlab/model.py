"""Encoder / discriminator / predictor bundle and its JSON serialisation."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import Mlp, glorot_mlp, mlp_apply, mlp_forward

# hidden widths per network; encoder widths are our own choice (see README)
PRESETS: Dict[str, dict] = {
    "synthetic": {"d": 30, "s": 10, "encoder_hidden": [20], "zeta_hidden": [10] * 6, "predictor_hidden": [10] * 6},
    "mnist": {"d": 2352, "s": 50, "encoder_hidden": [200], "zeta_hidden": [200] * 6, "predictor_hidden": [200] * 6},
}


@dataclass
class Encoder:
    net: Mlp

    def __post_init__(self):
        if self.net.output_activation != "identity":
            raise ValueError("encoder output activation must be identity")


@dataclass
class Discriminator:
    """``logits = W zeta(z) + B``; the head is stored as a one-layer Mlp with weight W^T."""

    zeta: Mlp
    head: Mlp

    def __post_init__(self):
        if len(self.head.weights) != 1 or self.head.output_activation != "identity":
            raise ShapeError("discriminator head must be a single affine layer")
        if self.head.in_dim != self.zeta.out_dim:
            raise ShapeError(f"head expects {self.head.in_dim} inputs, zeta gives {self.zeta.out_dim}")

    @classmethod
    def from_head(cls, zeta: Mlp, W: np.ndarray, B: np.ndarray) -> "Discriminator":
        W = np.asarray(W, dtype=np.float64)
        return cls(zeta, Mlp([W.T.copy()], [np.asarray(B, dtype=np.float64).copy()]))

    @property
    def W(self) -> np.ndarray:
        return self.head.weights[0].T

    @property
    def B(self) -> np.ndarray:
        return self.head.biases[0]

    @property
    def k(self) -> int:
        return self.head.out_dim


@dataclass
class Predictor:
    net: Mlp

    def __post_init__(self):
        if self.net.output_activation != "sigmoid" or self.net.out_dim != 1:
            raise ValueError("predictor must end in a single sigmoid unit")


@dataclass
class ModelBundle:
    encoder: Encoder
    discriminator: Discriminator
    predictor: Predictor
    preset: str = "custom"

    def __post_init__(self):
        s = self.encoder.net.out_dim
        if self.discriminator.zeta.in_dim != s or self.predictor.net.in_dim != s:
            raise ShapeError("encoder output width must feed both discriminator and predictor")

    @property
    def dims(self) -> Dict[str, int]:
        return {
            "d": self.encoder.net.in_dim,
            "s": self.encoder.net.out_dim,
            "p": self.discriminator.zeta.out_dim,
            "k": self.discriminator.k,
        }

    def copy(self) -> "ModelBundle":
        return ModelBundle(
            Encoder(self.encoder.net.copy()),
            Discriminator(self.discriminator.zeta.copy(), self.discriminator.head.copy()),
            Predictor(self.predictor.net.copy()),
            self.preset,
        )


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------


def encode(encoder: Encoder, batch: np.ndarray) -> np.ndarray:
    return mlp_apply(encoder.net, batch)


def discriminator_logits(disc: Discriminator, reps: np.ndarray) -> np.ndarray:
    reps = np.asarray(reps, dtype=np.float64)
    if reps.ndim != 2 or reps.shape[1] != disc.zeta.in_dim:
        raise ShapeError(f"representations {reps.shape} do not match zeta input {disc.zeta.in_dim}")
    return mlp_apply(disc.head, mlp_forward(disc.zeta, reps).output)


def predict_proba(bundle: ModelBundle, xs: np.ndarray) -> np.ndarray:
    return mlp_apply(bundle.predictor.net, encode(bundle.encoder, xs))[:, 0]


def predict_labels(bundle: ModelBundle, xs: np.ndarray) -> np.ndarray:
    return (predict_proba(bundle, xs) > 0.5).astype(np.int64)


def argmax_pi_k(weights: np.ndarray, rng: np.random.Generator) -> int:
    """Index of a maximal entry, ties broken uniformly at random."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size == 0:
        raise ValueError("argmax over an empty weight vector")
    winners = np.flatnonzero(w == w.max())
    if winners.size == 1:
        return int(winners[0])
    return int(winners[rng.integers(winners.size)])


def argmax_rows(logits: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Row-wise pi_k. Rows without ties never touch ``rng``."""
    logits = np.asarray(logits, dtype=np.float64)
    out = logits.argmax(axis=1)
    tied = (logits == logits.max(axis=1, keepdims=True)).sum(axis=1) > 1
    if tied.any():
        if rng is None:
            raise ValueError("tied logits need an rng for the uniform tie-break")
        for r in np.flatnonzero(tied):
            out[r] = argmax_pi_k(logits[r], rng)
    return out


def build_bundle(
    k: int,
    rng: np.random.Generator,
    preset: str = "synthetic",
    p: Optional[int] = None,
    d: Optional[int] = None,
    s: Optional[int] = None,
    encoder_hidden: Optional[Sequence[int]] = None,
    zeta_hidden: Optional[Sequence[int]] = None,
    predictor_hidden: Optional[Sequence[int]] = None,
) -> ModelBundle:
    """Glorot-initialised bundle. ``p`` defaults to ``s``.

    Initialisation order is encoder, zeta, head, predictor, all from ``rng``.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown architecture preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = dict(PRESETS[preset])
    d = cfg["d"] if d is None else d
    s = cfg["s"] if s is None else s
    p = s if p is None else p
    enc_h = cfg["encoder_hidden"] if encoder_hidden is None else list(encoder_hidden)
    zeta_h = cfg["zeta_hidden"] if zeta_hidden is None else list(zeta_hidden)
    pred_h = cfg["predictor_hidden"] if predictor_hidden is None else list(predictor_hidden)
    if min(k, d, s, p) <= 0:
        raise ConfigError(f"dimensions must be positive: d={d} s={s} p={p} k={k}")
    encoder = Encoder(glorot_mlp([d, *enc_h, s], rng))
    zeta = glorot_mlp([s, *zeta_h, p], rng)
    head = glorot_mlp([p, k], rng)
    predictor = Predictor(glorot_mlp([s, *pred_h, 1], rng, output_activation="sigmoid"))
    return ModelBundle(encoder, Discriminator(zeta, head), predictor, preset)


# --------------------------------------------------------------------------
# serialisation
# --------------------------------------------------------------------------


def _blob(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _unblob(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).astype(np.float64)


def _mlp_to_dict(net: Mlp) -> dict:
    return {
        "output_activation": net.output_activation,
        "layers": [{"weight": _blob(w), "bias": _blob(b)} for w, b in zip(net.weights, net.biases)],
    }


def _mlp_from_dict(obj: dict) -> Mlp:
    layers = obj["layers"]
    return Mlp(
        [_unblob(layer["weight"]) for layer in layers],
        [_unblob(layer["bias"]) for layer in layers],
        obj["output_activation"],
    )


def bundle_to_dict(bundle: ModelBundle) -> dict:
    return {
        "format": "invarlab-bundle/1",
        "preset": bundle.preset,
        "dims": bundle.dims,
        "encoder": _mlp_to_dict(bundle.encoder.net),
        "zeta": _mlp_to_dict(bundle.discriminator.zeta),
        "head": _mlp_to_dict(bundle.discriminator.head),
        "predictor": _mlp_to_dict(bundle.predictor.net),
    }


def bundle_from_dict(obj: dict) -> ModelBundle:
    bundle = ModelBundle(
        Encoder(_mlp_from_dict(obj["encoder"])),
        Discriminator(_mlp_from_dict(obj["zeta"]), _mlp_from_dict(obj["head"])),
        Predictor(_mlp_from_dict(obj["predictor"])),
        obj.get("preset", "custom"),
    )
    if bundle.dims != obj["dims"]:
        raise ShapeError(f"stored dims {obj['dims']} disagree with layer shapes {bundle.dims}")
    return bundle


def dumps_bundle(bundle: ModelBundle) -> str:
    return json.dumps(bundle_to_dict(bundle), sort_keys=True)


def loads_bundle(text: str) -> ModelBundle:
    return bundle_from_dict(json.loads(text))
