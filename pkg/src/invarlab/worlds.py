"""Hierarchical data model: a distribution over base domains plus generators.

Synthetic domains follow an accept-reject scheme: draw ``x ~ N(mean_i, sigma_i sigma_i^T)``
and ``y ~ Ber(b_i)``, keep the pair only if the invariant rule on the
common covariates and the domain rule on the remaining covariates both
agree with ``y``.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BadMagicError, ConfigError, CountMismatchError, DataError, TruncatedFileError
from .nn import make_rng, sigmoid
from .objective import DomainDataset

VARIANTS = ("linear_interaction", "logical_or")
MAX_ATTEMPTS_PER_POINT = 10**6


@dataclass
class BaseDomainSpec:
    mean: np.ndarray  # (d,)
    sigma: np.ndarray  # (d, d); covariance is sigma @ sigma.T
    base_rate: float
    eps_inv: np.ndarray  # (n_inv, |A|) perturbation of the shared invariant weights
    eps_dom: np.ndarray  # (d - |A|,) perturbation of the shared domain-rule weights

    @property
    def covariance(self) -> np.ndarray:
        return self.sigma @ self.sigma.T


@dataclass
class WorldSpec:
    seed: int
    variant: str
    d: int
    mu: np.ndarray  # (N,)
    common: np.ndarray  # sorted covariate indices of the invariant subset A
    w_inv: np.ndarray  # (n_inv, |A|): one row (linear) or two rows (logical_or)
    w_dom: np.ndarray  # (d - |A|,)
    lambda_int: float
    pair_common: Tuple[int, int]
    pair_rest: Tuple[int, int]
    domains: List[BaseDomainSpec] = field(default_factory=list)
    unseen_index: Optional[int] = None

    @property
    def N(self) -> int:
        return len(self.domains)

    @property
    def rest(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.d), self.common)


def build_world(
    seed: int,
    variant: str = "linear_interaction",
    N: int = 11,
    d: int = 30,
    n_common: int = 20,
    base_rate: float = 0.7,
    hold_out_last: bool = True,
) -> WorldSpec:
    """Draw every world parameter from one seeded stream.

    Draw order: subset A; shared weights; interaction coefficient;
    interaction pairs; then per domain mean, sigma, eps_inv, eps_dom.
    With ``hold_out_last`` the last base domain gets zero mu-mass and is
    recorded as the unseen domain.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown world variant {variant!r}; choose from {VARIANTS}")
    if not 0 < n_common < d - 1:
        raise ConfigError(f"need 0 < n_common < d - 1, got n_common={n_common}, d={d}")
    if N < (2 if hold_out_last else 1):
        raise ConfigError(f"N={N} leaves no seen base domain")
    rng = make_rng(seed)
    common = np.sort(rng.choice(d, n_common, replace=False))
    rest = np.setdiff1d(np.arange(d), common)
    n_inv = 1 if variant == "linear_interaction" else 2
    w_inv = rng.uniform(0.25, 2.0, size=(n_inv, n_common))
    w_dom = rng.uniform(0.25, 2.0, size=rest.size)
    lambda_int = float(rng.uniform(0.25, 1.0))
    pa = rng.choice(common, 2, replace=False)
    pr = rng.choice(rest, 2, replace=False)
    domains = []
    for _ in range(N):
        mean = rng.uniform(-3.0, 3.0, size=d)
        sigma = rng.uniform(-1.0, 1.0, size=(d, d))
        eps_inv = rng.uniform(-0.1, 0.1, size=(n_inv, n_common))
        eps_dom = rng.uniform(-2.0, 2.0, size=rest.size)
        domains.append(BaseDomainSpec(mean, sigma, base_rate, eps_inv, eps_dom))
    if hold_out_last:
        mu = np.full(N, 1.0 / (N - 1))
        mu[-1] = 0.0
        unseen = N - 1
    else:
        mu = np.full(N, 1.0 / N)
        unseen = None
    return WorldSpec(
        seed, variant, d, mu, common, w_inv, w_dom, lambda_int,
        (int(pa[0]), int(pa[1])), (int(pr[0]), int(pr[1])), domains, unseen,
    )


def draw_domains(world: WorldSpec, k: int, rng: np.random.Generator) -> List[int]:
    """k i.i.d. categorical draws from mu; repeats allowed."""
    if k < 0:
        raise ConfigError("k must be non-negative")
    if k == 0:
        return []
    cdf = np.cumsum(world.mu)
    cdf /= cdf[-1]
    u = rng.random(k)
    return [int(i) for i in np.searchsorted(cdf, u, side="right")]


# --------------------------------------------------------------------------
# labelling rules
# --------------------------------------------------------------------------


def invariant_score(world: WorldSpec, i: int, xs: np.ndarray) -> np.ndarray:
    """f_inv for the linear_interaction variant."""
    dom = world.domains[i]
    a, b = world.pair_common
    w = world.w_inv[0] + dom.eps_inv[0]
    return xs[:, world.common] @ w + world.lambda_int * xs[:, a] * xs[:, b]


def domain_score(world: WorldSpec, i: int, xs: np.ndarray) -> np.ndarray:
    dom = world.domains[i]
    w = world.w_dom + dom.eps_dom
    out = xs[:, world.rest] @ w
    if world.variant == "linear_interaction":
        a, b = world.pair_rest
        out = out + world.lambda_int * xs[:, a] * xs[:, b]
    return out


def or_probabilities(world: WorldSpec, i: int, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    dom = world.domains[i]
    xa = xs[:, world.common]
    return sigmoid(xa @ (world.w_inv[0] + dom.eps_inv[0])), sigmoid(xa @ (world.w_inv[1] + dom.eps_inv[1]))


def label_or(p1: np.ndarray, p2: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random((2, np.size(p1)))
    return ((u[0] < p1) | (u[1] < p2)).astype(np.int64)


def label_logical_or(world: WorldSpec, domain_index: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Invariant label y1 OR y2 with y_j ~ Ber(sigmoid(w_j . x_A))."""
    if world.variant != "logical_or":
        raise ConfigError("label_logical_or needs a logical_or world")
    xs = np.atleast_2d(np.asarray(x, dtype=np.float64))
    p1, p2 = or_probabilities(world, domain_index, xs)
    return label_or(p1, p2, rng)


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------


def sample_raw(world: WorldSpec, i: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Covariates before acceptance: mean + sigma z."""
    dom = world.domains[i]
    z = rng.standard_normal((n, world.d))
    return dom.mean + z @ dom.sigma.T


def sample_domain(
    world: WorldSpec, domain_index: int, n: int, rng: np.random.Generator, domain_id: int = 0
) -> DomainDataset:
    """Accept-reject sampling of ``n`` labelled points from one base domain."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    dom = world.domains[domain_index]
    xs_out, ys_out = [], []
    accepted = 0
    attempts = 0
    chunk = max(256, 4 * n)
    while accepted < n:
        xs = sample_raw(world, domain_index, chunk, rng)
        ys = (rng.random(chunk) < dom.base_rate).astype(np.int64)
        if world.variant == "linear_interaction":
            y_inv = (invariant_score(world, domain_index, xs) > 0).astype(np.int64)
        else:
            p1, p2 = or_probabilities(world, domain_index, xs)
            y_inv = label_or(p1, p2, rng)
        y_dom = (domain_score(world, domain_index, xs) > 0).astype(np.int64)
        keep = (ys == y_inv) & (ys == y_dom)
        attempts += chunk
        if keep.any():
            xs_out.append(xs[keep])
            ys_out.append(ys[keep])
            accepted += int(keep.sum())
        if attempts > MAX_ATTEMPTS_PER_POINT * (accepted + 1):
            raise DataError(
                f"acceptance stalled for base domain {domain_index}: {accepted} accepted after "
                f"{attempts} attempts (degenerate world)"
            )
    xs = np.vstack(xs_out)[:n]
    ys = np.concatenate(ys_out)[:n]
    return DomainDataset(domain_id, xs, ys)


def sample_seen(
    world: WorldSpec, base_indices: Sequence[int], n: int, rng: np.random.Generator
) -> List[DomainDataset]:
    """One dataset per drawn base domain; seen IDs are positions in ``base_indices``."""
    children = rng.spawn(len(base_indices))
    return [sample_domain(world, b, n, child, domain_id=i) for i, (b, child) in enumerate(zip(base_indices, children))]


# --------------------------------------------------------------------------
# dataset / world files
# --------------------------------------------------------------------------


def datasets_to_csv(datasets: Sequence[DomainDataset]) -> str:
    d = datasets[0].d
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["domain_id", "y"] + [f"x{j}" for j in range(d)])
    for ds in datasets:
        for x, y in zip(ds.xs, ds.ys):
            w.writerow([ds.domain_id, int(y)] + [repr(float(v)) for v in x])
    return buf.getvalue()


def datasets_from_csv(text: str) -> List[DomainDataset]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:2] != ["domain_id", "y"]:
        raise DataError("dataset CSV must start with header domain_id,y,x0,...")
    d = len(rows[0]) - 2
    if rows[0][2:] != [f"x{j}" for j in range(d)]:
        raise DataError("dataset CSV covariate columns must be x0..x{d-1}")
    try:
        arr = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"malformed dataset CSV: {exc}") from exc
    if arr.size == 0:
        raise DataError("dataset CSV has no rows")
    ids = arr[:, 0].astype(np.int64)
    return [DomainDataset(int(i), arr[ids == i, 2:], arr[ids == i, 1].astype(np.int64)) for i in np.unique(ids)]


def world_to_dict(world: WorldSpec) -> dict:
    return {
        "seed": world.seed,
        "variant": world.variant,
        "d": world.d,
        "N": world.N,
        "mu": world.mu.tolist(),
        "common": world.common.tolist(),
        "w_inv": world.w_inv.tolist(),
        "w_dom": world.w_dom.tolist(),
        "lambda_int": world.lambda_int,
        "pair_common": list(world.pair_common),
        "pair_rest": list(world.pair_rest),
        "unseen_index": world.unseen_index,
        "domains": [
            {
                "mean": dom.mean.tolist(),
                "sigma": dom.sigma.tolist(),
                "base_rate": dom.base_rate,
                "eps_inv": dom.eps_inv.tolist(),
                "eps_dom": dom.eps_dom.tolist(),
            }
            for dom in world.domains
        ],
    }


def world_from_dict(obj: dict) -> WorldSpec:
    try:
        domains = [
            BaseDomainSpec(
                np.array(dd["mean"]), np.array(dd["sigma"]), float(dd["base_rate"]),
                np.array(dd["eps_inv"]), np.array(dd["eps_dom"]),
            )
            for dd in obj["domains"]
        ]
        return WorldSpec(
            int(obj["seed"]), obj["variant"], int(obj["d"]), np.array(obj["mu"], dtype=np.float64),
            np.array(obj["common"], dtype=np.int64), np.array(obj["w_inv"]), np.array(obj["w_dom"]),
            float(obj["lambda_int"]), tuple(obj["pair_common"]), tuple(obj["pair_rest"]), domains,
            obj.get("unseen_index"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed world JSON: {exc}") from exc


def dumps_world(world: WorldSpec) -> str:
    return json.dumps(world_to_dict(world), sort_keys=True)


# --------------------------------------------------------------------------
# MNIST IDX
# --------------------------------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path, magic: int, ndim: int) -> Tuple[Tuple[int, ...], bytes]:
    raw = Path(path).read_bytes()
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise TruncatedFileError(f"{path}: header needs {header_len} bytes, file has {len(raw)}")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagicError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header_len])
    expected = header_len + int(np.prod(dims))
    if len(raw) < expected:
        raise TruncatedFileError(f"{path}: truncated, expected {expected} bytes, found {len(raw)}")
    return dims, raw[header_len:expected]


def load_mnist_idx(images_path, labels_path) -> Tuple[np.ndarray, np.ndarray]:
    """Parse an IDX image/label pair: (n, 28, 28) uint8 images and n digits."""
    dims, payload = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    images = np.frombuffer(payload, dtype=np.uint8).reshape(dims)
    (n_labels,), lab = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    labels = np.frombuffer(lab, dtype=np.uint8)
    if n_labels != dims[0]:
        raise CountMismatchError(f"{dims[0]} images but {n_labels} labels")
    return images, labels


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


# --------------------------------------------------------------------------
# colored MNIST
# --------------------------------------------------------------------------

COLORS: Dict[str, Tuple[int, int, int]] = {
    "red": (1, 0, 0),
    "green": (0, 1, 0),
    "blue": (0, 0, 1),
    "yellow": (1, 1, 0),
    "purple": (1, 0, 1),
    "cyan": (0, 1, 1),
    "white": (1, 1, 1),
}


@dataclass
class ColorSetting:
    """Label-conditional color table for one domain.

    ``shape_corr`` is the probability that the digit-derived label is kept
    (flipped otherwise); ``color_given_label[y]`` maps color name to probability.
    """

    shape_corr: float
    color_given_label: Dict[int, Dict[str, float]]

    def __post_init__(self):
        if not 0.0 <= self.shape_corr <= 1.0:
            raise ConfigError("shape_corr must lie in [0, 1]")
        self.color_given_label = {int(k): dict(v) for k, v in self.color_given_label.items()}
        for y in (0, 1):
            table = self.color_given_label.get(y)
            if not table:
                raise ConfigError(f"missing color table for label {y}")
            for name, p in table.items():
                if name not in COLORS:
                    raise ConfigError(f"unknown color {name!r}; known: {sorted(COLORS)}")
                if p < 0:
                    raise ConfigError(f"negative color probability for {name!r}")
            if abs(sum(table.values()) - 1.0) > 1e-9:
                raise ConfigError(f"color probabilities for label {y} sum to {sum(table.values())}")


def _binary(label0: Dict[str, float], label1: Dict[str, float], shape_corr: float = 1.0) -> ColorSetting:
    return ColorSetting(shape_corr, {0: label0, 1: label1})


def _pair(c0: str, c1: str, q: float, shape_corr: float = 1.0) -> ColorSetting:
    """c0 goes with label 0 and c1 with label 1, each with probability q."""
    return _binary({c0: q, c1: 1 - q}, {c1: q, c0: 1 - q}, shape_corr)


def color_settings(name: str) -> Tuple[List[ColorSetting], ColorSetting]:
    """Named (training settings, test setting) pairs."""
    if name == "shape100_color90":
        return [_pair("red", "green", 0.9), _pair("green", "red", 0.9)], _binary({"purple": 1.0}, {"purple": 1.0})
    if name == "shape75_color80":
        test = _binary({"red": 0.5, "green": 0.5}, {"red": 0.5, "green": 0.5}, 0.75)
        return [_pair("red", "green", 0.8, 0.75), _pair("green", "red", 0.8, 0.75)], test
    six = [
        _pair("red", "green", 0.8),
        _pair("red", "green", 0.6),
        _pair("red", "green", 0.4),
        _pair("blue", "yellow", 0.7),
        _binary({"red": 0.7, "green": 0.2, "yellow": 0.1}, {"red": 0.1, "green": 0.1, "yellow": 0.8}),
        _pair("red", "blue", 0.8),
    ]
    white = _binary({"white": 1.0}, {"white": 1.0})
    if name == "six_domain_unequal":
        return six, white
    if name == "three_domain_unequal":
        return [six[0], six[2], six[4]], white
    raise ConfigError(f"unknown color setting {name!r}")


def colorize(
    images: np.ndarray, digits: np.ndarray, setting: ColorSetting, rng: np.random.Generator, domain_id: int = 0
) -> DomainDataset:
    """Binary label from digit (0-4 -> 0), flipped w.p. 1 - shape_corr, then a label-conditional color.

    Output rows are the flattened channel-first 3x28x28 image in [0, 1].
    """
    imgs = np.asarray(images).reshape(len(digits), -1).astype(np.float64)
    digits = np.asarray(digits).astype(np.int64)
    n, pix = imgs.shape
    label = (digits >= 5).astype(np.int64)
    flip = rng.random(n) >= setting.shape_corr
    label = np.where(flip, 1 - label, label)
    masks = np.zeros((n, 3))
    u = rng.random(n)
    for y in (0, 1):
        names = list(setting.color_given_label[y])
        cdf = np.cumsum([setting.color_given_label[y][c] for c in names])
        sel = label == y
        pick = np.minimum(np.searchsorted(cdf, u[sel], side="right"), len(names) - 1)
        masks[sel] = np.array([COLORS[c] for c in names], dtype=np.float64)[pick]
    xs = (masks[:, :, None] * imgs[:, None, :]).reshape(n, 3 * pix) / 255.0
    return DomainDataset(domain_id, xs, label)
