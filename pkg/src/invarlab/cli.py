"""Command-line entry point.

Every subcommand writes only under ``--out`` and leaves a ``manifest.json``
recording the command, the validated config, its SHA-256 and the
artifacts produced. Exit codes: 0 success, 2 config error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .errors import ConfigError, DataError, NumericalError
from .eval import choose_seen_bases, evaluate_unseen, k_growth_experiment
from .model import build_bundle, dumps_bundle, loads_bundle
from .nn import make_rng
from .objective import DomainDataset
from .theory.bounds import BoundInputs, bound_rhs, worst_case_bound
from .theory.invariance import LinearPhiDecomposition, invariance_check
from .theory.limit import LimitTrace, adversary_limit_experiment, gaussian_rep_world
from .trainer import TrainConfig, train
from .worlds import (
    build_world,
    color_settings,
    colorize,
    datasets_from_csv,
    datasets_to_csv,
    dumps_world,
    load_mnist_idx,
    sample_domain,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# --------------------------------------------------------------------------
# config schemas
# --------------------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class WorldSection(_Strict):
    variant: str = "linear_interaction"
    N: int = Field(11, ge=2)
    seed: int = 0


class SamplingSection(_Strict):
    k: int = Field(10, ge=1)
    n_per_domain: int = Field(2000, ge=2)
    k_values: List[int] = [4, 10]
    n_test: int = Field(2000, ge=1)


class ModelSection(_Strict):
    preset: str = "synthetic"
    p: Optional[int] = Field(None, ge=1)


class TrainSection(_Strict):
    epochs: int = Field(100, ge=1)
    batch_size: int = Field(64, ge=1)
    lr: float = Field(1e-3, gt=0)
    lam: float = Field(0.01, ge=0, alias="lambda")
    lambda_times_k: Optional[float] = Field(None, ge=0)
    disc_steps: int = Field(1, ge=1)
    seed: int = 0
    validation_fraction: float = Field(0.2, gt=0, lt=1)
    selection: str = "last"


class EvalSection(_Strict):
    seeds: List[int] = [0, 1, 2]


class OutputsSection(_Strict):
    directory: Optional[str] = None


class RunConfig(_Strict):
    world: WorldSection = WorldSection()
    sampling: SamplingSection = SamplingSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    eval: EvalSection = EvalSection()
    outputs: OutputsSection = OutputsSection()

    def train_config(self, k: Optional[int] = None) -> TrainConfig:
        t = self.train
        lam = t.lam if t.lambda_times_k is None or k is None else t.lambda_times_k / k
        return TrainConfig(
            epochs=t.epochs,
            batch_size=t.batch_size,
            learning_rate=t.lr,
            lam=lam,
            disc_steps=t.disc_steps,
            seed=t.seed,
            validation_fraction=t.validation_fraction,
            preset=self.model.preset,
            selection=t.selection,
        )


class LimitConfig(_Strict):
    means: List[float] = [0.0, 1.0]
    sds: List[float] = [1.0, 1.0]
    mu: Optional[List[float]] = None
    k_schedule: List[int] = [4, 16, 64, 256]
    seeds: List[int] = [0, 1, 2, 3, 4]
    train_steps: int = Field(300, ge=1)
    train_per_domain: int = Field(100, ge=1)
    trained_head: bool = True


class RhsSection(_Strict):
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


class WorstCaseSection(_Strict):
    p_l: float
    delta: float
    beta_hat: float
    t: float
    c: float = 1.0
    V_Lambda: Optional[float] = None
    n_min: Optional[int] = None
    vc_term: Optional[float] = None
    k: Optional[int] = None
    n_i: Optional[List[int]] = None


class BoundsConfig(_Strict):
    bound_rhs: Optional[RhsSection] = None
    worst_case: Optional[WorstCaseSection] = None


class GaussianDomain(_Strict):
    mean: List[float]
    sd: float = Field(1.0, gt=0)


class InvarianceConfig(_Strict):
    coef: List[List[float]]
    W: List[List[float]]
    B: List[float]
    domains: List[GaussianDomain]
    epsilon: float = 1.0
    sample_count: int = Field(10_000, ge=1)
    seed: int = 0


# --------------------------------------------------------------------------
# io helpers
# --------------------------------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Run:
    """Collects artifacts written under one output directory."""

    def __init__(self, command: str, out: str, config: dict, seeds: dict):
        self.command = command
        self.out = Path(out)
        self.config = config
        self.seeds = seeds
        self.artifacts: List[str] = []
        self.out.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        atomic_write(path, text)
        self.artifacts.append(name)
        return path

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": self.config,
            "config_sha256": config_hash(self.config),
            "seeds": self.seeds,
            "artifacts": sorted(self.artifacts),
        }
        atomic_write(self.out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _read_json(path: str, what: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON: {exc}") from exc


def _validate(model, obj: dict, what: str):
    try:
        return model.model_validate(obj)
    except ValidationError as exc:
        problems = "; ".join(f"{'.'.join(str(x) for x in e['loc'])}: {e['msg']}" for e in exc.errors())
        raise ConfigError(f"invalid {what}: {problems}") from exc


def _config_dump(cfg: BaseModel) -> dict:
    return cfg.model_dump(mode="json", by_alias=True)


def _load_run_config(path: str) -> RunConfig:
    return _validate(RunConfig, _read_json(path, "config"), "config")


def _read_datasets(path: str, default_name: str) -> List[DomainDataset]:
    p = Path(path)
    if p.is_dir():
        p = p / default_name
    if not p.is_file():
        raise DataError(f"data file not found: {p}")
    return datasets_from_csv(p.read_text())


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_gen_world(args) -> None:
    cfg = _load_run_config(args.config)
    w = cfg.world
    world = build_world(w.seed, w.variant, N=w.N)
    draw_rng, data_rng, test_rng = make_rng(w.seed).spawn(3)
    bases = choose_seen_bases(world, cfg.sampling.k, draw_rng)
    seen = [
        sample_domain(world, b, cfg.sampling.n_per_domain, child, domain_id=i)
        for i, (b, child) in enumerate(zip(bases, data_rng.spawn(len(bases))))
    ]
    unseen = sample_domain(world, world.unseen_index, cfg.sampling.n_test, test_rng)
    run = Run("gen-world", args.out, _config_dump(cfg), {"world": w.seed})
    run.write("world.json", dumps_world(world) + "\n")
    run.write("seen.csv", datasets_to_csv(seen))
    run.write("unseen.csv", datasets_to_csv([unseen]))
    run.write("seen_bases.json", json.dumps({"seen_bases": bases, "unseen_base": world.unseen_index}) + "\n")
    run.finish()
    print(f"world with {world.N} base domains; {len(seen)} seen domains written to {args.out}")


def cmd_train(args) -> None:
    cfg = _load_run_config(args.config)
    seen = _read_datasets(args.data, "seen.csv")
    k = len(seen)
    tcfg = cfg.train_config(k)
    bundle = build_bundle(k, make_rng(tcfg.seed), preset=cfg.model.preset, p=cfg.model.p, d=seen[0].d)
    bundle, trace = train(bundle, seen, tcfg)
    run = Run("train", args.out, _config_dump(cfg), {"train": tcfg.seed})
    run.write("bundle.json", dumps_bundle(bundle) + "\n")
    run.write("trace.csv", trace.to_csv())
    run.finish()
    last = trace.records[-1]
    print(f"trained on k={k} domains; final validation accuracy {last.val_accuracy:.4f}")


def cmd_eval(args) -> None:
    bpath = Path(args.bundle)
    if bpath.is_dir():
        bpath = bpath / "bundle.json"
    if not bpath.is_file():
        raise DataError(f"bundle file not found: {bpath}")
    bundle = loads_bundle(bpath.read_text())
    sets = _read_datasets(args.data, "unseen.csv")
    unseen = DomainDataset(0, np.vstack([s.xs for s in sets]), np.concatenate([s.ys for s in sets]))
    report = evaluate_unseen(bundle, unseen, config={"bundle": str(bpath), "data": str(args.data)})
    run = Run("eval", args.out, {"bundle": str(bpath), "data": str(args.data)}, {})
    run.write("eval_report.json", report.to_json() + "\n")
    run.finish()
    print(f"unseen accuracy {report.unseen_accuracy:.4f}")


def cmd_kgrowth(args) -> None:
    cfg = _load_run_config(args.config)
    w = cfg.world
    world = build_world(w.seed, w.variant, N=w.N)
    tcfg = cfg.train_config()
    res = k_growth_experiment(
        world,
        cfg.sampling.k_values,
        cfg.sampling.n_per_domain,
        tcfg,
        cfg.eval.seeds,
        n_test=cfg.sampling.n_test,
        lam_times_k=cfg.train.lambda_times_k,
    )
    run = Run("kgrowth", args.out, _config_dump(cfg), {"world": w.seed, "runs": list(cfg.eval.seeds)})
    run.write("kgrowth.csv", res.to_csv())
    run.write("kgrowth_summary.json", json.dumps(res.summary(), sort_keys=True, indent=2) + "\n")
    run.finish()
    for k, s in res.summary().items():
        print(f"k={k}: rvr {s['rvr_mean']:.4f} +- {s['rvr_std']:.4f}, logistic {s['logistic_mean']:.4f}")


def cmd_theory_limit(args) -> None:
    obj = _read_json(args.config, "config") if args.config else {}
    cfg = _validate(LimitConfig, obj, "limit config")
    if len(cfg.sds) != len(cfg.means):
        raise ConfigError("sds must have one entry per mean")
    world = gaussian_rep_world(cfg.means, cfg.sds, cfg.mu)
    rows = []
    for seed in cfg.seeds:
        rows.extend(
            adversary_limit_experiment(
                world,
                cfg.k_schedule,
                seed,
                train_per_domain=cfg.train_per_domain,
                train_steps=cfg.train_steps,
                train_trained_head=cfg.trained_head,
            ).rows
        )
    run = Run("theory-limit", args.out, _config_dump(cfg), {"runs": list(cfg.seeds)})
    run.write("limit.csv", LimitTrace(rows).to_csv())
    run.finish()
    print(f"{len(rows)} rows written")


def cmd_theory_bounds(args) -> None:
    cfg = _validate(BoundsConfig, _read_json(args.inputs, "inputs"), "bound inputs")
    if cfg.bound_rhs is None and cfg.worst_case is None:
        raise ConfigError("inputs need a 'bound_rhs' and/or a 'worst_case' section")
    report: dict = {"inputs": _config_dump(cfg)}
    if cfg.bound_rhs is not None:
        report["bound_rhs"] = bound_rhs(BoundInputs(**cfg.bound_rhs.model_dump()))
        report["m_k"] = report["bound_rhs"]["m_k"]
    if cfg.worst_case is not None:
        report["worst_case"] = asdict(worst_case_bound(**cfg.worst_case.model_dump()))
    run = Run("theory-bounds", args.out, _config_dump(cfg), {})
    run.write("bounds.json", json.dumps(report, sort_keys=True, indent=2) + "\n")
    run.finish()
    print(json.dumps({k: v for k, v in report.items() if k != "inputs"}, sort_keys=True))


def cmd_theory_invariance(args) -> None:
    cfg = _validate(InvarianceConfig, _read_json(args.inputs, "inputs"), "invariance inputs")
    coef = np.array(cfg.coef, dtype=np.float64)
    m = coef.shape[1]
    for i, dom in enumerate(cfg.domains):
        if len(dom.mean) != m:
            raise ConfigError(f"domains[{i}].mean has {len(dom.mean)} entries, basis has {m}")
    decomp = LinearPhiDecomposition(lambda x: x, coef)

    def sampler(dom):
        mean = np.array(dom.mean)
        return lambda rng, n: mean + dom.sd * rng.standard_normal((n, m))

    report = invariance_check(
        decomp,
        [sampler(d) for d in cfg.domains],
        np.array(cfg.W),
        np.array(cfg.B),
        cfg.epsilon,
        cfg.sample_count,
        make_rng(cfg.seed),
    )
    out = asdict(report)
    out["inputs"] = _config_dump(cfg)
    run = Run("theory-invariance", args.out, _config_dump(cfg), {"seed": cfg.seed})
    run.write("invariance.json", json.dumps(out, sort_keys=True, indent=2) + "\n")
    run.finish()
    print(f"adversary success {report.adversary_success:.4f}; invariant at eps={cfg.epsilon}: {report.invariant}")


def cmd_mnist_colorize(args) -> None:
    images, digits = load_mnist_idx(args.images, args.labels)
    train_settings, test_setting = color_settings(args.setting)
    n = args.n_per_domain
    need = n * (len(train_settings) + 1)
    if images.shape[0] < need:
        raise DataError(f"{images.shape[0]} images available, {need} needed for {args.setting} at n={n}")
    rng = make_rng(args.seed)
    perm_rng, *color_rngs = rng.spawn(len(train_settings) + 2)
    perm = perm_rng.permutation(images.shape[0])
    sets = []
    for i, (setting, crng) in enumerate(zip(train_settings, color_rngs)):
        idx = perm[i * n : (i + 1) * n]
        sets.append(colorize(images[idx], digits[idx], setting, crng, domain_id=i))
    idx = perm[len(train_settings) * n : need]
    test = colorize(images[idx], digits[idx], test_setting, color_rngs[-1])
    config = {"images": str(args.images), "labels": str(args.labels), "setting": args.setting,
              "n_per_domain": n, "seed": args.seed}
    run = Run("mnist-colorize", args.out, config, {"seed": args.seed})
    run.write("train.csv", datasets_to_csv(sets))
    run.write("test.csv", datasets_to_csv([test]))
    run.finish()
    print(f"{len(sets)} training domains and 1 test domain written to {args.out}")


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="invarlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="draw a synthetic world and sample seen/unseen datasets")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("train", help="train encoder, discriminator and predictor")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="seen-domain CSV or a gen-world output directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained bundle on unseen data")
    p.add_argument("--bundle", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("kgrowth", help="unseen accuracy as the number of seen domains grows")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_kgrowth)

    p = sub.add_parser("theory-limit", help="constructive vs trained adversary value against the limit")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_theory_limit)

    p = sub.add_parser("theory-bounds", help="evaluate the deviation and worst-case bounds")
    p.add_argument("--inputs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_theory_bounds)

    p = sub.add_parser("theory-invariance", help="check invariance of a linear-in-basis encoder")
    p.add_argument("--inputs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_theory_invariance)

    p = sub.add_parser("mnist-colorize", help="build colored-MNIST domains from IDX files")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--setting", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-domain", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mnist_colorize)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
