import hashlib
import json

import numpy as np
import pytest

from invarlab.cli import canonical_json, config_hash, main
from invarlab.worlds import write_idx

SMALL = {
    "world": {"seed": 3, "N": 4},
    "sampling": {"k": 2, "n_per_domain": 40, "n_test": 30, "k_values": [1, 2]},
    "train": {"epochs": 2, "batch_size": 16, "lambda": 0.05},
    "eval": {"seeds": [0]},
}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def cfg(tmp_path):
    return _write(tmp_path / "cfg.json", SMALL)


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_gen_world_is_byte_identical(tmp_path, cfg):
    assert main(["gen-world", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-world", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a == b
    assert {"world.json", "seen.csv", "unseen.csv", "manifest.json"} <= set(a)


def test_manifest_contents(tmp_path, cfg):
    out = tmp_path / "w"
    main(["gen-world", "--config", cfg, "--out", str(out)])
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "gen-world" and man["seeds"] == {"world": 3}
    assert man["config_sha256"] == config_hash(man["config"])
    assert set(man["artifacts"]) == {"world.json", "seen.csv", "unseen.csv", "seen_bases.json"}


def test_config_hash_is_sha256_of_canonical_form():
    obj = {"b": 1, "a": [1, 2]}
    assert canonical_json(obj) == '{"a":[1,2],"b":1}'
    assert config_hash(obj) == hashlib.sha256(b'{"a":[1,2],"b":1}').hexdigest()


def test_train_then_eval(tmp_path, cfg):
    data = tmp_path / "data"
    main(["gen-world", "--config", cfg, "--out", str(data)])
    assert main(["train", "--config", cfg, "--data", str(data), "--out", str(tmp_path / "m")]) == 0
    trace = (tmp_path / "m" / "trace.csv").read_text().splitlines()
    assert trace[0] == "epoch,pred_surrogate,adv_surrogate,val_pred01,val_adv01,val_accuracy" and len(trace) == 3
    assert main(["eval", "--bundle", str(tmp_path / "m"), "--data", str(data), "--out", str(tmp_path / "e")]) == 0
    rep = json.loads((tmp_path / "e" / "eval_report.json").read_text())
    assert 0 <= rep["unseen_accuracy"] <= 1


def test_train_missing_data_exits_3(tmp_path, cfg):
    assert main(["train", "--config", cfg, "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "m")]) == 3


def test_unknown_config_key_exits_2(tmp_path):
    bad = _write(tmp_path / "bad.json", {"world": {"seed": 0, "colour": "red"}})
    assert main(["gen-world", "--config", bad, "--out", str(tmp_path / "o")]) == 2


def test_missing_config_exits_2(tmp_path):
    assert main(["gen-world", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 2


def test_kgrowth(tmp_path, cfg):
    assert main(["kgrowth", "--config", cfg, "--out", str(tmp_path / "k")]) == 0
    lines = (tmp_path / "k" / "kgrowth.csv").read_text().splitlines()
    assert lines[0] == "k,seed,rvr_accuracy,logistic_accuracy" and len(lines) == 3


BOUNDS = {
    "bound_rhs": {
        "k": 256, "N": 2, "n_i": [1000], "lam": 0.1, "t1": 0.05, "t2": 0.05, "V_Lambda": 5, "V_Xi": 5,
        "B_rho": 1.0, "B_of_inv_sqrt_k": 3.0, "n_high": 2, "boundary_cell_count": 28, "p": 2,
    },
    "worst_case": {"p_l": 0.5, "delta": 0.1, "beta_hat": 0.1, "t": 0.05, "vc_term": 0.05},
}


def test_theory_bounds(tmp_path):
    inputs = _write(tmp_path / "b.json", BOUNDS)
    assert main(["theory-bounds", "--inputs", inputs, "--out", str(tmp_path / "o")]) == 0
    text = (tmp_path / "o" / "bounds.json").read_text()
    rep = json.loads(text)
    assert '"m_k": 51' in text and rep["m_k"] == 51
    assert rep["worst_case"]["bound"] == pytest.approx(0.9)
    assert rep["inputs"]["bound_rhs"]["k"] == 256


def test_theory_bounds_infeasible_exits_4(tmp_path):
    obj = json.loads(json.dumps(BOUNDS))
    obj["bound_rhs"].update(k=2, N=5, n_high=5, n_i=[10])
    inputs = _write(tmp_path / "b.json", obj)
    assert main(["theory-bounds", "--inputs", inputs, "--out", str(tmp_path / "o")]) == 4


def test_theory_bounds_bad_range_exits_2(tmp_path):
    obj = {"worst_case": {"p_l": 1.5, "delta": 0.1, "beta_hat": 0.1, "t": 0.05, "vc_term": 0.05}}
    assert main(["theory-bounds", "--inputs", _write(tmp_path / "b.json", obj), "--out", str(tmp_path / "o")]) == 2


def test_theory_invariance(tmp_path):
    obj = {
        "coef": [[1.0, 0.0]], "W": [[1.0], [-1.0]], "B": [0.0, 0.3],
        "domains": [{"mean": [0.0, 0.0]}, {"mean": [0.0, 5.0]}], "epsilon": 1.05, "sample_count": 4000,
    }
    assert main(["theory-invariance", "--inputs", _write(tmp_path / "i.json", obj), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "invariance.json").read_text())
    assert rep["invariant"] is True and rep["kernel_residual"] < 1e-8


def test_theory_limit(tmp_path):
    obj = {"k_schedule": [4, 16], "seeds": [0], "trained_head": False}
    assert main(["theory-limit", "--config", _write(tmp_path / "l.json", obj), "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "limit.csv").read_text().splitlines()
    assert lines[0] == "k,constructive_value,trained_value,oracle_value,seed" and len(lines) == 3


def test_mnist_colorize(tmp_path):
    rng = np.random.default_rng(0)
    write_idx(tmp_path / "img", tmp_path / "lab", rng.integers(0, 256, (30, 28, 28)), rng.integers(0, 10, 30))
    args = ["mnist-colorize", "--images", str(tmp_path / "img"), "--labels", str(tmp_path / "lab"),
            "--setting", "shape100_color90", "--n-per-domain", "10", "--out", str(tmp_path / "o")]
    assert main(args) == 0
    header = (tmp_path / "o" / "train.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 2 + 2352


def test_mnist_bad_magic_exits_3(tmp_path):
    (tmp_path / "img").write_bytes(b"\x00\x00\x08\x02" + b"\x00" * 12)
    (tmp_path / "lab").write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x00")
    args = ["mnist-colorize", "--images", str(tmp_path / "img"), "--labels", str(tmp_path / "lab"),
            "--setting", "shape100_color90", "--out", str(tmp_path / "o")]
    assert main(args) == 3
