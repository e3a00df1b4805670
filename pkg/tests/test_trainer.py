import numpy as np
import pytest

from invarlab.errors import ConfigError, DataError
from invarlab.model import build_bundle
from invarlab.nn import make_rng
from invarlab.objective import DomainDataset, empirical_loss
from invarlab.trainer import (
    TRACE_HEADER,
    TrainConfig,
    lambda_grid,
    split_train_validation,
    train,
)


def _separable(k, n, seed, d=6):
    rng = make_rng(seed)
    out = []
    for i in range(k):
        xs = rng.normal(size=(n, d))
        xs[:, -1] += 3.0 * i
        out.append(DomainDataset(i, xs, (xs[:, 0] > 0).astype(int)))
    return out


def _bundle(k, seed, d=6):
    return build_bundle(k, make_rng(seed), d=d, s=4, p=4, encoder_hidden=[8], zeta_hidden=[6], predictor_hidden=[6])


class TestSplit:
    def test_eighty_twenty(self):
        ds = DomainDataset(0, np.arange(20.0).reshape(10, 2), np.arange(10) % 2)
        tr, va = split_train_validation([ds], 0.2, make_rng(0))
        assert tr[0].n == 8 and va[0].n == 2

    def test_half_of_four(self):
        ds = DomainDataset(0, np.arange(8.0).reshape(4, 2), np.arange(4) % 2)
        tr, va = split_train_validation([ds], 0.5, make_rng(0))
        assert tr[0].n == 2 and va[0].n == 2

    def test_disjoint_and_complete(self):
        ds = DomainDataset(3, np.arange(74.0).reshape(37, 2), np.arange(37) % 2)
        tr, va = split_train_validation([ds], 0.2, make_rng(1))
        rows = np.vstack([tr[0].xs, va[0].xs])[:, 0]
        assert sorted(rows) == sorted(ds.xs[:, 0]) and va[0].n == 8
        assert tr[0].domain_id == va[0].domain_id == 3

    def test_too_small(self):
        with pytest.raises(DataError):
            split_train_validation([DomainDataset(0, np.zeros((1, 2)), np.array([0]))], 0.2, make_rng(0))

    def test_bad_fraction(self):
        with pytest.raises(ConfigError):
            TrainConfig(validation_fraction=1.0)
        with pytest.raises(ConfigError):
            TrainConfig(lam=-0.1)


class TestTrain:
    def test_deterministic(self):
        data = _separable(2, 40, 0)
        cfg = TrainConfig(epochs=3, batch_size=16, lam=0.1, seed=5)
        b1, t1 = train(_bundle(2, 1), data, cfg)
        b2, t2 = train(_bundle(2, 1), data, cfg)
        assert t1.to_csv() == t2.to_csv()
        for p, q in zip(b1.predictor.net.arrays(), b2.predictor.net.arrays()):
            assert np.array_equal(p, q)

    def test_input_bundle_untouched(self):
        b = _bundle(2, 1)
        before = [a.copy() for a in b.encoder.net.arrays()]
        train(b, _separable(2, 20, 0), TrainConfig(epochs=1, batch_size=8))
        assert all(np.array_equal(x, y) for x, y in zip(before, b.encoder.net.arrays()))

    def test_separable_without_adversary(self):
        data = _separable(2, 200, 2)
        cfg = TrainConfig(epochs=40, batch_size=32, learning_rate=1e-2, lam=0.0, seed=0)
        b, trace = train(_bundle(2, 3), data, cfg)
        assert trace.records[-1].val_accuracy >= 0.99 or empirical_loss(data, b, 0.0).pred_term <= 0.01

    def test_adversary_reduces_domain_identification(self):
        # the last coordinate leaks the domain; a positive lam should hide it better than lam = 0
        data = _separable(2, 200, 4)
        val = _separable(2, 200, 5)
        base = dict(epochs=40, batch_size=32, learning_rate=1e-2, seed=0, disc_steps=2)
        b0, _ = train(_bundle(2, 6), data, TrainConfig(lam=0.0, **base), validation=val)
        b1, _ = train(_bundle(2, 6), data, TrainConfig(lam=1.0, **base), validation=val)
        assert empirical_loss(val, b1, 1.0).adv_term < empirical_loss(val, b0, 1.0).adv_term

    def test_trace_csv(self):
        _, trace = train(_bundle(2, 1), _separable(2, 30, 0), TrainConfig(epochs=2, batch_size=8))
        lines = trace.to_csv().splitlines()
        assert lines[0] == ",".join(TRACE_HEADER) == "epoch,pred_surrogate,adv_surrogate,val_pred01,val_adv01,val_accuracy"
        assert len(lines) == 3 and lines[1].startswith("1,")
        assert trace.selected_epoch == 2

    def test_stable_selection_picks_recorded_epoch(self):
        cfg = TrainConfig(epochs=6, batch_size=8, selection="stable", stability_window=3)
        _, trace = train(_bundle(2, 1), _separable(2, 30, 0), cfg)
        assert 3 <= trace.selected_epoch <= 6

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            train(_bundle(2, 1, d=5), _separable(2, 20, 0), TrainConfig(epochs=1))


def test_lambda_grid_scales_with_k():
    assert lambda_grid(10) == pytest.approx([0.001, 0.005, 0.01, 0.05, 0.1])
