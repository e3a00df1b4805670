import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invarlab.errors import ConfigError, ShapeError
from invarlab.model import (
    Discriminator,
    Encoder,
    argmax_pi_k,
    argmax_rows,
    build_bundle,
    discriminator_logits,
    dumps_bundle,
    encode,
    loads_bundle,
    predict_labels,
    predict_proba,
)
from invarlab.nn import Mlp, glorot_mlp, make_rng, mlp_apply

from _helpers import naive_mlp


class TestDiscriminator:
    def test_identity_head(self):
        zeta = Mlp([np.eye(3)], [np.zeros(3)])
        disc = Discriminator.from_head(zeta, np.eye(3), np.zeros(3))
        reps = make_rng(0).normal(size=(4, 3))
        assert np.array_equal(discriminator_logits(disc, reps), reps)

    def test_bias_only_head(self):
        zeta = glorot_mlp([3, 5, 2], make_rng(0))
        B = np.array([0.3, -1.0, 2.0, 0.0])
        disc = Discriminator.from_head(zeta, np.zeros((4, 2)), B)
        out = discriminator_logits(disc, make_rng(1).normal(size=(6, 3)))
        assert np.array_equal(out, np.tile(B, (6, 1)))

    def test_two_stage_composition(self):
        rng = make_rng(2)
        zeta = glorot_mlp([4, 6, 3], rng)
        W, B = rng.normal(size=(5, 3)), rng.normal(size=5)
        disc = Discriminator.from_head(zeta, W, B)
        reps = rng.normal(size=(7, 4))
        want = mlp_apply(zeta, reps) @ W.T + B
        assert np.max(np.abs(discriminator_logits(disc, reps) - want)) < 1e-12
        assert disc.k == 5 and np.array_equal(disc.W, W)

    def test_dimension_mismatch(self):
        disc = Discriminator.from_head(glorot_mlp([3, 2], make_rng(0)), np.eye(2), np.zeros(2))
        with pytest.raises(ShapeError):
            discriminator_logits(disc, np.zeros((1, 4)))


class TestArgmax:
    def test_unique_max(self):
        assert argmax_pi_k(np.array([0.1, 0.9, 0.3]), make_rng(0)) == 1

    def test_single_domain(self):
        assert argmax_pi_k(np.array([-5.0]), make_rng(0)) == 0

    def test_uniform_tie_break(self):
        rng = make_rng(11)
        hits = sum(argmax_pi_k(np.array([1.0, 1.0, 0.0]), rng) == 0 for _ in range(10_000))
        assert abs(hits / 10_000 - 0.5) <= 0.02

    def test_empty(self):
        with pytest.raises(ValueError):
            argmax_pi_k(np.array([]), make_rng(0))

    def test_rows_without_ties_ignore_rng(self):
        logits = np.array([[0.0, 1.0], [2.0, 1.0]])
        assert np.array_equal(argmax_rows(logits), [1, 0])

    @settings(max_examples=50, deadline=None)
    @given(
        vals=st.lists(st.integers(-3, 3), min_size=1, max_size=6),
        shift=st.floats(-100, 100),
        scale=st.floats(0.01, 100),
    )
    def test_maximal_set_invariant_to_shift_and_scale(self, vals, shift, scale):
        w = np.array(vals, dtype=float)
        before = set(np.flatnonzero(w == w.max()))
        moved = scale * (w + shift)
        # integer-spaced inputs keep ties exact under these maps
        after = set(np.flatnonzero(moved == moved.max()))
        assert before == after
        assert argmax_pi_k(moved, make_rng(0)) in before


class TestEncodeAndBuild:
    def test_identity_encoder(self):
        x = make_rng(0).normal(size=(3, 4))
        assert np.array_equal(encode(Encoder(Mlp([np.eye(4)], [np.zeros(4)])), x), x)

    def test_zero_weight_encoder(self):
        b = np.array([1.0, -2.0])
        enc = Encoder(Mlp([np.zeros((3, 2))], [b]))
        assert np.array_equal(encode(enc, np.ones((4, 3))), np.tile(b, (4, 1)))

    def test_encoder_matches_naive(self):
        bundle = build_bundle(3, make_rng(0), d=5, s=4, encoder_hidden=[6])
        x = make_rng(1).normal(size=(4, 5))
        net = bundle.encoder.net
        assert np.max(np.abs(encode(bundle.encoder, x) - naive_mlp(net.weights, net.biases, x))) < 1e-12

    def test_synthetic_preset(self):
        b = build_bundle(10, make_rng(0))
        assert b.dims == {"d": 30, "s": 10, "p": 10, "k": 10}
        assert b.predictor.net.out_dim == 1
        assert len(b.discriminator.zeta.weights) == 7 and b.discriminator.zeta.widths[1:-1] == [10] * 6
        assert b.predictor.net.widths[1:-1] == [10] * 6

    def test_mnist_preset(self):
        b = build_bundle(2, make_rng(0), preset="mnist")
        assert b.dims["s"] == 50 and b.dims["d"] == 2352
        assert b.predictor.net.widths[1:-1] == [200] * 6

    def test_same_seed_same_weights(self):
        a, b = build_bundle(4, make_rng(5)), build_bundle(4, make_rng(5))
        assert dumps_bundle(a) == dumps_bundle(b)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            build_bundle(2, make_rng(0), preset="cnn")

    def test_predictions_are_thresholded_probabilities(self):
        b = build_bundle(2, make_rng(0))
        x = make_rng(1).normal(size=(50, 30))
        p = predict_proba(b, x)
        assert np.all((p > 0) & (p < 1))
        assert np.array_equal(predict_labels(b, x), (p > 0.5).astype(int))

    def test_lipschitz_surrogate(self):
        b = build_bundle(2, make_rng(3))
        lip = np.prod([np.linalg.norm(w, 2) for w in b.encoder.net.weights])
        rng = make_rng(4)
        x = rng.normal(size=(100, 30))
        delta = 1e-3 * rng.normal(size=(100, 30))
        moved = np.linalg.norm(encode(b.encoder, x + delta) - encode(b.encoder, x), axis=1)
        assert np.all(moved <= lip * np.linalg.norm(delta, axis=1) + 1e-12)


class TestSerialisation:
    def test_round_trip_bit_exact(self):
        b = build_bundle(3, make_rng(8), p=4)
        back = loads_bundle(dumps_bundle(b))
        for net_a, net_b in [
            (b.encoder.net, back.encoder.net),
            (b.discriminator.zeta, back.discriminator.zeta),
            (b.discriminator.head, back.discriminator.head),
            (b.predictor.net, back.predictor.net),
        ]:
            for x, y in zip(net_a.arrays(), net_b.arrays()):
                assert x.tobytes() == y.tobytes()
        assert back.dims == b.dims and back.preset == b.preset

    def test_dims_disagreement_rejected(self):
        import json

        obj = json.loads(dumps_bundle(build_bundle(3, make_rng(0))))
        obj["dims"]["k"] = 4
        with pytest.raises(ShapeError):
            loads_bundle(json.dumps(obj))
