import math

import numpy as np
import pytest

from hashnets.classifier import (
    Layer,
    TrainConfig,
    build_model,
    size_match,
    train_classifier,
)
from hashnets.data import Dataset
from hashnets.errors import InvalidConfigError, TrainingDivergedError
from hashnets.linalg import Rng
from oracles import central_difference


def _toy_data(m=120, n=12, classes=3, seed=0):
    gen = np.random.default_rng(seed)
    centers = gen.random((classes, n))
    y = gen.integers(0, classes, m)
    X = np.clip(centers[y] + 0.1 * gen.standard_normal((m, n)), 0, 1)
    return Dataset(X, y, classes)


class TestSizeMatch:
    def test_small_hidden_units(self):
        assert size_match("small", 784, 1000, 64).hidden == (16,)

    def test_thin_first_hidden(self):
        assert size_match("thin", 784, 1000, 64).hidden == (7, 1000)

    def test_hashed_buckets(self):
        arch = size_match("hashed", 784, 1000, 64)
        assert arch.buckets == (math.ceil(784000 / 64), math.ceil(10000 / 64))
        assert size_match("hashed", 784, 1000, 64, hash_first_only=True).buckets[1] is None

    def test_ratio_one_matches_full(self):
        full = size_match("full", 784, 100, 1).weight_count
        for variant in ("hashed", "small"):
            assert size_match(variant, 784, 100, 1).weight_count == full

    @pytest.mark.parametrize("n,k,ratio", [(784, 1000, 64), (784, 500, 8), (100, 50, 3), (20, 30, 2.5)])
    def test_parameter_parity(self, n, k, ratio):
        target = size_match("hashed", n, k, ratio).weight_count
        for variant in ("small", "thin"):
            got = size_match(variant, n, k, ratio).weight_count
            # one extra hidden unit from the ceiling costs at most one row and one column of weights
            assert abs(got - target) <= n + k + 10

    def test_invalid(self):
        with pytest.raises(InvalidConfigError):
            size_match("hashed", 784, 100, 0.5)
        with pytest.raises(InvalidConfigError):
            size_match("wide", 784, 100, 2)
        with pytest.raises(InvalidConfigError):
            size_match("small", 0, 100, 2)


class TestTrainConfig:
    def test_decay(self):
        c = TrainConfig(lr=0.1)
        assert c.lr_at(1) == 0.1 and c.lr_at(4) == pytest.approx(0.05)
        assert TrainConfig(lr=0.1, lr_decay="none").lr_at(9) == 0.1

    @pytest.mark.parametrize("kw", [{"keep": 0.0}, {"keep": 1.5}, {"batch_size": 0}, {"momentum": 1.0},
                                    {"lr_decay": "cosine"}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfigError):
            TrainConfig(**kw)


class TestModel:
    def test_hashed_layer_virtual(self):
        L = Layer(2, 2, np.array([1.0, 2.0]), np.zeros(2), np.array([0, 1, 1, 0]))
        np.testing.assert_array_equal(L.virtual(), [[1.0, 2.0], [2.0, 1.0]])
        np.testing.assert_array_equal(L.reduce_grad(np.array([[1.0, 2.0], [3.0, 4.0]])), [5.0, 5.0])

    def test_init_bounds(self):
        arch = size_match("hashed", 12, 8, 2, n_out=3)
        model = build_model(arch, Rng(0))
        for L in model.layers:
            bound = math.sqrt(6 / (L.fan_in + L.fan_out))
            assert np.abs(L.weights).max() <= bound
            assert L.hashed and L.weights.size < L.fan_in * L.fan_out

    @pytest.mark.parametrize("variant", ["hashed", "thin", "full"])
    def test_gradient_matches_finite_difference(self, variant):
        data = _toy_data(m=15, n=6, classes=3)
        model = build_model(size_match(variant, 6, 5, 2, n_out=3), Rng(1))
        X, y = data.features, data.labels
        _, grads = model.loss_and_grads(X, y)
        for p, g in zip(model.params(), grads):
            def f(u, p=p):
                old = p.copy()
                p[...] = u.reshape(p.shape)
                val = model.loss_and_grads(X, y)[0]
                p[...] = old
                return val
            fd = central_difference(f, p.ravel().copy(), h=1e-6)
            np.testing.assert_allclose(g.ravel(), fd, rtol=1e-5, atol=1e-8)

    def test_dropout_scales_survivors(self):
        model = build_model(size_match("full", 6, 50, 1, n_out=3), Rng(2))
        data = _toy_data(m=400, n=6, classes=3)
        full = model.loss_and_grads(data.features, data.labels)[0]
        dropped = model.loss_and_grads(data.features, data.labels, keep=0.999999, gen=np.random.default_rng(0))[0]
        assert dropped == pytest.approx(full, rel=1e-4)


class TestTraining:
    def test_zero_learning_rate(self):
        data = _toy_data()
        arch = size_match("hashed", 12, 10, 2, n_out=3)
        model = build_model(arch, Rng(0))
        before = [p.copy() for p in model.params()]
        train_classifier(data, arch, TrainConfig(epochs=1, lr=0.0, seed=0), model=model)
        for a, b in zip(before, model.params()):
            np.testing.assert_array_equal(a, b)

    def test_full_batch_no_dropout_is_gradient_step(self):
        data = _toy_data()
        arch = size_match("thin", 12, 10, 2, n_out=3)
        model = build_model(arch, Rng(0))
        before = [p.copy() for p in model.params()]
        _, grads = model.loss_and_grads(data.features, data.labels)
        cfg = TrainConfig(epochs=1, batch_size=data.m, lr=0.3, lr_decay="none", keep=1.0)
        train_classifier(data, arch, cfg, model=model)
        for p0, g, p in zip(before, grads, model.params()):
            np.testing.assert_allclose(p, p0 - 0.3 * g, rtol=0, atol=1e-15)

    def test_injective_hash_matches_full(self):
        data = _toy_data()
        full_arch = size_match("full", 12, 10, 1, n_out=3)
        hashed_arch = size_match("hashed", 12, 10, 1, n_out=3)
        full = build_model(full_arch, Rng(0))
        ident = [np.arange(L.fan_in * L.fan_out) for L in full.layers]
        hashed = build_model(hashed_arch, Rng(0), indices=ident)
        for Lh, Lf in zip(hashed.layers, full.layers):
            Lh.weights[...] = Lf.weights.ravel()
        cfg = TrainConfig(epochs=3, batch_size=20, seed=4)
        a = train_classifier(data, full_arch, cfg, test=data, model=full)
        b = train_classifier(data, hashed_arch, cfg, test=data, model=hashed)
        np.testing.assert_allclose(a.loss, b.loss, rtol=0, atol=1e-10)
        assert a.test_error == b.test_error

    def test_learns_and_reports(self):
        data = _toy_data(m=300)
        arch = size_match("hashed", 12, 16, 2, n_out=3)
        r = train_classifier(data, arch, TrainConfig(epochs=15, batch_size=10, lr=0.05, seed=1), test=data)
        assert len(r.rows()) == 15 and r.rows()[0]["epoch"] == 1
        assert all(0 <= e <= 1 for e in r.train_error + r.test_error)
        assert r.final_test_error <= 0.1 and r.loss[-1] < r.loss[0]
        assert r.weight_count == arch.weight_count and r.config["seed"] == 1

    def test_deterministic(self):
        data = _toy_data()
        arch = size_match("hashed", 12, 10, 2, n_out=3)
        cfg = TrainConfig(epochs=2, seed=7)
        assert train_classifier(data, arch, cfg).loss == train_classifier(data, arch, cfg).loss

    def test_divergence_raises(self):
        data = _toy_data()
        arch = size_match("full", 12, 10, 1, n_out=3)
        with pytest.raises(TrainingDivergedError):
            train_classifier(data, arch, TrainConfig(epochs=5, lr=1e200, momentum=0.0))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidConfigError):
            train_classifier(_toy_data(n=5), size_match("full", 12, 10, 1, n_out=3), TrainConfig(epochs=1))
