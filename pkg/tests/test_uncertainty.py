"""Ensemble predictions and entropy-based uncertainty."""

import inspect

import numpy as np
import pytest

from marginlab import nnet, uncertainty
from marginlab.nnet import MlpModel, build_mlp
from marginlab.uncertainty import Ensemble


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def linear_model(w, b):
    model = MlpModel.zeros((len(w), len(b)))
    model.weights[0] = np.asarray(w, dtype=float)
    model.biases[0] = np.asarray(b, dtype=float)
    return model


class TestEnsemble:
    def test_needs_members(self):
        with pytest.raises(ValueError):
            Ensemble([])

    def test_heterogeneous_dims_rejected(self):
        with pytest.raises(ValueError, match="layer_dims"):
            Ensemble([build_mlp((2, 3, 2), 0), build_mlp((2, 4, 2), 1)])


class TestAvgPrediction:
    def test_singleton_equals_softmax(self):
        model = build_mlp((3, 5, 4), seed=0)
        x = np.array([0.2, -0.1, 0.5])
        np.testing.assert_array_equal(
            uncertainty.avg_prediction(model, x), nnet.softmax(nnet.forward(model, x))
        )

    def test_symmetric_average(self):
        a = linear_model([[60.0, -60.0]], [0.0, 0.0])  # softmax -> (1, 0)
        b = linear_model([[-60.0, 60.0]], [0.0, 0.0])  # softmax -> (0, 1)
        yhat = uncertainty.avg_prediction(Ensemble([a, b]), np.array([1.0]))
        np.testing.assert_allclose(yhat, [0.5, 0.5], atol=1e-12)

    def test_matches_independent_mean(self):
        members = [build_mlp((3, 6, 4), seed=s) for s in range(3)]
        x = np.array([0.4, 0.1, -0.8])
        expected = np.mean([nnet.softmax(nnet.forward(m, x)) for m in members], axis=0)
        np.testing.assert_allclose(
            uncertainty.avg_prediction(Ensemble(members), x), expected, rtol=1e-15
        )
        assert abs(uncertainty.avg_prediction(Ensemble(members), x).sum() - 1) < 1e-12


class TestEntropy:
    def test_uniform_maximum(self):
        model = MlpModel.zeros((2, 2))
        assert uncertainty.entropy(model, np.array([1.0, 2.0])) == pytest.approx(
            np.log(2), abs=1e-12
        )

    def test_one_hot_zero(self):
        assert nnet.entropy_of_probs(np.array([1.0, 0.0])) == 0.0

    def test_nine_one_value(self):
        # -0.9 ln 0.9 - 0.1 ln 0.1, evaluated independently
        expected = -(0.9 * np.log(0.9) + 0.1 * np.log(0.1))
        assert expected == pytest.approx(0.325083, abs=1e-6)
        assert nnet.entropy_of_probs(np.array([0.9, 0.1])) == pytest.approx(expected, rel=1e-12)

    def test_bounds_random(self):
        rng = np.random.default_rng(0)
        ens = Ensemble([build_mlp((3, 8, 5), seed=s) for s in range(3)])
        for _ in range(100):
            h = uncertainty.entropy(ens, rng.normal(scale=3, size=3))
            assert 0.0 <= h <= np.log(5) + 1e-12

    def test_label_free_signatures(self):
        # structurally unsupervised: no label parameter anywhere
        for fn in (uncertainty.entropy, uncertainty.entropy_input_grad):
            assert "label" not in inspect.signature(fn).parameters

    def test_unimodal_along_crossing_line_linear_model(self):
        w = np.array([1.0, 2.0])
        model = linear_model(np.column_stack([w, -w]), [-0.25, 0.25])
        # boundary: logits equal  <=>  w.x = 0.25
        x0 = np.array([1.5, -0.5])
        direction = np.array([1.0, 1.0]) / np.sqrt(2)
        ts = np.linspace(-4, 4, 2001)
        pts = x0[None, :] + ts[:, None] * direction
        h = uncertainty.entropy(model, pts)
        peak = int(np.argmax(h))
        assert np.all(np.diff(h[: peak + 1]) >= -1e-12)
        assert np.all(np.diff(h[peak:]) <= 1e-12)
        assert abs(float(pts[peak] @ w) - 0.25) < 0.01  # max on the hyperplane


class TestEntropyGrad:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        ens = Ensemble([build_mlp((3, 6, 4), seed=s) for s in range(3)])
        for _ in range(5):
            x = rng.normal(size=3)
            g = uncertainty.entropy_input_grad(ens, x)
            fd = fd_grad(lambda v: uncertainty.entropy(ens, v), x)
            denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8)
            assert np.max(np.abs(g - fd) / denom) < 1e-4

    def test_parallel_to_weights_linear_binary(self):
        w = np.array([1.5, -2.0, 0.5])
        model = linear_model(np.column_stack([w, -w]), [0.1, -0.1])
        g = uncertainty.entropy_input_grad(model, np.array([0.3, 0.4, -0.2]))
        cross = np.linalg.norm(np.cross(g, w))
        assert cross < 1e-10 * max(np.linalg.norm(g), 1.0) or np.allclose(g, 0)

    def test_symmetric_ensemble_stationary(self):
        w = np.array([[1.0, -1.0], [2.0, -2.0]])
        a = linear_model(w, [0.0, 0.0])
        b = linear_model(-w, [0.0, 0.0])
        ens = Ensemble([a, b])
        x = np.array([0.7, -0.3])
        yhat = uncertainty.avg_prediction(ens, x)
        np.testing.assert_allclose(yhat, [0.5, 0.5], atol=1e-12)
        g = uncertainty.entropy_input_grad(ens, x)
        np.testing.assert_allclose(g, 0.0, atol=1e-10)

    def test_latent_entry_requires_shared_split(self):
        a = build_mlp((3, 5, 2), seed=0, encoder_split=1)
        b = build_mlp((3, 5, 2), seed=1, encoder_split=None)
        with pytest.raises(ValueError, match="split"):
            uncertainty.entropy_input_grad(Ensemble([a, b]), np.zeros(5), entry="latent")

    def test_latent_entry_matches_fd(self):
        model = build_mlp((3, 6, 4, 2), seed=2, encoder_split=1)
        z = np.random.default_rng(1).normal(size=6)
        g = uncertainty.entropy_input_grad(model, z, entry="latent")
        fd = fd_grad(lambda v: uncertainty.entropy(model, v, entry="latent"), z)
        denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8)
        assert np.max(np.abs(g - fd) / denom) < 1e-4


class TestMaximizer:
    def test_entropy_max_where_prediction_most_uniform(self):
        rng = np.random.default_rng(4)
        ens = Ensemble([build_mlp((2, 6, 3), seed=s) for s in range(2)])
        probes = rng.normal(scale=2, size=(200, 2))
        h = np.array([uncertainty.entropy(ens, p) for p in probes])
        dist = np.array(
            [np.linalg.norm(uncertainty.avg_prediction(ens, p) - 1.0 / 3) for p in probes]
        )
        assert np.argmax(h) == np.argmin(dist)
