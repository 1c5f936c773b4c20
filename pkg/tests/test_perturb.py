"""Perturbation engines: projections, gradients, ball containment."""

import inspect

import numpy as np
import pytest
from scipy import stats

from marginlab import nnet, perturb
from marginlab.nnet import MlpModel, build_mlp
from marginlab.perturb import PerturbSpec
from marginlab.uncertainty import Ensemble


def linear_binary(w, b=0.0):
    w = np.atleast_1d(np.asarray(w, dtype=float))
    model = MlpModel.zeros((len(w), 2))
    model.weights[0] = np.column_stack([-w, w])
    model.biases[0] = np.array([-b, b])
    return model


class TestSpec:
    def test_randomize_needs_two_steps(self):
        with pytest.raises(ValueError, match="randomize_steps"):
            PerturbSpec(0.1, 0.01, 1, "udp-pgd", randomize_steps=True)

    def test_bad_method(self):
        with pytest.raises(ValueError, match="method"):
            PerturbSpec(0.1, 0.01, 5, "bim")

    def test_negative_epsilon(self):
        with pytest.raises(ValueError, match="epsilon"):
            PerturbSpec(-0.1, 0.01, 5, "fgsm")


class TestProject:
    def test_coordinate_clamp(self):
        np.testing.assert_allclose(
            perturb.project_linf(np.array([0.3, -0.7]), 0.5), [0.3, -0.5]
        )

    def test_identity_inside_ball(self):
        d = np.array([0.1, -0.2, 0.0])
        np.testing.assert_array_equal(perturb.project_linf(d, 0.5), d)
        np.testing.assert_array_equal(
            perturb.project_linf(perturb.project_linf(d, 0.5), 0.5),
            perturb.project_linf(d, 0.5),
        )

    def test_zero_ball(self):
        np.testing.assert_array_equal(perturb.project_linf(np.array([3.0, -4.0]), 0.0), 0.0)


class TestFgsm:
    def test_zero_epsilon(self):
        model = build_mlp((3, 4, 2), seed=0)
        res = perturb.fgsm(model, np.array([0.1, 0.2, 0.3]), 1, PerturbSpec(0.0, 0.1, 1, "fgsm"))
        np.testing.assert_array_equal(res.delta, 0.0)

    def test_closed_form_linear(self):
        rng = np.random.default_rng(2)
        model = MlpModel.zeros((4, 3))
        model.weights[0] = rng.normal(size=(4, 3))
        x = rng.normal(size=4)
        label = 1
        p = nnet.softmax(x @ model.weights[0])
        expected = 0.25 * np.sign(model.weights[0] @ (p - np.eye(3)[label]))
        res = perturb.fgsm(model, x, label, PerturbSpec(0.25, 0.1, 1, "fgsm"))
        np.testing.assert_allclose(res.delta, expected, atol=1e-12)

    def test_epsilon_homogeneity(self):
        model = build_mlp((3, 5, 2), seed=1)
        x = np.array([0.5, -0.5, 0.2])
        d1 = perturb.fgsm(model, x, 0, PerturbSpec(0.1, 0.1, 1, "fgsm")).delta
        d2 = perturb.fgsm(model, x, 0, PerturbSpec(0.2, 0.1, 1, "fgsm")).delta
        np.testing.assert_allclose(d2, 2.0 * d1, atol=1e-15)


class TestRfgsm:
    def test_alpha_limit_uniform_offset(self):
        # alpha -> 0: delta is the uniform draw; KS test against U(-eps, eps)
        model = build_mlp((1, 3, 2), seed=0)
        spec = PerturbSpec(0.5, 1e-300, 1, "rfgsm")
        rng = np.random.default_rng(123)
        X = np.zeros((10_000, 1))
        res = perturb.rfgsm(model, X, np.zeros(10_000, dtype=int), spec, rng)
        draws = res.delta.ravel()
        assert np.max(np.abs(draws)) <= 0.5 + 1e-12
        p = stats.kstest(draws, stats.uniform(loc=-0.5, scale=1.0).cdf).pvalue
        assert p > 0.01

    def test_zero_epsilon(self):
        model = build_mlp((2, 3, 2), seed=0)
        res = perturb.rfgsm(
            model, np.array([0.1, 0.2]), 0, PerturbSpec(0.0, 0.1, 1, "rfgsm"),
            np.random.default_rng(0),
        )
        np.testing.assert_array_equal(res.delta, 0.0)

    def test_seed_determinism(self):
        model = build_mlp((2, 3, 2), seed=0)
        spec = PerturbSpec(0.3, 0.1, 1, "rfgsm")
        x = np.array([0.1, 0.2])
        d1 = perturb.rfgsm(model, x, 0, spec, np.random.default_rng(7)).delta
        d2 = perturb.rfgsm(model, x, 0, spec, np.random.default_rng(7)).delta
        np.testing.assert_array_equal(d1, d2)


class TestLdpPgd:
    def test_one_step_is_fgsm_with_alpha(self):
        model = build_mlp((3, 6, 2), seed=4)
        x = np.array([0.3, -0.1, 0.8])
        spec = PerturbSpec(0.5, 0.07, 1, "ldp-pgd")
        res = perturb.ldp_pgd(model, x, 1, spec)
        fg = perturb.fgsm(model, x, 1, PerturbSpec(0.07, 0.07, 1, "fgsm"))
        np.testing.assert_allclose(res.delta, perturb.project_linf(fg.delta, 0.5), atol=1e-15)

    def test_1d_walks_past_boundary(self):
        # label 0 at x = -1, w > 0: the loss keeps growing to the right, so
        # the iterate should march min(K*alpha, eps) toward +inf
        model = linear_binary([3.0])
        x = np.array([-1.0])
        for K, eps, expected in ((5, 2.0, 0.5), (40, 2.0, 2.0), (40, 0.8, 0.8)):
            res = perturb.ldp_pgd(model, x, 0, PerturbSpec(eps, 0.1, K, "ldp-pgd"))
            assert res.delta[0] == pytest.approx(expected, abs=1e-12)

    def test_zero_epsilon(self):
        model = build_mlp((2, 4, 2), seed=0)
        res = perturb.ldp_pgd(model, np.array([0.2, 0.1]), 0, PerturbSpec(0.0, 0.1, 7, "ldp-pgd"))
        np.testing.assert_array_equal(res.delta, 0.0)
        assert res.steps_taken == 7


class TestUdpPgd:
    def test_1d_stops_at_boundary(self):
        # entropy peaks at the boundary (x = 0); from -1 the walk should end
        # within one step size of it instead of running away
        model = linear_binary([4.0])
        spec = PerturbSpec(2.0, 0.1, 40, "udp-pgd")
        res = perturb.udp_pgd(model, np.array([-1.0]), spec)
        assert abs(-1.0 + res.delta[0]) <= 0.1 + 1e-12

    def test_stationary_at_symmetric_maximum(self):
        w = np.array([[2.0, -2.0], [1.0, -1.0]])
        a = MlpModel.zeros((2, 2)); a.weights[0] = w
        b = MlpModel.zeros((2, 2)); b.weights[0] = -w
        ens = Ensemble([a, b])
        spec = PerturbSpec(0.5, 0.05, 10, "udp-pgd")
        res = perturb.udp_pgd(ens, np.array([0.3, -0.7]), spec)
        np.testing.assert_array_equal(res.delta, 0.0)

    def test_signature_label_free(self):
        assert "label" not in inspect.signature(perturb.udp_pgd).parameters

    def test_randomized_step_counts_uniform(self):
        model = build_mlp((1, 2, 2), seed=0)
        spec = PerturbSpec(0.01, 0.01, 20, "udp-pgd", randomize_steps=True)
        rng = np.random.default_rng(42)
        counts = np.zeros(20, dtype=int)
        for _ in range(2000):
            res = perturb.udp_pgd(model, np.array([0.0]), spec, rng)
            counts[res.steps_taken] += 1
        assert counts[0] == 0 and np.all(counts[1:] > 0)
        p = stats.chisquare(counts[1:]).pvalue
        assert p > 0.01


class TestLatent:
    def test_split_zero_matches_input_space(self):
        model = build_mlp((3, 5, 2), seed=3, encoder_split=0)
        x = np.array([0.1, 0.4, -0.2])
        spec = PerturbSpec(0.3, 0.05, 5, "udp-pgd")
        lat = perturb.perturb_latent(model, x, spec)
        inp = perturb.udp_pgd(model, x, spec)
        np.testing.assert_array_equal(lat.delta, inp.delta)

    def test_missing_split_rejected(self):
        model = build_mlp((3, 5, 2), seed=3)
        with pytest.raises(ValueError, match="split"):
            perturb.perturb_latent(model, np.zeros(3), PerturbSpec(0.3, 0.05, 5, "udp-pgd"))

    def test_latent_ball_and_dimension(self):
        model = build_mlp((3, 6, 4, 2), seed=5, encoder_split=1)
        spec = PerturbSpec(0.2, 0.05, 8, "udp-pgd")
        res = perturb.perturb_latent(model, np.array([0.5, -0.5, 0.1]), spec)
        assert res.delta.shape == (6,)
        assert np.max(np.abs(res.delta)) <= 0.2 + 1e-12

    def test_latent_ldp_gradient_through_classifier(self):
        model = build_mlp((3, 6, 4, 2), seed=6, encoder_split=1)
        x = np.array([0.5, -0.5, 0.1])
        spec = PerturbSpec(0.4, 0.4, 1, "ldp-pgd")
        res = perturb.perturb_latent(model, x, spec, label=0)
        z = nnet.encode(model, x)
        g = nnet.backward(model, z, "cross-entropy", label=0, entry="latent").input_grad
        np.testing.assert_allclose(res.delta, 0.4 * np.sign(g), atol=1e-12)


class TestInvariants:
    def test_ball_containment_randomized(self):
        rng = np.random.default_rng(0)
        model = build_mlp((3, 6, 3), seed=0)
        for trial in range(200):
            eps = float(rng.uniform(0, 1))
            alpha = float(rng.uniform(0.01, 0.5))
            K = int(rng.integers(1, 8))
            method = ("fgsm", "rfgsm", "ldp-pgd", "udp-pgd")[trial % 4]
            spec = PerturbSpec(eps, alpha, K, method,
                               randomize_steps=(method == "udp-pgd" and K >= 2))
            x = rng.normal(size=3)
            res = perturb.perturb(model, x, spec, label=int(rng.integers(0, 3)),
                                  rng=np.random.default_rng(trial))
            assert np.max(np.abs(res.delta)) <= eps + 1e-12

    def test_pure_under_seed(self):
        model = build_mlp((3, 6, 3), seed=1)
        x = np.random.default_rng(0).normal(size=(4, 3))
        y = np.array([0, 1, 2, 0])
        for method in ("fgsm", "rfgsm", "ldp-pgd", "udp-pgd"):
            spec = PerturbSpec(0.3, 0.05, 5, method,
                               randomize_steps=(method == "udp-pgd"),
                               random_start=(method == "ldp-pgd"))
            a = perturb.perturb(model, x, spec, label=y, rng=np.random.default_rng(3))
            b = perturb.perturb(model, x, spec, label=y, rng=np.random.default_rng(3))
            np.testing.assert_array_equal(a.delta, b.delta)
            assert a.steps_taken == b.steps_taken

    def test_crossed_boundary_flag(self):
        model = linear_binary([5.0])
        spec = PerturbSpec(3.0, 0.5, 10, "ldp-pgd")
        res = perturb.ldp_pgd(model, np.array([-1.0]), 0, spec)
        assert bool(res.crossed_boundary)
        res0 = perturb.ldp_pgd(model, np.array([-1.0]), 0, PerturbSpec(0.0, 0.5, 10, "ldp-pgd"))
        assert not bool(res0.crossed_boundary)
