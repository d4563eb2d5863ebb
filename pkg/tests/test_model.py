"""Linear softmax model: losses, gradients, risks, projection, training."""

import math

import numpy as np
import pytest

from olshift.core import InvalidInputError, LabeledDataset, MissingClassError
from olshift.model import (
    DomainSpec,
    ModelParams,
    OfflineOptConfig,
    PerClassRiskProvider,
    augment,
    estimate_constants,
    per_class_risks,
    predict_label,
    predict_scores,
    project_to_domain,
    surrogate_loss,
    surrogate_loss_gradient,
    train_offline,
)
from olshift.verify import finite_difference_gradient


def random_instance(rng, k=3, d=4):
    w = ModelParams(rng.normal(0, 1, (k, d + 1)))
    x = rng.normal(0, 1, d)
    y = int(rng.integers(1, k + 1))
    return w, x, y


class TestPredict:
    def test_zero_params_zero_scores(self):
        w = ModelParams.zeros(3, 2)
        np.testing.assert_array_equal(predict_scores(w, np.array([1.0, -2.0])), 0.0)

    def test_one_hot_feature_selects_column(self):
        weights = np.arange(12, dtype=float).reshape(3, 4)
        w = ModelParams(weights)
        x = np.array([0.0, 1.0, 0.0])
        np.testing.assert_allclose(
            predict_scores(w, x), weights[:, 1] + weights[:, 3]
        )

    def test_matches_naive_dot_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            w, x, _ = random_instance(rng)
            xa = np.concatenate([x, [1.0]])
            naive = [sum(w.weights[k][j] * xa[j] for j in range(xa.size))
                     for k in range(w.num_classes)]
            np.testing.assert_allclose(predict_scores(w, x), naive, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            predict_scores(ModelParams.zeros(2, 3), np.zeros(2))

    def test_label_tie_breaks_to_smallest(self):
        assert predict_label(ModelParams.zeros(3, 2), np.zeros(2)) == 1
        w = ModelParams(np.array([[0.0, 0.1], [0.0, 0.9]]))
        assert predict_label(w, np.zeros(1)) == 2
        w = ModelParams(np.array([[0.0, 0.5], [0.0, 0.5], [0.0, 0.2]]))
        assert predict_label(w, np.zeros(1)) == 1


class TestSurrogateLoss:
    def test_uniform_softmax_k2(self):
        w = ModelParams.zeros(2, 3)
        assert surrogate_loss(w, np.ones(3), 1) == pytest.approx(math.log(2))

    def test_uniform_softmax_k10(self):
        w = ModelParams.zeros(10, 3)
        assert surrogate_loss(w, np.ones(3), 7) == pytest.approx(math.log(10))

    def test_matches_unstabilized_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            w, x, y = random_instance(rng)
            s = predict_scores(w, x)
            naive = -math.log(math.exp(s[y - 1]) / np.exp(s).sum())
            assert surrogate_loss(w, x, y) == pytest.approx(naive, abs=1e-9)

    def test_invalid_label(self):
        with pytest.raises(InvalidInputError):
            surrogate_loss(ModelParams.zeros(2, 2), np.zeros(2), 3)

    def test_convexity_witness(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            k, d = 3, 2
            w1 = rng.normal(0, 2, (k, d + 1))
            w2 = rng.normal(0, 2, (k, d + 1))
            x = rng.normal(0, 1, d)
            y = int(rng.integers(1, k + 1))
            lam = rng.uniform()
            mix = surrogate_loss(ModelParams(lam * w1 + (1 - lam) * w2), x, y)
            bound = lam * surrogate_loss(ModelParams(w1), x, y) + (
                1 - lam
            ) * surrogate_loss(ModelParams(w2), x, y)
            assert mix <= bound + 1e-9


class TestSurrogateGradient:
    def test_zero_params_rows(self):
        x = np.array([2.0, -1.0])
        g = surrogate_loss_gradient(ModelParams.zeros(2, 2), x, 1)
        xa = np.array([2.0, -1.0, 1.0])
        np.testing.assert_allclose(g[0], (0.5 - 1.0) * xa)
        np.testing.assert_allclose(g[1], 0.5 * xa)

    def test_finite_difference_match(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(100):
            w, x, y = random_instance(rng)
            analytic = surrogate_loss_gradient(w, x, y)
            fd = finite_difference_gradient(
                lambda m: surrogate_loss(ModelParams(m), x, y), w.weights, h=1e-5
            )
            rel = np.abs(analytic - fd).max() / max(1.0, np.abs(fd).max())
            worst = max(worst, rel)
        assert worst < 1e-5

    def test_zero_feature_leaves_bias_column_only(self):
        rng = np.random.default_rng(4)
        w = ModelParams(rng.normal(0, 1, (3, 4)))
        g = surrogate_loss_gradient(w, np.zeros(3), 2)
        np.testing.assert_array_equal(g[:, :-1], 0.0)
        assert np.any(g[:, -1] != 0.0)


class TestPerClassRisks:
    def test_single_sample_per_class(self):
        ds = LabeledDataset(np.array([[0.0], [1.0]]), np.array([1, 2]))
        w = ModelParams(np.array([[1.0, 0.0], [-1.0, 0.0]]))
        pcr = per_class_risks(w, ds)
        assert pcr.values[0] == pytest.approx(surrogate_loss(w, np.array([0.0]), 1))
        assert pcr.values[1] == pytest.approx(surrogate_loss(w, np.array([1.0]), 2))

    def test_duplication_invariance(self):
        rng = np.random.default_rng(5)
        feats = rng.normal(0, 1, (6, 2))
        labels = np.array([1, 1, 2, 2, 3, 3])
        ds = LabeledDataset(feats, labels)
        dup = LabeledDataset(np.vstack([feats, feats]), np.concatenate([labels, labels]))
        w = ModelParams(rng.normal(0, 1, (3, 3)))
        np.testing.assert_allclose(
            per_class_risks(w, ds).values, per_class_risks(w, dup).values, atol=1e-12
        )

    def test_matches_per_sample_summation_oracle(self):
        rng = np.random.default_rng(6)
        feats = rng.normal(0, 1, (20, 3))
        labels = rng.integers(1, 4, 20)
        labels[:3] = [1, 2, 3]
        ds = LabeledDataset(feats, labels)
        w = ModelParams(rng.normal(0, 1, (3, 4)))
        pcr = per_class_risks(w, ds)
        for c in range(1, 4):
            rows = feats[labels == c]
            oracle_val = np.mean([surrogate_loss(w, x, c) for x in rows])
            oracle_grad = np.mean(
                [surrogate_loss_gradient(w, x, c) for x in rows], axis=0
            )
            assert pcr.values[c - 1] == pytest.approx(oracle_val, abs=1e-12)
            np.testing.assert_allclose(pcr.gradients[c - 1], oracle_grad, atol=1e-12)

    def test_missing_class_error_names_class(self):
        ds = LabeledDataset(np.zeros((2, 1)), np.array([1, 3]), num_classes=3)
        with pytest.raises(MissingClassError) as err:
            per_class_risks(ModelParams.zeros(3, 1), ds)
        assert err.value.class_index == 2

    def test_batched_evaluation_matches_single(self):
        rng = np.random.default_rng(7)
        ds = LabeledDataset(rng.normal(0, 1, (30, 2)), rng.integers(1, 3, 30))
        provider = PerClassRiskProvider(ds)
        stack = rng.normal(0, 1, (4, 2, 3))
        vals, grads = provider.values_and_gradients_many(stack)
        for i in range(4):
            v1, g1 = provider.values_and_gradients(stack[i])
            np.testing.assert_array_equal(vals[i], v1)
            np.testing.assert_array_equal(grads[i], g1)


class TestProjection:
    def test_interior_unchanged(self):
        w = ModelParams(np.full((2, 2), 0.1))
        dom = DomainSpec(radius=2 * w.norm)
        assert project_to_domain(w, dom) is w

    def test_exterior_rescaled_to_radius(self):
        w = ModelParams(np.full((2, 2), 3.0))
        dom = DomainSpec(radius=w.norm / 2)
        out = project_to_domain(w, dom)
        assert out.norm == pytest.approx(dom.radius, abs=1e-12)

    def test_zero_stays_zero(self):
        w = ModelParams.zeros(2, 1)
        assert project_to_domain(w, DomainSpec(1.0)).norm == 0.0

    def test_invariant_holds_on_random_inputs(self):
        rng = np.random.default_rng(8)
        dom = DomainSpec(1.5)
        for _ in range(200):
            w = ModelParams(rng.normal(0, 2, (3, 3)))
            assert project_to_domain(w, dom).norm <= dom.radius + 1e-12


def blobs(rng, n_per_class=500, k=2, d=3, dist=6.0):
    means = np.zeros((k, d))
    means[0, 0] = -dist / 2
    means[1, 0] = dist / 2
    feats = np.vstack([means[c] + rng.normal(0, 1, (n_per_class, d)) for c in range(k)])
    labels = np.repeat(np.arange(1, k + 1), n_per_class)
    return LabeledDataset(feats, labels)


class TestTrainOffline:
    def test_separable_blobs_low_training_error(self):
        rng = np.random.default_rng(9)
        ds = blobs(rng)
        f0 = train_offline(ds, DomainSpec.unbounded())
        scores = augment(ds.features) @ f0.weights.T
        preds = scores.argmax(axis=1) + 1
        assert np.mean(preds != ds.labels) < 0.01

    def test_loss_decreases_monotonically_with_small_step(self):
        ds = LabeledDataset(np.array([[-1.0], [1.0]]), np.array([1, 2]))
        losses = []
        for iters in range(0, 30, 5):
            w = train_offline(ds, DomainSpec.unbounded(),
                              OfflineOptConfig(max_iters=iters, tol=0.0, step=0.05))
            pcr = per_class_risks(w, ds, with_gradients=False)
            losses.append(pcr.values.mean())
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_zero_iterations_returns_zero_params(self):
        ds = LabeledDataset(np.array([[-1.0], [1.0]]), np.array([1, 2]))
        w = train_offline(ds, DomainSpec(1.0), OfflineOptConfig(max_iters=0))
        assert w.norm == 0.0

    def test_missing_class_rejected(self):
        ds = LabeledDataset(np.zeros((2, 1)), np.array([1, 1]), num_classes=2)
        with pytest.raises(MissingClassError):
            train_offline(ds, DomainSpec(1.0))


class TestEstimateConstants:
    def test_identical_samples_scaled_by_safety(self):
        ds = LabeledDataset(np.tile([[1.0, 2.0]], (4, 1)), np.array([1, 1, 1, 1]),
                            num_classes=2)
        w = ModelParams.zeros(2, 2)
        consts = estimate_constants(w, ds, DomainSpec(1.0), safety_factor=2.0)
        g = np.linalg.norm(surrogate_loss_gradient(w, np.array([1.0, 2.0]), 1))
        assert consts.grad_bound == pytest.approx(2.0 * g)
        assert consts.loss_bound == pytest.approx(2.0 * math.log(2))

    def test_safety_one_gives_exact_maxima(self):
        rng = np.random.default_rng(10)
        ds = blobs(rng, n_per_class=20)
        f0 = train_offline(ds, DomainSpec.unbounded(), OfflineOptConfig(max_iters=50))
        dom = DomainSpec(2 * max(1.0, f0.norm))
        consts = estimate_constants(f0, ds, dom, safety_factor=1.0)
        points = [f0.weights, f0.weights * (dom.radius / f0.norm)]
        max_loss = max(
            surrogate_loss(ModelParams(w), x, int(y))
            for w in points
            for x, y in zip(ds.features, ds.labels)
        )
        assert consts.loss_bound == pytest.approx(max_loss)

    def test_monotone_in_safety_factor(self):
        rng = np.random.default_rng(11)
        ds = blobs(rng, n_per_class=10)
        w = ModelParams(rng.normal(0, 1, (2, 4)))
        dom = DomainSpec(5.0)
        prev = None
        for s in (0.5, 1.0, 2.0, 4.0):
            c = estimate_constants(w, ds, dom, safety_factor=s)
            if prev is not None:
                assert c.grad_bound >= prev.grad_bound
                assert c.loss_bound >= prev.loss_bound
            prev = c
