"""Confusion estimation, the prior solve, and the unbiased risk estimator."""

import math

import numpy as np
import pytest

from olshift.core import (
    DegenerateConfusionError,
    InvalidInputError,
    LabeledDataset,
    MissingClassError,
    PriorVector,
    RawPriorEstimate,
)
from olshift.estimator import (
    ConfusionMatrix,
    estimate_confusion,
    estimate_prior,
    predicted_histogram,
    regularize_and_invertibility,
    unbiased_risk,
)
from olshift.model import (
    ModelParams,
    PerClassRiskProvider,
    predict_labels_batch,
)
from olshift.verify import finite_difference_gradient


def separating_model(k=2, d=1):
    # class c scores highest when x is near c's sign pattern
    w = np.zeros((k, d + 1))
    w[0, 0] = -1.0
    w[1, 0] = 1.0
    return ModelParams(w)


class TestEstimateConfusion:
    def test_perfect_classifier_gives_identity(self):
        ds = LabeledDataset(np.array([[-1.0], [-2.0], [1.0], [2.0]]),
                            np.array([1, 1, 2, 2]))
        c = estimate_confusion(separating_model(), ds)
        np.testing.assert_array_equal(c.entries, np.eye(2))

    def test_constant_predictor_first_row_ones(self):
        w = ModelParams(np.array([[0.0, 1.0], [0.0, 0.0], [0.0, 0.0]]))
        ds = LabeledDataset(np.random.default_rng(0).normal(0, 1, (9, 1)),
                            np.array([1, 1, 1, 2, 2, 2, 3, 3, 3]))
        c = estimate_confusion(w, ds)
        np.testing.assert_array_equal(c.entries[0], 1.0)
        np.testing.assert_array_equal(c.entries[1:], 0.0)

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(1)
        feats = rng.normal(0, 2, (40, 2))
        labels = rng.integers(1, 4, 40)
        labels[:3] = [1, 2, 3]
        ds = LabeledDataset(feats, labels)
        w = ModelParams(rng.normal(0, 1, (3, 3)))
        c = estimate_confusion(w, ds)
        preds = predict_labels_batch(w, feats)
        for i in range(3):
            for j in range(3):
                num = np.sum((preds == i + 1) & (labels == j + 1))
                den = np.sum(labels == j + 1)
                assert c.entries[i, j] == num / den

    def test_missing_class_error(self):
        ds = LabeledDataset(np.zeros((2, 1)), np.array([1, 1]), num_classes=2)
        with pytest.raises(MissingClassError):
            estimate_confusion(separating_model(), ds)

    def test_columns_sum_to_one(self):
        rng = np.random.default_rng(2)
        ds = LabeledDataset(rng.normal(0, 1, (30, 2)), rng.integers(1, 3, 30))
        c = estimate_confusion(ModelParams(rng.normal(0, 1, (2, 3))), ds)
        np.testing.assert_allclose(c.entries.sum(axis=0), 1.0, atol=1e-12)


class TestRegularize:
    def test_identity_unchanged(self):
        c = ConfusionMatrix(np.eye(3))
        assert regularize_and_invertibility(c, 1e-3) is c

    def test_singular_matrix_lifted_above_floor(self):
        c = ConfusionMatrix(np.full((2, 2), 0.5))
        assert c.min_singular == pytest.approx(0.0, abs=1e-12)
        fixed = regularize_and_invertibility(c, 1e-3)
        assert fixed.min_singular >= 1e-3
        assert fixed.regularized

    def test_well_conditioned_2x2_closed_form(self):
        # smallest eigenvalue of C^T C: (tr - sqrt(tr^2 - 4 det)) / 2
        entries = np.array([[0.9, 0.2], [0.1, 0.8]])
        g = entries.T @ entries
        tr, det = g.trace(), np.linalg.det(g)
        sigma = math.sqrt((tr - math.sqrt(tr**2 - 4 * det)) / 2)
        c = ConfusionMatrix(entries)
        assert c.min_singular == pytest.approx(sigma, abs=1e-10)
        assert sigma == pytest.approx(0.693, abs=1e-3)
        assert regularize_and_invertibility(c, 1e-3) is c

    def test_floor_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            regularize_and_invertibility(ConfusionMatrix(np.eye(2)), 0.0)


class TestPredictedHistogram:
    def test_constant_prediction_one_hot(self):
        w = ModelParams(np.array([[0.0, 0.0], [0.0, 1.0]]))
        hist = predicted_histogram(w, np.zeros((5, 1)))
        np.testing.assert_array_equal(hist.entries, [0.0, 1.0])

    def test_single_sample_is_one_hot(self):
        hist = predicted_histogram(separating_model(), np.array([[2.0]]))
        np.testing.assert_array_equal(hist.entries, [0.0, 1.0])

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(3)
        w = ModelParams(rng.normal(0, 1, (3, 4)))
        feats = rng.normal(0, 1, (50, 3))
        hist = predicted_histogram(w, feats)
        preds = predict_labels_batch(w, feats)
        for c in range(3):
            assert hist.entries[c] == np.mean(preds == c + 1)

    def test_empty_batch_rejected(self):
        with pytest.raises(InvalidInputError):
            predicted_histogram(separating_model(), np.zeros((0, 1)))


class TestEstimatePrior:
    def test_identity_confusion_returns_histogram(self):
        hist = PriorVector([0.3, 0.7])
        raw = estimate_prior(ConfusionMatrix(np.eye(2)), hist)
        np.testing.assert_allclose(raw.entries, hist.entries)

    def test_two_by_two_hand_solve(self):
        c = ConfusionMatrix(np.array([[0.9, 0.2], [0.1, 0.8]]))
        raw = estimate_prior(c, PriorVector([0.55, 0.45]))
        np.testing.assert_allclose(raw.entries, [0.5, 0.5], atol=1e-12)

    def test_column_stochastic_preserves_total_mass(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            cols = rng.dirichlet(np.ones(3), size=3).T
            c = ConfusionMatrix(cols)
            if c.min_singular < 1e-6:
                continue
            hist = PriorVector(rng.dirichlet(np.ones(3)))
            raw = estimate_prior(c, hist)
            assert raw.entries.sum() == pytest.approx(1.0, abs=1e-9)

    def test_solve_then_multiply_round_trip(self):
        rng = np.random.default_rng(5)
        c = ConfusionMatrix(np.array([[0.85, 0.1, 0.05],
                                      [0.1, 0.8, 0.15],
                                      [0.05, 0.1, 0.8]]))
        for _ in range(50):
            mu = rng.dirichlet(np.ones(3))
            hist = PriorVector(c.entries @ mu)
            raw = estimate_prior(c, hist)
            np.testing.assert_allclose(raw.entries, mu, atol=1e-10)

    def test_k_mismatch(self):
        with pytest.raises(InvalidInputError):
            estimate_prior(ConfusionMatrix(np.eye(3)), PriorVector([0.5, 0.5]))


class TestUnbiasedRisk:
    def _pcr(self, rng, k=3, d=2, n=30):
        ds = LabeledDataset(rng.normal(0, 1, (n, d)),
                            np.concatenate([np.arange(1, k + 1),
                                            rng.integers(1, k + 1, n - k)]))
        provider = PerClassRiskProvider(ds)
        w = ModelParams(rng.normal(0, 1, (k, d + 1)))
        return provider.evaluate(w), provider, w

    def test_point_mass_selects_class(self):
        rng = np.random.default_rng(6)
        pcr, _, _ = self._pcr(rng)
        raw = RawPriorEstimate([0.0, 1.0, 0.0])
        est = unbiased_risk(raw, pcr)
        assert est.value == pytest.approx(pcr.values[1])
        np.testing.assert_array_equal(est.gradient, pcr.gradients[1])

    def test_negative_weight_combination(self):
        from olshift.model import PerClassRisks

        pcr = PerClassRisks(np.array([1.0, 2.0]), np.zeros((2, 2, 3)))
        est = unbiased_risk(RawPriorEstimate([1.2, -0.2]), pcr)
        assert est.value == pytest.approx(0.8)

    def test_linear_identity_invariant(self):
        rng = np.random.default_rng(7)
        pcr, _, _ = self._pcr(rng)
        raw = RawPriorEstimate(rng.normal(0, 1, 3) + np.array([1, 0, 0]))
        est = unbiased_risk(raw, pcr)
        assert est.value == pytest.approx(float(raw.entries @ pcr.values), abs=1e-10)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        _, provider, w = self._pcr(rng)
        raw = RawPriorEstimate([0.8, 0.5, -0.3])

        def value_at(m):
            return float(raw.entries @ provider.values(m))

        est = unbiased_risk(raw, provider.evaluate(ModelParams(w.weights)))
        fd = finite_difference_gradient(value_at, w.weights, h=1e-5)
        rel = np.abs(est.gradient - fd).max() / max(1.0, np.abs(fd).max())
        assert rel < 1e-5

    def test_k_mismatch(self):
        from olshift.model import PerClassRisks

        pcr = PerClassRisks(np.array([1.0, 2.0]), np.zeros((2, 2, 3)))
        with pytest.raises(InvalidInputError):
            unbiased_risk(RawPriorEstimate([1.0, 0.0, 0.0]), pcr)


class TestConfusionValidation:
    def test_rejects_bad_column_sums(self):
        with pytest.raises(InvalidInputError):
            ConfusionMatrix(np.array([[0.9, 0.1], [0.3, 0.9]]))

    def test_degenerate_solve_raises(self):
        c = ConfusionMatrix(np.full((2, 2), 0.5))
        with pytest.raises(DegenerateConfusionError):
            estimate_prior(c, PriorVector([0.6, 0.4]))
