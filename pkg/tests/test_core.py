"""Core types, simplex projection, and variation accounting."""

import numpy as np
import pytest

from olshift.core import (
    InvalidInputError,
    LabeledDataset,
    LabeledSample,
    OnlineBatch,
    PriorVector,
    RawPriorEstimate,
    ShiftTrace,
    l1_variation,
    simplex_project,
)
from olshift.shiftsim import ShiftSchedule, trace_of
from olshift.verify import brute_force_simplex_projection


class TestPriorVector:
    def test_renormalizes_small_drift(self):
        p = PriorVector([0.5 + 3e-7, 0.5])
        assert abs(p.entries.sum() - 1.0) < 1e-15

    def test_rejects_large_drift(self):
        with pytest.raises(InvalidInputError):
            PriorVector([0.5, 0.6])

    def test_rejects_negative_entries(self):
        with pytest.raises(InvalidInputError):
            PriorVector([-0.1, 1.1])

    def test_requires_k_at_least_two(self):
        with pytest.raises(InvalidInputError):
            PriorVector([1.0])

    def test_entries_are_read_only(self):
        p = PriorVector([0.25, 0.75])
        with pytest.raises(ValueError):
            p.entries[0] = 0.5

    def test_point_mass(self):
        assert PriorVector.point_mass(2, 3).entries.tolist() == [0.0, 1.0, 0.0]


class TestRawPriorEstimate:
    def test_allows_negative_entries(self):
        raw = RawPriorEstimate([1.2, -0.2])
        assert raw.entries[1] == -0.2

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            RawPriorEstimate([np.inf, 0.0])

    def test_projected_lands_on_simplex(self):
        p = RawPriorEstimate([1.2, -0.2]).projected()
        np.testing.assert_allclose(p.entries, [1.0, 0.0])


class TestSimplexProject:
    def test_already_in_simplex(self):
        np.testing.assert_allclose(
            simplex_project([0.5, 0.5]).entries, [0.5, 0.5]
        )

    def test_negative_entry_clipped(self):
        np.testing.assert_allclose(simplex_project([-0.2, 1.2]).entries, [0.0, 1.0])

    def test_sorted_threshold_case(self):
        np.testing.assert_allclose(simplex_project([2.0, 0.0]).entries, [1.0, 0.0])

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            simplex_project([np.nan, 0.5])

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            v = rng.normal(0, 3, size=rng.integers(2, 6))
            once = simplex_project(v).entries
            twice = simplex_project(once).entries
            np.testing.assert_allclose(twice, once, atol=1e-12)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            k = int(rng.integers(2, 6))
            v = rng.normal(0, 10.0 ** rng.uniform(-2, 2), size=k)
            fast = simplex_project(v).entries
            slow = brute_force_simplex_projection(v)
            np.testing.assert_allclose(fast, slow, atol=1e-8)


class TestL1Variation:
    def test_constant_sequence_is_zero(self):
        p = PriorVector([0.2, 0.8])
        assert l1_variation([p] * 7) == 0.0

    def test_disjoint_supports(self):
        assert l1_variation([PriorVector([1, 0]), PriorVector([0, 1])]) == 2.0

    def test_square_schedule_enumeration(self):
        # 500 half-periods of length 20 -> 499 switches, each contributing 2
        sched = ShiftSchedule(
            "squ", PriorVector([1, 0]), PriorVector([0, 1]), 10000, period=40
        )
        trace = trace_of(sched)
        assert trace.variation == pytest.approx(998.0)

    def test_reversal_invariance(self):
        rng = np.random.default_rng(2)
        priors = [simplex_project(rng.normal(0, 1, 3)) for _ in range(50)]
        assert l1_variation(priors) == pytest.approx(l1_variation(priors[::-1]))

    def test_mismatched_k_rejected(self):
        with pytest.raises(InvalidInputError):
            l1_variation([PriorVector([1, 0]), PriorVector([0.5, 0.25, 0.25])])

    def test_single_prior_is_zero(self):
        assert l1_variation([PriorVector([0.3, 0.7])]) == 0.0

    def test_bounded_by_two_per_step(self):
        rng = np.random.default_rng(3)
        priors = [simplex_project(rng.normal(0, 2, 4)) for _ in range(30)]
        assert 0.0 <= l1_variation(priors) <= 2.0 * (len(priors) - 1)


class TestDatasets:
    def test_sample_round_trip(self):
        ds = LabeledDataset(np.array([[0.0, 1.0], [2.0, 3.0]]), np.array([1, 2]))
        back = LabeledDataset.from_samples(list(ds.samples()))
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_labels_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            LabeledDataset(np.zeros((2, 2)), np.array([0, 1]))

    def test_sample_label_validation(self):
        with pytest.raises(InvalidInputError):
            LabeledSample(np.array([1.0]), 0)

    def test_empirical_prior(self):
        ds = LabeledDataset(np.zeros((4, 1)), np.array([1, 1, 2, 2]))
        np.testing.assert_allclose(ds.empirical_prior().entries, [0.5, 0.5])

    def test_batch_requires_samples(self):
        with pytest.raises(InvalidInputError):
            OnlineBatch(np.zeros((0, 2)), np.array([], dtype=int))


class TestShiftTrace:
    def test_variation_computed_on_construction(self):
        trace = ShiftTrace((PriorVector([1, 0]), PriorVector([0, 1])))
        assert trace.variation == 2.0
        assert len(trace) == 2
