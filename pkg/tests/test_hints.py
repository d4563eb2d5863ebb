"""Hint-prior constructors and the induced hint function."""

import numpy as np
import pytest

from olshift.core import LabeledDataset, PriorVector, RawPriorEstimate
from olshift.hints import (
    HintFunction,
    HintProvider,
    PeriodicBuffer,
    PrototypeBank,
    cap_hint_prior,
    forward_hint,
    hint_eval,
    okm_hint,
    periodic_hint,
    window_hint,
)
from olshift.model import ModelParams, PerClassRiskProvider
from olshift.verify import finite_difference_gradient


@pytest.fixture
def provider():
    rng = np.random.default_rng(0)
    feats = rng.normal(0, 1, (24, 2))
    labels = np.concatenate([np.arange(1, 4), rng.integers(1, 4, 21)])
    return PerClassRiskProvider(LabeledDataset(feats, labels))


class TestForwardHint:
    def test_identity(self):
        raw = RawPriorEstimate([0.3, 0.7])
        np.testing.assert_array_equal(forward_hint(raw), [0.3, 0.7])

    def test_negative_entries_pass_through(self):
        raw = RawPriorEstimate([1.2, -0.2])
        np.testing.assert_array_equal(forward_hint(raw), [1.2, -0.2])

    def test_pure(self):
        raw = RawPriorEstimate([0.4, 0.6])
        np.testing.assert_array_equal(forward_hint(raw), forward_hint(raw))


class TestWindowHint:
    def test_mean_of_window(self):
        hist = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        np.testing.assert_allclose(
            window_hint(hist, 2, PriorVector([0.5, 0.5])), [0.5, 0.5]
        )

    def test_window_wider_than_history(self):
        hist = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 0.0])]
        np.testing.assert_allclose(
            window_hint(hist, 10, PriorVector([0.5, 0.5])), [2 / 3, 1 / 3]
        )

    def test_empty_history_offline_prior(self):
        np.testing.assert_array_equal(
            window_hint([], 5, PriorVector([0.2, 0.8])), [0.2, 0.8]
        )


class TestPeriodicHint:
    def test_full_mix_overwrites_slot(self):
        buf = PeriodicBuffer.initialized(3, PriorVector([0.5, 0.5]), mix=1.0)
        buf, hint = periodic_hint(buf, np.array([0.9, 0.1]), t=4)
        np.testing.assert_array_equal(hint, [0.9, 0.1])
        np.testing.assert_array_equal(buf.slots[1], [0.9, 0.1])

    def test_zero_mix_keeps_slot(self):
        buf = PeriodicBuffer.initialized(2, PriorVector([0.5, 0.5]), mix=0.0)
        buf, hint = periodic_hint(buf, np.array([1.0, 0.0]), t=1)
        np.testing.assert_array_equal(hint, [0.5, 0.5])

    def test_half_mix(self):
        buf = PeriodicBuffer.initialized(1, PriorVector([1.0, 0.0]), mix=0.5)
        buf, hint = periodic_hint(buf, np.array([0.0, 1.0]), t=1)
        np.testing.assert_allclose(hint, [0.5, 0.5])

    def test_running_average_default(self):
        buf = PeriodicBuffer.initialized(1, PriorVector([0.5, 0.5]))
        buf, h1 = periodic_hint(buf, np.array([1.0, 0.0]), t=1)
        np.testing.assert_array_equal(h1, [1.0, 0.0])  # first update overwrites
        buf, h2 = periodic_hint(buf, np.array([0.0, 1.0]), t=2)
        np.testing.assert_allclose(h2, [0.5, 0.5])

    def test_other_slots_untouched(self):
        buf = PeriodicBuffer.initialized(4, PriorVector([0.5, 0.5]), mix=1.0)
        buf, _ = periodic_hint(buf, np.array([1.0, 0.0]), t=2)
        for i in (0, 1, 3):
            np.testing.assert_array_equal(buf.slots[i], [0.5, 0.5])


class TestOkmHint:
    def test_single_prototype_always_selected(self):
        bank = PrototypeBank.initialized(1, PriorVector([0.5, 0.5]), mix=0.5)
        feats = np.array([[0.0], [2.0]])
        bank, _ = okm_hint(bank, feats, np.array([1.0, 0.0]))
        bank, hint = okm_hint(bank, feats + 10.0, np.array([0.0, 1.0]))
        assert bank.active == 1

    def test_full_mix_overwrites(self):
        bank = PrototypeBank.initialized(1, PriorVector([0.5, 0.5]), mix=1.0)
        feats = np.array([[1.0], [3.0]])
        bank, hint = okm_hint(bank, feats, np.array([0.9, 0.1]))
        np.testing.assert_array_equal(hint, [0.9, 0.1])
        np.testing.assert_array_equal(bank.means[0], [2.0])

    def test_nearest_prototype_selected(self):
        bank = PrototypeBank.initialized(2, PriorVector([0.5, 0.5]), mix=1.0)
        bank, _ = okm_hint(bank, np.array([[0.0]]), np.array([1.0, 0.0]))
        bank, _ = okm_hint(bank, np.array([[10.0]]), np.array([0.0, 1.0]))
        # batch mean 1 is closer to the prototype at 0
        bank, hint = okm_hint(bank, np.array([[1.0]]), np.array([0.7, 0.3]))
        np.testing.assert_array_equal(hint, [0.7, 0.3])
        np.testing.assert_array_equal(bank.means[0], [1.0])
        np.testing.assert_array_equal(bank.means[1], [10.0])


class TestHintEval:
    def test_point_mass_selects_class(self, provider):
        w = ModelParams(np.random.default_rng(1).normal(0, 1, (3, 3)))
        pcr = provider.evaluate(w)
        val, grad = hint_eval(np.array([0.0, 1.0, 0.0]), pcr)
        assert val == pytest.approx(pcr.values[1])
        np.testing.assert_array_equal(grad, pcr.gradients[1])

    def test_zero_hint_is_zero(self, provider):
        pcr = provider.evaluate(ModelParams.zeros(3, 2))
        val, grad = hint_eval(np.zeros(3), pcr)
        assert val == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_gradient_matches_finite_differences(self, provider):
        rng = np.random.default_rng(2)
        h = rng.normal(0, 1, 3)
        w = rng.normal(0, 1, (3, 3))
        _, grad = hint_eval(h, provider.evaluate(ModelParams(w)))
        fd = finite_difference_gradient(
            lambda m: float(h @ provider.values(m)), w, h=1e-5
        )
        rel = np.abs(grad - fd).max() / max(1.0, np.abs(fd).max())
        assert rel < 1e-5


class TestCap:
    def test_small_priors_untouched(self):
        h = np.array([0.4, 0.4])
        np.testing.assert_array_equal(cap_hint_prior(h, sigma=1.0), h)

    def test_large_priors_rescaled_to_budget(self):
        h = np.array([3.0, -1.0])
        capped = cap_hint_prior(h, sigma=0.5)
        assert np.abs(capped).sum() == pytest.approx(1 / 0.5)
        np.testing.assert_allclose(capped / np.abs(capped).sum(), h / np.abs(h).sum())

    def test_capped_gradient_bound(self, provider):
        # after capping, ||grad H|| <= G sqrt(K) / sigma with G the sample max
        rng = np.random.default_rng(3)
        sigma = 0.7
        k = 3
        for _ in range(20):
            h = cap_hint_prior(rng.normal(0, 3, k), sigma)
            w = rng.normal(0, 1, (3, 3))
            hint = HintFunction(h, provider)
            _, grad = hint.value_and_gradient(w)
            vals, grads = provider.values_and_gradients(w)
            per_class_max = max(np.linalg.norm(g) for g in grads)
            assert np.linalg.norm(grad) <= per_class_max * np.sqrt(k) / sigma + 1e-9


class TestHintProvider:
    def test_kind_validation(self):
        with pytest.raises(Exception):
            HintProvider("banana", PriorVector([0.5, 0.5]))

    def test_forward_is_transductive_others_not(self):
        off = PriorVector([0.5, 0.5])
        assert HintProvider("forward", off).transductive
        for kind in ("none", "window", "periodic", "okm"):
            assert not HintProvider(kind, off).transductive

    def test_pre_batch_hints_use_only_past_rounds(self):
        off = PriorVector([0.5, 0.5])
        prov = HintProvider("window", off, window=2)
        np.testing.assert_array_equal(prov.prior_for_round(1), off.entries)
        prov.observe(1, np.zeros((1, 1)), RawPriorEstimate([1.0, 0.0]))
        np.testing.assert_array_equal(prov.prior_for_round(2), [1.0, 0.0])

    def test_periodic_slot_alignment(self):
        off = PriorVector([0.5, 0.5])
        prov = HintProvider("periodic", off, period=2)
        prov.observe(1, np.zeros((1, 1)), RawPriorEstimate([1.0, 0.0]))
        prov.observe(2, np.zeros((1, 1)), RawPriorEstimate([0.0, 1.0]))
        # round 3 shares phase with round 1
        np.testing.assert_array_equal(prov.prior_for_round(3), [1.0, 0.0])
        np.testing.assert_array_equal(prov.prior_for_round(4), [0.0, 1.0])

    def test_forward_returns_none_pre_batch(self):
        prov = HintProvider("forward", PriorVector([0.5, 0.5]))
        assert prov.prior_for_round(1) is None
        raw = RawPriorEstimate([0.8, 0.2])
        np.testing.assert_array_equal(prov.transductive_prior(raw), [0.8, 0.2])


class TestBiasVarianceSpotCheck:
    def test_gradient_deviation_bounded_by_prior_deviation(self, provider):
        # sum_t ||grad Rhat - grad H||^2 <= K G^2 sum_t ||h - mu_hat||^2
        rng = np.random.default_rng(4)
        k = 3
        lhs = rhs = 0.0
        grad_bound = 0.0
        # per-sample gradient bound over a probe set stands in for G
        for _ in range(50):
            w = rng.normal(0, 1, (3, 3))
            _, grads = provider.values_and_gradients(w)
            grad_bound = max(grad_bound, max(np.linalg.norm(g) for g in grads))
        for _ in range(40):
            w = rng.normal(0, 1, (3, 3))
            raw = rng.normal(0, 0.5, k) + np.array([1, 0, 0])
            h = raw + rng.normal(0, 0.2, k)
            _, grads = provider.values_and_gradients(w)
            diff = np.einsum("k,kpd->pd", raw - h, grads)
            lhs += float((diff * diff).sum())
            rhs += k * grad_bound**2 * float(((h - raw) ** 2).sum())
        assert lhs <= rhs + 1e-6
