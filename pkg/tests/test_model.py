import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xgap.model import (
    LogitProfile,
    TargetMixture,
    categories_from_logits,
    normal_cdf,
    sample_categories,
    sample_source,
    sample_target,
    sample_target_categories,
    softmax,
    substream,
)

finite = st.floats(-50, 50, allow_nan=False)


class TestSoftmax:
    def test_two_logits_hand_value(self):
        # e^2 / (e^2 + 1)
        e2 = math.exp(2.0)
        np.testing.assert_allclose(softmax([2.0, 0.0]), [e2 / (e2 + 1), 1 / (e2 + 1)], rtol=1e-15)

    def test_uniform(self):
        np.testing.assert_allclose(softmax(np.zeros(4)), np.full(4, 0.25))

    def test_large_logits_do_not_overflow(self):
        p = softmax([1000.0, 999.0])
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p[0], 1 / (1 + math.exp(-1)), rtol=1e-12)

    def test_rejects_empty_and_nan(self):
        with pytest.raises(ValueError):
            softmax([])
        with pytest.raises(ValueError):
            softmax([0.0, float("nan")])

    @given(st.lists(finite, min_size=2, max_size=12), finite)
    def test_shift_invariant_and_normalized(self, v, c):
        p = softmax(v)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(softmax(np.array(v) + c), p, atol=1e-12)

    def test_matches_mpmath(self):
        v = [3.5, -1.25, 0.0, 7.0]
        exps = [mpmath.e ** mpmath.mpf(x) for x in v]
        ref = [float(e / sum(exps)) for e in exps]
        np.testing.assert_allclose(softmax(v), ref, rtol=1e-14)


class TestNormalCdf:
    def test_zero(self):
        assert normal_cdf(0.0) == 0.5

    @pytest.mark.parametrize("x", [-8.0, -3.0, -0.5, 0.8165, 1.0, 2.5, 6.0])
    def test_against_mpmath(self, x):
        assert normal_cdf(x) == pytest.approx(float(mpmath.ncdf(x)), rel=1e-13)

    def test_reference_point(self):
        # gap 2, sigma 1, prop-1 surrogate: 2 / sqrt(2 * 3)
        assert normal_cdf(2 / math.sqrt(6)) == pytest.approx(0.7929, abs=1e-4)

    @given(st.floats(-30, 30))
    def test_symmetry(self, x):
        assert normal_cdf(x) + normal_cdf(-x) == pytest.approx(1.0, abs=1e-15)


class TestProfiles:
    def test_with_top_gap(self):
        p = LogitProfile.with_top_gap(4, 2.0, 1.0, mode=2)
        assert p.mu == (0.0, 0.0, 2.0, 0.0)
        assert p.mode == 2 and p.top_gap == 2.0 and p.m == 4

    def test_top_two_values(self):
        p = LogitProfile((1.0, 3.0, 2.5))
        assert (p.mu0, p.mu1) == (3.0, 2.5)
        assert p.top_gap == pytest.approx(0.5)

    @pytest.mark.parametrize("mu, sigma", [((1.0,), 0.0), ((0.0, float("inf")), 0.0), ((0.0, 1.0), -1.0)])
    def test_invalid(self, mu, sigma):
        with pytest.raises(ValueError):
            LogitProfile(mu, sigma)

    def test_mixture_validation(self):
        src = LogitProfile((1.0, 0.0), 1.0)
        for kw in ({"pi": 1.5}, {"tau": 0.5}, {"eta": 0.9}, {"bias_mu": (1.0, 0.0, 0.0)}):
            with pytest.raises(ValueError):
                TargetMixture(src, **kw)

    def test_knowledge_barrier_needs_distinct_mode(self):
        src = LogitProfile((1.0, 0.0), 1.0)
        with pytest.raises(ValueError):
            TargetMixture.knowledge_barrier(src, (2.0, 0.0), 1.0)
        mix = TargetMixture.knowledge_barrier(src, (0.0, 2.0), 1.0)
        assert mix.pi == 0.0 and mix.bias_profile.mode == 1

    def test_variance_profile(self):
        mix = TargetMixture(LogitProfile((2.0, 0.0), 1.0), tau=2.0, eta=4.0)
        assert mix.variance_profile.mu == (1.0, 0.0)
        assert mix.variance_profile.sigma == pytest.approx(2.0)


class TestSampling:
    def test_deterministic_logits_follow_softmax(self):
        p = LogitProfile((2.0, 0.0, -1.0))
        n = 200_000
        for method in ("categorical", "gumbel"):
            cats = sample_categories(p, substream(1, 0), n, method)
            freq = np.bincount(cats, minlength=3) / n
            se = np.sqrt(softmax(p.mu) * (1 - softmax(p.mu)) / n)
            assert np.all(np.abs(freq - softmax(p.mu)) < 5 * se), method

    def test_gumbel_matches_categorical(self):
        p = LogitProfile((1.0, 0.5, 0.0, 0.0), 1.5)
        n = 200_000
        a = np.bincount(sample_categories(p, substream(2, 0), n, "categorical"), minlength=4) / n
        b = np.bincount(sample_categories(p, substream(2, 1), n, "gumbel"), minlength=4) / n
        se = np.sqrt(2 * a * (1 - a) / n)
        assert np.all(np.abs(a - b) < 5 * se)

    def test_infinite_gap_is_deterministic(self):
        z = np.array([[40.0, 0.0, 0.0]] * 100)
        for method in ("categorical", "gumbel"):
            assert np.all(categories_from_logits(z, substream(0), method) == 0)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            sample_categories(LogitProfile((1.0, 0.0)), substream(0), 10, "inverse")

    def test_kappa_routes_components(self):
        src = LogitProfile((30.0, 0.0, 0.0))
        mix = TargetMixture(src, pi=0.3, bias_mu=(0.0, 0.0, 30.0))
        cats, kappa = sample_target_categories(mix, substream(3), 20_000)
        assert np.all(cats[kappa] == 0) and np.all(cats[~kappa] == 2)
        assert kappa.mean() == pytest.approx(0.3, abs=0.02)

    def test_single_draws(self):
        rng = substream(4)
        d = sample_source(LogitProfile((1.0, 0.0), 1.0), rng, diagnostics=True)
        assert d.kappa is None and len(d.logits) == 2
        t = sample_target(TargetMixture(LogitProfile((1.0, 0.0), 1.0), pi=1.0), rng)
        assert t.kappa is True and t.logits is None

    def test_substreams_reproducible_and_distinct(self):
        a = substream(7, 1, 2).random(5)
        np.testing.assert_array_equal(a, substream(7, 1, 2).random(5))
        assert not np.allclose(a, substream(7, 2, 1).random(5))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 6), st.floats(0, 3), st.integers(0, 2**32))
    def test_categories_in_range(self, m, sigma, seed):
        p = LogitProfile.with_top_gap(m, 1.0, sigma)
        cats = sample_categories(p, substream(seed), 50, "gumbel")
        assert cats.min() >= 0 and cats.max() < m
