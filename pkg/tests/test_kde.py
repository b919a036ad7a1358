"""KDE marginal tests: bandwidth rule, density/CDF shape, PIT property."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from copulafuse.kde import (
    KdeModel,
    kde_cdf,
    kde_log_pdf,
    kde_pdf,
    kde_transform,
    kde_from_dict,
    kde_to_dict,
    silverman_bandwidth,
)


class TestSilvermanBandwidth:
    def test_standard_normal_draws(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(10_000)
        # oracle: the rule evaluated directly on the drawn sample
        sigma = np.std(x)
        q75, q25 = np.percentile(x, [75, 25])
        oracle = 0.9 * min(sigma, (q75 - q25) / 1.34) * x.size ** (-0.2)
        h = silverman_bandwidth(x)
        assert h == pytest.approx(oracle, rel=1e-12)
        assert abs(h - 0.9 * 10_000 ** (-0.2)) < 0.01

    @given(st.floats(min_value=0.1, max_value=100.0))
    @settings(max_examples=25, deadline=None)
    def test_scale_homogeneity(self, c):
        rng = np.random.default_rng(3)
        x = rng.uniform(0.0, 1.0, 500)
        assert silverman_bandwidth(c * x) == pytest.approx(c * silverman_bandwidth(x), rel=1e-9)

    def test_two_samples(self):
        h = silverman_bandwidth(np.array([0.0, 1.0]))
        assert h > 0.0 and math.isfinite(h)

    def test_degenerate_falls_back(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            h = silverman_bandwidth(np.array([0.7, 0.7, 0.7]))
        assert h == 1e-3
        assert any("degenerate" in str(w.message) for w in caught)

    def test_single_sample_rejected(self):
        with pytest.raises(ValueError):
            silverman_bandwidth(np.array([1.0]))


class TestKdePdf:
    def test_single_kernel_at_center(self):
        model = KdeModel(samples=np.array([0.0]), bandwidth=1.0)
        assert kde_pdf(model, 0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi), abs=1e-9)
        assert kde_pdf(model, 0.0) == pytest.approx(0.398942, abs=1e-6)

    def test_duplicate_samples_average(self):
        model = KdeModel(samples=np.array([0.0, 0.0]), bandwidth=1.0)
        assert kde_pdf(model, 0.0) == pytest.approx(0.398942, abs=1e-6)

    def test_tails_vanish(self):
        model = KdeModel.fit(np.array([0.1, 0.4, 0.9]), bandwidth=0.05)
        assert kde_pdf(model, 1e6) == 0.0
        assert kde_pdf(model, -1e6) == 0.0

    def test_bounded_by_peak(self):
        rng = np.random.default_rng(1)
        model = KdeModel.fit(rng.uniform(0, 1, 200))
        x = np.linspace(-0.5, 1.5, 400)
        peak = 1.0 / (model.bandwidth * math.sqrt(2 * math.pi))
        assert np.all(kde_pdf(model, x) <= peak + 1e-12)

    def test_symmetric_in_samples(self):
        a = KdeModel.fit(np.array([0.2, 0.8]), bandwidth=0.1)
        b = KdeModel.fit(np.array([0.8, 0.2]), bandwidth=0.1)
        x = np.linspace(0, 1, 50)
        assert_allclose(kde_pdf(a, x), kde_pdf(b, x))


class TestKdeCdf:
    def test_limits(self):
        model = KdeModel.fit(np.array([0.2, 0.5, 0.9]), bandwidth=0.1)
        assert kde_cdf(model, -1e6) < 1e-9
        assert kde_cdf(model, 1e6) > 1.0 - 1e-9

    def test_single_sample_median(self):
        model = KdeModel(samples=np.array([0.0]), bandwidth=1.0)
        assert kde_cdf(model, 0.0) == pytest.approx(0.5, abs=1e-12)

    def test_midpoint_symmetry(self):
        model = KdeModel(samples=np.array([0.0, 1.0]), bandwidth=0.1)
        assert kde_cdf(model, 0.5) == pytest.approx(0.5, abs=1e-12)

    def test_monotone(self):
        rng = np.random.default_rng(2)
        model = KdeModel.fit(rng.uniform(0, 1, 300))
        x = np.linspace(-0.2, 1.2, 500)
        assert np.all(np.diff(kde_cdf(model, x)) >= 0.0)


class TestConsistency:
    def test_cdf_derivative_matches_pdf(self):
        rng = np.random.default_rng(4)
        model = KdeModel.fit(rng.uniform(0, 1, 400))
        x = rng.uniform(0.05, 0.95, 100)
        eps = 1e-5
        numeric = (kde_cdf(model, x + eps) - kde_cdf(model, x - eps)) / (2 * eps)
        assert_allclose(numeric, kde_pdf(model, x), atol=1e-6)

    def test_pdf_integrates_to_one(self):
        rng = np.random.default_rng(5)
        model = KdeModel.fit(rng.uniform(0, 1, 250))
        h = model.bandwidth
        lo, hi = model.samples.min() - 6 * h, model.samples.max() + 6 * h
        x = np.linspace(lo, hi, 20_001)
        mass = np.trapezoid(kde_pdf(model, x), x)
        assert abs(mass - 1.0) < 1e-3

    def test_probability_integral_transform(self):
        rng = np.random.default_rng(6)
        draws = rng.normal(0.5, 0.15, 10_000)
        model = KdeModel.fit(draws)
        u = np.sort(kde_cdf(model, draws))
        grid = (np.arange(u.size) + 1) / u.size
        ks = np.max(np.abs(u - grid))
        assert ks < 0.05

    def test_log_pdf_matches_pdf(self):
        rng = np.random.default_rng(7)
        model = KdeModel.fit(rng.uniform(0, 1, 300))
        x = rng.uniform(-0.1, 1.1, 200)
        assert_allclose(np.exp(kde_log_pdf(model, x)), kde_pdf(model, x), rtol=1e-10)

    def test_log_pdf_finite_in_deep_tail(self):
        model = KdeModel.fit(np.array([0.4, 0.5, 0.6]), bandwidth=0.01)
        val = kde_log_pdf(model, np.array([5.0]))[0]
        assert math.isfinite(val) and val < -1000

    def test_transform_matches_separate_calls(self):
        rng = np.random.default_rng(8)
        model = KdeModel.fit(rng.beta(4, 2, 500))
        x = rng.uniform(0, 1, 333)
        cdf, logpdf = kde_transform(model, x)
        assert_allclose(cdf, kde_cdf(model, x), rtol=0, atol=0)
        assert_allclose(logpdf, kde_log_pdf(model, x), rtol=0, atol=0)


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(9)
        model = KdeModel.fit(rng.uniform(0, 1, 50))
        clone = kde_from_dict(kde_to_dict(model))
        assert clone.bandwidth == model.bandwidth
        assert_allclose(clone.samples, model.samples)

    def test_q16_round_trip(self):
        rng = np.random.default_rng(10)
        model = KdeModel.fit(rng.uniform(0, 1, 50))
        obj = kde_to_dict(model, q16=True)
        assert obj["encoding"] == "q16"
        clone = kde_from_dict(obj)
        assert np.max(np.abs(clone.samples - model.samples)) <= 0.5 / 65535.0 + 1e-12
