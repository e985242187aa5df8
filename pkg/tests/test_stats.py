"""Tests for the permutation test, fixed histograms, and the dip statistic."""

import numpy as np
import pytest

from cdsnet.stats import dip_pvalue, dip_statistic, fixed_histogram, permutation_pvalue


class TestPermutation:
    def test_clearly_smaller_mean(self):
        rng = np.random.default_rng(0)
        a = rng.normal(0.0, 1.0, size=100)
        b = rng.normal(3.0, 1.0, size=100)
        assert permutation_pvalue(a, b) < 0.01

    def test_identical_samples_null(self):
        rng = np.random.default_rng(1)
        a = rng.normal(0.0, 1.0, size=100)
        b = rng.normal(0.0, 1.0, size=100)
        assert permutation_pvalue(a, b) > 0.05

    def test_wrong_direction_large_pvalue(self):
        rng = np.random.default_rng(2)
        a = rng.normal(3.0, 1.0, size=50)
        b = rng.normal(0.0, 1.0, size=50)
        assert permutation_pvalue(a, b) > 0.5

    def test_deterministic(self):
        a = np.arange(10.0)
        b = np.arange(10.0) + 1.0
        assert permutation_pvalue(a, b) == permutation_pvalue(a, b)

    def test_bounds(self):
        p = permutation_pvalue([1.0, 2.0], [3.0, 4.0], n_perm=100)
        assert 0 < p <= 1


class TestHistogram:
    def test_mass_conserved(self):
        values = np.array([0.0, 1.0, 2.5, 7.0, 100.0])  # 100 lies above hi
        edges, counts = fixed_histogram(values, 0.0, 10.0, 5)
        assert counts.sum() == len(values)
        assert len(edges) == 6

    def test_overflow_lands_in_last_bin(self):
        edges, counts = fixed_histogram([50.0], 0.0, 10.0, 5)
        assert counts[-1] == 1

    def test_degenerate_range(self):
        edges, counts = fixed_histogram([1.0, 1.0], 1.0, 1.0, 4)
        assert counts.sum() == 2


class TestDip:
    def test_uniform_sample_small_dip(self):
        rng = np.random.default_rng(0)
        d = dip_statistic(rng.uniform(size=500))
        assert 0 <= d < 0.03

    def test_bimodal_sample_larger_dip(self):
        rng = np.random.default_rng(0)
        bimodal = np.concatenate([
            rng.normal(0.0, 0.3, size=250), rng.normal(5.0, 0.3, size=250)
        ])
        uni = rng.normal(0.0, 1.0, size=500)
        assert dip_statistic(bimodal) > 3 * dip_statistic(uni)

    def test_degenerate_inputs(self):
        assert dip_statistic([]) == 0.0
        assert dip_statistic([1.0, 1.0, 1.0, 1.0, 1.0]) == 0.0
        assert dip_statistic([1.0, 2.0]) == 0.0

    def test_pvalue_flags_bimodal(self):
        rng = np.random.default_rng(3)
        bimodal = np.concatenate([
            rng.normal(0.0, 0.2, size=60), rng.normal(5.0, 0.2, size=60)
        ])
        assert dip_pvalue(bimodal, n_boot=60) < 0.05

    def test_pvalue_accepts_unimodal(self):
        rng = np.random.default_rng(4)
        assert dip_pvalue(rng.uniform(size=120), n_boot=60) > 0.05
