"""Matrix-based Renyi entropy: values, bounds, invariances and gradients."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gib import autodiff as ad
from gib.renyi import (KernelConfig, entropy_term, gram_gaussian, independent_entropy,
                       median_bandwidth, renyi_entropy, renyi_entropy_grad)

CFG = KernelConfig()


def entropy_from_spectrum(lam, alpha):
    lam = np.asarray(lam)
    return math.log2(np.sum(lam ** alpha)) / (1 - alpha)


class TestGram:
    def test_unit_diagonal(self):
        z = np.random.default_rng(0).standard_normal((7, 3))
        np.testing.assert_array_equal(np.diag(gram_gaussian(z, 0.7)), 1.0)

    def test_identical_rows(self):
        np.testing.assert_array_equal(gram_gaussian(np.ones((5, 2)), 1.0), np.ones((5, 5)))

    def test_large_bandwidth(self):
        z = np.random.default_rng(1).uniform(-1, 1, (10, 3))
        assert np.max(np.abs(gram_gaussian(z, 1e6) - 1.0)) <= 1e-6

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_bad_sigma(self, sigma):
        with pytest.raises(ValueError):
            gram_gaussian(np.zeros((2, 1)), sigma)


class TestEntropyValues:
    def test_identical_samples_zero(self):
        assert renyi_entropy(np.full((16, 4), 2.5), CFG).H_bits == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("alpha", [0.5, 1.01, 2.0, 5.0])
    def test_uniform_spectrum(self, alpha):
        # far-apart points with a tiny bandwidth give A = I/n
        z = np.arange(32, dtype=float).reshape(-1, 1) * 100.0
        est = renyi_entropy(z, KernelConfig(alpha=alpha, bandwidth="fixed", sigma=1.0))
        assert est.H_bits == pytest.approx(5.0, abs=1e-9)

    def test_two_point_spectrum(self):
        assert entropy_from_spectrum([0.5, 0.5], 2.0) == pytest.approx(1.0)
        z = np.array([[0.0], [1e3]])
        est = renyi_entropy(z, KernelConfig(alpha=2.0, bandwidth="fixed", sigma=1.0))
        np.testing.assert_allclose(est.eigenvalues, [0.5, 0.5], atol=1e-12)
        assert est.H_bits == pytest.approx(1.0, abs=1e-12)

    def test_matches_spectrum_formula(self):
        z = np.random.default_rng(2).standard_normal((12, 3))
        est = renyi_entropy(z, CFG)
        assert est.H_bits == pytest.approx(entropy_from_spectrum(np.linalg.eigvalsh(est.A).clip(0), 1.01), abs=1e-9)
        assert np.trace(est.A) == pytest.approx(1.0)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            renyi_entropy(np.zeros((1, 3)), CFG)

    def test_von_neumann_limit(self):
        z = np.random.default_rng(3).standard_normal((20, 4))
        lam = renyi_entropy(z, CFG).eigenvalues
        lam = lam[lam > 0]
        shannon = float(-np.sum(lam * np.log2(lam)))
        sigma = median_bandwidth(z)
        for alpha in (1 - 1e-3, 1 + 1e-3):
            h = renyi_entropy(z, KernelConfig(alpha=alpha), sigma=sigma).H_bits
            assert abs(h - shannon) <= 1e-2

    def test_clamping_is_reported_for_alpha_below_one(self):
        est = renyi_entropy(np.ones((6, 2)), KernelConfig(alpha=0.5))
        assert est.n_clamped == 5
        # five clamped eigenvalues of 1e-12 each contribute (1e-12)^0.5
        assert est.H_bits == pytest.approx(2 * math.log2(1 + 5e-6), rel=1e-6)

    def test_clamping_negligible_when_well_conditioned(self):
        z = np.random.default_rng(4).standard_normal((10, 3)) * 5
        cfg = KernelConfig(alpha=0.5)
        est = renyi_entropy(z, cfg)
        assert est.eigenvalues.min() > 1e-8 and est.n_clamped == 0
        assert est.H_bits == pytest.approx(entropy_from_spectrum(est.eigenvalues, 0.5), abs=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 24), st.integers(1, 4)),
                  elements=st.floats(-50, 50)))
    def test_bounds(self, z):
        h = renyi_entropy(z, CFG).H_bits
        assert -1e-9 <= h <= math.log2(z.shape[0]) + 1e-9

    def test_permutation_and_translation_invariance(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal((15, 3))
        h = renyi_entropy(z, CFG).H_bits
        assert renyi_entropy(z[rng.permutation(15)], CFG).H_bits == pytest.approx(h, abs=1e-10)
        assert renyi_entropy(z + np.array([3.0, -7.0, 1e2]), CFG).H_bits == pytest.approx(h, abs=1e-10)


class TestBandwidth:
    def test_two_points(self):
        assert median_bandwidth(np.array([[0.0, 0.0], [3.0, 0.0]])) == pytest.approx(3.0)

    def test_floor(self):
        assert median_bandwidth(np.zeros((5, 2))) == 1e-6

    def test_sort_oracle(self):
        z = np.random.default_rng(6).standard_normal((100, 4))
        d = sorted(np.linalg.norm(z[i] - z[j]) for i in range(100) for j in range(i + 1, 100))
        m = len(d)
        oracle = (d[m // 2 - 1] + d[m // 2]) / 2 if m % 2 == 0 else d[m // 2]
        assert median_bandwidth(z) == pytest.approx(oracle, rel=1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            KernelConfig(alpha=1.0)
        with pytest.raises(ValueError):
            KernelConfig(bandwidth="silverman")


class TestGradient:
    def _fd(self, z, sigma, h=1e-6):
        cfg = KernelConfig(bandwidth="fixed", sigma=sigma)
        g = np.zeros_like(z)
        for idx in np.ndindex(z.shape):
            zp, zm = z.copy(), z.copy()
            zp[idx] += h
            zm[idx] -= h
            g[idx] = (renyi_entropy(zp, cfg).H_bits - renyi_entropy(zm, cfg).H_bits) / (2 * h)
        return g

    def test_finite_differences_8x3(self):
        z = np.random.default_rng(7).standard_normal((8, 3))
        sigma = median_bandwidth(z)
        g = renyi_entropy_grad(z, CFG)
        fd = self._fd(z, sigma)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) <= 1e-4

    @pytest.mark.parametrize("alpha", [0.5, 2.0])
    def test_other_orders(self, alpha):
        z = np.random.default_rng(8).standard_normal((6, 2))
        cfg = KernelConfig(alpha=alpha, bandwidth="fixed", sigma=1.3)
        g = renyi_entropy_grad(z, cfg)
        h = 1e-6
        fd = np.zeros_like(z)
        for idx in np.ndindex(z.shape):
            zp, zm = z.copy(), z.copy()
            zp[idx] += h
            zm[idx] -= h
            fd[idx] = (renyi_entropy(zp, cfg).H_bits - renyi_entropy(zm, cfg).H_bits) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-7)

    def test_rows_sum_to_zero(self):
        z = np.random.default_rng(9).standard_normal((10, 4))
        assert np.max(np.abs(renyi_entropy_grad(z, CFG).sum(axis=0))) <= 1e-8

    def test_entropy_node(self):
        z = ad.Tensor(np.random.default_rng(10).standard_normal((9, 3)), requires_grad=True)
        node = entropy_term(z, CFG)
        assert node.item() == pytest.approx(renyi_entropy(z.data, CFG).H_bits)
        np.testing.assert_allclose(ad.grad(node, [z])[0], renyi_entropy_grad(z.data, CFG))


class TestIndependent:
    def test_single_column(self):
        z = np.random.default_rng(11).standard_normal((12, 1))
        assert independent_entropy(z, CFG) == pytest.approx(renyi_entropy(z, CFG).H_bits)

    def test_identical_samples(self):
        assert independent_entropy(np.ones((8, 3)), CFG) == pytest.approx(0.0, abs=1e-9)

    def test_duplicated_column(self):
        col = np.random.default_rng(12).standard_normal((20, 1))
        z = np.hstack([col, col])
        single = renyi_entropy(col, CFG).H_bits
        assert independent_entropy(z, CFG) == pytest.approx(2 * single)
        assert independent_entropy(z, CFG) > renyi_entropy(z, CFG).H_bits

    def test_independent_node_gradient(self):
        z = ad.Tensor(np.random.default_rng(13).standard_normal((7, 2)), requires_grad=True)
        node = entropy_term(z, CFG, estimator="independent")
        assert node.item() == pytest.approx(independent_entropy(z.data, CFG))
        g = ad.grad(node, [z])[0]
        np.testing.assert_allclose(g[:, [0]], renyi_entropy_grad(z.data[:, [0]], CFG))
