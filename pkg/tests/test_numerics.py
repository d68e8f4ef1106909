"""Autodiff engine, Jacobi eigensolver, pairwise distances and Adam."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gib import autodiff as ad
from gib.linalg import EigenConvergenceError, NotSymmetricError, pairwise_sq_dists, sym_eig
from gib.optim import AdamState, NonFiniteGradientError, adam_step


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


class TestGradBasics:
    def test_square(self):
        x = ad.Tensor(3.0, requires_grad=True)
        (g,) = ad.grad(ad.mul(x, x), [x])
        assert g[0, 0] == pytest.approx(6.0)

    def test_sigmoid_at_zero(self):
        x = ad.Tensor(0.0, requires_grad=True)
        (g,) = ad.grad(ad.sigmoid(x), [x])
        assert g[0, 0] == pytest.approx(0.25)

    def test_non_scalar_output_rejected(self):
        x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ad.GraphError):
            ad.grad(ad.relu(x), [x])

    def test_unreached_param_gets_zero_and_warning(self):
        x = ad.Tensor(2.0, requires_grad=True)
        y = ad.Tensor(np.ones((3, 1)), requires_grad=True)
        with pytest.warns(ad.UnreachedParameterWarning):
            gx, gy = ad.grad(ad.mul(x, x), [x, y])
        assert gx[0, 0] == pytest.approx(4.0)
        np.testing.assert_array_equal(gy, np.zeros((3, 1)))

    def test_graph_reusable(self):
        x = ad.Tensor(np.array([[1.0, -2.0]]), requires_grad=True)
        out = ad.total(ad.mul(x, x))
        g1 = ad.grad(out, [x])[0]
        g2 = ad.grad(out, [x])[0]
        np.testing.assert_array_equal(g1, g2)

    def test_backward_stores_grad(self):
        x = ad.Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
        ad.backward(ad.total(ad.scale(x, 3.0)), [x])
        np.testing.assert_array_equal(x.grad, [[3.0, 3.0]])

    def test_broadcast_add_reduces_gradient(self):
        x = ad.Tensor(np.ones((4, 3)), requires_grad=True)
        b = ad.Tensor(np.zeros((1, 3)), requires_grad=True)
        (gb,) = ad.grad(ad.total(ad.add(x, b)), [b])
        np.testing.assert_array_equal(gb, [[4.0, 4.0, 4.0]])

    def test_indicator_ste(self):
        g = ad.Tensor(np.array([[-0.2, 0.3, 1.0]]), requires_grad=True)
        out = ad.indicator_ste(g, np.array([[1.0, 1.0, 0.0]]))
        np.testing.assert_array_equal(out.data, [[0.0, 1.0, 1.0]])
        (gg,) = ad.grad(ad.total(ad.scale(out, 2.5)), [g])
        np.testing.assert_array_equal(gg, [[2.5, 2.5, 0.0]])

    def test_deep_chain_does_not_recurse(self):
        x = ad.Tensor(1.0, requires_grad=True)
        y = x
        for _ in range(5000):
            y = ad.add(y, x)
        assert ad.grad(y, [x])[0][0, 0] == pytest.approx(5001.0)


class TestFiniteDifferences:
    def test_two_layer_net_50_params(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((6, 5))
        labels = rng.integers(0, 2, 6)
        w1 = ad.Tensor(rng.standard_normal((5, 6)), requires_grad=True)
        b1 = ad.Tensor(rng.standard_normal((1, 6)), requires_grad=True)
        w2 = ad.Tensor(rng.standard_normal((6, 2)), requires_grad=True)
        b2 = ad.Tensor(rng.standard_normal((1, 2)), requires_grad=True)
        params = [w1, b1, w2, b2]
        assert sum(p.data.size for p in params) == 50

        def loss():
            h = ad.relu(ad.add(ad.matmul(x, w1), b1))
            return ad.softmax_cross_entropy(ad.add(ad.matmul(h, w2), b2), labels)

        analytic = ad.grad(loss(), params)
        for p, g in zip(params, analytic):
            fd = central_diff(lambda: loss().item(), p.data)
            rel = np.abs(g - fd) / np.maximum(1e-8, np.maximum(np.abs(g), np.abs(fd)))
            assert rel.max() <= 1e-5

    def test_composite_with_sigmoid_and_mse(self):
        rng = np.random.default_rng(1)
        a = ad.Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        b = ad.Tensor(rng.standard_normal((3, 1)), requires_grad=True)
        target = rng.standard_normal((5, 1))

        def loss():
            return ad.add(ad.mse(ad.matmul(ad.sigmoid(a), b), target), ad.mean(ad.mul(a, a)))

        ga, gb = ad.grad(loss(), [a, b])
        np.testing.assert_allclose(ga, central_diff(lambda: loss().item(), a.data), rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(gb, central_diff(lambda: loss().item(), b.data), rtol=1e-6, atol=1e-9)

    def test_cross_entropy_stable_for_large_logits(self):
        logits = ad.Tensor(np.array([[1000.0, -1000.0]]), requires_grad=True)
        loss = ad.softmax_cross_entropy(logits, np.array([1]))
        assert loss.item() == pytest.approx(2000.0)
        assert np.all(np.isfinite(ad.grad(loss, [logits])[0]))


class TestSymEig:
    def test_identity(self):
        lam, u = sym_eig(np.eye(3))
        np.testing.assert_allclose(lam, [1, 1, 1])
        np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-12)

    def test_diagonal(self):
        lam, _ = sym_eig(np.diag([1.0, 2.0]))
        np.testing.assert_allclose(lam, [2.0, 1.0])

    @pytest.mark.parametrize("n", [1, 2, 8, 30])
    def test_reconstruction(self, n):
        rng = np.random.default_rng(n)
        m = rng.standard_normal((n, n))
        a = (m + m.T) / 2
        lam, u = sym_eig(a)
        norm = max(1.0, np.linalg.norm(a))
        assert np.linalg.norm(a - u @ np.diag(lam) @ u.T) <= 1e-10 * norm
        assert np.linalg.norm(u.T @ u - np.eye(n)) <= 1e-10
        assert np.all(np.diff(lam) <= 0)
        assert abs(lam.sum() - np.trace(a)) <= 1e-10 * n

    def test_matches_lapack(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((12, 12))
        a = m @ m.T
        np.testing.assert_allclose(sym_eig(a)[0], np.sort(np.linalg.eigvalsh(a))[::-1], rtol=1e-10, atol=1e-10)

    def test_asymmetric_rejected(self):
        with pytest.raises(NotSymmetricError):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_iteration_cap_reports_residual(self):
        rng = np.random.default_rng(2)
        m = rng.standard_normal((10, 10))
        with pytest.raises(EigenConvergenceError) as info:
            sym_eig(m + m.T, max_sweeps=1)
        assert info.value.residual > 0

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        m = rng.standard_normal((9, 9))
        a = m + m.T
        l1, u1 = sym_eig(a)
        l2, u2 = sym_eig(a)
        assert l1.tobytes() == l2.tobytes() and u1.tobytes() == u2.tobytes()


class TestPairwise:
    def test_identical_rows(self):
        np.testing.assert_array_equal(pairwise_sq_dists(np.ones((4, 3))), np.zeros((4, 4)))

    def test_two_scalars(self):
        assert pairwise_sq_dists(np.array([[0.0], [3.0]]))[0, 1] == 9.0

    def test_naive_loop_oracle(self):
        z = np.random.default_rng(0).standard_normal((20, 5))
        naive = np.array([[sum((z[i, k] - z[j, k]) ** 2 for k in range(5)) for j in range(20)] for i in range(20)])
        np.testing.assert_allclose(pairwise_sq_dists(z), naive, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30))
    def test_properties(self, values):
        d = pairwise_sq_dists(np.array(values).reshape(-1, 1))
        assert np.all(d >= 0)
        np.testing.assert_array_equal(d, d.T)
        np.testing.assert_array_equal(np.diag(d), 0)


def scalar_adam(grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-Python Adam recurrence on a single scalar."""
    x, m, v = 0.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return x


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = {"w": ad.Tensor(np.array([[1.0, -2.0]]), requires_grad=True)}
        adam_step(p, {"w": np.zeros((1, 2))}, AdamState(lr=0.1))
        np.testing.assert_array_equal(p["w"].data, [[1.0, -2.0]])

    def test_schedule(self):
        s = AdamState(lr=1e-4, decay=0.97, period=2)
        assert s.lr_at(4) == pytest.approx(1e-4 * 0.97 ** 2)
        assert s.lr_at(0) == s.lr_at(1) == 1e-4

    def test_first_step_magnitude(self):
        p = {"x": ad.Tensor(0.0, requires_grad=True)}
        adam_step(p, {"x": np.ones((1, 1))}, AdamState(lr=0.1))
        assert abs(p["x"].data[0, 0]) == pytest.approx(0.1, abs=1e-6)

    def test_matches_scalar_oracle(self):
        grads = np.random.default_rng(0).standard_normal(25)
        p = {"x": ad.Tensor(0.0, requires_grad=True)}
        state = AdamState(lr=0.05, decay=1.0)
        for g in grads:
            adam_step(p, {"x": np.array([[g]])}, state)
        assert p["x"].data[0, 0] == pytest.approx(scalar_adam(grads, 0.05), rel=1e-12, abs=1e-15)
        assert state.step == 25

    def test_nan_aborts_whole_step(self):
        p = {"a": ad.Tensor(1.0, requires_grad=True), "b": ad.Tensor(1.0, requires_grad=True)}
        state = AdamState(lr=0.1)
        with pytest.raises(NonFiniteGradientError) as info:
            adam_step(p, {"a": np.ones((1, 1)), "b": np.array([[np.nan]])}, state)
        assert info.value.name == "b"
        assert p["a"].data[0, 0] == 1.0 and state.step == 0

    def test_shape_mismatch(self):
        p = {"a": ad.Tensor(np.zeros((1, 2)), requires_grad=True)}
        with pytest.raises(ValueError):
            adam_step(p, {"a": np.zeros((2, 1))}, AdamState())

    def test_fresh_clears_moments(self):
        s = AdamState(lr=0.3)
        p = {"a": ad.Tensor(0.0, requires_grad=True)}
        adam_step(p, {"a": np.ones((1, 1))}, s)
        f = s.fresh()
        assert f.step == 0 and not f.m and f.lr == 0.3
