"""Surrogate family checks: basis values, flattening orders, vjp correctness."""

from math import comb

import numpy as np
import pytest

from surropt.surrogate import (
    legendre_1d,
    make_legendre_surrogate,
    make_monomial_surrogate,
    make_multi_index_set,
    make_nn_surrogate,
)


def central_fd(fn, x0, eps):
    g = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += eps
        xm[i] -= eps
        g[i] = (fn(xp) - fn(xm)) / (2 * eps)
    return g


class TestMultiIndexSet:
    def test_graded_lex_order_s2_deg2(self):
        ms = make_multi_index_set(2, 2)
        assert ms.indices.tolist() == [[0, 0], [0, 1], [1, 0], [0, 2], [1, 1], [2, 0]]

    def test_counts(self):
        for s, deg in [(4, 1), (4, 2), (4, 3), (2, 5), (6, 2)]:
            ms = make_multi_index_set(s, deg)
            assert ms.n_basis == comb(s + deg, deg)

    def test_zero_index_first(self):
        ms = make_multi_index_set(5, 3)
        assert ms.indices[0].tolist() == [0, 0, 0, 0, 0]

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            make_multi_index_set(0, 2)
        with pytest.raises(ValueError):
            make_multi_index_set(2, -1)


class TestLegendre1D:
    def test_frozen_values(self):
        t = np.array([0.0, 1.0, -1.0, 0.5])
        np.testing.assert_allclose(legendre_1d(0, t), 1.0)
        assert legendre_1d(1, np.array([1.0]))[0] == pytest.approx(np.sqrt(3.0))
        assert legendre_1d(2, np.array([0.0]))[0] == pytest.approx(-np.sqrt(5.0) / 2.0)
        assert legendre_1d(2, np.array([1.0]))[0] == pytest.approx(np.sqrt(5.0))
        assert legendre_1d(3, np.array([1.0]))[0] == pytest.approx(np.sqrt(7.0))

    def test_orthonormal_under_uniform_density(self):
        rng = np.random.default_rng(31)
        t = rng.uniform(-1.0, 1.0, 100_000)
        for j in range(4):
            for k in range(4):
                prod = float(np.mean(legendre_1d(j, t) * legendre_1d(k, t)))
                assert prod == pytest.approx(1.0 if j == k else 0.0, abs=0.02)

    def test_negative_degree_rejected(self):
        with pytest.raises(ValueError):
            legendre_1d(-1, np.array([0.0]))


class TestPolynomialSurrogate:
    def test_param_counts_frozen(self):
        assert make_legendre_surrogate(4, 1, 49).param_count == 245
        assert make_legendre_surrogate(4, 2, 49).param_count == 735
        assert make_legendre_surrogate(4, 3, 49).param_count == 1715

    def test_basis_matrix_at_zero(self):
        # At y = 0 every index containing an odd degree vanishes and each pure
        # second-order index contributes P2(0) = -sqrt(5)/2.
        sur = make_legendre_surrogate(4, 2, 3)
        p = sur.basis_matrix(np.zeros((1, 4)))[0]
        for a, nu in enumerate(sur.basis.indices):
            nu = nu.tolist()
            if sum(nu) == 0:
                assert p[a] == pytest.approx(1.0)
            elif max(nu) == 2 and sum(nu) == 2:
                assert p[a] == pytest.approx(-np.sqrt(5.0) / 2.0)
            else:
                assert p[a] == pytest.approx(0.0, abs=1e-15)

    def test_basis_matrix_against_index_loop(self):
        sur = make_legendre_surrogate(3, 3, 2)
        rng = np.random.default_rng(5)
        Y = rng.uniform(-1, 1, (7, 3))
        P = sur.basis_matrix(Y)
        for i in range(7):
            for a, nu in enumerate(sur.basis.indices):
                expected = 1.0
                for d in range(3):
                    expected *= legendre_1d(int(nu[d]), Y[i, d : d + 1])[0]
                assert P[i, a] == pytest.approx(expected, rel=1e-12, abs=1e-14)

    def test_monomial_switch(self):
        sur = make_monomial_surrogate(2, 3, 2)
        Y = np.array([[0.3, -0.7]])
        P = sur.basis_matrix(Y)
        for a, nu in enumerate(sur.basis.indices):
            assert P[0, a] == pytest.approx(0.3 ** nu[0] * (-0.7) ** nu[1], rel=1e-13)

    def test_eval_is_theta_times_basis(self):
        rng = np.random.default_rng(8)
        theta = rng.normal(size=(5, 15))
        sur = make_legendre_surrogate(4, 2, 5, theta=theta)
        y = rng.uniform(-1, 1, 4)
        u = sur.eval(y)
        np.testing.assert_allclose(u, theta @ sur.basis_matrix(y[None, :])[0], rtol=1e-13)

    def test_eval_linear_in_theta(self):
        sur = make_legendre_surrogate(4, 2, 5)
        rng = np.random.default_rng(9)
        t1 = rng.normal(size=sur.param_count)
        t2 = rng.normal(size=sur.param_count)
        y = rng.uniform(-1, 1, 4)
        np.testing.assert_allclose(
            sur.eval(y, t1 + t2), sur.eval(y, t1) + sur.eval(y, t2), rtol=1e-12, atol=1e-14
        )

    def test_flattening_order_is_basis_major(self):
        sur = make_legendre_surrogate(2, 1, 3)
        theta = np.zeros((3, 3))
        theta[2, 1] = 1.0  # DOF 2 of basis function 1
        sur = sur.with_params(theta.flatten(order="F"))
        assert sur.theta[2, 1] == 1.0
        flat = sur.theta_flat()
        assert flat[1 * 3 + 2] == 1.0 and flat.sum() == 1.0

    def test_vjp_exact_for_linear_map(self):
        # Finite differences carry no truncation error on a linear map, so the
        # comparison is exact to rounding.
        sur = make_legendre_surrogate(4, 2, 6)
        rng = np.random.default_rng(12)
        theta0 = rng.normal(size=sur.param_count)
        y = rng.uniform(-1, 1, 4)
        w = rng.normal(size=6)
        g = sur.vjp(y, w, theta0)
        fd = central_fd(lambda th: float(w @ sur.eval(y, th)), theta0, 1e-6)
        rel = np.linalg.norm(g - fd) / np.linalg.norm(g)
        assert rel <= 1e-7

    def test_vjp_batch_sums_per_sample(self):
        sur = make_legendre_surrogate(4, 2, 5)
        rng = np.random.default_rng(13)
        theta0 = rng.normal(size=sur.param_count)
        Y = rng.uniform(-1, 1, (6, 4))
        W = rng.normal(size=(5, 6))
        total = sur.vjp_batch(Y, W, theta0)
        summed = sum(sur.vjp(Y[i], W[:, i], theta0) for i in range(6))
        np.testing.assert_allclose(total, summed, rtol=1e-12)

    def test_shape_validation(self):
        sur = make_legendre_surrogate(4, 2, 5)
        with pytest.raises(ValueError):
            sur.eval_batch(np.zeros((3, 5)))
        with pytest.raises(ValueError):
            sur.with_params(np.zeros(sur.param_count + 1))
        with pytest.raises(ValueError):
            sur.vjp_batch(np.zeros((3, 4)), np.zeros((5, 2)))


def nn_forward_reference(sur, y):
    """Independent per-layer loop (scalar math style) for cross-checking."""
    x = np.asarray(y, dtype=float)
    n_layers = len(sur.weights)
    for l, (w, b) in enumerate(zip(sur.weights, sur.biases)):
        z = w @ x + b
        x = 1.0 / (1.0 + np.exp(-z)) if l < n_layers - 1 else z
    return x


class TestNNSurrogate:
    def test_param_count_frozen(self):
        assert make_nn_surrogate((4, 9, 9, 9, 49)).param_count == 715

    def test_zero_params_give_zero_output_and_half_activations(self):
        sur = make_nn_surrogate((4, 6, 5)).with_params(np.zeros(make_nn_surrogate((4, 6, 5)).param_count))
        y = np.array([0.3, -0.2, 0.9, -1.0])
        np.testing.assert_array_equal(sur.eval(y), np.zeros(5))
        inputs, _ = sur._forward(y[None, :], None)
        np.testing.assert_allclose(inputs[1], 0.5)

    def test_forward_matches_reference_loop(self):
        rng = np.random.default_rng(21)
        sur = make_nn_surrogate((4, 7, 6, 8), init="scaled_uniform", rng=rng)
        for _ in range(5):
            y = rng.uniform(-1, 1, 4)
            np.testing.assert_allclose(sur.eval(y), nn_forward_reference(sur, y), rtol=1e-12)

    def test_all_ones_init(self):
        sur = make_nn_surrogate((2, 3, 2), init="ones")
        np.testing.assert_array_equal(sur.theta_flat(), np.ones(sur.param_count))

    def test_flattening_order_layer_weights_then_biases(self):
        sur = make_nn_surrogate((2, 3, 2))
        flat = np.arange(sur.param_count, dtype=float)
        sur = sur.with_params(flat)
        # Layer 0: 3x2 weights row-major (0..5), then 3 biases (6..8).
        np.testing.assert_array_equal(sur.weights[0], [[0, 1], [2, 3], [4, 5]])
        np.testing.assert_array_equal(sur.biases[0], [6, 7, 8])
        np.testing.assert_array_equal(sur.weights[1], [[9, 10, 11], [12, 13, 14]])
        np.testing.assert_array_equal(sur.biases[1], [15, 16])
        np.testing.assert_array_equal(sur.theta_flat(), flat)

    def test_vjp_against_central_differences(self):
        rng = np.random.default_rng(33)
        sur = make_nn_surrogate((3, 5, 4, 6), init="scaled_uniform", rng=rng)
        theta0 = sur.theta_flat()
        y = rng.uniform(-1, 1, 3)
        w = rng.normal(size=6)
        g = sur.vjp(y, w, theta0)
        fd = central_fd(lambda th: float(w @ sur.eval(y, th)), theta0, 1e-6)
        rel = np.linalg.norm(g - fd) / np.linalg.norm(g)
        assert rel <= 1e-8

    def test_vjp_batch_sums_per_sample(self):
        rng = np.random.default_rng(35)
        sur = make_nn_surrogate((3, 4, 5), init="scaled_uniform", rng=rng)
        Y = rng.uniform(-1, 1, (7, 3))
        W = rng.normal(size=(5, 7))
        total = sur.vjp_batch(Y, W)
        summed = sum(sur.vjp(Y[i], W[:, i]) for i in range(7))
        np.testing.assert_allclose(total, summed, rtol=1e-11)

    def test_bad_layer_sizes_and_init(self):
        with pytest.raises(ValueError):
            make_nn_surrogate((4,))
        with pytest.raises(ValueError):
            make_nn_surrogate((4, 0, 2))
        with pytest.raises(ValueError):
            make_nn_surrogate((4, 3, 2), init="scaled_uniform")  # rng required
        with pytest.raises(ValueError):
            make_nn_surrogate((4, 3, 2), init="what")
