"""Parametric surrogates for the state: polynomial chaos and a small feedforward net.

A surrogate maps a parameter vector theta (flattened, fixed documented order)
and a stochastic parameter y to a state vector on the interior DOFs. Both
families expose the same interface:

- ``eval(y, theta_flat)``: state vector u(theta, y)
- ``vjp(y, w, theta_flat)``: gradient of <w, u(theta, y)> with respect to
  theta_flat (vector-Jacobian product), same length as theta_flat
- batch variants over a sample matrix Y of shape (N, s); ``vjp_batch`` sums
  the per-sample products.

Flattening orders:

- polynomial: theta is an (n_dof, n_basis) matrix, flattened column-major
  (Fortran order), so the coefficient block of basis function a occupies
  ``[a * n_dof, (a + 1) * n_dof)``;
- network: layer by layer, each layer's weight matrix (row-major) followed by
  its bias vector.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from math import comb

import numpy as np
from scipy.special import expit

__all__ = [
    "MultiIndexSet",
    "make_multi_index_set",
    "legendre_1d",
    "PolynomialSurrogate",
    "make_legendre_surrogate",
    "make_monomial_surrogate",
    "NNSurrogate",
    "make_nn_surrogate",
]


@dataclass(frozen=True)
class MultiIndexSet:
    """All multi-indices of total degree <= degree in s variables, graded-lex order."""

    s: int
    degree: int
    indices: np.ndarray  # (n_basis, s)

    @property
    def n_basis(self) -> int:
        return self.indices.shape[0]


def make_multi_index_set(s: int, degree: int) -> MultiIndexSet:
    if s < 1 or degree < 0:
        raise ValueError(f"need s >= 1 and degree >= 0, got s={s}, degree={degree}")

    def gen(dim, budget):
        if dim == 1:
            return [(k,) for k in range(budget + 1)]
        return [(k, *rest) for k in range(budget + 1) for rest in gen(dim - 1, budget - k)]

    idx = sorted(gen(s, degree), key=lambda nu: (sum(nu), nu))
    out = MultiIndexSet(s=s, degree=degree, indices=np.array(idx, dtype=np.int64))
    assert out.n_basis == comb(s + degree, degree)
    return out


def legendre_1d(k: int, t: np.ndarray) -> np.ndarray:
    """Degree-k Legendre polynomial, orthonormal for the uniform density on [-1, 1].

    Standard three-term recurrence, then the sqrt(2k+1) normalization that makes
    E[P_j P_k] = delta_jk under t ~ U[-1, 1].
    """
    t = np.asarray(t, dtype=float)
    if k < 0:
        raise ValueError(f"degree must be nonnegative, got {k}")
    prev = np.ones_like(t)
    if k == 0:
        return prev
    cur = t.copy()
    for i in range(1, k):
        prev, cur = cur, ((2 * i + 1) * t * cur - i * prev) / (i + 1)
    return np.sqrt(2 * k + 1) * cur


def _poly_tables(kind: str, T: np.ndarray, max_deg: int) -> np.ndarray:
    """Per-degree values (max_deg+1, N) of the 1D basis family at points T."""
    N = T.shape[0]
    out = np.empty((max_deg + 1, N))
    out[0] = 1.0
    if max_deg == 0:
        return out
    if kind == "legendre":
        prev = np.ones(N)
        cur = T.copy()
        out[1] = np.sqrt(3.0) * cur
        for i in range(1, max_deg):
            prev, cur = cur, ((2 * i + 1) * T * cur - i * prev) / (i + 1)
            out[i + 1] = np.sqrt(2 * (i + 1) + 1) * cur
    elif kind == "monomial":
        for k in range(1, max_deg + 1):
            out[k] = out[k - 1] * T
    else:
        raise ValueError(f"unknown polynomial basis kind {kind!r}")
    return out


class Surrogate(ABC):
    """Behavioral contract shared by all surrogate families."""

    @property
    @abstractmethod
    def param_count(self) -> int: ...

    @abstractmethod
    def theta_flat(self) -> np.ndarray:
        """Current parameters in the documented flattening order."""

    @abstractmethod
    def with_params(self, theta_flat: np.ndarray) -> "Surrogate":
        """Copy of this surrogate with parameters replaced."""

    @abstractmethod
    def eval_batch(self, Y: np.ndarray, theta_flat: np.ndarray | None = None) -> np.ndarray:
        """States for each sample row of Y, returned as (n_dof, N)."""

    @abstractmethod
    def vjp_batch(
        self, Y: np.ndarray, W: np.ndarray, theta_flat: np.ndarray | None = None
    ) -> np.ndarray:
        """Sum over samples of the vjp of <W[:, i], u(theta, y_i)>."""

    def eval(self, y: np.ndarray, theta_flat: np.ndarray | None = None) -> np.ndarray:
        return self.eval_batch(np.asarray(y, dtype=float)[None, :], theta_flat)[:, 0]

    def vjp(
        self, y: np.ndarray, w: np.ndarray, theta_flat: np.ndarray | None = None
    ) -> np.ndarray:
        return self.vjp_batch(
            np.asarray(y, dtype=float)[None, :], np.asarray(w, dtype=float)[:, None], theta_flat
        )

    def _check_samples(self, Y: np.ndarray, s: int) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2 or Y.shape[1] != s:
            raise ValueError(f"samples must have shape (N, {s}), got {Y.shape}")
        return Y


@dataclass(frozen=True)
class PolynomialSurrogate(Surrogate):
    """Linear-in-parameters chaos expansion u(theta, y) = Theta @ p(y).

    ``kind`` selects the 1D family for the tensorized basis: "legendre"
    (orthonormal, the default throughout) or plain "monomial" powers.
    """

    basis: MultiIndexSet
    n_dof: int
    theta: np.ndarray  # (n_dof, n_basis)
    kind: str = "legendre"

    @property
    def param_count(self) -> int:
        return self.n_dof * self.basis.n_basis

    @property
    def label(self) -> str:
        return f"{self.kind}_deg{self.basis.degree}"

    def theta_flat(self) -> np.ndarray:
        return self.theta.flatten(order="F")

    def with_params(self, theta_flat: np.ndarray) -> "PolynomialSurrogate":
        return replace(self, theta=self._unflatten(theta_flat))

    def _unflatten(self, theta_flat: np.ndarray) -> np.ndarray:
        theta_flat = np.asarray(theta_flat, dtype=float)
        if theta_flat.shape != (self.param_count,):
            raise ValueError(
                f"theta_flat must have shape ({self.param_count},), got {theta_flat.shape}"
            )
        return theta_flat.reshape((self.n_dof, self.basis.n_basis), order="F")

    def basis_matrix(self, Y: np.ndarray) -> np.ndarray:
        """Design matrix P with P[i, a] = p_a(y_i), shape (N, n_basis)."""
        Y = self._check_samples(Y, self.basis.s)
        idx = self.basis.indices
        P = np.ones((Y.shape[0], idx.shape[0]))
        for d in range(self.basis.s):
            table = _poly_tables(self.kind, Y[:, d], int(idx[:, d].max(initial=0)))
            P *= table[idx[:, d], :].T
        return P

    def eval_batch(self, Y: np.ndarray, theta_flat: np.ndarray | None = None) -> np.ndarray:
        Theta = self.theta if theta_flat is None else self._unflatten(theta_flat)
        return Theta @ self.basis_matrix(Y).T

    def vjp_batch(
        self, Y: np.ndarray, W: np.ndarray, theta_flat: np.ndarray | None = None
    ) -> np.ndarray:
        Y = self._check_samples(Y, self.basis.s)
        W = np.asarray(W, dtype=float)
        if W.shape != (self.n_dof, Y.shape[0]):
            raise ValueError(f"W must have shape ({self.n_dof}, {Y.shape[0]}), got {W.shape}")
        # d<w, Theta p>/dTheta = w p^T per sample; summed over samples this is W @ P.
        return (W @ self.basis_matrix(Y)).flatten(order="F")


def _make_polynomial(kind, s, degree, n_dof, theta):
    basis = make_multi_index_set(s, degree)
    if theta is None:
        theta = np.zeros((n_dof, basis.n_basis))
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n_dof, basis.n_basis):
        raise ValueError(
            f"theta must have shape ({n_dof}, {basis.n_basis}), got {theta.shape}"
        )
    return PolynomialSurrogate(basis=basis, n_dof=n_dof, theta=theta, kind=kind)


def make_legendre_surrogate(s: int, degree: int, n_dof: int, theta=None) -> PolynomialSurrogate:
    return _make_polynomial("legendre", s, degree, n_dof, theta)


def make_monomial_surrogate(s: int, degree: int, n_dof: int, theta=None) -> PolynomialSurrogate:
    return _make_polynomial("monomial", s, degree, n_dof, theta)


@dataclass(frozen=True)
class NNSurrogate(Surrogate):
    """Fully connected net y -> u: logistic-sigmoid hidden layers, identity output."""

    layer_sizes: tuple
    weights: tuple  # of (n_out, n_in) arrays
    biases: tuple   # of (n_out,) arrays

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def s(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_dof(self) -> int:
        return self.layer_sizes[-1]

    @property
    def label(self) -> str:
        return "nn_" + "x".join(str(n) for n in self.layer_sizes)

    def theta_flat(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)]
        )

    def _unflatten(self, theta_flat: np.ndarray):
        theta_flat = np.asarray(theta_flat, dtype=float)
        if theta_flat.shape != (self.param_count,):
            raise ValueError(
                f"theta_flat must have shape ({self.param_count},), got {theta_flat.shape}"
            )
        weights, biases, pos = [], [], 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            weights.append(theta_flat[pos : pos + n_out * n_in].reshape(n_out, n_in))
            pos += n_out * n_in
            biases.append(theta_flat[pos : pos + n_out])
            pos += n_out
        return tuple(weights), tuple(biases)

    def with_params(self, theta_flat: np.ndarray) -> "NNSurrogate":
        weights, biases = self._unflatten(theta_flat)
        return replace(self, weights=weights, biases=biases)

    def _forward(self, Y: np.ndarray, theta_flat: np.ndarray | None):
        """Returns (layer inputs list, output); inputs[l] feeds layer l."""
        if theta_flat is None:
            weights, biases = self.weights, self.biases
        else:
            weights, biases = self._unflatten(theta_flat)
        X = self._check_samples(Y, self.s).T  # (s, N)
        inputs = [X]
        n_layers = len(weights)
        for l, (w, b) in enumerate(zip(weights, biases)):
            Z = w @ inputs[-1] + b[:, None]
            inputs.append(expit(Z) if l < n_layers - 1 else Z)
        return inputs, weights

    def eval_batch(self, Y: np.ndarray, theta_flat: np.ndarray | None = None) -> np.ndarray:
        inputs, _ = self._forward(Y, theta_flat)
        return inputs[-1]

    def vjp_batch(
        self, Y: np.ndarray, W: np.ndarray, theta_flat: np.ndarray | None = None
    ) -> np.ndarray:
        inputs, weights = self._forward(Y, theta_flat)
        W = np.asarray(W, dtype=float)
        if W.shape != inputs[-1].shape:
            raise ValueError(f"W must have shape {inputs[-1].shape}, got {W.shape}")
        n_layers = len(weights)
        grads_w = [None] * n_layers
        grads_b = [None] * n_layers
        delta = W
        for l in range(n_layers - 1, -1, -1):
            grads_w[l] = delta @ inputs[l].T
            grads_b[l] = delta.sum(axis=1)
            if l > 0:
                # inputs[l] already holds sigma(z_l); sigma' = sigma (1 - sigma).
                delta = (weights[l].T @ delta) * inputs[l] * (1.0 - inputs[l])
        return np.concatenate(
            [np.concatenate([gw.ravel(), gb]) for gw, gb in zip(grads_w, grads_b)]
        )


def make_nn_surrogate(
    layer_sizes, init: str = "ones", rng: np.random.Generator | None = None
) -> NNSurrogate:
    """Build a network surrogate.

    ``init="ones"`` sets every weight and bias to 1 (the batch-study start);
    ``init="scaled_uniform"`` draws weights uniform on +-sqrt(6/(fan_in+fan_out))
    with zero biases and needs ``rng``.
    """
    layer_sizes = tuple(int(n) for n in layer_sizes)
    if len(layer_sizes) < 2 or any(n < 1 for n in layer_sizes):
        raise ValueError(f"layer_sizes needs >= 2 positive entries, got {layer_sizes}")
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        if init == "ones":
            weights.append(np.ones((n_out, n_in)))
            biases.append(np.ones(n_out))
        elif init == "scaled_uniform":
            if rng is None:
                raise ValueError("scaled_uniform initialization needs an rng")
            bound = np.sqrt(6.0 / (n_in + n_out))
            weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
            biases.append(np.zeros(n_out))
        else:
            raise ValueError(f"unknown init mode {init!r}")
    return NNSurrogate(
        layer_sizes=layer_sizes, weights=tuple(weights), biases=tuple(biases)
    )
