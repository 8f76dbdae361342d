"""Penalized risk objective for simultaneous surrogate and control optimization.

The decision variable is x = (z, theta): a control on the interior DOFs plus
surrogate parameters. For a sample y of the diffusion parameters,

    f(x, y) = 1/2 ||u(theta, y) - u0||_M^2 + alpha/2 ||z||_W^2
              + theta_reg/2 ||theta||^2
    g(x, y) = ||A(y) u(theta, y) - M z||^2      (Euclidean residual norm)

and the sample-averaged penalized objective is mean(f) + lam * mean(g).
||.||_M is the mass-weighted discrete L2 norm; the control weight W is the
mass matrix by default and the identity in "euclidean" mode.

Because the diffusion coefficient is affine in y, the stiffness matrix
decomposes as A(y) = A_0 + sum_j y_j A_j; the parts are preassembled once so
batch evaluation is a handful of sparse-dense products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import RankDeficiencyError
from .fem import (
    Mesh,
    SymmetricOperator,
    _assemble_stiffness_values,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    solve_spd,
)
from .field import DiffusionField
from .surrogate import PolynomialSurrogate, Surrogate

__all__ = [
    "OptState",
    "ProblemData",
    "make_problem_data",
    "target_rhs",
    "stiffness_matrix",
    "f_term",
    "g_term",
    "grad_x",
    "sample_objective",
    "BatchObjective",
    "batch_objective",
    "reduced_gradient",
    "ReducedApplier",
    "linear_perm_oracle",
]


def target_rhs(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Right-hand side whose solution under unit diffusion is the target state."""
    return 100.0 * (x2 * x2 - x1 * x1)


@dataclass(frozen=True)
class OptState:
    """Optimization variable: control values plus flattened surrogate parameters."""

    z: np.ndarray
    theta_flat: np.ndarray

    def as_vector(self) -> np.ndarray:
        """Concatenation [z, theta_flat]; the flat layout used by the optimizers."""
        return np.concatenate([self.z, self.theta_flat])

    @staticmethod
    def from_vector(vec: np.ndarray, n_dof: int) -> "OptState":
        return OptState(z=vec[:n_dof].copy(), theta_flat=vec[n_dof:].copy())

    def norm(self) -> float:
        """Euclidean norm of the combined variable."""
        return float(np.sqrt(self.z @ self.z + self.theta_flat @ self.theta_flat))


@dataclass(frozen=True)
class ProblemData:
    """Discretized problem: operators, target, affine stiffness parts, weights."""

    mesh: Mesh
    field: DiffusionField
    mass: SymmetricOperator
    stiff_parts: tuple  # (s+1) SymmetricOperators: constant part, then one per mode
    u0: np.ndarray
    alpha: float = 0.5
    theta_reg: float = 0.0
    control_norm: str = "mass"

    @property
    def n_dof(self) -> int:
        return self.mesh.n_dof

    def weight_apply(self, z: np.ndarray) -> np.ndarray:
        """W z for the control norm: the mass matrix or the identity."""
        return self.mass @ z if self.control_norm == "mass" else z

    def weight_dense(self) -> np.ndarray:
        if self.control_norm == "mass":
            return self.mass.dense()
        return np.eye(self.n_dof)

    def dense_parts(self) -> np.ndarray:
        """(s+1, n, n) dense stack of the stiffness parts (cached)."""
        if not hasattr(self, "_dense_parts"):
            stack = np.stack([p.dense() for p in self.stiff_parts])
            object.__setattr__(self, "_dense_parts", stack)
        return self._dense_parts


def make_problem_data(
    mesh: Mesh,
    field: DiffusionField,
    alpha: float = 0.5,
    theta_reg: float = 0.0,
    control_norm: str = "mass",
    u0: np.ndarray | None = None,
) -> ProblemData:
    """Assemble operators and the target state for the given mesh and field.

    The default target u0 solves the unit-coefficient system with load
    100 (x2^2 - x1^2); pass ``u0`` to override.
    """
    if control_norm not in ("mass", "euclidean"):
        raise ValueError(f"control_norm must be 'mass' or 'euclidean', got {control_norm!r}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if theta_reg < 0:
        raise ValueError(f"theta_reg must be nonnegative, got {theta_reg}")
    mass = assemble_mass(mesh)
    parts = [assemble_stiffness(mesh, np.full(mesh.n_tri, field.a0))]
    for j in range(field.s):
        # Mode parts are sign-indefinite by nature; only the assembled sum must
        # be elliptic, which the a0 construction guarantees on the parameter box.
        parts.append(SymmetricOperator(_assemble_stiffness_values(mesh, field.psi_element[:, j])))
    if u0 is None:
        unit = assemble_stiffness(mesh, np.ones(mesh.n_tri))
        u0 = solve_spd(unit, assemble_load(mesh, target_rhs))
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (mesh.n_dof,):
        raise ValueError(f"u0 must have shape ({mesh.n_dof},), got {u0.shape}")
    return ProblemData(
        mesh=mesh,
        field=field,
        mass=mass,
        stiff_parts=tuple(parts),
        u0=u0,
        alpha=alpha,
        theta_reg=theta_reg,
        control_norm=control_norm,
    )


def stiffness_matrix(data: ProblemData, y: np.ndarray) -> SymmetricOperator:
    """A(y) = A_0 + sum_j y_j A_j as one sparse operator."""
    y = np.asarray(y, dtype=float)
    if y.shape != (data.field.s,):
        raise ValueError(f"y must have shape ({data.field.s},), got {y.shape}")
    mat = data.stiff_parts[0].matrix.copy()
    for j in range(data.field.s):
        mat = mat + y[j] * data.stiff_parts[j + 1].matrix
    return SymmetricOperator(mat.tocsr())


def _apply_family(data: ProblemData, Y: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Columnwise A(y_i) @ U[:, i] using the affine decomposition."""
    out = data.stiff_parts[0] @ U
    for j in range(data.field.s):
        out += (data.stiff_parts[j + 1] @ U) * Y[:, j]
    return out


def _check_state(data: ProblemData, sur: Surrogate, x: OptState) -> None:
    if x.z.shape != (data.n_dof,):
        raise ValueError(f"z must have shape ({data.n_dof},), got {x.z.shape}")
    if x.theta_flat.shape != (sur.param_count,):
        raise ValueError(
            f"theta_flat must have shape ({sur.param_count},), got {x.theta_flat.shape}"
        )


def f_term(data: ProblemData, sur: Surrogate, x: OptState, y: np.ndarray) -> float:
    """Tracking-plus-regularization part at one sample."""
    _check_state(data, sur, x)
    u = sur.eval(y, x.theta_flat)
    d = u - data.u0
    val = 0.5 * float(d @ (data.mass @ d))
    val += 0.5 * data.alpha * float(x.z @ data.weight_apply(x.z))
    val += 0.5 * data.theta_reg * float(x.theta_flat @ x.theta_flat)
    return val


def g_term(data: ProblemData, sur: Surrogate, x: OptState, y: np.ndarray) -> float:
    """Squared Euclidean norm of the discrete PDE residual at one sample."""
    _check_state(data, sur, x)
    u = sur.eval(y, x.theta_flat)
    r = (stiffness_matrix(data, y) @ u) - (data.mass @ x.z)
    return float(r @ r)


def sample_objective(
    data: ProblemData, sur: Surrogate, x: OptState, y: np.ndarray, lam: float
):
    """Value and flat gradient of f + lam * g at a single sample.

    The gradient layout matches ``OptState.as_vector``: control block first,
    then surrogate parameters.
    """
    _check_state(data, sur, x)
    y = np.asarray(y, dtype=float)
    Y = y[None, :]
    u = sur.eval_batch(Y, x.theta_flat)  # (n_dof, 1)
    d = u[:, 0] - data.u0
    md = data.mass @ d
    r = _apply_family(data, Y, u)[:, 0] - (data.mass @ x.z)
    value = (
        0.5 * float(d @ md)
        + 0.5 * data.alpha * float(x.z @ data.weight_apply(x.z))
        + 0.5 * data.theta_reg * float(x.theta_flat @ x.theta_flat)
        + lam * float(r @ r)
    )
    ar = _apply_family(data, Y, r[:, None])[:, 0]
    upstream = md + 2.0 * lam * ar
    grad_theta = sur.vjp_batch(Y, upstream[:, None], x.theta_flat) + data.theta_reg * x.theta_flat
    grad_z = data.alpha * data.weight_apply(x.z) - 2.0 * lam * (data.mass @ r)
    return value, np.concatenate([grad_z, grad_theta])


def grad_x(
    data: ProblemData, sur: Surrogate, x: OptState, y: np.ndarray, lam: float
) -> np.ndarray:
    """Flat gradient of f + lam * g at one sample."""
    return sample_objective(data, sur, x, y, lam)[1]


class BatchObjective:
    """Sample-averaged penalized objective over a fixed sample set.

    Precomputes the polynomial design matrix when the surrogate is linear in
    its parameters, which makes repeated evaluations (line searches, quasi-
    Newton iterations) cheap. Callable on the flat variable vector.
    """

    def __init__(self, data: ProblemData, sur: Surrogate, samples: np.ndarray, lam: float):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != data.field.s:
            raise ValueError(
                f"samples must have shape (N, {data.field.s}), got {samples.shape}"
            )
        if samples.shape[0] == 0:
            raise ValueError("samples must contain at least one row")
        if lam < 0:
            raise ValueError(f"lam must be nonnegative, got {lam}")
        self.data = data
        self.sur = sur
        self.samples = samples
        self.lam = lam
        self.n = data.n_dof
        self._P = sur.basis_matrix(samples) if isinstance(sur, PolynomialSurrogate) else None

    def _eval_states(self, theta_flat: np.ndarray) -> np.ndarray:
        if self._P is not None:
            return self.sur._unflatten(theta_flat) @ self._P.T
        return self.sur.eval_batch(self.samples, theta_flat)

    def _vjp(self, theta_flat: np.ndarray, W: np.ndarray) -> np.ndarray:
        if self._P is not None:
            return (W @ self._P).flatten(order="F")
        return self.sur.vjp_batch(self.samples, W, theta_flat)

    def __call__(self, xvec: np.ndarray):
        data, lam = self.data, self.lam
        N = self.samples.shape[0]
        z = xvec[: self.n]
        theta = xvec[self.n :]
        U = self._eval_states(theta)
        D = U - data.u0[:, None]
        MD = data.mass @ D
        wz = data.weight_apply(z)
        value = 0.5 * float(np.sum(D * MD)) / N
        value += 0.5 * data.alpha * float(z @ wz)
        value += 0.5 * data.theta_reg * float(theta @ theta)
        R = _apply_family(data, self.samples, U) - (data.mass @ z)[:, None]
        value += lam * float(np.sum(R * R)) / N
        AR = _apply_family(data, self.samples, R)
        grad_theta = self._vjp(theta, (MD + 2.0 * lam * AR) / N) + data.theta_reg * theta
        grad_z = data.alpha * wz - 2.0 * lam * (data.mass @ R.mean(axis=1))
        return value, np.concatenate([grad_z, grad_theta])


def batch_objective(
    data: ProblemData, sur: Surrogate, x: OptState, samples: np.ndarray, lam: float
):
    """Value and flat gradient of mean(f) + lam * mean(g) over a sample set."""
    _check_state(data, sur, x)
    return BatchObjective(data, sur, samples, lam)(x.as_vector())


class ReducedApplier:
    """Reduced-problem evaluator with per-sample factorizations cached.

    The reduced objective eliminates the state exactly: u_i solves
    A(y_i) u_i = M z. Building the (N, n, n) inverse stack once makes each
    value-and-gradient application a pair of batched matrix products, which is
    what the conjugate-gradient reference solver needs.
    """

    def __init__(self, data: ProblemData, samples: np.ndarray):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != data.field.s:
            raise ValueError(
                f"samples must have shape (N, {data.field.s}), got {samples.shape}"
            )
        if samples.shape[0] == 0:
            raise ValueError("samples must contain at least one row")
        self.data = data
        self.samples = samples
        parts = data.dense_parts()
        stack = parts[0][None, :, :] + np.einsum("nj,jkl->nkl", samples, parts[1:])
        self.inv_stack = np.linalg.inv(stack)
        self.mass_dense = data.mass.dense()

    def states(self, z: np.ndarray) -> np.ndarray:
        """(N, n) exact states for the control z."""
        mz = self.mass_dense @ z
        return self.inv_stack @ mz

    def value_and_grad(self, z: np.ndarray):
        data = self.data
        U = self.states(z)
        D = U - data.u0[None, :]
        MD = D @ self.mass_dense
        value = 0.5 * float(np.mean(np.sum(D * MD, axis=1)))
        wz = data.weight_apply(z)
        value += 0.5 * data.alpha * float(z @ wz)
        Q = np.einsum("nkl,nl->nk", self.inv_stack, MD)
        grad = self.mass_dense @ Q.mean(axis=0) + data.alpha * wz
        return value, grad


def reduced_gradient(data: ProblemData, z: np.ndarray, samples: np.ndarray):
    """Value and gradient of the exact-state (reduced) objective.

    value = mean_i 1/2 ||u_i - u0||_M^2 + alpha/2 ||z||_W^2 with
    A(y_i) u_i = M z; grad = M mean_i(q_i) + alpha W z where q_i solves the
    adjoint system A(y_i) q_i = M (u_i - u0).
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (data.n_dof,):
        raise ValueError(f"z must have shape ({data.n_dof},), got {z.shape}")
    return ReducedApplier(data, samples).value_and_grad(z)


def linear_perm_oracle(
    data: ProblemData, sur: PolynomialSurrogate, samples: np.ndarray, lam: float
) -> OptState:
    """Exact minimizer of the penalized batch objective for linear surrogates.

    Assembles the dense normal system over (z, theta_flat) and solves it by
    Cholesky. The quadratic structure comes from u = Theta p(y) being linear
    in theta. Raises RankDeficiencyError when the system is numerically
    singular (too few samples and no ridge).
    """
    if not isinstance(sur, PolynomialSurrogate):
        raise ValueError("the dense normal-system oracle needs a linear-in-parameters surrogate")
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != data.field.s:
        raise ValueError(f"samples must have shape (N, {data.field.s}), got {samples.shape}")
    N = samples.shape[0]
    if N == 0:
        raise ValueError("samples must contain at least one row")
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")

    n = data.n_dof
    nb = sur.basis.n_basis
    P = sur.basis_matrix(samples)            # (N, nb)
    M = data.mass.dense()
    W = data.weight_dense()
    parts = data.dense_parts()               # (s+1, n, n)
    Yt = np.column_stack([np.ones(N), samples])  # (N, s+1)

    # theta-theta block: misfit Gram + ridge + penalty curvature.
    G = (P.T @ P) / N
    H_tt = np.kron(G, M) + data.theta_reg * np.eye(n * nb)
    S = np.einsum("ia,ib,ij,il->abjl", P, P, Yt, Yt, optimize=True) / N
    C2 = np.einsum("jkm,lmn->jlkn", parts, parts)  # A_j @ A_l, indexed [j, l, :, :]
    H_tt += 2.0 * lam * np.einsum("abjl,jlcd->acbd", S, C2, optimize=True).reshape(
        n * nb, n * nb
    )

    # z-theta coupling and z-z block come from the penalty and control terms.
    V = (P.T @ Yt) / N                         # (nb, s+1)
    MA = np.einsum("kl,jlm->jkm", M, parts)    # M @ A_j
    H_zt = -2.0 * lam * np.einsum("aj,jkm->kam", V, MA).reshape(n, n * nb)
    H_zz = data.alpha * W + 2.0 * lam * (M @ M)

    H = np.block([[H_zz, H_zt], [H_zt.T, H_tt]])
    c = np.concatenate([np.zeros(n), np.kron(P.mean(axis=0), M @ data.u0)])

    try:
        cho = scipy.linalg.cho_factor(H)
        xvec = scipy.linalg.cho_solve(cho, c)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(
            f"normal system is numerically singular (N={N}, parameters={n * nb + n}); "
            "more samples or a positive ridge are needed for a unique minimizer"
        ) from exc
    return OptState(z=xvec[:n], theta_flat=xvec[n:])
