"""Optimizers: penalized stochastic gradient descent and a batch quasi-Newton.

``psgd`` is the sampled one-shot iteration: each step draws a fresh parameter
sample, takes a gradient step on f + lam_k g with schedule-controlled step
size and penalty, and optionally projects onto a norm ball. ``batch_minimize``
solves the fixed-sample-set problem to, ideally, optimizer-noise-free accuracy
and is what the consistency-rate studies use. ``reduced_reference_solve``
computes the exact-state reference control by conjugate gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, SolverFailureError, StalledMinimizerError
from .field import sample_y
from .objective import (
    BatchObjective,
    OptState,
    ProblemData,
    ReducedApplier,
    sample_objective,
)
from .surrogate import Surrogate

__all__ = [
    "StepSchedule",
    "PenaltySchedule",
    "PenaltyRun",
    "MinimizeResult",
    "project_ball",
    "psgd",
    "batch_minimize",
    "reduced_reference_solve",
]


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes beta_k: Robbins-Monro decay beta0/(k + k0) or a constant."""

    kind: str
    beta0: float
    k0: float = 1.0

    def __post_init__(self):
        if self.kind not in ("robbins_monro", "constant"):
            raise ValueError(f"unknown step schedule kind {self.kind!r}")
        if self.beta0 <= 0:
            raise ValueError(f"beta0 must be positive, got {self.beta0}")
        if self.kind == "robbins_monro" and self.k0 <= 0:
            raise ValueError(f"robbins_monro needs k0 > 0, got {self.k0}")

    def beta(self, k: int) -> float:
        if self.kind == "constant":
            return self.beta0
        return self.beta0 / (k + self.k0)


@dataclass(frozen=True)
class PenaltySchedule:
    """Penalty weights lambda_k: constant, linear growth, or step-coupled adaptive.

    The adaptive rule tracks a ceiling lambda_bar from below at the rate the
    steps decay: lambda_k = lambda_bar - sqrt(d * beta_k), clipped below at
    lambda0, so the squared gap |lambda_k - lambda_bar|^2 shrinks like beta_k.
    """

    kind: str
    lambda0: float
    slope: float = 0.0
    lambda_bar: float | None = None
    d: float | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "adaptive"):
            raise ValueError(f"unknown penalty schedule kind {self.kind!r}")
        if self.lambda0 < 0:
            raise ValueError(f"lambda0 must be nonnegative, got {self.lambda0}")
        if self.kind == "linear" and self.slope < 0:
            raise ValueError(f"linear penalty growth needs slope >= 0, got {self.slope}")
        if self.kind == "adaptive":
            if self.lambda_bar is None or self.d is None:
                raise ValueError("adaptive penalty needs lambda_bar and d")
            if self.d <= 0 or self.lambda_bar <= self.lambda0:
                raise ValueError("adaptive penalty needs d > 0 and lambda_bar > lambda0")

    def value(self, k: int, beta_k: float) -> float:
        if self.kind == "constant":
            return self.lambda0
        if self.kind == "linear":
            return self.lambda0 + self.slope * k
        return max(self.lambda0, self.lambda_bar - np.sqrt(self.d * beta_k))


@dataclass
class PenaltyRun:
    """Record of one psgd run: final state plus per-iteration log columns."""

    final_x: OptState
    seed: int
    iters: np.ndarray      # logged iteration indices
    betas: np.ndarray
    lambdas: np.ndarray
    values: np.ndarray     # sampled objective f + lambda_k g at (x_k, y_k)
    err_sq: np.ndarray     # squared distance to the reference, NaN when absent


@dataclass(frozen=True)
class MinimizeResult:
    state: OptState
    value: float
    grad_norm: float
    n_iter: int
    converged: bool
    reason: str  # "gradient_tol" or "max_iter"


def project_ball(vec: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the ball of the given radius.

    Inside the ball the input is returned unchanged (exact idempotence); the
    rescale loops on rounding so a projected point never measures outside.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    nrm = float(np.linalg.norm(vec))
    while nrm > radius:
        vec = vec * (radius / nrm)
        nrm = float(np.linalg.norm(vec))
    return vec


def psgd(
    data: ProblemData,
    sur: Surrogate,
    x0: OptState,
    steps: StepSchedule,
    penalties: PenaltySchedule,
    n_iter: int,
    rng: np.random.Generator,
    radius: float | None = None,
    update: str = "sgd",
    sample_set: np.ndarray | None = None,
    ref: OptState | None = None,
    log_every: int = 1,
    seed_label: int = 0,
) -> PenaltyRun:
    """Penalized stochastic gradient descent (one-shot iteration).

    Each iteration draws y fresh: from the continuous parameter distribution,
    or uniformly from ``sample_set`` rows when a fixed empirical measure is
    wanted. ``update`` selects plain SGD steps or adaptive-moment ("adam")
    steps with the usual (0.9, 0.999, 1e-8) constants. Divergence (non-finite
    iterate or gradient) raises immediately with the iteration index.
    """
    if n_iter < 1:
        raise ValueError(f"n_iter must be positive, got {n_iter}")
    if update not in ("sgd", "adam"):
        raise ValueError(f"unknown update rule {update!r}")
    if sample_set is not None:
        sample_set = np.asarray(sample_set, dtype=float)
        if sample_set.ndim != 2 or sample_set.shape[1] != data.field.s:
            raise ValueError(
                f"sample_set must have shape (N, {data.field.s}), got {sample_set.shape}"
            )
    ref_vec = ref.as_vector() if ref is not None else None

    xvec = x0.as_vector().copy()
    if radius is not None:
        xvec = project_ball(xvec, radius)
    m = np.zeros_like(xvec)
    v = np.zeros_like(xvec)
    n_log = (n_iter + log_every - 1) // log_every
    log_k = np.empty(n_log, dtype=np.int64)
    log_beta = np.empty(n_log)
    log_lam = np.empty(n_log)
    log_val = np.empty(n_log)
    log_err = np.full(n_log, np.nan)

    n = data.n_dof
    pos = 0
    for k in range(n_iter):
        if sample_set is None:
            y = sample_y(rng, data.field.s)
        else:
            y = sample_set[rng.integers(sample_set.shape[0])]
        beta = steps.beta(k)
        lam = penalties.value(k, beta)
        state = OptState(z=xvec[:n], theta_flat=xvec[n:])
        # Divergence shows up as inf/nan and is reported as a typed error below,
        # so the intermediate overflow itself is not a warning-worthy event.
        with np.errstate(all="ignore"):
            value, grad = sample_objective(data, sur, state, y, lam)

        if k % log_every == 0:
            log_k[pos] = k
            log_beta[pos] = beta
            log_lam[pos] = lam
            log_val[pos] = value
            if ref_vec is not None:
                diff = xvec - ref_vec
                log_err[pos] = float(diff @ diff)
            pos += 1

        if not np.all(np.isfinite(grad)):
            raise DivergenceError("non-finite gradient", iteration=k)
        if update == "sgd":
            xvec = xvec - beta * grad
        else:
            m = 0.9 * m + 0.1 * grad
            v = 0.999 * v + 0.001 * grad * grad
            mhat = m / (1.0 - 0.9 ** (k + 1))
            vhat = v / (1.0 - 0.999 ** (k + 1))
            xvec = xvec - beta * mhat / (np.sqrt(vhat) + 1e-8)
        if radius is not None:
            xvec = project_ball(xvec, radius)
        if not np.all(np.isfinite(xvec)):
            raise DivergenceError("non-finite iterate", iteration=k)

    return PenaltyRun(
        final_x=OptState(z=xvec[:n].copy(), theta_flat=xvec[n:].copy()),
        seed=seed_label,
        iters=log_k[:pos],
        betas=log_beta[:pos],
        lambdas=log_lam[:pos],
        values=log_val[:pos],
        err_sq=log_err[:pos],
    )


def batch_minimize(
    data: ProblemData,
    sur: Surrogate,
    x0: OptState,
    samples: np.ndarray,
    lam: float,
    tol: float = 1e-9,
    max_iter: int = 5000,
    history: int = 10,
) -> MinimizeResult:
    """Quasi-Newton (limited-memory BFGS) minimization of the batch objective.

    Stops when the gradient norm reaches ``tol`` (reason "gradient_tol") or
    after ``max_iter`` iterations (reason "max_iter", converged False). The
    gradient criterion is checked before anything else, so a start at the
    minimizer returns immediately. A failed backtracking line search raises
    StalledMinimizerError carrying the last iterate.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    objective = BatchObjective(data, sur, samples, lam)
    x = x0.as_vector().copy()
    f, g = objective(x)
    gnorm = float(np.linalg.norm(g))
    n = data.n_dof

    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []

    def two_loop(grad):
        q = grad.copy()
        alphas = []
        for s_v, y_v, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * float(s_v @ q)
            alphas.append(a)
            q -= a * y_v
        if y_hist:
            q *= float(s_hist[-1] @ y_hist[-1]) / float(y_hist[-1] @ y_hist[-1])
        for (s_v, y_v, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * float(y_v @ q)
            q += (a - b) * s_v
        return q

    it = 0
    while True:
        if gnorm <= tol:
            return MinimizeResult(
                OptState.from_vector(x, n), f, gnorm, it, True, "gradient_tol"
            )
        if it >= max_iter:
            return MinimizeResult(
                OptState.from_vector(x, n), f, gnorm, it, False, "max_iter"
            )
        d = -two_loop(g)
        slope = float(g @ d)
        if slope >= 0.0:
            d = -g
            slope = -gnorm * gnorm
        t = 1.0
        f_new = g_new = None
        for _ in range(60):
            x_try = x + t * d
            f_try, g_try = objective(x_try)
            if f_try <= f + 1e-4 * t * slope:
                f_new, g_new, x_new = f_try, g_try, x_try
                break
            t *= 0.5
        if f_new is None:
            raise StalledMinimizerError(
                f"line search stalled at iteration {it} (gradient norm {gnorm:.3e})",
                state=OptState.from_vector(x, n),
            )
        s_v = x_new - x
        y_v = g_new - g
        sy = float(s_v @ y_v)
        if sy > 1e-12 * float(np.linalg.norm(s_v)) * float(np.linalg.norm(y_v)):
            s_hist.append(s_v)
            y_hist.append(y_v)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > history:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        it += 1


def reduced_reference_solve(
    data: ProblemData,
    samples: np.ndarray,
    tol: float = 1e-9,
    max_iter: int | None = None,
) -> np.ndarray:
    """Exact-state reference control by conjugate gradients.

    The reduced objective is an SPD quadratic in z, so its gradient map is
    affine; CG runs on H z = -grad(0) with H applications realized as gradient
    differences. Terminates when the gradient norm is at most ``tol``.
    """
    applier = ReducedApplier(data, samples)
    n = data.n_dof
    if max_iter is None:
        max_iter = 10 * n + 100
    g0 = applier.value_and_grad(np.zeros(n))[1]
    b = -g0

    z = np.zeros(n)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    for _ in range(max_iter):
        if np.sqrt(rs) <= 0.5 * tol:
            break
        hp = applier.value_and_grad(p)[1] - g0
        ph = float(p @ hp)
        if ph <= 0:
            raise SolverFailureError("reduced Hessian application lost positivity")
        a = rs / ph
        z += a * p
        r -= a * hp
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    grad = applier.value_and_grad(z)[1]
    gnorm = float(np.linalg.norm(grad))
    if gnorm > tol:
        raise SolverFailureError(
            "conjugate gradients did not reach the gradient tolerance", residual=gnorm
        )
    return z
