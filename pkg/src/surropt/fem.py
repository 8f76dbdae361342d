"""Piecewise-linear finite elements on the unit square with zero Dirichlet data.

The mesh is a uniform triangulation of (0,1)^2: n_div subdivisions per side,
each cell split along its lower-left to upper-right diagonal. All assembled
operators act on interior degrees of freedom only; boundary values are
eliminated, never stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EllipticityError, SolverFailureError

__all__ = [
    "Mesh",
    "SymmetricOperator",
    "build_mesh",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_load",
    "solve_spd",
    "l2_error",
]

# Residual contract for direct SPD solves.
SOLVE_RTOL = 1e-10

# 6-point triangle rule, exact for polynomials of total degree 4
# (barycentric coordinates of the last two vertices, plus weights summing to 1).
_QUAD_PTS = np.array(
    [
        [0.44594849091597, 0.44594849091597],
        [0.10810301816807, 0.44594849091597],
        [0.44594849091597, 0.10810301816807],
        [0.09157621350977, 0.09157621350977],
        [0.81684757298046, 0.09157621350977],
        [0.09157621350977, 0.81684757298046],
    ]
)
_QUAD_WTS = np.array([0.22338158967801] * 3 + [0.10995174365532] * 3)


@dataclass(frozen=True)
class Mesh:
    """Uniform triangulation of the unit square.

    Nodes are laid out row-major (x fastest). ``interior`` maps node index to
    interior DOF index, -1 on the boundary; ``dof_nodes`` is the inverse map.
    Per-triangle geometry (areas, constant basis gradients, centroids) is
    precomputed because assembly and field evaluation both need it.
    """

    n_div: int
    nodes: np.ndarray        # (n_nodes, 2)
    triangles: np.ndarray    # (n_tri, 3) node indices, counterclockwise
    interior: np.ndarray     # (n_nodes,) node -> DOF or -1
    dof_nodes: np.ndarray    # (n_dof,) DOF -> node
    areas: np.ndarray        # (n_tri,)
    grads: np.ndarray        # (n_tri, 3, 2) gradients of the three hat restrictions
    centroids: np.ndarray    # (n_tri, 2)

    @property
    def h(self) -> float:
        return 1.0 / self.n_div

    @property
    def n_dof(self) -> int:
        return (self.n_div - 1) ** 2

    @property
    def n_tri(self) -> int:
        return self.triangles.shape[0]


@dataclass(frozen=True)
class SymmetricOperator:
    """Symmetric sparse matrix on interior DOFs, CSR-backed."""

    matrix: sp.csr_matrix
    _dense_cache: list = field(default_factory=list, repr=False, compare=False)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Matrix-vector (or matrix-matrix, column-wise) product."""
        return self.matrix @ v

    def __matmul__(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def dense(self) -> np.ndarray:
        if not self._dense_cache:
            self._dense_cache.append(self.matrix.toarray())
        return self._dense_cache[0]

    def entries(self):
        """COO triples (row, col, value); one triple per stored pair, row <= col."""
        coo = sp.triu(self.matrix).tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))


def build_mesh(n_div: int) -> Mesh:
    """Build the uniform triangulation with ``n_div`` subdivisions per side."""
    if n_div < 2:
        raise ValueError(f"n_div must be >= 2 to have interior nodes, got {n_div}")
    n1 = n_div + 1
    xs = np.linspace(0.0, 1.0, n1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    # Cells visited row-major; each yields (lower-right, upper-left) triangle pair,
    # both counterclockwise, sharing the lower-left -> upper-right diagonal.
    ix, iy = np.meshgrid(np.arange(n_div), np.arange(n_div), indexing="xy")
    a = (iy * n1 + ix).ravel()
    b = a + 1
    c = a + n1 + 1
    d = a + n1
    tris = np.empty((2 * n_div * n_div, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, c])
    tris[1::2] = np.column_stack([a, c, d])

    interior = -np.ones(n1 * n1, dtype=np.int64)
    gx, gy = np.meshgrid(np.arange(1, n_div), np.arange(1, n_div), indexing="xy")
    inner_nodes = (gy * n1 + gx).ravel()
    interior[inner_nodes] = np.arange(inner_nodes.size)

    pts = nodes[tris]  # (n_tri, 3, 2)
    v1 = pts[:, 1] - pts[:, 0]
    v2 = pts[:, 2] - pts[:, 0]
    areas = 0.5 * (v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])
    x = pts[..., 0]
    y = pts[..., 1]
    grads = np.empty((tris.shape[0], 3, 2))
    grads[..., 0] = (np.roll(y, -1, axis=1) - np.roll(y, -2, axis=1)) / (2.0 * areas[:, None])
    grads[..., 1] = (np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)) / (2.0 * areas[:, None])
    centroids = pts.mean(axis=1)

    return Mesh(
        n_div=n_div,
        nodes=nodes,
        triangles=tris,
        interior=interior,
        dof_nodes=inner_nodes,
        areas=areas,
        grads=grads,
        centroids=centroids,
    )


def _scatter_local(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    """Sum per-triangle 3x3 local matrices into the interior-DOF sparse matrix."""
    dofs = mesh.interior[mesh.triangles]  # (n_tri, 3), -1 on boundary
    rows = np.repeat(dofs[:, :, None], 3, axis=2)
    cols = np.repeat(dofs[:, None, :], 3, axis=1)
    keep = (rows >= 0) & (cols >= 0)
    n = mesh.n_dof
    mat = sp.coo_matrix(
        (local[keep], (rows[keep], cols[keep])), shape=(n, n)
    ).tocsr()
    mat.sum_duplicates()
    return mat


def _assemble_stiffness_values(mesh: Mesh, coeff: np.ndarray) -> sp.csr_matrix:
    # No sign check: the affine field decomposition assembles sign-indefinite parts.
    gg = np.einsum("tad,tbd->tab", mesh.grads, mesh.grads)
    local = coeff[:, None, None] * mesh.areas[:, None, None] * gg
    return _scatter_local(mesh, local)


def assemble_stiffness(mesh: Mesh, coeff: np.ndarray) -> SymmetricOperator:
    """Stiffness matrix for a piecewise-constant diffusion coefficient.

    ``coeff`` holds one value per triangle, aligned with ``mesh.triangles``.
    All values must be strictly positive (ellipticity).
    """
    coeff = np.asarray(coeff, dtype=float)
    if coeff.shape != (mesh.n_tri,):
        raise ValueError(
            f"coeff must have one value per triangle ({mesh.n_tri}), got shape {coeff.shape}"
        )
    if not np.all(coeff > 0.0):
        raise EllipticityError(
            f"diffusion coefficient must be strictly positive; min value {coeff.min():.6e}"
        )
    return SymmetricOperator(_assemble_stiffness_values(mesh, coeff))


def assemble_mass(mesh: Mesh) -> SymmetricOperator:
    """Mass matrix on interior DOFs (exact integration of hat products)."""
    base = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    local = mesh.areas[:, None, None] * base[None, :, :]
    return SymmetricOperator(_scatter_local(mesh, local))


def assemble_load(mesh: Mesh, f) -> np.ndarray:
    """Load vector: per-triangle one-point (centroid) quadrature of f against hats.

    ``f(x, y)`` must accept equal-shape coordinate arrays and return an array
    of the same shape.
    """
    fc = np.asarray(f(mesh.centroids[:, 0], mesh.centroids[:, 1]), dtype=float)
    if fc.shape != (mesh.n_tri,):
        raise ValueError(
            f"f must map centroid coordinate arrays to shape ({mesh.n_tri},), got {fc.shape}"
        )
    contrib = mesh.areas * fc / 3.0
    b = np.zeros(mesh.n_dof)
    dofs = mesh.interior[mesh.triangles]
    keep = dofs >= 0
    np.add.at(b, dofs[keep], np.repeat(contrib[:, None], 3, axis=1)[keep])
    return b


def solve_spd(op: SymmetricOperator, rhs: np.ndarray) -> np.ndarray:
    """Direct solve of a symmetric positive definite system.

    Verifies the relative residual ||Av - b|| / ||b|| <= 1e-10 and raises
    SolverFailureError (carrying the achieved residual) otherwise.
    A zero right-hand side returns the zero vector exactly.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (op.dimension,):
        raise ValueError(f"rhs shape {rhs.shape} does not match dimension {op.dimension}")
    nrm = np.linalg.norm(rhs)
    if nrm == 0.0:
        return np.zeros_like(rhs)
    v = spla.spsolve(op.matrix.tocsc(), rhs)
    residual = np.linalg.norm(op.matrix @ v - rhs) / nrm
    if not np.isfinite(residual) or residual > SOLVE_RTOL:
        raise SolverFailureError("SPD solve missed its residual contract", residual=residual)
    return v


def l2_error(mesh: Mesh, dof_values: np.ndarray, exact) -> float:
    """L2 norm of (P1 interpolant - exact) via a degree-4 triangle rule.

    ``dof_values`` lives on interior DOFs; the boundary contribution uses the
    homogeneous Dirichlet value 0. ``exact(x, y)`` must be vectorized.
    """
    full = np.zeros(mesh.nodes.shape[0])
    full[mesh.dof_nodes] = dof_values
    pts = mesh.nodes[mesh.triangles]      # (n_tri, 3, 2)
    vals = full[mesh.triangles]           # (n_tri, 3)
    err2 = 0.0
    for q in range(_QUAD_PTS.shape[0]):
        lam = np.array([1.0 - _QUAD_PTS[q].sum(), _QUAD_PTS[q, 0], _QUAD_PTS[q, 1]])
        xy = np.einsum("a,tad->td", lam, pts)
        uh = vals @ lam
        diff = uh - exact(xy[:, 0], xy[:, 1])
        err2 += _QUAD_WTS[q] * float(np.sum(mesh.areas * diff * diff))
    return float(np.sqrt(err2))
