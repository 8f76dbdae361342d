"""Affine-parametric diffusion coefficient on the unit square.

The coefficient is a(y, x) = a0 + sum_j y_j w_j sin(pi k_j x1) sin(pi l_j x2)
with y uniform on [-1, 1]^s. The constant a0 is chosen from the modes so the
coefficient stays positive, giving a uniformly elliptic operator for every
admissible parameter. Modes are tabulated at element centroids because the
assembly uses one coefficient value per triangle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EllipticityError
from .fem import Mesh

__all__ = ["DiffusionField", "build_field", "diffusion_at", "sample_y"]

ELLIPTICITY_FLOOR = 1e-5


def _mode_pairs(s: int) -> np.ndarray:
    """First s frequency pairs from {1..s}^2, ordered by k^2 + l^2, lex tie-break."""
    pairs = sorted(
        ((k, l) for k in range(1, s + 1) for l in range(1, s + 1)),
        key=lambda p: (p[0] ** 2 + p[1] ** 2, p),
    )
    return np.array(pairs[:s], dtype=np.int64)


@dataclass(frozen=True)
class DiffusionField:
    """Mesh-bound affine diffusion field.

    ``psi_element[t, j]`` holds mode j (weight included) at the centroid of
    triangle t, so a(y) per element is ``a0 + psi_element @ y``.
    """

    s: int
    theta_decay: float
    tau: float
    pairs: np.ndarray        # (s, 2) integer frequency pairs
    weights: np.ndarray      # (s,)
    a0: float
    psi_element: np.ndarray  # (n_tri, s)


def build_field(mesh: Mesh, s: int, theta_decay: float = 0.25, tau: float = 3.0) -> DiffusionField:
    if s < 1:
        raise ValueError(f"s must be a positive integer, got {s}")
    pairs = _mode_pairs(s)
    sums = (pairs**2).sum(axis=1).astype(float)
    weights = (np.pi**2 * sums + tau**2) ** (-theta_decay)
    cx = mesh.centroids[:, 0]
    cy = mesh.centroids[:, 1]
    psi = weights[None, :] * np.sin(np.pi * pairs[None, :, 0] * cx[:, None]) * np.sin(
        np.pi * pairs[None, :, 1] * cy[:, None]
    )
    a0 = ELLIPTICITY_FLOOR + float(np.abs(psi.sum(axis=1)).max())
    return DiffusionField(
        s=s,
        theta_decay=theta_decay,
        tau=tau,
        pairs=pairs,
        weights=weights,
        a0=a0,
        psi_element=psi,
    )


def diffusion_at(field: DiffusionField, y: np.ndarray) -> np.ndarray:
    """Per-element coefficient values a0 + sum_j y_j psi_j at one parameter.

    The a0 construction keeps this positive for every y drawn from the
    parameter box; a nonpositive value would mean the field was built
    inconsistently, so it is treated as a contract violation.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (field.s,):
        raise ValueError(f"y must have shape ({field.s},), got {y.shape}")
    vals = field.a0 + field.psi_element @ y
    if not np.all(vals > 0.0):
        raise EllipticityError(
            f"diffusion coefficient lost positivity (min {vals.min():.6e}); "
            "parameter outside the admissible box?"
        )
    return vals


def sample_y(rng: np.random.Generator, s: int) -> np.ndarray:
    """One parameter draw, uniform on [-1, 1]^s."""
    return rng.uniform(-1.0, 1.0, size=s)
