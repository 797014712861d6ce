"""Complex dense linear algebra: pseudo-inverse, Gram-Schmidt, lattice volume.

All functions are pure; matrices are numpy complex arrays whose columns are
basis vectors (or whose rows are channel rows, as documented per use).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DependentColumns, SingularChannel


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances used throughout the package."""

    singular_ratio: float = 1e-12      # smallest/largest singular value of H H^H
    pinv_residual: float = 1e-8        # ||H H+ - I||
    gs_ortho: float = 1e-9             # Gram-Schmidt pairwise orthogonality
    gs_reconstruct: float = 1e-9       # Gram-Schmidt reconstruction, relative
    dependent_ratio: float = 1e-14     # ||bhat_i||^2 / ||b_i||^2 dependency cut
    volume_rel: float = 1e-9           # volume invariance under unimodular maps
    lll_condition: float = 1e-9        # slack when checking the LLL conditions
    lll_swap: float = 1e-12            # slack on the Lovasz swap test
    integer_entry: float = 1e-9        # Gaussian-integrality of U, U^-1
    unimodular_det: float = 1e-6       # | |det U| - 1 |
    dual_pairing: float = 1e-8         # <a_i, b_j> = delta_ij
    coset_integrality: float = 1e-6    # Gaussian-integrality of recovered l


TOL = Tolerances()

#: hard cap on LLL swap iterations; must never fire on valid input
LLL_SWAP_CAP = 10 ** 6


def as_cmat(a) -> np.ndarray:
    """Validate and return a 2-D complex matrix with finite entries."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def pseudo_inverse(H) -> np.ndarray:
    """Right pseudo-inverse H+ with H H+ = I, for full-row-rank H.

    Computed through the SVD rather than the normal equations, since the
    channels of interest are frequently near-singular.

    Raises SingularChannel when the smallest singular value falls below
    ``TOL.singular_ratio`` times the largest.
    """
    H = as_cmat(H)
    if H.shape[0] > H.shape[1]:
        raise ValueError("pseudo_inverse expects rows <= cols (full row rank)")
    u, s, vh = np.linalg.svd(H, full_matrices=False)
    if s[-1] <= TOL.singular_ratio * s[0]:
        raise SingularChannel(
            f"singular value ratio {s[-1] / s[0]:.3e} below {TOL.singular_ratio:.0e}"
        )
    return (vh.conj().T * (1.0 / s)) @ u.conj().T


@dataclass(frozen=True)
class GramSchmidtDecomp:
    """Orthogonalization of a basis: ortho[:, i] = bhat_i, mu lower triangular.

    Satisfies b_i = bhat_i + sum_{j<i} mu[i, j] * bhat_j.
    """

    ortho: np.ndarray
    mu: np.ndarray

    @property
    def sq_norms(self) -> np.ndarray:
        """Squared norms ||bhat_i||^2."""
        return np.sum(np.abs(self.ortho) ** 2, axis=0).real


def gram_schmidt(B) -> GramSchmidtDecomp:
    """Gram-Schmidt orthogonalization with mu_ij = <b_i, bhat_j>/<bhat_j, bhat_j>.

    Uses the modified (re-orthogonalizing) update order for stability; the
    result agrees with the classical recursion on well-conditioned input.

    Raises DependentColumns if some orthogonalized vector nearly vanishes.
    """
    B = as_cmat(B)
    n, m = B.shape
    ortho = B.astype(complex).copy()
    mu = np.zeros((m, m), dtype=complex)
    for i in range(m):
        for j in range(i):
            denom = np.vdot(ortho[:, j], ortho[:, j]).real
            c = np.vdot(ortho[:, j], ortho[:, i]) / denom
            mu[i, j] = c
            ortho[:, i] -= c * ortho[:, j]
        if np.vdot(ortho[:, i], ortho[:, i]).real < TOL.dependent_ratio * np.vdot(
            B[:, i], B[:, i]
        ).real:
            raise DependentColumns(f"column {i} is dependent on earlier columns")
    np.fill_diagonal(mu, 1.0)
    return GramSchmidtDecomp(ortho=ortho, mu=mu)


def lattice_volume(B) -> float:
    """Volume (det B^H B)^(1/2) of the lattice generated by the columns of B."""
    B = as_cmat(B)
    s = np.linalg.svd(B, compute_uv=False)
    if s[-1] ** 2 < TOL.dependent_ratio * s[0] ** 2:
        raise DependentColumns("basis has (near-)dependent columns")
    return float(np.prod(s))
