"""Complex (Gaussian-integer) lattice algorithms.

LLL reduction with unimodular tracking, orthogonality defect, dual basis,
exact closest-point enumeration, Babai nearest-plane, and a brute-force
shortest-vector scan for small dimensions.

Vectors over Z[i] are represented as numpy complex arrays whose real and
imaginary parts are exact integers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import BoundTooSmall, DependentColumns, NonTermination
from .linalg import LLL_SWAP_CAP, TOL, as_cmat, gram_schmidt, lattice_volume


def gaussian_round(z):
    """Round real and imaginary parts to the nearest integer."""
    return np.round(np.real(z)) + 1j * np.round(np.imag(z))


def is_gaussian_integral(z, tol: float = TOL.integer_entry) -> bool:
    """True if every entry has integral real and imaginary parts within tol."""
    z = np.asarray(z, dtype=complex)
    return bool(np.all(np.abs(z - gaussian_round(z)) <= tol))


def orthogonality_defect(B) -> float:
    """delta = prod ||b_i||^2 / det(B^H B); equals 1 iff B is orthogonal."""
    B = as_cmat(B)
    vol = lattice_volume(B)
    log_num = float(np.sum(np.log(np.sum(np.abs(B) ** 2, axis=0))))
    return float(np.exp(log_num - 2.0 * np.log(vol)))


@dataclass(frozen=True)
class ReducedBasis:
    """An LLL-reduced basis with its unimodular transform and quality metrics.

    reduced = original @ unimodular, where unimodular and its inverse have
    Gaussian-integer entries and unit-magnitude determinant.
    """

    original: np.ndarray
    reduced: np.ndarray
    unimodular: np.ndarray
    unimodular_inverse: np.ndarray
    defect: float
    lll_p: float


@njit(cache=True)
def _lll_gs_update(basis, ortho, mu, norms2, i, tol_dep):  # pragma: no cover
    """Recompute Gram-Schmidt row i from the current basis. False if dependent."""
    n = basis.shape[0]
    v = basis[:, i].copy()
    b2 = 0.0
    for r in range(n):
        b2 += basis[r, i].real ** 2 + basis[r, i].imag ** 2
    for j in range(i):
        c = 0.0 + 0.0j
        for r in range(n):
            c += np.conj(ortho[r, j]) * basis[r, i]
        c /= norms2[j]
        mu[i, j] = c
        for r in range(n):
            v[r] -= c * ortho[r, j]
    nv = 0.0
    for r in range(n):
        nv += v[r].real ** 2 + v[r].imag ** 2
    if nv < tol_dep * b2:
        return False
    for r in range(n):
        ortho[r, i] = v[r]
    norms2[i] = nv
    mu[i, i] = 1.0 + 0.0j
    return True


@njit(cache=True)
def _lll_kernel(basis, U, Uinv, p, tol_dep, tol_swap, swap_cap):  # pragma: no cover
    """In-place LLL loop; returns 0 on success, -1 if dependent, -2 if capped."""
    n, m = basis.shape
    ortho = np.zeros((n, m), dtype=np.complex128)
    mu = np.zeros((m, m), dtype=np.complex128)
    norms2 = np.zeros(m)
    for i in range(m):
        if not _lll_gs_update(basis, ortho, mu, norms2, i, tol_dep):
            return -1

    swaps = 0
    k = 1
    while k < m:
        # Row k of mu may be stale after swaps below; refresh before using it.
        if not _lll_gs_update(basis, ortho, mu, norms2, k, tol_dep):
            return -1
        for j in range(k - 1, -1, -1):
            q = complex(np.rint(mu[k, j].real), np.rint(mu[k, j].imag))
            if q != 0:
                for r in range(n):
                    basis[r, k] -= q * basis[r, j]
                for r in range(m):
                    U[r, k] -= q * U[r, j]
                    Uinv[j, r] += q * Uinv[k, r]
                for c in range(j + 1):
                    mu[k, c] -= q * mu[j, c]
            if j == k - 1:
                # Lovasz test with slack to avoid floating-point ping-pong.
                lhs = norms2[k]
                m2 = mu[k, k - 1].real ** 2 + mu[k, k - 1].imag ** 2
                rhs = (p - m2) * norms2[k - 1]
                if lhs < rhs - tol_swap * norms2[k - 1]:
                    for r in range(n):
                        tmp = basis[r, k - 1]
                        basis[r, k - 1] = basis[r, k]
                        basis[r, k] = tmp
                    for r in range(m):
                        tmp = U[r, k - 1]
                        U[r, k - 1] = U[r, k]
                        U[r, k] = tmp
                        tmp = Uinv[k - 1, r]
                        Uinv[k - 1, r] = Uinv[k, r]
                        Uinv[k, r] = tmp
                    if not _lll_gs_update(basis, ortho, mu, norms2, k - 1, tol_dep):
                        return -1
                    swaps += 1
                    if swaps > swap_cap:
                        return -2
                    k = max(k - 1, 1)
                    break
        else:
            k += 1
    return 0


def complex_lll(B, p: float = 0.75) -> ReducedBasis:
    """LLL-reduce a complex basis natively over Z[i].

    Size reduction rounds mu to the nearest Gaussian integer, so the reduced
    basis satisfies |Re mu_ij| <= 1/2 and |Im mu_ij| <= 1/2; the Lovasz
    condition uses parameter p in (1/4, 1).
    """
    B = as_cmat(B)
    if not 0.25 < p < 1.0:
        raise ValueError(f"Lovasz parameter p must be in (1/4, 1), got {p}")
    m = B.shape[1]
    basis = np.ascontiguousarray(B, dtype=np.complex128).copy()
    U = np.eye(m, dtype=np.complex128)
    Uinv = np.eye(m, dtype=np.complex128)
    status = _lll_kernel(
        basis, U, Uinv, float(p), TOL.dependent_ratio, TOL.lll_swap, LLL_SWAP_CAP
    )
    if status == -1:
        raise DependentColumns("basis has (near-)dependent columns")
    if status == -2:
        raise NonTermination("LLL swap cap exceeded")

    return ReducedBasis(
        original=B,
        reduced=basis,
        unimodular=U,
        unimodular_inverse=Uinv,
        defect=orthogonality_defect(basis),
        lll_p=p,
    )


def is_lll_reduced(B, p: float) -> tuple[bool, str | None]:
    """Check both LLL conditions; returns (ok, first violated condition or None)."""
    B = as_cmat(B)
    gs = gram_schmidt(B)
    m = B.shape[1]
    norms2 = gs.sq_norms
    for i in range(1, m):
        for j in range(i):
            c = gs.mu[i, j]
            if abs(c.real) > 0.5 + TOL.lll_condition or abs(c.imag) > 0.5 + TOL.lll_condition:
                return False, f"size reduction violated at mu[{i},{j}] = {c:.6g}"
    for i in range(m - 1):
        lhs = p * norms2[i]
        rhs = norms2[i + 1] + abs(gs.mu[i + 1, i]) ** 2 * norms2[i]
        if rhs < lhs - TOL.lll_condition * norms2[i]:
            return False, f"Lovasz condition violated between columns {i} and {i + 1}"
    return True, None


def dual_basis(B) -> np.ndarray:
    """Dual basis A with <a_i, b_j> = delta_ij, columns in the span of B."""
    B = as_cmat(B)
    gram = B.conj().T @ B
    s = np.linalg.svd(B, compute_uv=False)
    if s[-1] ** 2 < TOL.dependent_ratio * s[0] ** 2:
        raise DependentColumns("basis has (near-)dependent columns")
    return B @ np.linalg.inv(gram)


def babai_nearest(B, target) -> np.ndarray:
    """Babai nearest-plane approximation to the closest lattice point.

    Returns the Gaussian-integer coefficient vector z; B @ z approximates
    target.
    """
    B = as_cmat(B)
    gs = gram_schmidt(B)
    m = B.shape[1]
    r = np.asarray(target, dtype=complex).copy()
    z = np.zeros(m, dtype=complex)
    for i in range(m - 1, -1, -1):
        c = np.vdot(gs.ortho[:, i], r) / gs.sq_norms[i]
        z[i] = gaussian_round(c)
        r -= z[i] * B[:, i]
    return z


# ---------------------------------------------------------------------------
# Exact closest-point enumeration (Schnorr-Euchner, real embedding)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _se_enumerate(R, ys, out):  # pragma: no cover - exercised via wrapper
    """Depth-first Schnorr-Euchner search minimizing ||R x - y|| per column of ys.

    R is upper triangular with positive diagonal; integer minimizers are
    written into out (same shape as ys). Children are visited in zig-zag
    order; the radius shrinks on strict improvement, so the first leaf
    (the Babai point of R) seeds the radius and ties keep the first visit.
    """
    n = R.shape[0]
    ntargets = ys.shape[1]
    x = np.zeros(n)
    bestx = np.zeros(n)
    partdist = np.zeros(n + 1)
    cexp = np.zeros(n)
    delta = np.zeros(n)
    for t in range(ntargets):
        y = ys[:, t]
        bestdist = np.inf
        k = n - 1
        cexp[k] = y[k]
        c = cexp[k] / R[k, k]
        x[k] = np.rint(c)
        delta[k] = 1.0 if c - x[k] >= 0 else -1.0
        while True:
            d = cexp[k] - R[k, k] * x[k]
            newdist = partdist[k + 1] + d * d
            if newdist < bestdist:
                if k > 0:
                    partdist[k] = newdist
                    k -= 1
                    s = y[k]
                    for j in range(k + 1, n):
                        s -= R[k, j] * x[j]
                    cexp[k] = s
                    c = s / R[k, k]
                    x[k] = np.rint(c)
                    delta[k] = 1.0 if c - x[k] >= 0 else -1.0
                    continue
                bestdist = newdist
                for j in range(n):
                    bestx[j] = x[j]
                x[k] += delta[k]
                delta[k] = -delta[k] - (1.0 if delta[k] > 0 else -1.0)
            else:
                k += 1
                if k == n:
                    break
                x[k] += delta[k]
                delta[k] = -delta[k] - (1.0 if delta[k] > 0 else -1.0)
        for j in range(n):
            out[j, t] = bestx[j]


def real_embedding(B) -> np.ndarray:
    """Map an n x m complex matrix to its 2n x 2m real representation."""
    B = np.asarray(B, dtype=complex)
    return np.block([[B.real, -B.imag], [B.imag, B.real]])


class SphereDecoder:
    """Exact CVP solver for a fixed complex basis, reusable across targets.

    Reduces the basis once, QR-factors the real embedding, and enumerates
    with Schnorr-Euchner search per target.
    """

    def __init__(self, B, pre_reduce: bool = True):
        B = as_cmat(B)
        self.basis = B
        m = B.shape[1]
        if pre_reduce:
            rb = complex_lll(B)
            self._red = rb.reduced
            self._U = rb.unimodular
        else:
            self._red = B
            self._U = np.eye(m, dtype=complex)
        Br = real_embedding(self._red)
        q, r = np.linalg.qr(Br)
        # normalize to a positive diagonal
        sgn = np.sign(np.diag(r))
        sgn[sgn == 0] = 1.0
        self._Q = q * sgn
        self._R = r * sgn[:, None]
        self._m = m

    def decode(self, targets) -> np.ndarray:
        """Closest-point coefficients (in the original basis) per target column."""
        T = np.asarray(targets, dtype=complex)
        single = T.ndim == 1
        if single:
            T = T[:, None]
        Tr = np.vstack([T.real, T.imag])
        ys = self._Q.T @ Tr
        out = np.empty_like(ys)
        _se_enumerate(self._R, np.ascontiguousarray(ys), out)
        zr = out[: self._m] + 1j * out[self._m :]
        z = self._U @ zr
        return z[:, 0] if single else z


def closest_point_sphere(B, target) -> np.ndarray:
    """Exact closest lattice point: z minimizing ||B z - target|| over Z[i]^m."""
    return SphereDecoder(B).decode(np.asarray(target, dtype=complex))


@njit(cache=True)
def _min_dist_2d_batch(bases, exact_below):  # pragma: no cover - via wrapper
    """Minimum distance for a batch of 2-column complex lattices.

    Per lattice: Gauss-style reduction over Z[i], then exact enumeration of
    the bounded coefficient box. The reduced pair gives the certified lower
    bound min(||b1||, ||bhat2||); when it exceeds exact_below, ||b1|| is
    returned without enumeration (still an upper bound, and every distance
    <= exact_below remains exact).
    """
    t = bases.shape[0]
    n = bases.shape[1]
    out = np.empty(t)
    for i in range(t):
        b1 = bases[i, :, 0].copy()
        b2 = bases[i, :, 1].copy()
        mu = 0.0 + 0.0j
        for _ in range(64):
            n1 = 0.0
            n2 = 0.0
            for r in range(n):
                n1 += b1[r].real ** 2 + b1[r].imag ** 2
                n2 += b2[r].real ** 2 + b2[r].imag ** 2
            if n1 > n2:
                for r in range(n):
                    tmp = b1[r]
                    b1[r] = b2[r]
                    b2[r] = tmp
                n1, n2 = n2, n1
            ip = 0.0 + 0.0j
            for r in range(n):
                ip += np.conj(b1[r]) * b2[r]
            mu = ip / n1
            q = complex(np.rint(mu.real), np.rint(mu.imag))
            if q == 0:
                break
            for r in range(n):
                b2[r] -= q * b1[r]
        n1 = 0.0
        n2 = 0.0
        for r in range(n):
            n1 += b1[r].real ** 2 + b1[r].imag ** 2
            n2 += b2[r].real ** 2 + b2[r].imag ** 2
        hat2 = n2 - (mu.real**2 + mu.imag**2) * n1
        if hat2 < 0.0:
            hat2 = 0.0
        lower = min(n1, hat2)
        d1 = np.sqrt(n1)
        if lower > exact_below * exact_below:
            out[i] = d1
            continue
        # exhaustive box: |z1| <= 2, |z2|^2 <= 2 componentwise suffices once
        # the basis is reduced (see shortest_vector_bruteforce for the dual
        # argument; here the bounds follow from mu-reduction).
        best = n1
        for a1 in range(-2, 3):
            for a2 in range(-2, 3):
                z1 = complex(a1, a2)
                for c1 in range(-1, 2):
                    for c2 in range(-1, 2):
                        z2 = complex(c1, c2)
                        if z2 == 0 and z1 == 0:
                            continue
                        v2 = 0.0
                        for r in range(n):
                            w = z1 * b1[r] + z2 * b2[r]
                            v2 += w.real**2 + w.imag**2
                        if v2 < best:
                            best = v2
        out[i] = np.sqrt(best)
    return out


def min_distance_2d(bases, exact_below: float = np.inf) -> np.ndarray:
    """Batched shortest-vector lengths for 2-column complex bases.

    ``bases`` has shape (trials, n, 2). Distances at or below ``exact_below``
    are exact; larger outputs are only guaranteed to exceed it.
    """
    bases = np.ascontiguousarray(np.asarray(bases, dtype=np.complex128))
    if bases.ndim != 3 or bases.shape[2] != 2:
        raise ValueError("expected an array of shape (trials, n, 2)")
    return _min_dist_2d_batch(bases, float(exact_below))


def shortest_vector_bruteforce(B, search_bound: float) -> tuple[np.ndarray, float]:
    """Shortest nonzero lattice vector by exhaustive scan of a coefficient box.

    The per-coordinate box |Re z_i|, |Im z_i| <= ||a_i|| * search_bound follows
    from the dual basis (z_i = <a_i, B z>), so every lattice point within the
    bound is covered. Intended for m <= 4; pass a reduced basis to keep the
    box small.

    Returns (z, d) with d = ||B z|| minimal; raises BoundTooSmall when no
    nonzero point lies within the bound.
    """
    B = as_cmat(B)
    m = B.shape[1]
    if m > 4:
        raise ValueError("brute-force scan is limited to m <= 4")
    if search_bound <= 0:
        raise BoundTooSmall("search bound must be positive")
    A = dual_basis(B)
    dual_norms = np.sqrt(np.sum(np.abs(A) ** 2, axis=0).real)
    ks = np.floor(dual_norms * search_bound + 1e-12).astype(int)
    ranges = []
    for i in range(m):
        side = np.arange(-ks[i], ks[i] + 1)
        ranges.append(side)
        ranges.append(side)
    grids = np.meshgrid(*ranges, indexing="ij")
    flat = [g.ravel() for g in grids]
    Z = np.empty((m, flat[0].size), dtype=complex)
    for i in range(m):
        Z[i] = flat[2 * i] + 1j * flat[2 * i + 1]
    pts = B @ Z
    d2 = np.sum(np.abs(pts) ** 2, axis=0).real
    nonzero = np.any(Z != 0, axis=0)
    ok = nonzero & (d2 <= search_bound**2 + 1e-12)
    if not np.any(ok):
        raise BoundTooSmall(f"no nonzero lattice point within {search_bound}")
    idx = int(np.argmin(np.where(ok, d2, np.inf)))
    return Z[:, idx].copy(), float(np.sqrt(d2[idx]))
