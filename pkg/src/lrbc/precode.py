"""Transmitter-side schemes for the MIMO broadcast channel.

Channel inversion, lattice-reduction-aided (LRA) precoding with and without
the per-block shift vector, the regularized variant, vector perturbation,
modified perturbation, unequal-rate allocation, and power normalization.

Data convention: user i draws symbols from the odd Gaussian-integer grid
{+-1, +-3, ..., +-(a_i - 1)} + i{...} with a_i = 2^(R_i / 2), so the
per-user modulo period is 2 a_i and the grid is origin-symmetric. The
paper-style [0, a) integer grid with post-hoc centering is available for
the plain inversion paths via ``convention="paper"``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstellationTooLarge, NonIntegerMatrix, NonOddData
from .lattice import (
    ReducedBasis,
    SphereDecoder,
    complex_lll,
    gaussian_round,
    is_gaussian_integral,
)
from .linalg import TOL, as_cmat, pseudo_inverse

SCHEMES = ("ZF", "LRA", "LRA_SHIFT", "LRA_REG", "PERTURB", "PERTURB_MOD", "LRA_UNEQUAL")

#: cap on total constellation points for exact power enumeration
EXACT_POWER_CAP = 2 ** 16


@dataclass(frozen=True)
class RateAllocation:
    """Per-user even rates R_i (bits/channel use) and grid sizes a_i = 2^(R_i/2)."""

    rates: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=int)
        if np.any(r < 0) or np.any(r % 2 != 0):
            raise ValueError(f"rates must be even and nonnegative, got {r}")
        object.__setattr__(self, "rates", r)

    @classmethod
    def equal(cls, n_users: int, rate: int) -> "RateAllocation":
        return cls(np.full(n_users, rate, dtype=int))

    @property
    def n_users(self) -> int:
        return self.rates.size

    @property
    def moduli(self) -> np.ndarray:
        """Grid sizes a_i = 2^(R_i/2) (exactly, as floats)."""
        return 2.0 ** (self.rates / 2)

    @property
    def periods(self) -> np.ndarray:
        """Modulo periods of the odd grid, 2 a_i."""
        return 2.0 * self.moduli

    @property
    def active_users(self) -> np.ndarray:
        return np.flatnonzero(self.rates > 0)

    @property
    def sum_rate(self) -> int:
        return int(self.rates.sum())

    def constellation_size(self) -> int:
        """Total number of data vectors, prod a_i^2 over active users."""
        return int(np.prod(self.moduli[self.active_users] ** 2))

    def is_equal_rate(self) -> bool:
        return bool(np.all(self.rates == self.rates[0]))


@dataclass(frozen=True)
class PrecodedSignal:
    """One precoded symbol: transmit x/scale, with optional per-block shift."""

    x: np.ndarray
    scale: float
    shift: np.ndarray
    scheme: str


def modulo_vec(v, moduli) -> np.ndarray:
    """Componentwise modulo: real and imaginary parts of entry i into [0, a_i)."""
    if isinstance(moduli, RateAllocation):
        moduli = moduli.moduli
    v = np.asarray(v, dtype=complex)
    m = np.broadcast_to(np.asarray(moduli, dtype=float), v.shape[:1] or v.shape)
    if np.any(m <= 0):
        raise ValueError("moduli must be positive")
    if v.ndim > 1:
        m = m.reshape(-1, *([1] * (v.ndim - 1)))
    re = np.mod(v.real, m)
    im = np.mod(v.imag, m)
    # np.mod of a tiny negative can round to the modulus itself; keep [0, m)
    re = np.where(re >= m, 0.0, re)
    im = np.where(im >= m, 0.0, im)
    return re + 1j * im


def mod_centered(v, periods) -> np.ndarray:
    """Componentwise modulo into the centered window [-p_i/2, p_i/2)."""
    v = np.asarray(v, dtype=complex)
    p = np.asarray(periods, dtype=float)
    if p.ndim == 1 and v.ndim > 1:
        p = p.reshape(-1, *([1] * (v.ndim - 1)))
    re = np.mod(v.real + p / 2, p)
    im = np.mod(v.imag + p / 2, p)
    # np.mod of a tiny negative can round to the period itself; keep [0, p)
    re = np.where(re >= p, 0.0, re) - p / 2
    im = np.where(im >= p, 0.0, im) - p / 2
    return re + 1j * im


def odd_grid_points(a: int) -> np.ndarray:
    """Real coordinates of the odd grid {-(a-1), ..., a-1} with step 2."""
    return np.arange(-a + 1, a, 2, dtype=float)


def sample_data(alloc: RateAllocation, rng, n_symbols: int = 1) -> np.ndarray:
    """Draw uniform odd-grid data, one column per symbol vector.

    Zero-rate users get the placeholder value 0 (they are never decoded).
    """
    a = alloc.moduli.astype(int)
    u = np.zeros((alloc.n_users, n_symbols), dtype=complex)
    for i in alloc.active_users:
        re = 2 * rng.integers(0, a[i], size=n_symbols) - a[i] + 1
        im = 2 * rng.integers(0, a[i], size=n_symbols) - a[i] + 1
        u[i] = re + 1j * im
    return u


def require_odd(u) -> np.ndarray:
    """Validate odd real/imaginary coordinates (the shift-variant data grid)."""
    u = np.asarray(u, dtype=complex)
    if not is_gaussian_integral(u):
        raise NonOddData("data vector is not Gaussian-integral")
    g = gaussian_round(u)
    if np.any(np.round(g.real) % 2 == 0) or np.any(np.round(g.imag) % 2 == 0):
        raise NonOddData("data vector has an even coordinate")
    return u


def center_data(u, alloc: RateAllocation, convention: str = "odd") -> np.ndarray:
    """Map raw data to the origin-centered constellation."""
    u = np.asarray(u, dtype=complex)
    if convention == "odd":
        return u
    if convention == "paper":
        c = (alloc.moduli - 1) / 2 * (1 + 1j)
        return u - (c.reshape(-1, *([1] * (u.ndim - 1))) if u.ndim > 1 else c)
    raise ValueError(f"unknown convention {convention!r}")


def grid_periods(alloc: RateAllocation, convention: str = "odd") -> np.ndarray:
    """Modulo periods of the constellation grid under the given convention."""
    return alloc.periods if convention == "odd" else alloc.moduli


# ---------------------------------------------------------------------------
# Schemes
# ---------------------------------------------------------------------------


def zf_precode(H, u, alloc: RateAllocation, convention: str = "odd") -> PrecodedSignal:
    """Channel inversion: s = H+ (centered u)."""
    Hp = pseudo_inverse(H)
    s = Hp @ center_data(u, alloc, convention)
    return PrecodedSignal(x=s, scale=1.0, shift=np.zeros(alloc.n_users, dtype=complex), scheme="ZF")


def lra_precode(rb: ReducedBasis, u, alloc: RateAllocation, convention: str = "odd") -> PrecodedSignal:
    """Lattice-reduction-aided precoding: x = B (U^-1 u_centered mod periods)."""
    uc = center_data(u, alloc, convention)
    up = mod_centered(rb.unimodular_inverse @ uc, grid_periods(alloc, convention))
    return PrecodedSignal(
        x=rb.reduced @ up,
        scale=1.0,
        shift=np.zeros(alloc.n_users, dtype=complex),
        scheme="LRA",
    )


def shift_vector(U_inv, n_users: int) -> np.ndarray:
    """Per-block translation (U^-1 (1+i)1 + (1+i)1) mod 2, entries in {0,1}+{0,1}i."""
    U_inv = as_cmat(U_inv)
    if not is_gaussian_integral(U_inv):
        raise NonIntegerMatrix("U^-1 must have Gaussian-integer entries")
    ones = (1 + 1j) * np.ones(n_users, dtype=complex)
    t = gaussian_round(U_inv @ ones + ones)
    return np.mod(t.real, 2.0) + 1j * np.mod(t.imag, 2.0)


def lra_precode_shifted(rb: ReducedBasis, u_odd, alloc: RateAllocation) -> PrecodedSignal:
    """LRA precoding with the origin-recentring shift for odd-grid data.

    The shift makes every precoded coordinate odd, so the transmit
    constellation is origin-symmetric; receivers correct by the broadcast
    shift (U t at the receive side).
    """
    u_odd = require_odd(u_odd)
    t = shift_vector(rb.unimodular_inverse, alloc.n_users)
    v = rb.unimodular_inverse @ u_odd
    up = mod_centered(v + (t.reshape(-1, 1) if v.ndim > 1 else t), alloc.periods)
    return PrecodedSignal(x=rb.reduced @ up, scale=1.0, shift=t, scheme="LRA_SHIFT")


def regularized_reduced_basis(H, alpha: float) -> ReducedBasis:
    """Reduced basis of the regularized inverse H^H (H H^H + alpha I)^-1."""
    H = as_cmat(H)
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if alpha == 0:
        G = pseudo_inverse(H)
    else:
        n_r = H.shape[0]
        G = H.conj().T @ np.linalg.inv(H @ H.conj().T + alpha * np.eye(n_r))
    return complex_lll(G)


def perturbation_precode(
    H, u, alloc: RateAllocation, decoder: SphereDecoder | None = None, convention: str = "odd"
) -> PrecodedSignal:
    """Vector perturbation: minimize ||H+ (u_centered + p l)|| exactly over l.

    Defined for equal per-user moduli (scalar grid period p). ``decoder``
    may carry a prepared SphereDecoder for the lattice p H+ (reused across
    the symbols of a block).
    """
    if not alloc.is_equal_rate():
        raise ValueError("perturbation precoding requires equal per-user rates")
    p = float(grid_periods(alloc, convention)[0])
    Hp = pseudo_inverse(H)
    if decoder is None:
        decoder = SphereDecoder(p * Hp)
    s0 = Hp @ center_data(u, alloc, convention)
    l = decoder.decode(-s0)
    x = s0 + p * (Hp @ l)
    return PrecodedSignal(x=x, scale=1.0, shift=np.zeros(alloc.n_users, dtype=complex), scheme="PERTURB")


def modified_perturbation_precode(
    rb: ReducedBasis, u_odd, alloc: RateAllocation, decoder: SphereDecoder | None = None
) -> PrecodedSignal:
    """Shift-recentred perturbation: exact minimum energy over the odd coset.

    The perturbation keeps the precoded coordinates on the odd parity coset
    fixed by the shift vector, i.e. l runs over period-p multiples in the
    reduced coordinates.
    """
    if not alloc.is_equal_rate():
        raise ValueError("modified perturbation requires equal per-user rates")
    u_odd = require_odd(u_odd)
    p = float(alloc.periods[0])
    t = shift_vector(rb.unimodular_inverse, alloc.n_users)
    v = rb.unimodular_inverse @ u_odd
    up = mod_centered(v + (t.reshape(-1, 1) if v.ndim > 1 else t), alloc.periods)
    if decoder is None:
        decoder = SphereDecoder(p * rb.reduced)
    x0 = rb.reduced @ up
    l = decoder.decode(-x0)
    x = x0 + p * (rb.reduced @ l)
    return PrecodedSignal(x=x, scale=1.0, shift=t, scheme="PERTURB_MOD")


# ---------------------------------------------------------------------------
# Unequal-rate allocation
# ---------------------------------------------------------------------------


#: exhaustive rate-split search is used when the count of splits is below this
_SPLIT_SEARCH_CAP = 512


def _floor_even(x: float) -> int:
    return int(2 * np.floor(x / 2))


def _even_splits(r_sum: int, m: int):
    """All tuples of m even nonnegative integers summing to r_sum."""
    if m == 1:
        yield (r_sum,)
        return
    for first in range(0, r_sum + 1, 2):
        for rest in _even_splits(r_sum - first, m - 1):
            yield (first,) + rest


def _sublattice_energy(H: np.ndarray, rates: np.ndarray, cache: dict) -> float:
    """Average-energy estimate sum ||g_i||^2 of the reduced scaled sublattice."""
    key = tuple(int(r) for r in rates)
    if key in cache:
        return cache[key]
    active = np.flatnonzero(rates > 0)
    if active.size == 0:
        cache[key] = 0.0
        return 0.0
    a = 2.0 ** (rates[active] / 2)
    try:
        G = pseudo_inverse(H[active]) * a
        reduced = complex_lll(G).reduced
        e = float(np.sum(np.abs(reduced) ** 2))
    except Exception:
        e = np.inf
    cache[key] = e
    return e


def unequal_rate_allocate(rb: ReducedBasis, r_sum: int, H=None):
    """Split a fixed sum-rate across users to minimize transmit energy.

    Continuous step: the unit-determinant diagonal D equalizing the scaled
    column norms of the reduced basis, B' = B D, with
    tr B' B'^H = N (prod ||b_i||^2)^(1/N). Discrete step: round the implied
    rates down to even integers and move 2 bits at a time, greedily
    minimizing the reduced-sublattice energy estimate, until they sum to
    r_sum. Zero-rate users are dropped from the sublattice.

    Returns (RateAllocation, D, B').
    """
    if r_sum < 0 or r_sum % 2 != 0:
        raise ValueError("sum rate must be even and nonnegative")
    B = rb.reduced
    m = B.shape[1]
    norms2 = np.sum(np.abs(B) ** 2, axis=0).real
    geo2 = float(np.exp(np.mean(np.log(norms2))))
    D = np.diag(np.sqrt(geo2 / norms2).astype(complex))
    Bp = B @ D
    if H is None:
        H = np.linalg.pinv(rb.original)

    cache: dict = {}
    n_splits = math.comb(r_sum // 2 + m - 1, m - 1)
    if n_splits <= _SPLIT_SEARCH_CAP:
        # small search space: evaluate every even split directly
        best_rates, best_e = None, np.inf
        for split in _even_splits(r_sum, m):
            e = _sublattice_energy(H, np.array(split), cache)
            if e < best_e:
                best_rates, best_e = split, e
        rates = np.array(best_rates, dtype=int)
    else:
        cont = r_sum / m + np.log2(geo2 / norms2)
        rates = np.array([max(0, _floor_even(c)) for c in cont], dtype=int)
        while rates.sum() < r_sum:
            best_i, best_e = 0, np.inf
            for i in range(m):
                trial = rates.copy()
                trial[i] += 2
                e = _sublattice_energy(H, trial, cache)
                if e < best_e:
                    best_i, best_e = i, e
            rates[best_i] += 2
        while rates.sum() > r_sum:
            best_i, best_e = None, np.inf
            for i in range(m):
                if rates[i] == 0:
                    continue
                trial = rates.copy()
                trial[i] -= 2
                e = _sublattice_energy(H, trial, cache)
                if e < best_e:
                    best_i, best_e = i, e
            rates[best_i] -= 2
        # pairwise 2-bit transfers escape the additive-only path; lopsided
        # splits are what bound the power normalization on bad channels
        improved = True
        while improved:
            improved = False
            cur = _sublattice_energy(H, rates, cache)
            for i in range(m):
                if rates[i] == 0:
                    continue
                for j in range(m):
                    if i == j:
                        continue
                    trial = rates.copy()
                    trial[i] -= 2
                    trial[j] += 2
                    if _sublattice_energy(H, trial, cache) < cur:
                        rates = trial
                        improved = True
                        break
                if improved:
                    break
    return RateAllocation(rates), D, Bp


# ---------------------------------------------------------------------------
# Power normalization and second moments
# ---------------------------------------------------------------------------


def second_moment_parallelotope(B) -> float:
    """Second moment of A = {sum t_i b_i : t_i in [-1, 1]}.

    X = (1/3) (sum ||b_i||^2) Vol(A) with Vol(A) = 2^M |det of the real
    basis| in real dimension M; complex input is handled through its real
    embedding (2m real dimensions).
    """
    B = np.asarray(B)
    if np.iscomplexobj(B) and np.any(B.imag != 0):
        from .lattice import real_embedding

        B = real_embedding(B)
    else:
        B = B.real.astype(float)
    n, m = B.shape
    s = np.linalg.svd(B, compute_uv=False)
    vol = (2.0**m) * float(np.prod(s))
    return float(np.sum(B**2) / 3.0 * vol)


def enumerate_constellation(alloc: RateAllocation) -> np.ndarray:
    """All data vectors of the constellation, one per column (zero-rate users 0)."""
    total = alloc.constellation_size()
    if total > EXACT_POWER_CAP:
        raise ConstellationTooLarge(f"{total} points exceeds cap {EXACT_POWER_CAP}")
    a = alloc.moduli.astype(int)
    axes = []
    for i in range(alloc.n_users):
        if alloc.rates[i] > 0:
            g = odd_grid_points(a[i])
            pts = (g[:, None] + 1j * g[None, :]).ravel()
        else:
            pts = np.array([0.0 + 0.0j])
        axes.append(pts)
    grids = np.meshgrid(*axes, indexing="ij")
    return np.vstack([g.ravel() for g in grids])


# ---------------------------------------------------------------------------
# Per-block transmitter state
# ---------------------------------------------------------------------------


@dataclass
class BlockPrecoder:
    """Transmitter state for one fading block: reused across its symbols.

    ``encode`` maps data columns (n_users x T) to transmit columns
    (n_tx x T) in pre-normalization units; the transmitted signal is
    encode(u)/gamma. ``rx_offset`` is what a receiver subtracts from the
    rescaled observation before rounding (Gaussian-integer for the shift
    schemes, the recentring constant for the integer-grid convention).
    """

    scheme: str
    alloc: RateAllocation
    convention: str
    gamma: float
    shift: np.ndarray
    rx_offset: np.ndarray
    _encode: object = field(repr=False, default=None)

    def encode(self, u) -> np.ndarray:
        return self._encode(np.asarray(u, dtype=complex))


def _odd_window_var(a: np.ndarray) -> np.ndarray:
    """Per-complex-entry variance of the odd grid of size a (per user)."""
    return 2.0 * (a**2 - 1.0) / 3.0


def _all_data(alloc: RateAllocation, convention: str) -> np.ndarray:
    """Every data vector of the constellation under the given convention."""
    if convention == "odd":
        return enumerate_constellation(alloc)
    total = alloc.constellation_size()
    if total > EXACT_POWER_CAP:
        raise ConstellationTooLarge(f"{total} points exceeds cap {EXACT_POWER_CAP}")
    a = alloc.moduli.astype(int)
    axes = []
    for i in range(alloc.n_users):
        if alloc.rates[i] > 0:
            g = np.arange(a[i], dtype=float)
            axes.append((g[:, None] + 1j * g[None, :]).ravel())
        else:
            axes.append(np.array([0.0 + 0.0j]))
    grids = np.meshgrid(*axes, indexing="ij")
    return np.vstack([g.ravel() for g in grids])


def _data_indices(u: np.ndarray, alloc: RateAllocation, convention: str) -> np.ndarray:
    """Column index of each data vector of u within _all_data's enumeration."""
    single = u.ndim == 1
    cols = u[:, None] if single else u
    a = alloc.moduli.astype(int)
    idx = np.zeros(cols.shape[1], dtype=np.int64)
    for i in range(alloc.n_users):
        if alloc.rates[i] > 0:
            if convention == "odd":
                re = np.rint((cols[i].real + a[i] - 1) / 2).astype(np.int64)
                im = np.rint((cols[i].imag + a[i] - 1) / 2).astype(np.int64)
            else:
                re = np.rint(cols[i].real).astype(np.int64)
                im = np.rint(cols[i].imag).astype(np.int64)
            idx = idx * (a[i] * a[i]) + re * a[i] + im
    return idx[0:1] if single else idx


def prepare_block(
    scheme: str,
    H,
    alloc: RateAllocation | None = None,
    sum_rate: int | None = None,
    sigma2: float = 0.0,
    convention: str = "odd",
    power_mode: str = "exact",
    power_rng=None,
    lll_p: float = 0.75,
) -> BlockPrecoder:
    """Build the per-block transmitter state for a scheme on channel H.

    Performs the (single) basis reduction for the block, derives the shift
    vector and receiver offset where applicable, and computes the power
    normalization gamma in the requested mode. For LRA_UNEQUAL, ``sum_rate``
    replaces ``alloc``; the per-user rates are chosen per block.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; valid: {', '.join(SCHEMES)}")
    H = as_cmat(H)
    n_rx = H.shape[0]
    if convention not in ("odd", "paper"):
        raise ValueError(f"unknown convention {convention!r}")
    if convention == "paper" and scheme not in ("ZF", "LRA"):
        raise ValueError("the integer-grid convention is only supported for ZF and LRA")

    shift = np.zeros(n_rx, dtype=complex)
    rx_offset = np.zeros(n_rx, dtype=complex)
    cont_cols = None
    cont_var = None

    if scheme == "LRA_UNEQUAL":
        if sum_rate is None:
            raise ValueError("LRA_UNEQUAL requires sum_rate")
        rb = complex_lll(pseudo_inverse(H), p=lll_p)
        alloc, _, _ = unequal_rate_allocate(rb, sum_rate, H)
        act = alloc.active_users
        if act.size == 0:
            n_tx = H.shape[1]

            def enc(u, n_tx=n_tx):
                return np.zeros((n_tx,) + u.shape[1:], dtype=complex)

        else:
            a_act = alloc.moduli[act]
            rbs = complex_lll(pseudo_inverse(H[act]) * a_act, p=lll_p)

            def enc(u, rbs=rbs, act=act, a_act=a_act):
                ua = u[act] / (a_act[:, None] if u.ndim > 1 else a_act)
                v = mod_centered(rbs.unimodular_inverse @ ua, 2.0)
                return rbs.reduced @ v

            cont_cols = rbs.reduced
            cont_var = np.full(act.size, 2.0 / 3.0)
    else:
        if alloc is None:
            raise ValueError(f"{scheme} requires an explicit rate allocation")
        if alloc.n_users != n_rx:
            raise ValueError("allocation size does not match the number of users")
        a = alloc.moduli
        if convention == "paper":
            rx_offset = -((a - 1) / 2) * (1 + 1j)

        if scheme == "ZF":
            Hp = pseudo_inverse(H)

            def enc(u, Hp=Hp):
                return Hp @ center_data(u, alloc, convention)

            cont_cols = Hp
            cont_var = _odd_window_var(a) if convention == "odd" else (a**2 - 1.0) / 6.0
        else:
            if not alloc.is_equal_rate():
                raise ValueError(f"{scheme} requires equal per-user rates")
            p = float(grid_periods(alloc, convention)[0])
            if scheme == "LRA_REG":
                rb = regularized_reduced_basis(H, n_rx * sigma2)
            else:
                rb = complex_lll(pseudo_inverse(H), p=lll_p)

            if scheme in ("LRA", "LRA_REG"):

                def enc(u, rb=rb, p=p):
                    v = rb.unimodular_inverse @ center_data(u, alloc, convention)
                    return rb.reduced @ mod_centered(v, p)

                cont_cols = rb.reduced
                # integers filling the period-p window
                cont_var = np.full(n_rx, (p**2 - 1.0) / 6.0)
            elif scheme == "LRA_SHIFT":
                shift = shift_vector(rb.unimodular_inverse, n_rx)
                rx_offset = rb.unimodular @ shift

                def enc(u, rb=rb, t=shift, p=p):
                    v = rb.unimodular_inverse @ u
                    v = v + (t[:, None] if v.ndim > 1 else t)
                    return rb.reduced @ mod_centered(v, p)

                cont_cols = rb.reduced
                cont_var = _odd_window_var(a)
            elif scheme == "PERTURB":
                Hp = pseudo_inverse(H)
                dec = SphereDecoder(p * Hp)

                def enc(u, Hp=Hp, dec=dec, p=p):
                    s0 = Hp @ center_data(u, alloc, convention)
                    return s0 + p * (Hp @ dec.decode(-s0))

            else:  # PERTURB_MOD
                shift = shift_vector(rb.unimodular_inverse, n_rx)
                rx_offset = rb.unimodular @ shift
                dec = SphereDecoder(p * rb.reduced, pre_reduce=False)

                def enc(u, rb=rb, t=shift, dec=dec, p=p):
                    v = rb.unimodular_inverse @ u
                    v = v + (t[:, None] if v.ndim > 1 else t)
                    x0 = rb.reduced @ mod_centered(v, p)
                    return x0 + p * (rb.reduced @ dec.decode(-x0))

    bp = BlockPrecoder(
        scheme=scheme,
        alloc=alloc,
        convention=convention,
        gamma=1.0,
        shift=shift,
        rx_offset=rx_offset,
        _encode=enc,
    )
    if power_mode == "exact":
        # the full constellation is enumerated for gamma anyway; keep the
        # encoded table and serve per-symbol encodes by lookup
        data = _all_data(alloc, convention)
        if data.shape[1] == 0:
            bp.gamma = 1.0
        else:
            X = bp.encode(data)
            e = float(np.mean(np.sum(np.abs(X) ** 2, axis=0)))
            bp.gamma = float(np.sqrt(e)) if e > 0 else 1.0

            def enc_lookup(u, X=X, alloc=alloc, convention=convention):
                idx = _data_indices(u, alloc, convention)
                return X[:, idx[0]] if u.ndim == 1 else X[:, idx]

            bp._encode = enc_lookup
    else:
        bp.gamma = _block_gamma(bp, power_mode, power_rng, cont_cols, cont_var)
    return bp


def _block_gamma(bp: BlockPrecoder, mode: str, rng, cont_cols, cont_var) -> float:
    """gamma = sqrt(average ||s||^2) under the requested averaging mode."""
    if mode == "exact":
        data = enumerate_constellation(bp.alloc)
        if data.shape[1] == 0:
            return 1.0
        X = bp.encode(data)
        e = float(np.mean(np.sum(np.abs(X) ** 2, axis=0)))
    elif mode == "monte-carlo":
        if rng is None:
            rng = np.random.default_rng(0)
        data = sample_data(bp.alloc, rng, 10_000)
        X = bp.encode(data)
        e = float(np.mean(np.sum(np.abs(X) ** 2, axis=0)))
    elif mode == "continuous":
        if cont_cols is None:
            raise ValueError(
                f"continuous power mode is not defined for {bp.scheme}"
            )
        col2 = np.sum(np.abs(cont_cols) ** 2, axis=0).real
        e = float(np.sum(cont_var * col2))
    else:
        raise ValueError(f"unknown power mode {mode!r}")
    return float(np.sqrt(e)) if e > 0 else 1.0


def normalize_power(
    scheme: str,
    H,
    alloc: RateAllocation | None,
    mode: str = "exact",
    sum_rate: int | None = None,
    sigma2: float = 0.0,
    convention: str = "odd",
    rng=None,
) -> float:
    """Scaling gamma with E||s/gamma||^2 = 1 for the scheme on channel H."""
    return prepare_block(
        scheme,
        H,
        alloc=alloc,
        sum_rate=sum_rate,
        sigma2=sigma2,
        convention=convention,
        power_mode=mode,
        power_rng=rng,
    ).gamma
