"""Monte Carlo link-level simulation and analytic performance formulas.

Block-fading model: one channel draw, one basis reduction, and one power
normalization per block; symbols within a block share that state. Every
block owns a counter-based RNG stream keyed by (seed, point index, block
index), so results are independent of how blocks are distributed across
workers.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammainc

from .errors import DependentColumns, InsufficientData, SingularChannel
from .lattice import complex_lll, min_distance_2d, shortest_vector_bruteforce
from .precode import (
    SCHEMES,
    RateAllocation,
    mod_centered,
    prepare_block,
    sample_data,
)

#: blocks simulated per stopping-rule round (growing schedule, fixed cap)
_ROUND_BLOCKS0 = 8
_ROUND_BLOCKS_MAX = 512
#: resampling cap for (measure-zero) singular channel draws
_MAX_RESAMPLES = 1000


@dataclass(frozen=True)
class ChannelRealization:
    """One i.i.d. CN(0,1) channel draw (n_rx x n_tx)."""

    H: np.ndarray
    seed_tag: str = ""


@dataclass(frozen=True)
class SerPoint:
    """One Monte Carlo SER measurement at a single SNR."""

    snr_db: float
    trials: int
    errors: int
    ser: float
    ci_low: float
    ci_high: float
    avg_energy: float = 1.0
    resamples: int = 0

    def __post_init__(self):
        if self.trials <= 0:
            raise ValueError("trials must be positive")
        if not (0.0 <= self.ser <= 1.0 and self.ci_low <= self.ser <= self.ci_high):
            raise ValueError("inconsistent SER/confidence interval")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one SER-vs-SNR run bit-exactly."""

    n_tx: int
    n_rx: int
    scheme: str
    snr_db: tuple
    rates: tuple | None = None
    sum_rate: int | None = None
    symbols_per_block: int = 100
    max_symbols: int = 10_000_000
    target_errors: int = 400
    seed: int = 0
    power_mode: str = "exact"
    convention: str = "odd"
    lll_p: float = 0.75

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ValueError("; ".join(problems))
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        if self.rates is not None:
            object.__setattr__(self, "rates", tuple(int(r) for r in self.rates))

    def validate(self) -> list:
        problems = []
        if not (self.n_tx >= self.n_rx >= 1):
            problems.append(f"need n_tx >= n_rx >= 1, got {self.n_tx}x{self.n_rx}")
        if self.scheme not in SCHEMES:
            problems.append(f"unknown scheme {self.scheme!r}; valid: {', '.join(SCHEMES)}")
        if len(self.snr_db) == 0:
            problems.append("snr_db grid is empty")
        if self.scheme == "LRA_UNEQUAL":
            if self.sum_rate is None or self.sum_rate < 0 or self.sum_rate % 2:
                problems.append("LRA_UNEQUAL needs an even nonnegative sum_rate")
        else:
            if self.rates is None:
                problems.append(f"{self.scheme} needs per-user rates")
            elif len(self.rates) != self.n_rx:
                problems.append(f"rates must list {self.n_rx} users")
            elif any(r < 0 or r % 2 for r in self.rates):
                problems.append("rates must be even and nonnegative")
        if self.symbols_per_block < 1 or self.max_symbols < 1 or self.target_errors < 1:
            problems.append("symbols_per_block, max_symbols, target_errors must be >= 1")
        if self.power_mode not in ("exact", "monte-carlo", "continuous"):
            problems.append(f"unknown power_mode {self.power_mode!r}")
        if self.convention not in ("odd", "paper"):
            problems.append(f"unknown convention {self.convention!r}")
        return problems

    @property
    def alloc(self) -> RateAllocation | None:
        return None if self.rates is None else RateAllocation(np.array(self.rates))


def sample_channel(n_rx: int, n_tx: int, rng, seed_tag: str = "") -> ChannelRealization:
    """i.i.d. CN(0, 1) channel matrix."""
    if n_rx < 1 or n_tx < 1:
        raise ValueError("channel dimensions must be >= 1")
    H = (rng.standard_normal((n_rx, n_tx)) + 1j * rng.standard_normal((n_rx, n_tx))) / np.sqrt(2)
    return ChannelRealization(H=H, seed_tag=seed_tag)


def sample_noise(sigma2: float, n_rx: int, rng, n_symbols: int = 1) -> np.ndarray:
    """i.i.d. complex Gaussian noise, variance sigma2 per complex entry."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    w = rng.standard_normal((n_rx, n_symbols)) + 1j * rng.standard_normal((n_rx, n_symbols))
    return np.sqrt(sigma2 / 2.0) * w


def odd_round(x) -> np.ndarray:
    """Nearest odd integer, ties toward the smaller coordinate."""
    return 2.0 * np.ceil(np.asarray(x, dtype=float) / 2.0) - 1.0


def _round_half_down(x) -> np.ndarray:
    return np.ceil(np.asarray(x, dtype=float) - 0.5)


def receiver_decode(y, alloc: RateAllocation, gamma: float = 1.0, offset=None,
                    convention: str = "odd") -> np.ndarray:
    """Per-user decoding: rescale by gamma, undo the shift, round, wrap.

    Exact inverse of the precoding chain in the noiseless case. Zero-rate
    users decode to 0.
    """
    y = np.asarray(y, dtype=complex)
    w = gamma * y
    if offset is not None:
        w = w - (np.asarray(offset, dtype=complex)[:, None] if w.ndim > 1 else offset)
    a = alloc.moduli
    if convention == "odd":
        g = odd_round(w.real) + 1j * odd_round(w.imag)
        out = mod_centered(g, alloc.periods)
    else:
        g = _round_half_down(w.real) + 1j * _round_half_down(w.imag)
        am = a[:, None] if w.ndim > 1 else a
        out = np.mod(g.real, am) + 1j * np.mod(g.imag, am)
    inactive = alloc.rates == 0
    if np.any(inactive):
        out[inactive] = 0.0
    return out


def wilson_interval(errors: int, trials: int, z: float = 1.959964) -> tuple:
    """95% Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = errors / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # the endpoints equal p exactly when p is 0 or 1; avoid float cancellation
    lo = 0.0 if errors == 0 else max(0.0, center - half)
    hi = 1.0 if errors == trials else min(1.0, center + half)
    return lo, hi


def _block_rng(seed: int, point_idx: int, block_idx: int):
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(point_idx, block_idx))
    return np.random.Generator(np.random.Philox(ss))


def _simulate_block(cfg: ExperimentConfig, rng, sigma2: float):
    """One fading block: returns (symbols, user_errors, sum ||x/gamma||^2, resamples)."""
    resamples = 0
    while True:
        ch = sample_channel(cfg.n_rx, cfg.n_tx, rng)
        try:
            bp = prepare_block(
                cfg.scheme,
                ch.H,
                alloc=cfg.alloc,
                sum_rate=cfg.sum_rate,
                sigma2=sigma2,
                convention=cfg.convention,
                power_mode=cfg.power_mode,
                power_rng=rng,
                lll_p=cfg.lll_p,
            )
            break
        except (SingularChannel, DependentColumns):
            resamples += 1
            if resamples > _MAX_RESAMPLES:
                raise
    nsym = cfg.symbols_per_block
    u = sample_data(bp.alloc, rng, nsym)
    xs = bp.encode(u) / bp.gamma
    energy = float(np.sum(np.abs(xs) ** 2))
    w = sample_noise(sigma2, cfg.n_rx, rng, nsym)
    y = ch.H @ xs + w
    uhat = receiver_decode(y, bp.alloc, gamma=bp.gamma, offset=bp.rx_offset,
                           convention=cfg.convention)
    errors = int(np.count_nonzero(uhat != u))
    return nsym, errors, energy, resamples


def _simulate_block_range(cfg: ExperimentConfig, point_idx: int, start: int, stop: int):
    """Simulate blocks [start, stop); per-block energies are kept separate so
    the caller can sum them in a worker-count-independent order."""
    snr = cfg.snr_db[point_idx]
    sigma2 = 10.0 ** (-snr / 10.0)
    sym = err = res = 0
    energies = []
    for b in range(start, stop):
        rng = _block_rng(cfg.seed, point_idx, b)
        s, e, en, r = _simulate_block(cfg, rng, sigma2)
        sym += s
        err += e
        energies.append(en)
        res += r
    return sym, err, energies, res


def default_workers() -> int:
    return max(1, int(os.environ.get("LRBC_WORKERS", "1")))


def run_ser(cfg: ExperimentConfig, workers: int | None = None, on_point=None) -> list:
    """SER at every SNR grid point under the stopping rule.

    Blocks are simulated in fixed deterministic rounds; the stopping check
    (target_errors reached or max_symbols exceeded) runs between rounds, so
    the set of simulated blocks, and therefore the result, is identical for
    any worker count. ``on_point(point, seconds)`` is called as each grid
    point completes.
    """
    if workers is None:
        workers = default_workers()
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    points = []
    try:
        for pi in range(len(cfg.snr_db)):
            t_point = time.perf_counter()
            sym = err = res = 0
            energies = []
            next_block = 0
            chunk = _ROUND_BLOCKS0
            while True:
                blocks = range(next_block, next_block + chunk)
                next_block += chunk
                chunk = min(2 * chunk, _ROUND_BLOCKS_MAX)
                if pool is None:
                    parts = [_simulate_block_range(cfg, pi, blocks.start, blocks.stop)]
                else:
                    cuts = np.linspace(blocks.start, blocks.stop, workers + 1).astype(int)
                    parts = list(
                        pool.map(
                            _simulate_block_range,
                            [cfg] * workers,
                            [pi] * workers,
                            cuts[:-1],
                            cuts[1:],
                        )
                    )
                for s, e, en, r in parts:
                    sym += s
                    err += e
                    energies.extend(en)
                    res += r
                if err >= cfg.target_errors or sym >= cfg.max_symbols:
                    break
            # exact block-ordered sum: identical for every worker split
            energy = math.fsum(energies)
            opportunities = sym * cfg.n_rx
            ser = err / opportunities
            lo, hi = wilson_interval(err, opportunities)
            points.append(
                SerPoint(
                    snr_db=cfg.snr_db[pi],
                    trials=sym,
                    errors=err,
                    ser=ser,
                    ci_low=lo,
                    ci_high=hi,
                    avg_energy=energy / sym,
                    resamples=res,
                )
            )
            if on_point is not None:
                on_point(points[-1], time.perf_counter() - t_point)
    finally:
        if pool is not None:
            pool.shutdown()
    return points


def estimate_diversity_slope(points, window=None, ser_band=(1e-5, 1e-2),
                             max_ci_rel: float = 0.3) -> float:
    """Least-squares slope of -log10(SER) against log10(rho).

    Uses points whose SER lies inside ser_band with a relative confidence
    interval width below max_ci_rel, optionally restricted to the SNR window
    (lo_db, hi_db). Needs at least three qualifying points.
    """
    xs, ys = [], []
    for pt in points:
        if window is not None and not (window[0] <= pt.snr_db <= window[1]):
            continue
        if not (ser_band[0] <= pt.ser <= ser_band[1]):
            continue
        if (pt.ci_high - pt.ci_low) > max_ci_rel * pt.ser:
            continue
        xs.append(pt.snr_db / 10.0)  # log10(rho)
        ys.append(-np.log10(pt.ser))
    if len(xs) < 3:
        raise InsufficientData(
            f"only {len(xs)} qualifying points (need 3) for the slope fit"
        )
    return float(np.polyfit(xs, ys, 1)[0])


# ---------------------------------------------------------------------------
# Outage
# ---------------------------------------------------------------------------


def outage_fixed_rate(rho: float, r1: float, n_tx: int) -> float:
    """Pr{log2(1 + rho ||h1||^2) <= R1} for an n_tx-entry CN(0,1) row."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    return float(gammainc(n_tx, (2.0**r1 - 1.0) / rho))


def outage_fixed_rate_mc(rho: float, r1: float, n_tx: int, trials: int, rng) -> float:
    """Monte Carlo companion of outage_fixed_rate over explicit channel rows."""
    hits = 0
    thresh = (2.0**r1 - 1.0) / rho
    chunk = 200_000
    left = trials
    while left > 0:
        c = min(chunk, left)
        h = (rng.standard_normal((c, n_tx)) + 1j * rng.standard_normal((c, n_tx))) / np.sqrt(2)
        hits += int(np.count_nonzero(np.sum(np.abs(h) ** 2, axis=1) <= thresh))
        left -= c
    return hits / trials


def outage_sum_rate_bound(rho: float, r_sum: float, n_tx: int, n_rx: int) -> float:
    """Pr{tr H^H H <= 2^(R_sum/n_rx) n_rx / (2 rho)}, a trace-based proxy.

    This bounds the sum-rate outage from below (a necessary condition on
    the trace), it is not the exact outage probability.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    thresh = 2.0 ** (r_sum / n_rx) * n_rx / (2.0 * rho)
    return float(gammainc(n_tx * n_rx, thresh))


def outage_sum_rate_bound_mc(rho: float, r_sum: float, n_tx: int, n_rx: int,
                             trials: int, rng) -> float:
    """Monte Carlo companion of outage_sum_rate_bound."""
    thresh = 2.0 ** (r_sum / n_rx) * n_rx / (2.0 * rho)
    hits = 0
    chunk = 200_000
    left = trials
    while left > 0:
        c = min(chunk, left)
        h = (rng.standard_normal((c, n_tx * n_rx)) + 1j * rng.standard_normal((c, n_tx * n_rx))) / np.sqrt(2)
        hits += int(np.count_nonzero(np.sum(np.abs(h) ** 2, axis=1) <= thresh))
        left -= c
    return hits / trials


# ---------------------------------------------------------------------------
# Minimum-distance tail experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailPoint:
    """Empirical Pr{d_H <= epsilon} at one grid epsilon."""

    n: int
    m: int
    epsilon: float
    trials: int
    hits: int
    p_hat: float
    sufficient: bool = field(default=False)


def sample_min_distances(n: int, m: int, trials: int, rng,
                         exact_below: float = np.inf) -> np.ndarray:
    """Minimum distances of ``trials`` random n x m CN(0,1) lattices.

    For m = 2 a batched reducer is used; distances above ``exact_below``
    may then be reported as any value exceeding it (tail counting only
    needs exactness up to the largest grid epsilon).
    """
    if not (1 <= m <= n <= 3):
        raise ValueError("need 1 <= m <= n <= 3 for the brute-force oracle")
    if m == 1:
        g = (rng.standard_normal((n, trials)) + 1j * rng.standard_normal((n, trials))) / np.sqrt(2)
        return np.sqrt(np.sum(np.abs(g) ** 2, axis=0))
    if m == 2:
        out = np.empty(trials)
        done = 0
        chunk = 1_000_000
        while done < trials:
            c = min(chunk, trials - done)
            g = (rng.standard_normal((c, n, 2)) + 1j * rng.standard_normal((c, n, 2))) / np.sqrt(2)
            out[done : done + c] = min_distance_2d(g, exact_below)
            done += c
        return out
    out = np.empty(trials)
    for t in range(trials):
        g = (rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))) / np.sqrt(2)
        red = complex_lll(g).reduced
        bound = float(np.sqrt(np.min(np.sum(np.abs(red) ** 2, axis=0))))
        _, d = shortest_vector_bruteforce(red, bound)
        out[t] = d
    return out


def min_distance_experiment(n: int, m: int, epsilon_grid, trials: int,
                            seed: int = 0) -> list:
    """Empirical minimum-distance tail Pr{d_H <= eps} on an epsilon grid.

    A grid point is flagged sufficient when it collected at least 100 hits.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed)))
    eps_max = float(np.max(np.asarray(epsilon_grid, dtype=float)))
    d = sample_min_distances(n, m, trials, rng, exact_below=eps_max)
    points = []
    for eps in np.asarray(epsilon_grid, dtype=float):
        hits = int(np.count_nonzero(d <= eps))
        points.append(
            TailPoint(n=n, m=m, epsilon=float(eps), trials=trials, hits=hits,
                      p_hat=hits / trials, sufficient=hits >= 100)
        )
    return points


def tail_envelope(eps: float, n: int) -> float:
    """Shape of the small-ball bound: eps^(2n) * max((-ln eps)^(n+1), 1)."""
    return eps ** (2 * n) * max((-np.log(eps)) ** (n + 1), 1.0)


def fit_tail_envelope(points, n: int) -> float:
    """Constant beta fitted on the large-epsilon half of the sufficient points.

    The returned beta is meaningful when p_hat <= beta * envelope also holds
    at the small-epsilon points, i.e. the tail decays at least as fast as
    the envelope shape.
    """
    suff = [p for p in points if p.sufficient]
    if not suff:
        raise InsufficientData("no grid point collected 100 hits")
    med = np.median([p.epsilon for p in suff])
    fit_pts = [p for p in suff if p.epsilon >= med]
    return max(p.p_hat / tail_envelope(p.epsilon, n) for p in fit_pts)


def fit_tail_slope(points, n_points: int = 4) -> float:
    """Log-log slope over the smallest-epsilon points with sufficient counts."""
    suff = sorted((p for p in points if p.sufficient), key=lambda p: p.epsilon)
    use = suff[:n_points]
    if len(use) < 2:
        raise InsufficientData("need at least two sufficient grid points")
    x = np.log([p.epsilon for p in use])
    y = np.log([p.p_hat for p in use])
    return float(np.polyfit(x, y, 1)[0])


def replace_config(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Copy of cfg with the given fields replaced (revalidated)."""
    return replace(cfg, **kw)
