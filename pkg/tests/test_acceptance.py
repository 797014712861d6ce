"""Acceptance gate: one test per release criterion, each printing a verdict.

The preset-driven criteria run the bundled experiments through the CLI once
per session and read the result files back, exactly as a user would.
"""
import os
import time

import numpy as np
import pytest

from lrbc.cli import main, read_ser_csv, snr_at_ser
from lrbc.lattice import (
    SphereDecoder,
    babai_nearest,
    complex_lll,
    dual_basis,
    is_lll_reduced,
    shortest_vector_bruteforce,
)
from lrbc.linalg import lattice_volume, pseudo_inverse
from lrbc.precode import (
    RateAllocation,
    lra_precode,
    lra_precode_shifted,
    mod_centered,
    modified_perturbation_precode,
    perturbation_precode,
    prepare_block,
    regularized_reduced_basis,
    sample_data,
    second_moment_parallelotope,
    zf_precode,
)
from lrbc.sim import (
    SerPoint,
    fit_tail_envelope,
    fit_tail_slope,
    receiver_decode,
    tail_envelope,
    TailPoint,
)


_CAPTURE = None


@pytest.fixture(autouse=True)
def _live_verdicts(capsys):
    global _CAPTURE
    _CAPTURE = capsys
    yield
    _CAPTURE = None


def verdict(num: int, desc: str, ok: bool, detail: str = ""):
    tag = "PASS" if ok else "FAIL"
    extra = f" ({detail})" if detail else ""
    line = f"[criterion {num:2d}] {tag} - {desc}{extra}"
    if _CAPTURE is not None:
        with _CAPTURE.disabled():
            print(f"\n{line}")
    else:
        print(line)
    assert ok, f"criterion {num}: {desc}{extra}"


def randc(rng, n, m):
    return (rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))) / np.sqrt(2)


def run_preset(preset: str, out_dir: str, overrides=()):
    t0 = time.perf_counter()
    rc = main(["run", "--preset", preset, "--out", out_dir, *overrides])
    assert rc == 0, f"preset {preset} exited {rc}"
    return os.path.join(out_dir, f"{preset}.csv"), time.perf_counter() - t0


def read_ser_points(path: str) -> dict:
    """Full per-scheme SerPoint lists from a ser CSV."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        body = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    for ln in body[1:]:
        f = ln.split(",")
        out.setdefault(f[0], []).append(
            SerPoint(
                snr_db=float(f[4]),
                trials=int(f[5]),
                errors=int(f[6]),
                ser=float(f[7]),
                ci_low=float(f[8]),
                ci_high=float(f[9]),
                avg_energy=float(f[10]),
            )
        )
    return out


def read_tail_points(path: str) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        body = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    for ln in body[1:]:
        n, m, eps, trials, hits, p_hat = ln.split(",")
        pt = TailPoint(n=int(n), m=int(m), epsilon=float(eps), trials=int(trials),
                       hits=int(hits), p_hat=float(p_hat),
                       sufficient=int(hits) >= 100)
        out.setdefault((int(n), int(m)), []).append(pt)
    return out


@pytest.fixture(scope="session")
def fig2_run(tmp_path_factory):
    return run_preset("fig2", str(tmp_path_factory.mktemp("fig2")))


@pytest.fixture(scope="session")
def fig4_run(tmp_path_factory):
    return run_preset("fig4", str(tmp_path_factory.mktemp("fig4")))


@pytest.fixture(scope="session")
def outage_run(tmp_path_factory):
    return run_preset("outage", str(tmp_path_factory.mktemp("outage")))


@pytest.fixture(scope="session")
def lemma3_run(tmp_path_factory):
    return run_preset("lemma3", str(tmp_path_factory.mktemp("lemma3")))


def test_criterion_1_reduction_contract():
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    for i in range(10_000):
        m = 2 + (i % 5)
        B = randc(rng, m, m)
        rb = complex_lll(B)
        ok, why = is_lll_reduced(rb.reduced, rb.lll_p)
        assert ok, why
        U = rb.unimodular
        assert np.max(np.abs(U - np.round(U.real) - 1j * np.round(U.imag))) <= 1e-9
        assert abs(abs(np.linalg.det(U)) - 1.0) < 1e-6
        v0 = lattice_volume(B)
        assert abs(lattice_volume(rb.reduced) - v0) <= 1e-9 * v0
        assert np.sqrt(rb.defect) <= 2.0 ** (m * (m - 1))
    elapsed = time.perf_counter() - t0
    verdict(1, "reduction contract on 10^4 bases (M=2..6)", elapsed < 60,
            f"{elapsed:.1f}s")


def test_criterion_2_norm_bounds():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    for i in range(1000):
        m = 2 + (i % 3)
        rb = complex_lll(randc(rng, m, m))
        bn = np.linalg.norm(rb.reduced, axis=0)
        an = np.linalg.norm(dual_basis(rb.reduced), axis=0)
        root = np.sqrt(rb.defect)
        assert bn.max() <= root / an.min() * (1 + 1e-6)
        assert an.max() <= root / bn.min() * (1 + 1e-6)
    for i in range(1000):
        m = 2 + (i % 2)
        H = randc(rng, m, m)
        rb = complex_lll(pseudo_inverse(H))
        Hh = complex_lll(H.conj().T).reduced
        bound = float(np.min(np.linalg.norm(Hh, axis=0))) + 1e-9
        _, d = shortest_vector_bruteforce(Hh, bound)
        assert np.linalg.norm(rb.reduced, axis=0).max() <= 2.0 ** (m * (m - 1)) / d * (1 + 1e-6)
    elapsed = time.perf_counter() - t0
    verdict(2, "primal/dual norm bounds on 10^3 + 10^3 bases", elapsed < 300,
            f"{elapsed:.1f}s")


def test_criterion_3_cvp_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    off = np.arange(-3, 4)
    g = np.meshgrid(*([off] * 6), indexing="ij")
    Zoff = np.vstack([a.ravel() for a in g])
    Zc = (Zoff[:3] + 1j * Zoff[3:]).astype(complex)
    for _ in range(500):
        B = randc(rng, 3, 3)
        t = (rng.standard_normal(3) + 1j * rng.standard_normal(3)) * 2
        rb = complex_lll(B)
        zb = babai_nearest(rb.reduced, t)
        cand = rb.reduced @ (Zc + zb[:, None]) - t[:, None]
        best = np.sqrt(np.min(np.sum(np.abs(cand) ** 2, axis=0)))
        zs = SphereDecoder(B).decode(t)
        ds = np.linalg.norm(B @ zs - t)
        assert abs(ds - best) <= 1e-12
        assert np.linalg.norm(B @ babai_nearest(B, t) - t) >= ds - 1e-9
    elapsed = time.perf_counter() - t0
    verdict(3, "exact CVP equals exhaustive scan on 500 3x3 instances",
            elapsed < 60, f"{elapsed:.1f}s")


def test_criterion_4_noiseless_roundtrip():
    t0 = time.perf_counter()
    rng = np.random.default_rng(200)
    for n in (4, 2):
        alloc = RateAllocation.equal(n, 2)
        for _ in range(1000):
            H = randc(rng, n, n)
            rb = complex_lll(pseudo_inverse(H))
            u = sample_data(alloc, rng, 10)
            assert np.array_equal(receiver_decode(H @ zf_precode(H, u, alloc).x, alloc), u)
            assert np.array_equal(receiver_decode(H @ lra_precode(rb, u, alloc).x, alloc), u)
            s = lra_precode_shifted(rb, u, alloc)
            assert np.array_equal(
                receiver_decode(H @ s.x, alloc, offset=rb.unimodular @ s.shift), u)
            rbr = regularized_reduced_basis(H, 1e-6)
            xr = rbr.reduced @ mod_centered(rbr.unimodular_inverse @ u, 4.0)
            assert np.array_equal(receiver_decode(H @ xr, alloc), u)
            p = perturbation_precode(H, u, alloc)
            assert np.array_equal(receiver_decode(H @ p.x, alloc), u)
            mp = modified_perturbation_precode(rb, u, alloc)
            assert np.array_equal(
                receiver_decode(H @ mp.x, alloc, offset=rb.unimodular @ mp.shift), u)
            bp = prepare_block("LRA_UNEQUAL", H, sum_rate=2 * n, power_mode="exact")
            uu = sample_data(bp.alloc, rng, 10)
            assert np.array_equal(receiver_decode(H @ bp.encode(uu), bp.alloc), uu)
    elapsed = time.perf_counter() - t0
    verdict(4, "noiseless round trip, every scheme, 10^4 (H,u) at 4x4 and 2x2",
            elapsed < 60, f"{elapsed:.1f}s")


def test_criterion_5_energy_dominance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(201)
    alloc = RateAllocation.equal(4, 2)
    violations = 0
    for _ in range(1000):
        H = randc(rng, 4, 4)
        rb = complex_lll(pseudo_inverse(H))
        u = sample_data(alloc, rng, 10)
        ep = np.linalg.norm(perturbation_precode(H, u, alloc).x, axis=0)
        el = np.linalg.norm(lra_precode(rb, u, alloc).x, axis=0)
        violations += int(np.count_nonzero(ep > el + 1e-9))
    elapsed = time.perf_counter() - t0
    verdict(5, "perturbation energy never exceeds reduced-basis energy, 10^4 pairs",
            violations == 0 and elapsed < 120,
            f"{violations} violations, {elapsed:.1f}s")


def test_criterion_6_downlink_curves(fig2_run):
    csv_path, elapsed = fig2_run
    pts = read_ser_points(csv_path)
    curves = read_ser_csv(csv_path)

    def top_decade_slope(points):
        # Direct log-log fit on every measured (error-bearing) point in the
        # top SNR decade: the steep curves drop below the CI-filtered
        # estimator's default band early in the decade, and ZF stays above
        # its upper edge through most of it.
        keep = [p for p in points if 25.0 <= p.snr_db <= 35.0 and p.errors > 0]
        assert len(keep) >= 3
        x = np.array([p.snr_db / 10.0 for p in keep])
        y = np.array([np.log10(p.ser) for p in keep])
        return -np.polyfit(x, y, 1)[0]

    lra_slope = top_decade_slope(pts["LRA"])
    zf_slope = top_decade_slope(pts["ZF"])
    ok_a = lra_slope >= 3.2 and zf_slope <= 1.5

    def gap(better, worse, level):
        return snr_at_ser(curves[worse], level) - snr_at_ser(curves[better], level)

    g_shift_pert = gap("PERTURB", "LRA_SHIFT", 1e-3)
    ok_b = abs(g_shift_pert) <= 0.5
    g_shift_lra = gap("LRA_SHIFT", "LRA", 1e-3)
    ok_c = 1.0 <= g_shift_lra <= 2.0
    g_mod_pert = gap("PERTURB_MOD", "PERTURB", 1e-3)
    ok_d = 0.1 <= g_mod_pert <= 0.6

    ok_t = elapsed <= 1800
    verdict(
        6,
        "4x4 QPSK curve reproduction",
        ok_a and ok_b and ok_c and ok_d and ok_t,
        f"slopes LRA {lra_slope:.2f} / ZF {zf_slope:.2f}; "
        f"shift-vs-perturb {g_shift_pert:+.2f} dB; shift gain {g_shift_lra:.2f} dB; "
        f"modified gain {g_mod_pert:.2f} dB; {elapsed:.0f}s",
    )


def test_criterion_7_unequal_rate_curves(fig4_run):
    csv_path, elapsed = fig4_run
    pts = read_ser_points(csv_path)
    fixed = pts["LRA"]
    unequal = pts["LRA_UNEQUAL"]
    beats = all(
        pu.ser < pf.ser
        for pf, pu in zip(fixed, unequal)
        if pf.snr_db >= 20.0 and pf.snr_db == pu.snr_db
    )
    def top_decade_slope(points):
        # Direct log-log fit on every measured (error-bearing) point in the
        # top SNR decade: the steep curve drops below the CI-filtered
        # estimator's default band before the decade ends.
        keep = [p for p in points if 30.0 <= p.snr_db <= 40.0 and p.errors > 0]
        assert len(keep) >= 3
        x = np.array([p.snr_db / 10.0 for p in keep])
        y = np.array([np.log10(p.ser) for p in keep])
        return -np.polyfit(x, y, 1)[0]

    s_fixed = top_decade_slope(fixed)
    s_unequal = top_decade_slope(unequal)
    ratio = s_unequal / s_fixed
    verdict(
        7,
        "2x2 sum-rate-8 allocation comparison",
        beats and ratio >= 1.3 and elapsed <= 900,
        f"beats fixed at >=20dB: {beats}; slopes {s_unequal:.2f}/{s_fixed:.2f}"
        f" = {ratio:.2f}x; {elapsed:.0f}s",
    )


def test_criterion_8_outage(outage_run):
    csv_path, elapsed = outage_run
    with open(csv_path, "r", encoding="utf-8") as fh:
        body = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    fixed, sum_bound, mc_checked = [], [], 0
    for ln in body[1:]:
        kind, rho, value, mc_value, mc_trials = ln.split(",")
        rho, value = float(rho), float(value)
        (fixed if kind == "fixed" else sum_bound).append((rho, value))
        if mc_value:
            trials = int(mc_trials)
            sigma = np.sqrt(value * (1 - value) / trials)
            assert abs(float(mc_value) - value) <= 3 * sigma + 1e-9
            mc_checked += 1
    assert mc_checked >= 3

    def fitted_slope(rows):
        rho = np.array([r for r, v in rows])
        val = np.array([v for r, v in rows])
        keep = val > 0
        return -np.polyfit(np.log10(rho[keep]), np.log10(val[keep]), 1)[0]

    s_fixed = fitted_slope([rv for rv in fixed if rv[0] >= 1e3])
    s_sum = fitted_slope([rv for rv in sum_bound if 1e2 <= rv[0] <= 1e4])
    verdict(
        8,
        "outage formulas vs Monte Carlo and slopes",
        abs(s_fixed - 2.0) <= 0.1 and abs(s_sum - 4.0) <= 0.2 and elapsed < 300,
        f"{mc_checked} MC points in 3 sigma; slopes {s_fixed:.3f}, {s_sum:.3f}; "
        f"{elapsed:.0f}s",
    )


def test_criterion_9_min_distance_tail(lemma3_run):
    csv_path, elapsed = lemma3_run
    cases = read_tail_points(csv_path)
    details = []
    ok = True
    for (n, m), floor in (((1, 1), 1.7), ((2, 1), 3.7), ((2, 2), 3.7)):
        pts = cases[(n, m)]
        slope = fit_tail_slope(pts)
        beta = fit_tail_envelope(pts, n)
        env_ok = all(
            p.p_hat <= beta * tail_envelope(p.epsilon, n) * (1 + 1e-9) for p in pts
        )
        ok = ok and slope >= floor and env_ok
        details.append(f"{n}x{m}: slope {slope:.2f} (need >={floor}), envelope {env_ok}")
    verdict(9, "minimum-distance tail slopes and envelope",
            ok and elapsed < 600, "; ".join(details) + f"; {elapsed:.0f}s")


def test_criterion_10_second_moment():
    t0 = time.perf_counter()
    rng = np.random.default_rng(300)
    worst = 0.0
    for m in (2, 3):
        for _ in range(20):
            B = rng.standard_normal((m, m))
            t = rng.uniform(-1, 1, (1_000_000, m))
            pts = t @ B.T
            vol = (2.0**m) * abs(np.linalg.det(B))
            mc = float(np.mean(np.sum(pts**2, axis=1)) * vol)
            x = second_moment_parallelotope(B)
            worst = max(worst, abs(x - mc) / mc)
            c = 1.5
            assert second_moment_parallelotope(c * B) == pytest.approx(
                c ** (m + 2) * x, rel=1e-9)
    elapsed = time.perf_counter() - t0
    verdict(10, "parallelotope second moment vs Monte Carlo, 0.5%",
            worst <= 0.005 and elapsed < 120,
            f"worst rel err {worst:.4f}, {elapsed:.1f}s")


def test_criterion_11_determinism(tmp_path):
    overrides = ["snr_db=10,20,30", "max_symbols=20000", "target_errors=100"]
    texts = []
    for workers in (1, 4):
        out = str(tmp_path / f"w{workers}")
        rc = main(["run", "--preset", "fig2", "--out", out,
                   "--workers", str(workers), *overrides])
        assert rc == 0
        texts.append(open(os.path.join(out, "fig2.csv")).read())
    verdict(11, "byte-identical results across worker counts",
            texts[0] == texts[1])
