"""Command-line front end: config parsing, experiment runs, result files.

Experiments are described by flat ``key = value`` config files (presets ship
in the package); command-line ``key=value`` overrides win. Results are CSV
files with a deterministic comment header plus a JSON manifest carrying the
non-deterministic parts (wall-clock timings), so re-running a config with
the same seed reproduces the CSV byte for byte.
"""
from __future__ import annotations

import argparse
import importlib.resources
import json
import os
import sys
import time

import numpy as np

from . import sim
from .errors import GridMismatch, LrbcError
from .precode import SCHEMES
from .sim import ExperimentConfig

ARTIFACT_VERSION = "1"

SER_COLUMNS = "scheme,n_tx,n_rx,rates,snr_db,trials,errors,ser,ci_low,ci_high,avg_energy,seed"
OUTAGE_COLUMNS = "kind,rho,value,mc_value,mc_trials"
TAIL_COLUMNS = "n,m,epsilon,trials,hits,p_hat"


class ConfigError(LrbcError):
    """Invalid or unreadable experiment configuration."""


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def parse_config(path: str | None = None, overrides=()) -> dict:
    """Flat key = value config; later sources win; values stay strings.

    Raises ConfigError with one diagnostic per malformed line or override.
    """
    cfg = {}
    problems = []
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as ex:
            raise ConfigError(f"cannot read config {path}: {ex}") from ex
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                problems.append(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
                continue
            k, v = line.split("=", 1)
            cfg[k.strip()] = v.strip()
    for ov in overrides:
        if "=" not in ov:
            problems.append(f"override {ov!r} is not key=value")
            continue
        k, v = ov.split("=", 1)
        cfg[k.strip()] = v.strip()
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def _get(cfg, key, cast, default=None, problems=None):
    if key not in cfg:
        if default is not None:
            return default
        problems.append(f"missing key {key!r}")
        return None
    try:
        return cast(cfg[key])
    except (ValueError, TypeError):
        problems.append(f"key {key!r}: cannot parse {cfg[key]!r}")
        return None


def _floats(s):
    return tuple(float(x) for x in str(s).split(",") if x.strip() != "")


def _ints(s):
    return tuple(int(x) for x in str(s).split(",") if x.strip() != "")


def _strs(s):
    return tuple(x.strip() for x in str(s).split(",") if x.strip() != "")


def build_ser_configs(cfg: dict) -> tuple:
    """(name, [(scheme, ExperimentConfig), ...]) from a ser config dict."""
    problems = []
    name = cfg.get("name", "run")
    schemes = _get(cfg, "schemes", _strs, problems=problems) or ()
    n_tx = _get(cfg, "n_tx", int, problems=problems)
    n_rx = _get(cfg, "n_rx", int, problems=problems)
    snr_db = _get(cfg, "snr_db", _floats, problems=problems)
    rates = _ints(cfg["rates"]) if "rates" in cfg else None
    sum_rate = int(cfg["sum_rate"]) if "sum_rate" in cfg else None
    for s in schemes:
        if s not in SCHEMES:
            problems.append(f"unknown scheme {s!r}; valid: {', '.join(SCHEMES)}")
    if problems:
        raise ConfigError("; ".join(problems))
    common = dict(
        symbols_per_block=_get(cfg, "symbols_per_block", int, 100, problems),
        max_symbols=_get(cfg, "max_symbols", int, 10_000_000, problems),
        target_errors=_get(cfg, "target_errors", int, 400, problems),
        seed=_get(cfg, "seed", int, 0, problems),
        power_mode=cfg.get("power_mode", "exact"),
        convention=cfg.get("convention", "odd"),
        lll_p=_get(cfg, "lll_p", float, 0.75, problems),
    )
    runs = []
    for s in schemes:
        try:
            runs.append(
                (
                    s,
                    ExperimentConfig(
                        n_tx=n_tx,
                        n_rx=n_rx,
                        scheme=s,
                        snr_db=snr_db,
                        rates=None if s == "LRA_UNEQUAL" else rates,
                        sum_rate=sum_rate if s == "LRA_UNEQUAL" else None,
                        **common,
                    ),
                )
            )
        except ValueError as ex:
            problems.append(str(ex))
    if problems:
        raise ConfigError("; ".join(problems))
    return name, runs


def _header_lines(name: str, cfg: dict) -> list:
    lines = [f"# lrbc-result v{ARTIFACT_VERSION}", f"# name={name}"]
    for k in sorted(cfg):
        lines.append(f"# {k}={cfg[k]}")
    return lines


def _atomic_write(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _rates_label(scheme: str, cfg: ExperimentConfig) -> str:
    if scheme == "LRA_UNEQUAL":
        return f"sum{cfg.sum_rate}"
    return "+".join(str(r) for r in cfg.rates)


def run_ser_experiment(name: str, cfg: dict, out_dir: str, workers: int) -> dict:
    _, runs = build_ser_configs(cfg)
    rows = [SER_COLUMNS]
    timings = {}
    for scheme, ec in runs:
        t0 = time.perf_counter()
        per_point = []
        points = sim.run_ser(ec, workers=workers,
                             on_point=lambda pt, s: per_point.append(s))
        timings[scheme] = {"total_s": time.perf_counter() - t0, "per_point_s": per_point}
        label = _rates_label(scheme, ec)
        for pt in points:
            rows.append(
                ",".join(
                    [
                        scheme,
                        str(ec.n_tx),
                        str(ec.n_rx),
                        label,
                        _fmt(pt.snr_db),
                        str(pt.trials),
                        str(pt.errors),
                        _fmt(pt.ser),
                        _fmt(pt.ci_low),
                        _fmt(pt.ci_high),
                        _fmt(pt.avg_energy),
                        str(ec.seed),
                    ]
                )
            )
    csv_path = os.path.join(out_dir, f"{name}.csv")
    _atomic_write(csv_path, "\n".join(_header_lines(name, cfg) + rows) + "\n")
    return {"csv": csv_path, "timings": timings}


def run_outage_experiment(name: str, cfg: dict, out_dir: str, workers: int) -> dict:
    problems = []
    n_tx = _get(cfg, "n_tx", int, problems=problems)
    n_rx = _get(cfg, "n_rx", int, problems=problems)
    r1 = _get(cfg, "r1", float, problems=problems)
    r_sum = _get(cfg, "r_sum", float, problems=problems)
    seed = _get(cfg, "seed", int, 0, problems)
    mc_trials = _get(cfg, "mc_trials", int, 1_000_000, problems)
    mc_rho = _get(cfg, "mc_rho", _floats, (), problems)
    fixed_grid = _get(cfg, "fixed_rho_grid", _floats, tuple(np.logspace(3, 5, 9)), problems)
    sum_grid = _get(cfg, "sum_rho_grid", _floats, tuple(np.logspace(2, 4, 9)), problems)
    if problems:
        raise ConfigError("; ".join(problems))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed)))
    rows = [OUTAGE_COLUMNS]
    t0 = time.perf_counter()
    for rho in sorted(set(mc_rho) | set(fixed_grid)):
        val = sim.outage_fixed_rate(rho, r1, n_tx)
        if rho in mc_rho:
            mc = sim.outage_fixed_rate_mc(rho, r1, n_tx, mc_trials, rng)
            rows.append(f"fixed,{_fmt(rho)},{_fmt(val)},{_fmt(mc)},{mc_trials}")
        else:
            rows.append(f"fixed,{_fmt(rho)},{_fmt(val)},,0")
    for rho in sorted(set(mc_rho) | set(sum_grid)):
        val = sim.outage_sum_rate_bound(rho, r_sum, n_tx, n_rx)
        if rho in mc_rho:
            mc = sim.outage_sum_rate_bound_mc(rho, r_sum, n_tx, n_rx, mc_trials, rng)
            rows.append(f"sum_bound,{_fmt(rho)},{_fmt(val)},{_fmt(mc)},{mc_trials}")
        else:
            rows.append(f"sum_bound,{_fmt(rho)},{_fmt(val)},,0")
    csv_path = os.path.join(out_dir, f"{name}.csv")
    _atomic_write(csv_path, "\n".join(_header_lines(name, cfg) + rows) + "\n")
    return {"csv": csv_path, "timings": {"total_s": time.perf_counter() - t0}}


def run_tail_experiment(name: str, cfg: dict, out_dir: str, workers: int) -> dict:
    problems = []
    cases = _get(cfg, "cases", _strs, problems=problems) or ()
    seed = _get(cfg, "seed", int, 0, problems)
    rows = [TAIL_COLUMNS]
    timings = {}
    parsed = []
    for case in cases:
        try:
            n, m = (int(x) for x in case.split("x"))
        except ValueError:
            problems.append(f"bad tail case {case!r} (want like 2x2)")
            continue
        key = f"{n}x{m}"
        trials = _get(cfg, f"trials_{key}", int, problems=problems)
        gspec = _get(cfg, f"grid_{key}", _floats, problems=problems)
        if gspec is not None and len(gspec) != 3:
            problems.append(f"grid_{key} must be log10_start,log10_stop,count")
            continue
        parsed.append((n, m, key, trials, gspec))
    if problems:
        raise ConfigError("; ".join(problems))
    for n, m, key, trials, gspec in parsed:
        grid = np.logspace(gspec[0], gspec[1], int(gspec[2]))
        t0 = time.perf_counter()
        pts = sim.min_distance_experiment(n, m, grid, trials, seed=seed)
        timings[key] = time.perf_counter() - t0
        for p in pts:
            rows.append(f"{p.n},{p.m},{_fmt(p.epsilon)},{p.trials},{p.hits},{_fmt(p.p_hat)}")
    csv_path = os.path.join(out_dir, f"{name}.csv")
    _atomic_write(csv_path, "\n".join(_header_lines(name, cfg) + rows) + "\n")
    return {"csv": csv_path, "timings": timings}


def run_experiment(cfg: dict, out_dir: str, workers: int | None = None,
                   name: str | None = None) -> dict:
    """Run the configured experiment; write CSV + manifest; return paths."""
    if workers is None:
        workers = sim.default_workers()
    os.makedirs(out_dir, exist_ok=True)
    experiment = cfg.get("experiment")
    name = name or cfg.get("name", "run")
    runners = {
        "ser": run_ser_experiment,
        "outage": run_outage_experiment,
        "tail": run_tail_experiment,
    }
    if experiment not in runners:
        raise ConfigError(
            f"experiment must be one of {sorted(runners)}, got {experiment!r}"
        )
    t0 = time.perf_counter()
    result = runners[experiment](name, cfg, out_dir, workers)
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "name": name,
        "config": dict(sorted(cfg.items())),
        "seed": int(cfg.get("seed", 0)),
        "wall_clock_s": time.perf_counter() - t0,
        "timings": result["timings"],
    }
    manifest_path = os.path.join(out_dir, f"{name}.manifest.json")
    _atomic_write(manifest_path, json.dumps(manifest, indent=2) + "\n")
    result["manifest"] = manifest_path
    return result


# ---------------------------------------------------------------------------
# Reading results back, curve comparison
# ---------------------------------------------------------------------------


def read_ser_csv(path: str) -> dict:
    """Curves from a ser CSV: {scheme: {"snr": array, "ser": array}}."""
    curves = {}
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    body = [ln for ln in lines if not ln.startswith("#")]
    if not body or body[0] != SER_COLUMNS:
        raise LrbcError(f"{path} is not a ser result file")
    for ln in body[1:]:
        f = ln.split(",")
        scheme = f[0]
        c = curves.setdefault(scheme, {"snr": [], "ser": []})
        c["snr"].append(float(f[4]))
        c["ser"].append(float(f[7]))
    for c in curves.values():
        c["snr"] = np.array(c["snr"])
        c["ser"] = np.array(c["ser"])
    return curves


def snr_at_ser(curve: dict, ser_level: float) -> float:
    """SNR (dB) where the curve crosses ser_level, log-linear interpolation."""
    snr = curve["snr"]
    ser = curve["ser"]
    keep = ser > 0
    snr, ser = snr[keep], ser[keep]
    order = np.argsort(ser)
    ls, xs = np.log10(ser[order]), snr[order]
    if not (ls[0] <= np.log10(ser_level) <= ls[-1]):
        raise LrbcError(
            f"ser={ser_level:g} outside measured range [{10**ls[0]:.3g}, {10**ls[-1]:.3g}]"
        )
    return float(np.interp(np.log10(ser_level), ls, xs))


def compare_runs(file_a: str, file_b: str, scheme_a: str | None = None,
                 scheme_b: str | None = None, ser_level: float = 1e-3) -> dict:
    """Per-point dB gaps between two SER curves at matched SER.

    Positive gap means curve A reaches the same SER at a lower SNR (A is
    better). Requires both files to share the SNR grid.
    """
    ca = read_ser_csv(file_a)
    cb = read_ser_csv(file_b)

    def pick(curves, want, path):
        if want is None:
            if len(curves) != 1:
                raise LrbcError(f"{path} holds schemes {sorted(curves)}; pick one")
            return next(iter(curves.items()))
        if want not in curves:
            raise LrbcError(f"{path} has no scheme {want!r}")
        return want, curves[want]

    na, a = pick(ca, scheme_a, file_a)
    nb, b = pick(cb, scheme_b, file_b)
    if a["snr"].shape != b["snr"].shape or np.any(a["snr"] != b["snr"]):
        raise GridMismatch("the two curves use different SNR grids")
    gaps = []
    for snr, ser in zip(a["snr"], a["ser"]):
        try:
            gaps.append((float(snr), float(ser), snr_at_ser(b, ser) - float(snr)))
        except LrbcError:
            continue
    report = {"scheme_a": na, "scheme_b": nb, "per_point": gaps}
    try:
        report["gap_at_level"] = snr_at_ser(b, ser_level) - snr_at_ser(a, ser_level)
        report["ser_level"] = ser_level
    except LrbcError:
        report["gap_at_level"] = None
        report["ser_level"] = ser_level
    return report


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def preset_path(name: str) -> str:
    ref = importlib.resources.files("lrbc") / "presets" / f"{name}.cfg"
    if not ref.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return str(ref)


def list_presets() -> list:
    root = importlib.resources.files("lrbc") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # bad flags count as bad configuration
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def main(argv=None) -> int:
    parser = _Parser(prog="lrbc", description="lattice-reduction broadcast precoding simulator")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", parents=[], help="run an experiment")
    src = p_run.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", help="bundled preset name")
    src.add_argument("--config", help="path to a key = value config file")
    p_run.add_argument("--out", default=".", help="output directory")
    p_run.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: LRBC_WORKERS or 1)")
    p_run.add_argument("overrides", nargs="*", help="key=value overrides (win over file)")

    p_cmp = sub.add_parser("compare", help="dB gap between two SER curves")
    p_cmp.add_argument("file_a")
    p_cmp.add_argument("file_b")
    p_cmp.add_argument("--scheme-a", default=None)
    p_cmp.add_argument("--scheme-b", default=None)
    p_cmp.add_argument("--ser", type=float, default=1e-3, help="SER level for the headline gap")

    sub.add_parser("presets", help="list bundled presets")

    args = parser.parse_args(argv)
    try:
        if args.cmd == "presets":
            for name in list_presets():
                print(name)
            return 0
        if args.cmd == "run":
            path = preset_path(args.preset) if args.preset else args.config
            cfg = parse_config(path, args.overrides)
            if args.preset and "name" not in cfg:
                cfg["name"] = args.preset
            result = run_experiment(cfg, args.out, workers=args.workers)
            print(result["csv"])
            print(result["manifest"])
            return 0
        if args.cmd == "compare":
            rep = compare_runs(args.file_a, args.file_b, args.scheme_a, args.scheme_b, args.ser)
            print(f"curve A: {rep['scheme_a']}  curve B: {rep['scheme_b']}")
            print("snr_db,ser_a,gap_db (positive: A better)")
            for snr, ser, gap in rep["per_point"]:
                print(f"{snr:.10g},{ser:.10g},{gap:+.3f}")
            if rep["gap_at_level"] is not None:
                print(f"gap at ser={rep['ser_level']:g}: {rep['gap_at_level']:+.3f} dB")
            else:
                print(f"gap at ser={rep['ser_level']:g}: not measurable on these curves")
            return 0
    except ConfigError as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return 1
    except Exception as ex:  # runtime failure
        print(f"error: {ex}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
