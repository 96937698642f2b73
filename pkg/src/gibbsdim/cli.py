"""Command-line batch runner.

Subcommands: orbit-stats, dimension, forced-excursion, ineq-check,
series-check, oracle, report.  Parameters come from built-in defaults, then
an optional flat ``key = value`` config file, then the ``GIBBSDIM_SEED``
environment variable, then command-line flags.

Exit status: 0 when every requested check passes, 1 on a failed check or a
numerical failure, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import functools
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import acceptance
from . import estimators as est
from .errors import GibbsDimError, InvalidParameters, InvalidSpec, Marker, NoK0Found
from .maps import cyl_log_lengths_gauss
from .measures import measure_stats, parse_measure, volume_lemma_dim
from .orbits import (
    GENERATOR_NAME,
    checkpoint_rows,
    checkpoint_schedule,
    dichotomy_spread,
    generate_orbit,
    map_orbits,
    max_blowup,
    plant_excursion,
    worker_count,
)
from .partition import DEFAULT_N_TABLE, parse_partition

SUBCOMMANDS = (
    "orbit-stats",
    "dimension",
    "forced-excursion",
    "ineq-check",
    "series-check",
    "oracle",
    "report",
)


class ConfigError(Exception):
    """Bad configuration; reported with exit status 2."""


# ---------------------------------------------------------------------------
# config


def _int(text: str) -> int:
    t = text.strip().replace("_", "")
    try:
        return int(t)
    except ValueError:
        v = float(t)
        if not v.is_integer():
            raise ValueError(f"expected an integer, got {text!r}")
        return int(v)


def _float(text: str) -> float:
    return float(text.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> list[int]:
    return [_int(p) for p in text.replace(";", ",").split(",") if p.strip()]


def _float_list(text: str) -> list[float]:
    return [_float(p) for p in text.replace(";", ",").split(",") if p.strip()]


def _str_list(text: str) -> list[str]:
    return [p.strip() for p in text.replace(";", ",").split(",") if p.strip()]


def _model(text: str) -> str:
    t = text.strip().lower()
    if t not in ("pl", "gauss"):
        raise ValueError(f"model must be 'pl' or 'gauss', got {text!r}")
    return t


# key -> (parser, default, help)
KEYS: dict[str, tuple] = {
    "partition": (str, "gauss", "branch lengths: gauss, powerlaw:<a>, table:<path>"),
    "measure": (str, "geometric:0.5", "digit law: geometric:<q>, logsquare, zeta:<b>, table:<path>"),
    "model": (_model, "pl", "cylinder geometry: pl or gauss"),
    "orbits": (_int, 10, "number of orbits"),
    "length": (_int, 10**4, "orbit length"),
    "seed": (_int, 0, "root seed"),
    "checkpoints": (_int_list, None, "comma-separated recording indices"),
    "n_table": (_int, DEFAULT_N_TABLE, "exact-table size"),
    "k0": (_int, None, "threshold digit for the case split"),
    "alpha": (_float, None, "decay exponent (defaults to the partition's)"),
    "delta": (_float, 0.1, "inequality parameter delta"),
    "eta": (_float, 0.05, "inequality parameter eta"),
    "k_min": (_int, 2, "first k of the inequality scan"),
    "k_max": (_int, 10**4, "last k of the inequality scan"),
    "n_min": (_int, 1, "first n of the inequality scan"),
    "n_max": (_int, 10**4, "last n of the inequality scan"),
    "extended": (_bool, False, "also grid-search k beyond k_max"),
    "ell": (_float_list, [1e9, 1e12], "log-sizes of planted digits"),
    "position": (_int, None, "planting position"),
    "depth_cap": (_int, 12, "ball-bracket depth cap"),
    "horizon": (_int, 10**6, "partial-sum horizon"),
    "tol": (_float, 0.02, "relative tolerance of the oracle check"),
    "criteria": (_str_list, None, "acceptance criteria to run"),
    "workers": (_int, None, "worker processes"),
    "output": (str, "gibbsdim-out", "output directory"),
}


EXECUTION_KEYS = ("output", "workers")


def read_config_file(path: str | Path) -> dict:
    """Parse a flat ``key = value`` file; errors carry the line number."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    for i, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{i}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"{path}:{i}: unknown key {key!r}")
        try:
            out[key] = KEYS[key][0](val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{i}: bad value for {key}: {exc}") from exc
    return out


@dataclass
class Config:
    values: dict
    sources: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError as exc:
            raise AttributeError(name) from exc

    def echo(self) -> dict:
        """Parameters that determine the output bytes (worker count and location excluded)."""
        return {k: self.values[k] for k in sorted(self.values) if k not in EXECUTION_KEYS}


def build_config(args: argparse.Namespace) -> Config:
    vals = {k: v[1] for k, v in KEYS.items()}
    src = {k: "default" for k in KEYS}
    if getattr(args, "config", None):
        for k, v in read_config_file(args.config).items():
            vals[k], src[k] = v, "file"
    env_seed = os.environ.get("GIBBSDIM_SEED")
    if env_seed:
        try:
            vals["seed"], src["seed"] = _int(env_seed), "env"
        except ValueError as exc:
            raise ConfigError(f"GIBBSDIM_SEED: {exc}") from exc
    for k in KEYS:
        raw = getattr(args, k, None)
        if raw is None:
            continue
        try:
            vals[k], src[k] = KEYS[k][0](raw), "flag"
        except ValueError as exc:
            raise ConfigError(f"--{k.replace('_', '-')}: {exc}") from exc
    cfg = Config(vals, src)
    _validate(cfg, args.command)
    return cfg


def _validate(cfg: Config, command: str) -> None:
    if cfg.orbits < 1:
        raise ConfigError("orbits must be at least 1")
    if cfg.length < 1:
        raise ConfigError("length must be at least 1")
    if cfg.checkpoints:
        if min(cfg.checkpoints) < 1:
            raise ConfigError("checkpoints must be positive")
        if max(cfg.checkpoints) > cfg.length:
            raise ConfigError(f"length {cfg.length} is below the largest checkpoint {max(cfg.checkpoints)}")
    if not 1 <= cfg.depth_cap <= 40:
        raise ConfigError("depth_cap must lie in 1..40")
    if cfg.seed < 0 or cfg.seed >= 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if command == "ineq-check" or (command == "dimension" and cfg.k0 is not None):
        alpha = cfg.alpha if cfg.alpha is not None else 2.0
        try:
            est.ineqsums_rhs(alpha, cfg.delta, cfg.eta)
        except InvalidParameters as exc:
            raise ConfigError(str(exc)) from exc
    if command == "forced-excursion":
        pos = cfg.position if cfg.position is not None else min(cfg.length, 10**4)
        if not 1 <= pos <= cfg.length:
            raise ConfigError(f"position {pos} outside 1..{cfg.length}")
        if any(e <= 0 for e in cfg.ell):
            raise ConfigError("ell values must be positive")
    if command == "report" and cfg.criteria:
        bad = [c for c in cfg.criteria if c not in acceptance.CRITERIA]
        if bad:
            raise ConfigError(f"unknown criteria {bad}")


def _specs(cfg: Config):
    try:
        return parse_partition(cfg.partition, cfg.n_table), parse_measure(cfg.measure, cfg.n_table)
    except InvalidSpec as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, Marker):
        return str(v)
    return str(v)


def _manifest_header(cfg: Config, command: str) -> dict:
    return {
        "command": command,
        "config": cfg.echo(),
        "generator": GENERATOR_NAME,
        "version": library_version(),
    }


def write_csv(path: Path, header: dict, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# manifest: " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def library_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class Outcome:
    columns: list[str]
    rows: list[dict]
    checks: dict = field(default_factory=dict)
    lines: list[str] = field(default_factory=list)


def _workers(cfg: Config) -> int:
    return cfg.workers if cfg.workers else worker_count()


def _checkpoints(cfg: Config) -> list[int]:
    return checkpoint_schedule(cfg.length, cfg.checkpoints or ())


# ---------------------------------------------------------------------------
# subcommands (worker functions are top level so they pickle)


def _orbit_stats_rows(orbit, cps):
    rows = checkpoint_rows(orbit)
    for r in rows:
        r["S"] = -r["cum_log_r"]
        r["max_blowup"] = max_blowup(orbit, r["n"]) if r["n"] >= 2 else math.nan
    return rows


def cmd_orbit_stats(cfg: Config) -> Outcome:
    part, mu = _specs(cfg)
    cps = _checkpoints(cfg)
    res = map_orbits(
        functools.partial(_orbit_stats_rows, cps=cps), mu, part, cfg.length, cfg.orbits, cfg.seed,
        _workers(cfg), checkpoints=cps,
    )
    rows = [r for rs in res for r in rs]
    cols = ["orbit_id", "n", "cum_log_p", "cum_log_r", "max_X", "argmax", "S_trimmed", "S", "max_blowup"]
    out = Outcome(cols, rows)
    N = cfg.length
    last = [r for r in rows if r["n"] == N]
    S = np.array([r["S"] for r in last])
    St = np.array([r["S_trimmed"] for r in last])
    out.lines.append(f"median S_N/(N log N) = {np.median(S) / (N * math.log(max(N, 2))):.6g}")
    out.lines.append(f"median trimmed/full = {np.median(St / S):.6g}")
    if cfg.orbits >= 2 and N >= 2:
        sp = dichotomy_spread(list(zip(S, St)), N)
        out.lines.append(f"spread max/min: full {sp.full_spread:.6g}, trimmed {sp.trimmed_spread:.6g}")
    return out


def _dimension_rows(orbit, cps, k0, gauss):
    rows = []
    gl = cyl_log_lengths_gauss(orbit.digits, allow_log=True) if gauss else None
    for n in cps:
        items = [est.symbolic_dimension(orbit, n), est.lower_cover_ratio(orbit, n)]
        if gauss:
            lm, ll = orbit.cum_log_p_at(n), float(gl[n - 1])
            rows.append(dict(orbit_id=orbit.orbit_id, n=n, kind="symbolic_gauss", log_measure=lm,
                             log_length=ll, ratio=lm / ll))
        try:
            items.append(est.neighbor_upper_last_valid(orbit, n))
        except GibbsDimError:
            pass
        if k0 is not None and n >= 2:
            items.append(est.case_split_upper(orbit, n, k0))
        for e in items:
            rows.append(dict(e.row(orbit.orbit_id), n=n))
    return rows


def cmd_dimension(cfg: Config) -> Outcome:
    part, mu = _specs(cfg)
    cps = _checkpoints(cfg)
    gauss = cfg.model == "gauss"
    res = map_orbits(
        functools.partial(_dimension_rows, cps=cps, k0=cfg.k0, gauss=gauss), mu, part, cfg.length,
        cfg.orbits, cfg.seed, _workers(cfg), checkpoints=cps, store=True if gauss else None,
    )
    rows = [r for rs in res for r in rs]
    cols = ["orbit_id", "n", "kind", "log_measure", "log_length", "ratio", "flag"]
    out = Outcome(cols, rows)
    kind = "symbolic_gauss" if gauss else "symbolic"
    trend_pts = [n for n in cps if n >= 10**3] or cps
    meds = []
    for n in trend_pts:
        vals = [r["ratio"] for r in rows if r["n"] == n and r["kind"] == kind]
        meds.append(float(np.nanmedian(vals)))
    for n, m in zip(trend_pts, meds):
        out.lines.append(f"n={n}: median {kind} ratio {m:.6f}")
    if len(meds) >= 2:
        out.checks["monotone trend"] = bool(np.all(np.diff(meds) < 0))
    return out


def cmd_forced_excursion(cfg: Config) -> Outcome:
    part, mu = _specs(cfg)
    pos = cfg.position if cfg.position is not None else min(cfg.length, 10**4)
    base = generate_orbit(mu, part, cfg.length, cfg.seed, store=True)
    out = Outcome(["orbit_id", "n", "ell", "kind", "log_measure", "log_length", "ratio", "flag"], [])
    lower = {}
    for ell in [None] + list(cfg.ell):
        o = base if ell is None else plant_excursion(base, pos, ell)
        items = [est.symbolic_dimension(o, pos), est.lower_cover_ratio(o, pos)]
        if cfg.k0 is not None and pos >= 2:
            items.append(est.case_split_upper(o, pos, cfg.k0))
        for e in items:
            out.rows.append(dict(e.row(0), ell=math.nan if ell is None else ell))
        label = "unplanted" if ell is None else f"ell*={ell:.6g}"
        out.lines.append(f"{label}: lower-cover ratio {items[1].ratio:.6g}, symbolic {items[0].ratio:.6g}")
        if ell is not None:
            lower[ell] = items[1].ratio
    ells = sorted(lower)
    out.checks["lower-cover ratio decreases in ell*"] = all(
        lower[b] < lower[a] for a, b in zip(ells, ells[1:])
    )
    return out


def cmd_ineq_check(cfg: Config) -> Outcome:
    part, mu = _specs(cfg)
    alpha = cfg.alpha if cfg.alpha is not None else part.alpha
    rhs = est.ineqsums_rhs(alpha, cfg.delta, cfg.eta)
    out = Outcome(["k", "max_lhs", "argmax_n", "rhs", "holds"], [])
    out.lines.append(f"RHS {rhs:.5f}")
    try:
        k0, rep = est.ineqsums_check(
            alpha, cfg.delta, cfg.eta, (cfg.k_min, cfg.k_max), (cfg.n_min, cfg.n_max), mu, part
        )
        out.lines.append(f"k0 = {k0}")
        out.checks["k0 found"] = True
    except NoK0Found as exc:
        rep = exc.profile
        out.lines.append(f"no k0 in [{cfg.k_min}, {cfg.k_max}]: {exc}")
        out.checks["k0 found"] = False
    for k, m, a in zip(rep.k_values, rep.max_lhs, rep.argmax_n):
        out.rows.append(dict(k=int(k), max_lhs=float(m), argmax_n=int(a), rhs=rhs, holds=bool(m <= rhs)))
    if cfg.extended:
        kg, grep = est.ineqsums_threshold_search(
            alpha, cfg.delta, cfg.eta, mu, part, n_hi=cfg.n_max, k_start=cfg.k_max, k_stop=2**52
        )
        out.lines.append(
            "grid search beyond k_max: "
            + (f"bound holds from k ~ {kg}" if kg is not None else "no threshold below 2^52")
        )
        for k, m, a in zip(grep.k_values, grep.max_lhs, grep.argmax_n):
            out.rows.append(dict(k=int(k), max_lhs=float(m), argmax_n=int(a), rhs=rhs, holds=bool(m <= rhs)))
    return out


def cmd_series_check(cfg: Config) -> Outcome:
    part, mu = _specs(cfg)
    N = cfg.horizon
    cps = sorted(set([c for c in (cfg.checkpoints or []) if c <= N] + checkpoint_schedule(N)))
    st = measure_stats(mu, part, cps)
    rows = [
        dict(n=int(n), entropy=h, lyapunov=lam, trimmed_criterion=c, decay_pointwise=d, decay_cesaro=dc, tail_ratio=t)
        for n, h, lam, c, d, dc, t in zip(
            st.checkpoints, st.entropy_partials, st.lyapunov_partials, st.criterion_partials,
            st.decay_pointwise, st.decay_cesaro, st.tail_ratio,
        )
    ]
    out = Outcome(
        ["n", "entropy", "lyapunov", "trimmed_criterion", "decay_pointwise", "decay_cesaro", "tail_ratio"], rows
    )
    for name, flag in (
        ("entropy", st.entropy_divergent),
        ("lyapunov", st.lyapunov_divergent),
        ("trimmed criterion", st.criterion_divergent),
    ):
        out.lines.append(f"{name} series: {'divergent' if flag else 'convergent'} at N={N}")
    return out


def _symbolic_final(orbit):
    n = orbit.length
    return orbit.cum_log_p_at(n) / orbit.cum_log_r_at(n)


def cmd_oracle(cfg: Config) -> Outcome:
    part, mu = _specs(cfg)
    oracle = volume_lemma_dim(mu, part, cfg.horizon)
    vals = map_orbits(_symbolic_final, mu, part, cfg.length, cfg.orbits, cfg.seed, _workers(cfg))
    rows = [dict(orbit_id=i, n=cfg.length, symbolic=v) for i, v in enumerate(vals)]
    out = Outcome(["orbit_id", "n", "symbolic"], rows)
    med = float(np.median(vals))
    out.lines.append(f"median symbolic dimension {med:.6f} over {cfg.orbits} orbits")
    if oracle is Marker.DIVERGENT:
        out.lines.append("h/lambda undefined: entropy series diverges")
        out.checks["oracle agreement"] = False
    else:
        rel = abs(med - oracle) / oracle if oracle else abs(med)
        out.lines.append(f"h/lambda {oracle:.6f}; relative difference {rel:.4g} (tol {cfg.tol})")
        out.checks["oracle agreement"] = rel <= cfg.tol
    return out


def cmd_report(cfg: Config) -> Outcome:
    seed = cfg.seed if cfg.sources.get("seed") != "default" else acceptance.ACCEPTANCE_SEED
    results = acceptance.run_criteria(cfg.criteria, seed=seed)
    out = Outcome(["criterion", "passed", "seconds", "summary"], [])
    for r in results:
        out.rows.append(dict(criterion=r.number, passed=r.passed, seconds=round(r.seconds, 3), summary=r.summary))
        out.lines.append(r.line())
        out.checks[f"criterion {r.number}"] = r.passed
    return out


COMMANDS = {
    "orbit-stats": cmd_orbit_stats,
    "dimension": cmd_dimension,
    "forced-excursion": cmd_forced_excursion,
    "ineq-check": cmd_ineq_check,
    "series-check": cmd_series_check,
    "oracle": cmd_oracle,
    "report": cmd_report,
}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gibbsdim", description="Local-dimension experiments for Gauss-like maps.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", "-c", help="flat key = value config file")
        for key, (_, default, help_) in KEYS.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="VALUE",
                            help=f"{help_} (default {default})")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        print(f"gibbsdim: config error: {exc}", file=sys.stderr)
        return 2
    outdir = Path(cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    header = _manifest_header(cfg, args.command)
    manifest = dict(header, execution={k: cfg.values[k] for k in EXECUTION_KEYS}, sources=cfg.sources,
                    status="running", checks={})
    t0 = time.perf_counter()
    code = 0
    try:
        outcome = COMMANDS[args.command](cfg)
        write_csv(outdir / f"{args.command}.csv", header, outcome.columns, outcome.rows)
        for line in outcome.lines:
            print(line)
        manifest["checks"] = {k: "PASS" if v else "FAIL" for k, v in outcome.checks.items()}
        for k, v in outcome.checks.items():
            print(f"{'PASS' if v else 'FAIL'}  {k}")
        code = 0 if all(outcome.checks.values()) else 1
        manifest["status"] = "ok" if code == 0 else "check failed"
    except ConfigError as exc:
        print(f"gibbsdim: config error: {exc}", file=sys.stderr)
        manifest.update(status="config error", error=str(exc))
        code = 2
    except (GibbsDimError, FloatingPointError, ValueError) as exc:
        print(f"gibbsdim: numerical failure: {exc}", file=sys.stderr)
        manifest.update(status="numerical failure", error=f"{type(exc).__name__}: {exc}")
        code = 1
    finally:
        manifest["wall_clock_seconds"] = round(time.perf_counter() - t0, 3)
        manifest["exit_status"] = code
        (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
