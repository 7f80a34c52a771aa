"""Command-line front end: config parsing, dispatch, deterministic output.

Configuration values come, in increasing priority, from built-in defaults,
the FRAMEFLOW_SEED environment variable (seed only), a flat key=value
config file, and command-line flags.  All numeric constraints are
re-validated at parse time so bad values fail before any work starts.

Exit codes: 0 success, 1 criterion failure, 2 configuration error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainExitError, NumericalAbort
from .group_process import GroupSdeConfig, haar_moment_stats, step_group
from .homogenize import (
    EnsembleSpec,
    effective_diffusivity,
    epsilon_sweep,
    ks_vs_standard_normal,
    linear_fit,
    msd_rate,
    run_ensemble,
)
from .lie_algebra import canonical_basis, casimir_sum
from .manifold import chart_by_name
from .perturbed_geodesic import SimConfig, initial_state, philox_stream, simulate_rescaled_path

# Keys accepted in config files; anything else is rejected by name.
CONFIG_KEYS = (
    "manifold", "dim", "epsilon", "epsilon_list", "e0", "abar", "t_final", "h0",
    "renorm_every", "seed", "paths", "output_times", "output_dir", "oracle",
)

MSD_TOLERANCE = 0.10
KS_P_FLOOR = 0.01
R2_THRESHOLD = 0.99


@dataclass
class RunConfig:
    """Flat, validated view of every tunable the subcommands share."""

    command: str | None = None
    manifold: str = "euclidean:2"
    dim: int | None = None
    epsilon: float = 0.05
    epsilon_list: tuple[float, ...] | None = None
    e0: str = "e1"
    abar: str = "0"
    t_final: float | None = None
    h0: float = 0.1
    renorm_every: int = 1
    seed: int = 0
    paths: int | None = None
    output_times: str | None = None
    output_dir: str = "out"
    oracle: str | None = None
    jobs: int | None = None
    samples: int = 100_000
    reps: int = 16
    with_frames: bool = False
    with_group: bool = False
    verbose: int = 0

    def resolve_dim(self) -> int:
        if self.dim is not None:
            return self.dim
        return chart_by_name(self.manifold).dim

    def e0_vector(self, n: int) -> np.ndarray:
        return _parse_e0(self.e0, n)

    def abar_matrix(self, n: int) -> np.ndarray | None:
        return _parse_abar(self.abar, n)

    def output_times_tuple(self, t_final: float) -> tuple[float, ...] | None:
        if self.output_times is None:
            return None
        text = self.output_times.strip()
        if "," not in text and "." not in text:
            count = _parse_int("output_times", text, minimum=2)
            return tuple(np.linspace(0.0, t_final, count))
        values = tuple(_parse_float("output_times", v) for v in text.split(","))
        return values

    def sim_config(self) -> SimConfig:
        chart = chart_by_name(self.manifold)
        n = chart.dim
        t_final = 1.0 if self.t_final is None else self.t_final
        return SimConfig(
            chart=self.manifold,
            epsilon=self.epsilon,
            t_final=t_final,
            e0=self.e0_vector(n),
            abar=self.abar_matrix(n),
            h0=self.h0,
            renorm_every=self.renorm_every,
            seed=self.seed,
            output_times=self.output_times_tuple(t_final),
        )

    def ensemble_spec(self, default_paths: int = 2000) -> EnsembleSpec:
        return EnsembleSpec(
            sim=self.sim_config(),
            paths=self.paths if self.paths is not None else default_paths,
            epsilon_list=self.epsilon_list,
            oracle=self.oracle,
            jobs=self.jobs if self.jobs is not None else (os.cpu_count() or 1),
        )


def _parse_int(key: str, value, minimum: int | None = None) -> int:
    try:
        out = int(str(value).strip())
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if minimum is not None and out < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}, got {out}")
    return out


def _parse_float(key: str, value, positive: bool = False) -> float:
    try:
        out = float(str(value).strip())
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if positive and not out > 0:
        raise ConfigError(f"{key} must be positive")
    return out


def _parse_e0(spec: str, n: int) -> np.ndarray:
    spec = spec.strip()
    if spec.startswith("e") and spec[1:].isdigit():
        idx = int(spec[1:])
        if not 1 <= idx <= n:
            raise ConfigError(f"e0: index out of range for dimension {n}: {spec}")
        out = np.zeros(n)
        out[idx - 1] = 1.0
        return out
    try:
        vec = np.array([float(v) for v in spec.split(",")], dtype=float)
    except ValueError:
        raise ConfigError(f"e0: expected e<k> or a comma list, got {spec!r}") from None
    if vec.shape != (n,):
        raise ConfigError(f"e0: expected {n} components, got {vec.size}")
    norm = np.linalg.norm(vec)
    if abs(norm - 1.0) > 1e-8:
        raise ConfigError(f"e0 must be a unit vector (|e0| = {norm:.6g})")
    return vec


def _parse_abar(spec: str, n: int) -> np.ndarray | None:
    """Skew drift given as 0/none, canonical:<k>, or basis coefficients."""
    spec = spec.strip().lower()
    if spec in ("0", "none", ""):
        return None
    basis = canonical_basis(n)
    if spec.startswith("canonical:"):
        k = _parse_int("abar", spec.split(":", 1)[1], minimum=1)
        if k > len(basis):
            raise ConfigError(f"abar: canonical index {k} out of range (N = {len(basis)})")
        return basis.mats[k - 1].copy()
    try:
        coef = np.array([float(v) for v in spec.split(",")], dtype=float)
    except ValueError:
        raise ConfigError(f"abar: expected 0, canonical:<k>, or coefficients, got {spec!r}") from None
    if coef.size != len(basis):
        raise ConfigError(f"abar: expected {len(basis)} coefficients, got {coef.size}")
    return np.einsum("k,kij->ij", coef, basis.mats)


def read_config_file(path: str | Path) -> dict:
    """Flat key=value file; '#' starts a comment; unknown keys are errors."""
    out: dict = {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def parse_config(file: str | None = None, flags: dict | None = None,
                 env: dict | None = None) -> RunConfig:
    """Merge defaults, environment seed, config file, and flag overrides."""
    env = os.environ if env is None else env
    merged: dict = {}
    if "FRAMEFLOW_SEED" in env:
        merged["seed"] = env["FRAMEFLOW_SEED"]
    if file:
        merged.update(read_config_file(file))
    for key, value in (flags or {}).items():
        if value is not None:
            merged[key] = value

    cfg = RunConfig()
    converters = {
        "manifold": lambda v: str(v),
        "dim": lambda v: _parse_int("dim", v, minimum=2),
        "epsilon": lambda v: _parse_float("epsilon", v, positive=True),
        "epsilon_list": _parse_epsilon_list,
        "e0": lambda v: str(v),
        "abar": lambda v: str(v),
        "t_final": lambda v: _parse_float("t_final", v, positive=True),
        "h0": _parse_h0,
        "renorm_every": lambda v: _parse_int("renorm_every", v, minimum=1),
        "seed": lambda v: _parse_int("seed", v),
        "paths": lambda v: _parse_int("paths", v, minimum=1),
        "output_times": lambda v: str(v),
        "output_dir": lambda v: str(v),
        "oracle": _parse_oracle,
        "jobs": lambda v: _parse_int("jobs", v, minimum=1),
        "samples": lambda v: _parse_int("samples", v, minimum=1000),
        "reps": lambda v: _parse_int("reps", v, minimum=2),
        "with_frames": bool,
        "with_group": bool,
        "verbose": lambda v: _parse_int("verbose", v),
    }
    for key, value in merged.items():
        if key not in converters:
            raise ConfigError(f"unknown configuration key {key!r}")
        setattr(cfg, key, converters[key](value))
    # Chart name sanity (raises with the offending name).
    chart_by_name(cfg.manifold)
    return cfg


def _parse_h0(value) -> float:
    out = _parse_float("h0", value, positive=True)
    if out > 0.1:
        raise ConfigError("h0 must lie in (0, 0.1]")
    return out


def _parse_oracle(value) -> str | None:
    text = str(value).strip().lower()
    if text in ("", "none", "auto"):
        return None
    if text not in ("euclidean", "hyperbolic"):
        raise ConfigError(f"oracle: expected euclidean, hyperbolic, or auto, got {value!r}")
    return text


def _parse_epsilon_list(value) -> tuple[float, ...]:
    if isinstance(value, (tuple, list)):
        parts = [str(v) for v in value]
    else:
        parts = str(value).split(",")
    eps = tuple(_parse_float("epsilon_list", v, positive=True) for v in parts)
    if not all(b < a for a, b in zip(eps, eps[1:])):
        raise ConfigError("epsilon_list must be strictly decreasing")
    return eps


def _fmt(value) -> str:
    """Shortest round-trip decimal representation."""
    return repr(float(value))


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, (int, float, np.floating)) else str(v)
                              for v in row))
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------- commands


def cmd_verify_algebra(cfg: RunConfig) -> int:
    n = cfg.dim if cfg.dim is not None else cfg.resolve_dim()
    basis = canonical_basis(n)
    gram_defect = basis.gram_defect()
    target = -((n - 1) / 2.0) * np.eye(n)
    casimir_defect = float(np.max(np.abs(casimir_sum(basis) - target)))
    print(f"basis gram defect: {gram_defect:.3e}")
    print(f"casimir defect:    {casimir_defect:.3e}")
    ok = gram_defect < 1e-12 and casimir_defect < 1e-12
    print("verify-algebra:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_haar(cfg: RunConfig) -> int:
    n = cfg.dim if cfg.dim is not None else cfg.resolve_dim()
    e0 = cfg.e0_vector(n)
    rng = philox_stream(cfg.seed, 0)
    est, se = haar_moment_stats(n, e0, cfg.samples, rng)
    target = (4.0 / ((n - 1) * n)) * np.eye(n)
    rows = [(i, j, est[i, j], se[i, j]) for i in range(n) for j in range(n)]
    out = Path(cfg.output_dir) / "haar.csv"
    _write_csv(out, ["i", "j", "estimate", "stderr"], rows)
    worst = float(np.max(np.abs(est - target) / np.maximum(se, 1e-300)))
    print(f"wrote {out}; worst deviation {worst:.2f} stderr from 4/((n-1)n) I")
    return 0 if worst <= 4.0 else 1


def cmd_ergodic(cfg: RunConfig) -> int:
    n = cfg.dim if cfg.dim is not None else cfg.resolve_dim()
    e0 = cfg.e0_vector(n)
    t_avg = 400.0 if cfg.t_final is None else cfg.t_final
    basis = canonical_basis(n)
    gcfg = GroupSdeConfig(basis=basis, epsilon=1.0, abar=cfg.abar_matrix(n), h=cfg.h0)
    rng = philox_stream(cfg.seed, 0)

    pairs = [(i, j) for i in range(n) for j in range(n)]

    def moments(gs):
        w = np.einsum("rij,j->ri", gs, e0)
        return np.stack([w[:, i] * w[:, j] for i, j in pairs], axis=0)

    acc = _ergodic_moment_averages(moments, gcfg, t_avg, cfg.reps, rng, len(pairs))
    est = acc.mean(axis=1)
    se = acc.std(axis=1, ddof=1) / np.sqrt(cfg.reps)
    rows = [(i, j, est[k], se[k]) for k, (i, j) in enumerate(pairs)]
    out = Path(cfg.output_dir) / "ergodic.csv"
    _write_csv(out, ["i", "j", "estimate", "stderr"], rows)
    target = np.array([1.0 / n if i == j else 0.0 for i, j in pairs])
    worst = float(np.max(np.abs(est - target) / np.maximum(se, 1e-300)))
    print(f"wrote {out}; worst deviation {worst:.2f} stderr from delta_ij/n at t={t_avg:g}")
    return 0 if worst <= 4.0 else 1


def _ergodic_moment_averages(moments, gcfg, t_avg, reps, rng, n_components):
    """Left-rectangle time averages of a component-stack functional.

    One batched pass over ``reps`` independent group paths; every
    component shares the same path sample.
    """
    n = gcfg.basis.dim
    n_basis = len(gcfg.basis)
    n_steps = int(round(t_avg / gcfg.h))
    g = np.broadcast_to(np.eye(n), (reps, n, n)).copy()
    total = np.zeros((n_components, reps))
    for _ in range(n_steps):
        total += moments(g) * gcfg.h
        g = step_group(g, gcfg, rng.standard_normal((reps, n_basis)))
    return total / (n_steps * gcfg.h)


def cmd_simulate(cfg: RunConfig) -> int:
    sim = cfg.sim_config()
    n_paths = cfg.paths if cfg.paths is not None else 1
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = chart_by_name(sim.chart).dim
    header = ["t"] + [f"x{i+1}" for i in range(n)]
    if cfg.with_frames:
        header += [f"u{i+1}{j+1}" for i in range(n) for j in range(n)]
    if cfg.with_group:
        header += [f"g{i+1}{j+1}" for i in range(n) for j in range(n)]
    for p in range(n_paths):
        rec = simulate_rescaled_path(sim, path_index=p, record_group=cfg.with_group)
        rows = []
        for k, t in enumerate(rec.times):
            row = [t] + list(rec.xs[k])
            if cfg.with_frames:
                row += list(rec.us[k].reshape(-1))
            if cfg.with_group:
                row += list(rec.gs[k].reshape(-1))
            rows.append(row)
        _write_csv(out_dir / f"path_{p:04d}.csv", header, rows)
    print(f"wrote {n_paths} path file(s) to {out_dir}")
    return 0


def cmd_homogenize(cfg: RunConfig) -> int:
    spec = cfg.ensemble_spec()
    stats = run_ensemble(spec)
    chart = chart_by_name(spec.sim.chart)
    n = chart.dim
    out_dir = Path(cfg.output_dir)

    oracle_col = stats.oracle_msd if stats.oracle_msd is not None else np.full_like(stats.msd, np.nan)
    _write_csv(out_dir / "msd.csv", ["t", "msd", "stderr", "oracle_msd"],
               zip(stats.times, stats.msd, stats.msd_stderr, oracle_col))
    if stats.ks_stat is not None:
        _write_csv(out_dir / "ks.csv", ["t", "statistic", "p"],
                   zip(stats.times, stats.ks_stat, stats.ks_p))

    criteria: dict = {}
    positive = stats.times > 0
    slope, _, r2 = linear_fit(stats.times[positive], stats.msd[positive])
    if chart.flat:
        target = msd_rate(n)
        rel_err = abs(slope - target) / target
        criteria["msd_slope"] = {
            "value": slope, "target": target, "rel_err": rel_err,
            "tolerance": MSD_TOLERANCE, "pass": bool(rel_err < MSD_TOLERANCE),
        }
        criteria["msd_linearity"] = {
            "r2": r2, "threshold": R2_THRESHOLD, "pass": bool(r2 > R2_THRESHOLD),
        }
        c = effective_diffusivity(n)
        t_last = stats.times[-1]
        x0 = initial_state(spec.sim).x
        z = (stats.positions[-1, :, 0] - x0[0]) / np.sqrt(2.0 * c * t_last)
        ks_stat, ks_p = ks_vs_standard_normal(z)
        criteria["marginal_normal_ks"] = {
            "statistic": ks_stat, "p_value": ks_p, "floor": KS_P_FLOOR,
            "pass": bool(ks_p > KS_P_FLOOR),
        }
    else:
        ks_stat = float(stats.ks_stat[-1])
        ks_p = float(stats.ks_p[-1])
        criteria["distance_oracle_ks"] = {
            "statistic": ks_stat, "p_value": ks_p, "floor": KS_P_FLOOR,
            "pass": bool(ks_p > KS_P_FLOOR),
        }
    criteria["aborts"] = {
        "count": len(stats.aborts), "paths": spec.paths,
        "pass": bool(len(stats.aborts) == 0),
    }
    overall = all(c["pass"] for c in criteria.values())
    summary = {
        "command": "homogenize",
        "chart": spec.sim.chart,
        "epsilon": spec.sim.epsilon,
        "paths": spec.paths,
        "seed": spec.sim.seed,
        "criteria": criteria,
        "pass": overall,
    }
    _write_json(out_dir / "summary.json", summary)
    for name, crit in criteria.items():
        print(f"{name}: {'PASS' if crit['pass'] else 'FAIL'}")
    print(f"wrote msd.csv, ks.csv, summary.json to {out_dir}")
    return 0 if overall else 1


def cmd_sweep(cfg: RunConfig) -> int:
    if cfg.epsilon_list is None:
        raise ConfigError("sweep requires epsilon_list")
    spec = cfg.ensemble_spec()
    rows = epsilon_sweep(spec)
    out_dir = Path(cfg.output_dir)
    _write_csv(out_dir / "sweep.csv", ["epsilon", "msd_rel_err", "ks_stat", "ks_p"],
               ((r.epsilon, r.msd_rel_err, r.ks_stat, r.ks_p) for r in rows))
    final = rows[-1]
    summary = {
        "command": "sweep",
        "chart": spec.sim.chart,
        "epsilon_list": list(spec.epsilon_list),
        "paths": spec.paths,
        "seed": spec.sim.seed,
        "final_row": dataclasses.asdict(final),
        "criteria": {
            "final_msd_rel_err": {"value": final.msd_rel_err, "tolerance": MSD_TOLERANCE,
                                  "pass": bool(final.msd_rel_err < MSD_TOLERANCE)},
            "final_ks": {"p_value": final.ks_p, "floor": KS_P_FLOOR,
                         "pass": bool(final.ks_p > KS_P_FLOOR)},
        },
    }
    summary["pass"] = all(c["pass"] for c in summary["criteria"].values())
    _write_json(out_dir / "summary.json", summary)
    for row in rows:
        print(f"epsilon={row.epsilon:g}  msd_rel_err={row.msd_rel_err:.4f}  "
              f"ks_stat={row.ks_stat:.4f}  ks_p={row.ks_p:.4f}")
    print(f"wrote sweep.csv, summary.json to {out_dir}")
    return 0 if summary["pass"] else 1


COMMANDS = {
    "verify-algebra": cmd_verify_algebra,
    "haar": cmd_haar,
    "ergodic": cmd_ergodic,
    "simulate": cmd_simulate,
    "homogenize": cmd_homogenize,
    "sweep": cmd_sweep,
}


def dispatch(cfg: RunConfig, command: str | None = None) -> int:
    command = command if command is not None else cfg.command
    if command not in COMMANDS:
        raise ConfigError(f"unknown subcommand {command!r}")
    return COMMANDS[command](cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frameflow",
        description="Simulate geodesic motion with rotationally stirred velocity "
                    "and verify its diffusive scaling limit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--manifold", help="euclidean:<n> or hyperbolic2")
        p.add_argument("--dim", type=int, help="group dimension for algebra-level commands")
        p.add_argument("--epsilon", type=float, help="time-scale ratio (positive)")
        p.add_argument("--epsilon-list", dest="epsilon_list",
                       help="comma list, strictly decreasing")
        p.add_argument("--e0", help="direction vector: e<k> or comma components")
        p.add_argument("--abar", help="drift: 0, canonical:<k>, or basis coefficients")
        p.add_argument("--t-final", dest="t_final", type=float, help="slow-clock horizon")
        p.add_argument("--h0", type=float, help="fast-clock step factor in (0, 0.1]")
        p.add_argument("--renorm-every", dest="renorm_every", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--paths", type=int)
        p.add_argument("--output-times", dest="output_times",
                       help="count or comma list of times in [0, t_final]")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--oracle", help="euclidean, hyperbolic, or auto")
        p.add_argument("--jobs", type=int, help="parallel workers (results identical)")
        p.add_argument("--samples", type=int, help="sample count for haar")
        p.add_argument("--reps", type=int, help="repetition count for ergodic")
        p.add_argument("--verbose", "-v", action="count", default=None)

    for name, help_text in (
        ("verify-algebra", "check the skew-basis identities and print defects"),
        ("haar", "estimate Haar second moments of the direction statistic"),
        ("ergodic", "time-average the direction moments along one fast path"),
        ("simulate", "integrate rescaled paths and write per-path CSVs"),
        ("homogenize", "ensemble statistics against the diffusive limit"),
        ("sweep", "repeat the ensemble across an epsilon list"),
    ):
        p = sub.add_parser(name, help=help_text)
        add_common(p)
        if name == "simulate":
            p.add_argument("--frames", dest="with_frames", action="store_true",
                           default=None, help="include frame columns")
            p.add_argument("--group", dest="with_group", action="store_true",
                           default=None, help="include group-factor columns")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = parse_config(file=args.config, flags=flags)
        cfg.command = args.command
        return dispatch(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DomainExitError, NumericalAbort) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
