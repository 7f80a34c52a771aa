"""Ensemble harness: verify the diffusive limit against reference processes.

The rescaled position process has limiting generator c * Laplacian with
c = 4 / (n (n-1)), so its mean squared displacement grows like 2 n c t =
8 t / (n - 1) on flat charts and its law matches a Brownian motion run at
diffusivity c on curved model charts.  This module fans an ensemble of
independent paths out over processes, reduces them to per-time marginal
samples, and compares those against exact (flat) or finely-stepped
(hyperbolic) reference samplers with two-sample Kolmogorov-Smirnov tests.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats as _scipy_stats

from .errors import ConfigError, NumericalAbort
from .manifold import chart_by_name
from .perturbed_geodesic import (
    ORACLE_STREAM_BASE,
    SimConfig,
    initial_state,
    philox_stream,
    simulate_paths,
)

MIN_ENSEMBLE_PATHS = 100
ABORT_FRACTION_LIMIT = 0.01
_ORACLES = ("euclidean", "hyperbolic")


def effective_diffusivity(n: int) -> float:
    """The limiting generator constant c = 4 / (n (n-1))."""
    return 4.0 / (n * (n - 1))


def msd_rate(n: int) -> float:
    """Slope of the limiting mean squared displacement, 2 n c = 8/(n-1)."""
    return 2.0 * n * effective_diffusivity(n)


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    """An ensemble experiment: a base path config plus statistical knobs."""

    sim: SimConfig
    paths: int
    epsilon_list: tuple[float, ...] | None = None
    oracle: str | None = None
    jobs: int = 1
    oracle_step: float = 1e-4

    def __post_init__(self):
        if self.paths < MIN_ENSEMBLE_PATHS:
            raise ConfigError(f"statistical runs need at least {MIN_ENSEMBLE_PATHS} paths")
        if self.jobs < 1:
            raise ConfigError("jobs must be a positive integer")
        if self.oracle is not None and self.oracle not in _ORACLES:
            raise ConfigError(f"oracle must be one of {_ORACLES}")
        if self.epsilon_list is not None:
            eps = tuple(float(e) for e in self.epsilon_list)
            if len(eps) == 0 or any(e <= 0 for e in eps):
                raise ConfigError("epsilon_list must hold positive values")
            if not all(b < a for a, b in zip(eps, eps[1:])):
                raise ConfigError("epsilon_list must be strictly decreasing")
            object.__setattr__(self, "epsilon_list", eps)

    def resolved_oracle(self) -> str | None:
        if self.oracle is not None:
            return self.oracle
        name = self.sim.chart
        if name.startswith("euclidean"):
            return "euclidean"
        if name == "hyperbolic2":
            return "hyperbolic"
        return None


@dataclass
class EnsembleStats:
    """Marginal samples and derived statistics at each output time."""

    times: np.ndarray
    positions: np.ndarray               # (K, M, n), surviving paths only
    frames: np.ndarray | None           # (K, M, n, n)
    msd: np.ndarray                     # (K,)
    msd_stderr: np.ndarray              # (K,)
    oracle_msd: np.ndarray | None
    sim_scalar: np.ndarray | None       # (K, M) scalar used in the KS rows
    oracle_scalar: np.ndarray | None    # (K, M_oracle)
    ks_stat: np.ndarray | None
    ks_p: np.ndarray | None
    paths: int
    aborts: list


def _simulate_chunk(args):
    cfg, lo, hi, record_frames = args
    out = simulate_paths(cfg, range(lo, hi), record_frames=record_frames)
    return out.xs, out.us, out.alive, out.aborts


def run_ensemble(spec: EnsembleSpec, record_frames: bool = True) -> EnsembleStats:
    """Simulate the ensemble and reduce it to per-time statistics.

    Deterministic given the config seed, and independent of ``jobs``:
    each path owns a counter-based stream keyed by its index.  Raises
    :class:`NumericalAbort` when more than 1% of paths leave the chart.
    """
    cfg = spec.sim
    chart = chart_by_name(cfg.chart)
    m_paths = spec.paths

    jobs = min(spec.jobs, m_paths)
    if jobs > 1:
        bounds = np.linspace(0, m_paths, jobs + 1).astype(int)
        tasks = [(cfg, int(lo), int(hi), record_frames)
                 for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_simulate_chunk, tasks))
        xs = np.concatenate([p[0] for p in parts], axis=1)
        us = None if parts[0][1] is None else np.concatenate([p[1] for p in parts], axis=1)
        alive = np.concatenate([p[2] for p in parts])
        aborts = [rec for p in parts for rec in p[3]]
    else:
        out = simulate_paths(cfg, range(m_paths), record_frames=record_frames)
        xs, us, alive, aborts = out.xs, out.us, out.alive, out.aborts

    if len(aborts) > ABORT_FRACTION_LIMIT * m_paths:
        raise NumericalAbort(
            f"{len(aborts)} of {m_paths} paths aborted (> {ABORT_FRACTION_LIMIT:.0%}); "
            f"first record: {aborts[0]}"
        )
    xs = xs[:, alive, :]
    if us is not None:
        us = us[:, alive, :, :]
    survivors = int(alive.sum())

    times = cfg.resolved_output_times()
    x0 = initial_state(cfg).x
    d = chart.distance(xs, x0) if chart.distance is not None else np.sqrt(
        np.sum((xs - x0) ** 2, axis=-1))
    d2 = d**2
    msd = d2.mean(axis=1)
    msd_stderr = d2.std(axis=1, ddof=1) / np.sqrt(survivors)

    oracle_name = spec.resolved_oracle()
    oracle_msd = sim_scalar = oracle_scalar = ks_stat = ks_p = None
    if oracle_name is not None:
        n = chart.dim
        c = effective_diffusivity(n)
        grid = np.asarray(out_times_for_oracle(times), dtype=float)
        rng = philox_stream(cfg.seed, ORACLE_STREAM_BASE)
        if oracle_name == "euclidean":
            ref = oracle_euclidean_bm(n, c, grid, m_paths, rng, x0=x0)
            oracle_msd = 2.0 * n * c * grid
            sim_scalar = xs[:, :, 0]
            oracle_scalar = ref[:, :, 0].T
        else:
            ref, ref_alive = oracle_hyperbolic_bm(c, grid, m_paths, spec.oracle_step, rng, x0=x0)
            ref = ref[ref_alive]
            rho_ref = chart.distance(ref, x0)
            oracle_msd = (rho_ref**2).mean(axis=0)
            sim_scalar = d
            oracle_scalar = rho_ref.T
        ks_stat = np.empty(len(times))
        ks_p = np.empty(len(times))
        for k in range(len(times)):
            ks_stat[k], ks_p[k] = ks_two_sample(sim_scalar[k], oracle_scalar[k])

    return EnsembleStats(
        times=times,
        positions=xs,
        frames=us,
        msd=msd,
        msd_stderr=msd_stderr,
        oracle_msd=oracle_msd,
        sim_scalar=sim_scalar,
        oracle_scalar=oracle_scalar,
        ks_stat=ks_stat,
        ks_p=ks_p,
        paths=survivors,
        aborts=aborts,
    )


def out_times_for_oracle(times: np.ndarray) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ConfigError("output times must be non-negative")
    return times


def oracle_euclidean_bm(n: int, c: float, times: np.ndarray, m: int,
                        rng: np.random.Generator, x0: np.ndarray | None = None) -> np.ndarray:
    """Exact samples of a flat Brownian motion with generator c * Laplacian.

    Per-coordinate increment variance is 2 c dt.  Returns positions with
    shape (m, len(times), n).
    """
    if not c > 0:
        raise ConfigError("diffusivity c must be positive")
    times = np.asarray(times, dtype=float)
    dts = np.diff(np.concatenate([[0.0], times]))
    if np.any(dts < 0):
        raise ConfigError("times must be non-decreasing")
    incs = rng.standard_normal((m, len(times), n)) * np.sqrt(2.0 * c * dts)[None, :, None]
    paths = np.cumsum(incs, axis=1)
    if x0 is not None:
        paths = paths + np.asarray(x0, dtype=float)
    return paths


def oracle_hyperbolic_bm(c: float, times: np.ndarray, m: int, step: float,
                         rng: np.random.Generator,
                         x0: np.ndarray = (0.0, 1.0),
                         x2_floor: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Euler scheme for the upper half-plane diffusion with generator c * x2^2 (d11 + d22).

    Both coordinates move by sqrt(2 c) x2 dB.  A proposed move that would
    push x2 below ``x2_floor`` is rejected and retried with the step
    halved (the halved step persists for that path); a path that halves
    60 times within one output interval is aborted.  Returns
    (positions (m, K, 2), alive mask (m,)).
    """
    if not c > 0:
        raise ConfigError("diffusivity c must be positive")
    if not step > 0:
        raise ConfigError("step must be positive")
    times = np.asarray(times, dtype=float)
    x = np.tile(np.asarray(x0, dtype=float), (m, 1))
    if np.any(x[:, 1] <= 0):
        raise ConfigError("x0 must lie in the upper half-plane")
    alive = np.ones(m, dtype=bool)
    out = np.empty((m, len(times), 2))
    sqrt2c = np.sqrt(2.0 * c)
    t_prev = 0.0
    for k, t in enumerate(times):
        span = t - t_prev
        if span < 0:
            raise ConfigError("times must be non-decreasing")
        if span > 0:
            base_dt = span / max(1, int(np.ceil(span / step)))
            _advance_half_plane(x, alive, span, base_dt, rng, sqrt2c, x2_floor)
        out[:, k, :] = x
        t_prev = t
    return out, alive


def _advance_half_plane(x, alive, span, base_dt, rng, sqrt2c, floor,
                        max_halvings: int = 60) -> None:
    """Advance all rows of ``x`` by ``span`` in place, guarding positivity."""
    m = x.shape[0]
    remaining = np.where(alive, span, 0.0)
    dt_try = np.full(m, base_dt)
    halvings = np.zeros(m, dtype=int)
    while True:
        active = alive & (remaining > 1e-15)
        if not np.any(active):
            return
        dt_cur = np.minimum(dt_try, remaining)
        z = rng.standard_normal((m, 2))
        prop = x + (sqrt2c * np.sqrt(dt_cur) * x[:, 1])[:, None] * z
        ok = active & (prop[:, 1] >= floor)
        x[ok] = prop[ok]
        remaining[ok] -= dt_cur[ok]
        bad = active & ~ok
        if np.any(bad):
            dt_try[bad] = dt_cur[bad] / 2.0
            halvings[bad] += 1
            dead = bad & (halvings >= max_halvings)
            if np.any(dead):
                alive[dead] = False
                remaining[dead] = 0.0


def ks_two_sample(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ConfigError("KS test requires non-empty samples")
    if a.size < 50 or b.size < 50:
        raise ConfigError("KS test requires at least 50 samples per side")
    if np.ptp(a) == 0.0 and np.ptp(b) == 0.0 and a[0] == b[0]:
        # Degenerate but well-defined: identical point masses.
        return 0.0, 1.0
    res = _scipy_stats.ks_2samp(a, b, method="asymp")
    return float(res.statistic), float(res.pvalue)


def ks_vs_standard_normal(z: np.ndarray) -> tuple[float, float]:
    """One-sample KS of a scalar sample against the standard normal law."""
    res = _scipy_stats.kstest(np.asarray(z, dtype=float).ravel(), "norm")
    return float(res.statistic), float(res.pvalue)


def linear_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line fit; returns (slope, intercept, r_squared)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    pred = design @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(coef[0]), float(coef[1]), r2


@dataclass
class SweepRow:
    epsilon: float
    msd_rel_err: float
    ks_stat: float
    ks_p: float


def epsilon_sweep(spec: EnsembleSpec) -> list[SweepRow]:
    """Run the ensemble across spec.epsilon_list and tabulate discrepancies.

    The discrepancy columns are reported, never fitted: no convergence rate
    in epsilon is asserted.  Rows reuse the same seed, so the table is
    reproducible run to run.
    """
    if spec.epsilon_list is None:
        raise ConfigError("epsilon_sweep requires epsilon_list")
    chart = chart_by_name(spec.sim.chart)
    n = chart.dim
    c = effective_diffusivity(n)
    target = msd_rate(n)
    rows = []
    for eps in spec.epsilon_list:
        sim = dataclasses.replace(spec.sim, epsilon=eps)
        sub = dataclasses.replace(spec, sim=sim, epsilon_list=None)
        stats = run_ensemble(sub, record_frames=False)
        t_final = stats.times[-1]
        rel_err = abs(stats.msd[-1] / t_final - target) / target
        if spec.resolved_oracle() == "euclidean":
            x0 = 0.0 if spec.sim.x0 is None else float(np.asarray(spec.sim.x0)[0])
            z = (stats.positions[-1, :, 0] - x0) / np.sqrt(2.0 * c * t_final)
            ks_stat, ks_p = ks_vs_standard_normal(z)
        else:
            ks_stat, ks_p = ks_two_sample(stats.sim_scalar[-1], stats.oracle_scalar[-1])
        rows.append(SweepRow(epsilon=float(eps), msd_rel_err=float(rel_err),
                             ks_stat=ks_stat, ks_p=ks_p))
    return rows
