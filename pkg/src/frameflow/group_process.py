"""The fast rotational diffusion on SO(n) and its invariant-measure checks.

The noise process solves the Stratonovich equation

    dg = (1/sqrt(eps)) sum_k g A_k o dw^k + g Abar dt,   g(0) = I,

for an orthonormal skew basis {A_k}.  One integrator step multiplies g by
the exponential of the sampled increment, so every iterate is a rotation
matrix by construction (geometric exponential Euler, weak order 1).

The companion functions expose the identities that pin down the effective
diffusion constant: the linear statistic alpha_i(g) = <g e0, e_i> is an
eigenfunction of the generator with eigenvalue -(n-1)/4, its Poisson
solution is -(4/(n-1)) alpha_i, and Haar second moments of alpha are
delta_ij / n.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError
from .lie_algebra import SkewBasis, group_exp, haar_sample, skewness_defect, SKEW_TOL


@dataclass(frozen=True)
class GroupSdeConfig:
    """Parameters of the group diffusion and its integrator.

    ``h`` is the integration step in the equation's own time variable; the
    per-step noise variance is h/epsilon, which the CFL-style bound keeps
    small enough that the single-exponential step stays accurate.
    """

    basis: SkewBasis
    epsilon: float = 1.0
    abar: np.ndarray | None = None
    h: float = 0.1
    cfl_factor: float = 0.1

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ConfigError("epsilon must be positive")
        if not self.h > 0.0:
            raise ConfigError("step h must be positive")
        if self.h / self.epsilon > self.cfl_factor * (1.0 + 1e-12):
            raise ConfigError(
                f"fast-clock step h/epsilon = {self.h / self.epsilon:g} exceeds "
                f"cfl_factor = {self.cfl_factor:g}"
            )
        if self.abar is not None:
            abar = np.asarray(self.abar, dtype=float)
            n = self.basis.dim
            if abar.shape != (n, n):
                raise ConfigError(f"abar must have shape {(n, n)}, got {abar.shape}")
            if skewness_defect(abar) > SKEW_TOL:
                raise ConfigError("abar must be skew-symmetric")
            object.__setattr__(self, "abar", abar)

    @property
    def noise_scale(self) -> float:
        return float(np.sqrt(self.h / self.epsilon))

    def drift_term(self) -> np.ndarray | None:
        """h * Abar, the deterministic part of the per-step exponent."""
        if self.abar is None:
            return None
        return self.h * self.abar


def step_group(g: np.ndarray, cfg: GroupSdeConfig, xi: np.ndarray) -> np.ndarray:
    """One geometric integrator step: g <- g exp(sqrt(h/eps) sum xi_k A_k + h Abar).

    ``g`` may be a stack (..., n, n) with matching leading axes on ``xi``
    (..., N); standard normals in ``xi`` are the caller's responsibility.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != len(cfg.basis):
        raise ConfigError(f"xi must have length {len(cfg.basis)}, got {xi.shape[-1]}")
    return _advance(np.asarray(g, dtype=float), xi, cfg.basis.mats, cfg.noise_scale, cfg.drift_term())


def _advance(g, xi, basis_mats, noise_scale, drift):
    exponent = noise_scale * np.einsum("...k,kij->...ij", xi, basis_mats)
    if drift is not None:
        exponent = exponent + drift
    return g @ group_exp(exponent)


def poisson_h(g: np.ndarray, e0: np.ndarray, i: int) -> float:
    """-(4/(n-1)) <g e0, e_i>: the centred solution of L_G h = <g e0, e_i>."""
    g = np.asarray(g, dtype=float)
    n = g.shape[-1]
    return float(-(4.0 / (n - 1)) * (g @ np.asarray(e0, dtype=float))[i])


def apply_generator_linear(g: np.ndarray, e0: np.ndarray, i: int, basis: SkewBasis) -> float:
    """The diffusion generator applied to <g e0, e_i>, i.e. (1/2) sum_k <g A_k^2 e0, e_i>.

    Summing the per-element terms keeps this an independent route to the
    eigenfunction identity (the sum collapses to -((n-1)/4) <g e0, e_i>).
    """
    g = np.asarray(g, dtype=float)
    e0 = np.asarray(e0, dtype=float)
    # A_k^2 e0 for each k, then the per-element inner products <g A_k^2 e0, e_i>.
    a2e0 = np.einsum("kij,kjl,l->ki", basis.mats, basis.mats, e0)
    terms = (g @ a2e0.T)[i]
    return 0.5 * float(np.sum(terms))


def ergodic_time_average(f: Callable[[np.ndarray], float], cfg: GroupSdeConfig,
                         t: float, rng: np.random.Generator) -> float:
    """Left-rectangle time average (1/t) int_0^t f(g_s) ds along one path.

    The path is run at epsilon = 1 (the equation clock is the clock the
    law-of-large-numbers bound is stated in); cfg supplies the basis, the
    drift and the step size.
    """
    if not t > 0.0:
        raise ConfigError("averaging horizon t must be positive")
    cfg1 = dataclasses.replace(cfg, epsilon=1.0)
    n = cfg.basis.dim
    n_steps = int(np.floor(t / cfg1.h + 1e-12))
    rem = t - n_steps * cfg1.h
    g = np.eye(n)
    acc = 0.0
    for _ in range(n_steps):
        acc += f(g) * cfg1.h
        g = step_group(g, cfg1, rng.standard_normal(len(cfg.basis)))
    if rem > 1e-15:
        acc += f(g) * rem
    return acc / t


def ergodic_average_repetitions(f: Callable[[np.ndarray], np.ndarray], cfg: GroupSdeConfig,
                                checkpoints, reps: int, rng: np.random.Generator,
                                batched: bool = False) -> np.ndarray:
    """Time averages over ``reps`` independent paths at several horizons.

    Returns an array of shape (len(checkpoints), reps) whose row j holds
    the averages (1/t_j) int_0^{t_j} f(g_s) ds.  With ``batched=True`` the
    functional receives the whole (reps, n, n) stack and must return a
    (reps,) array; otherwise it is applied matrix by matrix.
    """
    checkpoints = np.atleast_1d(np.asarray(checkpoints, dtype=float))
    if np.any(checkpoints <= 0) or np.any(np.diff(checkpoints) <= 0):
        raise ConfigError("checkpoints must be positive and strictly increasing")
    cfg1 = dataclasses.replace(cfg, epsilon=1.0)
    n = cfg.basis.dim
    n_basis = len(cfg.basis)
    f_stack = f if batched else (lambda gs: np.array([f(gs[r]) for r in range(gs.shape[0])]))

    marks = np.rint(checkpoints / cfg1.h).astype(int)
    if np.max(np.abs(marks * cfg1.h - checkpoints)) > 1e-9 * max(1.0, checkpoints[-1]):
        raise ConfigError("checkpoints must sit on the step grid")
    g = np.broadcast_to(np.eye(n), (reps, n, n)).copy()
    acc = np.zeros(reps)
    out = np.empty((len(marks), reps))
    next_mark = 0
    for m in range(marks[-1]):
        acc += f_stack(g) * cfg1.h
        g = step_group(g, cfg1, rng.standard_normal((reps, n_basis)))
        while next_mark < len(marks) and m + 1 == marks[next_mark]:
            out[next_mark] = acc / checkpoints[next_mark]
            next_mark += 1
    return out


def simulate_group_terminal(cfg: GroupSdeConfig, t: float, count: int,
                            rng: np.random.Generator) -> np.ndarray:
    """Terminal values g_t of ``count`` independent paths started at I."""
    n = cfg.basis.dim
    n_steps = int(round(t / cfg.h))
    g = np.broadcast_to(np.eye(n), (count, n, n)).copy()
    for _ in range(n_steps):
        g = step_group(g, cfg, rng.standard_normal((count, len(cfg.basis))))
    return g


def haar_moment_stats(n: int, e0: np.ndarray, samples: int,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo estimate of a_ij = (4/(n-1)) E_Haar[<g e0, e_i><g e0, e_j>].

    Returns (estimate, standard error), both (n, n).  The estimate
    converges to (4/((n-1) n)) I: off-diagonal Haar moments vanish and the
    diagonal ones equal 1/n.
    """
    if samples < 1000:
        raise ConfigError("haar moment estimation needs at least 1000 samples")
    e0 = np.asarray(e0, dtype=float)
    chunk = 50_000
    total = 0
    s1 = np.zeros((n, n))
    s2 = np.zeros((n, n))
    while total < samples:
        k = min(chunk, samples - total)
        w = haar_sample(n, rng, size=k) @ e0
        prod = w[:, :, None] * w[:, None, :]
        s1 += prod.sum(axis=0)
        s2 += (prod**2).sum(axis=0)
        total += k
    mean = s1 / samples
    var = np.maximum(s2 / samples - mean**2, 0.0)
    scale = 4.0 / (n - 1)
    return scale * mean, scale * np.sqrt(var / samples)


def haar_moment_matrix(n: int, e0: np.ndarray, samples: int,
                       rng: np.random.Generator) -> np.ndarray:
    """The a_ij estimate alone; see :func:`haar_moment_stats`."""
    est, _ = haar_moment_stats(n, e0, samples, rng)
    return est
