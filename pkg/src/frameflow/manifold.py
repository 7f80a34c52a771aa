"""Single-chart Riemannian geometry: metrics, Christoffel symbols, frames.

A :class:`Chart` bundles the metric field g_ij(x), the Christoffel field
Gamma^k_ij(x) of the Levi-Civita connection, and a domain predicate.  All
chart callables are vectorized: they accept points of shape (..., n) and
return arrays with matching leading axes.  The Christoffel array is
indexed ``Gamma[..., k, i, j]`` (upper index first) and is symmetric in
(i, j).

Frames are stored as coefficient matrices u whose column l holds the
chart components of the l-th frame vector; metric-orthonormality means
u^T G(x) u = I.  The transport law for a frame carried along a base
velocity v is

    du[k, l]/dt = - sum_ij v[i] Gamma[k, i, j] u[j, l],

which is what :func:`horizontal_velocity` evaluates together with the
base velocity itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DomainExitError

FRAME_TOL = 1e-8


@dataclass(frozen=True)
class Chart:
    """A global coordinate chart with its metric data.

    ``flat`` marks charts with identically vanishing Christoffel symbols so
    integrators can skip the transport work.  ``distance``, when present,
    is the model-space distance function used for displacement statistics.
    """

    name: str
    dim: int
    metric: Callable[[np.ndarray], np.ndarray]
    christoffel: Callable[[np.ndarray], np.ndarray]
    in_domain: Callable[[np.ndarray], np.ndarray]
    flat: bool = False
    unbounded: bool = True
    distance: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    # Optional closed form of B[k, j] = -sum_i v_i Gamma[k, i, j]; lets the
    # integrator skip assembling the full Christoffel array per step.
    transport_rate: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def require_in_domain(self, x: np.ndarray, t: float = 0.0) -> None:
        ok = np.asarray(self.in_domain(np.asarray(x, dtype=float)))
        if not bool(np.all(ok)):
            raise DomainExitError(t, np.asarray(x, dtype=float))


@dataclass
class FramePoint:
    """A chart point together with a frame coefficient matrix."""

    x: np.ndarray
    u: np.ndarray

    def defect(self, chart: Chart) -> float:
        """Largest entry of u^T G(x) u - I (metric-orthonormality defect)."""
        g = chart.metric(self.x)
        gram = np.einsum("...ji,...jk,...kl->...il", self.u, g, self.u)
        return float(np.max(np.abs(gram - np.eye(chart.dim))))

    def validate(self, chart: Chart, tol: float = FRAME_TOL) -> None:
        chart.require_in_domain(self.x)
        defect = self.defect(chart)
        if defect > tol:
            raise ValueError(f"frame is not metric-orthonormal: defect {defect:.3e} > {tol:g}")


def euclidean_chart(n: int) -> Chart:
    """Flat R^n: identity metric, vanishing Christoffel symbols."""
    if n < 2:
        raise ConfigError(f"dimension must be at least 2, got {n}")

    def metric(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy()

    def christoffel(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (n, n, n))

    def in_domain(x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1], dtype=bool)

    def distance(p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        return np.sqrt(np.sum((p - q) ** 2, axis=-1))

    return Chart(
        name=f"euclidean:{n}",
        dim=n,
        metric=metric,
        christoffel=christoffel,
        in_domain=in_domain,
        flat=True,
        unbounded=True,
        distance=distance,
    )


def hyperbolic2_chart() -> Chart:
    """Upper half-plane {x2 > 0} with metric delta_ij / x2^2.

    The non-zero Christoffel symbols are
    Gamma^1_12 = Gamma^1_21 = -1/x2, Gamma^2_22 = -1/x2, Gamma^2_11 = 1/x2.
    """

    def metric(x):
        x = np.asarray(x, dtype=float)
        _require_upper(x)
        out = np.zeros(x.shape[:-1] + (2, 2))
        inv_y2 = 1.0 / x[..., 1] ** 2
        out[..., 0, 0] = inv_y2
        out[..., 1, 1] = inv_y2
        return out

    def christoffel(x):
        x = np.asarray(x, dtype=float)
        _require_upper(x)
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        inv_y = 1.0 / x[..., 1]
        out[..., 0, 0, 1] = -inv_y
        out[..., 0, 1, 0] = -inv_y
        out[..., 1, 1, 1] = -inv_y
        out[..., 1, 0, 0] = inv_y
        return out

    def in_domain(x):
        x = np.asarray(x, dtype=float)
        return x[..., 1] > 0.0

    def transport_rate(x, v):
        # -v^i Gamma[k, i, j] with the symbols above collapses to
        # (1/x2) [[v2, v1], [-v1, v2]].
        inv_y = 1.0 / x[..., 1]
        out = np.empty(v.shape[:-1] + (2, 2))
        out[..., 0, 0] = v[..., 1] * inv_y
        out[..., 0, 1] = v[..., 0] * inv_y
        out[..., 1, 0] = -v[..., 0] * inv_y
        out[..., 1, 1] = v[..., 1] * inv_y
        return out

    return Chart(
        name="hyperbolic2",
        dim=2,
        metric=metric,
        christoffel=christoffel,
        in_domain=in_domain,
        flat=False,
        unbounded=False,
        distance=hyperbolic_distance,
        transport_rate=transport_rate,
    )


def _require_upper(x: np.ndarray) -> None:
    if np.any(x[..., 1] <= 0.0):
        bad = np.asarray(x, dtype=float).reshape(-1, x.shape[-1])
        bad = bad[bad[:, 1] <= 0.0][0]
        raise DomainExitError(0.0, bad)


def hyperbolic_distance(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Distance on the upper half-plane: cosh(rho) = 1 + |p-q|^2 / (2 p2 q2)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(p[..., 1] <= 0.0) or np.any(q[..., 1] <= 0.0):
        raise ConfigError("hyperbolic_distance requires points with positive second coordinate")
    arg = 1.0 + np.sum((p - q) ** 2, axis=-1) / (2.0 * p[..., 1] * q[..., 1])
    # Rounding can push the argument a hair below 1 for nearby points.
    return np.arccosh(np.maximum(arg, 1.0))


def numeric_christoffel(metric: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                        h_fd: float = 1e-5) -> np.ndarray:
    """Christoffel symbols of a metric field by central differences.

    Evaluates Gamma^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij) with
    a second-order stencil of width ``h_fd`` scaled by max(1, |x|_inf).
    The result is symmetric in (i, j) by construction.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    step = h_fd * max(1.0, float(np.max(np.abs(x))))
    dg = np.empty((n, n, n))  # dg[l] = d g / d x_l
    for l in range(n):
        e = np.zeros(n)
        e[l] = step
        dg[l] = (np.asarray(metric(x + e), dtype=float) - np.asarray(metric(x - e), dtype=float)) / (2.0 * step)
    g_inv = np.linalg.inv(np.asarray(metric(x), dtype=float))
    # bracket[l, i, j] = d_i g_jl + d_j g_il - d_l g_ij
    bracket = np.einsum("ijl->lij", dg) + np.einsum("jil->lij", dg) - dg
    return 0.5 * np.einsum("kl,lij->kij", g_inv, bracket)


def horizontal_velocity(chart: Chart, fp: FramePoint, e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Base velocity and frame transport rate for direction vector e.

    Returns ``(v, udot)`` where v = u e are the chart components of the
    frame vector selected by e, and udot is the parallel-transport rate of
    the whole frame along v.  Preserves u^T G(x) u to first order because
    the connection is metric-compatible.
    """
    chart.require_in_domain(fp.x)
    u = np.asarray(fp.u, dtype=float)
    v = u @ np.asarray(e, dtype=float)
    if chart.flat:
        return v, np.zeros_like(u)
    gamma = chart.christoffel(fp.x)
    udot = -np.einsum("i,kij,jl->kl", v, gamma, u)
    return v, udot


def gram_schmidt_metric(chart: Chart, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Re-orthonormalize frame columns in the G(x) inner product.

    Modified Gram-Schmidt; an already orthonormal frame passes through
    unchanged up to rounding.  Works on stacked inputs (..., n, n).
    Raises on (numerically) rank-deficient frames.
    """
    g = np.asarray(chart.metric(x), dtype=float)
    q = np.array(u, dtype=float, copy=True)
    n = q.shape[-1]
    for l in range(n):
        col = q[..., :, l]
        for m in range(l):
            prev = q[..., :, m]
            proj = np.einsum("...i,...ij,...j->...", col, g, prev)
            col = col - proj[..., None] * prev
        norm2 = np.einsum("...i,...ij,...j->...", col, g, col)
        if np.any(norm2 <= 0.0) or not np.all(np.isfinite(norm2)):
            raise ValueError("frame columns are not linearly independent")
        q[..., :, l] = col / np.sqrt(norm2)[..., None]
    return q


# Registry of charts reachable by name from configuration files and the CLI.
_CUSTOM_CHARTS: dict[str, Chart] = {}


def register_chart(name: str, chart: Chart) -> None:
    """Make a custom chart available to chart_by_name under ``name``."""
    _CUSTOM_CHARTS[name] = chart


def chart_by_name(name: str) -> Chart:
    """Resolve "euclidean:<n>", "hyperbolic2", or a registered custom name."""
    if name in _CUSTOM_CHARTS:
        return _CUSTOM_CHARTS[name]
    if name == "hyperbolic2":
        return hyperbolic2_chart()
    if name.startswith("euclidean:"):
        try:
            n = int(name.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad euclidean chart name {name!r}; expected euclidean:<n>") from None
        return euclidean_chart(n)
    raise ConfigError(f"unknown chart {name!r}; expected euclidean:<n>, hyperbolic2, or a registered name")
