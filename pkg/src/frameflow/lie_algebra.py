"""Skew-symmetric matrix algebra for rotational noise.

Everything downstream is driven by an orthonormal basis of the space of
n x n skew-symmetric matrices, orthonormal under the inner product
<A, B> = tr(A B^T).  This module builds that basis, provides the matrix
exponential onto the rotation group (exact closed forms for n = 2, 3,
scaling-and-squaring above), and samples rotations from the invariant
(Haar) distribution.

Matrices are plain float ndarrays; the exponential and the Haar sampler
accept stacked inputs (..., n, n) and operate on the trailing two axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SKEW_TOL = 1e-12
ROTATION_TOL = 1e-9

# Squaring threshold for the series branch of the exponential.  Below this
# spectral scale the truncated Taylor series converges to double precision
# in <= 20 terms.
_EXP_SERIES_RADIUS = 0.5
_EXP_SERIES_TERMS = 20


def skewness_defect(a: np.ndarray) -> float:
    """Largest entry of A + A^T; zero for an exactly skew matrix."""
    a = np.asarray(a, dtype=float)
    return float(np.max(np.abs(a + np.swapaxes(a, -1, -2))))


def orthogonality_defect(g: np.ndarray) -> float:
    """Largest entry of g^T g - I over a (stack of) matrices."""
    g = np.asarray(g, dtype=float)
    n = g.shape[-1]
    gram = np.einsum("...ji,...jk->...ik", g, g)
    return float(np.max(np.abs(gram - np.eye(n))))


def rotation_defect(g: np.ndarray) -> float:
    """Max of the orthogonality defect and |det g - 1|."""
    g = np.asarray(g, dtype=float)
    return max(orthogonality_defect(g), float(np.max(np.abs(np.linalg.det(g) - 1.0))))


def assert_rotation(g: np.ndarray, tol: float = ROTATION_TOL) -> None:
    defect = rotation_defect(g)
    if defect > tol:
        raise ValueError(f"matrix is not a rotation to tolerance {tol:g} (defect {defect:.3e})")


@dataclass(frozen=True)
class SkewBasis:
    """Ordered orthonormal basis of the n x n skew-symmetric matrices.

    ``mats`` is the stacked array of the N = n(n-1)/2 basis elements, in
    lexicographic (i, j), i < j order.  Orthonormality is with respect to
    <A, B> = tr(A B^T) and is validated on construction.
    """

    dim: int
    mats: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = self.dim
        expected = n * (n - 1) // 2
        if self.mats.shape != (expected, n, n):
            raise ConfigError(
                f"basis for dim {n} must have shape {(expected, n, n)}, got {self.mats.shape}"
            )
        if skewness_defect(self.mats) > SKEW_TOL:
            raise ConfigError("basis elements are not skew-symmetric")
        if self.gram_defect() > SKEW_TOL:
            raise ConfigError("basis is not orthonormal under tr(A B^T)")

    def __len__(self) -> int:
        return self.mats.shape[0]

    def gram_defect(self) -> float:
        """Largest deviation of tr(A_i A_j^T) from the identity matrix."""
        gram = np.einsum("iab,jab->ij", self.mats, self.mats)
        return float(np.max(np.abs(gram - np.eye(len(self.mats)))))


def canonical_basis(n: int) -> SkewBasis:
    """The basis {(E_ij - E_ji)/sqrt(2) : i < j} in lexicographic order.

    Requires n >= 2: for n = 1 the skew space is trivial and none of the
    rotational-noise constructions apply.
    """
    if n < 2:
        raise ConfigError(f"dimension must be at least 2, got {n}")
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    mats = np.zeros((len(pairs), n, n))
    for k, (i, j) in enumerate(pairs):
        mats[k, i, j] = 1.0 / np.sqrt(2.0)
        mats[k, j, i] = -1.0 / np.sqrt(2.0)
    return SkewBasis(dim=n, mats=mats)


def casimir_sum(basis: SkewBasis) -> np.ndarray:
    """Sum of squares of the basis elements.

    For any orthonormal basis this collapses to -((n-1)/2) I; the identity
    is what converts the rotational generator into a scalar multiple of the
    identity on linear statistics.  A non-orthonormal basis is rejected
    rather than silently summed.
    """
    defect = basis.gram_defect()
    if defect > SKEW_TOL:
        raise ValueError(f"basis Gram defect {defect:.3e} exceeds {SKEW_TOL:g}")
    return np.einsum("kab,kbc->ac", basis.mats, basis.mats)


def group_exp(a: np.ndarray) -> np.ndarray:
    """Matrix exponential of a (stack of) skew-symmetric matrices.

    n = 2 uses the planar rotation closed form, n = 3 the axis-angle
    (Rodrigues) formula, and n >= 4 scaling-and-squaring with a truncated
    Taylor series.  The result is orthogonal with unit determinant up to
    rounding.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    if a.shape[-2] != n:
        raise ValueError(f"expected square trailing axes, got {a.shape}")
    if n == 2:
        return _exp_skew_2(a)
    if n == 3:
        return _exp_skew_3(a)
    return _exp_skew_series(a)


def _exp_skew_2(a: np.ndarray) -> np.ndarray:
    theta = a[..., 0, 1]
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty(a.shape)
    out[..., 0, 0] = c
    out[..., 0, 1] = s
    out[..., 1, 0] = -s
    out[..., 1, 1] = c
    return out


def _exp_skew_3(a: np.ndarray) -> np.ndarray:
    # Axis components of the skew matrix; theta is its rotation angle.
    wx = a[..., 2, 1]
    wy = a[..., 0, 2]
    wz = a[..., 1, 0]
    theta2 = wx * wx + wy * wy + wz * wz
    theta = np.sqrt(theta2)
    small = theta < 1e-4
    # sin(t)/t and (1-cos t)/t^2 with series fallbacks near zero.
    with np.errstate(invalid="ignore", divide="ignore"):
        c1 = np.where(small, 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0, np.sin(theta) / theta)
        c2 = np.where(
            small,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
            (1.0 - np.cos(theta)) / np.where(small, 1.0, theta2),
        )
    a2 = a @ a
    return np.eye(3) + c1[..., None, None] * a + c2[..., None, None] * a2


def _exp_skew_series(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    # Scale down to spectral radius <= _EXP_SERIES_RADIUS, shared across the
    # stack; the Frobenius norm bounds the spectral norm.
    norm = float(np.max(np.sqrt(np.sum(a * a, axis=(-1, -2))))) if a.size else 0.0
    squarings = max(0, int(np.ceil(np.log2(max(norm, 1e-300) / _EXP_SERIES_RADIUS))))
    b = a / (2.0**squarings)
    out = np.broadcast_to(np.eye(n), b.shape).copy()
    term = np.broadcast_to(np.eye(n), b.shape).copy()
    for m in range(1, _EXP_SERIES_TERMS + 1):
        term = (term @ b) / m
        out += term
        if float(np.max(np.abs(term))) < 1e-18:
            break
    for _ in range(squarings):
        out = out @ out
    return out


def project_rotation(g: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix via the polar decomposition (batched).

    Used as periodic drift control on long simulated group paths; the sign
    fix on the smallest singular direction keeps the determinant at +1.
    """
    g = np.asarray(g, dtype=float)
    single = g.ndim == 2
    gs = g[None] if single else g
    u, _, vt = np.linalg.svd(gs)
    out = u @ vt
    det = np.linalg.det(out)
    flip = det < 0
    if np.any(flip):
        u = u.copy()
        u[flip, :, -1] *= -1.0
        out = u @ vt
    return out[0] if single else out


def haar_sample(n: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Rotation matrices distributed per the normalized Haar measure on SO(n).

    QR of an i.i.d. standard-normal matrix, with the R-diagonal sign fixed
    so the factorization is unique (that makes Q Haar on O(n)); samples
    landing in the det = -1 component are mapped into SO(n) by negating the
    first column, a measure-preserving bijection between the components.

    ``size=None`` returns one (n, n) matrix, otherwise a (size, n, n) stack.
    """
    if n < 2:
        raise ConfigError(f"dimension must be at least 2, got {n}")
    squeeze = size is None
    count = 1 if squeeze else int(size)
    z = rng.standard_normal((count, n, n))
    q, r = np.linalg.qr(z)
    signs = np.sign(np.einsum("...ii->...i", r))
    signs[signs == 0] = 1.0
    q = q * signs[..., None, :]
    det = np.linalg.det(q)
    q[det < 0, :, 0] *= -1.0
    return q[0] if squeeze else q
