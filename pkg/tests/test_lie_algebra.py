import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import ks_2samp, special_ortho_group

from frameflow import (
    ConfigError,
    canonical_basis,
    casimir_sum,
    group_exp,
    haar_sample,
    orthogonality_defect,
    project_rotation,
    rotation_defect,
    skewness_defect,
)
from frameflow.lie_algebra import SkewBasis


def brute_force_casimir(n):
    """Independent construction: sum the squares of (E_ij - E_ji)/sqrt(2)."""
    total = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            a = np.zeros((n, n))
            a[i, j] = 1.0 / np.sqrt(2.0)
            a[j, i] = -1.0 / np.sqrt(2.0)
            total += a @ a
    return total


def random_skew(n, rng):
    z = rng.standard_normal((n, n))
    return (z - z.T) / 2.0


class TestCanonicalBasis:
    def test_n2_single_element(self):
        basis = canonical_basis(2)
        assert len(basis) == 1
        expected = np.array([[0.0, 1.0], [-1.0, 0.0]]) / np.sqrt(2.0)
        np.testing.assert_allclose(basis.mats[0], expected, atol=1e-15)

    def test_n3_gram_is_identity(self):
        basis = canonical_basis(3)
        assert len(basis) == 3
        gram = np.einsum("iab,jab->ij", basis.mats, basis.mats)
        np.testing.assert_allclose(gram, np.eye(3), atol=1e-12)

    def test_n1_rejected(self):
        with pytest.raises(ConfigError):
            canonical_basis(1)

    @pytest.mark.parametrize("n", range(2, 9))
    def test_element_count_and_skewness(self, n):
        basis = canonical_basis(n)
        assert len(basis) == n * (n - 1) // 2
        assert skewness_defect(basis.mats) == 0.0

    def test_lexicographic_order(self):
        basis = canonical_basis(3)
        # order (0,1), (0,2), (1,2)
        assert basis.mats[0][0, 1] > 0 and basis.mats[0][0, 2] == 0
        assert basis.mats[1][0, 2] > 0
        assert basis.mats[2][1, 2] > 0


class TestCasimirSum:
    @pytest.mark.parametrize("n,diag", [(2, -0.5), (3, -1.0), (5, -2.0)])
    def test_known_values(self, n, diag):
        total = casimir_sum(canonical_basis(n))
        np.testing.assert_allclose(total, diag * np.eye(n), atol=1e-12)
        np.testing.assert_allclose(total, brute_force_casimir(n), atol=1e-14)

    @pytest.mark.parametrize("n", range(2, 9))
    def test_scaling_identity(self, n):
        total = casimir_sum(canonical_basis(n))
        defect = np.max(np.abs(total + ((n - 1) / 2.0) * np.eye(n)))
        assert defect < 1e-12

    def test_non_orthonormal_basis_rejected(self):
        good = canonical_basis(3)
        bad = SkewBasis.__new__(SkewBasis)  # bypass __post_init__ validation
        object.__setattr__(bad, "dim", 3)
        object.__setattr__(bad, "mats", 2.0 * good.mats)
        with pytest.raises(ValueError):
            casimir_sum(bad)


class TestGroupExp:
    def test_zero_gives_identity(self):
        np.testing.assert_array_equal(group_exp(np.zeros((3, 3))), np.eye(3))

    def test_quarter_turn_closed_form(self):
        a1 = canonical_basis(2).mats[0]
        out = group_exp(np.sqrt(2.0) * (np.pi / 2.0) * a1)
        np.testing.assert_allclose(out, np.array([[0.0, 1.0], [-1.0, 0.0]]), atol=1e-15)

    @pytest.mark.parametrize("n", [2, 3, 4, 6])
    def test_matches_scipy_expm(self, n):
        rng = np.random.default_rng(11)
        for _ in range(25):
            a = random_skew(n, rng) * rng.uniform(0.1, 5.0)
            np.testing.assert_allclose(group_exp(a), expm(a), atol=1e-12)

    def test_orthogonality_of_random_exponentials(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for n in (2, 3, 4, 5):
            mats = np.array([random_skew(n, rng) for _ in range(250)])
            worst = max(worst, rotation_defect(group_exp(mats)))
        assert worst < 1e-10

    def test_batched_equals_loop(self):
        rng = np.random.default_rng(7)
        mats = np.array([random_skew(3, rng) for _ in range(10)])
        batched = group_exp(mats)
        for k in range(10):
            np.testing.assert_allclose(batched[k], group_exp(mats[k]), atol=1e-14)


class TestHaarSample:
    def test_samples_are_rotations(self):
        rng = np.random.default_rng(2)
        for n in (2, 3, 5):
            g = haar_sample(n, rng, size=200)
            assert rotation_defect(g) < 1e-12

    def test_first_moment_vanishes(self):
        rng = np.random.default_rng(3)
        n, m = 3, 100_000
        g = haar_sample(n, rng, size=m)
        mean = g[:, 0, 0].mean()
        # Var <g e1, e1> = 1/n, so 4 standard errors:
        assert abs(mean) < 4.0 / np.sqrt(m)

    def test_second_moment_is_one_over_n(self):
        rng = np.random.default_rng(4)
        for n in (2, 4):
            m = 100_000
            w = haar_sample(n, rng, size=m)[:, :, 0]
            sq = w[:, 0] ** 2
            se = sq.std(ddof=1) / np.sqrt(m)
            assert abs(sq.mean() - 1.0 / n) < 4 * se

    def test_off_diagonal_moments_vanish(self):
        rng = np.random.default_rng(6)
        n, m = 3, 100_000
        w = haar_sample(n, rng, size=m)[:, :, 0]
        prod = w[:, 0] * w[:, 1]
        se = prod.std(ddof=1) / np.sqrt(m)
        assert abs(prod.mean()) < 4 * se

    def test_rotation_invariance_of_moments(self):
        # Moments computed with e0 replaced by O e0 agree within joint CI.
        rng = np.random.default_rng(8)
        n, m = 3, 60_000
        e0 = np.zeros(n)
        e0[0] = 1.0
        o = group_exp(random_skew(n, rng))
        g = haar_sample(n, rng, size=m)
        a = (g @ e0)[:, 0] ** 2
        b = (g @ (o @ e0))[:, 0] ** 2
        se = np.hypot(a.std(ddof=1), b.std(ddof=1)) / np.sqrt(m)
        assert abs(a.mean() - b.mean()) < 4 * se

    def test_against_scipy_special_ortho_group(self):
        rng = np.random.default_rng(9)
        n, m = 4, 20_000
        mine = haar_sample(n, rng, size=m)[:, 0, 0]
        ref = special_ortho_group.rvs(n, size=m, random_state=np.random.default_rng(10))[:, 0, 0]
        stat, p = ks_2samp(mine, ref)
        assert p > 0.01


def test_project_rotation_restores_orthogonality():
    rng = np.random.default_rng(12)
    g = haar_sample(3, rng, size=50)
    noisy = g + 1e-6 * rng.standard_normal(g.shape)
    fixed = project_rotation(noisy)
    assert rotation_defect(fixed) < 1e-12
    assert np.max(np.abs(fixed - g)) < 1e-5
    single = project_rotation(noisy[0])
    np.testing.assert_allclose(single, fixed[0], atol=1e-14)


def test_orthogonality_defect_reports_magnitude():
    g = np.eye(3)
    g[0, 0] = 1.0 + 1e-6
    assert orthogonality_defect(g) == pytest.approx(2e-6, rel=1e-3)
