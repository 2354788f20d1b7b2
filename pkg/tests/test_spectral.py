"""Tests for the SVD layer: exact, randomized, truncation, cache."""

import numpy as np
import numpy.testing as npt
import pytest

from graphrefine.errors import FormatError, PreconditionError
from graphrefine.spectral import (
    SvdFactors,
    exact_svd,
    factored_entry_block,
    factored_matmul,
    load_svd_cache,
    randomized_svd,
    save_svd_cache,
    truncate,
)
from synth import orthonormal_columns

# ---- helpers -----------------------------------------------------------


def frob(m):
    return float(np.linalg.norm(m, "fro"))


def eckart_young_error(sigma, k):
    """Best rank-k Frobenius error from the singular values alone."""
    return float(np.sqrt(np.sum(sigma[k:] ** 2)))


def rank_k_matrix(n, m, k, rng, decay=1.0):
    """Exactly rank-k matrix with controlled singular values."""
    u = orthonormal_columns(n, k, rng)
    v = orthonormal_columns(m, k, rng)
    s = decay ** np.arange(k) * np.linspace(5.0, 1.0, k)
    return u @ (s[:, None] * v.T)


# ---- exact_svd ---------------------------------------------------------


class TestExactSvd:
    def test_identity_matrix(self):
        """The identity has all singular values equal to one."""
        f = exact_svd(np.eye(3))
        npt.assert_allclose(f.singular_values, [1.0, 1.0, 1.0])

    def test_diagonal_matrix(self):
        f = exact_svd(np.diag([3.0, 2.0, 1.0]))
        npt.assert_allclose(f.singular_values, [3.0, 2.0, 1.0])

    def test_reconstruction(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((30, 20))
        f = exact_svd(m)
        npt.assert_allclose(f.to_dense(), m, atol=1e-10)

    def test_singular_values_match_gram_eigenvalues(self):
        """Independent oracle: singular values are the square roots of
        the eigenvalues of M^T M."""
        rng = np.random.default_rng(1)
        for _ in range(5):
            m = rng.standard_normal((25, 18))
            f = exact_svd(m)
            gram_eig = np.linalg.eigvalsh(m.T @ m)[::-1]
            npt.assert_allclose(f.singular_values,
                                np.sqrt(np.clip(gram_eig, 0, None)),
                                atol=1e-8)

    def test_factor_orthonormality(self):
        rng = np.random.default_rng(2)
        m = rng.standard_normal((15, 15))
        f = exact_svd(m)
        npt.assert_allclose(f.left.T @ f.left, np.eye(15), atol=1e-10)
        npt.assert_allclose(f.right.T @ f.right, np.eye(15), atol=1e-10)

    def test_sign_convention(self):
        """The first entry of magnitude above the threshold in every left
        singular vector is non-negative."""
        rng = np.random.default_rng(3)
        f = exact_svd(rng.standard_normal((12, 12)))
        for j in range(f.rank):
            col = f.left[:, j]
            lead = col[np.abs(col) > 1e-12][0]
            assert lead >= 0

    def test_sparse_input_accepted(self):
        import scipy.sparse as sp
        m = sp.csr_matrix(np.diag([2.0, 1.0]))
        npt.assert_allclose(exact_svd(m).singular_values, [2.0, 1.0])

    def test_non_finite_rejected(self):
        with pytest.raises(PreconditionError):
            exact_svd(np.array([[1.0, np.nan], [0.0, 1.0]]))


# ---- randomized_svd ----------------------------------------------------


class TestRandomizedSvd:
    def test_recovers_exactly_low_rank_matrix(self):
        """On a matrix of exact rank 5, rank-5 approximation is exact."""
        rng = np.random.default_rng(4)
        m = rank_k_matrix(100, 80, 5, rng)
        f = randomized_svd(m, target_rank=5, seed=0)
        assert frob(f.to_dense() - m) <= 1e-8

    def test_matches_exact_svd_at_full_width(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((20, 20))
        f = randomized_svd(m, target_rank=20, seed=0)
        npt.assert_allclose(f.singular_values,
                            exact_svd(m).singular_values, atol=1e-8)

    def test_near_optimal_on_dense_random_matrix(self):
        """Error within 5% of the best rank-k error (Gaussian input is
        the flat-spectrum worst case for sketching)."""
        rng = np.random.default_rng(6)
        for trial in range(5):
            m = rng.standard_normal((80, 80))
            sigma = exact_svd(m).singular_values
            f = randomized_svd(m, target_rank=10, seed=trial)
            err = frob(f.to_dense() - m)
            assert err <= 1.05 * eckart_young_error(sigma, 10)

    def test_singular_values_never_exceed_exact(self):
        """Sketched singular values are Rayleigh quotients of a
        subspace, so they cannot exceed the true ones."""
        rng = np.random.default_rng(7)
        for trial in range(5):
            m = rng.standard_normal((60, 40))
            exact = exact_svd(m).singular_values
            f = randomized_svd(m, target_rank=8, seed=trial)
            assert np.all(f.singular_values <= exact[:8] + 1e-6)

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(8)
        m = rng.standard_normal((50, 50))
        a = randomized_svd(m, target_rank=6, seed=3)
        b = randomized_svd(m, target_rank=6, seed=3)
        npt.assert_array_equal(a.left, b.left)
        npt.assert_array_equal(a.singular_values, b.singular_values)
        npt.assert_array_equal(a.right, b.right)

    def test_sparse_input(self):
        import scipy.sparse as sp
        rng = np.random.default_rng(9)
        dense = rank_k_matrix(40, 40, 3, rng)
        dense[np.abs(dense) < 0.5] = 0.0
        m = sp.csr_matrix(dense)
        f = randomized_svd(m, target_rank=20, seed=0)
        npt.assert_allclose(f.to_dense(),
                            truncate(exact_svd(dense), 20).to_dense(),
                            atol=1e-6)

    def test_orthonormal_output_factors(self):
        rng = np.random.default_rng(10)
        m = rng.standard_normal((45, 45))
        f = randomized_svd(m, target_rank=7, seed=1)
        npt.assert_allclose(f.left.T @ f.left, np.eye(7), atol=1e-8)
        npt.assert_allclose(f.right.T @ f.right, np.eye(7), atol=1e-8)

    def test_rank_bounds_rejected(self):
        m = np.eye(5)
        with pytest.raises(PreconditionError):
            randomized_svd(m, target_rank=0)
        with pytest.raises(PreconditionError):
            randomized_svd(m, target_rank=6)


# ---- truncate ----------------------------------------------------------


class TestTruncate:
    def test_full_rank_truncation_is_identity(self):
        f = exact_svd(np.diag([3.0, 2.0, 1.0]))
        assert truncate(f, 3) is f

    def test_matches_eckart_young_error(self):
        """Truncation error equals sqrt of the discarded sigma squares."""
        rng = np.random.default_rng(11)
        m = rng.standard_normal((25, 25))
        f = exact_svd(m)
        for k in (1, 5, 12, 24):
            err = frob(truncate(f, k).to_dense() - m)
            npt.assert_allclose(err, eckart_young_error(f.singular_values, k),
                                rtol=1e-10)

    def test_error_monotone_in_rank(self):
        rng = np.random.default_rng(12)
        for trial in range(5):
            m = rng.standard_normal((20, 20))
            f = exact_svd(m)
            errs = [frob(truncate(f, k).to_dense() - m)
                    for k in range(1, 21)]
            assert np.all(np.diff(errs) <= 1e-10)

    def test_out_of_range_rank(self):
        f = exact_svd(np.eye(3))
        with pytest.raises(PreconditionError):
            truncate(f, 0)
        with pytest.raises(PreconditionError):
            truncate(f, 4)


# ---- factored operations -----------------------------------------------


class TestFactoredOps:
    def test_matmul_matches_dense(self):
        rng = np.random.default_rng(13)
        m = rng.standard_normal((18, 12))
        f = exact_svd(m)
        x = rng.standard_normal(12)
        npt.assert_allclose(factored_matmul(f, x), m @ x, atol=1e-10)
        xm = rng.standard_normal((12, 4))
        npt.assert_allclose(factored_matmul(f, xm), m @ xm, atol=1e-10)

    def test_matmul_checks_row_count(self):
        f = exact_svd(np.eye(3))
        with pytest.raises(PreconditionError):
            factored_matmul(f, np.ones(4))

    def test_entry_block_matches_dense(self):
        rng = np.random.default_rng(14)
        m = rng.standard_normal((15, 15))
        f = truncate(exact_svd(m), 6)
        dense = f.to_dense()
        rows = np.array([0, 3, 14])
        cols = np.array([2, 2, 9, 11])
        npt.assert_allclose(factored_entry_block(f, rows, cols),
                            dense[np.ix_(rows, cols)], atol=1e-12)

    def test_entry_block_empty_ranges(self):
        f = exact_svd(np.eye(3))
        assert factored_entry_block(f, [], [0, 1]).shape == (0, 2)
        assert factored_entry_block(f, [0], []).shape == (1, 0)

    def test_entry_block_range_check(self):
        f = exact_svd(np.eye(3))
        with pytest.raises(PreconditionError):
            factored_entry_block(f, [3], [0])
        with pytest.raises(PreconditionError):
            factored_entry_block(f, [0], [-1])


# ---- SvdFactors validation ---------------------------------------------


class TestSvdFactors:
    def test_rejects_negative_singular_value(self):
        with pytest.raises(PreconditionError):
            SvdFactors(np.eye(2), np.array([1.0, -0.5]), np.eye(2))

    def test_rejects_ascending_order(self):
        with pytest.raises(PreconditionError):
            SvdFactors(np.eye(2), np.array([1.0, 2.0]), np.eye(2))

    def test_rejects_column_mismatch(self):
        with pytest.raises(PreconditionError):
            SvdFactors(np.eye(3)[:, :2], np.array([1.0]), np.eye(3))

    def test_shape_and_rank(self):
        f = SvdFactors(np.eye(4)[:, :2], np.array([2.0, 1.0]),
                       np.eye(3)[:, :2])
        assert f.shape == (4, 3)
        assert f.rank == 2


# ---- binary cache ------------------------------------------------------


class TestSvdCache:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(15)
        f = truncate(exact_svd(rng.standard_normal((10, 10))), 4)
        path = tmp_path / "f.svd"
        save_svd_cache(f, path)
        g = load_svd_cache(path)
        npt.assert_array_equal(g.left, f.left)
        npt.assert_array_equal(g.singular_values, f.singular_values)
        npt.assert_array_equal(g.right, f.right)

    def test_rejects_rectangular_factors(self, tmp_path):
        f = exact_svd(np.ones((3, 2)))
        with pytest.raises(PreconditionError):
            save_svd_cache(f, tmp_path / "f.svd")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.svd"
        path.write_bytes(b"NOT-A-CACHE" + b"\0" * 32)
        with pytest.raises(FormatError, match="magic"):
            load_svd_cache(path)

    def test_truncated_payload(self, tmp_path):
        rng = np.random.default_rng(16)
        f = truncate(exact_svd(rng.standard_normal((8, 8))), 3)
        path = tmp_path / "f.svd"
        save_svd_cache(f, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(FormatError, match="bytes"):
            load_svd_cache(path)

    def test_short_header(self, tmp_path):
        path = tmp_path / "f.svd"
        path.write_bytes(b"GA")
        with pytest.raises(FormatError, match="truncated"):
            load_svd_cache(path)

    def test_corrupt_values_rejected(self, tmp_path):
        """Flipping the singular-value block to ascending order must be
        caught by factor validation on load."""
        f = SvdFactors(np.eye(4)[:, :2], np.array([2.0, 1.0]),
                       np.eye(4)[:, :2])
        path = tmp_path / "f.svd"
        save_svd_cache(f, path)
        raw = bytearray(path.read_bytes())
        header = len(b"GADPN-SVD\0") + 16
        sv_off = header + 8 * 4 * 2
        raw[sv_off:sv_off + 16] = np.array([1.0, 2.0], "<f8").tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="invalid factors"):
            load_svd_cache(path)
