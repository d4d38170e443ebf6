"""Tests for pivoted QR and MaxVol row selection."""

from itertools import combinations

import numpy as np
import pytest

from htbb.exceptions import NotTallError, NumericalDegeneracyError
from htbb.maxvol import maxvol_rect, maxvol_square, qr_pivoted, volume


class TestVolume:
    """Test cases for the volume of a tall matrix."""

    def test_square_volume_is_abs_det(self):
        """Test that a square matrix has volume |det|."""
        a = np.array([[2.0, 1.0], [0.0, -3.0]])
        assert volume(a) == pytest.approx(6.0)

    def test_orthonormal_columns(self, rng):
        """Test that orthonormal columns have unit volume."""
        q, _ = np.linalg.qr(rng.standard_normal((10, 4)))
        assert volume(q) == pytest.approx(1.0)

    def test_wide_matrix(self):
        """Test that a wide matrix is rejected."""
        with pytest.raises(NotTallError):
            volume(np.ones((2, 3)))


class TestQRPivoted:
    """Test cases for column-pivoted QR."""

    def test_factorization(self, rng):
        """Test that the factors reproduce the permuted matrix."""
        a = rng.standard_normal((12, 5))
        qr = qr_pivoted(a)
        np.testing.assert_allclose(qr.q @ qr.r, a[:, qr.perm], atol=1e-12)
        np.testing.assert_allclose(qr.q.T @ qr.q, np.eye(5), atol=1e-12)

    def test_pivots_non_increasing(self, rng):
        """Test the rank-revealing pivot order."""
        a = rng.standard_normal((20, 6)) * np.array([1e-6, 1.0, 10.0, 1e-3, 5.0, 0.1])
        pivots = np.abs(np.diag(qr_pivoted(a).r))
        assert np.all(np.diff(pivots) <= 1e-10 * pivots[0])

    def test_rank_deficient(self, rng):
        """Test that a rank-2 matrix has a negligible third pivot."""
        a = rng.standard_normal((15, 2)) @ rng.standard_normal((2, 4))
        pivots = np.abs(np.diag(qr_pivoted(a).r))
        assert pivots[2] / pivots[0] < 1e-12


class TestMaxvolSquare:
    """Test cases for square MaxVol."""

    def test_locally_maximal_and_near_global(self):
        """Test dominance and quality against brute force on random 8x3 matrices."""
        rng = np.random.default_rng(7)
        for _ in range(100):
            a = rng.standard_normal((8, 3))
            rows = maxvol_square(a)
            assert len(set(rows.tolist())) == 3

            coef = a @ np.linalg.inv(a[rows])
            assert np.abs(coef).max() <= 1.01 + 1e-9

            selected = abs(np.linalg.det(a[rows]))
            for j in range(3):
                for i in set(range(8)) - set(rows.tolist()):
                    swapped = rows.copy()
                    swapped[j] = i
                    assert abs(np.linalg.det(a[swapped])) <= 1.01 * selected + 1e-12

            best = max(abs(np.linalg.det(a[list(c)])) for c in combinations(range(8), 3))
            assert selected >= 0.1 * best

    def test_picks_identity_rows(self):
        """Test that embedded identity rows dominate smaller rows."""
        q = np.array(
            [
                [0.1, 0.2, 0.3],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.2, 0.1, 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        assert sorted(maxvol_square(q).tolist()) == [1, 2, 4]

    def test_square_input(self, rng):
        """Test that a square matrix selects every row."""
        np.testing.assert_array_equal(maxvol_square(rng.standard_normal((3, 3))), [0, 1, 2])

    def test_singular_seed(self, rng):
        """Test that a rank-deficient matrix is reported."""
        q = rng.standard_normal((6, 3))
        q[:, 2] = 0.0
        with pytest.raises(NumericalDegeneracyError):
            maxvol_square(q)

    def test_wide_matrix(self):
        """Test that a wide matrix is rejected."""
        with pytest.raises(NotTallError):
            maxvol_square(np.ones((2, 3)))


class TestMaxvolRect:
    """Test cases for rectangular MaxVol."""

    def test_never_loses_volume(self):
        """Test that one extra row never shrinks the volume of the square selection."""
        rng = np.random.default_rng(11)
        for _ in range(100):
            a = rng.standard_normal((8, 3))
            square = maxvol_square(a)
            rect = maxvol_rect(a, 1)
            assert 3 <= len(rect) <= 4
            np.testing.assert_array_equal(rect[:3], square)
            assert volume(a[rect]) >= volume(a[square]) * (1 - 1e-12)

    def test_no_growth(self, rng):
        """Test that dr=0 returns the square selection."""
        a = rng.standard_normal((10, 3))
        np.testing.assert_array_equal(maxvol_rect(a, 0), maxvol_square(a))

    def test_row_norm_bound(self, rng):
        """Test that unlimited growth leaves every coefficient row within tol."""
        a = rng.standard_normal((50, 3))
        rows = maxvol_rect(a, 47, tol=1.0)
        assert len(set(rows.tolist())) == len(rows)
        coef = a @ np.linalg.pinv(a[rows])
        assert np.linalg.norm(coef, axis=1).max() <= 1.0 + 1e-8

    def test_growth_capped_by_rows(self, rng):
        """Test that no more rows than exist are returned."""
        a = rng.standard_normal((5, 2))
        rows = maxvol_rect(a, 10, tol=0.0)
        assert sorted(rows.tolist()) == [0, 1, 2, 3, 4]
