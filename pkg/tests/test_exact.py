from fractions import Fraction

import numpy as np
import pytest

from sandlab.exact import (
    det_bareiss,
    det_fraction,
    invert_exact,
    leading_principal_minors,
    solve_exact,
)
from sandlab.harness import stream
from sandlab.lattice import make_volume, toppling_matrix


def brute_force_det(rows):
    """Permanent-style expansion oracle, exact, for tiny matrices."""
    n = len(rows)
    if n == 1:
        return rows[0][0]
    total = 0
    sign = 1
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in rows[1:]]
        total += sign * rows[0][j] * brute_force_det(minor)
        sign = -sign
    return total


def test_hand_cases():
    assert det_bareiss([[4]]) == 4
    assert det_bareiss([[4, -1], [-1, 4]]) == 15
    assert det_bareiss([[1, 2], [2, 4]]) == 0


def test_matches_expansion_oracle_on_random_matrices():
    rng = stream(101, 0)
    for trial in range(60):
        n = int(rng.integers(1, 6))
        m = rng.integers(-5, 6, size=(n, n)).tolist()
        assert det_bareiss(m) == brute_force_det(m)


def test_zero_pivot_needs_row_swap():
    m = [[0, 1], [1, 0]]
    assert det_bareiss(m) == -1
    m = [[0, 0, 1], [0, 1, 0], [1, 0, 0]]
    assert det_bareiss(m) == -1


def test_non_square_rejected():
    with pytest.raises(ValueError):
        det_bareiss([[1, 2, 3], [4, 5, 6]])
    with pytest.raises(ValueError):
        det_bareiss([])


def test_leading_minors_positive_definite():
    vol = make_volume(2, (0, 0), (2, 2))
    m = toppling_matrix(vol).tolist()
    minors = leading_principal_minors(m)
    assert len(minors) == vol.n_sites
    assert all(v > 0 for v in minors)
    assert minors[-1] == det_bareiss(m)
    # each minor equals the determinant of the corresponding leading block
    for k in (1, 2, 3):
        block = [row[:k] for row in m[:k]]
        assert minors[k - 1] == brute_force_det(block)


def test_solve_exact_and_inverse():
    rng = stream(101, 1)
    for trial in range(30):
        n = int(rng.integers(1, 6))
        while True:
            m = rng.integers(-4, 5, size=(n, n)).tolist()
            if det_bareiss(m) != 0:
                break
        rhs = rng.integers(-7, 8, size=(2, n)).tolist()
        sols = solve_exact(m, rhs)
        for col, b in zip(sols, rhs):
            for i in range(n):
                assert sum(Fraction(m[i][j]) * col[j] for j in range(n)) == b[i]
        inv = invert_exact(m)
        for i in range(n):
            for j in range(n):
                acc = sum(Fraction(m[i][k]) * inv[k][j] for k in range(n))
                assert acc == (1 if i == j else 0)


def test_solve_exact_singular_raises():
    with pytest.raises(ZeroDivisionError):
        solve_exact([[1, 2], [2, 4]], [[1, 0]])


def test_det_fraction():
    m = [[Fraction(1, 2), Fraction(1, 3)], [Fraction(1, 5), Fraction(1, 7)]]
    assert det_fraction(m) == Fraction(1, 14) - Fraction(1, 15)
    assert det_fraction([[Fraction(0), Fraction(1)], [Fraction(1), Fraction(0)]]) == -1
    assert det_fraction([[Fraction(2)]]) == 2
    assert det_fraction([[Fraction(1), Fraction(2)], [Fraction(2), Fraction(4)]]) == 0


def test_banded_path_matches_dense_on_laplacians():
    # volumes give banded matrices; compare against the generic oracle
    for d, lo, hi in ((2, (0, 0), (3, 2)), (3, (0, 0, 0), (1, 1, 2))):
        m = toppling_matrix(make_volume(d, lo, hi))
        dense = np.round(np.linalg.det(m.astype(float)))
        assert det_bareiss(m.tolist()) == int(dense)
