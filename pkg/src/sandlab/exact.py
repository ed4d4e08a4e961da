"""Exact integer and rational linear algebra.

The determinant identities this package verifies (spanning-tree counts,
deletion ratios, expected toppling numbers) are exact statements, so the
routines here work over Python's arbitrary-precision integers and
``fractions.Fraction``.  Floating point never enters.

Determinants use fraction-free (Bareiss) elimination: every intermediate
entry is an integer minor of the input, so nothing overflows and no
rationals appear until a final division.  Matrices coming from lattice
Laplacians are banded and positive definite; elimination without pivoting
preserves the band, which the inner loops exploit.
"""

from fractions import Fraction


def _as_int_rows(rows):
    a = [[int(x) for x in row] for row in rows]
    n = len(a)
    if n == 0:
        raise ValueError("empty matrix")
    for row in a:
        if len(row) != n:
            raise ValueError("matrix is not square")
    return a, n


def _bandwidth(a, n):
    w = 0
    for i in range(n):
        row = a[i]
        for j in range(n):
            if row[j] and abs(i - j) > w:
                w = abs(i - j)
    return w


def det_bareiss(rows):
    """Exact determinant of a square integer matrix.

    Uses Bareiss elimination, falling back to row pivoting (with a full
    bandwidth) only when a zero pivot shows up.
    """
    a, n = _as_int_rows(rows)
    w = _bandwidth(a, n)
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            p = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if p is None:
                return 0
            a[k], a[p] = a[p], a[k]
            sign = -sign
            w = n  # row swap can break the band structure
        pk = a[k][k]
        row_k = a[k]
        for i in range(k + 1, n):
            row_i = a[i]
            aik = row_i[k]
            lo = max(k + 1, i - w)
            hi = min(n, max(i, k) + w + 1)
            if aik == 0:
                for j in range(lo, hi):
                    if row_i[j]:
                        row_i[j] = row_i[j] * pk // prev
            else:
                row_i[k] = 0
                for j in range(lo, hi):
                    row_i[j] = (row_i[j] * pk - aik * row_k[j]) // prev
        prev = pk
    return sign * a[n - 1][n - 1]


def leading_principal_minors(rows):
    """All n leading principal minors of an integer matrix, exactly.

    Raises if a zero pivot is hit (a positive-definite input never does).
    """
    a, n = _as_int_rows(rows)
    w = _bandwidth(a, n)
    minors = [a[0][0]]
    prev = 1
    for k in range(n - 1):
        pk = a[k][k]
        if pk == 0:
            raise ZeroDivisionError("zero leading minor; matrix is not positive definite")
        row_k = a[k]
        for i in range(k + 1, n):
            row_i = a[i]
            aik = row_i[k]
            lo = max(k + 1, i - w)
            hi = min(n, max(i, k) + w + 1)
            if aik == 0:
                for j in range(lo, hi):
                    if row_i[j]:
                        row_i[j] = row_i[j] * pk // prev
            else:
                row_i[k] = 0
                for j in range(lo, hi):
                    row_i[j] = (row_i[j] * pk - aik * row_k[j]) // prev
        prev = pk
        minors.append(a[k + 1][k + 1])
    return minors


def solve_exact(rows, rhs_columns):
    """Solve A x = b exactly for each right-hand column, A integer and nonsingular.

    Returns a list of solution columns, entries ``Fraction``.  Elimination is
    fraction-free; rationals only appear during back substitution.
    """
    a, n = _as_int_rows(rows)
    cols = [[int(x) for x in col] for col in rhs_columns]
    for col in cols:
        if len(col) != n:
            raise ValueError("right-hand side length mismatch")
    w = _bandwidth(a, n)
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            p = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if p is None:
                raise ZeroDivisionError("singular matrix")
            a[k], a[p] = a[p], a[k]
            for col in cols:
                col[k], col[p] = col[p], col[k]
            w = n
        pk = a[k][k]
        row_k = a[k]
        for i in range(k + 1, n):
            row_i = a[i]
            aik = row_i[k]
            lo = max(k + 1, i - w)
            hi = min(n, max(i, k) + w + 1)
            if aik == 0:
                for j in range(lo, hi):
                    if row_i[j]:
                        row_i[j] = row_i[j] * pk // prev
            else:
                row_i[k] = 0
                for j in range(lo, hi):
                    row_i[j] = (row_i[j] * pk - aik * row_k[j]) // prev
            for col in cols:
                if aik == 0:
                    if col[i]:
                        col[i] = col[i] * pk // prev
                else:
                    col[i] = (col[i] * pk - aik * col[k]) // prev
        prev = pk
    if a[n - 1][n - 1] == 0:
        raise ZeroDivisionError("singular matrix")
    sols = []
    for col in cols:
        x = [Fraction(0)] * n
        for i in range(n - 1, -1, -1):
            s = Fraction(col[i])
            hi = n if w >= n else min(n, i + w + 1)
            row_i = a[i]
            for j in range(i + 1, hi):
                if row_i[j]:
                    s -= row_i[j] * x[j]
            x[i] = s / a[i][i]
        sols.append(x)
    return sols


def invert_exact(rows):
    """Exact inverse of an integer matrix as nested lists of Fractions."""
    n = len(rows)
    eye = [[1 if i == j else 0 for i in range(n)] for j in range(n)]
    cols = solve_exact(rows, eye)
    return [[cols[j][i] for j in range(n)] for i in range(n)]


def det_fraction(rows):
    """Determinant of a small matrix with Fraction entries (partial pivoting)."""
    a = [[Fraction(x) for x in row] for row in rows]
    n = len(a)
    for row in a:
        if len(row) != n:
            raise ValueError("matrix is not square")
    det = Fraction(1)
    for k in range(n):
        p = next((i for i in range(k, n) if a[i][k] != 0), None)
        if p is None:
            return Fraction(0)
        if p != k:
            a[k], a[p] = a[p], a[k]
            det = -det
        pivot = a[k][k]
        det *= pivot
        for i in range(k + 1, n):
            if a[i][k] == 0:
                continue
            f = a[i][k] / pivot
            row_i, row_k = a[i], a[k]
            for j in range(k, n):
                row_i[j] -= f * row_k[j]
    return det
