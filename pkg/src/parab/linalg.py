"""Exact linear algebra helpers.

Three layers, matching how they are used:

* rational matrices (Fraction entries): rref, rank, nullspace, and
  solving A x = b where b has symbolic entries but A is rational - the
  representation-theory module and all absorption solves live here;
* symbolic matrices (sympy entries): Gauss-Jordan inversion and span
  membership with pivots certified nonzero by the randomized zero test;
* sparse numeric membership at a point (mpmath, high precision) for the
  pointwise ideal-membership checks.

Everything is elimination-based; no floating point enters the rational
or symbolic layers.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import mpmath
import sympy as sp

from .expr import Verdict, ZeroContext


# ---------------------------------------------------------------------------
# rational layer


def rational_rref(rows: List[List[Fraction]]) -> Tuple[List[List[Fraction]], List[int]]:
    """Reduced row echelon form (in place on a copy); returns (rref, pivot columns)."""
    m = [list(map(Fraction, r)) for r in rows]
    nrows = len(m)
    ncols = len(m[0]) if nrows else 0
    pivots = []
    r = 0
    for c in range(ncols):
        pr = next((i for i in range(r, nrows) if m[i][c] != 0), None)
        if pr is None:
            continue
        m[r], m[pr] = m[pr], m[r]
        pv = m[r][c]
        m[r] = [v / pv for v in m[r]]
        for i in range(nrows):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == nrows:
            break
    return m, pivots


def rational_rank(rows: Sequence[Sequence[Fraction]]) -> int:
    if not rows:
        return 0
    _, pivots = rational_rref([list(r) for r in rows])
    return len(pivots)


def rational_nullspace(rows: Sequence[Sequence[Fraction]],
                       ncols: Optional[int] = None) -> List[List[Fraction]]:
    """Basis of the right nullspace of a rational matrix."""
    if not rows:
        if not ncols:
            return []
        return [[Fraction(1 if i == j else 0) for j in range(ncols)] for i in range(ncols)]
    ncols = len(rows[0])
    rref, pivots = rational_rref([list(r) for r in rows])
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for fc in free:
        v = [Fraction(0)] * ncols
        v[fc] = Fraction(1)
        for r, pc in enumerate(pivots):
            v[pc] = -rref[r][fc]
        basis.append(v)
    return basis


def rational_solve_symbolic_rhs(rows: Sequence[Sequence[Fraction]],
                                rhs: Sequence[sp.Expr]
                                ) -> Tuple[Optional[List[sp.Expr]], List[sp.Expr]]:
    """Solve A x = b with rational A and symbolic b.

    Returns (x, residuals): x is one solution of the pivot equations
    (free variables set to 0), residuals are the symbolic combinations
    that must vanish for the system to be consistent.  x is None when A
    has no columns.
    """
    nrows = len(rows)
    ncols = len(rows[0]) if nrows else 0
    m = [list(map(Fraction, r)) for r in rows]
    b: List[sp.Expr] = [sp.sympify(v) for v in rhs]
    pivots: List[Tuple[int, int]] = []  # (row, col)
    r = 0
    for c in range(ncols):
        pr = next((i for i in range(r, nrows) if m[i][c] != 0), None)
        if pr is None:
            continue
        m[r], m[pr] = m[pr], m[r]
        b[r], b[pr] = b[pr], b[r]
        pv = m[r][c]
        m[r] = [v / pv for v in m[r]]
        b[r] = b[r] / sp.Rational(pv.numerator, pv.denominator)
        for i in range(nrows):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                fq = sp.Rational(f.numerator, f.denominator)
                m[i] = [a - f * pbv for a, pbv in zip(m[i], m[r])]
                b[i] = b[i] - fq * b[r]
        pivots.append((r, c))
        r += 1
        if r == nrows:
            break
    x: List[sp.Expr] = [sp.S.Zero] * ncols
    for pr, pc in pivots:
        x[pc] = b[pr]
    residuals = [b[i] for i in range(len(pivots), nrows)]
    return (x if ncols else None), residuals


# ---------------------------------------------------------------------------
# symbolic layer


def _certify_nonzero(e: sp.Expr, ctx: ZeroContext) -> bool:
    if e.is_Rational:
        return e != 0
    return ctx.is_zero(e).verdict is Verdict.NONZERO


def symbolic_inverse(M: List[List[sp.Expr]], ctx: ZeroContext) -> List[List[sp.Expr]]:
    """Gauss-Jordan inverse with zero-test-certified pivots.

    Pivot preference: exact nonzero rationals first (no expression
    growth), then any entry certified NonZero.  Entries are kept in
    cancelled rational-function form.
    """
    n = len(M)
    a = [[sp.sympify(v) for v in row] + [sp.Integer(1 if i == j else 0) for j in range(n)]
         for i, row in enumerate(M)]
    for c in range(n):
        rows_ = range(c, n)
        pr = next((i for i in rows_ if a[i][c].is_Rational and a[i][c] != 0), None)
        if pr is None:
            pr = next((i for i in rows_ if _certify_nonzero(a[i][c], ctx)), None)
        if pr is None:
            raise ValueError("matrix is not invertible over the domain")
        a[c], a[pr] = a[pr], a[c]
        pv = a[c][c]
        a[c] = [sp.cancel(v / pv) for v in a[c]]
        for i in range(n):
            if i != c and a[i][c] != 0:
                f = a[i][c]
                a[i] = [sp.cancel(v - f * w) for v, w in zip(a[i], a[c])]
    return [row[n:] for row in a]


def solve_in_span(vectors: List[Dict], target: Dict, ctx: ZeroContext
                  ) -> Tuple[List[sp.Expr], Dict]:
    """Express `target` (sparse dict key -> expr) in the span of `vectors`.

    Returns (coefficients, residual dict) with
    target = sum_j coeffs[j] * vectors[j] + residual; callers zero-test
    the residual.  Implemented as sparse Gauss-Jordan over the columns
    with marker keys riding along to recover the coefficients.
    """
    marker = object()  # sentinel namespace for coefficient-tracking keys
    cols = []
    for j, v in enumerate(vectors):
        c = {k: sp.sympify(x) for k, x in v.items() if sp.sympify(x) != 0}
        c[(marker, j)] = sp.S.One
        cols.append(c)
    tgt = {k: sp.sympify(x) for k, x in target.items() if sp.sympify(x) != 0}

    def real_items(col):
        return [(k, v) for k, v in col.items() if not (isinstance(k, tuple) and len(k) == 2 and k[0] is marker)]

    for j, col in enumerate(cols):
        pivot = None
        for k, v in real_items(col):
            if v.is_Rational and v != 0:
                pivot = k
                break
        if pivot is None:
            for k, v in real_items(col):
                if _certify_nonzero(v, ctx):
                    pivot = k
                    break
        if pivot is None:
            continue  # column lies in the span of earlier ones (numerically zero)
        pv = col[pivot]
        for other in cols[j + 1:]:
            if pivot in other:
                f = sp.cancel(other[pivot] / pv)
                for k, v in col.items():
                    w = sp.cancel(other.get(k, sp.S.Zero) - f * v)
                    if w == 0:
                        other.pop(k, None)
                    else:
                        other[k] = w
        if pivot in tgt:
            f = sp.cancel(tgt[pivot] / pv)
            for k, v in col.items():
                w = sp.cancel(tgt.get(k, sp.S.Zero) - f * v)
                if w == 0:
                    tgt.pop(k, None)
                else:
                    tgt[k] = w
    coeffs = [sp.S.Zero] * len(vectors)
    residual = {}
    for k, v in tgt.items():
        if isinstance(k, tuple) and len(k) == 2 and k[0] is marker:
            coeffs[k[1]] = -v
        else:
            residual[k] = v
    return coeffs, residual


# ---------------------------------------------------------------------------
# numeric layer


def numeric_membership(columns: List[Dict], target: Dict, prec: int = 256) -> mpmath.mpf:
    """Max-norm distance of `target` from span(columns) at one point.

    Entries are mpf values keyed by arbitrary hashable monomial keys.
    Forward elimination with partial pivoting; returns the max residual
    magnitude after eliminating every column.
    """
    with mpmath.workprec(prec):
        cols = [{k: mpmath.mpf(v) for k, v in c.items() if v != 0} for c in columns]
        tgt = {k: mpmath.mpf(v) for k, v in target.items()}
        eps = mpmath.mpf(2) ** (-prec // 2)
        for j, col in enumerate(cols):
            if not col:
                continue
            pivot = max(col, key=lambda k: abs(col[k]))
            pv = col[pivot]
            if abs(pv) < eps:
                continue
            for other in cols[j + 1:]:
                if pivot in other:
                    f = other[pivot] / pv
                    for k, v in col.items():
                        other[k] = other.get(k, mpmath.mpf(0)) - f * v
                    other.pop(pivot, None)
            if pivot in tgt:
                f = tgt[pivot] / pv
                for k, v in col.items():
                    tgt[k] = tgt.get(k, mpmath.mpf(0)) - f * v
                tgt.pop(pivot, None)
        return max((abs(v) for v in tgt.values()), default=mpmath.mpf(0))
