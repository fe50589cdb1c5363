"""Dense tableau simplex over the rationals for small LPs.

Only the form ``max c.x  s.t.  A x <= b, x >= 0`` with ``b >= 0`` is
supported, which starts from the all-slack basis and needs no phase one.
Bland's rule rules out cycling, and every quantity is a ``Fraction``, so the
primal and dual solutions returned are exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence


@dataclass(frozen=True)
class LPResult:
    status: str  # "optimal" or "unbounded"
    value: Fraction | None
    x: tuple[Fraction, ...]
    duals: tuple[Fraction, ...]
    pivots: int


def maximize(
    c: Sequence, a: Sequence[Sequence], b: Sequence, *, max_pivots: int = 100_000
) -> LPResult:
    """Solve ``max c.x`` subject to ``a x <= b``, ``x >= 0`` exactly.

    Args:
        c: objective, length ``k``.
        a: constraint rows, each of length ``k``.
        b: right-hand side; every entry must be nonnegative.
        max_pivots: safety cap.

    Returns:
        LPResult with primal ``x`` and row duals (``duals[r] >= 0``).
    """
    rows = len(a)
    k = len(c)
    width = k + rows
    tab = []
    for r in range(rows):
        if len(a[r]) != k:
            raise ValueError("constraint row length does not match the objective")
        rhs = Fraction(b[r])
        if rhs < 0:
            raise ValueError("right-hand side must be nonnegative")
        row = [Fraction(v) for v in a[r]] + [Fraction(int(s == r)) for s in range(rows)] + [rhs]
        tab.append(row)
    # objective row holds reduced costs -c_j; optimal when all are >= 0
    obj = [-Fraction(v) for v in c] + [Fraction(0)] * rows + [Fraction(0)]
    basis = [k + r for r in range(rows)]

    pivots = 0
    while True:
        entering = next((j for j in range(width) if obj[j] < 0), None)
        if entering is None:
            break
        best = None
        for r in range(rows):
            coef = tab[r][entering]
            if coef > 0:
                ratio = tab[r][-1] / coef
                if best is None or ratio < best[0] or (ratio == best[0] and basis[r] < basis[best[1]]):
                    best = (ratio, r)
        if best is None:
            return LPResult("unbounded", None, (), (), pivots)
        _pivot(tab, obj, best[1], entering)
        basis[best[1]] = entering
        pivots += 1
        if pivots > max_pivots:
            raise RuntimeError("pivot limit reached")

    x = [Fraction(0)] * width
    for r, j in enumerate(basis):
        x[j] = tab[r][-1]
    duals = tuple(obj[k + r] for r in range(rows))
    return LPResult("optimal", obj[-1], tuple(x[:k]), duals, pivots)


def _pivot(tab: list[list[Fraction]], obj: list[Fraction], r: int, j: int) -> None:
    piv = tab[r][j]
    row = [v / piv for v in tab[r]]
    tab[r] = row
    nz = [(q, v) for q, v in enumerate(row) if v]
    for other in tab:
        if other is row:
            continue
        f = other[j]
        if f:
            for q, v in nz:
                other[q] -= f * v
    f = obj[j]
    if f:
        for q, v in nz:
            obj[q] -= f * v
