"""Independent reference computations used by the tests."""

from __future__ import annotations

from decimal import Decimal, localcontext
from fractions import Fraction


def exact_pearson(x, y) -> float | None:
    """The textbook sum formula in exact rationals; the square root at 60 digits.

    Returns None when either variance term is zero.
    """
    n = len(x)
    fx = [Fraction(v) for v in x]
    fy = [Fraction(v) for v in y]
    sx, sy = sum(fx), sum(fy)
    sxy = sum(a * b for a, b in zip(fx, fy))
    sxx = sum(a * a for a in fx)
    syy = sum(b * b for b in fy)
    num = n * sxy - sx * sy
    vx = n * sxx - sx * sx
    vy = n * syy - sy * sy
    if vx == 0 or vy == 0:
        return None
    with localcontext() as ctx:
        ctx.prec = 60
        den2 = vx * vy
        den = (Decimal(den2.numerator) / Decimal(den2.denominator)).sqrt()
        return float(Decimal(num.numerator) / Decimal(num.denominator) / den)
