"""Exact rational values for the piecewise models.

Slope before the changepoint is psi2, slope after it psi3, last level psi1.
The transition cubic g on [psi4, psi4 + v] satisfies
  g(psi4) = lam + psi2 psi4,   g(psi4 + v) = psi1 + psi3 (psi4 + v),
  g'(psi4) = psi2,             g'(psi4 + v) = psi3,
with lam = psi1 + (psi3 - psi2)(psi4 + v/2).
"""
from fractions import Fraction as F


def solve(a, b):
    n = len(b)
    m = [row[:] + [b[i]] for i, row in enumerate(a)]
    for c in range(n):
        p = next(r for r in range(c, n) if m[r][c] != 0)
        m[c], m[p] = m[p], m[c]
        for r in range(n):
            if r != c and m[r][c] != 0:
                f = m[r][c] / m[c][c]
                m[r] = [x - f * y for x, y in zip(m[r], m[c])]
    return [m[i][n] / m[i][i] for i in range(n)]


def lam(psi, v):
    return psi[0] + (psi[2] - psi[1]) * (psi[3] + v / 2)


def cubic(psi, v):
    t0, t1 = psi[3], psi[3] + v
    rows = [[1, t0, t0**2, t0**3], [1, t1, t1**2, t1**3],
            [0, 1, 2 * t0, 3 * t0**2], [0, 1, 2 * t1, 3 * t1**2]]
    rhs = [lam(psi, v) + psi[1] * t0, psi[0] + psi[2] * t1, psi[1], psi[2]]
    return solve([[F(x) for x in r] for r in rows], [F(x) for x in rhs])


def pmma(t, psi):
    if t < psi[3]:
        return psi[0] + psi[2] * psi[3] + psi[1] * (t - psi[3])
    return psi[0] + psi[2] * t


def show(label, x):
    print(f"{label} = {x}  ({float(x):.17g})")


psi = [F(0), F(0), F(-1), F(-5)]
c = cubic(psi, F(2))
print("cubic(0,0,-1,-5; v=2):", [str(x) for x in c])
show("  g(-4)", sum(ci * F(-4)**k for k, ci in enumerate(c)))

psi = [F("-1.099"), F("-0.017"), F("-0.246"), F("-5.3")]
c = cubic(psi, F(2))
print("cubic(-1.099,-0.017,-0.246,-5.3; v=2):", [float(x) for x in c])
show("  g(psi4 + v/2)", sum(ci * F("-4.3")**k for k, ci in enumerate(c)))
show("  lambda", lam(psi, F(2)))

psi = [F("-1.103"), F("-0.017"), F("-0.249"), F("-4.25")]
show("pmma(t=-10)", pmma(F(-10), psi))
show("pmma(t=-2)", pmma(F(-2), psi))
