"""Independent reference computations used by the tests.

Nothing here imports the package: each oracle is a plain re-derivation
(explicit loops, series, closed forms) to compare against.
"""
from __future__ import annotations

import itertools
import math
from decimal import Decimal

import numpy as np


def expm_taylor(A, terms=30):
    """Matrix exponential by scaling and squaring of a truncated Taylor series."""
    A = np.asarray(A, dtype=float)
    norm = np.abs(A).sum(axis=0).max()
    s = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0 else 0
    B = A / 2.0 ** s
    term = np.eye(A.shape[0])
    out = np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ B / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def random_generator(rng, n):
    """Random ``n x n`` generator: nonnegative off-diagonal, columns sum to 0."""
    A = rng.uniform(0.0, 5.0, size=(n, n))
    np.fill_diagonal(A, 0.0)
    A[np.diag_indices(n)] = -A.sum(axis=0)
    return A


def taylor_exp(h, order):
    return sum((-h) ** k / math.factorial(k) for k in range(order + 1))


def gate_exact(y0, alpha, beta, t):
    """Solution of y' = alpha (1 - y) - beta y with constant rates."""
    k = alpha + beta
    yinf = alpha / k
    return yinf + (y0 - yinf) * math.exp(-k * t)


def tensor(Dpar, Dtrans, f):
    f = np.asarray(f, dtype=float)
    f = f / np.linalg.norm(f)
    return np.array([[Dtrans * (j == k) + (Dpar - Dtrans) * f[j] * f[k] for k in range(3)]
                     for j in range(3)])


def stencil_oracle(chi, Dfield, p, hx):
    """Weights at point ``p=(x, y, z)`` as a dict ``q -> w`` over all 27
    offsets, written straight from the weight formulas with explicit loops.

    ``chi(x, y, z)`` is the indicator and ``Dfield(x, y, z)`` the 3x3
    tensor at a node.  In the divergence term a void neighbour contributes
    the tensor of ``p`` itself.
    """
    x, y, z = p
    e = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    Dp = Dfield(x, y, z)

    def Dn(n):
        return Dfield(*n) if chi(*n) else Dp
    w = {}
    for q in itertools.product((-1, 0, 1), repeat=3):
        if q == (0, 0, 0):
            continue
        nz = [a for a in range(3) if q[a] != 0]
        c = chi(x + q[0], y + q[1], z + q[2])
        if len(nz) == 1:
            j = nz[0]
            bar = c * Dp[j][j] / hx ** 2
            k = j
            sgn = q[k]
            cm = chi(x - q[0], y - q[1], z - q[2])
            s = 0.0
            for jj in range(3):
                plus = (x + e[jj][0], y + e[jj][1], z + e[jj][2])
                minus = (x - e[jj][0], y - e[jj][1], z - e[jj][2])
                s += Dn(plus)[jj][k] - Dn(minus)[jj][k]
            til = c * cm / (4 * hx ** 2) * sgn * s
            w[q] = bar + til
        elif len(nz) == 2:
            j, k = nz
            if q[j] == q[k]:
                w[q] = c * 0.5 * Dp[j][k] / hx ** 2
            else:
                w[q] = -c * 0.5 * Dp[j][k] / hx ** 2
        else:
            w[q] = 0.0
    w[(0, 0, 0)] = -sum(w.values())
    return w


def record_field(v):
    """Sign, 15 significant digits and a signed three-digit exponent, built
    from the exact decimal expansion."""
    d = Decimal(v)
    sign = "-" if d.is_signed() else "+"
    d = abs(d)
    if d == 0:
        return sign + "0." + "0" * 14 + "e+000"
    exp = d.adjusted()
    digits = d.scaleb(-exp).quantize(Decimal("1.00000000000000"))
    if digits >= 10:
        exp += 1
        digits = d.scaleb(-exp).quantize(Decimal("1.00000000000000"))
    esign = "-" if exp < 0 else "+"
    return f"{sign}{digits}e{esign}{abs(exp):03d}"


def ppm_p6(rgb_rows, width, height, zmax=1):
    """P6 bytes from nested lists ``rgb_rows[row][col] = (r, g, b)``."""
    head = "P6\n" + (f"#zmax={zmax}\n" if zmax > 1 else "") + f"{width} {height}\n255\n"
    body = bytearray()
    for row in rgb_rows:
        for r, g, b in row:
            body += bytes((r, g, b))
    return head.encode("ascii") + bytes(body)


def byte_of(v, lo, hi):
    """Round-half-up quantization, computed in exact rationals."""
    from fractions import Fraction
    t = Fraction(255) * (Fraction(v) - Fraction(lo)) / (Fraction(hi) - Fraction(lo)) + Fraction(1, 2)
    return max(0, min(255, math.floor(t)))


def cross_field_frame(n=102):
    """Pixel rows of the cross-field start on an ``n x n`` box grid: tissue
    is the interior, u=1 above y=50, v=0.4 left of x=50; r shows u on [0,1],
    g shows v on [0,0.8]."""
    rows = []
    for y in range(n):
        row = []
        for x in range(n):
            inside = 1 <= x <= n - 2 and 1 <= y <= n - 2
            u = 1.0 if (inside and y > 50) else 0.0
            v = 0.4 if (inside and x < 50) else 0.0
            row.append((byte_of(u, 0, 1), byte_of(v, 0, 0.8), 0))
        rows.append(row)
    return rows


def dump_window_values():
    """Values of the 10x10 window (x, y in 1..10) on two layers:
    u0 = x/7 + y and u1 = -x*y/3, in (layer, z, y, x) order."""
    out = []
    for layer in range(2):
        for y in range(1, 11):
            for x in range(1, 11):
                out.append(x / 7 + y if layer == 0 else -x * y / 3)
    return out


def dump_bytes(values):
    import struct
    return b"".join(struct.pack("<d", v) for v in values)


def hh_rates(V):
    """Hodgkin-Huxley 1952 rates (modern sign convention, rest near -65 mV)."""
    am = 0.1 * (V + 40) / (1 - math.exp(-(V + 40) / 10))
    bm = 4 * math.exp(-(V + 65) / 18)
    ah = 0.07 * math.exp(-(V + 65) / 20)
    bh = 1 / (1 + math.exp(-(V + 35) / 10))
    an = 0.01 * (V + 55) / (1 - math.exp(-(V + 55) / 10))
    bn = 0.125 * math.exp(-(V + 65) / 80)
    return (am, bm), (ah, bh), (an, bn)


def hh_rest():
    """Resting potential: zero total current with gates at steady state."""
    from scipy.optimize import brentq

    def current(V):
        (am, bm), (ah, bh), (an, bn) = hh_rates(V)
        m, h, n = am / (am + bm), ah / (ah + bh), an / (an + bn)
        return 120 * m ** 3 * h * (V - 50) + 36 * n ** 4 * (V + 77) + 0.3 * (V + 54.387)

    V = brentq(current, -70.0, -60.0, xtol=1e-14, rtol=1e-15)
    (am, bm), (ah, bh), (an, bn) = hh_rates(V)
    return V, am / (am + bm), ah / (ah + bh), an / (an + bn)


def line_crossing(a_coef, b_coef):
    """Crossing of a0 + a1 x + a2 y = 0 and b0 + b1 x + b2 y = 0."""
    M = np.array([[a_coef[1], a_coef[2]], [b_coef[1], b_coef[2]]], dtype=float)
    return np.linalg.solve(M, -np.array([a_coef[0], b_coef[0]], dtype=float))
