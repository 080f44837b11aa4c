"""Independent oracle for radial ground-state regression values.

Fixed-step classical RK4 shooting with bisection, at three step sizes, then
Richardson extrapolation (RK4 is 4th order).  Shares no code with
``equivar_nehari.ground_state``.  Prints the values frozen in
``tests/test_ground_state.py``.
"""
import math

import numpy as np


def rk4_shoot(n, p, a, h, r_max=30.0):
    """Return (kind, r, U) with kind +1 overshoot, -1 undershoot."""
    def f(r, y):
        u, du = y
        return np.array([du, -(n - 1) / r * du + u - abs(u) ** (p - 2) * u])

    c2 = (a - a ** (p - 1)) / (2 * n)
    c4 = (1 - (p - 1) * a ** (p - 2)) * c2 / (4 * n + 8)
    r = h
    y = np.array([a + c2 * r * r + c4 * r**4, 2 * c2 * r + 4 * c4 * r**3])
    rs, us = [0.0, r], [a, y[0]]
    while r < r_max:
        k1 = f(r, y)
        k2 = f(r + h / 2, y + h / 2 * k1)
        k3 = f(r + h / 2, y + h / 2 * k2)
        k4 = f(r + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        r += h
        rs.append(r)
        us.append(y[0])
        if y[0] < 0:
            return 1, np.array(rs), np.array(us)
        if y[1] > 0:
            return -1, np.array(rs), np.array(us)
    return 0, np.array(rs), np.array(us)


def height(n, p, h):
    lo, hi = 1.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        kind, _, _ = rk4_shoot(n, p, mid, h)
        if kind == 1:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-15 * hi:
            break
    return 0.5 * (lo + hi)


def energy(n, p, h):
    a = height(n, p, h)
    _, r, u = rk4_shoot(n, p, a, h)
    # keep the monotone positive part; beyond it U^p < 1e-20
    stop = np.argmax(np.diff(u) > 0) if np.any(np.diff(u) > 0) else len(u) - 1
    r, u = r[:stop], u[:stop]
    if len(r) % 2 == 0:
        r, u = r[:-1], u[:-1]
    f = r ** (n - 1) * u**p
    simpson = h / 3 * (f[0] + f[-1] + 4 * f[1:-1:2].sum() + 2 * f[2:-1:2].sum())
    omega = {1: 2.0, 2: 2 * math.pi, 3: 4 * math.pi}[n]
    return (0.5 - 1.0 / p) * omega * simpson


def richardson(values):
    a, b, c = values
    first = [b + (b - a) / 15, c + (c - b) / 15]
    return first[1], abs(first[1] - first[0])


if __name__ == "__main__":
    steps = [0.02, 0.01, 0.005]
    u0 = [height(3, 4.0, h) for h in steps]
    print("n=3 p=4 u0 per h:", u0)
    print("n=3 p=4 u0 extrapolated: %.12f (spread %.1e)" % richardson(u0))
    fine = [0.005, 0.0025, 0.00125]
    m2 = [energy(2, 4.0, h) for h in fine]
    print("n=2 p=4 m_inf per h:", m2)
    print("n=2 p=4 m_inf extrapolated: %.12f (spread %.1e)" % richardson(m2))
