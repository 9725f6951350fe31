"""Small numerical helpers shared across modules."""
from __future__ import annotations

import numpy as np


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log|y|`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def extrapolate_to_zero(r, values, delta: float) -> float:
    """Value at ``r = 0`` of ``a + b r^delta + c r^{2 delta}`` through three samples.

    Richardson-type extrapolation under an ``O(r^delta)`` error model; with
    fewer than three samples the model is truncated accordingly.
    """
    r = np.asarray(r, dtype=float)
    v = np.asarray(values, dtype=float)
    m = min(len(r), 3)
    idx = np.argsort(r)[:m]
    V = np.stack([r[idx] ** (j * delta) for j in range(m)], axis=1)
    return float(np.linalg.solve(V, v[idx])[0])


def gauss_legendre(n: int, a: float, b: float):
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w


def geometric_panels(r: float, n_panels: int = 40, ratio: float = 0.5, order: int = 8):
    """Gauss nodes on the panels ``[r q^{j+1}, r q^j]``, ``j = 0..n_panels-1``.

    Returns ``(nodes, weights, panel_index)``; the panel nearest the origin
    has index ``n_panels - 1``.  The interval ``[0, r q^n_panels]`` is not
    covered: callers estimate that tail themselves.
    """
    xs, ws, ids = [], [], []
    for j in range(n_panels):
        a, b = r * ratio ** (j + 1), r * ratio**j
        x, w = gauss_legendre(order, a, b)
        xs.append(x)
        ws.append(w)
        ids.append(np.full(order, j))
    return np.concatenate(xs), np.concatenate(ws), np.concatenate(ids)


def panel_sum_with_tail(panel_integrals) -> float:
    """Sum of panel integrals plus a geometric tail estimate.

    The ratio of the last two panels estimates the geometric decay of the
    panel contributions toward the origin.
    """
    p = np.asarray(panel_integrals, dtype=float)
    total = float(p.sum())
    if len(p) >= 2 and p[-2] != 0.0:
        q = p[-1] / p[-2]
        if 0.0 <= q < 1.0:
            total += p[-1] * q / (1.0 - q)
    return total


def polar_rule(r: float, n_panels: int = 30, order: int = 8, n_theta: int = 48, theta_panels: int = 4):
    """Tensor quadrature for ``int_{B_r} F dy`` in polar coordinates.

    Radial nodes on geometric panels toward the origin (the tail below the
    last panel is dropped, it is ``O(2^-n_panels)`` relative), angular Gauss
    panels on ``[0, 2 pi]`` so that both slit sides are sampled from the
    interior.  Returns ``(rho, theta, weight)`` flattened, weight includes
    the Jacobian ``rho``.
    """
    rho, wr, _ = geometric_panels(r, n_panels=n_panels, order=order)
    per = n_theta // theta_panels
    ts, wts = [], []
    for j in range(theta_panels):
        t, w = gauss_legendre(per, 2 * np.pi * j / theta_panels, 2 * np.pi * (j + 1) / theta_panels)
        ts.append(t)
        wts.append(w)
    th = np.concatenate(ts)
    wt = np.concatenate(wts)
    R, T = np.meshgrid(rho, th, indexing="ij")
    W = np.outer(wr * rho, wt)
    return R.ravel(), T.ravel(), W.ravel()


def angular_rule(n_theta: int = 64, theta_panels: int = 4):
    per = n_theta // theta_panels
    ts, wts = [], []
    for j in range(theta_panels):
        t, w = gauss_legendre(per, 2 * np.pi * j / theta_panels, 2 * np.pi * (j + 1) / theta_panels)
        ts.append(t)
        wts.append(w)
    return np.concatenate(ts), np.concatenate(wts)


def trapezoid_angles(n: int = 256):
    """Closed trapezoid nodes on ``[0, 2 pi]``: both slit sides are included."""
    t = np.linspace(0.0, 2 * np.pi, n + 1)
    w = np.full(n + 1, 2 * np.pi / n)
    w[0] *= 0.5
    w[-1] *= 0.5
    return t, w
