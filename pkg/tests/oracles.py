"""Independent reference computations used only by the tests.

Nothing here calls into the solver; each routine takes plain arrays.
"""

import math

import numpy as np
from scipy.special import logsumexp


def sinkhorn_log(a, b, C, tol=1e-14, max_iter=100_000):
    """Log-domain Sinkhorn fixed point for phi(x) = x log x at eps = 1.

    Potentials solve u_i = 1 - log sum_j b_j exp(v_j - C_ij) and the
    symmetric column equation; returns the dual value and (u, v).
    """
    a, b, C = np.asarray(a, float), np.asarray(b, float), np.asarray(C, float)
    u = np.zeros(a.size)
    v = np.zeros(b.size)
    logb, loga = np.log(b), np.log(a)
    for _ in range(max_iter):
        u = 1.0 - logsumexp(v[None, :] - C + logb[None, :], axis=1)
        v_new = 1.0 - logsumexp(u[:, None] - C + loga[:, None], axis=0)
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            break
        v = v_new
    P = np.exp(u[:, None] + v[None, :] - C - 1.0)
    value = a @ u + b @ v - a @ P @ b
    return float(value), u, v


def instance_a_entropic_closed_form():
    """Symmetric solution of the two-point instance: f = 0, g = a with
    0.5 (e^{a-1} + e^{a-2}) = 1 and value a - 1."""
    g = math.log(2.0) - math.log(math.exp(-1.0) + math.exp(-2.0))
    return g - 1.0, g


def instance_a_primal_grid(phi, points=200_001):
    """Minimize cost + divergence over the couplings [[s, 1/2 - s], [1/2 - s, s]].

    For Instance A every coupling with the right marginals has this form.
    """
    s = np.linspace(0.0, 0.5, points)
    off = 0.5 - s
    with np.errstate(divide="ignore", invalid="ignore"):
        total = 2 * off * 1.0 + 0.5 * phi(4 * s) + 0.5 * phi(4 * off)
    k = int(np.nanargmin(total))
    return float(total[k]), float(s[k])


def sigma_direct(f, g, a, b, C, psi):
    """Limit variances by explicit loops over the supports."""
    n, m = len(a), len(b)
    Psi = [[float(psi(f[i] + g[j] - C[i][j])) for j in range(m)] for i in range(n)]

    def mean(w, vals):
        return sum(wi * vi for wi, vi in zip(w, vals))

    def var(w, vals):
        mu_ = mean(w, vals)
        return sum(wi * (vi - mu_) ** 2 for wi, vi in zip(w, vals))

    A = [sum(b[j] * Psi[i][j] for j in range(m)) for i in range(n)]
    B = [sum(a[i] * Psi[i][j] for i in range(n)) for j in range(m)]
    s1 = var(a, [f[i] - A[i] for i in range(n)])
    s2 = var(b, [g[j] - B[j] for j in range(m)])
    ef = mean(a, f)
    eg = mean(b, g)
    cov_y = 0.0
    for j in range(m):
        col = [Psi[i][j] for i in range(n)]
        cov_y += b[j] * (sum(a[i] * f[i] * col[i] for i in range(n)) - ef * mean(a, col))
    cov_x = 0.0
    for i in range(n):
        row = Psi[i]
        cov_x += a[i] * (sum(b[j] * g[j] * row[j] for j in range(m)) - eg * mean(b, row))
    s3 = var(a, f) + var(a, A) - 2 * cov_y
    s4 = var(b, g) + var(b, B) - 2 * cov_x
    return s1, s2, s3, s4


def normal_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def ks_brute(values, grid_points=200_001):
    """sup |F_n - Phi| by evaluating both CDFs on a fine grid plus the data points."""
    x = np.sort(np.asarray(values, float))
    lo, hi = min(x[0], -8.0) - 1.0, max(x[-1], 8.0) + 1.0
    pts = np.concatenate([np.linspace(lo, hi, grid_points), x, np.nextafter(x, -np.inf)])
    ecdf = np.searchsorted(x, pts, side="right") / x.size
    phi = np.array([normal_cdf(p) for p in pts])
    return float(np.max(np.abs(ecdf - phi)))
