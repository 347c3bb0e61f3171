"""Hoeffding decomposition of two-way kernels on a product of discrete measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch


@dataclass(frozen=True, eq=False)
class HoeffdingParts:
    """``k_ij = k0 + k1_i + k2_j + k3_ij`` with centered, mutually orthogonal parts."""

    k0: float
    k1: np.ndarray
    k2: np.ndarray
    k3: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.k0 + self.k1[:, None] + self.k2[None, :] + self.k3

    def as_matrices(self) -> list:
        n, m = self.k3.shape
        return [
            np.full((n, m), self.k0),
            np.broadcast_to(self.k1[:, None], (n, m)),
            np.broadcast_to(self.k2[None, :], (n, m)),
            self.k3,
        ]


def _check(k, a, b):
    k = np.asarray(k, dtype=float)
    if k.shape != (a.shape[0], b.shape[0]):
        raise DimensionMismatch(f"kernel {k.shape} vs weights ({a.shape[0]}, {b.shape[0]})")
    return k


def _weights(m):
    return np.asarray(getattr(m, "weights", m), dtype=float)


def inner(h, k, mu, nu) -> float:
    """``<h, k>`` in ``L^2(mu x nu)``."""
    a, b = _weights(mu), _weights(nu)
    return float(a @ (np.asarray(h) * np.asarray(k)) @ b)


def decompose(k, mu, nu) -> HoeffdingParts:
    a, b = _weights(mu), _weights(nu)
    k = _check(k, a, b)
    k0 = float(a @ k @ b)
    k1 = k @ b - k0
    k2 = a @ k - k0
    k3 = k - k0 - k1[:, None] - k2[None, :]
    return HoeffdingParts(k0=k0, k1=k1, k2=k2, k3=k3)


def projection_inequality_check(h_f, h_g, k, mu, nu):
    """Both sides of ``<h, k>^2 <= |h|^2 (E_mu[(E_nu k|X)^2] + E_nu[(E_mu k|Y)^2])``.

    ``h`` is the additive kernel ``h_f(x) + h_g(y)``; norms are in
    ``L^2(mu x nu)``. Returns ``(lhs, rhs)``.
    """
    a, b = _weights(mu), _weights(nu)
    k = _check(k, a, b)
    h_f = np.asarray(h_f, dtype=float)
    h_g = np.asarray(h_g, dtype=float)
    if h_f.shape != a.shape or h_g.shape != b.shape:
        raise DimensionMismatch("h_f/h_g lengths must match the measures")
    h = h_f[:, None] + h_g[None, :]
    lhs = inner(h, k, a, b) ** 2
    h_norm2 = inner(h, h, a, b)
    row_means = k @ b
    col_means = a @ k
    rhs = h_norm2 * (float(a @ row_means**2) + float(b @ col_means**2))
    return lhs, rhs
