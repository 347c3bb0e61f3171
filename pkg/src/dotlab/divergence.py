"""Regularizers represented through their convex conjugate.

A divergence generator ``phi`` enters the dual problem only through its
conjugate ``psi(t) = sup_x [t x - phi(x)]`` and the derivative ``psi'``,
which maps dual arguments ``f(x) + g(y) - c(x, y)`` to plan densities.
All callables here are vectorized over numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable, Optional

import numpy as np

from .errors import CapExceeded, MonotonicityViolation, NegativeDensity, RangeExceeded

ScalarFn = Callable[[np.ndarray], np.ndarray]

# exp() argument cap; solver potentials stay far below it for bounded costs
EXP_CAP = 700.0

CHECK_GRID = np.linspace(-50.0, 50.0, 1001)
MONOTONE_SLACK = 1e-12


@dataclass(frozen=True)
class DualRegularity:
    """Constants witnessing dual regularity of a divergence.

    ``t0`` satisfies ``psi(t0) = 1``, ``psi`` is strictly convex on
    ``[t0 - delta, inf)`` and ``psi'(t) >= t`` for ``t >= growth_threshold``.
    """

    t0: float
    delta: float
    growth_threshold: float


@dataclass(frozen=True)
class Divergence:
    name: str
    psi: ScalarFn
    psi_prime: ScalarFn
    psi_second: Optional[ScalarFn] = None
    dual_regular: Optional[DualRegularity] = None
    phi: Optional[ScalarFn] = None

    @property
    def is_dual_regular(self) -> bool:
        return self.dual_regular is not None


# -- entropic -----------------------------------------------------------------

def _capped_exp(t):
    t = np.asarray(t, dtype=float)
    arg = t - 1.0
    if np.any(arg > EXP_CAP):
        raise CapExceeded(f"psi argument {float(np.max(t)):.6g} exceeds cap {EXP_CAP + 1}")
    return np.exp(arg)


def _entropic_phi(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)
    return np.where(x < 0, np.inf, out)


def make_entropic() -> Divergence:
    """``phi(x) = x log x`` with ``psi = psi' = psi'' = exp(t - 1)``."""
    return Divergence(
        name="entropic",
        psi=_capped_exp,
        psi_prime=_capped_exp,
        psi_second=_capped_exp,
        # exp(t - 1) >= t for every real t, so the growth condition holds from 0
        dual_regular=DualRegularity(t0=1.0, delta=1.0, growth_threshold=0.0),
        phi=_entropic_phi,
    )


# -- power family ---------------------------------------------------------------

def _power_psi(t, p):
    tp = np.maximum(np.asarray(t, dtype=float), 0.0)
    return 1.0 + (p - 1.0) * (tp / p) ** (p / (p - 1.0))


def _power_psi_prime(t, p):
    tp = np.maximum(np.asarray(t, dtype=float), 0.0)
    return (tp / p) ** (1.0 / (p - 1.0))


def _power_psi_second(t, p):
    t = np.asarray(t, dtype=float)
    pos = t > 0
    safe = np.where(pos, t, 1.0)
    val = (safe / p) ** ((2.0 - p) / (p - 1.0)) / (p * (p - 1.0))
    return np.where(pos, val, 0.0)


def _power_phi(x, p):
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        val = np.abs(x) ** p - 1.0
    return np.where(x < 0, np.inf, val)


def make_power(p: float) -> Divergence:
    """``phi(x) = x**p - 1`` on ``x >= 0``.

    For ``p = 2`` this is quadratic regularization with
    ``psi(t) = 1 + t_+**2 / 4`` and ``psi'(t) = t_+ / 2``. ``psi`` is flat on
    ``t <= 0``, so no member of the family is flagged dual regular.
    """
    p = float(p)
    if not p > 1.0:
        raise ValueError(f"power divergence needs p > 1, got {p}")
    label = f"{p:g}"
    return Divergence(
        name=f"power:p={label}",
        psi=partial(_power_psi, p=p),
        psi_prime=partial(_power_psi_prime, p=p),
        psi_second=partial(_power_psi_second, p=p),
        dual_regular=None,
        phi=partial(_power_phi, p=p),
    )


def make_quadratic() -> Divergence:
    return make_power(2.0)


# -- custom ----------------------------------------------------------------------

def check_psi_prime(psi_prime: ScalarFn, grid: np.ndarray = CHECK_GRID) -> None:
    """Raise if ``psi'`` is negative or decreasing on ``grid``."""
    vals = np.asarray(psi_prime(grid), dtype=float)
    drops = np.flatnonzero(np.diff(vals) < -MONOTONE_SLACK)
    if drops.size:
        k = drops[0]
        raise MonotonicityViolation(
            f"psi' decreases between t={grid[k]:g} and t={grid[k + 1]:g}"
        )
    bad = np.flatnonzero(vals < 0)
    if bad.size:
        raise NegativeDensity(f"psi'({grid[bad[0]]:g}) = {vals[bad[0]]:g} < 0")


def make_custom(
    psi: ScalarFn,
    psi_prime: ScalarFn,
    psi_second: Optional[ScalarFn] = None,
    phi: Optional[ScalarFn] = None,
    regularity: Optional[DualRegularity] = None,
    name: str = "custom",
) -> Divergence:
    """Wrap user-supplied conjugate callables after sanity checks.

    ``psi'`` is sampled on ``[-50, 50]`` (step 0.1) and must be nonnegative
    and nondecreasing there. When ``regularity`` is given, ``psi(t0) = 1``
    and the growth condition are checked on the same grid.
    """
    check_psi_prime(psi_prime)
    if regularity is not None:
        at_t0 = float(np.asarray(psi(np.array([regularity.t0])))[0])
        if abs(at_t0 - 1.0) > 1e-12:
            raise ValueError(f"psi(t0) = {at_t0!r}, expected 1")
        tail = CHECK_GRID[CHECK_GRID >= regularity.growth_threshold]
        if tail.size and np.any(np.asarray(psi_prime(tail)) < tail):
            raise ValueError("psi'(t) >= t fails above the growth threshold")
        if regularity.delta <= 0:
            raise ValueError("delta must be positive")
    return Divergence(
        name=name,
        psi=psi,
        psi_prime=psi_prime,
        psi_second=psi_second,
        dual_regular=regularity,
        phi=phi,
    )


# -- name lookup -------------------------------------------------------------------

_REGISTRY: dict[str, Divergence] = {}


def register_divergence(name: str, div: Divergence) -> None:
    """Make a custom divergence selectable by name in config files."""
    _REGISTRY[name] = div


def known_names() -> list[str]:
    return ["entropic", "power:p=<real>", *sorted(_REGISTRY)]


def divergence_from_name(name: str) -> Divergence:
    name = name.strip()
    if name == "entropic":
        return make_entropic()
    if name in ("quadratic",):
        return make_quadratic()
    if name.startswith("power:"):
        key, _, value = name[len("power:"):].partition("=")
        if key.strip() != "p" or not value:
            raise ValueError(f"malformed power divergence {name!r}; use power:p=<real>")
        return make_power(float(value))
    if name in _REGISTRY:
        return _REGISTRY[name]
    raise ValueError(f"unknown divergence {name!r}; known: {', '.join(known_names())}")


# -- numeric helpers ---------------------------------------------------------------

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def conjugate_oracle(phi: ScalarFn, t: float, search_bound: float, grid_size: int = 200_001) -> float:
    """Brute-force ``sup_{0 <= x <= search_bound} [t x - phi(x)]``.

    A dense grid locates the maximizer, then golden-section search refines it
    inside the neighbouring grid cells. Intended as a test oracle for psi.
    """
    if not search_bound > 0:
        raise ValueError("search_bound must be positive")
    xs = np.linspace(0.0, search_bound, grid_size)
    vals = t * xs - np.asarray(phi(xs), dtype=float)
    k = int(np.nanargmax(vals))
    best = float(vals[k])

    def obj(x):
        return float(t * x - np.asarray(phi(np.array([x])), dtype=float)[0])

    a = xs[max(k - 1, 0)]
    b = xs[min(k + 1, grid_size - 1)]
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = obj(c), obj(d)
    while b - a > 1e-13 * max(1.0, abs(a) + abs(b)):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = obj(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = obj(d)
    return max(best, fc, fd)


def generalized_inverse_psi_prime(div: Divergence, v: float, tol: float = 1e-12) -> float:
    """``inf{s : psi'(s) >= v}`` by bracket expansion and bisection.

    Returns ``-inf`` when ``psi'`` already reaches ``v`` arbitrarily far to the
    left (e.g. ``v = 0`` for the power family).
    """
    v = float(v)

    def dpsi(s):
        return float(np.asarray(div.psi_prime(np.array([s])))[0])

    hi, step = 1.0, 1.0
    while dpsi(hi) < v:
        hi += step
        step *= 2.0
        if hi > EXP_CAP:
            raise RangeExceeded(f"psi' stays below {v} up to s={hi:g}")
    lo, step = hi - 1.0, 1.0
    while dpsi(lo) >= v:
        lo -= step
        step *= 2.0
        if lo < -1e6:
            return -math.inf
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if dpsi(mid) >= v:
            hi = mid
        else:
            lo = mid
    return hi
