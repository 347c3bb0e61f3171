"""Dual coordinate ascent for divergence-regularized optimal transport.

The dual objective (with ``eps = 1``) is

    D(f, g) = sum_i mu_i f_i + sum_j nu_j g_j - sum_ij mu_i nu_j psi(f_i + g_j - c_ij)

and its maximizers are characterized by the marginal equations

    sum_j nu_j psi'(f_i + g_j - c_ij) = 1  for every i,
    sum_i mu_i psi'(f_i + g_j - c_ij) = 1  for every j.

Each row equation involves only ``f_i`` once ``g`` is fixed, so a sweep solves
all of them exactly (vectorized safeguarded Newton), then all column
equations. For the entropic divergence this is the Sinkhorn iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .divergence import Divergence, generalized_inverse_psi_prime
from .errors import (
    InfeasiblePlan,
    NotConverged,
    NotDualRegular,
    PhiUnavailable,
    RootBracketFailure,
)
from .measure import CostMatrix, DiscreteMeasure

logger = logging.getLogger(__name__)

MAX_BRACKET_EXPANSIONS = 60


@dataclass(frozen=True)
class SolveConfig:
    epsilon: float = 1.0
    tol_marginal: float = 1e-9
    tol_newton: float = 1e-12
    max_sweeps: int = 10_000
    newton_max_iter: int = 50

    def __post_init__(self):
        for name in ("epsilon", "tol_marginal", "tol_newton", "max_sweeps", "newton_max_iter"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class DualSolution:
    f: np.ndarray
    g: np.ndarray
    dual_value: float
    residual_x: np.ndarray
    residual_y: np.ndarray
    iterations: int
    converged: bool
    history: tuple = field(default=(), repr=False)

    @property
    def max_residual(self) -> float:
        return float(max(np.max(np.abs(self.residual_x)), np.max(np.abs(self.residual_y))))


@dataclass(frozen=True, eq=False)
class TransportPlan:
    pi: np.ndarray
    density: np.ndarray

    @property
    def total_mass(self) -> float:
        return float(self.pi.sum())


def _values(cost) -> np.ndarray:
    return cost.values if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=float)


# -- objectives ------------------------------------------------------------------

def dual_objective(f, g, mu: DiscreteMeasure, nu: DiscreteMeasure, cost, div: Divergence) -> float:
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    t = f[:, None] + g[None, :] - _values(cost)
    penalty = mu.weights @ div.psi(t) @ nu.weights
    return float(mu.weights @ f + nu.weights @ g - penalty)


def primal_objective(plan: TransportPlan, mu: DiscreteMeasure, nu: DiscreteMeasure, cost, div: Divergence) -> float:
    """Transport cost plus the f-divergence of the plan from ``mu x nu``.

    Zero-mass cells contribute ``phi(0)``: 0 for entropic, -1 for the power family.
    """
    if div.phi is None:
        raise PhiUnavailable(f"divergence {div.name!r} has no phi")
    prod = np.outer(mu.weights, nu.weights)
    transport = float(np.sum(plan.pi * _values(cost)))
    return transport + float(np.sum(prod * div.phi(plan.density)))


def marginal_residuals(f, g, mu: DiscreteMeasure, nu: DiscreteMeasure, cost, div: Divergence):
    t = np.asarray(f, dtype=float)[:, None] + np.asarray(g, dtype=float)[None, :] - _values(cost)
    dens = div.psi_prime(t)
    return dens @ nu.weights - 1.0, mu.weights @ dens - 1.0


def recover_plan(sol: DualSolution, mu: DiscreteMeasure, nu: DiscreteMeasure, cost, div: Divergence) -> TransportPlan:
    t = sol.f[:, None] + sol.g[None, :] - _values(cost)
    density = np.asarray(div.psi_prime(t), dtype=float)
    pi = np.outer(mu.weights, nu.weights) * density
    return TransportPlan(pi=pi, density=density)


def oscillation(v) -> float:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("oscillation of an empty vector")
    return float(v.max() - v.min())


def weak_duality_gap(sol: DualSolution, plan: TransportPlan, mu, nu, cost, div, tol: float = 1e-9) -> float:
    """Primal value of ``plan`` minus the dual value of ``(sol.f, sol.g)``."""
    rows = plan.pi.sum(axis=1)
    cols = plan.pi.sum(axis=0)
    err = max(np.max(np.abs(rows - mu.weights)), np.max(np.abs(cols - nu.weights)))
    if err > tol:
        raise InfeasiblePlan(f"plan marginals off by {err:.3g} > {tol:.3g}")
    return primal_objective(plan, mu, nu, cost, div) - dual_objective(sol.f, sol.g, mu, nu, cost, div)


# -- 1-D root solves ---------------------------------------------------------------

def _solve_marginal_rows(x0, shifts, weights, div: Divergence, cfg: SolveConfig, span: float):
    """Solve ``sum_j weights_j psi'(x_i + shifts_ij) = 1`` for every row ``i``.

    Newton steps are kept inside a maintained sign-change bracket and replaced
    by bisection when they leave it or stall. On flat stretches of ``psi'``
    the residual is -1, so the root found is the smallest one.
    """
    dpsi, d2psi = div.psi_prime, div.psi_second

    def resid(x):
        return div.psi_prime(x[:, None] + shifts) @ weights - 1.0

    x = np.array(x0, dtype=float)
    lo = x - span
    hi = x + span
    step = span
    for _ in range(MAX_BRACKET_EXPANSIONS):
        bad = resid(lo) > 0
        if not bad.any():
            break
        lo[bad] -= step
        step *= 2.0
    else:
        raise RootBracketFailure("could not bracket marginal equation from below")
    step = span
    for _ in range(MAX_BRACKET_EXPANSIONS):
        bad = resid(hi) < 0
        if not bad.any():
            break
        hi[bad] += step
        step *= 2.0
    else:
        raise RootBracketFailure("psi' never reaches the marginal mass; check psi'(t) >= t growth")

    x = np.clip(x, lo, hi)
    dx_old = hi - lo
    dx = dx_old.copy()
    active = np.ones(x.shape, dtype=bool)
    for _ in range(cfg.newton_max_iter):
        t = x[active, None] + shifts[active]
        F = dpsi(t) @ weights - 1.0
        dF = d2psi(t) @ weights if d2psi is not None else np.zeros_like(F)
        xa, la, ha = x[active], lo[active], hi[active]
        done = np.abs(F) <= cfg.tol_newton
        neg = F < 0
        la = np.where(neg, xa, la)
        ha = np.where(neg, ha, xa)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = xa - F / dF
        dxo = dx_old[active]
        bisect = (
            ~(dF > 0)
            | ~(newton > la)
            | ~(newton < ha)
            | (np.abs(2.0 * F) > np.abs(dxo * dF))
        )
        xn = np.where(bisect, 0.5 * (la + ha), newton)
        dx_old[active] = dx[active]
        dx[active] = np.abs(xn - xa)
        collapsed = (ha - la) <= 4e-16 * np.maximum(1.0, np.abs(xa))
        x[active] = np.where(done, xa, xn)
        lo[active], hi[active] = la, ha
        idx = np.flatnonzero(active)
        active[idx[done | collapsed]] = False
        if not active.any():
            break
    return x


# -- solver --------------------------------------------------------------------------

def _initial_span(div: Divergence, sup_norm: float, t_unit: float) -> float:
    return 2.0 * sup_norm + abs(t_unit) + 1.0


def _unit_level(div: Divergence) -> float:
    return generalized_inverse_psi_prime(div, 1.0)


def solve(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cost,
    div: Divergence,
    cfg: Optional[SolveConfig] = None,
    record_history: bool = False,
    init: Optional[tuple] = None,
) -> DualSolution:
    """Maximize the dual objective at ``eps = 1`` by block coordinate ascent.

    Returns potentials normalized so that ``sum_i mu_i f_i = 0``. Raises
    :class:`NotConverged` (carrying the last iterate) when the marginal
    residuals are still above ``cfg.tol_marginal`` after ``cfg.max_sweeps``.
    """
    cfg = cfg or SolveConfig()
    C = _values(cost)
    if C.shape != (mu.size, nu.size):
        raise ValueError(f"cost shape {C.shape} does not match measures ({mu.size}, {nu.size})")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost must be finite")
    a, b = mu.weights, nu.weights
    sup = float(np.max(np.abs(C)))
    t_unit = _unit_level(div)
    span = _initial_span(div, sup, t_unit)

    if init is not None:
        f = np.array(init[0], dtype=float)
        g = np.array(init[1], dtype=float)
    else:
        f = np.zeros(mu.size)
        g = t_unit + C.min(axis=0)

    history = []
    converged = False
    sweeps = 0
    rx = ry = None
    for sweeps in range(1, cfg.max_sweeps + 1):
        f = _solve_marginal_rows(f, g[None, :] - C, b, div, cfg, span)
        g = _solve_marginal_rows(g, (f[:, None] - C).T, a, div, cfg, span)
        rx, ry = marginal_residuals(f, g, mu, nu, C, div)
        if record_history:
            history.append(dual_objective(f, g, mu, nu, C, div))
        if max(np.max(np.abs(rx)), np.max(np.abs(ry))) <= cfg.tol_marginal:
            converged = True
            break

    shift = float(a @ f)
    f = f - shift
    g = g + shift
    value = dual_objective(f, g, mu, nu, C, div)
    rx, ry = marginal_residuals(f, g, mu, nu, C, div)
    sol = DualSolution(
        f=f, g=g, dual_value=value, residual_x=rx, residual_y=ry,
        iterations=sweeps, converged=converged, history=tuple(history),
    )
    if not converged:
        raise NotConverged(
            f"max marginal residual {sol.max_residual:.3g} after {sweeps} sweeps", solution=sol
        )
    logger.debug("solved %dx%d in %d sweeps, value %.12g", mu.size, nu.size, sweeps, value)
    return sol


def solve_scaled(mu, nu, cost, div: Divergence, cfg: Optional[SolveConfig] = None, **kwargs) -> DualSolution:
    """Solve at regularization ``cfg.epsilon`` through the unit problem with cost ``c / eps``.

    Potentials and value are rescaled by ``eps``; the plan recovered with
    :func:`recover_plan_scaled` equals the unit problem's plan.
    """
    cfg = cfg or SolveConfig()
    eps = cfg.epsilon
    C = _values(cost)
    if eps == 1.0:
        return solve(mu, nu, C, div, cfg, **kwargs)
    unit = solve(mu, nu, C / eps, div, replace(cfg, epsilon=1.0), **kwargs)
    return DualSolution(
        f=eps * unit.f, g=eps * unit.g, dual_value=eps * unit.dual_value,
        residual_x=unit.residual_x, residual_y=unit.residual_y,
        iterations=unit.iterations, converged=unit.converged,
        history=tuple(eps * h for h in unit.history),
    )


def recover_plan_scaled(sol: DualSolution, mu, nu, cost, div: Divergence, epsilon: float) -> TransportPlan:
    t = (sol.f[:, None] + sol.g[None, :] - _values(cost)) / epsilon
    density = np.asarray(div.psi_prime(t), dtype=float)
    return TransportPlan(pi=np.outer(mu.weights, nu.weights) * density, density=density)


def extend_potential(
    sol: DualSolution,
    x,
    side: str,
    opposite: DiscreteMeasure,
    cost_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    div: Divergence,
    cfg: Optional[SolveConfig] = None,
) -> float:
    """Evaluate an optimal potential at a point outside the support.

    For ``side="mu"`` this returns the root ``s`` of
    ``sum_j nu_j psi'(s + g_j - c(x, y_j)) = 1``; ``side="nu"`` is symmetric
    with ``f`` and ``c(x_i, y)``.
    """
    if not div.is_dual_regular:
        raise NotDualRegular(f"divergence {div.name!r} is not dual regular; extension is ill-posed")
    cfg = cfg or SolveConfig()
    pt = np.atleast_2d(np.asarray(x, dtype=float))
    if side == "mu":
        row = cost_fn(pt, opposite.atoms)[0]
        other = sol.g
    elif side == "nu":
        row = cost_fn(opposite.atoms, pt)[:, 0]
        other = sol.f
    else:
        raise ValueError("side must be 'mu' or 'nu'")
    shifts = (other - row)[None, :]
    t_unit = _unit_level(div)
    start = np.array([t_unit - float(np.max(shifts))])
    span = _initial_span(div, float(np.max(np.abs(row))), t_unit) + oscillation(other)
    root = _solve_marginal_rows(start, shifts, opposite.weights, div, cfg, span)
    return float(root[0])
