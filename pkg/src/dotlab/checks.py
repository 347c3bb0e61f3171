"""Randomized invariant suite behind ``dotlab check``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hoeffding
from .divergence import Divergence, generalized_inverse_psi_prime, make_entropic, make_power
from .measure import DiscreteMeasure, cost_from_values, make_rng
from .solver import (
    SolveConfig,
    TransportPlan,
    dual_objective,
    oscillation,
    primal_objective,
    recover_plan,
    recover_plan_scaled,
    solve,
    solve_scaled,
    weak_duality_gap,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float
    detail: str = ""


def random_simplex(rng, k: int) -> np.ndarray:
    w = rng.random(k) + 0.05
    return w / w.sum()


def random_instance(rng, n_max: int = 10, cost_scale: float = 1.0):
    n, m = rng.integers(1, n_max + 1, size=2)
    mu = DiscreteMeasure(rng.random((n, 1)), random_simplex(rng, n))
    nu = DiscreteMeasure(rng.random((m, 1)), random_simplex(rng, m))
    cost = cost_from_values(cost_scale * rng.random((n, m)))
    return mu, nu, cost


def random_feasible_plan(mu, nu, rng, tol: float = 1e-14, max_iter: int = 10_000) -> TransportPlan:
    """Iterative proportional fitting of a random positive matrix onto the couplings of ``mu, nu``."""
    a, b = mu.weights, nu.weights
    pi = rng.random((a.size, b.size)) ** 3 + 1e-3
    for _ in range(max_iter):
        pi *= (a / pi.sum(axis=1))[:, None]
        pi *= (b / pi.sum(axis=0))[None, :]
        if np.max(np.abs(pi.sum(axis=1) - a)) <= tol:
            break
    return TransportPlan(pi=pi, density=pi / np.outer(a, b))


def _divergences() -> list:
    return [make_entropic(), make_power(2.0)]


def check_potential_bounds(rng, count: int, divergences=None) -> list:
    """Oscillation and uniform potential bounds plus weak duality on random instances."""
    divergences = divergences or _divergences()
    osc_worst = unif_worst = duality_worst = cert_worst = -np.inf
    for k in range(count):
        div = divergences[k % len(divergences)]
        mu, nu, cost = random_instance(rng, cost_scale=rng.choice([0.5, 1.0, 3.0]))
        sol = solve(mu, nu, cost, div)
        bound = 2.0 * cost.sup_norm
        osc_worst = max(osc_worst, oscillation(sol.f) - bound, oscillation(sol.g) - bound)
        unit = abs(generalized_inverse_psi_prime(div, 1.0))
        unif_worst = max(unif_worst, np.max(np.abs(sol.g)) - (unit + 5.0 * cost.sup_norm))
        plan = recover_plan(sol, mu, nu, cost, div)
        cert_worst = max(cert_worst, sol.max_residual - 1e-9, weak_duality_gap(sol, plan, mu, nu, cost, div) - 1e-7)
        for _ in range(10):
            feasible = random_feasible_plan(mu, nu, rng)
            # arbitrary bounded potentials, not just the optimum
            f = sol.f + rng.normal(scale=0.5, size=mu.size)
            g = sol.g + rng.normal(scale=0.5, size=nu.size)
            gap = dual_objective(f, g, mu, nu, cost, div) - primal_objective(feasible, mu, nu, cost, div)
            duality_worst = max(duality_worst, gap)
    return [
        CheckResult("oscillation_bound", osc_worst <= 1e-8, float(osc_worst)),
        CheckResult("uniform_bound", unif_worst <= 1e-6, float(unif_worst)),
        CheckResult("optimality_certificates", cert_worst <= 0.0, float(cert_worst)),
        CheckResult("weak_duality", duality_worst <= 1e-10, float(duality_worst)),
    ]


def check_scaling(rng, count: int, epsilons=(0.1, 0.5, 2.0), div: Divergence = None) -> list:
    """``S_eps = eps * S~_1`` and coinciding plans, through two code paths."""
    div = div or make_entropic()
    value_worst = plan_worst = 0.0
    for k in range(count):
        eps = epsilons[k % len(epsilons)]
        mu, nu, cost = random_instance(rng)
        scaled = solve_scaled(mu, nu, cost, div, SolveConfig(epsilon=eps))
        unit = solve(mu, nu, cost.values / eps, div)
        value_worst = max(value_worst, abs(scaled.dual_value - eps * unit.dual_value))
        p_scaled = recover_plan_scaled(scaled, mu, nu, cost, div, eps).pi
        p_unit = recover_plan(unit, mu, nu, cost.values / eps, div).pi
        plan_worst = max(plan_worst, float(np.max(np.abs(p_scaled - p_unit))))
    return [
        CheckResult("scaling_value", value_worst <= 1e-10, value_worst),
        CheckResult("scaling_plan", plan_worst <= 1e-8, plan_worst),
    ]


def check_hoeffding(rng, draws: int) -> list:
    recon = center = ortho = 0.0
    violations = 0
    for _ in range(draws):
        n, m = rng.integers(1, 9, size=2)
        a, b = random_simplex(rng, n), random_simplex(rng, m)
        k = rng.normal(size=(n, m))
        parts = hoeffding.decompose(k, a, b)
        recon = max(recon, float(np.max(np.abs(parts.reconstruct() - k))))
        center = max(
            center,
            abs(float(a @ parts.k1)), abs(float(b @ parts.k2)),
            float(np.max(np.abs(a @ parts.k3))), float(np.max(np.abs(parts.k3 @ b))),
        )
        mats = parts.as_matrices()
        for i in range(4):
            for j in range(i + 1, 4):
                ortho = max(ortho, abs(hoeffding.inner(mats[i], mats[j], a, b)))
        lhs, rhs = hoeffding.projection_inequality_check(rng.normal(size=n), rng.normal(size=m), k, a, b)
        violations += lhs > rhs + 1e-10
    return [
        CheckResult("hoeffding_reconstruction", recon <= 1e-10, recon),
        CheckResult("hoeffding_centering", center <= 1e-10, center),
        CheckResult("hoeffding_orthogonality", ortho <= 1e-10, ortho),
        CheckResult("projection_inequality", violations == 0, float(violations)),
    ]


def run_check_suite(seed: int = 0, instances: int = 20) -> list:
    rng = make_rng(seed, 99)
    results = []
    results += check_potential_bounds(rng, instances)
    results += check_scaling(rng, instances)
    results += check_hoeffding(rng, max(instances, 100))
    return results
