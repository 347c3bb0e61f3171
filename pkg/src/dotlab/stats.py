"""Monte-Carlo experiments on the statistics of the empirical transport cost.

Populations are finitely supported, so the population value ``S(mu, nu)`` and
the optimal potentials ``f*, g*`` are computed exactly by a full-support solve
and used as ground truth. Empirical measures are drawn from counter-based
streams keyed by ``(seed, stream, n, replicate)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import partial
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import special, stats as sps

from .divergence import Divergence
from .errors import ExperimentAborted, NotConverged, ZeroVariance
from .measure import CostMatrix, DiscreteMeasure, draw_indices, empirical_from_counts, make_rng
from .parallel import ordered_map
from .solver import DualSolution, SolveConfig, extend_potential, solve_scaled

MAX_FAILURE_FRACTION = 0.01
ZERO_VARIANCE_TOL = 1e-14
CENTERINGS = ("replicate_mean", "population_value")
MODES = ("one_sample_mu", "one_sample_nu", "two_sample")

# stream tags keep the experiments' random streams disjoint
_RATE, _ES, _DEV, _CLT, _LIN = 1, 2, 3, 4, 5


class NotDualRegularWarning(UserWarning):
    """Divergence lacks dual regularity; asymptotic normality is not claimed."""


class UnbalancedSampleWarning(UserWarning):
    pass


# -- replicate machinery ---------------------------------------------------------------

def _solve_counts(pop_mu, pop_nu, cost: CostMatrix, div, cfg, counts_mu, counts_nu) -> Optional[DualSolution]:
    """Solve on the empirical measures given by atom counts.

    A non-converged solve is retried once with a 10x looser Newton
    tolerance; ``None`` marks a persistent failure.
    """
    mu_n = pop_mu if counts_mu is None else empirical_from_counts(pop_mu, counts_mu)
    nu_n = pop_nu if counts_nu is None else empirical_from_counts(pop_nu, counts_nu)
    rows = np.arange(pop_mu.size) if counts_mu is None else mu_n.parent_index
    cols = np.arange(pop_nu.size) if counts_nu is None else nu_n.parent_index
    sub = cost.submatrix(rows, cols)
    try:
        return solve_scaled(mu_n, nu_n, sub, div, cfg)
    except NotConverged:
        pass
    try:
        return solve_scaled(mu_n, nu_n, sub, div, replace(cfg, tol_newton=cfg.tol_newton * 10))
    except NotConverged:
        return None


def _value(sol):
    return None if sol is None else sol.dual_value


def _check_failures(failures: int, total: int, what: str) -> None:
    if failures > MAX_FAILURE_FRACTION * total:
        raise ExperimentAborted(
            f"{what}: {failures}/{total} replicates failed to converge", failures, total
        )


def _rate_task(ctx, key):
    pop_mu, pop_nu, cost, div, cfg, seed, stream = ctx
    n, r = key
    rng = make_rng(seed, stream, n, r)
    cm = rng.multinomial(n, pop_mu.weights)
    cn = rng.multinomial(n, pop_nu.weights)
    return _value(_solve_counts(pop_mu, pop_nu, cost, div, cfg, cm, cn))


# -- exact quantities -----------------------------------------------------------------------

def exact_value_and_potentials(pop_mu, pop_nu, cost: CostMatrix, div: Divergence, cfg: Optional[SolveConfig] = None):
    """Population value and normalized potentials from a full-support solve."""
    cfg = cfg or SolveConfig()
    sol = solve_scaled(pop_mu, pop_nu, cost, div, cfg)
    return sol.dual_value, sol.f, sol.g


def _psi_star(f, g, cost, div, epsilon):
    C = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=float)
    return epsilon * np.asarray(div.psi((f[:, None] + g[None, :] - C) / epsilon), dtype=float)


class AsymptoticVariances(NamedTuple):
    sigma1_sq: float
    sigma2_sq: float
    sigma3_sq: float
    sigma4_sq: float


def _var(w, v):
    m = w @ v
    return float(w @ (v - m) ** 2)


def _clip_rounding(v):
    # cancellation can leave -1e-17 where the exact value is 0
    return 0.0 if -1e-12 < v < 0.0 else v


def asymptotic_variances(f, g, pop_mu, pop_nu, cost, div: Divergence, epsilon: float = 1.0) -> AsymptoticVariances:
    """Limit variances of the one- and two-sample central limit theorems.

    With ``Psi = eps * psi((f + g - c) / eps)``, ``A = E_nu[Psi | X]`` and
    ``B = E_mu[Psi | Y]``::

        sigma1^2 = Var_mu(f - A)
        sigma2^2 = Var_nu(g - B)
        sigma3^2 = Var_mu(f) + Var_mu(A) - 2 E_nu[Cov_mu(f, Psi | Y)]
        sigma4^2 = Var_nu(g) + Var_nu(B) - 2 E_mu[Cov_nu(g, Psi | X)]
    """
    a, b = pop_mu.weights, pop_nu.weights
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    psi = _psi_star(f, g, cost, div, epsilon)
    A = psi @ b
    B = a @ psi
    cov_given_y = a @ (f[:, None] * psi) - (a @ f) * B
    cov_given_x = (psi * g[None, :]) @ b - (b @ g) * A
    s1 = _var(a, f - A)
    s2 = _var(b, g - B)
    s3 = _var(a, f) + _var(a, A) - 2.0 * float(b @ cov_given_y)
    s4 = _var(b, g) + _var(b, B) - 2.0 * float(a @ cov_given_x)
    return AsymptoticVariances(*(_clip_rounding(v) for v in (s1, s2, s3, s4)))


def cross_term_table(f, g, pop_mu, pop_nu, cost, div: Divergence, epsilon: float = 1.0) -> dict:
    """The mu-side covariance term conditioned on Y versus the naive X-conditioned one.

    ``y_conditioned = E_nu[Cov_mu(f, Psi | Y)]`` enters sigma3^2;
    ``x_conditioned = Cov_mu(f, E_nu[Psi | X])`` is what expanding sigma1^2 gives.
    """
    a, b = pop_mu.weights, pop_nu.weights
    f = np.asarray(f, dtype=float)
    psi = _psi_star(f, np.asarray(g, dtype=float), cost, div, epsilon)
    A = psi @ b
    y_cond = float(b @ (a @ (f[:, None] * psi) - (a @ f) * (a @ psi)))
    x_cond = float(a @ (f * A) - (a @ f) * (a @ A))
    return {"y_conditioned": y_cond, "x_conditioned": x_cond, "discrepancy": y_cond - x_cond}


# -- sample complexity ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RateReport:
    n_grid: tuple
    mean_abs_error: np.ndarray
    bias: np.ndarray
    variance: np.ndarray
    fitted_slope: float
    slope_stderr: float
    seeds: int
    population_value: float = float("nan")
    values: tuple = field(default=(), repr=False)
    stderr: np.ndarray = field(default=None, repr=False)
    failures: int = 0
    degenerate_zero_error: bool = False


def _loglog_fit(n_grid, mae):
    if np.any(np.asarray(mae) <= 0):
        return float("nan"), float("nan"), True
    fit = sps.linregress(np.log(n_grid), np.log(mae))
    return float(fit.slope), float(fit.stderr), False


def rate_experiment(
    pop_mu: DiscreteMeasure,
    pop_nu: DiscreteMeasure,
    cost: CostMatrix,
    div: Divergence,
    n_grid: Sequence[int],
    replicates: int,
    master_seed: int,
    cfg: Optional[SolveConfig] = None,
    workers=None,
) -> RateReport:
    """Estimate ``E|S(mu_n, nu_n) - S(mu, nu)|`` over ``n_grid`` and fit its log-log slope."""
    n_grid = tuple(int(n) for n in n_grid)
    if replicates < 50:
        raise ValueError("rate_experiment needs at least 50 replicates")
    if len(n_grid) < 4 or any(b <= a for a, b in zip(n_grid, n_grid[1:])) or n_grid[0] < 1:
        raise ValueError("n_grid needs >= 4 strictly increasing positive sizes")
    cfg = cfg or SolveConfig()
    S, _, _ = exact_value_and_potentials(pop_mu, pop_nu, cost, div, cfg)
    keys = [(n, r) for n in n_grid for r in range(replicates)]
    ctx = (pop_mu, pop_nu, cost, div, cfg, master_seed, _RATE)
    raw = ordered_map(partial(_rate_task, ctx), keys, workers)
    failures = sum(v is None for v in raw)
    _check_failures(failures, len(raw), "rate_experiment")

    values, mae, bias, var, se = [], [], [], [], []
    for k, n in enumerate(n_grid):
        chunk = raw[k * replicates:(k + 1) * replicates]
        v = np.array([x for x in chunk if x is not None])
        values.append(v)
        mae.append(np.mean(np.abs(v - S)))
        bias.append(np.mean(v) - S)
        var.append(np.var(v))
        se.append(np.std(v, ddof=1) / math.sqrt(v.size))
    mae = np.array(mae)
    slope, slope_se, degenerate = _loglog_fit(n_grid, mae)
    return RateReport(
        n_grid=n_grid, mean_abs_error=mae, bias=np.array(bias), variance=np.array(var),
        fitted_slope=slope, slope_stderr=slope_se, seeds=master_seed, population_value=S,
        values=tuple(values), stderr=np.array(se), failures=failures,
        degenerate_zero_error=degenerate,
    )


def bias_variance_table(report: RateReport) -> list:
    """Per-n rows checking ``MSE = bias^2 + variance`` against the directly computed MSE."""
    rows = []
    for n, v, b, var in zip(report.n_grid, report.values, report.bias, report.variance):
        mse = float(np.mean((v - report.population_value) ** 2))
        decomposed = float(b**2 + var)
        if abs(mse - decomposed) > 1e-10:
            raise ArithmeticError(f"MSE identity fails at n={n}: {mse!r} vs {decomposed!r}")
        rows.append({
            "n": n, "bias": float(b), "variance": float(var),
            "bias_sq_plus_variance": decomposed, "mse": mse,
        })
    return rows


# -- Efron-Stein ---------------------------------------------------------------------------------

class EfronSteinResult(NamedTuple):
    empirical_var: float
    es_bound_estimate: float
    x_term: float
    y_term: float


def _es_task(ctx, t):
    pop_mu, pop_nu, cost, div, cfg, seed, n = ctx
    rng = make_rng(seed, _ES, n, t)
    xs = draw_indices(pop_mu, n, rng)
    ys = draw_indices(pop_nu, n, rng)
    x_new = draw_indices(pop_mu, 1, rng)[0]
    y_new = draw_indices(pop_nu, 1, rng)[0]
    cm = np.bincount(xs, minlength=pop_mu.size)
    cn = np.bincount(ys, minlength=pop_nu.size)
    cm_swap = cm.copy()
    cm_swap[xs[0]] -= 1
    cm_swap[x_new] += 1
    cn_swap = cn.copy()
    cn_swap[ys[0]] -= 1
    cn_swap[y_new] += 1
    z = _value(_solve_counts(pop_mu, pop_nu, cost, div, cfg, cm, cn))
    zx = _value(_solve_counts(pop_mu, pop_nu, cost, div, cfg, cm_swap, cn))
    zy = _value(_solve_counts(pop_mu, pop_nu, cost, div, cfg, cm, cn_swap))
    if z is None or zx is None or zy is None:
        return None
    return z, zx, zy


def efron_stein_check(pop_mu, pop_nu, cost, div, n: int, trials: int, seed: int,
                      cfg: Optional[SolveConfig] = None, workers=None) -> EfronSteinResult:
    """Sample variance of ``S(mu_n, nu_n)`` next to its Efron-Stein bound.

    The bound ``n E(Z - Z')_+^2 + n E(Z - Z'')_+^2`` uses the symmetric form,
    where ``Z'`` replaces the first X draw and ``Z''`` the first Y draw by an
    independent copy.
    """
    if n < 5:
        raise ValueError("efron_stein_check needs n >= 5")
    cfg = cfg or SolveConfig()
    ctx = (pop_mu, pop_nu, cost, div, cfg, seed, n)
    raw = ordered_map(partial(_es_task, ctx), range(trials), workers)
    failures = sum(r is None for r in raw)
    _check_failures(failures, len(raw), "efron_stein_check")
    arr = np.array([r for r in raw if r is not None])
    z, zx, zy = arr[:, 0], arr[:, 1], arr[:, 2]
    x_term = n * float(np.mean(np.maximum(z - zx, 0.0) ** 2))
    y_term = n * float(np.mean(np.maximum(z - zy, 0.0) ** 2))
    return EfronSteinResult(float(np.var(z, ddof=1)), x_term + y_term, x_term, y_term)


# -- deviation profile --------------------------------------------------------------------------

@dataclass(frozen=True)
class DeviationProfile:
    t: tuple
    exceedance: tuple
    envelope: tuple
    kappa: float
    n: int


def deviation_profile(pop_mu, pop_nu, cost, div, n: int, replicates: int, seed: int,
                      cfg: Optional[SolveConfig] = None, workers=None) -> DeviationProfile:
    """Empirical ``P(|S_n - S| > kappa sqrt(t / n))`` against ``min(1, 4 e^{-t})``.

    ``kappa`` is calibrated so that the exceedance at ``t = 1`` equals
    ``e^{-1}``, a quarter of the envelope there.
    """
    if replicates < 1000:
        raise ValueError("deviation_profile needs at least 1000 replicates")
    cfg = cfg or SolveConfig()
    S, _, _ = exact_value_and_potentials(pop_mu, pop_nu, cost, div, cfg)
    ctx = (pop_mu, pop_nu, cost, div, cfg, seed, _DEV)
    raw = ordered_map(partial(_rate_task, ctx), [(n, r) for r in range(replicates)], workers)
    failures = sum(v is None for v in raw)
    _check_failures(failures, len(raw), "deviation_profile")
    dev = math.sqrt(n) * np.abs(np.array([v for v in raw if v is not None]) - S)
    kappa = float(np.quantile(dev, 1.0 - math.exp(-1.0)))
    ts = (1, 2, 3, 4)
    exceed = tuple(float(np.mean(dev > kappa * math.sqrt(t))) for t in ts)
    env = tuple(min(1.0, 4.0 * math.exp(-t)) for t in ts)
    return DeviationProfile(t=ts, exceedance=exceed, envelope=env, kappa=kappa, n=n)


# -- normality ----------------------------------------------------------------------------------

def ks_statistic(values) -> float:
    """Kolmogorov-Smirnov distance between the empirical CDF and ``N(0, 1)``.

    Evaluated exactly at the order statistics, including left limits.
    """
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise ValueError("ks_statistic of an empty sample")
    n = x.size
    cdf = special.ndtr(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


# -- central limit theorems ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CltReport:
    mode: str
    n: int
    m: Optional[int]
    lam: Optional[float]
    standardized: np.ndarray
    sigma_sq_exact: float
    sigma_sq_plugin: float
    ks_distance: float
    centering: str
    center: float = float("nan")
    population_value: float = float("nan")
    values: np.ndarray = field(default=None, repr=False)
    failures: int = 0


def _clt_task(ctx, r):
    pop_mu, pop_nu, cost, div, cfg, seed, mode, n, m = ctx
    rng = make_rng(seed, _CLT, MODES.index(mode), n or 0, m or 0, r)
    cm = rng.multinomial(n, pop_mu.weights) if mode != "one_sample_nu" else None
    cn = rng.multinomial(m, pop_nu.weights) if mode != "one_sample_mu" else None
    return cm, cn


def _clt_value(ctx, r):
    pop_mu, pop_nu, cost, div, cfg = ctx[:5]
    cm, cn = _clt_task(ctx, r)
    return _value(_solve_counts(pop_mu, pop_nu, cost, div, cfg, cm, cn))


def _extend_all(vals, present, pop_side, opposite, other, side, cost, div, cfg):
    """Potential on every population atom of one side.

    Undrawn atoms get the extension defined by the marginal equation against
    the replicate's ``opposite`` measure. Returns ``None`` when extension is
    unavailable (divergence not dual regular, or a cost given only as a table).
    """
    full = np.full(pop_side.size, np.nan)
    full[present] = vals
    missing = np.setdiff1d(np.arange(pop_side.size), present)
    if missing.size == 0:
        return full
    if not div.is_dual_regular or cost.kind is None:
        return None
    eps = cfg.epsilon
    unit_other = np.asarray(other, dtype=float) / eps
    unit = DualSolution(
        f=unit_other if side == "nu" else np.zeros(0),
        g=unit_other if side == "mu" else np.zeros(0),
        dual_value=float("nan"), residual_x=np.zeros(0), residual_y=np.zeros(0),
        iterations=0, converged=True,
    )
    kind = cost.kind

    def unit_cost(x, y):
        return kind(x, y) / eps

    for k in missing:
        full[k] = eps * extend_potential(unit, pop_side.atoms[k], side, opposite, unit_cost, div, cfg)
    return full


def _plugin_sigma(ctx, sigma_fn):
    """Limit variance evaluated at replicate 0's empirical potentials."""
    pop_mu, pop_nu, cost, div, cfg = ctx[:5]
    cm, cn = _clt_task(ctx, 0)
    mu_n = pop_mu if cm is None else empirical_from_counts(pop_mu, cm)
    nu_n = pop_nu if cn is None else empirical_from_counts(pop_nu, cn)
    rows = np.arange(pop_mu.size) if cm is None else mu_n.parent_index
    cols = np.arange(pop_nu.size) if cn is None else nu_n.parent_index
    sol = _solve_counts(pop_mu, pop_nu, cost, div, cfg, cm, cn)
    if sol is None:
        return float("nan")
    f_full = _extend_all(sol.f, rows, pop_mu, nu_n, sol.g, "mu", cost, div, cfg)
    g_full = _extend_all(sol.g, cols, pop_nu, mu_n, sol.f, "nu", cost, div, cfg)
    if f_full is None or g_full is None:
        return float("nan")
    return float(sigma_fn(f_full, g_full))


def clt_experiment(
    pop_mu: DiscreteMeasure,
    pop_nu: DiscreteMeasure,
    cost: CostMatrix,
    div: Divergence,
    mode: str,
    n: Optional[int] = None,
    m: Optional[int] = None,
    replicates: int = 1000,
    centering: str = "replicate_mean",
    seed: int = 0,
    cfg: Optional[SolveConfig] = None,
    workers=None,
) -> CltReport:
    """Standardize replicate transport costs by the exact limit variance.

    ``one_sample_mu`` uses ``S(mu_n, nu)``, ``one_sample_nu`` uses
    ``S(mu, nu_m)`` and ``two_sample`` uses ``S(mu_n, nu_m)`` with
    ``lambda = m / (n + m)``. The centre is the replicate mean or, under
    ``centering="population_value"``, the exact ``S(mu, nu)``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if centering not in CENTERINGS:
        raise ValueError(f"centering must be one of {CENTERINGS}")
    if replicates < 500:
        raise ValueError("clt_experiment needs at least 500 replicates")
    if mode == "one_sample_nu":
        m = m if m is not None else n
        n = None
    elif mode == "one_sample_mu":
        m = None
    else:
        m = m if m is not None else n
    if (mode != "one_sample_nu" and not n) or (mode != "one_sample_mu" and not m):
        raise ValueError("sample sizes missing for mode " + mode)
    if not div.is_dual_regular:
        warnings.warn(
            f"divergence {div.name!r} is not dual regular; CLT coverage is not claimed",
            NotDualRegularWarning, stacklevel=2,
        )
    cfg = cfg or SolveConfig()
    eps = cfg.epsilon

    S, f_star, g_star = exact_value_and_potentials(pop_mu, pop_nu, cost, div, cfg)
    lam = None
    if mode == "two_sample":
        lam = m / (n + m)
        if not 0.05 <= lam <= 0.95:
            warnings.warn(f"lambda = {lam:.3g} outside [0.05, 0.95]", UnbalancedSampleWarning, stacklevel=2)

    def sigma_sq(f, g):
        v = asymptotic_variances(f, g, pop_mu, pop_nu, cost, div, eps)
        if mode == "one_sample_mu":
            return v.sigma1_sq
        if mode == "one_sample_nu":
            return v.sigma2_sq
        return lam * v.sigma3_sq + (1.0 - lam) * v.sigma4_sq

    sig2 = sigma_sq(f_star, g_star)
    if sig2 <= ZERO_VARIANCE_TOL:
        raise ZeroVariance(f"limit variance {sig2:.3g} is degenerate for this instance")

    ctx = (pop_mu, pop_nu, cost, div, cfg, seed, mode, n, m)
    raw = ordered_map(partial(_clt_value, ctx), range(replicates), workers)
    failures = sum(v is None for v in raw)
    _check_failures(failures, len(raw), "clt_experiment")
    values = np.array([v for v in raw if v is not None])

    if mode == "one_sample_mu":
        scale = math.sqrt(n)
    elif mode == "one_sample_nu":
        scale = math.sqrt(m)
    else:
        scale = math.sqrt(n * m / (n + m))
    center = float(np.mean(values)) if centering == "replicate_mean" else S
    standardized = scale * (values - center) / math.sqrt(sig2)
    plugin = _plugin_sigma(ctx, sigma_sq)

    return CltReport(
        mode=mode, n=n, m=m, lam=lam, standardized=standardized,
        sigma_sq_exact=sig2, sigma_sq_plugin=plugin,
        ks_distance=ks_statistic(standardized), centering=centering,
        center=center, population_value=S, values=values, failures=failures,
    )


# -- linearization ------------------------------------------------------------------------------

def _lin_task(ctx, key):
    pop_mu, pop_nu, cost, div, cfg, seed, f_star, cond_psi = ctx
    n, r = key
    rng = make_rng(seed, _LIN, n, r)
    cm = rng.multinomial(n, pop_mu.weights)
    val = _value(_solve_counts(pop_mu, pop_nu, cost, div, cfg, cm, None))
    if val is None:
        return None
    w = cm / n
    return val - float(w @ f_star) + float(w @ cond_psi)


def linearization_diagnostic(pop_mu, pop_nu, cost, div, n_grid, replicates: int, seed: int,
                             cfg: Optional[SolveConfig] = None, workers=None) -> list:
    """``(n, n Var(R_n))`` rows for the one-sample remainder

    ``R_n = S(mu_n, nu) - int f* dmu_n + int Psi* d(mu_n x nu)``.
    """
    cfg = cfg or SolveConfig()
    _, f_star, g_star = exact_value_and_potentials(pop_mu, pop_nu, cost, div, cfg)
    cond_psi = _psi_star(f_star, g_star, cost, div, cfg.epsilon) @ pop_nu.weights
    ctx = (pop_mu, pop_nu, cost, div, cfg, seed, f_star, cond_psi)
    rows = []
    for n in n_grid:
        raw = ordered_map(partial(_lin_task, ctx), [(int(n), r) for r in range(replicates)], workers)
        failures = sum(v is None for v in raw)
        _check_failures(failures, len(raw), "linearization_diagnostic")
        rem = np.array([v for v in raw if v is not None])
        rows.append((int(n), float(n * np.var(rem, ddof=1)) if rem.size > 1 else 0.0))
    return rows


def remainder(mu_n: DiscreteMeasure, value: float, f_star, cond_psi) -> float:
    """``R`` for an empirical measure whose atoms index into the population."""
    idx = mu_n.parent_index if mu_n.parent_index is not None else np.arange(mu_n.size)
    return value - float(mu_n.weights @ np.asarray(f_star)[idx]) + float(mu_n.weights @ np.asarray(cond_psi)[idx])
