"""Estimators for discrete instruments with any number of levels.

Notation (functions of the nuisance set at a point x and level z):

    delta_r(z, x) = pi(z, x) - pi(x)
    delta_y(z, x) = mu(z, x) - mu(x)
    delta(z, x)   = delta_y / delta_r
    g(z, x)       = (1 - pi(z, x)) / (pi0 * delta_r(z, x))
    g(x)          = sum_z rho(z, x) g(z, x)

The target is beta = E[delta(Z, X) | R = 0], the mean of h(Y; psi) among
nonrespondents.  The influence-function estimator averages

    phi~ = (g(Z,x) - g(x)) * [R h - mu(Z,x) - delta(Z,x) (R - pi(Z,x))]
           + (1 - R) / pi0 * delta(Z,x)

over all rows; the centered influence value subtracts (1-R)/pi0 * beta.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .data import FunctionalSpec, ObservationTable, evaluate_h
from .exceptions import (
    DataContractError,
    EstimationError,
    NoIncompleteCasesError,
    WeakIdentificationError,
)
from .learners import LearnerConfig
from .nuisance import (
    Diagnostics,
    NuisanceSet,
    TrimPolicy,
    evaluate_nuisances,
    fit_mu_component,
    fit_nuisance_set,
    floor_mask,
    winsorize_values,
)


@dataclass
class PhiParts:
    """Uncentered influence values and row bookkeeping for one block."""

    phi_tilde: np.ndarray       # (n,) uncentered influence contributions
    keep: np.ndarray            # (n,) bool rows retained under the trim policy
    delta_own: np.ndarray       # (n,) delta at each row's own level
    floor_hits: int


def _phi_parts_general(
    table: ObservationTable,
    ns: NuisanceSet,
    spec: FunctionalSpec,
    trim: TrimPolicy,
    diag: Diagnostics | None,
) -> PhiParts:
    ev = evaluate_nuisances(ns, table.X)
    eps = ns.eps_den
    hits = floor_mask(ev.delta_r, eps)                  # (L, n)
    n_hits = int(hits.sum())
    if diag is not None:
        diag.floor_hits += n_hits
    sign = np.where(ev.delta_r < 0, -1.0, 1.0)
    den = np.where(hits, sign * eps, ev.delta_r)

    if ns.delta_fn is not None:
        delta_all = np.stack(
            [np.asarray(ns.delta_fn(z, table.X), dtype=float) for z in range(ns.L)]
        )
    else:
        delta_all = ev.delta_y / den
    g_all = (1.0 - ev.pi) / (ns.pi0 * den)
    g_x = np.einsum("lm,lm->m", ev.rho, g_all)

    rows = np.arange(table.n)
    z = table.Z
    g_z = g_all[z, rows]
    mu_z = ev.mu[z, rows]
    pi_z = ev.pi[z, rows]
    delta_z = delta_all[z, rows]
    rh = table.rh(spec)
    R = table.R.astype(float)

    first = (g_z - g_x) * (rh - mu_z - delta_z * (R - pi_z))
    second = (1.0 - R) / ns.pi0 * delta_z
    phi_tilde = first + second

    if trim == "drop":
        keep = ~hits.any(axis=0)
    elif trim == "floor":
        keep = np.ones(table.n, dtype=bool)
    else:
        raise ValueError(f"unknown trim policy {trim!r}")
    return PhiParts(phi_tilde=phi_tilde, keep=keep, delta_own=delta_z, floor_hits=n_hits)


def phi_tilde_general(
    table: ObservationTable,
    ns: NuisanceSet,
    spec: FunctionalSpec,
    *,
    trim: TrimPolicy = "floor",
    winsorize: float | None = None,
    diag: Diagnostics | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Uncentered influence values and the retained-row mask.

    With winsorize = k, values outside [Q1 - k IQR, Q3 + k IQR] of the
    block's own influence-value distribution are pulled to the boundary.
    """
    parts = _phi_parts_general(table, ns, spec, trim, diag)
    phi = parts.phi_tilde
    if winsorize is not None:
        phi = winsorize_values(phi, winsorize, diag)
    return phi, parts.keep


def if_values_general(
    table: ObservationTable,
    ns: NuisanceSet,
    beta: float,
    spec: FunctionalSpec,
    *,
    trim: TrimPolicy = "floor",
    diag: Diagnostics | None = None,
) -> np.ndarray:
    """Centered influence values phi(beta) for every row."""
    parts = _phi_parts_general(table, ns, spec, trim, diag)
    R = table.R.astype(float)
    return parts.phi_tilde - (1.0 - R) / ns.pi0 * beta


def if_value_general(
    ns: NuisanceSet,
    x: np.ndarray,
    z: int,
    r: int,
    y: float | None,
    beta: float,
    spec: FunctionalSpec,
) -> float:
    """Centered influence value for a single record."""
    table = ObservationTable.from_arrays(
        np.atleast_2d(np.asarray(x, dtype=float)),
        np.array([z]),
        np.array([r]),
        [y],
        L=ns.L,
    )
    return float(if_values_general(table, ns, beta, spec)[0])


def g_value(ns: NuisanceSet, z: int, x: np.ndarray, *, on_floor: str = "raise") -> float:
    """g(z, x) at a single point."""
    return float(ns.g(z, np.atleast_2d(np.asarray(x, dtype=float)), on_floor=on_floor)[0])


def _require_incomplete(table: ObservationTable, ns: NuisanceSet) -> None:
    if table.n0 == 0:
        raise NoIncompleteCasesError("no rows with R = 0; the target is undefined")
    if not ns.pi0 > 0:
        raise NoIncompleteCasesError("pi0 = 0 in the nuisance set")


def beta_id_general(
    table: ObservationTable,
    ns: NuisanceSet,
    *,
    trim: TrimPolicy = "floor",
    diag: Diagnostics | None = None,
) -> float:
    """Plug-in estimator: mean of delta(Z_i, X_i) over rows with R_i = 0."""
    _require_incomplete(table, ns)
    ev = evaluate_nuisances(ns, table.X)
    rows = np.arange(table.n)
    den_own = ev.delta_r[table.Z, rows]
    hits = floor_mask(den_own, ns.eps_den)
    if diag is not None:
        diag.floor_hits += int(hits.sum())
    if ns.delta_fn is not None:
        delta_all = np.stack(
            [np.asarray(ns.delta_fn(z, table.X), dtype=float) for z in range(ns.L)]
        )
        delta_own = delta_all[table.Z, rows]
    else:
        sign = np.where(den_own < 0, -1.0, 1.0)
        den = np.where(hits, sign * ns.eps_den, den_own)
        delta_own = ev.delta_y[table.Z, rows] / den
    mask = table.R == 0
    if trim == "drop":
        mask = mask & ~hits
    if not mask.any():
        raise NoIncompleteCasesError("trim policy removed every incomplete row")
    return float(delta_own[mask].mean())


def beta_if_general(
    table: ObservationTable,
    ns: NuisanceSet,
    spec: FunctionalSpec,
    *,
    trim: TrimPolicy = "floor",
    winsorize: float | None = None,
    diag: Diagnostics | None = None,
) -> float:
    """Influence-function estimator: mean of phi~ over retained rows."""
    _require_incomplete(table, ns)
    phi, keep = phi_tilde_general(table, ns, spec, trim=trim, winsorize=winsorize, diag=diag)
    if not keep.any():
        raise EstimationError("trim policy removed every row")
    return float(phi[keep].mean())


def variance_if(phi_values: np.ndarray) -> float:
    """Sampling variance of the estimator from centered influence values.

    Computes n^-2 sum(phi_i^2); consistent for Var(beta_hat) when the
    values are phi(beta_hat) evaluations.
    """
    phi = np.asarray(phi_values, dtype=float)
    n = phi.shape[0]
    if n == 0:
        raise EstimationError("variance_if needs at least one value")
    return float(np.sum(phi * phi) / (n * n))


def normal_ci(estimate: float, variance: float, level: float = 0.95) -> tuple[float, float]:
    """Two-sided normal interval estimate +/- z * sqrt(variance)."""
    if not 0.0 < level < 1.0:
        raise EstimationError("ci level must be in (0, 1)")
    zq = NormalDist().inv_cdf(0.5 + level / 2.0)
    hw = zq * float(np.sqrt(max(variance, 0.0)))
    return (estimate - hw, estimate + hw)


@dataclass
class PopulationMeanResult:
    """Estimate of E[h(Y; psi)] over the full population.

    estimate = P(R=1) * alpha + pi0 * beta with alpha the complete-case
    mean of h and beta the influence-function estimate for nonrespondents.
    """

    estimate: float
    variance: float
    alpha: float
    beta: float
    p_respond: float


def population_mean_if(
    table: ObservationTable,
    ns: NuisanceSet,
    spec: FunctionalSpec,
    *,
    trim: TrimPolicy = "floor",
    winsorize: float | None = None,
    diag: Diagnostics | None = None,
) -> PopulationMeanResult:
    """Population functional E[h] with its influence-function variance."""
    _require_incomplete(table, ns)
    if table.n1 == 0:
        raise EstimationError("no complete cases; population functional needs both")
    h_obs = evaluate_h(spec, table.y_observed)
    alpha = float(np.mean(h_obs))
    p1 = 1.0 - ns.pi0
    beta = beta_if_general(table, ns, spec, trim=trim, winsorize=winsorize, diag=diag)
    estimate = p1 * alpha + ns.pi0 * beta

    parts = _phi_parts_general(table, ns, spec, trim, None)
    R = table.R.astype(float)
    rh = table.rh(spec)
    first = parts.phi_tilde - (1.0 - R) / ns.pi0 * parts.delta_own  # g-weighted bracket only
    phi = (
        ns.pi0 * first
        + alpha * (R - p1)
        + beta * (1.0 - R - ns.pi0)
        + R * (rh - alpha)
        + (1.0 - R) * (parts.delta_own - beta)
    )
    keep = parts.keep
    return PopulationMeanResult(
        estimate=estimate,
        variance=variance_if(phi[keep]),
        alpha=alpha,
        beta=beta,
        p_respond=p1,
    )


@dataclass
class SolveResult:
    """Root of the estimated population moment in psi."""

    psi: float
    iterations: int
    bracket: tuple[float, float]
    grid: np.ndarray
    moments: np.ndarray


def solve_functional(
    table: ObservationTable,
    cfg: LearnerConfig,
    q: float,
    *,
    grid_size: int = 64,
    tol: float = 1e-6,
    mode: str = "marginalize",
    trim: TrimPolicy = "floor",
    winsorize: float | None = None,
    target: str = "population",
) -> SolveResult:
    """Solve for psi with h(y; psi) = 1{y >= psi} - q over the target group.

    target "population" roots M(psi) = P(R=1) alpha(psi) + pi0 beta_IF(psi);
    target "missing" roots beta_IF(psi) alone (quantile among nonrespondents).
    The moment is evaluated on a psi-grid spanning the observed outcome
    range; models that do not depend on h (pi, rho, pi0) are fitted once and
    reused, mu is refitted per candidate.  The root is found by bisection on
    the piecewise-linear interpolant of the grid moments; no sign change
    raises WeakIdentificationError.
    """
    if target not in ("population", "missing"):
        raise EstimationError(f"unknown solve target {target!r}")
    if table.n1 == 0:
        raise EstimationError("no observed outcomes; cannot bracket the quantile")
    if not 0.0 < q < 1.0:
        raise EstimationError("q must be in (0, 1)")
    fully_observed = table.n0 == 0
    if fully_observed and target == "missing":
        raise NoIncompleteCasesError("no rows with R = 0; the target is undefined")
    y = table.y_observed
    lo, hi = float(y.min()), float(y.max())
    if lo == hi:
        return SolveResult(psi=lo, iterations=0, bracket=(lo, hi),
                           grid=np.array([lo]), moments=np.array([0.0]))
    grid = np.linspace(lo, hi, grid_size)

    base_spec = FunctionalSpec.quantile(q, psi=grid[0])
    shared = None
    if not fully_observed:
        shared = fit_nuisance_set(table, base_spec, cfg, mode=mode)

    def moment(psi: float) -> float:
        spec = FunctionalSpec.quantile(q, psi=psi)
        h_obs = evaluate_h(spec, y)
        alpha = float(np.mean(h_obs))
        if fully_observed:
            return alpha
        mu_fn, mu_marg_fn = fit_mu_component(table, spec, cfg, mode=mode)
        ns = shared.with_overrides(mu_fn=mu_fn, mu_marg_fn=mu_marg_fn)
        beta = beta_if_general(table, ns, spec, trim=trim, winsorize=winsorize)
        if target == "missing":
            return beta
        return (1.0 - ns.pi0) * alpha + ns.pi0 * beta

    moments = np.array([moment(p) for p in grid])
    sign = np.sign(moments)
    crossings = np.flatnonzero(sign[:-1] * sign[1:] <= 0)
    exact = np.flatnonzero(moments == 0.0)
    if exact.size:
        p = float(grid[exact[0]])
        return SolveResult(psi=p, iterations=0, bracket=(p, p), grid=grid, moments=moments)
    if crossings.size == 0:
        raise WeakIdentificationError(
            "population moment has no sign change over the candidate grid"
        )
    i = int(crossings[0])
    a, b = float(grid[i]), float(grid[i + 1])
    fa, fb = float(moments[i]), float(moments[i + 1])

    def interp(p: float) -> float:
        t = (p - a) / (b - a)
        return fa + t * (fb - fa)

    it = 0
    lo_b, hi_b = a, b
    flo = fa
    while hi_b - lo_b > tol:
        it += 1
        mid = 0.5 * (lo_b + hi_b)
        fm = interp(mid)
        if fm == 0.0:
            lo_b = hi_b = mid
            break
        if np.sign(fm) == np.sign(flo):
            lo_b, flo = mid, fm
        else:
            hi_b = mid
        if it > 200:
            break
    psi = 0.5 * (lo_b + hi_b)
    return SolveResult(psi=psi, iterations=it, bracket=(a, b), grid=grid, moments=moments)
