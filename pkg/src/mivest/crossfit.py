"""Cross-fitted estimation with repetition-median adjustment.

Fold hygiene: nuisances for fold k (including the incomplete-case share
pi0) are fitted on the complement of fold k and only evaluated on fold k.
Influence contributions are pooled across folds and averaged once.

Repetition: the whole split-fit-evaluate cycle runs `repetitions` times
with fresh fold draws.  The reported point estimate is the median of the
per-repetition estimates, and the reported variance is

    median_s [ var_s + (est_s - point)^2 ]

which charges each repetition for its distance from the consensus.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .binary import _phi_tilde_binary
from .data import FunctionalSpec, ObservationTable, evaluate_h
from .exceptions import (ConfigurationError, EstimationError, FitError,
                         NoIncompleteCasesError)
from .general import _phi_parts_general, normal_ci, variance_if
from .learners import LearnerConfig
from .nuisance import (
    Diagnostics,
    NuisanceSet,
    TrimPolicy,
    fit_nuisance_set,
    winsorize_values,
)

_DOMAIN_FOLDS = 2

EstimatorKind = Literal["auto", "binary", "general"]
FitterType = Callable[..., NuisanceSet]


@dataclass(frozen=True)
class FoldPlan:
    """A fold assignment: assignments[i] is the fold index of row i."""

    n: int
    n_folds: int
    seed: int
    repetition: int
    assignments: np.ndarray

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.n_folds)


def make_folds(n: int, n_folds: int, seed: int, repetition: int = 0) -> FoldPlan:
    """Balanced random folds; sizes differ by at most one row.

    The draw depends only on (seed, repetition), not on call order, so
    repetition r always sees the same split regardless of scheduling.
    """
    if n_folds < 2:
        raise ConfigurationError("n_folds must be at least 2")
    if n_folds > n:
        raise ConfigurationError(f"n_folds = {n_folds} exceeds n = {n}")
    ss = np.random.SeedSequence(seed, spawn_key=(_DOMAIN_FOLDS, repetition))
    rng = np.random.Generator(np.random.Philox(ss))
    perm = rng.permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) % n_folds
    assignments.setflags(write=False)
    return FoldPlan(
        n=n, n_folds=n_folds, seed=seed, repetition=repetition, assignments=assignments
    )


def _resolve_kind(kind: EstimatorKind, L: int) -> str:
    if kind == "auto":
        return "binary" if L == 2 else "general"
    if kind == "binary" and L != 2:
        raise ConfigurationError("binary estimator requires a two-level instrument")
    return kind


def _fold_phi(
    kind: str,
    block: ObservationTable,
    ns: NuisanceSet,
    spec: FunctionalSpec,
    trim: TrimPolicy,
    diag: Diagnostics,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(phi_tilde, keep, delta_own) on an evaluation block."""
    if kind == "binary":
        return _phi_tilde_binary(block, ns, spec, trim, diag)
    parts = _phi_parts_general(block, ns, spec, trim, diag)
    return parts.phi_tilde, parts.keep, parts.delta_own


@dataclass
class CrossfitResult:
    """One repetition's pooled estimate and influence-value variance."""

    estimate: float
    variance: float
    n: int
    n0: int
    n_kept: int
    plan: FoldPlan
    diagnostics: Diagnostics
    pi0_by_fold: np.ndarray


def crossfit_estimate(
    table: ObservationTable,
    spec: FunctionalSpec,
    cfg: LearnerConfig,
    *,
    n_folds: int = 5,
    seed: int = 0,
    repetition: int = 0,
    kind: EstimatorKind = "auto",
    mode: str = "marginalize",
    trim: TrimPolicy = "floor",
    winsorize: float | None = None,
    plan: FoldPlan | None = None,
    fitter: FitterType | None = None,
) -> CrossfitResult:
    """One cross-fitted pass: fit on fold complements, pool, grand-mean.

    `plan` overrides the internal fold draw (for tests); `fitter` replaces
    fit_nuisance_set with the same signature.
    """
    if table.n0 == 0:
        raise NoIncompleteCasesError("no rows with R = 0; the target is undefined")
    if plan is None:
        plan = make_folds(table.n, n_folds, seed, repetition)
    elif plan.n != table.n:
        raise ConfigurationError("fold plan was built for a different table size")
    fit = fitter if fitter is not None else fit_nuisance_set
    use = _resolve_kind(kind, table.L)

    diag = Diagnostics()
    phi = np.empty(table.n, dtype=float)
    keep = np.zeros(table.n, dtype=bool)
    coef = np.empty(table.n, dtype=float)     # (1 - R_i) / pi0 of the row's fold
    delta_own = np.empty(table.n, dtype=float)
    pi0s = np.empty(plan.n_folds, dtype=float)

    for k in range(plan.n_folds):
        mask = plan.assignments == k
        train = table.subset(~mask)
        block = table.subset(mask)
        try:
            ns = fit(train, spec, cfg, mode=mode)
        except (FitError, EstimationError) as e:
            raise type(e)(f"fold {k}: {e}") from e
        if not ns.pi0 > 0:
            raise NoIncompleteCasesError(f"fold {k}: training split has no incomplete rows")
        p, kp, d = _fold_phi(use, block, ns, spec, trim, diag)
        phi[mask] = p
        keep[mask] = kp
        delta_own[mask] = d
        coef[mask] = (1.0 - block.R.astype(float)) / ns.pi0
        pi0s[k] = ns.pi0
        diag.merge(ns.diagnostics)

    if winsorize is not None:
        phi = winsorize_values(phi, winsorize, diag)
    if not keep.any():
        raise EstimationError("trim policy removed every row")
    est = float(phi[keep].mean())
    centered = phi[keep] - coef[keep] * est
    return CrossfitResult(
        estimate=est,
        variance=variance_if(centered),
        n=table.n,
        n0=table.n0,
        n_kept=int(keep.sum()),
        plan=plan,
        diagnostics=diag,
        pi0_by_fold=pi0s,
    )


def repeated_crossfit(
    table: ObservationTable,
    spec: FunctionalSpec,
    cfg: LearnerConfig,
    *,
    n_folds: int = 5,
    repetitions: int = 1,
    seed: int = 0,
    kind: EstimatorKind = "auto",
    mode: str = "marginalize",
    trim: TrimPolicy = "floor",
    winsorize: float | None = None,
    fitter: FitterType | None = None,
) -> list[CrossfitResult]:
    if repetitions < 1:
        raise ConfigurationError("repetitions must be at least 1")
    if repetitions % 2 == 0:
        warnings.warn(
            "even repetition count makes the median an average of the middle "
            "pair; an odd count is recommended",
            UserWarning,
            stacklevel=2,
        )
    return [
        crossfit_estimate(
            table, spec, cfg,
            n_folds=n_folds, seed=seed, repetition=r, kind=kind,
            mode=mode, trim=trim, winsorize=winsorize, fitter=fitter,
        )
        for r in range(repetitions)
    ]


def median_adjust(estimates: np.ndarray, variances: np.ndarray) -> tuple[float, float]:
    """Median point estimate with discordance-penalised variance.

    point = median_s(est_s); var = median_s(var_s + (est_s - point)^2).
    """
    est = np.asarray(estimates, dtype=float)
    var = np.asarray(variances, dtype=float)
    if est.size == 0 or est.shape != var.shape:
        raise EstimationError("median_adjust needs matching nonempty arrays")
    point = float(np.median(est))
    adj = float(np.median(var + (est - point) ** 2))
    return point, adj


@dataclass
class EstimateReport:
    """Final deliverable of a cross-fitted run."""

    estimate: float
    variance: float
    std_error: float
    ci_level: float
    ci_lower: float
    ci_upper: float
    n: int
    n0: int
    n_folds: int
    repetitions: int
    kind: str
    mode: str
    trim: str
    winsorize: float | None
    seed: int
    per_repetition_estimates: list[float]
    per_repetition_variances: list[float]
    diagnostics: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "variance": self.variance,
            "std_error": self.std_error,
            "ci_level": self.ci_level,
            "ci": [self.ci_lower, self.ci_upper],
            "n": self.n,
            "n_incomplete": self.n0,
            "n_folds": self.n_folds,
            "repetitions": self.repetitions,
            "estimator": self.kind,
            "mode": self.mode,
            "trim": self.trim,
            "winsorize": self.winsorize,
            "seed": self.seed,
            "per_repetition": {
                "estimates": self.per_repetition_estimates,
                "variances": self.per_repetition_variances,
            },
            "diagnostics": self.diagnostics,
        }


def crossfit_beta(
    table: ObservationTable,
    spec: FunctionalSpec,
    cfg: LearnerConfig,
    *,
    n_folds: int = 5,
    repetitions: int = 1,
    seed: int = 0,
    ci_level: float = 0.95,
    kind: EstimatorKind = "auto",
    mode: str = "marginalize",
    trim: TrimPolicy = "floor",
    winsorize: float | None = None,
    fitter: FitterType | None = None,
) -> EstimateReport:
    """Repeated cross-fitting, median adjustment, and a normal interval."""
    results = repeated_crossfit(
        table, spec, cfg,
        n_folds=n_folds, repetitions=repetitions, seed=seed, kind=kind,
        mode=mode, trim=trim, winsorize=winsorize, fitter=fitter,
    )
    est = np.array([r.estimate for r in results])
    var = np.array([r.variance for r in results])
    point, adj = median_adjust(est, var)
    lo, hi = normal_ci(point, adj, ci_level)
    diag = Diagnostics()
    for r in results:
        diag.merge(r.diagnostics)
    return EstimateReport(
        estimate=point,
        variance=adj,
        std_error=float(np.sqrt(max(adj, 0.0))),
        ci_level=ci_level,
        ci_lower=lo,
        ci_upper=hi,
        n=table.n,
        n0=table.n0,
        n_folds=results[0].plan.n_folds,
        repetitions=repetitions,
        kind=_resolve_kind(kind, table.L),
        mode=mode,
        trim=trim,
        winsorize=winsorize,
        seed=seed,
        per_repetition_estimates=[float(x) for x in est],
        per_repetition_variances=[float(x) for x in var],
        diagnostics=diag.as_dict(),
    )


def crossfit_population_mean(
    table: ObservationTable,
    spec: FunctionalSpec,
    cfg: LearnerConfig,
    *,
    n_folds: int = 5,
    repetitions: int = 1,
    seed: int = 0,
    ci_level: float = 0.95,
    kind: EstimatorKind = "auto",
    mode: str = "marginalize",
    trim: TrimPolicy = "floor",
    winsorize: float | None = None,
    fitter: FitterType | None = None,
) -> EstimateReport:
    """Cross-fitted population functional (1 - pi0) alpha + pi0 beta.

    alpha is the complete-case mean of h (no model, no cross-fitting
    needed); beta and the influence-value variance come from the fold
    machinery.  pi0 in the composition is the full-sample share so the
    identity estimate == (1 - pi0) alpha + pi0 beta holds exactly.
    """
    if table.n1 == 0:
        raise EstimationError("no complete cases; population functional needs both")
    if table.n0 == 0:
        raise NoIncompleteCasesError("no rows with R = 0; the target is undefined")
    if repetitions < 1:
        raise ConfigurationError("repetitions must be at least 1")
    if repetitions % 2 == 0:
        warnings.warn(
            "even repetition count makes the median an average of the middle "
            "pair; an odd count is recommended",
            UserWarning,
            stacklevel=2,
        )
    alpha = float(np.mean(evaluate_h(spec, table.y_observed)))
    pi0 = table.n0 / table.n
    p1 = 1.0 - pi0

    fit = fitter if fitter is not None else fit_nuisance_set
    use = _resolve_kind(kind, table.L)
    R = table.R.astype(float)
    rh = table.rh(spec)

    ests = np.empty(repetitions, dtype=float)
    vars_ = np.empty(repetitions, dtype=float)
    betas = np.empty(repetitions, dtype=float)
    diag = Diagnostics()
    for rep in range(repetitions):
        plan = make_folds(table.n, n_folds, seed, rep)
        phi = np.empty(table.n, dtype=float)
        keep = np.zeros(table.n, dtype=bool)
        coef = np.empty(table.n, dtype=float)
        delta_own = np.empty(table.n, dtype=float)
        for k in range(plan.n_folds):
            mask = plan.assignments == k
            train = table.subset(~mask)
            block = table.subset(mask)
            try:
                ns = fit(train, spec, cfg, mode=mode)
            except EstimationError as e:
                raise type(e)(f"fold {k}: {e}") from e
            if not ns.pi0 > 0:
                raise NoIncompleteCasesError(
                    f"fold {k}: training split has no incomplete rows"
                )
            p, kp, d = _fold_phi(use, block, ns, spec, trim, diag)
            phi[mask] = p
            keep[mask] = kp
            delta_own[mask] = d
            coef[mask] = (1.0 - block.R.astype(float)) / ns.pi0
            diag.merge(ns.diagnostics)
        if winsorize is not None:
            phi = winsorize_values(phi, winsorize, diag)
        if not keep.any():
            raise EstimationError("trim policy removed every row")
        beta = float(phi[keep].mean())
        first = phi - coef * delta_own
        phi_pop = (
            pi0 * first
            + alpha * (R - p1)
            + beta * (1.0 - R - pi0)
            + rh - R * alpha
            + (1.0 - R) * (delta_own - beta)
        )
        betas[rep] = beta
        ests[rep] = p1 * alpha + pi0 * beta
        vars_[rep] = variance_if(phi_pop[keep])
    point, adj = median_adjust(ests, vars_)
    lo, hi = normal_ci(point, adj, ci_level)
    return EstimateReport(
        estimate=point,
        variance=adj,
        std_error=float(np.sqrt(max(adj, 0.0))),
        ci_level=ci_level,
        ci_lower=lo,
        ci_upper=hi,
        n=table.n,
        n0=table.n0,
        n_folds=n_folds,
        repetitions=repetitions,
        kind=use,
        mode=mode,
        trim=trim,
        winsorize=winsorize,
        seed=seed,
        per_repetition_estimates=[float(x) for x in ests],
        per_repetition_variances=[float(x) for x in vars_],
        diagnostics=diag.as_dict(),
    )
