"""Deliberate nuisance corruption for multiple-robustness checks.

corrupt_nuisance perturbs chosen components of a nuisance set:

    pi_z     response propensities, logit shift +0.7 at every level
    rho_z    instrument density, level-0 likelihood scaled by e^{0.7}
             then renormalised (still sums to 1)
    mu_z     outcome regressions, +0.3 * (1 + z); the shift varies with z
             so contrasts are genuinely wrong (a constant would cancel)
    pi_marg  marginal response propensity (direct mode only), logit +0.7
    mu_marg  marginal outcome regression (direct mode only), +0.3
    delta    contrast ratio, +0.3 via an override callable

Scenario builders wire these into the configurations under which the
influence-function estimator stays consistent.  Which components must be
held follows from the bracket algebra: writing b(z, x) for the expected
bracket E[R h - mu_hat_z - delta_hat_z (R - pi_hat_z) | z, x], the first
term of the influence value is unbiased whenever b(z, x) = 0 pointwise,
or whenever b is constant in z and the weights g_hat(z,x) - g_hat(x)
average to zero under the true instrument density; the second term needs
delta_hat = delta.  Each scenario realises one of these routes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.special import expit, logit

from .binary import _phi_tilde_binary, beta_if_binary
from .data import FunctionalSpec, ObservationTable
from .exceptions import ConfigurationError
from .general import _phi_parts_general, beta_if_general
from .nuisance import PROB_CLIP, NuisanceSet
from .oracles import (
    oracle_delta_fn,
    oracle_identified_beta,
    oracle_mu,
    oracle_nuisances,
    oracle_pi,
    oracle_rho,
)
from .simulation import DGPSpec, generate

COMPONENTS = ("pi_z", "rho_z", "mu_z", "pi_marg", "mu_marg", "delta")
LOGIT_SHIFT = 0.7
LEVEL_SHIFT = 0.3


def shift_probability(p: np.ndarray, amount: float) -> np.ndarray:
    """expit(logit(p) + amount), clipped away from the boundary first."""
    clipped = np.clip(np.asarray(p, dtype=float), PROB_CLIP, 1.0 - PROB_CLIP)
    return expit(logit(clipped) + amount)


def corrupt_nuisance(
    ns: NuisanceSet,
    components: Iterable[str],
    *,
    logit_delta: float = LOGIT_SHIFT,
    level_delta: float = LEVEL_SHIFT,
) -> NuisanceSet:
    """A new nuisance set with the named components perturbed.

    An empty component list returns a set with identical predictions.
    Asking for pi_marg or mu_marg on a marginalising set is an error:
    there is no stored marginal there to corrupt.
    """
    comps = set(components)
    unknown = comps - set(COMPONENTS)
    if unknown:
        raise ConfigurationError(
            f"unknown corruption components {sorted(unknown)}; valid: {COMPONENTS}"
        )
    if ns.mode != "direct" and comps & {"pi_marg", "mu_marg"}:
        raise ConfigurationError(
            "pi_marg / mu_marg can only be corrupted in direct mode; a "
            "marginalising set derives them from rho_z and the levels"
        )
    base_pi, base_rho, base_mu = ns.pi_fn, ns.rho_fn, ns.mu_fn
    overrides: dict = {}

    if "pi_z" in comps:
        overrides["pi_fn"] = lambda z, X: shift_probability(base_pi(z, X), logit_delta)
    if "rho_z" in comps:
        L = ns.L

        def rho_corrupt(z: int, X: np.ndarray) -> np.ndarray:
            stack = np.stack([np.asarray(base_rho(l, X), dtype=float) for l in range(L)])
            stack[0] = stack[0] * np.exp(logit_delta)
            return stack[z] / stack.sum(axis=0)

        overrides["rho_fn"] = rho_corrupt
    if "mu_z" in comps:
        overrides["mu_fn"] = lambda z, X: (
            np.asarray(base_mu(z, X), dtype=float) + level_delta * (1.0 + z)
        )
    if "pi_marg" in comps:
        base_pim = ns.pi_marg_fn
        overrides["pi_marg_fn"] = lambda X: shift_probability(base_pim(X), logit_delta)
    if "mu_marg" in comps:
        base_mum = ns.mu_marg_fn
        overrides["mu_marg_fn"] = lambda X: (
            np.asarray(base_mum(X), dtype=float) + level_delta
        )
    if "delta" in comps:
        snapshot = ns  # delta computed from the uncorrupted parts, then shifted

        def delta_corrupt(z: int, X: np.ndarray) -> np.ndarray:
            return snapshot.delta(z, np.atleast_2d(np.asarray(X, dtype=float)),
                                  on_floor="floor") + level_delta

        overrides["delta_fn"] = delta_corrupt
    if not overrides:
        return ns.with_overrides()
    return ns.with_overrides(**overrides)


# --------------------------------------------------------------------------
# scenario construction around the closed-form truths
# --------------------------------------------------------------------------

@dataclass
class Scenario:
    """A corrupted nuisance set with its consistency bookkeeping."""

    name: str
    ns: NuisanceSet
    held: tuple[str, ...]
    corrupted: tuple[str, ...]
    expect_consistent: bool
    estimator: str = "general"
    note: str = ""


def _shift_pi_one_level(pi_fn, level: int, amount: float):
    def fn(z: int, X: np.ndarray) -> np.ndarray:
        p = pi_fn(z, X)
        if z == level:
            return shift_probability(p, amount)
        return np.asarray(p, dtype=float)
    return fn


def _shift_mu_one_level(mu_fn, level: int, amount: float):
    def fn(z: int, X: np.ndarray) -> np.ndarray:
        m = np.asarray(mu_fn(z, X), dtype=float)
        if z == level:
            return m + amount
        return m
    return fn


def binary_scenarios(
    family: str,
    parameters: Mapping[str, float] | None = None,
    psi: float = 0.0,
) -> list[Scenario]:
    """Consistency configurations for the two-level estimator.

    Each scenario corrupts everything outside its held set; the held sets
    are the three routes to consistency for the binary influence function:

      contrast_and_reference   delta(x), mu_{z=0}(x), pi_{z=0}(x) true
      response_models          pi_z(x) both levels and rho(x) true
      contrast_and_instrument  delta(x) and rho(x) true
    """
    params = dict(parameters or {})
    truth = lambda: oracle_nuisances(family, params,
                                     functional=FunctionalSpec.mean(psi))
    true_delta = oracle_delta_fn(family, params, psi)
    out: list[Scenario] = []

    ns1 = truth()
    ns1 = ns1.with_overrides(
        pi_fn=_shift_pi_one_level(ns1.pi_fn, 1, LOGIT_SHIFT),
        mu_fn=_shift_mu_one_level(ns1.mu_fn, 1, LEVEL_SHIFT),
        rho_fn=corrupt_nuisance(ns1, ["rho_z"]).rho_fn,
        delta_fn=true_delta,
    )
    out.append(Scenario(
        name="contrast_and_reference",
        ns=ns1,
        held=("delta", "mu_z0", "pi_z0"),
        corrupted=("pi_z1", "mu_z1", "rho_z"),
        expect_consistent=True,
        estimator="binary",
        note="bracket is exactly zero at both levels; weights are free",
    ))

    ns2 = corrupt_nuisance(truth(), ["mu_z"])
    out.append(Scenario(
        name="response_models",
        ns=ns2,
        held=("pi_z", "rho_z"),
        corrupted=("mu_z", "delta"),
        expect_consistent=True,
        estimator="binary",
        note="bracket bias is constant in z and the true-density weights "
             "cancel it",
    ))

    ns3 = corrupt_nuisance(truth(), ["pi_z", "mu_z"])
    ns3 = ns3.with_overrides(delta_fn=true_delta)
    out.append(Scenario(
        name="contrast_and_instrument",
        ns=ns3,
        held=("delta", "rho_z"),
        corrupted=("pi_z", "mu_z"),
        expect_consistent=True,
        estimator="binary",
    ))

    out.append(Scenario(
        name="all_corrupt",
        ns=corrupt_nuisance(truth(), ["pi_z", "rho_z", "mu_z"]),
        held=(),
        corrupted=("pi_z", "rho_z", "mu_z", "delta"),
        expect_consistent=False,
        estimator="binary",
    ))
    return out


def general_scenarios(
    family: str,
    parameters: Mapping[str, float] | None = None,
    psi: float = 0.0,
) -> list[Scenario]:
    """Consistency configurations for the multi-level estimator.

    The held sets:

      contrast_and_marginals   delta, pi(x), mu(x) true
      response_models          pi_z(x), rho(x) true
      contrast_and_instrument  delta, rho(x), pi(x) true

    In the first and third, mu_hat_z is rebuilt coherently around the held
    marginals, mu_hat_z = mu_hat(x) + delta_z (pi_hat_z - pi(x)), so the
    derived contrast stays exactly right while the level regressions and
    propensities are all wrong.
    """
    params = dict(parameters or {})
    spec = FunctionalSpec.mean(psi)
    L = oracle_nuisances(family, params, functional=spec).L
    true_delta = oracle_delta_fn(family, params, psi)

    def true_pi_marg(X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return sum(oracle_rho(family, z, X, params) * oracle_pi(family, z, X, params)
                   for z in range(L))

    def true_mu_marg(X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return sum(oracle_rho(family, z, X, params)
                   * oracle_mu(family, z, X, params, psi) for z in range(L))

    # The general scenarios shift propensities downward (-0.7 on the logit
    # scale).  An upward shift can push a level's corrupted propensity across
    # the true marginal, putting a zero of the contrast denominator inside
    # the covariate space; the exploding 1/delta_r weights would then test
    # the floor diagnostics rather than robustness.  The downward direction
    # moves every level away from its zero for these families.
    def shifted_pi(z: int, X: np.ndarray) -> np.ndarray:
        return shift_probability(oracle_pi(family, z, X, params), -LOGIT_SHIFT)

    def coherent_mu(mu_marg_fn):
        def fn(z: int, X: np.ndarray) -> np.ndarray:
            X = np.atleast_2d(np.asarray(X, dtype=float))
            return (np.asarray(mu_marg_fn(X), dtype=float)
                    + true_delta(z, X) * (shifted_pi(z, X) - true_pi_marg(X)))
        return fn

    out: list[Scenario] = []

    base = oracle_nuisances(family, params, functional=spec, mode="direct")
    ns1 = base.with_overrides(
        pi_fn=shifted_pi,
        mu_fn=coherent_mu(true_mu_marg),
        rho_fn=corrupt_nuisance(base, ["rho_z"]).rho_fn,
        pi_marg_fn=true_pi_marg,
        mu_marg_fn=true_mu_marg,
    )
    out.append(Scenario(
        name="contrast_and_marginals",
        ns=ns1,
        held=("delta", "pi_marg", "mu_marg"),
        corrupted=("pi_z", "mu_z", "rho_z"),
        expect_consistent=True,
        note="level models corrupted coherently around true marginals; "
             "bracket vanishes pointwise",
    ))

    ns2 = corrupt_nuisance(
        oracle_nuisances(family, params, functional=spec), ["mu_z"]
    )
    out.append(Scenario(
        name="response_models",
        ns=ns2,
        held=("pi_z", "rho_z"),
        corrupted=("mu_z", "delta"),
        expect_consistent=True,
    ))

    def corrupted_mu_marg(X: np.ndarray) -> np.ndarray:
        return true_mu_marg(X) + LEVEL_SHIFT

    ns3 = base.with_overrides(
        pi_fn=shifted_pi,
        mu_fn=coherent_mu(corrupted_mu_marg),
        pi_marg_fn=true_pi_marg,
        mu_marg_fn=corrupted_mu_marg,
    )
    out.append(Scenario(
        name="contrast_and_instrument",
        ns=ns3,
        held=("delta", "rho_z", "pi_marg"),
        corrupted=("pi_z", "mu_z", "mu_marg"),
        expect_consistent=True,
        note="weights are wrong but the bracket bias is constant in z, so "
             "true rho and true pi(x) cancel it",
    ))

    ns4 = corrupt_nuisance(
        oracle_nuisances(family, params, functional=spec), ["pi_z", "rho_z", "mu_z"],
        logit_delta=-LOGIT_SHIFT,
    )
    out.append(Scenario(
        name="all_corrupt",
        ns=ns4,
        held=(),
        corrupted=("pi_z", "rho_z", "mu_z", "delta"),
        expect_consistent=False,
    ))
    return out


@dataclass
class RobustnessRow:
    scenario: str
    held: tuple[str, ...]
    corrupted: tuple[str, ...]
    expect_consistent: bool
    estimate: float
    reference: float
    abs_bias: float
    mc_se: float

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "held": list(self.held),
            "corrupted": list(self.corrupted),
            "expect_consistent": self.expect_consistent,
            "estimate": self.estimate,
            "reference": self.reference,
            "abs_bias": self.abs_bias,
            "mc_se": self.mc_se,
        }


@dataclass
class RobustnessReport:
    family: str
    n: int
    seed: int
    reference: float
    reference_mc_se: float
    rows: list[RobustnessRow] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "seed": self.seed,
            "reference": self.reference,
            "reference_mc_se": self.reference_mc_se,
            "scenarios": [r.as_dict() for r in self.rows],
        }


def run_robustness(
    family: str,
    *,
    n: int = 400_000,
    seed: int = 11,
    parameters: Mapping[str, float] | None = None,
    psi: float = 0.0,
    scenarios: list[Scenario] | None = None,
    scenario_kind: str = "auto",
    reference_draws: int = 4_000_000,
) -> RobustnessReport:
    """Evaluate the influence-function estimator under each scenario.

    One large table is drawn; every scenario's corrupted nuisance set is
    plugged into the estimator on that same table, and the estimates are
    compared against the identified value computed by brute force.
    """
    params = dict(parameters or {})
    spec = FunctionalSpec.mean(psi)
    if scenarios is None:
        probe = oracle_nuisances(family, params, functional=spec)
        use_binary = probe.L == 2 if scenario_kind == "auto" else scenario_kind == "binary"
        scenarios = (binary_scenarios(family, params, psi) if use_binary
                     else general_scenarios(family, params, psi))
    table, _ = generate(DGPSpec(family=family, n=n, seed=seed,
                                parameters=params))
    ref, ref_se = oracle_identified_beta(family, params, psi=psi,
                                         draws=reference_draws)
    report = RobustnessReport(family=family, n=n, seed=seed,
                              reference=ref, reference_mc_se=ref_se)
    for sc in scenarios:
        # the estimate is a plain mean of phi~ (pi0 fixed at its true
        # value), so its sampling error comes from the uncentered values
        if sc.estimator == "binary":
            phi, keep, _ = _phi_tilde_binary(table, sc.ns, spec, "floor", None)
        else:
            parts = _phi_parts_general(table, sc.ns, spec, "floor", None)
            phi, keep = parts.phi_tilde, parts.keep
        vals = phi[keep]
        est = float(vals.mean())
        se = float(np.sqrt(np.var(vals, ddof=0) / vals.size + ref_se * ref_se))
        report.rows.append(RobustnessRow(
            scenario=sc.name,
            held=sc.held,
            corrupted=sc.corrupted,
            expect_consistent=sc.expect_consistent,
            estimate=est,
            reference=ref,
            abs_bias=abs(est - ref),
            mc_se=se,
        ))
    return report
