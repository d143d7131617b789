"""Data generators, brute-force oracles, and the replication harness."""

import numpy as np
import pytest

from mivest.data import FunctionalSpec
from mivest.exceptions import ConfigurationError
from mivest.learners import LearnerConfig
from mivest.simulation import (DGPSpec, GenerationError, gen_binary_dgp,
                               generate, oracle_beta, oracle_missing_quantile,
                               run_monte_carlo, selection_alpha_u_single,
                               selection_alpha_z_single)

CFG = LearnerConfig()
MEAN = FunctionalSpec.mean()

# long-run missingness rates implied by the two designs, from closed-form
# integration of the clamped selection probability over (Z, U, X)
P_MISS_SINGLE = 0.556847
P_MISS_DUAL = 0.403005


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        DGPSpec(family="nope", n=10, seed=0)
    with pytest.raises(ConfigurationError):
        DGPSpec(family="single_binary_iv", n=0, seed=0)
    with pytest.raises(ConfigurationError):
        DGPSpec(family="single_binary_iv", n=10, seed=0,
                clamp_policy="wat")


def test_generate_is_deterministic():
    for family in ("single_binary_iv", "dual_binary_iv"):
        spec = DGPSpec(family=family, n=500, seed=99)
        t1, lat1 = generate(spec)
        t2, lat2 = generate(spec)
        assert np.array_equal(t1.X, t2.X)
        assert np.array_equal(t1.Z, t2.Z)
        assert np.array_equal(t1.R, t2.R)
        assert np.array_equal(t1.y_dense(), t2.y_dense(), equal_nan=True)
        assert np.array_equal(lat1.y_full, lat2.y_full)


def test_missing_rates_match_design():
    t, _ = generate(DGPSpec(family="single_binary_iv", n=400_000, seed=3))
    assert np.mean(t.R == 0) == pytest.approx(P_MISS_SINGLE, abs=0.004)
    td, _ = generate(DGPSpec(family="dual_binary_iv", n=400_000, seed=3))
    assert np.mean(td.R == 0) == pytest.approx(P_MISS_DUAL, abs=0.004)


def test_latent_outcome_level():
    _, lat = generate(DGPSpec(family="single_binary_iv", n=400_000, seed=7))
    # E (X1 + X2) exp(U/6) with U ~ N(4, 0.5 ** 2)
    target = np.exp(4.0 / 6.0 + 0.25 / 72.0)
    assert np.mean(lat.y_full) == pytest.approx(target, abs=0.01)


def test_clamp_policy_caps_probability():
    _, lat = generate(DGPSpec(family="single_binary_iv", n=200_000, seed=1))
    assert lat.p_r0.max() <= 1.0 - 1e-9 + 1e-15
    assert lat.clamp_fraction == pytest.approx(0.25, abs=0.01)
    _, latd = generate(DGPSpec(family="dual_binary_iv", n=200_000, seed=1))
    assert latd.clamp_fraction == pytest.approx(0.077, abs=0.01)


def test_reject_invalid_policy_redraws():
    spec = DGPSpec(family="single_binary_iv", n=5_000, seed=12,
                   clamp_policy="reject_invalid")
    t, lat = generate(spec)
    assert t.n == 5_000
    assert lat.p_r0.max() < 1.0
    assert lat.n_rejected > 0
    # the record keeps the invalid-draw rate seen before redraws
    assert lat.clamp_fraction == pytest.approx(0.25, abs=0.02)


def test_as_printed_error_policy():
    spec = DGPSpec(family="single_binary_iv", n=5_000, seed=12,
                   clamp_policy="as_printed_error")
    with pytest.raises(GenerationError, match=r"P\(R=0\).*> 1"):
        generate(spec)


def test_reject_invalid_gives_up_on_degenerate_design():
    spec = DGPSpec(family="dual_binary_iv", n=50, seed=4,
                   clamp_policy="reject_invalid",
                   parameters={"selection_intercept": 8.0})
    with pytest.raises(GenerationError, match="valid region"):
        generate(spec)


def test_dual_intercept_shifts_missingness():
    spec = DGPSpec(family="dual_binary_iv", n=20_000, seed=4,
                   parameters={"selection_intercept": 8.0})
    t, _ = generate(spec)
    assert np.mean(t.R == 0) > 0.99


def test_selection_exponent_is_separable():
    # on unclamped draws the stored probability factors exactly into the
    # instrument piece times the latent piece
    t, lat = gen_binary_dgp(30_000, seed=6)
    raw = np.exp(selection_alpha_z_single(t.Z, t.X)
                 + selection_alpha_u_single(lat.u))
    unclamped = raw < 1.0 - 1e-9
    assert unclamped.mean() > 0.5
    assert np.allclose(lat.p_r0[unclamped], raw[unclamped], rtol=1e-12)


def test_oracle_beta_single_family_value():
    res = oracle_beta(DGPSpec(family="single_binary_iv", n=1, seed=0),
                      draws=300_000)
    assert res.value == pytest.approx(2.0122, abs=0.015)
    assert res.mc_se < 0.01
    assert res.p_missing == pytest.approx(P_MISS_SINGLE, abs=0.01)
    assert res.n_missing > 100_000


def test_oracle_beta_dual_family_value():
    res = oracle_beta(DGPSpec(family="dual_binary_iv", n=1, seed=0),
                      draws=300_000)
    assert res.value == pytest.approx(1.0627, abs=0.02)


def test_oracle_quantile_consistency():
    # evaluating the indicator functional at the reported quantile over the
    # same draw stream must return a moment of essentially zero
    spec = DGPSpec(family="single_binary_iv", n=1, seed=8)
    med = oracle_missing_quantile(spec, 0.5, draws=300_000)
    probe = oracle_beta(spec, draws=300_000,
                        functional=FunctionalSpec.quantile(0.5, psi=med))
    assert abs(probe.value) < 1e-4


def test_mc_report_shape_and_mse_decomposition():
    dgp = DGPSpec(family="single_binary_iv", n=400, seed=0)
    report = run_monte_carlo(dgp, 6, CFG, MEAN, oracle=2.0122, n_folds=3,
                             master_seed=17)
    d = report.as_dict()
    assert d["replications"] == 6
    assert set(d["estimators"]) == {"id", "if"}
    for s in report.summaries.values():
        assert s.n_success == 6
        assert s.mse == pytest.approx(s.bias ** 2 + s.variance, abs=1e-12)
    assert report.summaries["if"].coverage is not None
    assert 0.0 <= report.summaries["if"].coverage <= 1.0


def test_mc_replication_streams_do_not_shift():
    # adding replications must not disturb the ones already drawn
    dgp = DGPSpec(family="single_binary_iv", n=400, seed=0)
    kw = dict(n_folds=3, master_seed=23)
    r3 = run_monte_carlo(dgp, 3, CFG, MEAN, oracle=2.0122, **kw)
    r5 = run_monte_carlo(dgp, 5, CFG, MEAN, oracle=2.0122, **kw)
    for name in ("id", "if"):
        a = r3.summaries[name].estimates
        b = r5.summaries[name].estimates[:3]
        assert a == b


def test_mc_thread_count_does_not_change_results():
    dgp = DGPSpec(family="single_binary_iv", n=300, seed=0)
    kw = dict(n_folds=3, master_seed=5)
    r1 = run_monte_carlo(dgp, 4, CFG, MEAN, oracle=2.0122, threads=1, **kw)
    r2 = run_monte_carlo(dgp, 4, CFG, MEAN, oracle=2.0122, threads=2, **kw)
    assert r1.as_dict() == r2.as_dict()


@pytest.mark.filterwarnings("ignore:instrument level")
def test_mc_counts_failed_replications():
    # n = 8 with a four-level instrument: most training splits lose a level
    dgp = DGPSpec(family="dual_binary_iv", n=8, seed=0)
    report = run_monte_carlo(dgp, 3, CFG, MEAN, oracle=1.0627, n_folds=4,
                             master_seed=2)
    s = report.summaries["if"]
    assert s.n_success + s.n_failed == 3
    assert s.n_failed >= 1


def test_mc_estimator_subset():
    dgp = DGPSpec(family="single_binary_iv", n=300, seed=0)
    report = run_monte_carlo(dgp, 2, CFG, MEAN, oracle=2.0122, n_folds=3,
                             estimators=("id",), master_seed=1)
    assert set(report.summaries) == {"id"}


def test_mc_validation():
    dgp = DGPSpec(family="single_binary_iv", n=300, seed=0)
    with pytest.raises(ConfigurationError):
        run_monte_carlo(dgp, 0, CFG, MEAN, oracle=2.0122)
