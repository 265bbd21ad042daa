import math
from dataclasses import replace

import numpy as np
import pytest

from lcapa import fading, sim
from lcapa.errors import ConfigError
from lcapa.fading import FadingConfig, NonstationaryModel
from lcapa.sim import AlgorithmSpec, Scenario


def small_scenario(**kw):
    base = dict(n_iters=400, n_trials=3, seed=7)
    base.update(kw)
    return sim.paper_scenario(**base)


def static_scenario(M=5, noise=0.0, **kw):
    w_t = np.array([0.3, -0.2j, 1.0, 0.0, 0.5])[:M]
    model = NonstationaryModel(w_t, alpha=0.5, q_std=0.0, cfo_rad_per_sample=0.0)
    return Scenario(
        profile=fading.MultipathProfile(M, ()),
        model=model,
        fading=FadingConfig(10.0, 1e-3),
        channel_mode="ar1_cfo",
        noise_var=noise,
        **kw,
    )


# -- source


def test_bpsk_alphabet_and_moments():
    x = sim.bpsk_source(1_000_000, np.random.default_rng(20100))
    assert set(np.unique(x)) == {-1.0, 1.0}
    assert abs(x.mean()) < 0.005
    assert x.var() == pytest.approx(1.0, abs=1e-4)


def test_bpsk_reproducible():
    a = sim.bpsk_source(100, np.random.default_rng(1))
    b = sim.bpsk_source(100, np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        sim.bpsk_source(0, np.random.default_rng(1))


# -- scenario validation


def test_scenario_rejects_bad_values():
    with pytest.raises(ConfigError):
        small_scenario(n_iters=0)
    with pytest.raises(ConfigError):
        small_scenario(noise_var=-1.0)
    with pytest.raises(ConfigError):
        small_scenario(channel_mode="jakes")


def test_paper_scenario_parameters():
    sc = sim.paper_scenario()
    assert sc.noise_var == 1e-3
    assert sc.fading.sample_period_s == 0.8e-6
    assert sc.model.alpha == 0.9
    assert sc.model.q_std ** 2 == pytest.approx(1e-4)
    assert sc.model.cfo_rad_per_sample == 1e-4
    assert sc.filter_length == 5


# -- synthesis


def test_synthesis_observation_model():
    sc = static_scenario(n_iters=50, noise=0.0)
    rows, d, taps = sim.synthesize(sc, np.random.default_rng(0))
    np.testing.assert_allclose(d, np.einsum("nm,nm->n", rows, taps))
    # shift structure u(n) = [x(n), ..., x(n-M+1)] with zeros before n = 0
    np.testing.assert_array_equal(rows[1:, 1:], rows[:-1, :-1])
    np.testing.assert_array_equal(rows[0, 1:], 0)


def test_rayleigh_mode_taps_live_on_profile():
    sc = small_scenario()
    sc = replace(sc, model=replace(sc.model, q_std=0.0, cfo_rad_per_sample=0.0))
    _, _, taps = sim.synthesize(sc, np.random.default_rng(0))
    np.testing.assert_array_equal(taps[:, [0, 1, 3]], 0)
    assert np.all(np.abs(taps[:, [2, 4]]) > 0)


# -- trials


def test_single_trial_equals_run_trial():
    sc = small_scenario(n_trials=1)
    algs = sim.paper_algorithms()[:2]
    mc = sim.run_monte_carlo(sc, algs)
    one = sim.run_trial(sc, algs, sim.trial_rng(sc.seed, 0))
    for a in algs:
        np.testing.assert_array_equal(mc[a.label].mse, one[a.label].sq_error)


def test_monte_carlo_deterministic_and_worker_independent():
    sc = small_scenario(n_iters=200)
    algs = sim.paper_algorithms()[:3]
    a = sim.run_monte_carlo(sc, algs)
    b = sim.run_monte_carlo(sc, algs)
    c = sim.run_monte_carlo(sc, algs, workers=2)
    for x in algs:
        np.testing.assert_array_equal(a[x.label].mse, b[x.label].mse)
        np.testing.assert_array_equal(a[x.label].mse, c[x.label].mse)


def test_adding_trials_keeps_earlier_ones():
    sc = small_scenario(n_iters=100)
    algs = sim.paper_algorithms()[1:2]
    two = sim.run_monte_carlo(replace(sc, n_trials=2), algs)[algs[0].label].mse
    three = sim.run_monte_carlo(replace(sc, n_trials=3), algs)[algs[0].label].mse
    extra = sim.run_trial(sc, algs, sim.trial_rng(sc.seed, 2))[algs[0].label].sq_error
    np.testing.assert_allclose(three * 3, two * 2 + extra, rtol=1e-13)


def test_learning_curve_shape_and_sign():
    sc = small_scenario()
    res = sim.run_monte_carlo(sc, sim.paper_algorithms())
    for c in res.curves.values():
        assert c.mse.shape == (sc.n_iters,)
        assert np.all(c.mse >= 0)


@pytest.mark.parametrize("seed", range(1, 9))
def test_static_noiseless_nlms_unit_step_converges(seed):
    M = 5
    sc = static_scenario(M=M, n_iters=600, n_trials=1)
    out = sim.run_trial(sc, [AlgorithmSpec.build("NLMS", M, 1.0)], sim.trial_rng(seed, 0))["NLMS"]
    # random +-1 regressors contract the weight error by about (1 - 1/M) per step,
    # so exactness is reached after a few hundred steps rather than a fixed 10 M
    assert np.all(out.sq_error[60 * M:] < 1e-20)
    assert out.weight_error[-1] < 1e-20


def test_zero_step_curve_sits_at_desired_power():
    sc = static_scenario(n_iters=2000, n_trials=4, noise=1e-3)
    c = sim.run_monte_carlo(sc, [AlgorithmSpec.build("NLMS", 5, 0.0)])["NLMS"]
    power = np.sum(np.abs(sc.model.mean_taps) ** 2) + 1e-3
    assert np.mean(c.mse[10:]) == pytest.approx(power, rel=0.05)


def test_full_selection_equals_full_update_in_simulation():
    sc = small_scenario(n_iters=300, n_trials=2)
    a = AlgorithmSpec.build("APA", 5, 0.25, label="full", order=3)
    b = AlgorithmSpec.build("APA", 5, 0.25, label="spu", order=3, blocks=5, selected=5)
    res = sim.run_monte_carlo(sc, [a, b])
    np.testing.assert_allclose(res["spu"].mse, res["full"].mse, rtol=1e-9, atol=1e-18)


def test_divergent_trials_are_counted():
    sc = static_scenario(n_iters=3000, n_trials=2, noise=1e-3)
    bad = AlgorithmSpec.build("LMS", 5, 1.0, label="bad")
    ok = AlgorithmSpec.build("NLMS", 5, 0.5, label="ok")
    with np.errstate(all="ignore"):
        res = sim.run_monte_carlo(sc, [bad, ok])
    assert res["bad"].diverged == 2 and res["bad"].n_trials == 0
    assert np.all(np.isnan(res["bad"].mse))
    assert res["ok"].diverged == 0
    assert [t for t, _ in res.divergences["bad"]] == [0, 1]


def test_trajectory_window():
    sc = small_scenario(n_iters=1500, n_trials=1)
    out = sim.run_trial(sc, sim.paper_algorithms()[1:2], sim.trial_rng(sc.seed, 0))["NLMS"]
    t = out.trajectory
    assert t.tap_index == 2
    np.testing.assert_array_equal(t.iterations, np.arange(1000, 1500))
    assert t.true_amplitude.shape == t.estimated_amplitude.shape == (500,)
    assert np.all(t.true_amplitude >= 0) and np.all(t.estimated_amplitude >= 0)


# -- sweeps


def test_sweep_stepsize_rows():
    sc = small_scenario(n_iters=200, n_trials=2)
    algs = sim.paper_algorithms()[1:2]
    rows = sim.sweep_stepsize(sc, algs, [0.1])
    assert len(rows) == 1 and rows[0]["mu"] == 0.1 and rows[0]["diverged"] == 0
    with pytest.raises(ConfigError):
        sim.sweep_stepsize(sc, algs, [0.0])


def test_sweep_stepsize_small_step_is_worse_than_tuned():
    sc = small_scenario(n_iters=3000, n_trials=3)
    rows = sim.sweep_stepsize(sc, sim.paper_algorithms()[1:2], [0.005, 0.3])
    assert rows[0]["mse"] >= rows[1]["mse"]


def test_sweep_doppler_shape():
    sc = small_scenario(n_iters=100, n_trials=1)
    algs = sim.paper_algorithms()[1:2]
    grid = [10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0]
    rows = sim.sweep_doppler(sc, algs, grid, moment_draws=2000)
    assert [r["doppler_hz"] for r in rows] == grid
    assert all(r["mu"] > 0 for r in rows)
    assert sim.sweep_doppler(sc, [], grid) == []
    with pytest.raises(ConfigError):
        sim.sweep_doppler(sc, algs, [-1.0])


def test_analysis_inputs_use_profile_rms():
    sc = sim.paper_scenario()
    spec = sim.paper_algorithms()[1]
    from lcapa import analysis

    m = analysis.estimate_moments(5, spec.config, spec.algorithm, None, 1000, np.random.default_rng(0))
    inp = sim.analysis_inputs(sc, spec, m)
    np.testing.assert_array_equal(inp.w_t, [0, 0, 1, 0, 1])
    assert inp.mu == 0.1 and inp.alpha == 0.9 and inp.psi == 1e-4


# -- fading CDF


def test_fading_cdf_median_and_support():
    out = sim.fading_cdf(FadingConfig(10.0, 1e-3), 200_000, np.random.default_rng(0))
    amp = out["amplitude"]
    assert np.median(amp) == pytest.approx(math.sqrt(math.log(2)), rel=0.01)
    assert out["rayleigh_cdf"][0] >= 0 and np.all(amp > 0)
    assert np.all(np.diff(out["empirical_cdf"]) > 0)


def test_fading_cdf_ks():
    out = sim.fading_cdf(FadingConfig(10.0, 1e-3), 1_000_000, np.random.default_rng(1))
    assert np.max(np.abs(out["empirical_cdf"] - out["rayleigh_cdf"])) < 0.005


def test_ks_rayleigh_against_exact_draws():
    z = fading.complex_gaussian(np.random.default_rng(2), 100_000, 2.0)
    assert sim.ks_rayleigh(z, 2.0) < 0.01
    assert sim.ks_rayleigh(z, 1.0) > 0.1


def test_fading_cdf_minimum_samples():
    with pytest.raises(ValueError):
        sim.fading_cdf(FadingConfig(10.0, 1e-3), 10, np.random.default_rng(0))
