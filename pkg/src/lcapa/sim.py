"""Monte Carlo harness: learning curves, step-size and Doppler sweeps, tracking.

Every trial draws its data once (BPSK input, channel trajectory, noise) and
runs all requested estimators on the same realisation, so comparisons
between algorithms use common random numbers. Trial ``i`` of a run seeded
with ``seed`` always uses ``SeedSequence(seed, spawn_key=(i,))``; adding
trials never changes earlier ones.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

from . import analysis, fading
from .errors import ConfigError, DivergenceError
from .estimators import (
    ApaConfig,
    EstimatorState,
    RegressorHistory,
    SpuConfig,
    init_state,
    preset,
    spu_apa_step,
)
from .fading import FadingConfig, MultipathProfile, NonstationaryModel

__all__ = [
    "Scenario",
    "AlgorithmSpec",
    "LearningCurve",
    "TrajectoryRecord",
    "TrialOutput",
    "MonteCarloResult",
    "paper_scenario",
    "paper_algorithms",
    "trial_rng",
    "bpsk_source",
    "synthesize",
    "run_trial",
    "run_monte_carlo",
    "steady_state_mse",
    "sweep_stepsize",
    "sweep_doppler",
    "fading_cdf",
    "ks_rayleigh",
    "analysis_inputs",
]

CHANNEL_MODES = ("rayleigh_taps", "ar1_cfo")
STEADY_FRACTION = 0.2
TRAJECTORY_WINDOW = (1000, 2000)


@dataclass(frozen=True)
class Scenario:
    """Channel, noise and run-size settings of one experiment."""

    profile: MultipathProfile
    model: NonstationaryModel
    fading: FadingConfig
    channel_mode: str = "rayleigh_taps"
    noise_var: float = 1e-3
    n_iters: int = 3000
    n_trials: int = 30
    seed: int = 20100
    input_source: str = "bpsk"
    stationary_start: bool = True

    def __post_init__(self):
        if self.channel_mode not in CHANNEL_MODES:
            raise ConfigError(f"channel mode must be one of {CHANNEL_MODES}", "channel.mode")
        if self.n_iters < 1:
            raise ConfigError("n_iters must be >= 1", "run.iters")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1", "run.trials")
        if not self.noise_var >= 0:
            raise ConfigError("noise variance must be >= 0", "noise_var")
        if self.input_source != "bpsk":
            raise ConfigError("only the 'bpsk' input source is supported", "input_source")
        if self.model.length != self.profile.length:
            raise ConfigError(
                f"mean taps have length {self.model.length} but the profile has M={self.profile.length}",
                "channel.mean_taps",
            )

    @property
    def filter_length(self) -> int:
        return self.profile.length

    def with_doppler(self, doppler_hz: float) -> "Scenario":
        return replace(self, fading=replace(self.fading, doppler_hz=doppler_hz))


@dataclass(frozen=True)
class AlgorithmSpec:
    """A labelled estimator: APA-family row, its configuration and optional SPU partition."""

    label: str
    algorithm: str
    config: ApaConfig
    spu: Optional[SpuConfig] = None

    @classmethod
    def build(cls, algorithm, filter_length, mu, label=None, blocks=None, selected=None, **overrides):
        cfg, tag = preset(algorithm, filter_length, mu, **overrides)
        spu = None
        if blocks is not None:
            spu = SpuConfig.for_length(filter_length, blocks, selected)
            spu.check(cfg)
        elif selected is not None:
            raise ConfigError("'selected' requires 'blocks'", "algorithms.selected")
        return cls(label or tag, tag, cfg, spu)

    def with_mu(self, mu: float) -> "AlgorithmSpec":
        return replace(self, config=replace(self.config, step_size=mu))


@dataclass
class LearningCurve:
    """Per-iteration mean of ``|e(n)|^2`` over the trials that did not diverge."""

    label: str
    mse: np.ndarray
    weight_error: np.ndarray
    n_trials: int
    diverged: int = 0
    meta: dict = field(default_factory=dict)

    def steady_state(self, fraction: float = STEADY_FRACTION) -> float:
        return steady_state_mse(self.mse, fraction)

    def steady_state_weight_error(self, fraction: float = STEADY_FRACTION) -> float:
        return steady_state_mse(self.weight_error, fraction)


@dataclass
class TrajectoryRecord:
    """Amplitude of one true tap and its estimate over an iteration window."""

    tap_index: int
    iterations: np.ndarray
    true_amplitude: np.ndarray
    estimated_amplitude: np.ndarray


@dataclass
class TrialOutput:
    sq_error: Optional[np.ndarray]
    weight_error: Optional[np.ndarray]
    final_weights: Optional[np.ndarray]
    trajectory: Optional[TrajectoryRecord]
    diverged_at: Optional[int] = None
    singular_fallbacks: int = 0


@dataclass
class MonteCarloResult:
    curves: dict
    trajectories: dict
    divergences: dict

    def __getitem__(self, label) -> LearningCurve:
        return self.curves[label]


def paper_scenario(m: int = 5, **kw) -> Scenario:
    """Two Rayleigh rays at taps 2 and 4, sigma_v^2 = 1e-3, T_s = 0.8 us, alpha = 0.9,
    sigma_q^2 = 1e-4, psi = 1e-4, f_D = 10 Hz."""
    profile = fading.PROFILES[f"paper-m{m}"]
    model = NonstationaryModel(
        mean_taps=np.zeros(profile.length), alpha=0.9, q_std=math.sqrt(1e-4), cfo_rad_per_sample=1e-4
    )
    base = dict(
        profile=profile,
        model=model,
        fading=FadingConfig(doppler_hz=10.0, sample_period_s=0.8e-6),
        channel_mode="rayleigh_taps",
        noise_var=1e-3,
    )
    base.update(kw)
    return Scenario(**base)


def paper_algorithms(m: int = 5) -> list:
    """Estimator line-up used for the learning-curve comparison."""
    return [
        AlgorithmSpec.build("LMS", m, 0.01),
        AlgorithmSpec.build("NLMS", m, 0.1),
        AlgorithmSpec.build("APA", m, 0.25, label="APA(K=2)", order=2),
        AlgorithmSpec.build("APA", m, 0.25, label="APA(K=3)", order=3),
        AlgorithmSpec.build("PRA", m, 0.25, label="PRA(K=3)", order=3),
        AlgorithmSpec.build("APA", m, 0.25, label="LC-APA(K=3,B=5,S=2)", order=3, blocks=5, selected=2),
    ]


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def bpsk_source(n: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. equiprobable ±1 symbols."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.where(rng.random(n) < 0.5, -1.0, 1.0)


def true_channel(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    """True taps ``w_o(n)`` for ``n = 0 .. n_iters-1``, shaped ``(n_iters, M)``."""
    model = scenario.model
    n = scenario.n_iters
    if scenario.channel_mode == "ar1_cfo":
        state = fading.init_channel(model, rng, scenario.stationary_start)
        _, taps = fading.channel_trajectory(state, n, rng)
        return taps
    # rayleigh_taps: fading rays replace the constant mean; the AR(1) part is added when q_std > 0
    prof = scenario.profile
    paths = fading.generate_fading(scenario.fading, n, rng, paths=len(prof.active_taps))
    taps = fading.profile_taps(prof, paths)
    if model.q_std > 0:
        drift = replace(model, mean_taps=np.zeros(model.length), cfo_rad_per_sample=0.0)
        state = fading.init_channel(drift, rng, scenario.stationary_start)
        _, xi = fading.channel_trajectory(state, n, rng)
        taps = taps + xi
    return fading.rotate_cfo(taps, model.cfo_rad_per_sample)


def synthesize(scenario: Scenario, rng: np.random.Generator):
    """Draw one realisation: ``(regressor rows u(n), desired d(n), true taps w_o(n))``.

    ``d(n) = u(n) w_o(n) + v(n)`` with ``u(n) = [x(n), ..., x(n-M+1)]`` and
    zero input before ``n = 0``.
    """
    M, n = scenario.filter_length, scenario.n_iters
    x = bpsk_source(n, rng)
    taps = true_channel(scenario, rng)
    v = fading.complex_gaussian(rng, n, scenario.noise_var) if scenario.noise_var > 0 else np.zeros(n, complex)
    padded = np.concatenate((np.zeros(M - 1), x))
    rows = sliding_window_view(padded, M)[:, ::-1].astype(complex)
    d = np.einsum("nm,nm->n", rows, taps) + v
    return rows, d, taps


def _run_estimator(spec: AlgorithmSpec, rows, d, taps, track_tap: int, window) -> TrialOutput:
    cfg = spec.config
    n_iters = rows.shape[0]
    hist = RegressorHistory.for_config(cfg)
    state = init_state(cfg)
    sq = np.empty(n_iters)
    werr = np.empty(n_iters)
    lo, hi = window
    lo, hi = min(lo, n_iters), min(hi, n_iters)
    est = np.empty(hi - lo)
    try:
        # overflow on the way to divergence is expected; it is reported through DivergenceError
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(n_iters):
                hist.push(rows[i], d[i])
                w = state.weights
                diff = taps[i] - w
                werr[i] = np.vdot(diff, diff).real
                if lo <= i < hi:
                    est[i - lo] = abs(w[track_tap])
                state, e = spu_apa_step(state, hist, cfg, spec.spu, spec.algorithm)
                sq[i] = abs(e[0]) ** 2
    except DivergenceError as exc:
        return TrialOutput(None, None, None, None, diverged_at=exc.iteration)
    traj = TrajectoryRecord(
        tap_index=track_tap,
        iterations=np.arange(lo, hi),
        true_amplitude=np.abs(taps[lo:hi, track_tap]),
        estimated_amplitude=est,
    )
    return TrialOutput(sq, werr, state.weights, traj, singular_fallbacks=state.singular_fallbacks)


def run_trial(scenario: Scenario, algorithms: Sequence[AlgorithmSpec], rng: np.random.Generator, window=TRAJECTORY_WINDOW) -> dict:
    """Run every estimator on one shared realisation; returns ``{label: TrialOutput}``."""
    rows, d, taps = synthesize(scenario, rng)
    idx = scenario.profile.indices
    track = idx[0] if idx else 0
    return {spec.label: _run_estimator(spec, rows, d, taps, track, window) for spec in algorithms}


def _trial_job(args):
    scenario, algorithms, trial = args
    return run_trial(scenario, algorithms, trial_rng(scenario.seed, trial))


def run_monte_carlo(scenario: Scenario, algorithms: Sequence[AlgorithmSpec], workers: Optional[int] = None) -> MonteCarloResult:
    """Average squared error and weight error over ``n_trials`` independent trials.

    Divergent trials are dropped from that algorithm's average and counted.
    Reduction is a plain sum in trial order, so the result does not depend on
    ``workers``.
    """
    labels = [a.label for a in algorithms]
    if len(set(labels)) != len(labels):
        raise ConfigError("algorithm labels must be unique", "algorithms.label")
    jobs = [(scenario, list(algorithms), t) for t in range(scenario.n_trials)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_job, jobs))
    else:
        results = [_trial_job(j) for j in jobs]

    n = scenario.n_iters
    curves, trajectories, divergences = {}, {}, {}
    for spec in algorithms:
        sq_sum = np.zeros(n)
        we_sum = np.zeros(n)
        ok = 0
        diverged = []
        fallbacks = 0
        for t, res in enumerate(results):
            out = res[spec.label]
            if out.diverged_at is not None:
                diverged.append((t, out.diverged_at))
                continue
            sq_sum += out.sq_error
            we_sum += out.weight_error
            fallbacks += out.singular_fallbacks
            ok += 1
            if spec.label not in trajectories:
                trajectories[spec.label] = out.trajectory
        with np.errstate(invalid="ignore", divide="ignore"):
            mse = sq_sum / ok if ok else np.full(n, np.nan)
            werr = we_sum / ok if ok else np.full(n, np.nan)
        curves[spec.label] = LearningCurve(
            spec.label,
            mse,
            werr,
            n_trials=ok,
            diverged=len(diverged),
            meta={"algorithm": spec.algorithm, "config": spec.config, "spu": spec.spu, "singular_fallbacks": fallbacks},
        )
        divergences[spec.label] = diverged
    return MonteCarloResult(curves, trajectories, divergences)


def steady_state_mse(curve, fraction: float = STEADY_FRACTION) -> float:
    """Mean of the final ``fraction`` of a learning curve."""
    curve = np.asarray(curve)
    k = max(1, int(round(fraction * curve.size)))
    return float(np.mean(curve[-k:]))


def sweep_stepsize(scenario: Scenario, algorithms: Sequence[AlgorithmSpec], mu_list: Sequence[float], workers=None) -> list:
    """Rows ``{mu, algorithm, mse, diverged}``; every cell reuses the same trial seeds."""
    if any(mu <= 0 for mu in mu_list):
        raise ConfigError("step sizes must be positive", "sweep.mu")
    rows = []
    for mu in mu_list:
        specs = [a.with_mu(mu) for a in algorithms]
        res = run_monte_carlo(scenario, specs, workers)
        for a in specs:
            c = res[a.label]
            mse = c.steady_state() if c.n_trials else math.nan
            rows.append({"mu": float(mu), "algorithm": a.label, "mse": mse, "diverged": c.diverged})
    return rows


def analysis_inputs(scenario: Scenario, spec: AlgorithmSpec, moments: analysis.RegressorMoments, mu: Optional[float] = None):
    """Steady-state model inputs for ``spec`` running on ``scenario``.

    In ``rayleigh_taps`` mode the nearly static fading rays play the role of
    the constant mean; their RMS amplitude ``sqrt(power)`` stands in for ``w_t``.
    """
    model = scenario.model
    if scenario.channel_mode == "rayleigh_taps":
        w_t = fading.impulse_response(scenario.profile, np.ones(len(scenario.profile.active_taps)))
    else:
        w_t = model.mean_taps
    return analysis.SteadyStateInputs(
        mu=spec.config.step_size if mu is None else mu,
        psi=model.cfo_rad_per_sample,
        alpha=model.alpha,
        q_cov=model.q_cov,
        w_t=w_t,
        noise_var=scenario.noise_var,
        moments=moments,
    )


def default_mu_grid(moments: analysis.RegressorMoments, points: int = 200) -> np.ndarray:
    _, hi = analysis.stability_interval(moments)
    hi = min(hi, 2.0) if math.isfinite(hi) else 2.0
    return np.linspace(hi / points, hi, points, endpoint=False)


def sweep_doppler(
    scenario: Scenario,
    algorithms: Sequence[AlgorithmSpec],
    doppler_list: Sequence[float],
    mu_grid: Optional[Sequence[float]] = None,
    moment_draws: int = 100_000,
    workers=None,
    closure: str = "isotropic",
) -> list:
    """Rows ``{doppler_hz, algorithm, mu, mse, diverged}``.

    Each algorithm runs at the step size minimising the analytic ``T(mu)``.
    Regressor moments depend only on the input statistics, so they are
    estimated once per algorithm; the drift parameters are re-read from the
    scenario for each Doppler value.
    """
    if any(f < 0 for f in doppler_list):
        raise ConfigError("Doppler frequencies must be >= 0", "sweep.doppler")
    if not algorithms:
        return []
    rng = np.random.default_rng(np.random.SeedSequence(scenario.seed, spawn_key=(2**31,)))
    moments = {
        a.label: analysis.estimate_moments(scenario.filter_length, a.config, a.algorithm, a.spu, moment_draws, rng)
        for a in algorithms
    }
    rows = []
    for fd in doppler_list:
        sc = scenario.with_doppler(float(fd))
        specs = []
        for a in algorithms:
            m = moments[a.label]
            grid = default_mu_grid(m) if mu_grid is None else mu_grid
            mu = analysis.optimal_step(analysis_inputs(sc, a, m), grid, closure)
            specs.append(a.with_mu(mu))
        res = run_monte_carlo(sc, specs, workers)
        for a in specs:
            c = res[a.label]
            mse = c.steady_state() if c.n_trials else math.nan
            rows.append(
                {"doppler_hz": float(fd), "algorithm": a.label, "mu": a.config.step_size, "mse": mse, "diverged": c.diverged}
            )
    return rows


def fading_cdf(cfg: FadingConfig, n_samples: int, rng: np.random.Generator, seq_len: int = 10) -> dict:
    """Empirical amplitude CDF of AR(1) fading against the Rayleigh CDF ``1 - exp(-a^2 / sigma^2)``.

    Samples are pooled from ``n_samples / seq_len`` independent stationary
    sequences of ``seq_len`` samples each. A single long sequence at a low
    Doppler rate has very few independent samples; pooling keeps the
    empirical CDF resolvable while every sample still comes from the
    recursion.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    n_seq = -(-n_samples // seq_len)
    x = fading.generate_fading(cfg, seq_len, rng, paths=n_seq).T.reshape(-1)[:n_samples]
    amp = np.sort(np.abs(x))
    return {
        "amplitude": amp,
        "empirical_cdf": np.arange(1, amp.size + 1) / amp.size,
        "rayleigh_cdf": 1.0 - np.exp(-amp ** 2 / cfg.variance),
    }


def ks_rayleigh(samples, variance: float = 1.0) -> float:
    """Kolmogorov-Smirnov distance between ``|samples|`` and the Rayleigh law of a CN(0, variance) draw."""
    amp = np.abs(np.asarray(samples))
    return float(stats.kstest(amp, stats.rayleigh(scale=math.sqrt(variance / 2)).cdf).statistic)
