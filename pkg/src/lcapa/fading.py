"""Rayleigh fading sequences and the cyclic + random nonstationary channel.

Two kinds of time variation are modelled here:

* per-path Rayleigh fading, generated with the first-order autoregressive
  approximation ``x(t) = r1 x(t-1) + sqrt(1 - r1^2) eta(t)`` where
  ``r1 = J0(2 pi f_D T_s)`` is the lag-one Jakes autocorrelation;
* a channel ``w_o(n) = (w_t + xi(n)) exp(j psi n)`` whose random part ``xi``
  follows an AR(1) recursion and whose phase rotates with a carrier
  frequency offset ``psi`` (radians per sample).

All stepping functions are pure: they take a state value and return a new one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import signal, special

__all__ = [
    "FadingConfig",
    "FadingProcessState",
    "MultipathProfile",
    "NonstationaryModel",
    "ChannelState",
    "bessel_j0",
    "jakes_autocorr",
    "doppler_spectrum",
    "complex_gaussian",
    "init_fading",
    "step_fading",
    "generate_fading",
    "impulse_response",
    "frequency_response",
    "init_channel",
    "step_channel",
    "channel_trajectory",
    "rotate_cfo",
    "profile_taps",
    "two_ray_profile",
    "PROFILES",
]


def bessel_j0(y):
    """Zeroth-order Bessel function of the first kind.

    Evaluates ``(1/pi) * integral_0^pi cos(y sin(theta)) dtheta``. Accepts a
    scalar or an array; raises ``ValueError`` on non-finite input.
    """
    y_arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y_arr)):
        raise ValueError("bessel_j0 requires finite arguments")
    out = special.j0(y_arr)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FadingConfig:
    """Doppler frequency (Hz), sample period (s) and target power of a fading path."""

    doppler_hz: float
    sample_period_s: float
    variance: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.doppler_hz) and self.doppler_hz >= 0):
            raise ValueError(f"doppler_hz must be >= 0, got {self.doppler_hz}")
        if not (math.isfinite(self.sample_period_s) and self.sample_period_s > 0):
            raise ValueError(f"sample_period_s must be > 0, got {self.sample_period_s}")
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"variance must be > 0, got {self.variance}")

    @property
    def r1(self) -> float:
        return bessel_j0(2.0 * math.pi * self.doppler_hz * self.sample_period_s)


def jakes_autocorr(lag: int, cfg: FadingConfig) -> float:
    """Normalised autocorrelation ``J0(2 pi f_D T_s lag)`` of a Jakes fading path."""
    if lag < 0:
        raise ValueError("lag must be non-negative; pass |k| for negative lags")
    return bessel_j0(2.0 * math.pi * cfg.doppler_hz * cfg.sample_period_s * lag)


def doppler_spectrum(f: float, cfg: FadingConfig) -> float:
    """U-shaped Jakes power spectral density at frequency ``f`` (Hz).

    Uses ``1 / (pi f_D sqrt(1 - (f/f_D)^2))``. Only defined strictly inside the
    band ``|f| < f_D``; the band edges are integrable singularities.
    """
    fd = cfg.doppler_hz
    if fd <= 0:
        raise ValueError("doppler_spectrum needs a positive Doppler frequency")
    if not math.isfinite(f) or abs(f) >= fd:
        raise ValueError(f"|f| must be < f_D = {fd}, got {f}")
    ratio = f / fd
    return 1.0 / (math.pi * fd * math.sqrt(1.0 - ratio * ratio))


def complex_gaussian(rng: np.random.Generator, size=None, variance: float = 1.0):
    """Circular complex Gaussian draws with ``E|z|^2 = variance``."""
    scale = math.sqrt(variance / 2.0)
    if size is None:
        re, im = rng.standard_normal(2)
        return complex(scale * re, scale * im)
    shape = (size,) if np.isscalar(size) else tuple(size)
    z = rng.standard_normal(shape + (2,))
    return scale * (z[..., 0] + 1j * z[..., 1])


@dataclass(frozen=True)
class FadingProcessState:
    """Current value of one (or several independent) AR(1) fading paths."""

    value: complex | np.ndarray
    r1: float
    variance: float = 1.0


def init_fading(cfg: FadingConfig, rng: np.random.Generator, size=None) -> FadingProcessState:
    """Stationary start: the first value is already distributed as CN(0, variance)."""
    value = complex_gaussian(rng, size, cfg.variance)
    return FadingProcessState(value=value, r1=cfg.r1, variance=cfg.variance)


def step_fading(state: FadingProcessState, noise) -> FadingProcessState:
    """Advance the AR(1) fading recursion by one sample.

    ``noise`` is a unit-variance circular Gaussian draw (scalar or array shaped
    like ``state.value``).
    """
    r1 = state.r1
    if not 0.0 <= abs(r1) <= 1.0:
        raise ValueError(f"r1 must lie in [-1, 1], got {r1}")
    gain = math.sqrt(max(0.0, 1.0 - r1 * r1) * state.variance)
    value = r1 * state.value + gain * noise
    if not np.all(np.isfinite(value)):
        raise ValueError("non-finite fading value")
    return replace(state, value=value)


def generate_fading(cfg: FadingConfig, n: int, rng: np.random.Generator, paths: Optional[int] = None):
    """Generate ``n`` consecutive samples of stationary AR(1) Rayleigh fading.

    Returns an array of shape ``(n,)`` (or ``(n, paths)`` for independent
    paths). The first sample is the stationary initial draw; each following
    sample applies :func:`step_fading` with a fresh unit-variance innovation.
    Drawing order matches repeated calls of :func:`init_fading` then
    :func:`step_fading` on the same generator.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    size = None if paths is None else paths
    state = init_fading(cfg, rng, size)
    shape = (n - 1,) if paths is None else (n - 1, paths)
    innovations = complex_gaussian(rng, shape, 1.0) if n > 1 else np.zeros(shape, complex)
    r1 = state.r1
    gain = math.sqrt(max(0.0, 1.0 - r1 * r1) * cfg.variance)
    x0 = np.atleast_1d(np.asarray(state.value, dtype=complex))
    out = np.empty((n,) + x0.shape, dtype=complex)
    out[0] = x0
    if n > 1:
        # y[k] = r1 y[k-1] + gain * eta[k], seeded with y[-1] = x0
        zi = (r1 * x0)[np.newaxis, :]
        out[1:], _ = signal.lfilter([gain], [1.0, -r1], innovations.reshape(n - 1, -1), axis=0, zi=zi)
    return out[:, 0] if paths is None else out


@dataclass(frozen=True)
class MultipathProfile:
    """Tapped-delay-line layout: channel length and the active (index, power) taps."""

    length: int
    active_taps: tuple[tuple[int, float], ...]
    name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "active_taps", tuple((int(i), float(p)) for i, p in self.active_taps))
        if self.length < 1:
            raise ValueError("profile length must be >= 1")
        idx = [i for i, _ in self.active_taps]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("active tap indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= self.length):
            raise ValueError(f"active tap indices must lie in [0, {self.length})")
        if any(p <= 0 for _, p in self.active_taps):
            raise ValueError("every active tap power must be > 0")

    @property
    def indices(self) -> list[int]:
        return [i for i, _ in self.active_taps]

    @property
    def powers(self) -> np.ndarray:
        return np.array([p for _, p in self.active_taps], dtype=float)


def two_ray_profile(delay_spread_s: float, sample_period_s: float, name: Optional[str] = None) -> MultipathProfile:
    """Equal-power two-ray profile whose delay spread (half the ray separation) matches."""
    sep = max(1, int(round(2.0 * delay_spread_s / sample_period_s)))
    return MultipathProfile(length=sep + 1, active_taps=((0, 1.0), (sep, 1.0)), name=name)


PROFILES = {
    "paper-m5": MultipathProfile(5, ((2, 1.0), (4, 1.0)), "paper-m5"),
    "paper-m7": MultipathProfile(7, ((2, 1.0), (4, 1.0)), "paper-m7"),
    # synthetic stand-ins carrying only the TU / HT delay spreads, at T_s = 0.8 us
    "tu": two_ray_profile(1.06e-6, 0.8e-6, "tu"),
    "ht": two_ray_profile(5.04e-6, 0.8e-6, "ht"),
}


def impulse_response(profile: MultipathProfile, fading_values) -> np.ndarray:
    """Place ``sqrt(power_k) * x_k`` at each active tap of a length-M zero vector."""
    values = np.asarray(fading_values, dtype=complex).reshape(-1)
    if values.size != len(profile.active_taps):
        raise ValueError(
            f"expected {len(profile.active_taps)} fading values, got {values.size}"
        )
    h = np.zeros(profile.length, dtype=complex)
    if values.size:
        h[profile.indices] = np.sqrt(profile.powers) * values
    return h


def frequency_response(h, n_points: int) -> np.ndarray:
    """DFT of the impulse response at ``n_points`` uniformly spaced frequencies."""
    h = np.asarray(h, dtype=complex)
    if n_points < h.size:
        raise ValueError(f"n_points ({n_points}) must be >= len(h) ({h.size})")
    return np.fft.fft(h, n_points)


@dataclass(frozen=True)
class NonstationaryModel:
    """Mean taps, AR(1) coefficient, innovation std and CFO of the channel drift.

    The innovation covariance is ``q_std**2 * I`` (per complex component).
    """

    mean_taps: np.ndarray
    alpha: float
    q_std: float
    cfo_rad_per_sample: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mean_taps", np.asarray(self.mean_taps, dtype=complex).reshape(-1))
        if not abs(self.alpha) < 1:
            raise ValueError(f"|alpha| must be < 1, got {self.alpha}")
        if not self.q_std >= 0:
            raise ValueError(f"q_std must be >= 0, got {self.q_std}")

    @property
    def length(self) -> int:
        return self.mean_taps.size

    @property
    def q_cov(self) -> np.ndarray:
        return self.q_std ** 2 * np.eye(self.length)

    @property
    def xi_variance(self) -> float:
        """Stationary per-tap variance ``q_std^2 / (1 - alpha^2)`` of the random part."""
        return self.q_std ** 2 / (1.0 - self.alpha ** 2)

    @classmethod
    def from_doppler(cls, mean_taps, cfg: FadingConfig, cfo_rad_per_sample: float = 0.0):
        """Couple the drift to the Doppler rate: ``alpha = r1``, ``Q = sqrt(1 - alpha^2) I``."""
        alpha = cfg.r1
        if alpha >= 1.0:
            alpha = math.nextafter(1.0, 0.0)
        q_var = math.sqrt(max(0.0, 1.0 - alpha * alpha))
        return cls(mean_taps, alpha, math.sqrt(q_var), cfo_rad_per_sample)


@dataclass(frozen=True)
class ChannelState:
    """Random part ``xi(n)`` of the drifting channel at sample index ``n``."""

    xi: np.ndarray
    n: int
    model: NonstationaryModel = field(repr=False)

    def true_taps(self) -> np.ndarray:
        return (self.model.mean_taps + self.xi) * np.exp(1j * self.model.cfo_rad_per_sample * self.n)


def init_channel(model: NonstationaryModel, rng: Optional[np.random.Generator] = None, stationary: bool = False) -> ChannelState:
    """Start at ``n = 0`` with ``xi = 0``, or with a stationary draw when ``stationary``."""
    if stationary and model.q_std > 0:
        if rng is None:
            raise ValueError("a generator is required for a stationary start")
        xi = complex_gaussian(rng, model.length, model.xi_variance)
    else:
        xi = np.zeros(model.length, dtype=complex)
    return ChannelState(xi=xi, n=0, model=model)


def step_channel(state: ChannelState, rng: np.random.Generator):
    """Return the advanced state and the true taps ``w_o(n)`` at the current index."""
    model = state.model
    taps = state.true_taps()
    q = complex_gaussian(rng, model.length, model.q_std ** 2)
    xi = model.alpha * state.xi + q
    return ChannelState(xi=xi, n=state.n + 1, model=model), taps


def channel_trajectory(state: ChannelState, n_steps: int, rng: np.random.Generator):
    """Vectorised equivalent of ``n_steps`` calls to :func:`step_channel`.

    Consumes the generator in the same order, so the taps are identical to
    the stepwise path. Returns ``(final_state, taps)`` with ``taps`` shaped
    ``(n_steps, M)``.
    """
    model = state.model
    m = model.length
    q = complex_gaussian(rng, (n_steps, m), model.q_std ** 2)
    xi = np.empty((n_steps + 1, m), dtype=complex)
    xi[0] = state.xi
    if n_steps:
        xi[1:], _ = signal.lfilter([1.0], [1.0, -model.alpha], q, axis=0, zi=(model.alpha * state.xi)[np.newaxis, :])
    n = state.n + np.arange(n_steps)
    taps = (model.mean_taps + xi[:-1]) * np.exp(1j * model.cfo_rad_per_sample * n)[:, np.newaxis]
    return ChannelState(xi=xi[-1], n=state.n + n_steps, model=model), taps


def rotate_cfo(taps: np.ndarray, psi: float, start: int = 0) -> np.ndarray:
    """Apply ``exp(j psi n)`` row-wise to a ``(n_steps, M)`` tap array."""
    n = start + np.arange(taps.shape[0])
    return taps * np.exp(1j * psi * n)[:, np.newaxis]


def profile_taps(profile: MultipathProfile, fading: np.ndarray) -> np.ndarray:
    """Scatter a ``(n_steps, n_active)`` fading array into ``(n_steps, M)`` taps."""
    fading = np.asarray(fading, dtype=complex)
    out = np.zeros((fading.shape[0], profile.length), dtype=complex)
    if profile.active_taps:
        out[:, profile.indices] = fading * np.sqrt(profile.powers)
    return out
