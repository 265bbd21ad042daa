"""Steady-state mean-square weight error of the partial-update APA family.

For a channel drifting as ``w_o(n) = (w_t + xi(n)) exp(j psi n)`` with
``xi(n+1) = alpha xi(n) + q(n)``, the weight error power settles at

    T(mu) = c * (mu^2 sigma_v^2 g + F) / (2 mu tr(R_N) - mu^2 tr(Lambda))

with ``R_N = E[U_h^H C_h U_h]``, ``Lambda = E[P P^H]`` (``P = U_h^H C_h U_h``),
``g = tr E[U_h^H C_h C_h^H U_h]`` and ``F`` the drift contribution assembled
from ``H``, ``Y``, ``F_alpha`` and ``F_beta`` below.

The trace recursion behind the formula needs a closure for ``tr(Z R_N)``
(``Z`` the error covariance). ``closure="paper"`` uses ``tr(R_N) tr(Z)``
(``c = 1``); ``closure="isotropic"`` assumes ``Z = (T/M) I`` which gives
``tr(R_N) tr(Z) / M`` and ``c = M``. The two agree for ``M = 1``; for white
regressors only the isotropic closure matches simulation. Both have the same
minimiser in ``mu``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import AnalysisError, StabilityError
from .estimators import ApaConfig, SpuConfig

__all__ = [
    "RegressorMoments",
    "SteadyStateInputs",
    "MswePrediction",
    "bpsk_regressors",
    "estimate_moments",
    "theta",
    "rho_power",
    "steady_state_H",
    "steady_state_Y",
    "f_terms",
    "predict_mswe",
    "optimal_step",
    "stability_interval",
]

CLOSURES = ("isotropic", "paper")


@dataclass(frozen=True)
class RegressorMoments:
    """Second- and fourth-order regressor moments, embedded as M x M matrices.

    Unselected columns of a partial-update draw contribute zeros, so the
    matrices are M x M regardless of which blocks a draw picked.
    """

    r_n: np.ndarray
    lam: np.ndarray
    g_trace: float
    n_samples: int

    @property
    def size(self) -> int:
        return self.r_n.shape[0]


@dataclass(frozen=True)
class SteadyStateInputs:
    mu: float
    psi: float
    alpha: float
    q_cov: np.ndarray
    w_t: np.ndarray
    noise_var: float
    moments: RegressorMoments

    def with_mu(self, mu: float) -> "SteadyStateInputs":
        return SteadyStateInputs(mu, self.psi, self.alpha, self.q_cov, self.w_t, self.noise_var, self.moments)


@dataclass(frozen=True)
class MswePrediction:
    t_mu: float
    t_paper: float
    closure: str
    rho_power: float
    F: float
    numerator: float
    denominator: float
    H: np.ndarray = field(repr=False)
    Y: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    F_alpha: np.ndarray = field(repr=False)
    F_beta: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        """Scalar view of the prediction and its intermediates (for CSV output)."""
        def c(name, z):
            return {f"{name}_re": float(np.real(z)), f"{name}_im": float(np.imag(z))}

        out = {
            "t_mu": self.t_mu,
            "t_paper": self.t_paper,
            "closure": self.closure,
            "rho_power": self.rho_power,
            "F": self.F,
            "numerator": self.numerator,
            "denominator": self.denominator,
            "norm_H": float(np.linalg.norm(self.H)),
            "tr_theta": float(np.trace(self.theta).real),
        }
        out.update(c("tr_Y", np.trace(self.Y)))
        out.update(c("tr_F_alpha", np.trace(self.F_alpha)))
        out.update(c("tr_F_beta", np.trace(self.F_beta)))
        return out


def bpsk_regressors(n_draws: int, filter_length: int, order: int, spacing: int, rng) -> np.ndarray:
    """Independent ``K x M`` regressor matrices built from fresh BPSK sequences.

    Each draw takes a length ``M + (K-1) D`` ±1 sequence and forms the
    tapped-delay rows ``u(n), u(n-D), ...``, so the shift structure of real
    regressors is kept while different draws are independent.
    """
    span = filter_length + (order - 1) * spacing
    x = rng.choice(np.array([-1.0, 1.0]), size=(n_draws, span))
    # u(n - i D)[k] = x(n - i D - k); column 0 of x is the newest sample
    idx = np.arange(order)[:, None] * spacing + np.arange(filter_length)[None, :]
    return x[:, idx].astype(complex)


def _batch_gain(U: np.ndarray, cfg: ApaConfig, algorithm: str) -> np.ndarray:
    """Per-draw ``C_h``, with the same pseudo-inverse fallback as the filter update."""
    n, K, _ = U.shape
    eye = np.eye(K)
    if algorithm == "LMS":
        return np.broadcast_to(eye.astype(complex), (n, K, K))
    G = U @ U.conj().transpose(0, 2, 1) + cfg.regularization * eye
    tr = np.trace(G, axis1=1, axis2=2).real
    lam_min = np.linalg.eigvalsh(G)[:, 0]
    singular = lam_min <= 1e-12 * np.where(tr > 0, tr / K, 1.0)
    C = np.empty((n, K, K), dtype=complex)
    ok = ~singular
    C[ok] = np.linalg.solve(G[ok], np.broadcast_to(eye.astype(complex), (int(ok.sum()), K, K)))
    if singular.any():
        C[singular] = np.linalg.pinv(G[singular], rcond=1e-10, hermitian=True)
    return C


def estimate_moments(
    filter_length: int,
    cfg: ApaConfig,
    algorithm: str,
    spu: Optional[SpuConfig],
    n_draws: int,
    rng: np.random.Generator,
    regressors: Optional[np.ndarray] = None,
    chunk: int = 20000,
) -> RegressorMoments:
    """Monte Carlo estimate of ``R_N``, ``Lambda`` and the noise-gain trace.

    Block selection is applied per draw exactly as in the filter update.
    ``regressors`` may supply the ``(n, K, M)`` draws directly (then
    ``n_draws`` and ``rng`` are ignored); otherwise BPSK draws are generated.
    """
    M = filter_length
    if regressors is None:
        if n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        batches = []
        left = n_draws
        while left:
            k = min(chunk, left)
            batches.append(lambda k=k: bpsk_regressors(k, M, cfg.order, cfg.spacing, rng))
            left -= k
    else:
        regressors = np.asarray(regressors, dtype=complex)
        if regressors.ndim == 2:
            regressors = regressors[None]
        batches = [lambda: regressors]

    r_sum = np.zeros((M, M), dtype=complex)
    l_sum = np.zeros((M, M), dtype=complex)
    g_sum = 0.0
    total = 0
    for make in batches:
        U = make()
        n = U.shape[0]
        if spu is not None and not spu.is_full:
            L = spu.block_len
            energy = (np.abs(U) ** 2).reshape(n, U.shape[1], spu.num_blocks, L).sum(axis=(1, 3))
            # same cyclic tie-break as the filter, with the start spread over draws
            cyclic = (np.arange(spu.num_blocks)[None, :] - (np.arange(n) % spu.num_blocks)[:, None]) % spu.num_blocks
            top = np.lexsort((cyclic, -energy), axis=1)[:, : spu.num_selected]
            mask = np.zeros((n, spu.num_blocks), dtype=bool)
            np.put_along_axis(mask, top, True, axis=1)
            U = U * np.repeat(mask, L, axis=1)[:, None, :]
        C = _batch_gain(U, cfg, algorithm)
        UH = U.conj().transpose(0, 2, 1)
        P = UH @ C @ U
        r_sum += P.sum(axis=0)
        l_sum += (P @ P.conj().transpose(0, 2, 1)).sum(axis=0)
        UHC = UH @ C
        g_sum += float(np.sum(np.abs(UHC) ** 2))
        total += n
    return RegressorMoments(r_n=r_sum / total, lam=l_sum / total, g_trace=g_sum / total, n_samples=total)


def theta(q_cov, alpha: float) -> np.ndarray:
    """Stationary covariance ``Q / (1 - |alpha|^2)`` of the AR(1) channel drift."""
    if not abs(alpha) < 1:
        raise ValueError(f"|alpha| must be < 1, got {alpha}")
    return np.asarray(q_cov, dtype=complex) / (1.0 - abs(alpha) ** 2)


def rho_power(w_t, alpha: float, psi: float, q_cov) -> float:
    """Mean per-sample drift power ``E||rho(n)||^2``."""
    q_cov = np.asarray(q_cov, dtype=complex)
    w_t = np.asarray(w_t, dtype=complex)
    th = theta(q_cov, alpha)
    z = cmath.exp(1j * psi)
    return float(
        np.trace(q_cov).real
        + abs(1 - z) ** 2 * np.vdot(w_t, w_t).real
        + abs(1 - alpha * z) ** 2 * np.trace(th).real
    )


def _solve(A: np.ndarray, B: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e14:
        raise AnalysisError(f"{what}: bracketed matrix is singular (cond={cond:.3g})")
    return np.linalg.solve(A, B)


def _right_solve(B: np.ndarray, A: np.ndarray, what: str) -> np.ndarray:
    """``B A^-1`` via a transposed solve."""
    return _solve(A.T, B.T, what).T


def steady_state_H(mu: float, r_n, psi: float, w_t) -> np.ndarray:
    """Steady-state mean weight error amplitude ``[I - mu R_N - e^{j psi} I]^-1 w_t (1 - e^{j psi})``."""
    r_n = np.atleast_2d(np.asarray(r_n, dtype=complex))
    w_t = np.asarray(w_t, dtype=complex).reshape(-1)
    I = np.eye(r_n.shape[0])
    z = cmath.exp(1j * psi)
    if np.all(w_t == 0) or z == 1:
        return np.zeros_like(w_t)
    return _solve(I - mu * r_n - z * I, w_t * (1 - z), "H")


def steady_state_Y(mu: float, r_n, psi: float, alpha: float, theta_m, q_cov) -> np.ndarray:
    """Steady-state cross-correlation amplitude between weight error and channel drift."""
    r_n = np.atleast_2d(np.asarray(r_n, dtype=complex))
    I = np.eye(r_n.shape[0])
    z = cmath.exp(1j * psi)
    a = np.conj(alpha)
    rhs = a * (1 - alpha * z) * np.asarray(theta_m, dtype=complex) - z * np.asarray(q_cov, dtype=complex)
    if not np.any(rhs):
        return np.zeros_like(rhs)
    return _solve(a * (I - mu * r_n) - z * I, rhs, "Y")


def f_terms(mu: float, r_n, psi: float, alpha: float):
    """``(F_alpha, F_beta)`` with ``A = I - mu R_N``:
    ``F_alpha = A [A - e^{j psi} I]^-1`` and ``F_beta = A [alpha^* A - e^{j psi} I]^-1``.
    """
    r_n = np.atleast_2d(np.asarray(r_n, dtype=complex))
    I = np.eye(r_n.shape[0])
    z = cmath.exp(1j * psi)
    A = I - mu * r_n
    f_alpha = _right_solve(A, A - z * I, "F_alpha")
    f_beta = _right_solve(A, np.conj(alpha) * A - z * I, "F_beta")
    return f_alpha, f_beta


def stability_interval(moments: RegressorMoments) -> tuple:
    """Admissible step sizes ``(0, 2 tr(R_N) / tr(Lambda))``."""
    tr_r = float(np.trace(moments.r_n).real)
    tr_l = float(np.trace(moments.lam).real)
    if tr_r <= 0:
        return (0.0, 0.0)
    return (0.0, math.inf if tr_l <= 0 else 2.0 * tr_r / tr_l)


def predict_mswe(inputs: SteadyStateInputs, closure: str = "isotropic") -> MswePrediction:
    """Analytic steady-state mean-square weight error ``T(mu)`` with its intermediates."""
    if closure not in CLOSURES:
        raise ValueError(f"closure must be one of {CLOSURES}, got {closure!r}")
    m = inputs.moments
    mu, psi, alpha = inputs.mu, inputs.psi, inputs.alpha
    M = m.size
    tr_r = float(np.trace(m.r_n).real)
    tr_l = float(np.trace(m.lam).real)
    denom = 2 * mu * tr_r - mu * mu * tr_l
    if not denom > 0:
        lo, hi = stability_interval(m)
        raise StabilityError(
            f"mu={mu} gives a non-positive denominator {denom:.3g}; admissible interval is ({lo}, {hi:.6g})",
            (lo, hi),
        )
    q_cov = np.atleast_2d(np.asarray(inputs.q_cov, dtype=complex))
    w_t = np.asarray(inputs.w_t, dtype=complex).reshape(-1)
    I = np.eye(M)
    z = cmath.exp(1j * psi)
    th = theta(q_cov, alpha)
    W_t = np.outer(w_t, w_t.conj())

    H = steady_state_H(mu, m.r_n, psi, w_t)
    Y = steady_state_Y(mu, m.r_n, psi, alpha, th, q_cov)
    f_alpha, f_beta = f_terms(mu, m.r_n, psi, alpha)

    F = (
        abs(1 - z) ** 2 * np.trace(W_t @ (I - 2 * f_alpha)).real
        + abs(1 - alpha * z) ** 2 * np.trace(th @ (I - 2 * np.conj(alpha) * f_beta)).real
        + np.trace(q_cov @ (I - 2 * (np.conj(alpha) - z) * f_beta)).real
    )
    num = mu * mu * inputs.noise_var * m.g_trace + F
    t_paper = num / denom
    t_mu = t_paper * (M if closure == "isotropic" else 1)
    return MswePrediction(
        t_mu=float(t_mu),
        t_paper=float(t_paper),
        closure=closure,
        rho_power=rho_power(w_t, alpha, psi, q_cov),
        F=float(F),
        numerator=float(num),
        denominator=float(denom),
        H=H,
        Y=Y,
        theta=th,
        F_alpha=f_alpha,
        F_beta=f_beta,
    )


def optimal_step(inputs: SteadyStateInputs, mu_grid: Sequence[float], closure: str = "isotropic") -> float:
    """Grid minimiser of ``T(mu)`` over the admissible part of ``mu_grid`` (ties to smaller mu)."""
    best_mu, best_t = None, math.inf
    for mu in sorted(float(v) for v in mu_grid):
        if mu <= 0:
            continue
        try:
            t = predict_mswe(inputs.with_mu(mu), closure).t_mu
        except (StabilityError, AnalysisError):
            continue
        if t < best_t:
            best_mu, best_t = mu, t
    if best_mu is None:
        lo, hi = stability_interval(inputs.moments)
        raise StabilityError(f"no grid point lies in the admissible interval ({lo}, {hi:.6g})", (lo, hi))
    return best_mu
