"""Affine projection family with optional selective partial (block) updates.

One code path covers LMS, NLMS, APA, BNDR-LMS, R-APA, PRA and NLMS-OCF through
the generic update

    w(n+1) = w(n - beta (K-1)) + mu U^H(n) C(n) e(n),
    e(n)   = d(n) - U(n) w(n - beta (K-1)),

where ``U(n)`` stacks the regressors ``u(n), u(n-D), ..., u(n-(K-1)D)``.
With a :class:`SpuConfig` the weight vector is split into ``B`` contiguous
blocks of length ``L`` and only the ``S`` blocks with the largest
``trace(U_i U_i^H)`` are updated, using ``U_h`` (the selected columns) in
place of ``U`` inside the gain. The error always uses the full regressor.

``*`` / ``^H`` is the conjugate transpose throughout; all arithmetic is
complex even for real (BPSK) input.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, DivergenceError

__all__ = [
    "ALGORITHMS",
    "ApaConfig",
    "SpuConfig",
    "RegressorHistory",
    "EstimatorState",
    "OpCounter",
    "RankDeficientWarning",
    "preset",
    "init_state",
    "build_regressor",
    "partition_blocks",
    "select_blocks",
    "gain_matrix",
    "spu_apa_step",
    "full_apa_step",
    "lms_step",
    "nlms_step",
]

ALGORITHMS = ("LMS", "NLMS", "APA", "BNDR-LMS", "R-APA", "PRA", "NLMS-OCF")

# relative pivot threshold below which a Gram matrix is treated as singular
_SINGULAR_RTOL = 1e-12
# singular values below this fraction of the largest are dropped by the fallback
_PINV_RCOND = 1e-10


class RankDeficientWarning(UserWarning):
    """The selected regressor columns cannot give a full-rank K x K Gram matrix."""


@dataclass(frozen=True)
class ApaConfig:
    """Parameters ``{K, D, eps, beta, mu}`` and filter length ``M``."""

    filter_length: int
    step_size: float
    order: int = 1
    spacing: int = 1
    regularization: float = 0.0
    delay_flag: int = 0

    def __post_init__(self):
        if self.filter_length < 1:
            raise ConfigError(f"filter length must be >= 1, got {self.filter_length}", "filter_length")
        if self.order < 1:
            raise ConfigError(f"order K must be >= 1, got {self.order}", "order")
        if self.order > self.filter_length:
            raise ConfigError(
                f"order K={self.order} exceeds filter length M={self.filter_length} (K <= M)", "order"
            )
        if self.spacing < 1:
            raise ConfigError(f"spacing D must be >= 1, got {self.spacing}", "spacing")
        if not self.regularization >= 0:
            raise ConfigError(f"regularization must be >= 0, got {self.regularization}", "regularization")
        if self.delay_flag not in (0, 1):
            raise ConfigError(f"delay flag beta must be 0 or 1, got {self.delay_flag}", "delay_flag")
        if not (np.isfinite(self.step_size) and self.step_size >= 0):
            raise ConfigError(f"step size must be finite and >= 0, got {self.step_size}", "step_size")

    @property
    def delay(self) -> int:
        """Weight delay ``beta (K - 1)`` used by the update."""
        return self.delay_flag * (self.order - 1)

    @property
    def history_len(self) -> int:
        """Number of regressor rows the update can reach: ``(K-1) D + 1``."""
        return (self.order - 1) * self.spacing + 1


@dataclass(frozen=True)
class SpuConfig:
    """Block partition ``M = B L`` and the number ``S`` of blocks updated per step."""

    num_blocks: int
    block_len: int
    num_selected: int

    def __post_init__(self):
        if self.num_blocks < 1 or self.block_len < 1:
            raise ConfigError("num_blocks and block_len must be >= 1", "spu")
        if not 1 <= self.num_selected <= self.num_blocks:
            raise ConfigError(
                f"num_selected S={self.num_selected} must satisfy 1 <= S <= B={self.num_blocks}",
                "spu.num_selected",
            )

    @classmethod
    def for_length(cls, filter_length: int, num_blocks: int, num_selected: Optional[int] = None) -> "SpuConfig":
        """Partition a length-M filter into ``num_blocks`` equal blocks."""
        if num_blocks < 1 or filter_length % num_blocks:
            raise ConfigError(
                f"filter length M={filter_length} is not divisible by B={num_blocks}; "
                "B = M / L must be an integer",
                "spu.num_blocks",
            )
        s = num_blocks if num_selected is None else num_selected
        return cls(num_blocks, filter_length // num_blocks, s)

    @classmethod
    def full(cls, filter_length: int) -> "SpuConfig":
        return cls(1, filter_length, 1)

    @property
    def filter_length(self) -> int:
        return self.num_blocks * self.block_len

    @property
    def is_full(self) -> bool:
        return self.num_selected == self.num_blocks

    def check(self, cfg: ApaConfig) -> None:
        """Validate against an :class:`ApaConfig`; warn when the Gram matrix is structurally singular."""
        if self.filter_length != cfg.filter_length:
            raise ConfigError(
                f"B*L = {self.num_blocks}*{self.block_len} != M = {cfg.filter_length}",
                "spu.num_blocks",
            )
        if self.block_len * self.num_selected < cfg.order:
            warnings.warn(
                f"L*S = {self.block_len * self.num_selected} < K = {cfg.order}: U_h U_h^H is always "
                "singular; the pseudo-inverse fallback will be used on every update",
                RankDeficientWarning,
                stacklevel=2,
            )


class RegressorHistory:
    """Ring buffer of the most recent input rows ``u(n)`` and desired samples ``d(n)``.

    Slots that were never written read as zero, which is how missing history
    is handled during warm-up.
    """

    def __init__(self, filter_length: int, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.filter_length = filter_length
        self.capacity = capacity
        self._u = np.zeros((capacity, filter_length), dtype=complex)
        self._d = np.zeros(capacity, dtype=complex)
        self._head = -1
        self.count = 0

    @classmethod
    def for_config(cls, cfg: ApaConfig) -> "RegressorHistory":
        return cls(cfg.filter_length, cfg.history_len)

    def push(self, u_row, d) -> None:
        self._head = (self._head + 1) % self.capacity
        self._u[self._head] = u_row
        self._d[self._head] = d
        self.count += 1

    def rows(self, lags: np.ndarray):
        """Rows at several lags at once; never-written slots are still zero."""
        idx = (self._head - lags) % self.capacity
        return self._u[idx], self._d[idx]

    def row(self, lag: int):
        """``(u(n - lag), d(n - lag))``; zeros when outside the stored window."""
        if lag >= self.capacity or lag >= self.count:
            return np.zeros(self.filter_length, dtype=complex), 0j
        i = (self._head - lag) % self.capacity
        return self._u[i], self._d[i]


class TappedDelayLine:
    """Forms regressor rows ``u(n) = [x(n), x(n-1), ..., x(n-M+1)]`` from a sample stream."""

    def __init__(self, filter_length: int):
        self.row = np.zeros(filter_length, dtype=complex)

    def push(self, x) -> np.ndarray:
        self.row = np.concatenate(([x], self.row[:-1]))
        return self.row


@dataclass
class OpCounter:
    """Multiplication counts per iteration category, accumulated over steps.

    Categories: ``error`` (full ``U w``), ``selection`` (block energies),
    ``gram`` (``U_h U_h^H``), ``solve`` (K x K system), ``update``
    (``mu`` scaling and back-projection ``U_h^H g``).
    """

    counts: Counter = field(default_factory=Counter)
    steps: int = 0

    UPDATE_TERM = ("gram", "solve", "update")

    def add(self, **kw) -> None:
        self.counts.update(kw)

    def update_term(self) -> int:
        """Multiplications spent forming ``mu U_h^H C_h e`` (everything the SPU restricts)."""
        return sum(self.counts[k] for k in self.UPDATE_TERM)

    def per_step(self, key: Optional[str] = None) -> float:
        total = self.update_term() if key is None else self.counts[key]
        return total / max(self.steps, 1)


@dataclass(frozen=True)
class EstimatorState:
    """Current estimate ``w(n)``, previous weights for ``beta = 1``, iteration index."""

    weights: np.ndarray
    weight_history: tuple = ()
    iteration: int = 0
    singular_fallbacks: int = 0

    def delayed(self, lag: int) -> np.ndarray:
        """``w(n - lag)``; before enough history exists the initial weights are returned."""
        if lag == 0:
            return self.weights
        return self.weight_history[-lag]


def init_state(cfg: ApaConfig, weights=None) -> EstimatorState:
    w = np.zeros(cfg.filter_length, dtype=complex) if weights is None else np.array(weights, dtype=complex)
    if w.shape != (cfg.filter_length,):
        raise ConfigError(f"initial weights must have length {cfg.filter_length}", "weights")
    hist = tuple(w for _ in range(cfg.delay))
    return EstimatorState(weights=w, weight_history=hist)


def _advance(state: EstimatorState, cfg: ApaConfig, w_new: np.ndarray, fallbacks: int) -> EstimatorState:
    if cfg.delay:
        hist = state.weight_history[1:] + (state.weights,)
    else:
        hist = ()
    return EstimatorState(
        weights=w_new,
        weight_history=hist,
        iteration=state.iteration + 1,
        singular_fallbacks=state.singular_fallbacks + fallbacks,
    )


_ROWS = {
    # name: (fixed fields, constraints on free fields)
    "LMS": dict(order=1, regularization=0.0, delay_flag=0, spacing=1),
    "NLMS": dict(order=1, regularization=0.0, delay_flag=0, spacing=1),
    "APA": dict(regularization=0.0, delay_flag=0, spacing=1),
    "BNDR-LMS": dict(order=2, regularization=0.0, delay_flag=0, spacing=1),
    "R-APA": dict(delay_flag=0, spacing=1),
    "PRA": dict(delay_flag=1, spacing=1),
    "NLMS-OCF": dict(regularization=0.0, delay_flag=0),
}
_DEFAULTS = {"order": 3, "spacing": 2, "regularization": 1e-2}
_NONZERO_EPS = ("R-APA", "PRA")


def preset(name: str, filter_length: int, step_size: float, **overrides):
    """Build the configuration of one row of the APA family.

    Parameters
    ----------
    name : str
        One of :data:`ALGORITHMS`.
    filter_length, step_size : int, float
        ``M`` and ``mu``.
    **overrides
        ``order``, ``spacing`` and ``regularization`` where the row leaves
        them free. Overriding a value the row fixes raises ``ConfigError``.

    Returns
    -------
    (ApaConfig, str)
        The configuration and the canonical algorithm tag.
    """
    tag = name.upper()
    if tag not in _ROWS:
        raise ConfigError(f"unknown algorithm {name!r}; expected one of {', '.join(ALGORITHMS)}", "algorithm")
    unknown = set(overrides) - {"order", "spacing", "regularization"}
    if unknown:
        raise ConfigError(f"cannot override {sorted(unknown)} for {tag}", "algorithm")
    fixed = _ROWS[tag]
    values = {}
    for key in ("order", "spacing", "regularization", "delay_flag"):
        if key in fixed:
            if key in overrides and overrides[key] != fixed[key]:
                raise ConfigError(f"{tag} fixes {key}={fixed[key]}, got {overrides[key]}", key)
            values[key] = fixed[key]
        else:
            values[key] = overrides.get(key, _DEFAULTS[key])
    if tag in _NONZERO_EPS and values["regularization"] == 0:
        raise ConfigError(f"{tag} requires a nonzero regularization", "regularization")
    if tag == "APA" and "order" not in overrides:
        values["order"] = min(values["order"], filter_length)
    cfg = ApaConfig(filter_length=filter_length, step_size=step_size, **values)
    return cfg, tag


def build_regressor(hist: RegressorHistory, order: int, spacing: int):
    """Stack ``U(n)`` (K x M) and ``d(n)`` (K,) with row ``i`` taken at lag ``i D``."""
    lags = np.arange(order) * spacing
    if lags[-1] >= hist.capacity:
        raise ConfigError(
            f"history holds {hist.capacity} rows but K={order}, D={spacing} needs {lags[-1] + 1}", "spacing"
        )
    if hist.count == 0:
        return np.zeros((order, hist.filter_length), dtype=complex), np.zeros(order, dtype=complex)
    return hist.rows(lags)


def partition_blocks(U: np.ndarray, spu: SpuConfig) -> list:
    """Split the columns of ``U`` into ``B`` contiguous K x L blocks (views)."""
    U = np.atleast_2d(U)
    if U.shape[1] != spu.filter_length:
        raise ConfigError(
            f"regressor width {U.shape[1]} is not B*L = {spu.num_blocks}*{spu.block_len}",
            "spu.num_blocks",
        )
    L = spu.block_len
    return [U[:, i * L:(i + 1) * L] for i in range(spu.num_blocks)]


def select_blocks(blocks, num_selected: int, start: int = 0) -> list:
    """Indices of the ``num_selected`` blocks with the largest ``trace(U_i U_i^H)``.

    Among equal energies, blocks are taken in cyclic index order beginning
    at ``start`` (so ``start=0`` prefers the lowest index). The result is
    sorted ascending.
    """
    energies = np.array([np.vdot(b, b).real for b in blocks])
    B = energies.size
    if not 1 <= num_selected <= B:
        raise ConfigError(f"num_selected must be in [1, {B}]", "spu.num_selected")
    cyclic = (np.arange(B) - start) % B
    order = np.lexsort((cyclic, -energies))
    return sorted(int(i) for i in order[:num_selected])


def _cholesky_solve(G: np.ndarray, e: np.ndarray):
    """Solve ``G x = e`` for Hermitian positive definite ``G`` by Cholesky.

    Returns ``None`` when a pivot falls below ``rtol * trace / K`` (treated as
    singular). Written with scalar arithmetic: for the K <= 8 systems of the
    APA family this is several times faster than the LAPACK round trip.
    """
    K = G.shape[0]
    g = G.tolist()
    trace = sum(g[i][i].real for i in range(K))
    if not trace > 0:
        return None
    tol = _SINGULAR_RTOL * trace / K
    L = [[0j] * K for _ in range(K)]
    for j in range(K):
        Lj = L[j]
        piv = g[j][j].real - sum(abs(Lj[k]) ** 2 for k in range(j))
        if not piv > tol:
            return None
        d = piv ** 0.5
        Lj[j] = d
        for i in range(j + 1, K):
            Li = L[i]
            Li[j] = (g[i][j] - sum(Li[k] * Lj[k].conjugate() for k in range(j))) / d
    b = e.tolist()
    y = [0j] * K
    for i in range(K):
        y[i] = (b[i] - sum(L[i][k] * y[k] for k in range(i))) / L[i][i]
    x = [0j] * K
    for i in reversed(range(K)):
        x[i] = (y[i] - sum(L[k][i].conjugate() * x[k] for k in range(i + 1, K))) / L[i][i]
    return np.array(x, dtype=complex)


def _is_singular(G: np.ndarray) -> bool:
    """Treat ``G`` as singular when a Cholesky pivot falls below ``rtol * trace / K``."""
    K = G.shape[0]
    trace = float(np.trace(G).real)
    if trace <= 0:
        return True
    try:
        chol = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        return True
    return bool((np.abs(np.diag(chol)) ** 2).min() <= _SINGULAR_RTOL * trace / K)


def _gram_system(U_sel: np.ndarray, cfg: ApaConfig):
    """``G = eps I + U_sel U_sel^H``."""
    G = U_sel @ U_sel.conj().T
    if cfg.regularization:
        G = G + cfg.regularization * np.eye(G.shape[0])
    return G


def _gain_vector(U_sel, e, cfg, algorithm, counter=None):
    """``C_h e`` via a linear solve; returns ``(g, singular)``.

    A singular Gram matrix is inverted on its range only (Moore-Penrose), the
    limit of a vanishing diagonal jitter; components in its null space are
    annihilated by ``U_sel^H`` anyway.
    """
    K = U_sel.shape[0]
    if algorithm == "LMS":
        return e, False
    G = _gram_system(U_sel, cfg)
    if counter is not None:
        counter.add(gram=K * K * U_sel.shape[1], solve=K ** 3)
    if K <= 8:
        x = _cholesky_solve(G, e)
        singular = x is None
    else:
        singular = _is_singular(G)
        x = None if singular else np.linalg.solve(G, e)
    if singular:
        x = np.linalg.pinv(G, rcond=_PINV_RCOND, hermitian=True) @ e
    return x, singular


def gain_matrix(U_sel, cfg: ApaConfig, algorithm: str) -> np.ndarray:
    """The K x K gain ``C_h`` of the given algorithm row.

    LMS gives the identity; every other row gives ``(eps I + U_sel U_sel^H)^-1``
    (``eps`` is 0 for the unregularised rows), obtained by solving against the
    identity. Singular systems fall back to the pseudo-inverse.
    """
    U_sel = np.atleast_2d(np.asarray(U_sel, dtype=complex))
    K = U_sel.shape[0]
    if algorithm == "LMS":
        return np.eye(K, dtype=complex)
    G = _gram_system(U_sel, cfg)
    if _is_singular(G):
        return np.linalg.pinv(G, rcond=_PINV_RCOND, hermitian=True)
    return np.linalg.solve(G, np.eye(K, dtype=complex))


def _should_update(cfg: ApaConfig, n: int) -> bool:
    # with beta = 1 the weights move once every K iterations, at n = K-1 (mod K)
    return cfg.delay_flag == 0 or n % cfg.order == cfg.order - 1


def _check_finite(n, *arrays):
    for a in arrays:
        # a single non-finite entry makes the sum non-finite
        if not np.isfinite(a.sum()):
            raise DivergenceError(n)


def spu_apa_step(
    state: EstimatorState,
    hist: RegressorHistory,
    cfg: ApaConfig,
    spu: Optional[SpuConfig],
    algorithm: str,
    counter: Optional[OpCounter] = None,
):
    """One iteration of the selective-partial-update APA family.

    Returns ``(new_state, e)`` with ``e`` the K-vector of output errors. Only
    the selected blocks of the weight vector change; the others are copied
    unchanged.
    """
    if spu is None:
        spu = SpuConfig.full(cfg.filter_length)
    n = state.iteration
    K, M = cfg.order, cfg.filter_length
    U, d = build_regressor(hist, K, cfg.spacing)
    w_base = state.delayed(cfg.delay)
    e = d - U @ w_base
    _check_finite(n, e)
    if counter is not None:
        counter.steps += 1
        counter.add(error=K * M)

    w_new = state.weights.copy()
    fallback = False
    if cfg.step_size and _should_update(cfg, n):
        if spu.num_blocks == 1:
            cols = slice(None)
            U_h = U
            LS = M
        else:
            blocks = partition_blocks(U, spu)
            # rotating the tie-break keeps constant-modulus inputs (equal block
            # energies) from pinning the update to the same blocks forever
            h = select_blocks(blocks, spu.num_selected, start=n % spu.num_blocks)
            if counter is not None:
                counter.add(selection=K * M)
            L = spu.block_len
            cols = np.concatenate([np.arange(i * L, (i + 1) * L) for i in h])
            U_h = U[:, cols]
            LS = cols.size
        g, fallback = _gain_vector(U_h, e, cfg, algorithm, counter)
        step = cfg.step_size * g
        w_new[cols] = w_base[cols] + U_h.conj().T @ step
        if counter is not None:
            counter.add(update=K + K * LS)
        _check_finite(n, w_new)
    return _advance(state, cfg, w_new, int(fallback)), e


def full_apa_step(state: EstimatorState, hist: RegressorHistory, cfg: ApaConfig, algorithm: str):
    """Full-update reference path ``w(n+1) = w(n - beta(K-1)) + mu U^H C e``.

    No blocks, and ``C`` comes from :func:`gain_matrix` rather than the
    per-step solver, so it is an independent route to the same recursion.
    """
    n = state.iteration
    U, d = build_regressor(hist, cfg.order, cfg.spacing)
    w_base = state.delayed(cfg.delay)
    e = d - U @ w_base
    _check_finite(n, e)
    w_new = state.weights.copy()
    fallback = False
    if cfg.step_size and _should_update(cfg, n):
        C = gain_matrix(U, cfg, algorithm)
        fallback = algorithm != "LMS" and _is_singular(_gram_system(U, cfg))
        w_new = w_base + cfg.step_size * (U.conj().T @ (C @ e))
        _check_finite(n, w_new)
    return _advance(state, cfg, w_new, int(fallback)), e


def lms_step(state: EstimatorState, u, d, mu: float):
    """Plain LMS: ``e = d - u w``, ``w <- w + mu u^H e``."""
    u = np.asarray(u, dtype=complex)
    e = d - u @ state.weights
    w = state.weights + mu * u.conj() * e
    _check_finite(state.iteration, e, w)
    return replace(state, weights=w, iteration=state.iteration + 1), e


def nlms_step(state: EstimatorState, u, d, mu: float):
    """Plain NLMS: ``w <- w + mu u^H e / ||u||^2`` (no update when ``u = 0``)."""
    u = np.asarray(u, dtype=complex)
    e = d - u @ state.weights
    energy = np.vdot(u, u).real
    w = state.weights + (mu / energy) * u.conj() * e if energy > 0 else state.weights.copy()
    _check_finite(state.iteration, e, w)
    return replace(state, weights=w, iteration=state.iteration + 1), e
