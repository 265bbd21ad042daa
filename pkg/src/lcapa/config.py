"""Experiment configuration files (YAML).

Schema (every key optional unless noted; unknown keys are rejected)::

    channel:
      profile: paper-m5          # preset name, or {length: M, taps: [[index, power], ...]}
      mode: rayleigh_taps        # rayleigh_taps | ar1_cfo
      doppler_hz: 10.0
      sample_period_s: 8.0e-7
      fading_variance: 1.0
      drift: fixed               # fixed -> alpha, q_var below; doppler -> alpha = J0(2 pi f_D T_s)
      alpha: 0.9
      q_var: 1.0e-4              # per-tap variance of the AR(1) innovation
      cfo: 1.0e-4                # radians per sample
      mean_taps: null            # ar1_cfo only: list of reals or [re, im] pairs
      stationary_start: true
    noise_var: 1.0e-3
    run: {iters: 10000, trials: 30, seed: 20100, workers: 1}
    algorithms:                  # at least one; defaults to the six-estimator line-up
      - {algorithm: NLMS, mu: 0.1, label: NLMS, order: 1, spacing: 1,
         regularization: 0.0, blocks: null, selected: null}
    sweep: {mu: [...], doppler: [10, 15, 20, 25, 30, 35, 40]}
    analysis: {draws: 100000, mu: null, algorithm: null, closure: isotropic,
               mu_grid: {start: 0.0, stop: null, num: 200}}
    trajectory: {window: [1000, 2000]}
    cdf: {samples: 1000000, seq_len: 10, points: 201, doppler_hz: null, sample_period_s: null}
    output: {dir: out}
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import fading
from .errors import ConfigError
from .fading import FadingConfig, MultipathProfile, NonstationaryModel
from .sim import AlgorithmSpec, Scenario

DESK = {"iters": 10_000, "trials": 30}
# per-subcommand run sizes used by --paper-scale
PAPER_SCALE = {
    "learning-curve": {"iters": 30_000, "trials": 100},
    "trajectory": {"iters": 30_000, "trials": 1},
    "sweep-mu": {"iters": 30_000, "trials": 100},
    "sweep-doppler": {"iters": 60_000, "trials": 1000},
    "cdf": {},
    "predict-mswe": {},
}

DEFAULTS: dict = {
    "channel": {
        "profile": "paper-m5",
        "mode": "rayleigh_taps",
        "doppler_hz": 10.0,
        "sample_period_s": 0.8e-6,
        "fading_variance": 1.0,
        "drift": "fixed",
        "alpha": 0.9,
        "q_var": 1e-4,
        "cfo": 1e-4,
        "mean_taps": None,
        "stationary_start": True,
    },
    "noise_var": 1e-3,
    "run": {"iters": DESK["iters"], "trials": DESK["trials"], "seed": 20100, "workers": 1},
    "algorithms": [
        {"algorithm": "LMS", "mu": 0.01},
        {"algorithm": "NLMS", "mu": 0.1},
        {"algorithm": "APA", "mu": 0.25, "order": 2, "label": "APA(K=2)"},
        {"algorithm": "APA", "mu": 0.25, "order": 3, "label": "APA(K=3)"},
        {"algorithm": "PRA", "mu": 0.25, "order": 3, "label": "PRA(K=3)"},
        {"algorithm": "APA", "mu": 0.25, "order": 3, "blocks": 5, "selected": 2, "label": "LC-APA(K=3,B=5,S=2)"},
    ],
    "sweep": {
        "mu": [0.01, 0.02, 0.05, 0.1, 0.2, 0.3],
        "doppler": [10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
    },
    "analysis": {
        "draws": 100_000,
        "mu": None,
        "algorithm": None,
        "closure": "isotropic",
        "mu_grid": {"start": 0.0, "stop": None, "num": 200},
    },
    "trajectory": {"window": [1000, 2000]},
    "cdf": {"samples": 1_000_000, "seq_len": 10, "points": 201, "doppler_hz": None, "sample_period_s": None},
    "output": {"dir": "out"},
}
ALGORITHM_KEYS = {"algorithm", "mu", "label", "order", "spacing", "regularization", "blocks", "selected"}


@dataclass
class RunConfig:
    """A fully resolved configuration."""

    resolved: dict
    scenario: Scenario
    algorithms: list
    workers: int
    sweep_mu: list
    sweep_doppler: list
    analysis: dict
    trajectory_window: tuple
    cdf: dict
    out_dir: Path


def _merge(defaults: dict, given: Any, path: str) -> dict:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError("expected a mapping", path or "<root>")
    out = {}
    for key in given:
        if key not in defaults:
            raise ConfigError("unknown key", f"{path}.{key}" if path else str(key))
    for key, default in defaults.items():
        sub = f"{path}.{key}" if path else key
        if isinstance(default, dict) and key != "profile":
            out[key] = _merge(default, given.get(key), sub)
        else:
            out[key] = copy.deepcopy(given.get(key, default))
    return out


def _num(value, key, *, integer=False, minimum=None, positive=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", key)
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"expected an integer, got {value!r}", key)
        value = int(value)
    else:
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError("must be finite", key)
    if positive and not value > 0:
        raise ConfigError(f"must be > 0, got {value}", key)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}, got {value}", key)
    return value


def _num_list(values, key, positive=False, minimum=None):
    if not isinstance(values, list):
        raise ConfigError("expected a list of numbers", key)
    return [_num(v, f"{key}[{i}]", positive=positive, minimum=minimum) for i, v in enumerate(values)]


def _profile(spec, key) -> MultipathProfile:
    if isinstance(spec, str):
        if spec not in fading.PROFILES:
            raise ConfigError(f"unknown profile {spec!r}; presets: {', '.join(fading.PROFILES)}", key)
        return fading.PROFILES[spec]
    if not isinstance(spec, dict) or set(spec) - {"length", "taps", "name"} or "length" not in spec:
        raise ConfigError("expected a preset name or {length, taps[, name]}", key)
    taps = spec.get("taps") or []
    try:
        pairs = tuple((int(i), float(p)) for i, p in taps)
    except (TypeError, ValueError):
        raise ConfigError("taps must be a list of [index, power] pairs", f"{key}.taps") from None
    try:
        return MultipathProfile(_num(spec["length"], f"{key}.length", integer=True), pairs, spec.get("name"))
    except ValueError as exc:
        raise ConfigError(str(exc), key) from None


def _complex_list(values, key) -> np.ndarray:
    if not isinstance(values, list):
        raise ConfigError("expected a list", key)
    out = []
    for i, v in enumerate(values):
        if isinstance(v, list) and len(v) == 2:
            out.append(complex(_num(v[0], f"{key}[{i}]"), _num(v[1], f"{key}[{i}]")))
        else:
            out.append(complex(_num(v, f"{key}[{i}]")))
    return np.array(out, dtype=complex)


def _scenario(cfg: dict) -> Scenario:
    ch = cfg["channel"]
    profile = _profile(ch["profile"], "channel.profile")
    mode = ch["mode"]
    if mode not in ("rayleigh_taps", "ar1_cfo"):
        raise ConfigError("must be 'rayleigh_taps' or 'ar1_cfo'", "channel.mode")
    try:
        fcfg = FadingConfig(
            _num(ch["doppler_hz"], "channel.doppler_hz", minimum=0),
            _num(ch["sample_period_s"], "channel.sample_period_s", positive=True),
            _num(ch["fading_variance"], "channel.fading_variance", positive=True),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "channel") from None
    if ch["mean_taps"] is None:
        mean = fading.impulse_response(profile, np.ones(len(profile.active_taps)))
    else:
        mean = _complex_list(ch["mean_taps"], "channel.mean_taps")
        if mean.size != profile.length:
            raise ConfigError(f"needs {profile.length} entries to match the profile", "channel.mean_taps")
    if mode == "rayleigh_taps":
        mean = np.zeros(profile.length, dtype=complex)
    cfo = _num(ch["cfo"], "channel.cfo")
    if ch["drift"] == "fixed":
        alpha = _num(ch["alpha"], "channel.alpha")
        if not abs(alpha) < 1:
            raise ConfigError(f"|alpha| must be < 1, got {alpha}", "channel.alpha")
        q_var = _num(ch["q_var"], "channel.q_var", minimum=0)
        model = NonstationaryModel(mean, alpha, math.sqrt(q_var), cfo)
    elif ch["drift"] == "doppler":
        model = NonstationaryModel.from_doppler(mean, fcfg, cfo)
    else:
        raise ConfigError("must be 'fixed' or 'doppler'", "channel.drift")
    if not isinstance(ch["stationary_start"], bool):
        raise ConfigError("expected true or false", "channel.stationary_start")
    run = cfg["run"]
    return Scenario(
        profile=profile,
        model=model,
        fading=fcfg,
        channel_mode=mode,
        noise_var=_num(cfg["noise_var"], "noise_var", minimum=0),
        n_iters=_num(run["iters"], "run.iters", integer=True, minimum=1),
        n_trials=_num(run["trials"], "run.trials", integer=True, minimum=1),
        seed=_num(run["seed"], "run.seed", integer=True, minimum=0),
        stationary_start=ch["stationary_start"],
    )


def _algorithms(entries, m: int) -> list:
    if not isinstance(entries, list) or not entries:
        raise ConfigError("at least one algorithm is required", "algorithms")
    out = []
    for i, entry in enumerate(entries):
        key = f"algorithms[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError("expected a mapping", key)
        unknown = set(entry) - ALGORITHM_KEYS
        if unknown:
            raise ConfigError("unknown key", f"{key}.{sorted(unknown)[0]}")
        for req in ("algorithm", "mu"):
            if req not in entry:
                raise ConfigError("missing required key", f"{key}.{req}")
        overrides = {}
        for name in ("order", "spacing"):
            if entry.get(name) is not None:
                overrides[name] = _num(entry[name], f"{key}.{name}", integer=True, minimum=1)
        if entry.get("regularization") is not None:
            overrides["regularization"] = _num(entry["regularization"], f"{key}.regularization", minimum=0)
        blocks = _num(entry.get("blocks"), f"{key}.blocks", integer=True, minimum=1, allow_none=True)
        selected = _num(entry.get("selected"), f"{key}.selected", integer=True, minimum=1, allow_none=True)
        try:
            spec = AlgorithmSpec.build(
                str(entry["algorithm"]),
                m,
                _num(entry["mu"], f"{key}.mu", minimum=0),
                label=entry.get("label"),
                blocks=blocks,
                selected=selected,
                **overrides,
            )
        except ConfigError as exc:
            sub = exc.key or ""
            sub = {"spu.num_blocks": "blocks", "spu.num_selected": "selected", "spu": "blocks"}.get(sub, sub)
            raise ConfigError(str(exc).split(": ", 1)[-1], f"{key}.{sub}" if sub else key) from None
        out.append(spec)
    labels = [a.label for a in out]
    dup = {x for x in labels if labels.count(x) > 1}
    if dup:
        raise ConfigError(f"duplicate labels {sorted(dup)}; set 'label' explicitly", "algorithms")
    return out


def resolve(raw: Any, overrides: Optional[dict] = None) -> RunConfig:
    """Fill defaults, apply ``overrides`` (dotted keys) and validate."""
    cfg = _merge(DEFAULTS, raw, "")
    for dotted, value in (overrides or {}).items():
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    scenario = _scenario(cfg)
    algorithms = _algorithms(cfg["algorithms"], scenario.filter_length)
    sweep = cfg["sweep"]
    ana = cfg["analysis"]
    if ana["closure"] not in ("isotropic", "paper"):
        raise ConfigError("must be 'isotropic' or 'paper'", "analysis.closure")
    grid = ana["mu_grid"]
    analysis_opts = {
        "draws": _num(ana["draws"], "analysis.draws", integer=True, minimum=1),
        "mu": _num(ana["mu"], "analysis.mu", positive=True, allow_none=True),
        "algorithm": ana["algorithm"],
        "closure": ana["closure"],
        "grid_start": _num(grid["start"], "analysis.mu_grid.start", minimum=0),
        "grid_stop": _num(grid["stop"], "analysis.mu_grid.stop", positive=True, allow_none=True),
        "grid_num": _num(grid["num"], "analysis.mu_grid.num", integer=True, minimum=1),
    }
    if ana["algorithm"] is not None and ana["algorithm"] not in [a.label for a in algorithms]:
        raise ConfigError(f"no algorithm labelled {ana['algorithm']!r}", "analysis.algorithm")
    window = cfg["trajectory"]["window"]
    if not (isinstance(window, list) and len(window) == 2):
        raise ConfigError("expected [start, stop]", "trajectory.window")
    lo = _num(window[0], "trajectory.window[0]", integer=True, minimum=0)
    hi = _num(window[1], "trajectory.window[1]", integer=True, minimum=0)
    if hi <= lo:
        raise ConfigError("stop must exceed start", "trajectory.window")
    c = cfg["cdf"]
    cdf_opts = {
        "samples": _num(c["samples"], "cdf.samples", integer=True, minimum=1000),
        "seq_len": _num(c["seq_len"], "cdf.seq_len", integer=True, minimum=1),
        "points": _num(c["points"], "cdf.points", integer=True, minimum=2),
        "doppler_hz": _num(c["doppler_hz"], "cdf.doppler_hz", minimum=0, allow_none=True),
        "sample_period_s": _num(c["sample_period_s"], "cdf.sample_period_s", positive=True, allow_none=True),
    }
    return RunConfig(
        resolved=cfg,
        scenario=scenario,
        algorithms=algorithms,
        workers=_num(cfg["run"]["workers"], "run.workers", integer=True, minimum=1),
        sweep_mu=_num_list(sweep["mu"], "sweep.mu", positive=True),
        sweep_doppler=_num_list(sweep["doppler"], "sweep.doppler", minimum=0),
        analysis=analysis_opts,
        trajectory_window=(lo, hi),
        cdf=cdf_opts,
        out_dir=Path(str(cfg["output"]["dir"])),
    )


def parse_config(path, overrides: Optional[dict] = None) -> RunConfig:
    """Load and resolve a YAML configuration file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", "<file>")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", "<file>") from None
    return resolve(raw, overrides)


def dump_resolved(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None)
