"""Command-line entry point.

Every subcommand writes ``<out-dir>/<name>.csv``, a ``<name>.manifest.txt``
of ``key = value`` lines naming that CSV (plus run metadata and a flattened
echo of the configuration), and ``<name>.config.yaml`` holding the fully
resolved configuration; ``--config <name>.config.yaml`` reproduces the CSV.

Exit codes: 0 success, 1 at least one divergent trial (output still
written), 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import analysis, sim
from .config import PAPER_SCALE, RunConfig, dump_resolved, parse_config, resolve
from .errors import AnalysisError, ConfigError, StabilityError

COMMANDS = ("learning-curve", "sweep-mu", "sweep-doppler", "trajectory", "cdf", "predict-mswe")
DEFAULT_CONFIG = Path(__file__).resolve().parents[2] / "configs" / "paper.yaml"

EXIT_OK, EXIT_DIVERGED, EXIT_CONFIG = 0, 1, 2


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.16e}"
    return str(value)


def write_csv(path: Path, header: list, rows: list) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_manifest(path: Path, entries: dict) -> None:
    lines = [f"{k} = {_fmt(v)}" for k, v in entries.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


# -- subcommands: each returns (header, rows, extra manifest entries, diverged)


def cmd_learning_curve(cfg: RunConfig, out_dir: Path):
    res = sim.run_monte_carlo(cfg.scenario, cfg.algorithms, cfg.workers)
    labels = [a.label for a in cfg.algorithms]
    n = cfg.scenario.n_iters
    rows = [[i] + [res[lab].mse[i] for lab in labels] for i in range(n)]
    # weight-error curves go to a companion file so the main table keeps one column per algorithm
    side = out_dir / "learning-curve.mswe.csv"
    write_csv(side, ["iteration"] + labels, [[i] + [res[lab].weight_error[i] for lab in labels] for i in range(n)])
    extra = {"csv_mswe": side.name}
    for lab in labels:
        c = res[lab]
        extra[f"steady_state_mse.{lab}"] = c.steady_state() if c.n_trials else math.nan
        extra[f"divergent_trials.{lab}"] = c.diverged
        extra[f"singular_fallbacks.{lab}"] = c.meta["singular_fallbacks"]
    return ["iteration"] + labels, rows, extra, any(res[lab].diverged for lab in labels)


def cmd_sweep_mu(cfg: RunConfig):
    out = sim.sweep_stepsize(cfg.scenario, cfg.algorithms, cfg.sweep_mu, cfg.workers)
    rows = [[r["algorithm"], r["mu"], r["mse"], r["diverged"]] for r in out]
    return ["algorithm", "mu", "steady_state_mse", "divergent_trials"], rows, {}, any(r["diverged"] for r in out)


def _mu_grid(cfg: RunConfig):
    a = cfg.analysis
    if a["grid_stop"] is None:
        return None
    return np.linspace(a["grid_start"], a["grid_stop"], a["grid_num"] + 1)[1:]


def cmd_sweep_doppler(cfg: RunConfig):
    a = cfg.analysis
    out = sim.sweep_doppler(
        cfg.scenario, cfg.algorithms, cfg.sweep_doppler, _mu_grid(cfg), a["draws"], cfg.workers, a["closure"]
    )
    rows = [[r["algorithm"], r["doppler_hz"], r["mu"], r["mse"], r["diverged"]] for r in out]
    header = ["algorithm", "doppler_hz", "mu", "steady_state_mse", "divergent_trials"]
    return header, rows, {"closure": a["closure"]}, any(r["diverged"] for r in out)


def cmd_trajectory(cfg: RunConfig):
    sc = cfg.scenario
    outs = sim.run_trial(sc, cfg.algorithms, sim.trial_rng(sc.seed, 0), cfg.trajectory_window)
    labels = [a.label for a in cfg.algorithms]
    ref = next((outs[lab].trajectory for lab in labels if outs[lab].trajectory is not None), None)
    if ref is None:
        return ["iteration", "true_amplitude"], [], {}, True
    n = ref.iterations.size
    cols = []
    for lab in labels:
        t = outs[lab].trajectory
        cols.append(t.estimated_amplitude if t is not None else np.full(n, math.nan))
    header = ["iteration", "true_amplitude"] + [f"estimate_{lab}" for lab in labels]
    rows = [[int(ref.iterations[i]), ref.true_amplitude[i]] + [c[i] for c in cols] for i in range(n)]
    extra = {"tap_index": ref.tap_index, "trial": 0}
    return header, rows, extra, any(outs[lab].diverged_at is not None for lab in labels)


def cmd_cdf(cfg: RunConfig):
    c = cfg.cdf
    base = cfg.scenario.fading
    fcfg = type(base)(
        base.doppler_hz if c["doppler_hz"] is None else c["doppler_hz"],
        base.sample_period_s if c["sample_period_s"] is None else c["sample_period_s"],
        base.variance,
    )
    rng = np.random.default_rng(cfg.scenario.seed)
    out = sim.fading_cdf(fcfg, c["samples"], rng, c["seq_len"])
    amp = out["amplitude"]
    idx = np.unique(np.linspace(0, amp.size - 1, c["points"]).round().astype(int))
    rows = [[amp[i], out["empirical_cdf"][i], out["rayleigh_cdf"][i]] for i in idx]
    ks = float(np.max(np.abs(out["empirical_cdf"] - out["rayleigh_cdf"])))
    extra = {"doppler_hz": fcfg.doppler_hz, "sample_period_s": fcfg.sample_period_s, "samples": amp.size, "ks_distance": ks}
    return ["amplitude", "empirical_cdf", "rayleigh_cdf"], rows, extra, False


def cmd_predict_mswe(cfg: RunConfig, mu: Optional[float], out_dir: Path):
    a = cfg.analysis
    label = a["algorithm"] or cfg.algorithms[0].label
    spec = next(s for s in cfg.algorithms if s.label == label)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.scenario.seed, spawn_key=(2**31,)))
    moments = analysis.estimate_moments(
        cfg.scenario.filter_length, spec.config, spec.algorithm, spec.spu, a["draws"], rng
    )
    mu_key = "--mu" if mu is not None else ("analysis.mu" if a["mu"] is not None else f"algorithms[{cfg.algorithms.index(spec)}].mu")
    mu = mu if mu is not None else (a["mu"] if a["mu"] is not None else spec.config.step_size)
    inputs = sim.analysis_inputs(cfg.scenario, spec, moments, mu)
    try:
        pred = analysis.predict_mswe(inputs, a["closure"])
    except StabilityError as exc:
        raise ConfigError(str(exc), mu_key) from None
    grid = _mu_grid(cfg)
    grid = sim.default_mu_grid(moments) if grid is None else grid
    try:
        mu_opt = analysis.optimal_step(inputs, grid, a["closure"])
    except AnalysisError:
        mu_opt = math.nan
    lo, hi = analysis.stability_interval(moments)
    summary = pred.summary()
    header = ["algorithm", "mu", "mu_max", "mu_opt", "tr_R_N", "tr_Lambda", "g_trace"] + list(summary)
    row = [label, mu, hi, mu_opt, float(np.trace(moments.r_n).real), float(np.trace(moments.lam).real), moments.g_trace]
    row += list(summary.values())

    def mat(z):
        return {"re": np.real(z).tolist(), "im": np.imag(z).tolist()}

    side = out_dir / "predict-mswe.intermediates.json"
    side.write_text(
        json.dumps(
            {"H": mat(pred.H), "Y": mat(pred.Y), "theta": mat(pred.theta), "F_alpha": mat(pred.F_alpha),
             "F_beta": mat(pred.F_beta), "R_N": mat(moments.r_n), "Lambda": mat(moments.lam)},
            indent=1,
        ),
        encoding="utf-8",
    )
    return header, [row], {"intermediates": side.name, "moment_draws": moments.n_samples}, False


HELP = {
    "learning-curve": "ensemble MSE per iteration for every configured algorithm",
    "sweep-mu": "steady-state MSE over the sweep.mu step sizes",
    "sweep-doppler": "steady-state MSE over sweep.doppler at the analysis-optimal step",
    "trajectory": "true and estimated amplitude of one tap over trajectory.window",
    "cdf": "empirical fading amplitude CDF against the Rayleigh law",
    "predict-mswe": "steady-state mean-square weight error from the analytical oracle",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lcapa", description="Partial-update affine projection channel estimation experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=HELP[name])
        s.add_argument("--config", type=Path, default=None, help="YAML configuration (default: shipped reference scenario)")
        s.add_argument("--seed", type=int, default=None, help="master seed (run.seed)")
        s.add_argument("--trials", type=int, default=None, help="Monte Carlo trials (run.trials)")
        s.add_argument("--iters", type=int, default=None, help="iterations per trial (run.iters)")
        s.add_argument("--out-dir", type=Path, default=None, help="output directory (output.dir)")
        s.add_argument("--paper-scale", action="store_true", help="use the full-size run lengths for this command")
        s.add_argument("--workers", type=int, default=None, help="worker processes; results do not depend on it")
        if name == "predict-mswe":
            s.add_argument("--mu", type=float, default=None, help="step size (default analysis.mu, then the algorithm's mu)")
    return p


def _overrides(args) -> dict:
    ov = {}
    if args.paper_scale:
        for k, v in PAPER_SCALE[args.command].items():
            ov[f"run.{k}"] = v
    for flag, key in (("seed", "run.seed"), ("trials", "run.trials"), ("iters", "run.iters"), ("workers", "run.workers")):
        val = getattr(args, flag)
        if val is not None:
            ov[key] = val
    if args.out_dir is not None:
        ov["output.dir"] = str(args.out_dir)
    return ov


def _flatten(node, prefix: str) -> dict:
    if isinstance(node, dict):
        out = {}
        for k, v in node.items():
            out.update(_flatten(v, f"{prefix}.{k}"))
        return out
    if isinstance(node, list) and any(isinstance(v, (dict, list)) for v in node):
        out = {}
        for i, v in enumerate(node):
            out.update(_flatten(v, f"{prefix}[{i}]"))
        return out
    return {prefix: node}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    try:
        if args.config is None and not DEFAULT_CONFIG.is_file():
            cfg = resolve(None, _overrides(args))
        else:
            cfg = parse_config(args.config or DEFAULT_CONFIG, _overrides(args))
        out_dir = cfg.out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        name = args.command
        if name == "predict-mswe":
            header, rows, extra, diverged = cmd_predict_mswe(cfg, args.mu, out_dir)
        elif name == "learning-curve":
            header, rows, extra, diverged = cmd_learning_curve(cfg, out_dir)
        else:
            fn = {
                "sweep-mu": cmd_sweep_mu,
                "sweep-doppler": cmd_sweep_doppler,
                "trajectory": cmd_trajectory,
                "cdf": cmd_cdf,
            }[name]
            header, rows, extra, diverged = fn(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    csv_path = out_dir / f"{name}.csv"
    cfg_path = out_dir / f"{name}.config.yaml"
    write_csv(csv_path, header, rows)
    cfg_path.write_text(dump_resolved(cfg.resolved), encoding="utf-8")
    manifest = {
        "command": name,
        "csv": csv_path.name,
        "config": cfg_path.name,
        "seed": cfg.scenario.seed,
        "trials": cfg.scenario.n_trials,
        "iters": cfg.scenario.n_iters,
        "rows": len(rows),
        "status": "diverged" if diverged else "ok",
        "started_utc": started,
        "finished_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "package_version": _version(),
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
    }
    manifest.update(extra)
    manifest.update(_flatten(cfg.resolved, "config"))
    write_manifest(out_dir / f"{name}.manifest.txt", manifest)
    if diverged:
        print(f"warning: divergent trials in {name}; see {out_dir / (name + '.manifest.txt')}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
