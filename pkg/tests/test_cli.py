import csv
from pathlib import Path

import pytest
import yaml

from lcapa import cli
from lcapa.config import parse_config, resolve
from lcapa.errors import ConfigError

REPO = Path(__file__).resolve().parents[1]
PAPER = REPO / "configs" / "paper.yaml"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def write_yaml(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def small(tmp_path, **extra):
    data = {
        "algorithms": [{"algorithm": "NLMS", "mu": 0.1}, {"algorithm": "APA", "mu": 0.2, "order": 2, "label": "APA2"}],
        "run": {"iters": 120, "trials": 2},
        "sweep": {"mu": [0.05, 0.1], "doppler": [10.0, 25.0]},
        "analysis": {"draws": 2000},
        "trajectory": {"window": [50, 100]},
        "cdf": {"samples": 20000, "points": 11},
    }
    data.update(extra)
    return write_yaml(tmp_path, data)


# -- configuration


def test_shipped_config_matches_scenario():
    cfg = parse_config(PAPER)
    sc = cfg.scenario
    assert sc.noise_var == 1e-3
    assert sc.fading.sample_period_s == 8e-7
    assert sc.model.alpha == 0.9
    assert sc.model.q_std ** 2 == pytest.approx(1e-4)
    assert sc.model.cfo_rad_per_sample == 1e-4
    assert sc.filter_length == 5
    assert [a.label for a in cfg.algorithms][-1] == "LC-APA(K=3,B=5,S=2)"


def test_minimal_config_fills_defaults(tmp_path):
    p = write_yaml(tmp_path, {"channel": {"profile": "paper-m7"}, "algorithms": [{"algorithm": "NLMS", "mu": 0.2}]})
    cfg = parse_config(p)
    assert cfg.scenario.filter_length == 7
    assert cfg.scenario.n_trials == 30 and cfg.scenario.n_iters == 10_000
    assert cfg.resolved["channel"]["alpha"] == 0.9
    assert cfg.resolved["run"]["seed"] == 20100


@pytest.mark.parametrize(
    "data,key",
    [
        ({"chanel": {}}, "chanel"),
        ({"channel": {"dopler_hz": 5}}, "channel.dopler_hz"),
        ({"algorithms": [{"algorithm": "NLMS", "mu": 0.1, "stepsize": 1}]}, "algorithms[0].stepsize"),
        ({"algorithms": [{"algorithm": "NLMS"}]}, "algorithms[0].mu"),
        ({"algorithms": [{"algorithm": "APA", "mu": 0.1, "blocks": 3}]}, "algorithms[0].blocks"),
        ({"run": {"trials": 0}}, "run.trials"),
        ({"run": {"iters": 2.5}}, "run.iters"),
        ({"channel": {"alpha": 1.2}}, "channel.alpha"),
        ({"channel": {"mode": "jakes"}}, "channel.mode"),
        ({"channel": {"profile": "nope"}}, "channel.profile"),
        ({"analysis": {"closure": "exact"}}, "analysis.closure"),
        ({"sweep": {"mu": [0.1, -1]}}, "sweep.mu[1]"),
        ({"algorithms": [{"algorithm": "NLMS", "mu": 0.1}, {"algorithm": "NLMS", "mu": 0.2}]}, "algorithms"),
    ],
)
def test_config_errors_cite_key(data, key):
    with pytest.raises(ConfigError) as info:
        resolve(data)
    assert info.value.key == key


def test_divisibility_error_text(tmp_path, capsys):
    p = write_yaml(tmp_path, {"algorithms": [{"algorithm": "APA", "mu": 0.2, "blocks": 3}]})
    assert cli.main(["learning-curve", "--config", str(p), "--out-dir", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "algorithms[0].blocks" in err and "not divisible" in err and "B = M / L" in err


def test_missing_file_exit_code(tmp_path, capsys):
    assert cli.main(["cdf", "--config", str(tmp_path / "absent.yaml")]) == 2
    assert "<file>" in capsys.readouterr().err


def test_ar1_mode_with_mean_taps():
    cfg = resolve({
        "channel": {"mode": "ar1_cfo", "mean_taps": [1, [0, 1], 0, 0, 0.5], "drift": "doppler", "sample_period_s": 1e-3},
        "algorithms": [{"algorithm": "NLMS", "mu": 0.1}],
    })
    m = cfg.scenario.model
    assert m.mean_taps[1] == 1j
    assert m.alpha == pytest.approx(cfg.scenario.fading.r1)


# -- subcommands


def test_learning_curve_shape(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["learning-curve", "--config", str(small(tmp_path)), "--out-dir", str(out)]) == 0
    rows = read_csv(out / "learning-curve.csv")
    assert rows[0] == ["iteration", "NLMS", "APA2"]
    assert len(rows) == 121
    assert "e" in rows[5][1] and len(rows[5][1].split("e")[0]) == 18
    manifest = (out / "learning-curve.manifest.txt").read_text()
    assert "csv = learning-curve.csv" in manifest
    assert "divergent_trials.NLMS = 0" in manifest
    assert "config.run.trials = 2" in manifest
    assert read_csv(out / "learning-curve.mswe.csv")[0] == rows[0]


def test_flags_override_config(tmp_path):
    out = tmp_path / "o"
    args = ["learning-curve", "--config", str(small(tmp_path)), "--out-dir", str(out), "--iters", "30", "--trials", "1", "--seed", "5"]
    assert cli.main(args) == 0
    assert len(read_csv(out / "learning-curve.csv")) == 31
    echo = yaml.safe_load((out / "learning-curve.config.yaml").read_text())
    assert echo["run"] == {"iters": 30, "trials": 1, "seed": 5, "workers": 1}


def test_paper_scale_flag_sets_sizes():
    args = cli.build_parser().parse_args(["sweep-doppler", "--paper-scale"])
    assert cli._overrides(args) == {"run.iters": 60_000, "run.trials": 1000}
    args = cli.build_parser().parse_args(["learning-curve", "--paper-scale", "--trials", "3"])
    assert cli._overrides(args) == {"run.iters": 30_000, "run.trials": 3}


def test_predict_mswe_single_row(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["predict-mswe", "--config", str(small(tmp_path)), "--out-dir", str(out), "--mu", "0.1"]) == 0
    rows = read_csv(out / "predict-mswe.csv")
    assert len(rows) == 2
    rec = dict(zip(*rows))
    assert rec["algorithm"] == "NLMS"
    assert float(rec["mu"]) == 0.1
    for key in ("t_mu", "t_paper", "F", "rho_power", "tr_Y_re", "tr_F_alpha_re", "tr_F_beta_im", "norm_H", "tr_theta"):
        assert key in rec
    assert (out / "predict-mswe.intermediates.json").is_file()


def test_predict_mswe_unstable_mu(tmp_path, capsys):
    assert cli.main(["predict-mswe", "--config", str(small(tmp_path)), "--out-dir", str(tmp_path / "o"), "--mu", "5"]) == 2
    assert "--mu" in capsys.readouterr().err


def test_sweep_doppler_rows_per_algorithm(tmp_path):
    out = tmp_path / "o"
    cfgp = small(tmp_path, sweep={"doppler": [10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0]}, run={"iters": 40, "trials": 1})
    assert cli.main(["sweep-doppler", "--config", str(cfgp), "--out-dir", str(out)]) == 0
    rows = read_csv(out / "sweep-doppler.csv")[1:]
    assert len(rows) == 14
    assert sum(r[0] == "NLMS" for r in rows) == 7


def test_sweep_mu_trajectory_cdf(tmp_path):
    out = tmp_path / "o"
    cfgp = small(tmp_path)
    for name in ("sweep-mu", "trajectory", "cdf"):
        assert cli.main([name, "--config", str(cfgp), "--out-dir", str(out)]) == 0
    assert len(read_csv(out / "sweep-mu.csv")) == 1 + 2 * 2
    traj = read_csv(out / "trajectory.csv")
    assert traj[0][:2] == ["iteration", "true_amplitude"] and len(traj) == 51
    cdf = read_csv(out / "cdf.csv")
    assert cdf[0] == ["amplitude", "empirical_cdf", "rayleigh_cdf"] and len(cdf) == 12


def test_divergence_exit_code_with_partial_output(tmp_path):
    out = tmp_path / "o"
    cfgp = write_yaml(tmp_path, {
        "algorithms": [{"algorithm": "LMS", "mu": 1.5, "label": "hot"}, {"algorithm": "NLMS", "mu": 0.1}],
        "run": {"iters": 2000, "trials": 1},
    })
    assert cli.main(["learning-curve", "--config", str(cfgp), "--out-dir", str(out)]) == 1
    rows = read_csv(out / "learning-curve.csv")
    assert rows[1][1] == "nan" and rows[1][2] != "nan"
    assert "status = diverged" in (out / "learning-curve.manifest.txt").read_text()


def test_config_echo_round_trip(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["trajectory", "--config", str(small(tmp_path)), "--out-dir", str(a), "--seed", "9"]) == 0
    echo = a / "trajectory.config.yaml"
    assert cli.main(["trajectory", "--config", str(echo), "--out-dir", str(b)]) == 0
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
