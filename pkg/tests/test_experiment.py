import csv
import json
import math

import pytest
import yaml

from skysched.channel import bessel_j0
from skysched.cli import main as cli_main
from skysched.errors import ConfigError
from skysched.experiment import (
    METRICS_FIELDS,
    emit_figure_data,
    load_config,
    parse_config,
    run_experiment,
)


def base_config(output_dir, **overrides):
    cfg = {
        "output_dir": str(output_dir),
        "seeds": [0],
        "scenario": {"m_links": 3, "k_links": 3, "n_slots": 8},
        "channel": {"t_delay": 0.01},
        "lyapunov": {"v_weight": 100.0},
        "agents": {
            "kinds": ["random"],
            "episodes": 2,
            "hyperparams": {"preset": "desk", "hidden_width": 16, "batch_size": 4, "warmup_steps": 4},
        },
        "mobility": {"platoon": {"n_vehicles": 9, "mean_speed": 13.89, "spacing": 25.0, "seed": 5}},
        "env": {"outage_samples": 50},
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- validation ---------------------------------------------------------------


def test_parse_minimal_config(tmp_path):
    cfg = parse_config(base_config(tmp_path / "out"))
    assert cfg.episodes == 2
    assert cfg.agent_kinds == ["random"]


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda c: c.pop("seeds"), "seeds"),
        (lambda c: c.update(seeds=[0, 0]), "seeds"),
        (lambda c: c["scenario"].update(k_links=9), "k_links"),
        (lambda c: c["agents"].update(kinds=["bogus"]), "agents.kinds"),
        (lambda c: c["agents"].pop("episodes"), "agents.episodes"),
        (lambda c: c["agents"]["hyperparams"].update(preset="x"), "preset"),
        (lambda c: c.update(mobility={}), "mobility"),
        (lambda c: c["mobility"]["platoon"].pop("spacing"), "mobility.platoon"),
        (lambda c: c["mobility"]["platoon"].update(n_vehicles=5), "n_vehicles"),
        (lambda c: c.update(sweep={"bogus_key": [1]}), "sweep.bogus_key"),
        (lambda c: c.update(sweep={"k_links": []}), "sweep.k_links"),
        (lambda c: c.update(sweep={"k_links": [9]}), "k_links"),
        (lambda c: c["scenario"].update(nonsense=1), "scenario"),
        (lambda c: c.update(env={"outage_samples": 0}), "outage_samples"),
        (lambda c: c.update(unknown_block={}), "unknown"),
    ],
)
def test_validation_errors_name_the_field(tmp_path, mutate, needle):
    cfg = base_config(tmp_path / "out")
    mutate(cfg)
    with pytest.raises(ConfigError, match=needle):
        parse_config(cfg)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.yaml")


def test_load_config_trace_file_checked(tmp_path):
    cfg = base_config(tmp_path / "out", mobility={"trace": "missing.csv"})
    with pytest.raises(ConfigError, match="mobility.trace"):
        parse_config(cfg, base_dir=tmp_path)


# -- run_experiment ------------------------------------------------------------


def test_run_writes_expected_schema(tmp_path):
    cfg = parse_config(base_config(tmp_path / "out"))
    result = run_experiment(cfg)
    rows = read_rows(result.metrics_path)
    assert len(rows) == 2 * 8  # episodes * slots, training rows only
    assert tuple(rows[0].keys()) == METRICS_FIELDS
    eval_rows = read_rows(result.eval_path)
    assert len(eval_rows) == 8
    assert all(int(r["episode"]) == 2 for r in eval_rows)
    summary = json.loads(result.summary_path.read_text())
    assert summary["schema"] == "skysched-summary-v1"
    assert "random" in summary["runs"]
    timing = read_rows(result.timing_path)
    assert len(timing) == 3 * 8


def test_summary_means_are_seed_averages(tmp_path):
    cfg = parse_config(base_config(tmp_path / "out", seeds=[0, 1]))
    result = run_experiment(cfg)
    info = result.summary["runs"]["random"]
    for key, mean_value in info["mean"].items():
        per_seed = [info["per_seed"][s][key] for s in ("0", "1")]
        assert mean_value == pytest.approx(sum(per_seed) / 2.0, rel=1e-12)


def test_rerun_is_byte_identical(tmp_path):
    cfg_a = parse_config(base_config(tmp_path / "a"))
    cfg_b = parse_config(base_config(tmp_path / "b"))
    ra, rb = run_experiment(cfg_a), run_experiment(cfg_b)
    for name in ("metrics_path", "eval_path"):
        assert getattr(ra, name).read_bytes() == getattr(rb, name).read_bytes()
    sa = json.loads(ra.summary_path.read_text())
    sb = json.loads(rb.summary_path.read_text())
    sa["config"].pop("output_dir")
    sb["config"].pop("output_dir")
    assert sa == sb


def test_trace_file_config_runs(tmp_path):
    from skysched.mobility import generate_platoon, write_trace

    trace = generate_platoon(9, 13.89, 25.0, 9, seed=1)
    trace_path = tmp_path / "trace.csv"
    write_trace(trace, trace_path)
    cfg = base_config(tmp_path / "out", mobility={"trace": str(trace_path)})
    result = run_experiment(parse_config(cfg))
    assert result.metrics_path.exists()


# -- figures -------------------------------------------------------------------


@pytest.fixture(scope="module")
def delay_sweep_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    cfg = base_config(
        out / "metrics",
        sweep={"t_delay": [0.002, 0.004, 0.006, 0.008, 0.010]},
        agents={
            "kinds": ["random"],
            "episodes": 1,
            "hyperparams": {"preset": "desk", "hidden_width": 16, "batch_size": 4},
        },
    )
    result = run_experiment(parse_config(cfg))
    return result.output_dir


def test_energy_figure_moving_average_recomputation(tmp_path):
    cfg = parse_config(base_config(tmp_path / "out"))
    result = run_experiment(cfg)
    path = emit_figure_data(result.output_dir, "energy_vs_slot")
    fig_rows = read_rows(path)
    eval_rows = read_rows(result.eval_path)
    cumulative = 0.0
    for row in fig_rows:
        slot = int(row["slot"])
        energy = float(eval_rows[slot]["energy_j"])
        cumulative += energy
        assert float(row["moving_avg_energy_j_mean"]) == pytest.approx(cumulative / (slot + 1), rel=1e-9)


def test_reward_curve_figure(tmp_path):
    cfg = parse_config(base_config(tmp_path / "out"))
    result = run_experiment(cfg)
    path = emit_figure_data(result.output_dir, "reward_curve")
    rows = read_rows(path)
    metrics = read_rows(result.metrics_path)
    ep0 = sum(float(r["reward"]) for r in metrics if r["episode"] == "0")
    got = next(r for r in rows if r["episode"] == "0")
    assert float(got["reward_mean"]) == pytest.approx(ep0, rel=1e-9)
    assert float(got["reward_stderr"]) == 0.0  # single seed


def test_delay_figure_emits_decreasing_j0(delay_sweep_dir):
    path = emit_figure_data(delay_sweep_dir, "rate_vs_delay")
    rows = read_rows(path)
    delays = [float(r["t_delay"]) for r in rows]
    j0s = [float(r["j0_correlation"]) for r in rows]
    assert delays == sorted(delays)
    assert all(a > b for a, b in zip(j0s, j0s[1:]))
    base = 2.0 * math.pi * 5.9e9 * 1.5 / 299_792_458.0
    for d, j in zip(delays, j0s):
        assert j == pytest.approx(bessel_j0(base * d), rel=1e-12)


def test_missing_sweep_dimension_is_diagnosed(tmp_path):
    cfg = parse_config(base_config(tmp_path / "out"))
    result = run_experiment(cfg)
    with pytest.raises(ConfigError, match="available sweep dimensions"):
        emit_figure_data(result.output_dir, "rate_vs_K")


def test_runtime_table_shape(delay_sweep_dir):
    path = emit_figure_data(delay_sweep_dir, "runtime_table")
    rows = read_rows(path)
    assert len(rows) == 1  # one agent
    assert rows[0]["agent"] == "random"
    assert "k_3" in rows[0]
    assert float(rows[0]["k_3"]) >= 0.0


def test_rate_vs_k_figure(tmp_path):
    cfg = base_config(
        tmp_path / "out",
        sweep={"k_links": [2, 3]},
        mobility={"platoon": {"n_vehicles": 9, "mean_speed": 13.89, "spacing": 25.0, "seed": 5}},
    )
    result = run_experiment(parse_config(cfg))
    path = emit_figure_data(result.output_dir, "rate_vs_K")
    rows = read_rows(path)
    assert [int(r["k_links"]) for r in rows] == [2, 3]


def test_tradeoff_figure(tmp_path):
    cfg = base_config(tmp_path / "out", sweep={"v_weight": [10.0, 100.0]})
    result = run_experiment(parse_config(cfg))
    path = emit_figure_data(result.output_dir, "tradeoff_vs_V")
    rows = read_rows(path)
    assert [float(r["v_weight"]) for r in rows] == [10.0, 100.0]
    assert all("sum_rate_mbps_mean" in r and "energy_avg_j_mean" in r for r in rows)


def test_unknown_figure_kind(tmp_path):
    with pytest.raises(ConfigError, match="unknown kind"):
        emit_figure_data(tmp_path, "pie_chart")


# -- CLI ------------------------------------------------------------------------


def test_cli_validate_ok(tmp_path, capsys):
    path = write_config(tmp_path, base_config(tmp_path / "out"))
    assert cli_main(["validate", str(path)]) == 0
    assert "OK" in capsys.readouterr().out


def test_cli_validate_bad_config(tmp_path, capsys):
    cfg = base_config(tmp_path / "out")
    cfg.pop("seeds")
    path = write_config(tmp_path, cfg)
    assert cli_main(["validate", str(path)]) == 2
    assert "seeds" in capsys.readouterr().err


def test_cli_run_and_figure(tmp_path, capsys):
    path = write_config(tmp_path, base_config(tmp_path / "out"))
    assert cli_main(["run", "--quiet", str(path)]) == 0
    out = capsys.readouterr().out
    assert "metrics" in out
    assert cli_main(["figure", "reward_curve", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "figures" / "reward_curve.csv").exists()


def test_cli_figure_missing_dir(tmp_path):
    assert cli_main(["figure", "reward_curve", str(tmp_path / "nope")]) == 2
