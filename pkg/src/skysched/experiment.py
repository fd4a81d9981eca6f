"""Experiment orchestration: config parsing and validation, seeded runs,
metrics persistence, and figure-ready tables.

A config is one YAML document with blocks for the scenario, channel, energy
model, Lyapunov weights, agents, mobility source, env options, an optional
sweep (lists over k_links / v_weight / t_delay / denoise_steps, crossed), and
seeds. Every run is fully determined by (config, seed): metrics.csv, eval.csv
and summary.json are byte-reproducible; wall-clock inference times go to
timing.csv, which is the one non-reproducible output (consumed only by the
runtime_table figure).
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import yaml

from .agents import AGENT_KINDS, AgentHyperparams, desk_scale_hyperparams, train
from .channel import ChannelParams, bessel_j0
from .energy import PowerModelParams
from .env import NetworkScenario, VehicularEnv
from .errors import ConfigError
from .lyapunov import LyapunovConfig
from .mobility import MobilityTrace, generate_platoon, load_trace

SWEEP_KEYS = ("k_links", "v_weight", "t_delay", "denoise_steps")
FIGURE_KINDS = ("reward_curve", "rate_vs_K", "rate_vs_delay", "energy_vs_slot", "tradeoff_vs_V", "runtime_table")

METRICS_FIELDS = (
    "run_id", "seed", "episode", "slot", "reward", "mean_v2u_rate_mbps",
    "energy_j", "moving_avg_energy_j", "queue_j", "outage_violations",
)
TIMING_FIELDS = ("run_id", "seed", "episode", "slot", "inference_ms")


@dataclass
class ExperimentConfig:
    """Validated, resolved experiment description."""

    output_dir: Path
    seeds: list[int]
    agent_kinds: list[str]
    episodes: int
    scenario: NetworkScenario
    channel: ChannelParams
    energy: PowerModelParams
    lyapunov: LyapunovConfig
    hyperparams: AgentHyperparams
    mobility: dict
    outage_samples: int
    normalizer_warmup: int
    sweep: dict[str, list]
    resolved: dict  # plain-dict echo persisted into summary.json


def _build_block(cls, block, name: str):
    if block is None:
        block = {}
    if not isinstance(block, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(block).__name__}")
    try:
        return cls(**block)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def parse_config(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a loaded YAML mapping; error messages name the failing field."""
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    known = {"output_dir", "seeds", "scenario", "channel", "energy", "lyapunov", "agents", "mobility", "env", "sweep"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")

    if "output_dir" not in data:
        raise ConfigError("output_dir: required")
    output_dir = Path(data["output_dir"])
    if base_dir is not None and not output_dir.is_absolute():
        output_dir = base_dir / output_dir

    seeds = data.get("seeds")
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds: required non-empty list of integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds: must be distinct")

    scenario = _build_block(NetworkScenario, data.get("scenario"), "scenario")
    channel = _build_block(ChannelParams, data.get("channel"), "channel")
    energy = _build_block(PowerModelParams, data.get("energy"), "energy")
    lyapunov = _build_block(LyapunovConfig, data.get("lyapunov"), "lyapunov")

    agents_block = data.get("agents")
    if not isinstance(agents_block, dict):
        raise ConfigError("agents: required mapping with 'kinds' and 'episodes'")
    kinds = agents_block.get("kinds")
    if not isinstance(kinds, list) or not kinds:
        raise ConfigError("agents.kinds: required non-empty list")
    for kind in kinds:
        if kind not in AGENT_KINDS:
            raise ConfigError(f"agents.kinds: unknown agent {kind!r}; choose from {AGENT_KINDS}")
    if len(set(kinds)) != len(kinds):
        raise ConfigError("agents.kinds: must be distinct")
    episodes = agents_block.get("episodes")
    if not isinstance(episodes, int) or episodes < 1:
        raise ConfigError("agents.episodes: required integer >= 1")
    hp_block = dict(agents_block.get("hyperparams") or {})
    preset = hp_block.pop("preset", "full")
    if preset == "desk":
        try:
            hyperparams = desk_scale_hyperparams(**hp_block)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"agents.hyperparams: {exc}") from None
    elif preset == "full":
        hyperparams = _build_block(AgentHyperparams, hp_block, "agents.hyperparams")
    else:
        raise ConfigError(f"agents.hyperparams.preset: unknown preset {preset!r} (use 'desk' or 'full')")
    extra = set(agents_block) - {"kinds", "episodes", "hyperparams"}
    if extra:
        raise ConfigError(f"agents: unknown keys {sorted(extra)}")

    mobility = data.get("mobility")
    if not isinstance(mobility, dict) or ("platoon" in mobility) == ("trace" in mobility):
        raise ConfigError("mobility: required mapping with exactly one of 'platoon' or 'trace'")
    if "trace" in mobility:
        trace_path = Path(mobility["trace"])
        if base_dir is not None and not trace_path.is_absolute():
            trace_path = base_dir / trace_path
        if not trace_path.exists():
            raise ConfigError(f"mobility.trace: file not found: {trace_path}")
        mobility = {"trace": str(trace_path)}
    else:
        platoon = dict(mobility["platoon"])
        required = {"n_vehicles", "mean_speed", "spacing", "seed"}
        missing = required - set(platoon)
        if missing:
            raise ConfigError(f"mobility.platoon: missing keys {sorted(missing)}")
        allowed = required | {"position_jitter", "speed_jitter", "lane_y"}
        unknown = set(platoon) - allowed
        if unknown:
            raise ConfigError(f"mobility.platoon: unknown keys {sorted(unknown)}")
        mobility = {"platoon": platoon}

    env_block = data.get("env") or {}
    if not isinstance(env_block, dict) or set(env_block) - {"outage_samples", "normalizer_warmup"}:
        raise ConfigError("env: accepts only 'outage_samples' and 'normalizer_warmup'")
    outage_samples = env_block.get("outage_samples", 500)
    normalizer_warmup = env_block.get("normalizer_warmup", 1000)
    if not isinstance(outage_samples, int) or outage_samples < 1:
        raise ConfigError("env.outage_samples: must be an integer >= 1")
    if not isinstance(normalizer_warmup, int) or normalizer_warmup < 0:
        raise ConfigError("env.normalizer_warmup: must be an integer >= 0")

    sweep_block = data.get("sweep") or {}
    if not isinstance(sweep_block, dict):
        raise ConfigError("sweep: expected a mapping of parameter -> list of values")
    sweep: dict[str, list] = {}
    for key, values in sweep_block.items():
        if key not in SWEEP_KEYS:
            raise ConfigError(f"sweep.{key}: unknown sweep key; choose from {SWEEP_KEYS}")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{key}: must be a non-empty list")
        sweep[key] = values

    max_k = max([scenario.k_links, *sweep.get("k_links", [])])
    if max_k > scenario.m_links:
        raise ConfigError(f"sweep.k_links: max value {max_k} exceeds scenario.m_links {scenario.m_links}")
    if "platoon" in mobility:
        needed = scenario.m_links + 2 * max_k
        if mobility["platoon"]["n_vehicles"] < needed:
            raise ConfigError(
                f"mobility.platoon.n_vehicles: need at least {needed} vehicles for M={scenario.m_links}, K={max_k}"
            )

    resolved = {
        "output_dir": str(output_dir),
        "seeds": list(seeds),
        "scenario": asdict(scenario) | {"pairing": None},
        "channel": asdict(channel),
        "energy": asdict(energy),
        "lyapunov": asdict(lyapunov),
        "agents": {"kinds": list(kinds), "episodes": episodes, "hyperparams": asdict(hyperparams)},
        "mobility": mobility,
        "env": {"outage_samples": outage_samples, "normalizer_warmup": normalizer_warmup},
        "sweep": {k: list(v) for k, v in sweep.items()},
    }
    return ExperimentConfig(
        output_dir=output_dir,
        seeds=list(seeds),
        agent_kinds=list(kinds),
        episodes=episodes,
        scenario=scenario,
        channel=channel,
        energy=energy,
        lyapunov=lyapunov,
        hyperparams=hyperparams,
        mobility=mobility,
        outage_samples=outage_samples,
        normalizer_warmup=normalizer_warmup,
        sweep=sweep,
        resolved=resolved,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: YAML parse error: {exc}") from None
    return parse_config(data, base_dir=path.parent)


def _sweep_points(sweep: dict[str, list]) -> list[dict]:
    if not sweep:
        return [{}]
    keys = list(sweep)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(sweep[k] for k in keys))]


def _run_id(kind: str, point: dict) -> str:
    parts = [kind] + [f"{k}={v}" for k, v in point.items()]
    return "__".join(parts)


def _build_trace(cfg: ExperimentConfig) -> MobilityTrace:
    if "trace" in cfg.mobility:
        return load_trace(cfg.mobility["trace"], slot_duration=cfg.scenario.slot_duration)
    p = cfg.mobility["platoon"]
    return generate_platoon(
        p["n_vehicles"],
        p["mean_speed"],
        p["spacing"],
        cfg.scenario.n_slots + 1,
        p["seed"],
        slot_duration=cfg.scenario.slot_duration,
        position_jitter=p.get("position_jitter", 1.0),
        speed_jitter=p.get("speed_jitter", 1.0),
        lane_y=p.get("lane_y", 0.0),
    )


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(float(value))  # plain-float repr even for numpy scalars
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values)


def _stderr(values) -> float:
    values = list(values)
    if len(values) < 2:
        return 0.0
    mu = _mean(values)
    var = sum((v - mu) ** 2 for v in values) / (len(values) - 1)
    return math.sqrt(var / len(values))


@dataclass
class ExperimentResult:
    output_dir: Path
    metrics_path: Path
    eval_path: Path
    timing_path: Path
    summary_path: Path
    summary: dict


def run_experiment(cfg: ExperimentConfig, *, progress=None) -> ExperimentResult:
    """Train and evaluate every (agent, sweep point, seed) combination, then
    persist metrics.csv, eval.csv, timing.csv, and summary.json."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    trace = _build_trace(cfg)

    metric_rows: list[tuple] = []
    eval_rows: list[tuple] = []
    timing_rows: list[tuple] = []
    runs_summary: dict[str, dict] = {}

    for point in _sweep_points(cfg.sweep):
        scenario = cfg.scenario
        channel = cfg.channel
        lyapunov = cfg.lyapunov
        hp = cfg.hyperparams
        if "k_links" in point:
            scenario = replace(scenario, k_links=point["k_links"])
        if "t_delay" in point:
            channel = replace(channel, t_delay=point["t_delay"])
        if "v_weight" in point:
            lyapunov = replace(lyapunov, v_weight=point["v_weight"])
        if "denoise_steps" in point:
            hp = replace(hp, denoise_steps=point["denoise_steps"])
        for kind in cfg.agent_kinds:
            run_id = _run_id(kind, point)
            per_seed: dict[str, dict] = {}
            for seed in cfg.seeds:
                if progress is not None:
                    progress(f"run {run_id} seed {seed}")
                env = VehicularEnv(
                    scenario,
                    channel,
                    cfg.energy,
                    lyapunov,
                    trace,
                    seed=seed,
                    observe_aged=(kind != "d3pg_wcsi"),
                    outage_samples=cfg.outage_samples,
                    normalizer_warmup=cfg.normalizer_warmup,
                )
                result = train(kind, env, hp, seed, cfg.episodes, run_id=run_id)
                for rec in result.records:
                    metric_rows.append(_metric_row(rec))
                    timing_rows.append((rec.run_id, rec.seed, rec.episode, rec.slot, rec.inference_ms))
                for rec in result.eval_records:
                    eval_rows.append(_metric_row(rec))
                    timing_rows.append((rec.run_id, rec.seed, rec.episode, rec.slot, rec.inference_ms))
                per_seed[str(seed)] = _seed_summary(result, scenario)
            mean_summary = {
                key: _mean(stats[key] for stats in per_seed.values()) for key in next(iter(per_seed.values()))
            }
            runs_summary[run_id] = {
                "agent": kind,
                "sweep": point,
                "per_seed": per_seed,
                "mean": mean_summary,
            }

    metrics_path = out / "metrics.csv"
    eval_path = out / "eval.csv"
    timing_path = out / "timing.csv"
    summary_path = out / "summary.json"
    _write_csv(metrics_path, METRICS_FIELDS, metric_rows)
    _write_csv(eval_path, METRICS_FIELDS, eval_rows)
    _write_csv(timing_path, TIMING_FIELDS, timing_rows)
    summary = {
        "schema": "skysched-summary-v1",
        "config": cfg.resolved,
        "sweep_keys": sorted(cfg.sweep),
        "runs": runs_summary,
    }
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ExperimentResult(
        output_dir=out,
        metrics_path=metrics_path,
        eval_path=eval_path,
        timing_path=timing_path,
        summary_path=summary_path,
        summary=summary,
    )


def _metric_row(rec) -> tuple:
    return (
        rec.run_id, rec.seed, rec.episode, rec.slot, rec.reward, rec.mean_v2u_rate_mbps,
        rec.energy_j, rec.moving_avg_energy_j, rec.queue_j, rec.outage_violations,
    )


def _seed_summary(result, scenario: NetworkScenario) -> dict:
    """Per-seed aggregates used by summary.json and the figure emitters."""
    tail = result.episode_rewards[-10:]
    train_records = result.records
    eval_records = result.eval_records
    last_episode = max(r.episode for r in train_records)
    final_train = [r for r in train_records if r.episode == last_episode]
    eval_rates = [r.mean_v2u_rate_mbps for r in eval_records]
    eval_energy = [r.energy_j for r in eval_records]
    return {
        "reward_final10_mean": _mean(tail),
        "reward_final_episode": result.episode_rewards[-1],
        "eval_mean_rate_mbps": _mean(eval_rates),
        "eval_sum_rate_mbps": _mean(eval_rates) * scenario.m_links,
        "eval_energy_avg_j": _mean(eval_energy),
        "eval_final_moving_avg_energy_j": eval_records[-1].moving_avg_energy_j,
        "eval_final_queue_j": eval_records[-1].queue_j,
        "train_final_moving_avg_energy_j": final_train[-1].moving_avg_energy_j,
        "train_final_queue_j": final_train[-1].queue_j,
        "outage_violation_rate": _mean(r.outage_violations for r in train_records) / scenario.k_links,
    }


# -- figure emitters ---------------------------------------------------------


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _load_summary(metrics_dir: Path) -> dict:
    path = metrics_dir / "summary.json"
    if not path.exists():
        raise ConfigError(f"figure: no summary.json under {metrics_dir}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _require_sweep(summary: dict, key: str, figure: str) -> None:
    available = summary.get("sweep_keys", [])
    if key not in available:
        raise ConfigError(
            f"figure {figure} requires a sweep over {key}; available sweep dimensions: {available or 'none'}"
        )


def emit_figure_data(metrics_dir, kind: str) -> Path:
    """Write one figure-ready table under <metrics_dir>/figures/<kind>.csv."""
    metrics_dir = Path(metrics_dir)
    if kind not in FIGURE_KINDS:
        raise ConfigError(f"figure: unknown kind {kind!r}; choose from {FIGURE_KINDS}")
    summary = _load_summary(metrics_dir)
    fig_dir = metrics_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    out_path = fig_dir / f"{kind}.csv"

    if kind == "reward_curve":
        rows = _read_csv(metrics_dir / "metrics.csv")
        per_episode: dict[tuple[str, int, int], float] = {}
        for r in rows:
            key = (r["run_id"], int(r["seed"]), int(r["episode"]))
            per_episode[key] = per_episode.get(key, 0.0) + float(r["reward"])
        grouped: dict[tuple[str, int], list[float]] = {}
        for (run_id, _seed, episode), total in per_episode.items():
            grouped.setdefault((run_id, episode), []).append(total)
        out_rows = [
            (run_id, episode, _mean(vals), _stderr(vals))
            for (run_id, episode), vals in sorted(grouped.items())
        ]
        _write_csv(out_path, ("run_id", "episode", "reward_mean", "reward_stderr"), out_rows)

    elif kind == "rate_vs_K":
        _require_sweep(summary, "k_links", kind)
        out_rows = _sweep_rows(summary, "k_links", "eval_sum_rate_mbps")
        _write_csv(out_path, ("agent", "k_links", "sum_rate_mbps_mean", "sum_rate_mbps_stderr"), out_rows)

    elif kind == "rate_vs_delay":
        _require_sweep(summary, "t_delay", kind)
        chan = summary["config"]["channel"]
        base = 2.0 * math.pi * chan["carrier_frequency"] * chan["s_rel_min"] / chan["light_speed"]
        out_rows = []
        for agent, value, mean, err in _sweep_rows(summary, "t_delay", "eval_sum_rate_mbps"):
            out_rows.append((agent, value, bessel_j0(base * value), mean, err))
        _write_csv(
            out_path,
            ("agent", "t_delay", "j0_correlation", "sum_rate_mbps_mean", "sum_rate_mbps_stderr"),
            out_rows,
        )

    elif kind == "energy_vs_slot":
        rows = _read_csv(metrics_dir / "eval.csv")
        if not rows:
            raise ConfigError("figure energy_vs_slot: eval.csv has no rows")
        grouped: dict[tuple[str, int], list[tuple[float, float]]] = {}
        for r in rows:
            grouped.setdefault((r["run_id"], int(r["slot"])), []).append(
                (float(r["energy_j"]), float(r["moving_avg_energy_j"]))
            )
        out_rows = [
            (run_id, slot, _mean(e for e, _ in vals), _mean(m for _, m in vals))
            for (run_id, slot), vals in sorted(grouped.items())
        ]
        _write_csv(out_path, ("run_id", "slot", "energy_j_mean", "moving_avg_energy_j_mean"), out_rows)

    elif kind == "tradeoff_vs_V":
        _require_sweep(summary, "v_weight", kind)
        rate_rows = {(a, v): (m, e) for a, v, m, e in _sweep_rows(summary, "v_weight", "eval_sum_rate_mbps")}
        energy_rows = {(a, v): m for a, v, m, _ in _sweep_rows(summary, "v_weight", "eval_energy_avg_j")}
        queue_rows = {(a, v): m for a, v, m, _ in _sweep_rows(summary, "v_weight", "eval_final_queue_j")}
        out_rows = [
            (a, v, rate[0], rate[1], energy_rows[(a, v)], queue_rows[(a, v)])
            for (a, v), rate in sorted(rate_rows.items())
        ]
        _write_csv(
            out_path,
            ("agent", "v_weight", "sum_rate_mbps_mean", "sum_rate_mbps_stderr", "energy_avg_j_mean", "final_queue_j_mean"),
            out_rows,
        )

    else:  # runtime_table
        timing = _read_csv(metrics_dir / "timing.csv")
        if not timing:
            raise ConfigError("figure runtime_table: timing.csv has no rows")
        run_info = {run_id: info for run_id, info in summary["runs"].items()}
        base_k = summary["config"]["scenario"]["k_links"]
        samples: dict[tuple[str, int], list[float]] = {}
        for r in timing:
            info = run_info[r["run_id"]]
            k = info["sweep"].get("k_links", base_k)
            samples.setdefault((info["agent"], int(k)), []).append(float(r["inference_ms"]))
        agents = sorted({a for a, _ in samples})
        k_values = sorted({k for _, k in samples})
        header = ("agent", *(f"k_{k}" for k in k_values))
        out_rows = [
            (agent, *(_mean(samples[(agent, k)]) if (agent, k) in samples else "" for k in k_values))
            for agent in agents
        ]
        _write_csv(out_path, header, out_rows)

    return out_path


def _sweep_rows(summary: dict, sweep_key: str, stat: str) -> list[tuple]:
    """(agent, sweep value, mean across seeds, stderr across seeds) rows."""
    out = []
    for run_id, info in sorted(summary["runs"].items()):
        if sweep_key not in info["sweep"]:
            continue
        values = [stats[stat] for stats in info["per_seed"].values()]
        out.append((info["agent"], info["sweep"][sweep_key], _mean(values), _stderr(values)))
    return sorted(out)
