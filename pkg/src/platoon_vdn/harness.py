"""Experiment orchestration: training runs, greedy evaluation, metrics and persistence."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, config, nn
from .baselines import IndependentQPolicy, train_marl
from .config import ConfigError, ScenarioConfig
from .env import PlatoonEnv
from .vdn import RandomPolicy, SharedQPolicy, run_episode, train

PAYLOAD_UNIT_BYTES = 1200
ALGOS = ("vdn", "marl", "random")


def delivery_probability(outcomes) -> float:
    """Fraction of (episode, platoon) pairs whose payload was fully delivered."""
    arr = np.asarray(outcomes, dtype=bool)
    if arr.size == 0:
        raise ValueError("delivery probability of an empty outcome set")
    return float(arr.mean())


def all_delivered_probability(outcomes) -> float:
    """Fraction of episodes in which every platoon delivered."""
    arr = np.atleast_2d(np.asarray(outcomes, dtype=bool))
    if arr.size == 0:
        raise ValueError("delivery probability of an empty outcome set")
    return float(arr.all(axis=1).mean())


# policies from checkpoints ----------------------------------------------------


def make_policy(algo: str, nets, cfg: ScenarioConfig, meta: dict | None = None):
    if algo == "vdn":
        return SharedQPolicy(nets[0], cfg.n_platoons)
    if algo == "marl":
        fp = (meta or {}).get("fingerprint", [cfg.eps_min, 1.0])
        return IndependentQPolicy(nets, np.asarray(fp))
    if algo == "random":
        return RandomPolicy(cfg.n_platoons, cfg.n_actions)
    raise ValueError(f"unknown algorithm {algo!r}")


def checkpoint_meta(algo: str, cfg: ScenarioConfig, extra: dict | None = None) -> dict:
    meta = {
        "algo": algo,
        "scenario_hash": cfg.scenario_hash(),
        "config": cfg.to_dict(),
        "code_version": __version__,
    }
    meta.update(extra or {})
    return meta


def load_policy_checkpoint(path, cfg: ScenarioConfig | None = None):
    """Load a checkpoint and, when ``cfg`` is given, check it matches the scenario."""
    nets, meta = nn.load_checkpoint(path)
    ckpt_cfg = config.from_mapping(meta["config"])
    if cfg is None:
        cfg = ckpt_cfg
    elif cfg.scenario_hash() != meta["scenario_hash"]:
        raise ConfigError(
            f"checkpoint {path} was trained on scenario {meta['scenario_hash']} but the "
            f"evaluation scenario hashes to {cfg.scenario_hash()}; geometry, radio or network "
            "width differ"
        )
    return nets, meta, cfg


# evaluation --------------------------------------------------------------


@dataclass
class EvalResult:
    rows: list[dict]
    outcomes: dict          # payload multiple -> (episodes, N) bool array
    rate_traces: dict       # payload multiple -> list of per-episode total-rate lists
    step_traces: dict       # payload multiple -> JSON-able per-slot trace of the designated episode


def evaluate(cfg: ScenarioConfig, policy, algo: str, payload_multiples, episodes: int,
             seed: int, trace_episode: int = 0, keep_rates: bool = False) -> EvalResult:
    """Greedy rollouts on the evaluation stream for each payload multiple."""
    rows, outcomes, rates, traces = [], {}, {}, {}
    act_rng = np.random.default_rng([int(seed), 0xE7])
    for m in payload_multiples:
        cfg_m = cfg.replace(payload_bytes=int(round(m * PAYLOAD_UNIT_BYTES)), rng_seed=seed)
        env = PlatoonEnv(cfg_m)
        delivered, rewards, completion, per_episode_rates = [], [], [], []
        for ep in range(episodes):
            env.trace_enabled = ep == trace_episode
            rec = run_episode(env, policy, 0.0, act_rng, ep, stream=1)
            delivered.append(rec.delivered)
            rewards.append(rec.total_reward)
            completion.append(len(rec) if rec.delivered.all() else -1)
            if keep_rates or ep == trace_episode:
                per_episode_rates.append(rec.rates.sum(axis=1).tolist())
            if ep == trace_episode:
                traces[m] = list(env.trace)
        out = np.asarray(delivered, dtype=bool).reshape(episodes, cfg.n_platoons)
        outcomes[m] = out
        rates[m] = per_episode_rates
        done_slots = [c for c in completion if c >= 0]
        rows.append(
            {
                "algo": algo,
                "payload_multiple": m,
                "payload_bytes": cfg_m.payload_bytes,
                "episodes": episodes,
                "delivery_probability": delivery_probability(out),
                "all_delivered_probability": all_delivered_probability(out),
                "mean_reward": float(np.mean(rewards)),
                "mean_completion_slot": float(np.mean(done_slots)) if done_slots else float("nan"),
                "trace_episode": trace_episode,
            }
        )
    return EvalResult(rows, outcomes, rates, traces)


# persistence ---------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> None:
    columns = columns or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(out_dir: Path, cfg: ScenarioConfig, algo: str, seed: int, outputs: dict,
                   started: str, extra: dict | None = None) -> Path:
    manifest = {
        "algo": algo,
        "seed": seed,
        "code_version": __version__,
        "git": _git_describe(),
        "config": cfg.to_dict(),
        "scenario_hash": cfg.scenario_hash(),
        "outputs": outputs,
        "started": started,
        "finished": now(),
    }
    manifest.update(extra or {})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


CURVE_COLUMNS = ["episode", "epsilon", "total_reward", "loss", "episode_len",
                 "delivered_fraction", "clipped"]
LOG_COLUMNS = ["episode", "epsilon", "total_reward", "loss", "wall_ms"]
METRIC_COLUMNS = ["algo", "payload_multiple", "payload_bytes", "episodes",
                  "delivery_probability", "all_delivered_probability", "mean_reward",
                  "mean_completion_slot", "trace_episode"]


def run_training(cfg: ScenarioConfig, algo: str, out_dir, n_episodes: int | None = None) -> dict:
    """Train ``algo`` and write checkpoint, curves and manifest into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = now()
    if algo == "vdn":
        result = train(cfg, n_episodes=n_episodes)
    elif algo == "marl":
        result = train_marl(cfg, n_episodes=n_episodes)
    else:
        raise ValueError(f"cannot train algorithm {algo!r}")
    config.save(cfg, out / "config.toml")
    extra = {k: v for k, v in result.extra.items() if k == "fingerprint"}
    nn.save_checkpoint(out / "checkpoint.bin", result.params, checkpoint_meta(algo, cfg, extra))
    write_csv(out / "reward_curve.csv", result.log, CURVE_COLUMNS)
    write_csv(out / "train_log.csv", result.log, LOG_COLUMNS)
    outputs = {
        "checkpoint": "checkpoint.bin",
        "reward_curve": "reward_curve.csv",
        "train_log": "train_log.csv",
        "config": "config.toml",
    }
    write_manifest(out, cfg, algo, cfg.rng_seed, outputs, started,
                   {"updates": result.extra.get("updates", 0)})
    return {"result": result, "out_dir": out}


def run_evaluation(cfg: ScenarioConfig, algo: str, out_dir, payload_multiples, episodes: int,
                   seed: int, checkpoint=None, trace_episode: int = 0) -> EvalResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = now()
    meta = None
    nets = None
    if algo != "random":
        if checkpoint is None:
            raise ConfigError(f"evaluating {algo} needs a checkpoint")
        nets, meta, cfg = load_policy_checkpoint(checkpoint, cfg)
        algo = meta["algo"]
    policy = make_policy(algo, nets, cfg, meta)
    res = evaluate(cfg, policy, algo, payload_multiples, episodes, seed, trace_episode)
    write_csv(out / "metrics.csv", res.rows, METRIC_COLUMNS)
    trace_rows = []
    for m, steps in res.step_traces.items():
        for s in steps:
            trace_rows.append({"payload_multiple": m, "total_rate": float(np.sum(s["rates"])), **s})
    write_jsonl(out / "rate_trace.jsonl", trace_rows)
    write_manifest(out, cfg, algo, seed,
                   {"metrics": "metrics.csv", "rate_trace": "rate_trace.jsonl"}, started,
                   {"checkpoint": str(checkpoint) if checkpoint else None,
                    "eval_seed": seed, "trace_episode": trace_episode})
    return res
