"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The trained runs are session fixtures shared by criteria 4 to 9, so the
whole module takes roughly an hour on one core.  ``PLATOON_VDN_ACCEPT_EPISODES``
shortens training and evaluation for a quick dry run of the plumbing; the
verdicts only mean something at the default length.
"""

from __future__ import annotations

import math
import os
import time

import numpy as np
import pytest

from platoon_vdn import channel, harness, nn, vdn
from platoon_vdn.config import ScenarioConfig
from platoon_vdn.env import PlatoonEnv

from conftest import oracle_sinr

pytestmark = pytest.mark.slow

DRY_RUN = os.environ.get("PLATOON_VDN_ACCEPT_EPISODES")
WINDOW = 200
SWEEP = list(range(1, 11))
EVAL_EPISODES = 500
if DRY_RUN:
    WINDOW = max(int(DRY_RUN) // 4, 1)
    EVAL_EPISODES = 20
TIE = 0.02


# shared trained runs ---------------------------------------------------------------


@pytest.fixture(scope="session")
def desk():
    cfg = ScenarioConfig()
    return cfg.replace(n_episodes=int(DRY_RUN)) if DRY_RUN else cfg


@pytest.fixture(scope="session")
def vdn_runs(desk, tmp_path_factory):
    """VDN at the three tau values, desk config otherwise."""
    runs = {}
    for tau in (0.5, 0.3, 0.8):
        out = tmp_path_factory.mktemp(f"vdn_tau{tau}")
        t0 = time.perf_counter()
        run = harness.run_training(desk.replace(tau=tau), "vdn", out)
        run["seconds"] = time.perf_counter() - t0
        runs[tau] = run
    return runs


@pytest.fixture(scope="session")
def marl_run(desk, tmp_path_factory):
    return harness.run_training(desk, "marl", tmp_path_factory.mktemp("marl"))


def curve(run) -> np.ndarray:
    return np.array([row["total_reward"] for row in run["result"].log])


def random_mean_reward(cfg: ScenarioConfig, episodes: int = WINDOW) -> float:
    env = PlatoonEnv(cfg)
    policy = vdn.RandomPolicy(cfg.n_platoons, cfg.n_actions)
    rng = np.random.default_rng([cfg.rng_seed, 0xA5])
    return float(np.mean([vdn.run_episode(env, policy, 1.0, rng, e, stream=1).total_reward
                          for e in range(episodes)]))


def policies(desk, vdn_runs, marl_run):
    v = vdn_runs[0.5]["result"]
    m = marl_run["result"]
    return {
        "vdn": harness.make_policy("vdn", v.params, desk),
        "marl": harness.make_policy("marl", m.params, desk,
                                    {"fingerprint": m.extra["fingerprint"]}),
        "random": harness.make_policy("random", None, desk),
    }


# 1: gradients ---------------------------------------------------------------------


def test_criterion_1_gradients_match_finite_differences(record_criterion):
    rng = np.random.default_rng(20)
    t0 = time.perf_counter()
    worst = 0.0
    n_instances = 20
    for i in range(n_instances):
        n_agents = int(rng.integers(1, 4))
        hidden = int(rng.integers(3, 7))
        n_actions = int(rng.integers(2, 5))
        obs_dim = 3
        mode = ("standard", "literal")[i % 2]
        records = []
        for e in range(int(rng.integers(1, 3))):
            n = int(rng.integers(1, 6))
            records.append(vdn.EpisodeRecord(
                obs=rng.random((n + 1, n_agents, obs_dim)),
                actions=rng.integers(0, n_actions, (n, n_agents)),
                rewards=rng.normal(size=n),
                dones=np.r_[np.zeros(n - 1, bool), rng.random() < 0.7],
                episode=e,
            ))
        d = obs_dim + n_actions + n_agents
        p = nn.init_qnet(d, n_actions, hidden, rng)
        t = nn.init_qnet(d, n_actions, hidden, rng)
        for a in p.arrays():
            a += rng.normal(0, 0.3, a.shape)
        _, grads = vdn.vdn_loss(records, p, t, 0.9, mode)
        flat, g = p.flat(), grads.flat()
        num = np.zeros_like(flat)
        step = 1e-5
        for j in range(flat.size):
            for s in (1.0, -1.0):
                q = p.copy()
                f2 = flat.copy()
                f2[j] += s * step
                q.load_flat(f2)
                num[j] += s * vdn.vdn_loss(records, q, t, 0.9, mode)[0]
        num /= 2 * step
        rel = np.abs(num - g) / np.maximum(np.abs(num) + np.abs(g), 1e-7)
        worst = max(worst, float(rel.max()))
    seconds = time.perf_counter() - t0
    ok = worst < 1e-4 and seconds < 60
    record_criterion(1, "gradient correctness", ok,
                     f"{n_instances} instances, worst relative error {worst:.2e}, {seconds:.1f} s")
    assert ok


# 2: SINR / rate oracle ----------------------------------------------------------------


def test_criterion_2_sinr_and_rate_match_oracle(record_criterion):
    rng = np.random.default_rng(21)
    t0 = time.perf_counter()
    worst = 0.0
    n_cases = 10_000
    for _ in range(n_cases):
        n = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        m = int(rng.integers(1, 5))
        chans = rng.integers(0, k, n)
        powers = channel.dbm_to_watt(rng.choice([23.0, 15.0, 10.0, -114.0], n))
        active = (rng.random(n) < 0.8).astype(np.uint8)
        gains = 10.0 ** rng.uniform(-14, -6, (n, n, m))
        noise = 10.0 ** rng.uniform(-15, -13)
        sinr_v, rate_v, _ = channel.evaluate_slot(gains, chans, powers, active, noise, k)
        for p in range(n):
            own = [oracle_sinr(p, chans[p], chans, powers, active, gains[:, p, j], noise)
                   for j in range(m)]
            for j in range(m):
                got = channel.sinr(p, int(chans[p]), chans, powers, active, gains[:, p, j], noise)
                for value in (got, sinr_v[p, j]):
                    if own[j] == 0.0:
                        assert value == 0.0
                    else:
                        worst = max(worst, abs(value - own[j]) / own[j])
            expected = math.log2(1.0 + min(own))
            for value in (channel.effective_rate(own), rate_v[p]):
                if expected == 0.0:
                    assert value == 0.0
                else:
                    worst = max(worst, abs(value - expected) / expected)
    seconds = time.perf_counter() - t0
    ok = worst <= 1e-12 and seconds < 10
    record_criterion(2, "SINR/rate oracle", ok,
                     f"{n_cases} configurations, worst relative error {worst:.2e}, {seconds:.1f} s")
    assert ok


# 3: argmax consistency -------------------------------------------------------------------


def test_criterion_3_mixer_argmax_consistency(record_criterion):
    rng = np.random.default_rng(22)
    t0 = time.perf_counter()
    n_agents, n_actions = 4, 8
    mismatches = 0
    for _ in range(1000):
        table = rng.normal(size=(n_agents, n_actions))
        q_tot = (table[0][:, None, None, None] + table[1][None, :, None, None]
                 + table[2][None, None, :, None] + table[3][None, None, None, :])
        joint = np.unravel_index(np.argmax(q_tot), q_tot.shape)
        per_agent = tuple(int(np.argmax(row)) for row in table)
        best = vdn.mix(table[np.arange(n_agents), list(per_agent)])
        if tuple(int(a) for a in joint) != per_agent or not np.isclose(best, q_tot.max()):
            mismatches += 1
    seconds = time.perf_counter() - t0
    ok = mismatches == 0 and seconds < 1
    record_criterion(3, "mixer argmax consistency", ok,
                     f"1000 tables, {mismatches} mismatches, {seconds:.2f} s")
    assert ok


# 4: convergence ----------------------------------------------------------------------


def test_criterion_4_convergence(record_criterion, desk, vdn_runs):
    run = vdn_runs[0.5]
    r = curve(run)
    first, final = r[:WINDOW].mean(), r[-WINDOW:].mean()
    baseline = random_mean_reward(desk)
    rising = final > first
    margin = final >= 1.2 * baseline
    ok = rising and margin
    record_criterion(
        4, "convergence", ok,
        f"first window {first:.1f}, final window {final:.1f}, random {baseline:.1f}, "
        f"final/random {final / baseline:.3f} (need >= 1.2), rising={rising}, "
        f"{run['seconds'] / 60:.1f} min")
    assert rising, "final window does not exceed the first"
    assert margin, "final window is not 20% above random"


# 5: ordering -----------------------------------------------------------------------------


def _delivery(policy, algo, cfg, seed):
    res = harness.evaluate(cfg, policy, algo, SWEEP, EVAL_EPISODES, seed=seed, keep_rates=True)
    return {row["payload_multiple"]: row["delivery_probability"] for row in res.rows}, res


@pytest.fixture(scope="session")
def sweep(desk, vdn_runs, marl_run):
    pols = policies(desk, vdn_runs, marl_run)
    results = {seed: {} for seed in (0, 1, 2)}
    raw = {}
    for algo, pol in pols.items():
        results[0][algo], raw[algo] = _delivery(pol, algo, desk, 0)

    def ensure(seed):
        if not results[seed]:
            for algo, pol in pols.items():
                results[seed][algo], _ = _delivery(pol, algo, desk, seed)
        return results[seed]

    return {"results": results, "ensure": ensure, "raw": raw}


def _pair_holds(sweep, hi, lo, m):
    """``hi >= lo`` at payload ``m``; ties are settled by two more seeds."""
    diff = sweep["results"][0][hi][m] - sweep["results"][0][lo][m]
    if diff > TIE:
        return True
    if diff < -TIE:
        return False
    votes = [diff >= 0] + [sweep["ensure"](s)[hi][m] >= sweep["ensure"](s)[lo][m] for s in (1, 2)]
    return sum(votes) >= 2


def test_criterion_5_delivery_ordering(record_criterion, sweep):
    base = sweep["results"][0]
    order_ok = all(_pair_holds(sweep, "vdn", "marl", m) and _pair_holds(sweep, "marl", "random", m)
                   for m in SWEEP)
    reach = [m for m in SWEEP if base["vdn"][m] >= 0.5]
    gap_ok = False
    gap_txt = "VDN never reaches 0.5"
    if reach:
        m_star = max(reach)
        gap = base["vdn"][m_star] - base["random"][m_star]
        gap_ok = gap >= 0.1
        gap_txt = f"at {m_star}x VDN-Random = {gap:+.3f}"
    table = "; ".join(f"{m}x {base['vdn'][m]:.2f}/{base['marl'][m]:.2f}/{base['random'][m]:.2f}"
                      for m in SWEEP)
    ok = order_ok and gap_ok
    record_criterion(5, "delivery ordering VDN >= MARL >= Random", ok,
                     f"ordering={order_ok}, {gap_txt}; vdn/marl/random: {table}")
    assert order_ok
    assert gap_ok


# 6: post-completion silence ----------------------------------------------------------------


def test_criterion_6_post_completion_silence(record_criterion, desk, vdn_runs):
    """After completion the system stays silent for the rest of the period.

    Episodes end at completion, so the remaining slots are played by
    re-opening the finished environment and feeding it the greedy actions.
    """
    policy = harness.make_policy("vdn", vdn_runs[0.5]["result"].params, desk)
    rng = np.random.default_rng([desk.rng_seed, 0xE7])
    completed = violations = forced = 0
    levels = desk.n_power_levels
    for m in (1, 2, 4):
        env = PlatoonEnv(desk.replace(payload_bytes=m * harness.PAYLOAD_UNIT_BYTES))
        for ep in range(100):
            rec = vdn.run_episode(env, policy, 0.0, rng, ep, stream=1)
            # within the episode: a platoon is silent after its own completion
            for i in range(env.n_agents):
                if env.completed_slot[i] > 0:
                    after = rec.rates[env.completed_slot[i]:, i]
                    violations += int(np.any(after != 0.0))
                    tail = rec.actions[env.completed_slot[i]:, i]
                    forced += int(np.sum(tail % levels != levels - 1))
            if not rec.delivered.all() or len(rec) >= desk.n_slots:
                continue
            completed += 1
            obs = env.observations()
            while env.slot < desk.n_slots:
                env.done = False  # every step re-marks the finished episode as done
                actions, _ = policy.act(obs, 0.0, rng)
                obs, _, _, info = env.step(actions)
                forced += int(np.sum(actions % levels != levels - 1))
                violations += int(np.sum(info["rates"]) != 0.0)
            env.done = True
    ok = violations == 0 and completed > 0
    record_criterion(6, "post-completion silence", ok,
                     f"{completed} completed episodes, {forced} transmit choices forced silent, "
                     f"{violations} non-zero slots")
    assert ok


# 7: tau sensitivity ----------------------------------------------------------------------


def test_criterion_7_tau_sensitivity(record_criterion, vdn_runs):
    finals = {}
    finite = True
    for tau, run in vdn_runs.items():
        log = run["result"].log
        losses = np.array([row["loss"] for row in log[-WINDOW:]])
        finite &= bool(np.all(np.isfinite(losses))) and bool(np.all(np.isfinite(curve(run))))
        finals[tau] = curve(run)[-WINDOW:].mean()
        assert len(log) == len(vdn_runs[0.5]["result"].log)
    ordered = finals[0.5] >= finals[0.3]
    ok = finite and ordered
    record_criterion(7, "tau sensitivity", ok,
                     ", ".join(f"tau={t} final {finals[t]:.1f}" for t in (0.3, 0.5, 0.8))
                     + f", finite={finite}")
    assert finite
    assert ordered


# 8: determinism and persistence -----------------------------------------------------------


def test_criterion_8_determinism_and_persistence(record_criterion, desk, vdn_runs, tmp_path):
    small = desk.replace(n_episodes=60, rng_seed=11)
    a = harness.run_training(small, "vdn", tmp_path / "a")
    harness.run_training(small, "vdn", tmp_path / "b")
    same_curve = ((tmp_path / "a" / "reward_curve.csv").read_bytes()
                  == (tmp_path / "b" / "reward_curve.csv").read_bytes())
    for name in ("e1", "e2"):
        harness.run_evaluation(small, "vdn", tmp_path / name, [1, 4], 50, seed=3,
                               checkpoint=tmp_path / "a" / "checkpoint.bin")
    same_metrics = ((tmp_path / "e1" / "metrics.csv").read_bytes()
                    == (tmp_path / "e2" / "metrics.csv").read_bytes())

    full = vdn_runs[0.5]
    nets, meta, cfg = harness.load_policy_checkpoint(full["out_dir"] / "checkpoint.bin", desk)
    bit_exact = all(x.flat().tobytes() == y.flat().tobytes()
                    for x, y in zip(full["result"].params, nets))
    live = harness.evaluate(desk, harness.make_policy("vdn", full["result"].params, desk),
                            "vdn", [2, 6], 100, seed=5)
    loaded = harness.evaluate(cfg, harness.make_policy(meta["algo"], nets, cfg, meta),
                              "vdn", [2, 6], 100, seed=5)
    harness.write_csv(tmp_path / "live.csv", live.rows, harness.METRIC_COLUMNS)
    harness.write_csv(tmp_path / "loaded.csv", loaded.rows, harness.METRIC_COLUMNS)
    same_eval = (tmp_path / "live.csv").read_bytes() == (tmp_path / "loaded.csv").read_bytes()
    del a
    ok = same_curve and same_metrics and bit_exact and same_eval
    record_criterion(8, "determinism and persistence", ok,
                     f"curves identical={same_curve}, metrics identical={same_metrics}, "
                     f"checkpoint bit-exact={bit_exact}, reloaded eval identical={same_eval}")
    assert ok


# 9: replay and schedule ------------------------------------------------------------------


def test_criterion_9_replay_and_schedule(record_criterion, desk, vdn_runs):
    result = vdn_runs[0.5]["result"]
    schedule_ok = all(row["epsilon"] == max(1.0 - desk.eps_delta * row["episode"], desk.eps_min)
                      for row in result.log)
    schedule_ok &= all(rec.epsilon == max(1.0 - desk.eps_delta * rec.episode, desk.eps_min)
                       for rec in result.memory)

    # replay the recorded actions through the environment: same slots, same order
    rng = np.random.default_rng(9)
    sample = result.memory.sample(desk.batch_episodes, rng)
    env = PlatoonEnv(desk)
    order_ok = True
    for rec in sample:
        obs = env.reset(rec.episode, stream=0)
        order_ok &= bool(np.array_equal(obs, rec.obs[0]))
        for t, a in enumerate(rec.actions):
            obs, r, done, _ = env.step(a)
            order_ok &= bool(np.array_equal(obs, rec.obs[t + 1])) and r == rec.rewards[t]
            order_ok &= done == rec.dones[t]

    # terminal observations never reach a target
    params, target = result.params[0], result.target[0]
    base, _ = vdn.vdn_loss(sample, params, target, desk.discount, reward_scale=desk.reward_scale)
    poked = []
    for rec in sample:
        obs = rec.obs.copy()
        obs[-1] = rng.uniform(0, 1, obs[-1].shape)
        poked.append(vdn.EpisodeRecord(obs=obs, actions=rec.actions, rewards=rec.rewards,
                                       dones=rec.dones, episode=rec.episode))
    after, _ = vdn.vdn_loss(poked, params, target, desk.discount, reward_scale=desk.reward_scale)
    batch = vdn.build_batch(sample, desk.n_actions)
    single_done = all(rec.dones[-1] and not rec.dones[:-1].any() for rec in sample)
    boot_ok = after == base and single_done and bool(np.all(batch.dones[batch.mask == 0]))
    ok = schedule_ok and order_ok and boot_ok
    record_criterion(9, "replay and schedule", ok,
                     f"schedule={schedule_ok}, slot order={order_ok}, no bootstrap across done="
                     f"{boot_ok}, {len(result.log)} logged episodes")
    assert ok
