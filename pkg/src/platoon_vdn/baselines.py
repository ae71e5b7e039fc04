"""Comparison policies: uniform random, and independent fingerprinted Q-learners.

The independent learners use the same network shape, optimizer, replay and
exploration schedule as the value-decomposition learner.  The differences
are deliberate and only these: one parameter set per agent, no agent id in
the input, a per-agent TD target on the shared reward (no mixing), and a
training-progress fingerprint ``(epsilon, episode / n_episodes)`` appended to
each observation.
"""

from __future__ import annotations

import logging
import time

import numpy as np

from . import nn
from .config import ScenarioConfig
from .env import PlatoonEnv
from .vdn import (
    EpsilonSchedule,
    RandomPolicy,
    ReplayMemory,
    TrainResult,
    _log_row,
    build_batch,
    epsilon_greedy,
    learner_rngs,
    one_hot,
    run_episode,
    sync_target,
    td_loss,
)

log = logging.getLogger(__name__)


def random_policy(rng: np.random.Generator, n_agents: int, n_actions: int) -> np.ndarray:
    """I.i.d. uniform flat action ids, one per agent."""
    return rng.integers(0, n_actions, size=n_agents)


def fingerprint(epsilon: float, episode: int, n_episodes: int) -> np.ndarray:
    return np.array([epsilon, episode / max(n_episodes, 1)])


def marl_input_dim(cfg: ScenarioConfig) -> int:
    return cfg.obs_dim + cfg.n_actions + 2


class IndependentQPolicy:
    def __init__(self, nets: list[nn.QNetParams], fp: np.ndarray):
        self.nets = nets
        self.fingerprint = np.asarray(fp, dtype=float)

    def begin_episode(self) -> None:
        self.hidden = [np.zeros(n.hidden_size) for n in self.nets]
        self.prev = np.full(len(self.nets), -1, dtype=np.int64)

    def act(self, obs: np.ndarray, eps: float, rng: np.random.Generator):
        actions = np.empty(len(self.nets), dtype=np.int64)
        qs = []
        for i, net in enumerate(self.nets):
            x = np.concatenate([obs[i], one_hot(self.prev[i], net.n_actions), self.fingerprint])
            q, self.hidden[i], _ = nn.qnet_forward(net, x, self.hidden[i])
            actions[i] = epsilon_greedy(q, eps, rng)
            qs.append(q)
        self.prev = actions
        return actions, np.asarray(qs)


def train_marl(cfg: ScenarioConfig, env: PlatoonEnv | None = None, n_episodes: int | None = None,
               callback=None) -> TrainResult:
    """Train one recurrent Q-network per agent on the shared reward."""
    env = env if env is not None else PlatoonEnv(cfg)
    n_episodes = cfg.n_episodes if n_episodes is None else n_episodes
    init_rng, act_rng, sample_rng = learner_rngs(cfg.rng_seed)
    n = cfg.n_platoons
    nets = [nn.init_qnet(marl_input_dim(cfg), cfg.n_actions, cfg.hidden_size, init_rng)
            for _ in range(n)]
    targets = [sync_target(p) for p in nets]
    opts = [nn.Adam(p, lr=cfg.learning_rate) for p in nets]
    memory = ReplayMemory(cfg.replay_capacity)
    schedule = EpsilonSchedule(cfg.eps_delta, cfg.eps_min)
    policy = IndependentQPolicy(nets, fingerprint(1.0, 0, n_episodes))
    updates = 0
    rows = []
    for e in range(n_episodes):
        t0 = time.perf_counter()
        eps = schedule(e)
        policy.fingerprint = fingerprint(eps, e, n_episodes)
        rec = run_episode(env, policy, eps, act_rng, e, fingerprint=policy.fingerprint)
        memory.add(rec)
        loss, clipped = float("nan"), False
        if len(memory) >= cfg.batch_episodes:
            sample = memory.sample(cfg.batch_episodes, sample_rng)
            losses = []
            for i in range(n):
                batch = build_batch(sample, cfg.n_actions, agents=[i], agent_ids=False,
                                    fingerprint=True)
                li, grads = td_loss(nets[i], targets[i], batch, cfg.discount, cfg.target_mode,
                                    cfg.reward_scale)
                _, ci = nn.clip_by_global_norm([grads], cfg.grad_clip_norm)
                opts[i].step(nets[i], grads)
                losses.append(li)
                clipped = clipped or ci
            loss = float(np.mean(losses))
            updates += 1
            if updates % cfg.target_sync_updates == 0:
                targets = [sync_target(p) for p in nets]
        row = _log_row(e, eps, rec, loss, clipped, t0)
        rows.append(row)
        if callback is not None:
            callback(row)
        if e % 100 == 0:
            log.info("marl episode %d eps=%.3f reward=%.2f loss=%.4g", e, eps, row["total_reward"], loss)
    final_fp = fingerprint(schedule(n_episodes), n_episodes, n_episodes)
    return TrainResult(nets, targets, rows, memory,
                       {"updates": updates, "fingerprint": final_fp.tolist()})


__all__ = [
    "IndependentQPolicy",
    "RandomPolicy",
    "fingerprint",
    "marl_input_dim",
    "random_policy",
    "train_marl",
]
