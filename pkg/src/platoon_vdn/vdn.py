"""Value-decomposition Q-learning with a shared recurrent agent network.

Every agent runs the same network on ``observation + previous action one-hot
+ agent id one-hot``; the team value is the sum of the agents' chosen
Q-values and is regressed on ``reward + discount * sum_i max_a Q'_i``.
Training samples whole episodes so the GRU state is rebuilt from the start
of each episode.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .config import ScenarioConfig
from .env import PlatoonEnv

log = logging.getLogger(__name__)


# episodes and replay -------------------------------------------------------


@dataclass
class EpisodeRecord:
    """One episode: ``L`` slots, ``L + 1`` observations (the last is terminal)."""

    obs: np.ndarray          # (L + 1, N, obs_dim)
    actions: np.ndarray      # (L, N) int
    rewards: np.ndarray      # (L,)
    dones: np.ndarray        # (L,) bool
    episode: int = 0
    epsilon: float = 1.0
    fingerprint: np.ndarray | None = None
    delivered: np.ndarray | None = None     # (N,) bool
    rates: np.ndarray | None = None         # (L, N)
    q_values: np.ndarray | None = None      # (L, N, A) when recorded

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def prev_actions(self) -> np.ndarray:
        """Action taken before each observation; -1 before the first slot."""
        n = self.actions.shape[1]
        return np.vstack([np.full((1, n), -1, dtype=np.int64), self.actions])

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))

    def validate(self) -> None:
        n_slots = len(self.rewards)
        if self.obs.shape[0] != n_slots + 1 or self.actions.shape[0] != n_slots:
            raise ValueError("inconsistent episode record lengths")
        if n_slots == 0 or not self.dones[-1] or np.count_nonzero(self.dones) != 1:
            raise ValueError("an episode record needs exactly one done flag, on its last slot")


class ReplayMemory:
    """FIFO ring of whole episodes."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._episodes: deque[EpisodeRecord] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._episodes)

    def __iter__(self):
        return iter(self._episodes)

    def add(self, record: EpisodeRecord) -> None:
        record.validate()
        self._episodes.append(record)

    def sample(self, n: int, rng: np.random.Generator) -> list[EpisodeRecord]:
        if n > len(self._episodes):
            raise ValueError(f"cannot sample {n} episodes from {len(self._episodes)}")
        idx = rng.choice(len(self._episodes), size=n, replace=False)
        return [self._episodes[i] for i in idx]


@dataclass(frozen=True)
class EpsilonSchedule:
    delta: float = 1e-3
    floor: float = 0.03

    def __call__(self, episode: int) -> float:
        return max(1.0 - self.delta * episode, self.floor)


# action selection ----------------------------------------------------------


def one_hot(idx, n: int) -> np.ndarray:
    """One-hot rows along a new last axis; negative ids give all-zero rows."""
    idx = np.asarray(idx, dtype=np.int64)
    flat = idx.reshape(-1)
    out = np.zeros((flat.size, n))
    valid = flat >= 0
    out[np.nonzero(valid)[0], flat[valid]] = 1.0
    return out.reshape(idx.shape + (n,))


def agent_inputs(obs: np.ndarray, prev_actions, n_actions: int, n_agents: int) -> np.ndarray:
    """``obs ⊕ onehot(prev action) ⊕ onehot(agent id)`` for all agents, shape ``(N, D)``."""
    return np.concatenate(
        [obs, one_hot(prev_actions, n_actions), np.eye(n_agents)], axis=-1
    )


def input_dim(cfg: ScenarioConfig) -> int:
    return cfg.obs_dim + cfg.n_actions + cfg.n_platoons


def epsilon_greedy(q: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Uniform action with probability ``eps``, else argmax (lowest id on ties)."""
    if eps > 0.0 and rng.random() < eps:
        return int(rng.integers(q.shape[-1]))
    return int(np.argmax(q))


def select_action(agent_id: int, obs, prev_action: int, hidden, params: nn.QNetParams,
                  eps: float, rng: np.random.Generator, n_agents: int):
    """Single-agent decision; the forward pass runs in both branches."""
    n_actions = params.n_actions
    x = np.concatenate([obs, one_hot(prev_action, n_actions), one_hot(agent_id, n_agents)])
    q, h_next, _ = nn.qnet_forward(params, x, hidden)
    return epsilon_greedy(q, eps, rng), h_next


class SharedQPolicy:
    """Decentralized execution of the shared network: one hidden state per agent."""

    def __init__(self, params: nn.QNetParams, n_agents: int):
        self.params = params
        self.n_agents = n_agents

    def begin_episode(self) -> None:
        self.hidden = np.zeros((self.n_agents, self.params.hidden_size))
        self.prev = np.full(self.n_agents, -1, dtype=np.int64)

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        x = agent_inputs(obs, self.prev, self.params.n_actions, self.n_agents)
        q, self.hidden, _ = nn.qnet_forward(self.params, x, self.hidden)
        return q

    def act(self, obs: np.ndarray, eps: float, rng: np.random.Generator):
        q = self.q_values(obs)
        actions = np.array([epsilon_greedy(q[i], eps, rng) for i in range(self.n_agents)],
                           dtype=np.int64)
        self.prev = actions
        return actions, q


class RandomPolicy:
    def __init__(self, n_agents: int, n_actions: int):
        self.n_agents = n_agents
        self.n_actions = n_actions

    def begin_episode(self) -> None:
        pass

    def act(self, obs, eps, rng):
        return rng.integers(0, self.n_actions, size=self.n_agents), None


def run_episode(env: PlatoonEnv, policy, eps: float, rng: np.random.Generator,
                episode_idx: int, stream: int = 0, keep_q: bool = False,
                fingerprint: np.ndarray | None = None) -> EpisodeRecord:
    obs = env.reset(episode_idx, stream=stream)
    policy.begin_episode()
    obs_list, actions, rewards, dones, rates, qs = [obs], [], [], [], [], []
    while not env.done:
        a, q = policy.act(obs, eps, rng)
        obs, r, done, info = env.step(a)
        obs_list.append(obs)
        actions.append(a)
        rewards.append(r)
        dones.append(done)
        rates.append(info["rates"])
        if keep_q:
            qs.append(q)
    n = env.n_agents
    return EpisodeRecord(
        obs=np.asarray(obs_list),
        actions=np.asarray(actions, dtype=np.int64).reshape(-1, n),
        rewards=np.asarray(rewards, dtype=float),
        dones=np.asarray(dones, dtype=bool),
        episode=episode_idx,
        epsilon=eps,
        fingerprint=fingerprint,
        delivered=env.delivered().copy(),
        rates=np.asarray(rates, dtype=float).reshape(-1, n),
        q_values=np.asarray(qs) if keep_q else None,
    )


# loss ----------------------------------------------------------------------


def mix(q_chosen) -> float:
    """Additive mixer: the team value is the sum of the agents' values."""
    return float(np.sum(q_chosen))


def compute_target(reward: float, done: bool, next_q_target_max, discount: float) -> float:
    if done:
        return float(reward)
    return float(reward + discount * np.sum(next_q_target_max))


@dataclass
class Batch:
    x: np.ndarray         # (T + 1, E * G, D)
    actions: np.ndarray   # (T, E * G)
    rewards: np.ndarray   # (T, E)
    dones: np.ndarray     # (T, E)
    mask: np.ndarray      # (T, E)
    group: int            # agents summed into one team value


def build_batch(records: list[EpisodeRecord], n_actions: int, agents=None,
                agent_ids: bool = True, fingerprint: bool = False) -> Batch:
    """Pad episodes to a common length and lay agents out as rows.

    Row ``e * G + g`` holds agent ``agents[g]`` of episode ``e``.
    """
    n_agents = records[0].actions.shape[1]
    agents = list(range(n_agents)) if agents is None else list(agents)
    g = len(agents)
    n_e = len(records)
    n_t = max(len(r) for r in records)
    obs_dim = records[0].obs.shape[2]
    d = obs_dim + n_actions + (n_agents if agent_ids else 0) + (2 if fingerprint else 0)
    x = np.zeros((n_t + 1, n_e * g, d))
    actions = np.zeros((n_t, n_e * g), dtype=np.int64)
    rewards = np.zeros((n_t, n_e))
    dones = np.ones((n_t, n_e), dtype=bool)
    mask = np.zeros((n_t, n_e))
    eye = np.eye(n_agents)
    for e, rec in enumerate(records):
        n = len(rec)
        rows = slice(e * g, (e + 1) * g)
        obs = rec.obs[:, agents, :]
        parts = [obs, one_hot(rec.prev_actions[:, agents], n_actions)]
        if agent_ids:
            parts.append(np.broadcast_to(eye[agents], (n + 1, g, n_agents)))
        if fingerprint:
            parts.append(np.broadcast_to(rec.fingerprint, (n + 1, g, 2)))
        x[: n + 1, rows] = np.concatenate(parts, axis=-1)
        actions[:n, rows] = rec.actions[:, agents]
        rewards[:n, e] = rec.rewards
        dones[:n, e] = rec.dones
        mask[:n, e] = 1.0
    return Batch(x, actions, rewards, dones, mask, g)


def td_loss(params: nn.QNetParams, target: nn.QNetParams, batch: Batch, discount: float,
            mode: str = "standard", reward_scale: float = 1.0):
    """Mean squared TD error of the summed team value over valid slots.

    Rewards are multiplied by ``reward_scale`` before entering the target.
    Returns ``(loss, grads)``; gradients flow only through ``params``.
    """
    n_t = batch.actions.shape[0]
    n_rows = batch.x.shape[1]
    g = batch.group
    n_e = n_rows // g
    h0 = np.zeros((n_rows, params.hidden_size))
    q, _, cache = nn.unroll_forward(params, batch.x[:n_t], h0)
    q_next, _, _ = nn.unroll_forward(target, batch.x, h0)
    q_next = q_next[1:]

    t_idx = np.arange(n_t)[:, None]
    r_idx = np.arange(n_rows)[None, :]
    chosen = q[t_idx, r_idx, batch.actions]                       # (T, E*G)
    q_tot = chosen.reshape(n_t, n_e, g).sum(axis=2)
    live = 1.0 - batch.dones
    rewards = reward_scale * batch.rewards
    if mode == "standard":
        boot = q_next.max(axis=2).reshape(n_t, n_e, g).sum(axis=2)
        y = rewards + discount * live * boot
    elif mode == "literal":
        boot = q_next[t_idx, r_idx, batch.actions].reshape(n_t, n_e, g).sum(axis=2)
        y = g * rewards + discount * live * boot
    else:
        raise ValueError(f"unknown target mode {mode!r}")
    count = batch.mask.sum()
    err = (q_tot - y) * batch.mask
    loss = float(np.sum(err * err) / count)
    if not np.isfinite(loss):
        raise nn.TrainingError(f"non-finite loss {loss}")
    d_tot = 2.0 * err / count                                      # (T, E)
    grad_q = np.zeros_like(q)
    grad_q[t_idx, r_idx, batch.actions] = np.repeat(d_tot, g, axis=1)
    grads, _ = nn.unroll_backward(params, cache, grad_q)
    return loss, grads


def vdn_loss(records: list[EpisodeRecord], params: nn.QNetParams, target: nn.QNetParams,
             discount: float, mode: str = "standard", reward_scale: float = 1.0):
    batch = build_batch(records, params.n_actions)
    return td_loss(params, target, batch, discount, mode, reward_scale)


def sync_target(params: nn.QNetParams) -> nn.QNetParams:
    return params.copy()


# training ------------------------------------------------------------------


@dataclass
class TrainResult:
    params: list[nn.QNetParams]
    target: list[nn.QNetParams]
    log: list[dict] = field(default_factory=list)
    memory: ReplayMemory | None = None
    extra: dict = field(default_factory=dict)


def learner_rngs(seed: int):
    """Independent generators for network init, exploration and replay sampling."""
    ss = np.random.SeedSequence([int(seed), 0xD0])
    init, act, sample = ss.spawn(3)
    return (np.random.default_rng(init), np.random.default_rng(act),
            np.random.default_rng(sample))


def _log_row(e, eps, rec, loss, clipped, t0):
    return {
        "episode": e,
        "epsilon": eps,
        "total_reward": rec.total_reward,
        "loss": loss,
        "episode_len": len(rec),
        "delivered_fraction": float(np.mean(rec.delivered)),
        "clipped": int(clipped),
        "wall_ms": (time.perf_counter() - t0) * 1e3,
    }


def train(cfg: ScenarioConfig, env: PlatoonEnv | None = None, n_episodes: int | None = None,
          callback=None) -> TrainResult:
    """Train the shared agent network with value decomposition."""
    env = env if env is not None else PlatoonEnv(cfg)
    n_episodes = cfg.n_episodes if n_episodes is None else n_episodes
    init_rng, act_rng, sample_rng = learner_rngs(cfg.rng_seed)
    params = nn.init_qnet(input_dim(cfg), cfg.n_actions, cfg.hidden_size, init_rng)
    target = sync_target(params)
    opt = nn.Adam(params, lr=cfg.learning_rate)
    memory = ReplayMemory(cfg.replay_capacity)
    schedule = EpsilonSchedule(cfg.eps_delta, cfg.eps_min)
    policy = SharedQPolicy(params, cfg.n_platoons)
    updates = 0
    rows = []
    for e in range(n_episodes):
        t0 = time.perf_counter()
        eps = schedule(e)
        rec = run_episode(env, policy, eps, act_rng, e)
        memory.add(rec)
        loss, clipped = float("nan"), False
        if len(memory) >= cfg.batch_episodes:
            batch = memory.sample(cfg.batch_episodes, sample_rng)
            loss, grads = vdn_loss(batch, params, target, cfg.discount, cfg.target_mode,
                                   cfg.reward_scale)
            _, clipped = nn.clip_by_global_norm([grads], cfg.grad_clip_norm)
            opt.step(params, grads)
            updates += 1
            if updates % cfg.target_sync_updates == 0:
                target = sync_target(params)
        row = _log_row(e, eps, rec, loss, clipped, t0)
        rows.append(row)
        if callback is not None:
            callback(row)
        if e % 100 == 0:
            log.info("vdn episode %d eps=%.3f reward=%.2f loss=%.4g", e, eps, row["total_reward"], loss)
    return TrainResult([params], [target], rows, memory, {"updates": updates})
