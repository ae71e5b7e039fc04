"""Partially observable Markov game over one payload period.

Each platoon leader is an agent.  Per slot every agent picks one flat action
``subchannel * H + power_level``; the environment resamples small-scale
fading, evaluates the groupcast rates, drains the payloads and pays the team
reward.  Agent ``i`` observes, normalized to ``[0, 1]``::

    [interference at its tail vehicle per subchannel in the previous slot,
     remaining payload fraction, remaining slot fraction]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import channel
from .config import ScenarioConfig


@dataclass(frozen=True)
class Action:
    subchannel: int
    power_level: int


def action_encode(action: Action, n_subchannels: int, n_power_levels: int) -> int:
    if not (0 <= action.subchannel < n_subchannels and 0 <= action.power_level < n_power_levels):
        raise ValueError(f"action {action} outside a {n_subchannels}x{n_power_levels} grid")
    return action.subchannel * n_power_levels + action.power_level


def action_decode(flat_id: int, n_subchannels: int, n_power_levels: int) -> Action:
    if not 0 <= flat_id < n_subchannels * n_power_levels:
        raise ValueError(f"action id {flat_id} outside [0, {n_subchannels * n_power_levels})")
    return Action(int(flat_id) // n_power_levels, int(flat_id) % n_power_levels)


def reward_fn(rates, remaining_bits, remaining_slots: int, tau: float) -> float:
    """Team reward for one slot.

    ``rates`` are the rates achieved this slot (0 for silent platoons) and
    ``remaining_bits`` the payload left after the slot.  While any platoon
    still has bits left the reward is the summed rate; once every payload is
    delivered it is ``tau`` times the slots left in the period.
    """
    if np.any(np.asarray(remaining_bits) > 0):
        return float(np.sum(rates))
    return float(tau * remaining_slots)


class EnvUsageError(RuntimeError):
    pass


def episode_rng(seed: int, episode_idx: int, stream: int = 0) -> np.random.Generator:
    """Generator for one episode; training uses stream 0, evaluation stream 1."""
    return np.random.default_rng([int(seed), int(stream), int(episode_idx)])


class PlatoonEnv:
    def __init__(self, cfg: ScenarioConfig, trace: bool = False):
        self.cfg = cfg
        self.trace_enabled = trace
        self.n_agents = cfg.n_platoons
        self.n_actions = cfg.n_actions
        self.obs_dim = cfg.obs_dim
        self.noise_w = float(channel.dbm_to_watt(cfg.noise_dbm))
        self.power_w = channel.dbm_to_watt(np.asarray(cfg.power_levels_dbm))
        self.bits_per_rate = cfg.subchannel_bw_hz * cfg.slot_ms * 1e-3
        self._lo, self._hi = cfg.interference_range_dbm
        self.done = True

    # state -------------------------------------------------------------

    def reset(self, episode_idx: int = 0, rng: np.random.Generator | None = None,
              stream: int = 0) -> np.ndarray:
        cfg = self.cfg
        self.rng = rng if rng is not None else episode_rng(cfg.rng_seed, episode_idx, stream)
        self.episode_idx = episode_idx
        self.topology = channel.build_topology(cfg, self.rng)
        self.alpha_db = channel.update_large_scale(self.topology, cfg, self.rng)
        self._alpha_lin = 10.0 ** (self.alpha_db / 10.0)
        self.slot = 0
        self.remaining_bits = np.full(self.n_agents, cfg.payload_bits)
        self.last_interference_w = np.full((self.n_agents, cfg.n_subchannels), self.noise_w)
        self.completed_slot = np.full(self.n_agents, -1)
        self.done = not np.any(self.remaining_bits > 0)
        self.trace: list[dict] = []
        return self.observations()

    @property
    def remaining_slots(self) -> int:
        return self.cfg.n_slots - self.slot

    @property
    def last_interference_dbm(self) -> np.ndarray:
        return channel.watt_to_dbm(self.last_interference_w)

    def observations(self) -> np.ndarray:
        cfg = self.cfg
        interf = (self.last_interference_dbm - self._lo) / (self._hi - self._lo)
        obs = np.empty((self.n_agents, self.obs_dim))
        obs[:, : cfg.n_subchannels] = np.clip(interf, 0.0, 1.0)
        if cfg.payload_bits > 0:
            obs[:, -2] = self.remaining_bits / cfg.payload_bits
        else:
            obs[:, -2] = 0.0
        obs[:, -1] = self.remaining_slots / cfg.n_slots
        return obs

    # dynamics ----------------------------------------------------------

    def step(self, actions) -> tuple[np.ndarray, float, bool, dict]:
        if self.done:
            raise EnvUsageError("step() called on a finished episode; call reset()")
        cfg = self.cfg
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.n_agents,):
            raise ValueError(f"expected {self.n_agents} actions, got shape {actions.shape}")
        if np.any((actions < 0) | (actions >= self.n_actions)):
            raise ValueError("action id out of range")
        h = channel.update_small_scale(self._alpha_lin.shape, self.rng)
        gains = self._alpha_lin * h
        channels = actions // cfg.n_power_levels
        powers = self.power_w[actions % cfg.n_power_levels]
        active = (self.remaining_bits > 0).astype(np.uint8)
        sinr, rates, tail_w = channel.evaluate_slot(
            gains, channels, powers, active, self.noise_w, cfg.n_subchannels, cfg.rate_receiver
        )
        delivered = np.minimum(rates * self.bits_per_rate, self.remaining_bits)
        self.remaining_bits = np.maximum(self.remaining_bits - rates * self.bits_per_rate, 0.0)
        self.last_interference_w = tail_w
        self.slot += 1
        just_done = (active == 1) & (self.remaining_bits <= 0)
        self.completed_slot[just_done] = self.slot
        reward = reward_fn(rates, self.remaining_bits, self.remaining_slots, cfg.tau)
        all_done = not np.any(self.remaining_bits > 0)
        self.done = all_done or self.slot >= cfg.n_slots
        info = {
            "rates": rates,
            "sinr": sinr,
            "gains": gains,
            "delivered_bits": delivered,
            "active": active.astype(bool),
            "completed": all_done,
        }
        if self.trace_enabled:
            self.trace.append(
                {
                    "slot": self.slot - 1,
                    "actions": actions.tolist(),
                    "rates": rates.tolist(),
                    "reward": reward,
                    "remaining_bits": self.remaining_bits.tolist(),
                }
            )
        return self.observations(), reward, self.done, info

    def delivered(self) -> np.ndarray:
        """Per-platoon flags: payload fully delivered within the period."""
        return ~(self.remaining_bits > 0)
