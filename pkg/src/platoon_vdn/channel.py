"""Highway geometry and the V2V groupcast channel.

Links run from every platoon leader (transmitter) to every follower of every
platoon (receiver).  Link arrays are indexed ``[tx_platoon, rx_platoon,
follower]`` with followers numbered from 0 (closest to the leader) to ``M - 1``
(the tail vehicle).

Two clocks drive the fading: the large-scale coefficient (pathloss, antenna
gain, log-normal shadowing) is redrawn once per episode, the unit-mean
exponential small-scale power coefficient once per slot.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, ScenarioConfig
from .kernels import slot_evaluate

SPEED_OF_LIGHT = 299_792_458.0
# antenna heights for the WINNER+ B1 LOS option, meters
_VEHICLE_HEIGHT = 1.5


def dbm_to_watt(p_dbm):
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=float)) + 30.0


def pathloss_db(d_m, carrier_hz: float):
    """Free-space pathloss ``20 log10(4 pi d f / c)`` in dB."""
    d = np.asarray(d_m, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("distance must be > 0")
    out = 20.0 * np.log10(4.0 * math.pi * d * carrier_hz / SPEED_OF_LIGHT)
    return float(out) if out.ndim == 0 else out


def pathloss_winner_b1_los_db(d_m, carrier_hz: float):
    """WINNER+ B1 line-of-sight pathloss with both antennas at vehicle height."""
    d = np.asarray(d_m, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("distance must be > 0")
    fc_ghz = carrier_hz / 1e9
    h_eff = _VEHICLE_HEIGHT - 1.0
    d_bp = 4.0 * h_eff * h_eff * carrier_hz / SPEED_OF_LIGHT
    d = np.maximum(d, 3.0)
    near = 22.7 * np.log10(d) + 41.0 + 20.0 * np.log10(fc_ghz / 5.0)
    far = (40.0 * np.log10(d) + 9.45 - 34.6 * np.log10(h_eff) + 2.7 * np.log10(fc_ghz / 5.0))
    out = np.where(d < d_bp, near, far)
    return float(out) if out.ndim == 0 else out


PATHLOSS = {"free_space": pathloss_db, "winner_b1_los": pathloss_winner_b1_los_db}


@dataclass(frozen=True)
class Topology:
    """Vehicle coordinates, shape ``(N, platoon_len, 2)``; index 0 is the leader."""

    positions: np.ndarray
    lanes: tuple[int, ...]

    pl_index = 0

    @property
    def n_platoons(self) -> int:
        return self.positions.shape[0]

    @property
    def tail_index(self) -> int:
        return self.positions.shape[1] - 1

    def leader_to_member_distances(self) -> np.ndarray:
        """Distances ``[tx, rx, follower]`` from each leader to each follower."""
        leaders = self.positions[:, 0, :]
        followers = self.positions[:, 1:, :]
        diff = leaders[:, None, None, :] - followers[None, :, :, :]
        return np.sqrt(np.sum(diff * diff, axis=-1))

    def to_json(self) -> str:
        return json.dumps(
            {
                "lanes": list(self.lanes),
                "positions": self.positions.tolist(),
            },
            indent=2,
        )


def build_topology(cfg: ScenarioConfig, rng: np.random.Generator | None = None) -> Topology:
    """Place the platoons on two adjacent lanes with evenly spaced heads.

    With ``rng`` given, every head gets an independent uniform along-road
    jitter of at most ``cfg.head_jitter_m``.
    """
    n = cfg.n_platoons
    if n < 1 or cfg.head_to_tail_m <= 0:
        raise ConfigError("need at least one platoon and a positive head-to-tail distance")
    spacing = cfg.head_to_tail_m / cfg.n_followers
    if cfg.lane_spacing_scheme == "alternate":
        lanes = [i % 2 for i in range(n)]
        heads = [i * cfg.road_length_m / n for i in range(n)]
    else:
        per_lane = -(-n // 2)
        lanes = [0 if i < per_lane else 1 for i in range(n)]
        heads = []
        for i in range(n):
            slot = i if i < per_lane else i - per_lane
            heads.append(slot * cfg.road_length_m / per_lane)
    heads = np.asarray(heads, dtype=float)
    if rng is not None and cfg.head_jitter_m > 0:
        heads = heads + rng.uniform(-cfg.head_jitter_m, cfg.head_jitter_m, size=n)
    offsets = np.arange(cfg.platoon_len, dtype=float) * spacing
    pos = np.empty((n, cfg.platoon_len, 2))
    pos[:, :, 0] = heads[:, None] - offsets[None, :]
    pos[:, :, 1] = (np.asarray(lanes, dtype=float) * cfg.lane_width_m)[:, None]
    return Topology(positions=pos, lanes=tuple(lanes))


def update_large_scale(topo: Topology, cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Large-scale coefficient in dB, ``G - PL(d) - SH``, for every leader-to-follower link."""
    d = topo.leader_to_member_distances()
    pl = PATHLOSS[cfg.pathloss_model](d, cfg.carrier_hz)
    shadow = rng.normal(0.0, cfg.shadow_std_db, size=d.shape) if cfg.shadow_std_db > 0 else 0.0
    return cfg.antenna_gain_db - pl - shadow


def update_small_scale(shape, rng: np.random.Generator) -> np.ndarray:
    """Fresh i.i.d. unit-mean exponential (Rayleigh power) coefficients."""
    return rng.exponential(1.0, size=shape)


def channel_gain(alpha_db, h):
    return 10.0 ** (np.asarray(alpha_db, dtype=float) / 10.0) * h


def sinr(own: int, k: int, channels, powers_w, active, gains_to_rx, noise_w: float) -> float:
    """SINR at one receiver of platoon ``own`` on subchannel ``k``.

    ``gains_to_rx[i]`` is the linear gain from leader ``i`` to the receiver.
    Returns 0 when platoon ``own`` is not transmitting on ``k``.
    """
    if not active[own] or channels[own] != k:
        return 0.0
    interference = 0.0
    for i in range(len(channels)):
        if i != own and active[i] and channels[i] == k:
            interference += powers_w[i] * gains_to_rx[i]
    return powers_w[own] * gains_to_rx[own] / (noise_w + interference)


def effective_rate(member_sinrs, receiver: str = "min") -> float:
    """Groupcast spectral efficiency (bits/s/Hz), limited by the worst follower.

    ``receiver="tail"`` uses the last (tail) follower only.
    """
    s = np.asarray(member_sinrs, dtype=float)
    worst = s[-1] if receiver == "tail" else s.min()
    return float(np.log2(1.0 + worst))


def evaluate_slot(gains, channels, powers_w, active, noise_w: float, n_subchannels: int,
                  receiver: str = "min"):
    """Evaluate one slot for all platoons at once.

    Returns ``(sinr[N, M], rate[N], tail_interference_w[N, K])`` where the last
    term is noise plus the power received at each platoon's tail vehicle from
    other leaders, per subchannel.
    """
    return slot_evaluate(
        np.ascontiguousarray(gains, dtype=np.float64),
        np.ascontiguousarray(channels, dtype=np.int64),
        np.ascontiguousarray(powers_w, dtype=np.float64),
        np.ascontiguousarray(active, dtype=np.uint8),
        float(noise_w),
        int(n_subchannels),
        receiver == "tail",
    )
