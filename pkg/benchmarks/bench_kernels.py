"""Compare the compiled and numpy kernels on training-sized inputs.

Usage: python benchmarks/bench_kernels.py [--repeat 5] [--batch 128] [--steps 60]

Times the per-slot channel kernel, the GRU recurrence (forward, backward)
and one full team TD-loss evaluation with gradients, once per backend.
"""

from __future__ import annotations

import argparse
import sys
import timeit
from contextlib import contextmanager

import numpy as np

from platoon_vdn import kernels, nn, vdn
from platoon_vdn.config import ScenarioConfig
from platoon_vdn.env import PlatoonEnv

BACKENDS = {
    "numpy": (kernels.slot_evaluate_py, kernels.gru_forward_seq_py, kernels.gru_backward_seq_py),
    "cython": (kernels.slot_evaluate_c, kernels.gru_forward_seq_c, kernels.gru_backward_seq_c),
}


@contextmanager
def use_backend(name):
    saved = kernels.slot_evaluate, kernels.gru_forward_seq, kernels.gru_backward_seq
    kernels.slot_evaluate, kernels.gru_forward_seq, kernels.gru_backward_seq = BACKENDS[name]
    try:
        yield
    finally:
        kernels.slot_evaluate, kernels.gru_forward_seq, kernels.gru_backward_seq = saved


def best_ms(fn, number, repeat):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number * 1e3


def make_cases(cfg, batch, steps, rng):
    n, m, hid = cfg.n_platoons, cfg.n_followers, cfg.hidden_size
    gains = rng.exponential(1e-9, size=(n, n, m))
    channels = rng.integers(0, cfg.n_subchannels, size=n).astype(np.int64)
    powers = 10 ** ((np.asarray(cfg.power_levels_dbm)[rng.integers(0, 4, size=n)] - 30) / 10)
    active = np.ones(n, dtype=np.uint8)
    noise = 10 ** ((cfg.noise_dbm - 30) / 10)
    slot_args = (gains, channels, powers, active, noise, cfg.n_subchannels, False)

    pre = [rng.normal(size=(steps, batch, hid)) for _ in range(3)]
    u_zr = rng.normal(0, 0.2, size=(hid, 2 * hid))
    u_h = rng.normal(0, 0.2, size=(hid, hid))
    h0 = np.zeros((batch, hid))
    h_prev, z, r, c, _ = kernels.gru_forward_seq_py(*pre, u_zr, u_h, h0)
    dh = rng.normal(size=(steps, batch, hid))
    fwd_args = (*pre, u_zr, u_h, h0)
    bwd_args = (dh, z, r, c, h_prev, u_zr, u_h, h0)

    env = PlatoonEnv(cfg)
    policy = vdn.RandomPolicy(cfg.n_platoons, cfg.n_actions)
    records = [vdn.run_episode(env, policy, 1.0, rng, e) for e in range(cfg.batch_episodes)]
    params = nn.init_qnet(vdn.input_dim(cfg), cfg.n_actions, hid, rng)
    target = params.copy()
    loss_args = (records, params, target, cfg.discount, cfg.target_mode, cfg.reward_scale)
    return slot_args, fwd_args, bwd_args, loss_args


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=128, help="sequences per GRU call")
    ap.add_argument("--steps", type=int, default=60, help="sequence length per GRU call")
    args = ap.parse_args(argv)
    if kernels.slot_evaluate_c is None:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1

    cfg = ScenarioConfig()
    rng = np.random.default_rng(0)
    slot_args, fwd_args, bwd_args, loss_args = make_cases(cfg, args.batch, args.steps, rng)
    cases = [
        ("slot_evaluate", lambda: kernels.slot_evaluate(*slot_args), 2000),
        (f"gru_forward_seq T={args.steps} B={args.batch}", lambda: kernels.gru_forward_seq(*fwd_args), 5),
        (f"gru_backward_seq T={args.steps} B={args.batch}", lambda: kernels.gru_backward_seq(*bwd_args), 5),
        (f"vdn_loss+grad ({cfg.batch_episodes} episodes)", lambda: vdn.vdn_loss(*loss_args), 3),
    ]

    print(f"{'kernel':<40}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}")
    for label, fn, number in cases:
        times = {}
        for name in BACKENDS:
            with use_backend(name):
                fn()  # warm up
                times[name] = best_ms(fn, number, args.repeat)
        print(f"{label:<40}{times['numpy']:>12.4f}{times['cython']:>12.4f}"
              f"{times['numpy'] / times['cython']:>9.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
