"""Recurrent Q-network (dense -> GRU -> dense) with hand-written gradients.

Shapes: ``D`` input width, ``H`` hidden width, ``A`` action count, ``B``
batch rows, ``T`` time steps.  Everything is float64.

GRU convention, with ``f`` the ReLU output of the input layer::

    z  = sigmoid([f, h] @ Wz + bz)
    r  = sigmoid([f, h] @ Wr + br)
    c  = tanh([f, r * h] @ Wh + bh)
    h' = (1 - z) * h + z * c
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class QNetParams:
    fc_in_w: np.ndarray
    fc_in_b: np.ndarray
    gru_wz: np.ndarray
    gru_bz: np.ndarray
    gru_wr: np.ndarray
    gru_br: np.ndarray
    gru_wh: np.ndarray
    gru_bh: np.ndarray
    fc_out_w: np.ndarray
    fc_out_b: np.ndarray

    def __post_init__(self):
        self.version = 0

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @property
    def input_dim(self) -> int:
        return self.fc_in_w.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.fc_in_w.shape[1]

    @property
    def n_actions(self) -> int:
        return self.fc_out_w.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.names()]

    def items(self):
        return [(n, getattr(self, n)) for n in self.names()]

    def copy(self) -> QNetParams:
        return QNetParams(*[a.copy() for a in self.arrays()])

    def zeros_like(self) -> QNetParams:
        return QNetParams(*[np.zeros_like(a) for a in self.arrays()])

    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def load_flat(self, vec: np.ndarray) -> None:
        i = 0
        for a in self.arrays():
            a[...] = vec[i : i + a.size].reshape(a.shape)
            i += a.size
        self.version += 1


def init_qnet(input_dim: int, n_actions: int, hidden: int = 64,
              rng: np.random.Generator | None = None) -> QNetParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = rng if rng is not None else np.random.default_rng()

    def w(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    h2 = 2 * hidden
    return QNetParams(
        fc_in_w=w(input_dim, hidden), fc_in_b=np.zeros(hidden),
        gru_wz=w(h2, hidden), gru_bz=np.zeros(hidden),
        gru_wr=w(h2, hidden), gru_br=np.zeros(hidden),
        gru_wh=w(h2, hidden), gru_bh=np.zeros(hidden),
        fc_out_w=w(hidden, n_actions), fc_out_b=np.zeros(n_actions),
    )


@dataclass
class UnrollCache:
    version: int
    params_id: int
    x: np.ndarray        # (T, B, D)
    a_in: np.ndarray     # (T, B, H) pre-ReLU
    f: np.ndarray        # (T, B, H)
    h_prev: np.ndarray   # (T, B, H) hidden entering each step
    z: np.ndarray
    r: np.ndarray
    c: np.ndarray
    h: np.ndarray        # (T, B, H) hidden leaving each step


def unroll_forward(params: QNetParams, x: np.ndarray, h0: np.ndarray):
    """Run the network over a ``(T, B, D)`` input sequence from hidden ``h0``.

    Returns ``(q[T, B, A], h_last[B, H], cache)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != params.input_dim:
        raise ShapeError(f"input shape {x.shape} does not match input_dim {params.input_dim}")
    n_t, n_b, _ = x.shape
    hid = params.hidden_size
    if h0.shape != (n_b, hid):
        raise ShapeError(f"hidden shape {h0.shape}, expected {(n_b, hid)}")

    a_in = x @ params.fc_in_w + params.fc_in_b
    f = np.maximum(a_in, 0.0)
    # input halves of the gate projections do not depend on h: do them in bulk
    fz = f @ params.gru_wz[:hid] + params.gru_bz
    fr = f @ params.gru_wr[:hid] + params.gru_br
    fc = f @ params.gru_wh[:hid] + params.gru_bh
    u_zr = np.concatenate([params.gru_wz[hid:], params.gru_wr[hid:]], axis=1)
    u_h = params.gru_wh[hid:]

    h_prev, z, r, c, hs = kernels.gru_forward_seq(fz, fr, fc, u_zr, np.ascontiguousarray(u_h),
                                                  np.ascontiguousarray(h0, dtype=np.float64))
    h = hs[-1] if n_t else np.array(h0, dtype=np.float64)
    q = hs @ params.fc_out_w + params.fc_out_b
    cache = UnrollCache(params.version, id(params), x, a_in, f, h_prev, z, r, c, hs)
    return q, h, cache


def unroll_backward(params: QNetParams, cache: UnrollCache, grad_q: np.ndarray,
                    grad_h_last: np.ndarray | None = None):
    """Backpropagation through time for :func:`unroll_forward`.

    Returns ``(grads, grad_h0)``.
    """
    if cache.version != params.version or cache.params_id != id(params):
        raise StaleCacheError("cache was produced by different or since-updated parameters")
    hid = params.hidden_size
    n_t, n_b, _ = cache.x.shape
    grad_q = np.asarray(grad_q, dtype=np.float64)
    if grad_q.shape != (n_t, n_b, params.n_actions):
        raise ShapeError(f"grad_q shape {grad_q.shape} does not match forward output")

    u_zr = np.concatenate([params.gru_wz[hid:], params.gru_wr[hid:]], axis=1)
    u_h = np.ascontiguousarray(params.gru_wh[hid:])
    dh_all = np.ascontiguousarray(grad_q @ params.fc_out_w.T)
    dh_last = np.zeros((n_b, hid)) if grad_h_last is None else grad_h_last
    dz_pre, dr_pre, dc_pre, dh = kernels.gru_backward_seq(
        dh_all, cache.z, cache.r, cache.c, cache.h_prev, u_zr, u_h,
        np.ascontiguousarray(dh_last, dtype=np.float64))

    def flat(a):
        return a.reshape(n_t * n_b, -1)

    f2 = flat(cache.f)
    hp2 = flat(cache.h_prev)
    rh2 = flat(cache.r * cache.h_prev)
    dz2, dr2, dc2 = flat(dz_pre), flat(dr_pre), flat(dc_pre)
    df = dz_pre @ params.gru_wz[:hid].T + dr_pre @ params.gru_wr[:hid].T + dc_pre @ params.gru_wh[:hid].T
    da = df * (cache.a_in > 0)
    da2 = flat(da)
    grads = QNetParams(
        fc_in_w=flat(cache.x).T @ da2,
        fc_in_b=da2.sum(axis=0),
        gru_wz=np.vstack([f2.T @ dz2, hp2.T @ dz2]),
        gru_bz=dz2.sum(axis=0),
        gru_wr=np.vstack([f2.T @ dr2, hp2.T @ dr2]),
        gru_br=dr2.sum(axis=0),
        gru_wh=np.vstack([f2.T @ dc2, rh2.T @ dc2]),
        gru_bh=dc2.sum(axis=0),
        fc_out_w=flat(cache.h).T @ flat(grad_q),
        fc_out_b=flat(grad_q).sum(axis=0),
    )
    return grads, dh


def qnet_forward(params: QNetParams, x: np.ndarray, h_prev: np.ndarray):
    """Single step on a ``(B, D)`` batch (or a single ``(D,)`` vector).

    Returns ``(q, h_next, cache)``.
    """
    single = np.ndim(x) == 1
    x2 = np.atleast_2d(x)
    h2 = np.atleast_2d(h_prev)
    q, h, cache = unroll_forward(params, x2[None], h2)
    if single:
        return q[0, 0], h[0], cache
    return q[0], h, cache


def qnet_backward(params: QNetParams, cache: UnrollCache, grad_q, grad_h_next=None):
    n_b = cache.x.shape[1]
    gq = np.reshape(grad_q, (1, n_b, -1))
    gh = None if grad_h_next is None else np.reshape(grad_h_next, (n_b, -1))
    grads, dh = unroll_backward(params, cache, gq, gh)
    return grads, (dh[0] if np.ndim(grad_q) == 1 else dh)


def add_grads(a: QNetParams, b: QNetParams) -> QNetParams:
    return QNetParams(*[x + y for x, y in zip(a.arrays(), b.arrays())])


def global_norm(grads_list) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for gr in grads_list for g in gr.arrays())))


def clip_by_global_norm(grads_list, max_norm: float) -> tuple[float, bool]:
    """Scale gradients in place so their joint norm is at most ``max_norm``."""
    norm = global_norm(grads_list)
    if not np.isfinite(norm):
        raise TrainingError(f"non-finite gradient norm {norm}")
    if norm > max_norm:
        scale = max_norm / norm
        for gr in grads_list:
            for g in gr.arrays():
                g *= scale
        return norm, True
    return norm, False


class Adam:
    """Adam with bias correction; updates parameters in place."""

    def __init__(self, params: QNetParams, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: QNetParams, grads: QNetParams) -> QNetParams:
        for g in grads.arrays():
            if not np.all(np.isfinite(g)):
                raise TrainingError("non-finite gradient passed to the optimizer")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params.arrays(), grads.arrays(), self.m.arrays(), self.v.arrays()):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        params.version += 1
        return params


# checkpoints -------------------------------------------------------------

MAGIC = b"PVDNCKPT"
FORMAT_VERSION = 1


def save_checkpoint(path, nets: list[QNetParams], meta: dict | None = None) -> None:
    """Write ``nets`` as a versioned header plus little-endian float64 payload."""
    header = {
        "format": "platoon_vdn.qnet",
        "format_version": FORMAT_VERSION,
        "n_nets": len(nets),
        "names": list(QNetParams.names()),
        "shapes": [[list(a.shape) for a in net.arrays()] for net in nets],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
    buf.write(blob)
    for net in nets:
        for a in net.arrays():
            buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[list[QNetParams], dict]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a platoon_vdn checkpoint")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version}")
    off += 8
    header = json.loads(data[off : off + hlen])
    off += hlen
    nets = []
    for shapes in header["shapes"]:
        arrays = []
        for shape in shapes:
            n = int(np.prod(shape))
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
            arrays.append(arr.reshape(shape))
            off += 8 * n
        nets.append(QNetParams(*arrays))
    if off != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return nets, header["meta"]
