"""Hot loops with a compiled core and a numpy fallback.

Two groups live here: the per-slot SINR/rate evaluation, and the GRU
recurrence over a sequence (forward and backward), which dominates training
time.  The compiled extension ``platoon_vdn._kernels`` is used when it was
built; otherwise, or when ``PLATOON_VDN_PURE=1`` is set, the numpy versions
below are selected.  Each pair shares one signature and agrees to rounding.
"""

from __future__ import annotations

import os

import numpy as np


def slot_evaluate_py(gains, channels, powers_w, active, noise_w, n_subchannels, tail_only):
    n = gains.shape[0]
    on = active.astype(bool)
    # rx[i, p, j]: power from leader i at follower j of platoon p
    rx = (powers_w * on)[:, None, None] * gains
    off_diag = rx.copy()
    idx = np.arange(n)
    off_diag[idx, idx, :] = 0.0
    onehot = (channels[:, None] == np.arange(n_subchannels)[None, :]) & on[:, None]
    # interference[k, p, j] from leaders other than p
    interference = np.einsum("ik,ipj->kpj", onehot.astype(float), off_diag)
    own_ch = np.clip(channels, 0, n_subchannels - 1)
    own_interference = interference[own_ch, idx, :]
    signal = rx[idx, idx, :]
    sinr = np.where(on[:, None], signal / (noise_w + own_interference), 0.0)
    worst = sinr[:, -1] if tail_only else sinr.min(axis=1)
    rate = np.log2(1.0 + worst)
    tail = noise_w + interference[:, :, -1].T
    return sinr, rate, np.ascontiguousarray(tail)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward_seq_py(fz, fr, fc, u_zr, u_h, h0):
    """Recurrent part of a GRU unroll.

    ``fz, fr, fc`` are the input-side gate pre-activations ``(T, B, H)``
    (biases included); ``u_zr = [U_z | U_r]`` is ``(H, 2H)``.  Returns
    ``(h_prev, z, r, c, hs)``, each ``(T, B, H)``.
    """
    n_t, n_b, hid = fz.shape
    h_prev = np.empty((n_t, n_b, hid))
    z = np.empty_like(h_prev)
    r = np.empty_like(h_prev)
    c = np.empty_like(h_prev)
    hs = np.empty_like(h_prev)
    h = h0
    for t in range(n_t):
        h_prev[t] = h
        zr = h @ u_zr
        z[t] = _sigmoid(fz[t] + zr[:, :hid])
        r[t] = _sigmoid(fr[t] + zr[:, hid:])
        c[t] = np.tanh(fc[t] + (r[t] * h) @ u_h)
        h = h + z[t] * (c[t] - h)
        hs[t] = h
    return h_prev, z, r, c, hs


def gru_backward_seq_py(dh_all, z, r, c, h_prev, u_zr, u_h, dh_last):
    """Reverse pass of :func:`gru_forward_seq_py`.

    ``dh_all`` is the loss gradient reaching each output ``hs[t]`` from
    above.  Returns the gate pre-activation gradients ``(dz, dr, dc)`` and
    the gradient with respect to ``h0``.
    """
    n_t, n_b, hid = z.shape
    u_z, u_r = u_zr[:, :hid], u_zr[:, hid:]
    dz = np.empty((n_t, n_b, hid))
    dr = np.empty_like(dz)
    dc = np.empty_like(dz)
    dh = np.array(dh_last, dtype=np.float64)
    for t in range(n_t - 1, -1, -1):
        dh = dh + dh_all[t]
        zt, rt, ct, hp = z[t], r[t], c[t], h_prev[t]
        dcp = dh * zt * (1.0 - ct * ct)
        dzp = dh * (ct - hp) * zt * (1.0 - zt)
        drh = dcp @ u_h.T
        drp = drh * hp * rt * (1.0 - rt)
        dz[t], dr[t], dc[t] = dzp, drp, dcp
        dh = dh * (1.0 - zt) + drh * rt + dzp @ u_z.T + drp @ u_r.T
    return dz, dr, dc, dh


try:
    from ._kernels import gru_backward_seq as gru_backward_seq_c
    from ._kernels import gru_forward_seq as gru_forward_seq_c
    from ._kernels import slot_evaluate as slot_evaluate_c
except ImportError:  # extension not built
    slot_evaluate_c = gru_forward_seq_c = gru_backward_seq_c = None

if slot_evaluate_c is not None and os.environ.get("PLATOON_VDN_PURE", "") not in ("1", "true"):
    BACKEND = "cython"
    slot_evaluate = slot_evaluate_c
    gru_forward_seq = gru_forward_seq_c
    gru_backward_seq = gru_backward_seq_c
else:
    BACKEND = "python"
    slot_evaluate = slot_evaluate_py
    gru_forward_seq = gru_forward_seq_py
    gru_backward_seq = gru_backward_seq_py
