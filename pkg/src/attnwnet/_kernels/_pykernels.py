"""Vectorized NumPy versions of the hot loops (offset-by-offset slab arithmetic)."""
from __future__ import annotations

import numpy as np


def ball_offsets(radius: float, half: bool = False) -> np.ndarray:
    """Integer offsets ``(dz, dy, dx)`` with ``0 < |o| <= radius`` in lexicographic order.

    With ``half=True`` only the lexicographically positive half is returned,
    so each unordered voxel pair is visited once.
    """
    r = int(np.floor(radius))
    rng = np.arange(-r, r + 1)
    dz, dy, dx = (a.ravel() for a in np.meshgrid(rng, rng, rng, indexing="ij"))
    d2 = dz * dz + dy * dy + dx * dx
    keep = (d2 > 0) & (d2 <= radius * radius)
    if half:
        keep &= (dz > 0) | ((dz == 0) & (dy > 0)) | ((dz == 0) & (dy == 0) & (dx > 0))
    return np.stack([dz[keep], dy[keep], dx[keep]], axis=1).astype(np.int64)


def _slabs(dims, off):
    """Slices selecting voxels ``u`` and their partners ``u + off`` that stay in bounds."""
    src, dst = [], []
    for n, o in zip(dims, off):
        o = int(o)
        if abs(o) >= n:
            return None
        src.append(slice(max(0, -o), n - max(0, o)))
        dst.append(slice(max(0, o), n - max(0, -o)))
    return tuple(src), tuple(dst)


def affinity_edges(img, sigma_i, sigma_x, radius, prune):
    img = np.ascontiguousarray(img, dtype=np.float64)
    dims = img.shape
    idx = np.arange(img.size, dtype=np.int64).reshape(dims)
    us, vs, ws = [], [], []
    for off in ball_offsets(radius, half=True):
        sl = _slabs(dims, off)
        if sl is None:
            continue
        su, sv = sl
        d2 = float(off @ off)
        df = img[su] - img[sv]
        w = np.exp(-(df * df) / (sigma_i * sigma_i)) * np.exp(-d2 / (sigma_x * sigma_x))
        keep = (w >= prune) & (w > 0.0)
        us.append(idx[su][keep])
        vs.append(idx[sv][keep])
        ws.append(w[keep])
    if not us:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.float64)
    u, v, w = np.concatenate(us), np.concatenate(vs), np.concatenate(ws)
    order = np.lexsort((v, u))
    return u[order], v[order], w[order]


def crf_messages(q, img, radius, w_smooth, theta_gamma, w_appear, theta_alpha, theta_beta):
    """``m[k, u] = sum_{v != u, |X_u - X_v| <= radius} k(u, v) q[k, v]``."""
    q = np.ascontiguousarray(q, dtype=np.float64)
    img = np.ascontiguousarray(img, dtype=np.float64)
    dims = img.shape
    m = np.zeros_like(q)
    for off in ball_offsets(radius, half=True):
        sl = _slabs(dims, off)
        if sl is None:
            continue
        su, sv = sl
        d2 = float(off @ off)
        smooth = w_smooth * np.exp(-d2 / (2.0 * theta_gamma * theta_gamma))
        spatial = w_appear * np.exp(-d2 / (2.0 * theta_alpha * theta_alpha))
        di = img[su] - img[sv]
        kern = smooth + spatial * np.exp(-(di * di) / (2.0 * theta_beta * theta_beta))
        ksu, ksv = (slice(None),) + su, (slice(None),) + sv
        m[ksu] += kern * q[ksv]
        m[ksv] += kern * q[ksu]
    return m
