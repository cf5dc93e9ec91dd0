"""Sparse voxel affinity graph used by the N-cut losses.

Edge weights combine intensity similarity and spatial proximity::

    w(i, j) = exp(-|F_i - F_j|^2 / sigma_I^2) * exp(-|X_i - X_j|^2 / sigma_X^2)

for voxel pairs with Euclidean grid distance ``<= radius`` and zero otherwise.
Each unordered pair is stored once with ``u < v``; self-edges are excluded.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .volume import Volume


@dataclass(frozen=True)
class AffinityParams:
    sigma_I: float = 0.05
    sigma_X: float = 4.0
    radius: int = 4
    # weights below this are not stored; 0 keeps every representable edge
    prune: float = 1e-8

    def __post_init__(self):
        if self.sigma_I <= 0 or self.sigma_X <= 0:
            raise ValueError("sigma_I and sigma_X must be positive")
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError("radius must be an integer >= 1")
        if self.prune < 0:
            raise ValueError("prune must be non-negative")


@dataclass(frozen=True, eq=False)
class AffinityGraph:
    dims: tuple[int, int, int]
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    degrees: np.ndarray

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    @property
    def m(self) -> int:
        return len(self.w)

    def degree(self, u: int) -> float:
        if not 0 <= u < self.n:
            raise IndexError(f"voxel index {u} out of range for {self.n} voxels")
        return float(self.degrees[u])

    def weight(self, a: int, b: int) -> float:
        """Edge weight between voxels ``a`` and ``b`` (0 if not stored)."""
        if a == b:
            return 0.0
        a, b = min(a, b), max(a, b)
        lo, hi = np.searchsorted(self.u, [a, a + 1])
        j = lo + np.searchsorted(self.v[lo:hi], b)
        if j < hi and self.v[j] == b:
            return float(self.w[j])
        return 0.0

    def to_scipy(self) -> sp.csr_matrix:
        """Full symmetric ``n x n`` weight matrix."""
        rows = np.concatenate([self.u, self.v])
        cols = np.concatenate([self.v, self.u])
        vals = np.concatenate([self.w, self.w])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def to_torch(self, dtype=None):
        import torch
        mat = self.to_scipy().tocoo()
        idx = torch.from_numpy(np.vstack([mat.row, mat.col]).astype(np.int64))
        t = torch.sparse_coo_tensor(idx, torch.from_numpy(mat.data), (self.n, self.n),
                                    check_invariants=False)
        t = t.coalesce()
        return t.to(dtype) if dtype is not None else t


def _make_graph(dims, u, v, w) -> AffinityGraph:
    n = int(np.prod(dims))
    deg = np.bincount(u, weights=w, minlength=n) + np.bincount(v, weights=w, minlength=n)
    for a in (u, v, w, deg):
        a.flags.writeable = False
    return AffinityGraph(tuple(int(d) for d in dims), u, v, w, deg)


def build_affinity(v: Volume, p: AffinityParams | None = None) -> AffinityGraph:
    p = p or AffinityParams()
    if v.size < 2:
        raise ValueError("affinity graph needs at least 2 voxels")
    img = v.data.astype(np.float64)
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("volume must be normalized to [0, 1] before building affinities")
    u, vv, w = _kernels.affinity_edges(img, float(p.sigma_I), float(p.sigma_X),
                                       int(p.radius), float(p.prune))
    return _make_graph(v.dims, u, vv, w)


def dump_graph(g: AffinityGraph, path) -> None:
    """Text dump: header ``n m``, then one ``u v w`` line per stored edge."""
    with open(path, "w") as f:
        f.write(f"{g.n} {g.m}\n")
        for a, b, w in zip(g.u.tolist(), g.v.tolist(), g.w.tolist()):
            f.write(f"{a} {b} {w!r}\n")


def load_graph_text(path, dims) -> AffinityGraph:
    with open(path) as f:
        n, m = (int(t) for t in f.readline().split())
        data = np.loadtxt(f, ndmin=2) if m else np.empty((0, 3))
    if n != int(np.prod(dims)) or len(data) != m:
        raise ValueError(f"{path}: header says n={n} m={m}, file holds {len(data)} edges")
    return _make_graph(dims, data[:, 0].astype(np.int64), data[:, 1].astype(np.int64),
                       np.ascontiguousarray(data[:, 2]))


def cache_key(v: Volume, p: AffinityParams) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(v.dims, dtype="<u4").tobytes())
    h.update(v.data.astype("<f4").tobytes())
    h.update(repr(sorted(asdict(p).items())).encode())
    return h.hexdigest()[:24]


def cached_affinity(v: Volume, p: AffinityParams, cache_dir) -> AffinityGraph:
    """``build_affinity`` memoized on disk by (volume content, params)."""
    path = Path(cache_dir) / f"affinity_{cache_key(v, p)}.npz"
    if path.exists():
        with np.load(path) as z:
            return _make_graph(tuple(z["dims"]), z["u"], z["v"], z["w"])
    g = build_affinity(v, p)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, dims=np.asarray(g.dims), u=g.u, v=g.v, w=g.w)
    tmp.replace(path)
    return g
