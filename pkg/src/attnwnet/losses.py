"""N-cut and SSIM objectives.

NumPy functions (``hard_ncut``, ``soft_ncut``, ``ssim`` and their analytic
gradients) are the double-precision reference; ``*_torch`` variants are the
autograd versions used in training. A soft assignment is an array of shape
``(K, D, H, W)`` whose channels sum to one per voxel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .affinity import AffinityGraph

NCUT_EPS = 1e-8


@dataclass(frozen=True)
class SsimConstants:
    C1: float = 0.01 ** 2
    C2: float = 0.03 ** 2

    def __post_init__(self):
        if self.C1 <= 0 or self.C2 <= 0:
            raise ValueError("SSIM constants must be positive")


def check_assignment(P, atol: float = 1e-6) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 4:
        raise ValueError(f"soft assignment must have shape (K, D, H, W), got {P.shape}")
    if P.min() < -atol or P.max() > 1 + atol:
        raise ValueError("soft assignment values must lie in [0, 1]")
    if np.abs(P.sum(axis=0) - 1.0).max() > atol:
        raise ValueError("soft assignment channels must sum to 1 per voxel")
    return P


def _flat(g: AffinityGraph, P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.shape[1:] != g.dims:
        raise ValueError(f"assignment dims {P.shape[1:]} do not match graph dims {g.dims}")
    return P.reshape(P.shape[0], -1)


def hard_ncut(g: AffinityGraph, labels, K: int, eps: float = NCUT_EPS) -> float:
    """Sum over classes of cut(A, V - A) / assoc(A, V), by direct edge summation.

    Each ratio is guarded as ``(cut + eps) / (assoc + eps)``: a class with no
    association (empty, or only isolated voxels) scores 1, the same value the
    soft relaxation assigns it.
    """
    lab = np.asarray(getattr(labels, "labels", labels)).reshape(-1).astype(np.int64)
    if lab.size != g.n:
        raise ValueError("label map size does not match graph")
    if lab.size and (lab.min() < 0 or lab.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    lu, lv = lab[g.u], lab[g.v]
    crossing = lu != lv
    total = 0.0
    for k in range(K):
        cut = g.w[crossing & ((lu == k) | (lv == k))].sum()
        assoc = g.degrees[lab == k].sum()
        total += (cut + eps) / (assoc + eps)
    return float(total)


def _ncut_terms(g, P2, eps):
    WP = (g.to_scipy() @ P2.T).T
    num = np.einsum("kn,kn->k", P2, WP)
    den = P2 @ g.degrees + eps
    return WP, num, den


def soft_ncut(g: AffinityGraph, P, eps: float = NCUT_EPS) -> float:
    """``K - sum_k (p_k^T W p_k) / (p_k^T d + eps)``."""
    P2 = _flat(g, P)
    _, num, den = _ncut_terms(g, P2, eps)
    return float(P2.shape[0] - (num / den).sum())


def soft_ncut_grad(g: AffinityGraph, P, eps: float = NCUT_EPS) -> np.ndarray:
    P2 = _flat(g, P)
    WP, num, den = _ncut_terms(g, P2, eps)
    grad = -(2.0 * WP * den[:, None] - num[:, None] * g.degrees[None, :]) / (den ** 2)[:, None]
    return grad.reshape(np.shape(P))


def _stats(x, y):
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    return mx, my, (dx * dx).mean(), (dy * dy).mean(), (dx * dy).mean()


def _as_pair(x, y):
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    y = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"SSIM inputs differ in shape: {x.shape} vs {y.shape}")
    return x, y


def ssim(x, y, c: SsimConstants = SsimConstants()) -> float:
    """Global-statistics SSIM (means, variances, covariance over the whole volume)."""
    x, y = _as_pair(x, y)
    mx, my, vx, vy, cxy = _stats(x, y)
    return float((2 * mx * my + c.C1) * (2 * cxy + c.C2)
                 / ((mx * mx + my * my + c.C1) * (vx + vy + c.C2)))


def ssim_grad(x, y, c: SsimConstants = SsimConstants()) -> np.ndarray:
    """Gradient of ``ssim(x, y)`` with respect to ``y``."""
    x, y = _as_pair(x, y)
    n = x.size
    mx, my, vx, vy, cxy = _stats(x, y)
    a = 2 * mx * my + c.C1
    b = 2 * cxy + c.C2
    cc = mx * mx + my * my + c.C1
    d = vx + vy + c.C2
    s = a * b / (cc * d)
    return s * (2 * mx / a + 2 * (x - mx) / b - 2 * my / cc - 2 * (y - my) / d) / n


def reconstruction_loss(x, y, c: SsimConstants = SsimConstants()) -> float:
    return 1.0 - ssim(x, y, c)


def joint_loss(j_ncut, j_rec, lambda_ncut: float = 1.0, lambda_rec: float = 1.0):
    return lambda_ncut * j_ncut + lambda_rec * j_rec


def soft_ncut_torch(W: torch.Tensor, degrees: torch.Tensor, P: torch.Tensor,
                    eps: float = NCUT_EPS) -> torch.Tensor:
    """Plain-autograd soft N-cut; ``W`` is the symmetric sparse ``(N, N)`` weight matrix."""
    K = P.shape[0]
    P2 = P.reshape(K, -1)
    WP = torch.sparse.mm(W, P2.t()).t()
    num = (P2 * WP).sum(dim=1)
    den = P2 @ degrees + eps
    return K - (num / den).sum()


class _SoftNCutFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, P, W, degrees, eps):
        P2 = P.detach().reshape(P.shape[0], -1).to(torch.float64).numpy()
        WP = np.ascontiguousarray((W @ P2.T).T)
        num = np.einsum("kn,kn->k", P2, WP)
        den = P2 @ degrees + eps
        if ctx.needs_input_grad[0]:
            grad = -(2.0 * WP * den[:, None] - num[:, None] * degrees[None, :]) / (den ** 2)[:, None]
            ctx.save_for_backward(torch.from_numpy(grad.reshape(P.shape)).to(P.dtype))
        return P.new_tensor(P.shape[0] - (num / den).sum())

    @staticmethod
    def backward(ctx, grad_out):
        (grad,) = ctx.saved_tensors
        return grad_out * grad, None, None, None


class SoftNCut:
    """Soft N-cut loss bound to one affinity graph.

    The sparse product runs in float64 through SciPy; the gradient uses the
    closed form ``-(2 W p_k b_k - a_k d) / b_k^2`` (``W`` is symmetric), so one
    sparse product serves both passes.
    """

    def __init__(self, g: AffinityGraph, eps: float = NCUT_EPS):
        self.dims = g.dims
        self.W = g.to_scipy()
        self.degrees = np.array(g.degrees, dtype=np.float64)
        self.eps = eps

    def __call__(self, P: torch.Tensor) -> torch.Tensor:
        if tuple(P.shape[1:]) != self.dims:
            raise ValueError(f"assignment dims {tuple(P.shape[1:])} do not match graph dims {self.dims}")
        return _SoftNCutFn.apply(P, self.W, self.degrees, self.eps)


def ssim_torch(x: torch.Tensor, y: torch.Tensor, c: SsimConstants = SsimConstants()) -> torch.Tensor:
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx, vy, cxy = (dx * dx).mean(), (dy * dy).mean(), (dx * dy).mean()
    return ((2 * mx * my + c.C1) * (2 * cxy + c.C2)
            / ((mx * mx + my * my + c.C1) * (vx + vy + c.C2)))
