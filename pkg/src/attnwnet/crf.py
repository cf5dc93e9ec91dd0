"""Dense-CRF mean-field refinement of a soft assignment.

Unaries are ``-log(P0 + epsilon)``. The pairwise term is Potts-weighted with a
two-Gaussian kernel::

    k(u, v) = w_smooth * exp(-|dX|^2 / (2 theta_gamma^2))
            + w_appear * exp(-|dX|^2 / (2 theta_alpha^2) - dI^2 / (2 theta_beta^2))

restricted to pairs within ``truncation_radius`` (Euclidean, voxel units).
Updates are synchronous: every voxel reads the previous iteration's marginals.
Messages are exact sums over the truncated neighbourhood, no lattice filtering.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .volume import LabelMap, Volume


@dataclass(frozen=True)
class CRFParams:
    iterations: int = 5
    w_smooth: float = 3.0
    theta_gamma: float = 3.0
    w_appear: float = 10.0
    theta_alpha: float = 8.0
    theta_beta: float = 0.1
    truncation_radius: float = 8
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if min(self.theta_gamma, self.theta_alpha, self.theta_beta) <= 0:
            raise ValueError("CRF bandwidths must be positive")
        if self.truncation_radius < 1:
            raise ValueError("truncation_radius must be >= 1")
        if self.w_smooth < 0 or self.w_appear < 0:
            raise ValueError("kernel weights must be non-negative")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


def _softmax(neg_energy: np.ndarray) -> np.ndarray:
    e = np.exp(neg_energy - neg_energy.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def unary_potentials(P0, epsilon: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        phi = -np.log(np.asarray(P0, dtype=np.float64) + epsilon)
    if not np.all(np.isfinite(phi)):
        raise ValueError("non-finite unary potentials: assignment has exact zeros and epsilon is 0")
    return phi


def pairwise_messages(Q, img, p: CRFParams) -> np.ndarray:
    """``sum_{v != u} k(u, v) Q_v(k)`` for every voxel and class."""
    if p.w_smooth == 0 and p.w_appear == 0:
        return np.zeros_like(Q)
    return _kernels.crf_messages(Q, img, p.truncation_radius, p.w_smooth, p.theta_gamma,
                                 p.w_appear, p.theta_alpha, p.theta_beta)


def mean_field(P0, v: Volume, p: CRFParams | None = None) -> np.ndarray:
    p = p or CRFParams()
    P0 = np.asarray(P0, dtype=np.float64)
    if P0.ndim != 4 or P0.shape[1:] != v.dims:
        raise ValueError(f"assignment shape {P0.shape} does not match volume dims {v.dims}")
    img = v.data.astype(np.float64)
    phi = unary_potentials(P0, p.epsilon)
    Q = _softmax(-phi)
    for _ in range(p.iterations):
        # Potts: class k at u pays k(u, v) for every neighbour v not in class k
        Q = _softmax(-phi - pairwise_messages(1.0 - Q, img, p))
    return Q


def map_labels(Q) -> LabelMap:
    """Per-voxel argmax; ties go to the lowest class index."""
    return LabelMap(np.argmax(np.asarray(Q), axis=0).astype(np.uint8))
