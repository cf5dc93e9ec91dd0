import math

import numpy as np
import pytest

from attnwnet import _kernels
from attnwnet.crf import CRFParams, map_labels, mean_field, _softmax, unary_potentials
from attnwnet.volume import Volume
from conftest import random_assignment


def dense_mean_field(P0, img, p: CRFParams):
    """Untruncated mean field with an explicit all-pairs kernel matrix."""
    K = P0.shape[0]
    coords = np.argwhere(np.ones(img.shape, bool)).astype(np.float64)
    f = img.reshape(-1).astype(np.float64)
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    di2 = (f[:, None] - f[None, :]) ** 2
    kern = (p.w_smooth * np.exp(-d2 / (2 * p.theta_gamma ** 2))
            + p.w_appear * np.exp(-d2 / (2 * p.theta_alpha ** 2) - di2 / (2 * p.theta_beta ** 2)))
    np.fill_diagonal(kern, 0.0)
    phi = -np.log(P0.reshape(K, -1) + p.epsilon)
    Q = np.exp(-phi) / np.exp(-phi).sum(0)
    for _ in range(p.iterations):
        e = -phi - (1.0 - Q) @ kern
        e = np.exp(e - e.max(0))
        Q = e / e.sum(0)
    return Q.reshape(P0.shape)


def test_zero_weights_pass_through(rng):
    P0 = random_assignment(rng, 3, (4, 5, 3))
    v = Volume(rng.random((4, 5, 3)))
    p = CRFParams(w_smooth=0, w_appear=0)
    Q = mean_field(P0, v, p)
    np.testing.assert_array_equal(Q, _softmax(-unary_potentials(P0, p.epsilon)))
    np.testing.assert_allclose(Q, P0, atol=3 * p.epsilon)


def test_single_voxel(rng):
    P0 = random_assignment(rng, 4, (1, 1, 1))
    Q = mean_field(P0, Volume(np.zeros((1, 1, 1))), CRFParams())
    np.testing.assert_allclose(Q, P0, atol=1e-7)


def test_two_voxel_hand_update():
    p = CRFParams(iterations=1, w_smooth=2.0, theta_gamma=1.5, w_appear=4.0,
                  theta_alpha=2.0, theta_beta=0.2, truncation_radius=1, epsilon=1e-8)
    P0 = np.array([[0.7, 0.2], [0.3, 0.8]]).reshape(2, 1, 1, 2)
    img = np.array([0.0, 0.125])
    # kernel value for the single pair, |dX|^2 = 1, dI^2 = 0.015625
    k = 2.0 * math.exp(-1 / (2 * 1.5 ** 2)) + 4.0 * math.exp(-1 / (2 * 2.0 ** 2) - 0.015625 / (2 * 0.2 ** 2))
    q0 = [[P0[c, 0, 0, u] + 1e-8 for u in range(2)] for c in range(2)]
    q0 = [[q0[c][u] / (q0[0][u] + q0[1][u]) for u in range(2)] for c in range(2)]
    expected = np.zeros((2, 2))
    for u, other in ((0, 1), (1, 0)):
        e = [math.exp(math.log(P0[c, 0, 0, u] + 1e-8) - k * (1 - q0[c][other])) for c in range(2)]
        expected[:, u] = [e[0] / sum(e), e[1] / sum(e)]
    Q = mean_field(P0, Volume(img.reshape(1, 1, 2)), p)
    np.testing.assert_allclose(Q.reshape(2, 2), expected, rtol=0, atol=1e-12)


@pytest.mark.parametrize("backend", sorted(_kernels.backends()))
def test_truncated_matches_dense(rng, backend, monkeypatch):
    from attnwnet import crf
    monkeypatch.setattr(crf._kernels, "crf_messages", _kernels.backends()[backend].crf_messages)
    dims = (5, 6, 4)
    P0 = random_assignment(rng, 3, dims)
    img = rng.random(dims)
    p = CRFParams(iterations=3, truncation_radius=10, theta_alpha=3.0, w_smooth=0.3, w_appear=0.5)
    np.testing.assert_allclose(mean_field(P0, Volume(img), p),
                               dense_mean_field(P0, Volume(img).data, p), atol=1e-9, rtol=0)


def test_valid_assignment_each_iteration(rng):
    P0 = random_assignment(rng, 4, (6, 6, 6))
    v = Volume(rng.random((6, 6, 6)))
    for it in (1, 2, 3):
        Q = mean_field(P0, v, CRFParams(iterations=it, truncation_radius=3))
        assert np.abs(Q.sum(0) - 1).max() < 1e-6
        assert Q.min() >= 0


def test_dominant_unary_unchanged(rng):
    lab = rng.integers(0, 3, (6, 6, 6))
    P0 = np.eye(3)[lab].transpose(3, 0, 1, 2) * (1 - 3e-7) + 1e-7
    v = Volume(rng.random((6, 6, 6)))
    Q = mean_field(P0, v, CRFParams(w_smooth=0.01, w_appear=0.01, truncation_radius=3))
    np.testing.assert_array_equal(map_labels(Q).labels, lab)


def test_deterministic(rng):
    P0 = random_assignment(rng, 3, (5, 5, 5))
    v = Volume(rng.random((5, 5, 5)))
    p = CRFParams(truncation_radius=3)
    assert np.array_equal(mean_field(P0, v, p), mean_field(P0, v, p))


def test_errors(rng):
    P0 = random_assignment(rng, 2, (3, 3, 3))
    with pytest.raises(ValueError):
        mean_field(P0, Volume(np.zeros((3, 3, 4))))
    zero = np.zeros((2, 3, 3, 3))
    zero[0] = 1.0
    with pytest.raises(ValueError, match="non-finite"):
        mean_field(zero, Volume(np.zeros((3, 3, 3))), CRFParams(epsilon=0.0))
    with pytest.raises(ValueError):
        CRFParams(theta_beta=0)


def test_map_labels():
    Q = np.eye(3)[[0, 2, 1, 2]].T.reshape(3, 1, 2, 2)
    np.testing.assert_array_equal(map_labels(Q).labels.ravel(), [0, 2, 1, 2])
    tie = np.full((2, 1, 1, 1), 0.5)
    assert map_labels(tie).labels.item() == 0
    assert not map_labels(np.full((4, 2, 2, 2), 0.25)).labels.any()


def test_backends_agree(rng):
    q = rng.random((3, 7, 6, 5))
    img = rng.random((7, 6, 5))
    ref = _kernels.backends()["python"].crf_messages(q, img, 4, 3.0, 3.0, 10.0, 8.0, 0.1)
    for mod in _kernels.backends().values():
        np.testing.assert_allclose(mod.crf_messages(q, img, 4, 3.0, 3.0, 10.0, 8.0, 0.1), ref,
                                   rtol=1e-12)
