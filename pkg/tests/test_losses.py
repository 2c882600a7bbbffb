import math

import numpy as np
import pytest

from clods import losses
from clods.geometry import grid_mesh
from clods.losses import (PSNR_INF, LossConfig, ShapeMismatch, d_ssim, edge_loss, edge_loss_grad,
                          geometry_loss, l1, node_loss, per_step_rmse, psnr, render_loss,
                          rest_lengths, rmse_vp, rollout_rmse, ssim, ssim_grad)

rng = np.random.default_rng(0)


def l1_loop(a, b):
    total = 0.0
    for idx in np.ndindex(a.shape):
        total += abs(a[idx] - b[idx])
    return total / a.size


def ssim_loop(a, b, window=11, sigma=1.5):
    """Direct per-window SSIM with an explicit Gaussian weight table."""
    r = window // 2
    xs = np.arange(window) - r
    g = np.exp(-xs ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    w2 = np.outer(g, g)
    H, W, C = a.shape
    vals = []
    for c in range(C):
        for i in range(r, H - r):
            for j in range(r, W - r):
                pa, pb = a[i - r:i + r + 1, j - r:j + r + 1, c], b[i - r:i + r + 1, j - r:j + r + 1, c]
                ma, mb = np.sum(w2 * pa), np.sum(w2 * pb)
                va = np.sum(w2 * pa * pa) - ma * ma
                vb = np.sum(w2 * pb * pb) - mb * mb
                cab = np.sum(w2 * pa * pb) - ma * mb
                vals.append((2 * ma * mb + 1e-4) * (2 * cab + 9e-4)
                            / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4)))
    return float(np.mean(vals))


def test_l1_examples_and_oracle():
    a = rng.uniform(size=(6, 5, 3))
    assert l1(a, a) == 0.0
    assert l1(np.full((4, 4, 3), 0.3), np.zeros((4, 4, 3))) == pytest.approx(0.3, abs=1e-15)
    b = rng.uniform(size=(6, 5, 3))
    assert abs(l1(a, b) - l1_loop(a, b)) < 1e-12
    with pytest.raises(ShapeMismatch):
        l1(a, b[:5])


def test_ssim_matches_loop_oracle_and_symmetry():
    a, b = rng.uniform(size=(16, 14, 3)), rng.uniform(size=(16, 14, 3))
    assert abs(ssim(a, b) - ssim_loop(a, b)) < 1e-12
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12
    assert -1.0 <= ssim(a, b) <= 1.0


def test_ssim_constant_images_closed_form():
    for a, b in [(0.2, 0.7), (0.5, 0.5), (0.0, 1.0)]:
        expected = (2 * a * b + 1e-4) * 9e-4 / ((a * a + b * b + 1e-4) * 9e-4)
        val = ssim(np.full((20, 20, 3), a), np.full((20, 20, 3), b))
        assert val == pytest.approx(expected, abs=1e-12)


def test_ssim_inverted_checkerboard_matches_oracle():
    cb = (np.indices((16, 16)).sum(0) % 2).astype(float)[..., None].repeat(3, 2)
    val = ssim(cb, 1 - cb)
    assert abs(val - ssim_loop(cb, 1 - cb)) < 1e-12
    assert val < -0.9


def test_ssim_gradient_matches_finite_differences():
    a, b = rng.uniform(size=(14, 13, 3)), rng.uniform(size=(14, 13, 3))
    _, g = ssim_grad(a, b)
    h = 1e-6
    for idx in [(0, 0, 0), (7, 6, 1), (13, 12, 2), (3, 10, 0)]:
        p, m = a.copy(), a.copy()
        p[idx] += h
        m[idx] -= h
        assert (ssim(p, b) - ssim(m, b)) / (2 * h) == pytest.approx(g[idx], rel=1e-5, abs=1e-10)


def test_render_loss_mixing():
    a, b = rng.uniform(size=(12, 12, 3)), rng.uniform(size=(12, 12, 3))
    assert render_loss(a, a) == 0.0
    assert render_loss(a, b, LossConfig(lam=0.0)) == l1(a, b)
    assert render_loss(a, b, LossConfig(lam=1.0)) == pytest.approx(d_ssim(a, b), abs=1e-15)
    val, g = losses.render_loss_grad(a, b)
    assert val == pytest.approx(render_loss(a, b), abs=1e-15)
    with pytest.raises(ValueError):
        LossConfig(lam=1.5)


def test_edge_loss_examples():
    m = grid_mesh(4, 3)
    rest = rest_lengths(m)
    assert edge_loss(m, rest) == 0.0
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    assert edge_loss(m.with_positions(m.world_pos @ q.T + 1.0), rest) < 1e-13
    scaled = m.with_positions(m.world_pos * 1.1)
    assert abs(edge_loss(scaled, rest) - 0.1 * rest.sum()) < 1e-12
    with pytest.raises(ShapeMismatch):
        edge_loss(m, rest[:-1])


def test_edge_loss_gradient():
    m = grid_mesh(3, 3)
    rest = rest_lengths(m)
    x = m.world_pos + rng.normal(0, 0.05, m.world_pos.shape)
    val, g = edge_loss_grad(m.with_positions(x), rest)
    h = 1e-7
    for idx in [(0, 0), (4, 2), (8, 1)]:
        p, mm = x.copy(), x.copy()
        p[idx] += h
        mm[idx] -= h
        num = (edge_loss(m.with_positions(p), rest) - edge_loss(m.with_positions(mm), rest)) / (2 * h)
        assert num == pytest.approx(g[idx], rel=1e-6)


def test_geometry_loss_two_view_hand_sum():
    m = grid_mesh(2, 2)
    rest = rest_lengths(m)
    shifted = m.with_positions(m.world_pos * np.array([1.2, 1.0, 1.0]))
    obs = [np.zeros((4, 4, 3)), np.zeros((4, 4, 3))]
    ren = [np.full((4, 4, 3), 0.1), np.full((4, 4, 3), 0.3)]
    edge = 2 * 0.2 + (math.sqrt(1.2 ** 2 + 1) - math.sqrt(2))  # two horizontal edges and the diagonal
    expect = 0.5 * (0.1 + 0.3) + 0.5 * edge
    assert geometry_loss(ren, obs, shifted, rest) == pytest.approx(expect, abs=1e-12)
    assert geometry_loss(ren, obs, shifted, rest, LossConfig(gamma=0.0)) == pytest.approx(0.2, abs=1e-15)
    assert geometry_loss(obs, obs, m, rest) == 0.0


def test_node_loss_examples():
    a = rng.normal(size=(5, 7, 3))
    assert node_loss(a, a) == 0.0
    o = np.array([0.1, -0.2, 0.3])
    assert node_loss(a + o, a, 4) == pytest.approx(4 * o @ o, rel=1e-12)
    b = rng.normal(size=(5, 7, 3))
    loop = sum(np.mean([np.sum((a[t, k] - b[t, k]) ** 2) for k in range(7)]) for t in range(3))
    assert abs(node_loss(a, b, 3) - loop) < 1e-12
    assert node_loss(a, b, 1) == pytest.approx(np.mean(np.sum((a[0] - b[0]) ** 2, -1)))


def test_rollout_rmse_examples():
    a = rng.normal(size=(6, 9, 3))
    assert rollout_rmse(a, a) == 0.0
    d = rng.normal(size=(9, 3))
    d *= 0.25 / np.linalg.norm(d, axis=1, keepdims=True)
    assert rollout_rmse(a + d, a) == pytest.approx(0.25, rel=1e-12)
    b = rng.normal(size=(6, 9, 3))
    loop = np.mean([math.sqrt(np.mean([np.sum((a[t, k] - b[t, k]) ** 2) for k in range(9)]))
                    for t in range(1, 4)])
    assert abs(rollout_rmse(a, b, (1, 4)) - loop) < 1e-12
    assert per_step_rmse(a, b).shape == (6,)
    assert rollout_rmse([a, a], [b, a]) == pytest.approx(rollout_rmse(a, b) / 2)


def test_psnr_and_video_rmse():
    g = np.full((8, 8, 3), 0.5)
    assert psnr(g, g) == PSNR_INF
    assert abs(psnr(g, np.zeros_like(g)) - 6.0206) < 1e-3
    a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
    m = np.mean([(a[idx] - b[idx]) ** 2 for idx in np.ndindex(a.shape)])
    assert psnr(a, b) == pytest.approx(10 * math.log10(1 / m), abs=1e-10)
    assert rmse_vp([[a], [b]], [[a], [b]]) == 0.0
    assert rmse_vp([[a]], [[b]]) == pytest.approx(math.sqrt(m), abs=1e-12)
