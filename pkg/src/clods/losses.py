"""Training losses and evaluation metrics.

Image losses come in pairs: ``f(img, ref)`` returns the value and ``f_grad(img, ref)``
returns (value, d value / d img) for use with the render backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.ndimage import correlate1d

from .geometry import ClothMesh

PSNR_INF = float("inf")


class ShapeMismatch(ValueError):
    pass


@dataclass
class LossConfig:
    lam: float = 0.2
    gamma: float = 0.5
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    rollout_T: int = 8

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.rollout_T < 1:
            raise ValueError("rollout_T must be >= 1")


def _check(img, ref):
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ShapeMismatch(f"{img.shape} vs {ref.shape}")
    return img, ref


# ---------------------------------------------------------------------------
# photometric

def l1(img, ref) -> float:
    img, ref = _check(img, ref)
    return float(np.mean(np.abs(img - ref)))


def l1_grad(img, ref):
    img, ref = _check(img, ref)
    d = img - ref
    return float(np.mean(np.abs(d))), np.sign(d) / d.size


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-x ** 2 / (2 * sigma ** 2))
    return w / w.sum()


def _blur(x, w):
    # separable correlation kept only where the whole window fits ("valid")
    r = len(w) // 2
    y = correlate1d(x, w, axis=0, mode="constant", cval=0.0)
    y = correlate1d(y, w, axis=1, mode="constant", cval=0.0)
    return y[r:y.shape[0] - r, r:y.shape[1] - r]


def _blur_adjoint(g, w, shape):
    r = len(w) // 2
    full = np.zeros(shape)
    full[r:shape[0] - r, r:shape[1] - r] = g
    y = correlate1d(full, w, axis=0, mode="constant", cval=0.0)
    return correlate1d(y, w, axis=1, mode="constant", cval=0.0)


C1 = 0.01 ** 2
C2 = 0.03 ** 2


def _window(shape, window):
    # shrink the window (keeping it odd) for images smaller than it
    size = min(window, shape[0], shape[1])
    return size if size % 2 else size - 1


def _ssim_terms(img, ref, window, sigma):
    w = gaussian_window(_window(img.shape, window), sigma)
    m1, m2 = _blur(img, w), _blur(ref, w)
    e11, e22, e12 = _blur(img * img, w), _blur(ref * ref, w), _blur(img * ref, w)
    s11, s22, s12 = e11 - m1 * m1, e22 - m2 * m2, e12 - m1 * m2
    A = 2 * m1 * m2 + C1
    B = 2 * s12 + C2
    Cc = m1 * m1 + m2 * m2 + C1
    D = s11 + s22 + C2
    return w, m1, m2, A, B, Cc, D


def ssim(img, ref, window: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over valid window positions and channels (Gaussian window)."""
    img, ref = _check(img, ref)
    _, _, _, A, B, Cc, D = _ssim_terms(img, ref, window, sigma)
    return float(np.mean(A * B / (Cc * D)))


def ssim_grad(img, ref, window: int = 11, sigma: float = 1.5):
    img, ref = _check(img, ref)
    w, m1, m2, A, B, Cc, D = _ssim_terms(img, ref, window, sigma)
    smap = A * B / (Cc * D)
    g = 1.0 / smap.size
    # partials of the SSIM map w.r.t. blurred moments of img
    d_m1 = (2 * m2 * B - 2 * A * m2) / (Cc * D) - smap * 2 * m1 / Cc + smap * 2 * m1 / D
    d_e11 = -smap / D
    d_e12 = 2 * A / (Cc * D)
    adj = lambda t: _blur_adjoint(t, w, img.shape)
    grad = adj(g * d_m1) + 2 * img * adj(g * d_e11) + ref * adj(g * d_e12)
    return float(np.mean(smap)), grad


def d_ssim(img, ref, window: int = 11, sigma: float = 1.5) -> float:
    return (1.0 - ssim(img, ref, window, sigma)) / 2.0


def render_loss(img, ref, cfg: LossConfig | None = None) -> float:
    cfg = cfg or LossConfig()
    val = (1 - cfg.lam) * l1(img, ref)
    if cfg.lam > 0:
        val += cfg.lam * d_ssim(img, ref, cfg.ssim_window, cfg.ssim_sigma)
    return val


def render_loss_grad(img, ref, cfg: LossConfig | None = None):
    cfg = cfg or LossConfig()
    v1, g1 = l1_grad(img, ref)
    val, grad = (1 - cfg.lam) * v1, (1 - cfg.lam) * g1
    if cfg.lam > 0:
        s, gs = ssim_grad(img, ref, cfg.ssim_window, cfg.ssim_sigma)
        val += cfg.lam * (1 - s) / 2
        grad = grad - cfg.lam * gs / 2
    return val, grad


# ---------------------------------------------------------------------------
# geometry

def rest_lengths(mesh: ClothMesh) -> np.ndarray:
    d = mesh.world_pos[mesh.edges[:, 0]] - mesh.world_pos[mesh.edges[:, 1]]
    return np.sqrt(np.sum(d * d, -1))


def edge_loss(mesh_now: ClothMesh, rest: np.ndarray) -> float:
    """Sum over undirected edges of |current length - rest length| (each edge once)."""
    rest = np.asarray(rest, dtype=np.float64)
    if rest.shape != (len(mesh_now.edges),):
        raise ShapeMismatch(f"rest lengths {rest.shape} vs {len(mesh_now.edges)} edges")
    return float(np.sum(np.abs(rest_lengths(mesh_now) - rest)))


def edge_loss_grad(mesh_now: ClothMesh, rest: np.ndarray):
    rest = np.asarray(rest, dtype=np.float64)
    if rest.shape != (len(mesh_now.edges),):
        raise ShapeMismatch(f"rest lengths {rest.shape} vs {len(mesh_now.edges)} edges")
    x = mesh_now.world_pos
    i, j = mesh_now.edges[:, 0], mesh_now.edges[:, 1]
    d = x[i] - x[j]
    length = np.sqrt(np.sum(d * d, -1))
    dev = length - rest
    ge = (np.sign(dev) / np.maximum(length, 1e-300))[:, None] * d
    g = np.zeros_like(x)
    np.add.at(g, i, ge)
    np.add.at(g, j, -ge)
    return float(np.sum(np.abs(dev))), g


@njit(cache=True)
def _edge_prox_sweep(x, edges, rest, w, gamma):
    for e in range(edges.shape[0]):
        i, j = edges[e, 0], edges[e, 1]
        W = w[i] + w[j]
        if W <= 0.0:
            continue
        d0 = x[i, 0] - x[j, 0]
        d1 = x[i, 1] - x[j, 1]
        d2 = x[i, 2] - x[j, 2]
        length = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        if length < 1e-300:
            continue
        dev = length - rest[e]
        c = -min(abs(dev), gamma * W)
        if dev < 0:
            c = -c
        si = c * w[i] / (W * length)
        sj = c * w[j] / (W * length)
        x[i, 0] += si * d0
        x[i, 1] += si * d1
        x[i, 2] += si * d2
        x[j, 0] -= sj * d0
        x[j, 1] -= sj * d1
        x[j, 2] -= sj * d2


def edge_prox(x, edges, rest, w, gamma: float, sweeps: int = 1) -> np.ndarray:
    """Approximate proximal step of gamma * edge_loss around ``x``.

    Each edge, visited in order, solves its own one-edge problem
    min_c gamma |dev + c| + c^2 / (2 (w_i + w_j)) exactly (a soft threshold on the
    length change), split between its endpoints in proportion to the per-node step
    sizes ``w``.  Nodes with w = 0 do not move.
    """
    out = np.array(x, dtype=np.float64, copy=True)
    w = np.asarray(w, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.int64)
    rest = np.asarray(rest, dtype=np.float64)
    for _ in range(sweeps):
        _edge_prox_sweep(out, edges, rest, w, float(gamma))
    return out


def geometry_loss(rendered, observed, mesh_now: ClothMesh, rest, cfg: LossConfig | None = None) -> float:
    """Mean over views of the L1 photometric error plus gamma times the edge loss."""
    cfg = cfg or LossConfig()
    r_imgs = rendered.images if hasattr(rendered, "images") else rendered
    o_imgs = observed.images if hasattr(observed, "images") else observed
    if len(r_imgs) != len(o_imgs):
        raise ShapeMismatch("view counts differ")
    photo = float(np.mean([l1(a, b) for a, b in zip(r_imgs, o_imgs)]))
    return photo + cfg.gamma * edge_loss(mesh_now, rest)


# ---------------------------------------------------------------------------
# trajectories

def _traj(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 2 else x


def node_loss(pred, target, T: int | None = None) -> float:
    """Sum over the first T steps of the per-step mean squared node-position error."""
    pred, target = _traj(pred), _traj(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{pred.shape} vs {target.shape}")
    T = len(pred) if T is None else T
    err = np.sum((pred[:T] - target[:T]) ** 2, axis=-1)
    return float(np.sum(np.mean(err, axis=-1)))


def per_step_rmse(pred, gt) -> np.ndarray:
    pred, gt = _traj(pred), _traj(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"{pred.shape} vs {gt.shape}")
    return np.sqrt(np.mean(np.sum((pred - gt) ** 2, axis=-1), axis=-1))


def rollout_rmse(pred, gt, steps: slice | tuple | None = None) -> float:
    """Per-step node RMSE averaged over a range of steps.

    ``pred``/``gt`` are (T, K, 3) arrays or lists of them (averaged over trajectories).
    ``steps`` is a slice or (start, stop) tuple of step indices.
    """
    if isinstance(pred, (list, tuple)):
        return float(np.mean([rollout_rmse(p, g, steps) for p, g in zip(pred, gt)]))
    e = per_step_rmse(pred, gt)
    if steps is not None:
        e = e[slice(*steps) if isinstance(steps, tuple) else steps]
    return float(np.mean(e)) if e.size else 0.0


# ---------------------------------------------------------------------------
# video metrics

def mse(img, ref) -> float:
    img, ref = _check(img, ref)
    return float(np.mean((img - ref) ** 2))


def psnr(img, ref, peak: float = 1.0) -> float:
    m = mse(img, ref)
    if m == 0.0:
        return PSNR_INF
    return float(10.0 * np.log10(peak ** 2 / m))


def rmse(img, ref) -> float:
    return float(np.sqrt(mse(img, ref)))


def rmse_vp(pred_video, gt_video) -> float:
    """Mean over time steps of the per-step image RMSE (all views of a step pooled)."""
    if len(pred_video) != len(gt_video):
        raise ShapeMismatch("videos differ in length")
    vals = []
    for p, g in zip(pred_video, gt_video):
        p = np.stack(p.images) if hasattr(p, "images") else np.asarray(p)
        g = np.stack(g.images) if hasattr(g, "images") else np.asarray(g)
        vals.append(rmse(p, g))
    return float(np.mean(vals)) if vals else 0.0
