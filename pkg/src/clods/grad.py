"""Reverse-mode gradients of the splat renderer, Adam, and a finite-difference checker."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _raster
from .geometry import face_frames_backward
from .splat import NEAR, RenderTape, SceneState

__all__ = ["RenderTape", "GradBundle", "TapeMismatch", "render_backward", "AdamState",
           "adam_step", "Adam", "grad_check", "GradCheckReport"]


class TapeMismatch(ValueError):
    pass


@dataclass
class GradBundle:
    d_node_pos: np.ndarray
    d_net_params: np.ndarray
    d_colors: np.ndarray
    d_scale_mult: np.ndarray

    def __add__(self, other: "GradBundle") -> "GradBundle":
        return GradBundle(self.d_node_pos + other.d_node_pos,
                          self.d_net_params + other.d_net_params,
                          self.d_colors + other.d_colors,
                          self.d_scale_mult + other.d_scale_mult)

    def scaled(self, s: float) -> "GradBundle":
        return GradBundle(self.d_node_pos * s, self.d_net_params * s, self.d_colors * s,
                          self.d_scale_mult * s)


def _view_backward(tape: RenderTape, d_image: np.ndarray, acc: dict) -> None:
    cam = tape.cam
    H, W = cam.height, cam.width
    d_image = np.asarray(d_image, dtype=np.float64)
    if d_image.shape != (H, W, 3):
        raise TapeMismatch(f"d_image shape {d_image.shape} does not match ({H}, {W}, 3)")
    scene = tape.scene
    N = len(scene.alpha)
    g_alpha, g_mean, g_conic, g_color = _raster.composite_backward(
        tape.ptr, tape.comp, tape.n_used, tape.a_pair, tape.g_pair, tape.t_pair, tape.mean2d,
        tape.conic, scene.alpha, tape.colors, tape.background, d_image.reshape(-1, 3), W, N)
    acc["alpha"] += g_alpha

    # colors -> SH coefficients (and view direction for degree > 0)
    Y, dY, dirs, dist = tape.sh_cache
    gc = scene.gcloth
    nb = Y.shape[1]
    acc["coeffs"] += (Y[:, :, None] * g_color[:, None, :]).reshape(N, nb * 3)
    g_mu = np.zeros((N, 3))
    if gc.sh_degree > 0:
        coeffs = gc.color_coeffs.reshape(N, nb, 3)
        g_Y = np.einsum("nbc,nc->nb", coeffs, g_color)
        g_dir = np.einsum("nb,nbd->nd", g_Y, dY)
        g_mu += (g_dir - dirs * np.sum(dirs * g_dir, 1, keepdims=True)) / np.maximum(dist, 1e-12)

    # conic -> cov2
    t, tz, J, M = tape.proj_cache
    Q = np.empty((N, 2, 2))
    Q[:, 0, 0], Q[:, 0, 1], Q[:, 1, 0], Q[:, 1, 1] = (tape.conic[:, 0], tape.conic[:, 1],
                                                      tape.conic[:, 1], tape.conic[:, 2])
    G_Q = np.empty((N, 2, 2))
    G_Q[:, 0, 0], G_Q[:, 1, 1] = g_conic[:, 0], g_conic[:, 2]
    G_Q[:, 0, 1] = G_Q[:, 1, 0] = 0.5 * g_conic[:, 1]
    G_C = -Q @ G_Q @ Q
    # cov2 = J M J^T + reg
    Jt = J.transpose(0, 2, 1)
    G_M = Jt @ G_C @ J
    G_J = (G_C + G_C.transpose(0, 2, 1)) @ J @ M
    Rc = cam.rotation
    acc["cov3"] += Rc.T @ G_M @ Rc

    fx, fy = cam.fx, cam.fy
    tx, ty = t[:, 0], t[:, 1]
    g_t = np.zeros((N, 3))
    g_t[:, 0] = g_mean[:, 0] * fx / tz + G_J[:, 0, 2] * (-fx / tz ** 2)
    g_t[:, 1] = g_mean[:, 1] * fy / tz + G_J[:, 1, 2] * (-fy / tz ** 2)
    g_t[:, 2] = (-g_mean[:, 0] * fx * tx / tz ** 2 - g_mean[:, 1] * fy * ty / tz ** 2
                 - G_J[:, 0, 0] * fx / tz ** 2 - G_J[:, 1, 1] * fy / tz ** 2
                 + G_J[:, 0, 2] * 2 * fx * tx / tz ** 3 + G_J[:, 1, 2] * 2 * fy * ty / tz ** 3)
    g_t[~(t[:, 2] > NEAR)] = 0.0
    g_mu += g_t @ Rc
    acc["mu"] += g_mu


def _scene_backward(scene: SceneState, acc: dict) -> GradBundle:
    gc, mesh, rl = scene.gcloth, scene.mesh, scene.realized
    N = len(gc)
    K = mesh.n_nodes
    G = acc["cov3"]
    Gs = G + G.transpose(0, 2, 1)
    S2 = rl.S ** 2
    g_R = Gs @ (rl.R * S2[:, None, :])
    RtGR = np.einsum("nik,nij,njk->nk", rl.R, G, rl.R)
    g_S = 2.0 * rl.S * RtGR

    f = gc.face_id
    face_s = rl.face_S[f]
    g_scale_mult = face_s[:, 1] * g_S[:, 1] + face_s[:, 2] * g_S[:, 2]
    F = mesh.n_faces
    g_face_R = np.zeros((F, 3, 3))
    np.add.at(g_face_R, f, g_R)
    g_face_S = np.zeros((F, 3))
    np.add.at(g_face_S, f, g_S * np.stack([np.zeros(N), gc.scale_mult, gc.scale_mult], 1))

    g_net, g_mu_net = scene.net.backward(scene.net_cache, acc["alpha"])
    g_mu = acc["mu"] + g_mu_net

    g_x = np.zeros((K, 3))
    tri = mesh.faces[f]
    np.add.at(g_x, tri.ravel(), (gc.beta[:, :, None] * g_mu[:, None, :]).reshape(-1, 3))
    g_verts = face_frames_backward(rl.frame_cache, g_face_R, g_face_S)
    np.add.at(g_x, mesh.faces.ravel(), g_verts.reshape(-1, 3))
    return GradBundle(g_x, g_net, acc["coeffs"], g_scale_mult)


def render_backward(tape, d_image) -> GradBundle:
    """Gradients of sum(d_image * image) w.r.t. node positions, opacity-net parameters,
    color coefficients and scale multipliers.

    ``tape``/``d_image`` may be lists (one entry per camera) as long as all tapes come
    from the same scene (same render_batch call); the view-independent part of the
    chain rule then runs once.
    """
    tapes = tape if isinstance(tape, (list, tuple)) else [tape]
    d_images = d_image if isinstance(tape, (list, tuple)) else [d_image]
    if len(tapes) != len(d_images):
        raise TapeMismatch("need one d_image per tape")
    scene = tapes[0].scene
    if any(t.scene is not scene for t in tapes):
        raise TapeMismatch("tapes come from different scenes")
    N = len(scene.alpha)
    acc = {"alpha": np.zeros(N), "mu": np.zeros((N, 3)), "cov3": np.zeros((N, 3, 3)),
           "coeffs": np.zeros_like(scene.gcloth.color_coeffs)}
    for t, d in zip(tapes, d_images):
        _view_backward(t, d, acc)
    return _scene_backward(scene, acc)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: AdamState,
              hyper=(1e-3, 0.9, 0.999, 1e-8), lrs: dict | None = None):
    """One bias-corrected Adam update; returns (new params, new state).

    ``lrs`` optionally overrides the learning rate per parameter name.
    """
    lr, b1, b2, eps = hyper
    t = state.step + 1
    new_p, m_new, v_new = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ValueError(f"gradient shape {g.shape} != parameter shape {np.shape(p)} for {k}")
        m = state.m.get(k, np.zeros_like(g))
        v = state.v.get(k, np.zeros_like(g))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        step_lr = lr if lrs is None else lrs.get(k, lr)
        new_p[k] = p - step_lr * mhat / (np.sqrt(vhat) + eps)
        m_new[k], v_new[k] = m, v
    return new_p, AdamState(m_new, v_new, t)


class Adam:
    """Stateful convenience wrapper over :func:`adam_step`."""

    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, lrs=None):
        self.hyper = (lr, betas[0], betas[1], eps)
        self.lrs = lrs
        self.state = AdamState()

    def step(self, params: dict, grads: dict) -> dict:
        new, self.state = adam_step(params, grads, self.state, self.hyper, self.lrs)
        return new


# ---------------------------------------------------------------------------
# finite-difference check

@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_err: np.ndarray
    considered: np.ndarray
    excluded: np.ndarray
    worst: list
    rtol: float

    @property
    def max_rel_err(self) -> float:
        r = self.rel_err[self.considered]
        return float(r.max()) if r.size else 0.0

    @property
    def pass_fraction(self) -> float:
        r = self.rel_err[self.considered]
        return float(np.mean(r < self.rtol)) if r.size else 1.0

    def passed(self, min_fraction: float = 0.95) -> bool:
        return self.pass_fraction >= min_fraction

    def summary(self) -> str:
        lines = [f"coords considered={int(self.considered.sum())} "
                 f"excluded={int(self.excluded.sum())} max_rel_err={self.max_rel_err:.3e} "
                 f"pass_fraction={self.pass_fraction:.4f} (rtol={self.rtol:g})"]
        for i, a, n, r in self.worst:
            lines.append(f"  coord {i}: analytic={a:+.6e} numeric={n:+.6e} rel_err={r:.3e}")
        return "\n".join(lines)


def grad_check(closure: Callable, params, h: float = 1e-5, grad=None, rtol: float = 1e-3,
               min_abs: float = 1e-8, structure: Callable | None = None,
               flip_radius: float = 1e-4, n_worst: int = 10) -> GradCheckReport:
    """Compare an analytic gradient with central differences, coordinate by coordinate.

    ``closure(p)`` returns either a scalar (then ``grad`` must be given) or
    ``(value, grad)``.  If ``structure(p)`` is given, coordinates whose perturbation by
    +-flip_radius changes the returned signature are excluded.
    """
    p0 = np.array(params, dtype=np.float64)
    flat = p0.ravel()
    if grad is None:
        _, grad = closure(p0)
    analytic = np.asarray(grad, dtype=np.float64).ravel()

    def value(p):
        out = closure(p.reshape(p0.shape))
        return float(out[0] if isinstance(out, tuple) else out)

    base_sig = structure(p0) if structure is not None else None
    numeric = np.zeros_like(flat)
    excluded = np.zeros(flat.size, dtype=bool)
    for i in range(flat.size):
        if structure is not None:
            flipped = False
            for s in (flip_radius, -flip_radius):
                q = flat.copy()
                q[i] += s
                if structure(q.reshape(p0.shape)) != base_sig:
                    flipped = True
                    break
            if flipped:
                excluded[i] = True
                continue
        q = flat.copy()
        q[i] += h
        fp = value(q)
        q[i] -= 2 * h
        fm = value(q)
        numeric[i] = (fp - fm) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-300)
    rel = np.abs(analytic - numeric) / denom
    considered = ~excluded & (np.abs(analytic) > min_abs)
    idx = np.flatnonzero(considered)
    worst_idx = idx[np.argsort(-rel[idx], kind="stable")][:n_worst]
    worst = [(int(i), float(analytic[i]), float(numeric[i]), float(rel[i])) for i in worst_idx]
    return GradCheckReport(analytic, numeric, rel, considered, excluded, worst, rtol)
