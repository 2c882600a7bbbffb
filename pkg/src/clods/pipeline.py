"""Three-stage training (appearance fit, mesh extraction, dynamics training) and the
rollout-then-render forward process."""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import losses
from .dynamics import NumericBlowup
from .geometry import ClothMesh, Trajectory
from .grad import Adam, render_backward
from .splat import FrameSet, GaussianCloth, OpacityNet, anchor_gaussians, render_batch

log = logging.getLogger(__name__)


class NoConvergence(UserWarning):
    pass


@dataclass
class Stage1Config:
    max_iters: int = 600
    lr_colors: float = 0.05
    lr_net: float = 2e-3
    lr_scale_mult: float = 0.01
    convergence_eps: float = 1e-6
    window: int = 50
    per_face: int = 4
    sh_degree: int = 0
    lam: float = 0.2
    min_scale_mult: float = 0.05


@dataclass
class Stage2Config:
    inner_iters: int = 100
    lr_dx: float = 0.05            # in units of the mean rest edge length
    gamma: float = 0.5
    window: int = 10
    convergence_eps: float = 1e-6
    cosine: bool = True
    optimizer: str = "prox-adam"   # or "adam": plain Adam on photo + gamma * edge
    prox_sweeps: int = 500
    keep: str = "last"             # or "best": lowest-loss iterate


@dataclass
class StageConfig:
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    stage3: dict = field(default_factory=dict)
    seed: int = 0
    background: tuple = (0.0, 0.0, 0.0)
    use_world: bool = True
    use_mesh: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StageConfig":
        d = dict(d)
        s1 = Stage1Config(**d.pop("stage1", {}))
        s2 = Stage2Config(**d.pop("stage2", {}))
        if "background" in d:
            d["background"] = tuple(d["background"])
        return cls(stage1=s1, stage2=s2, **d)


# ---------------------------------------------------------------------------
# stage 1

def _as_framesets(frames) -> list:
    return [frames] if isinstance(frames, FrameSet) else list(frames)


def stage1_fit(mesh_0: ClothMesh, frames_0, cams, cfg: StageConfig | None = None,
               gcloth: GaussianCloth | None = None, net: OpacityNet | None = None):
    """Fit colors, scale multipliers and the opacity network to frame-0 views with the
    mesh held fixed.  ``frames_0`` may be a FrameSet or a list of them (several
    trajectories sharing one appearance).  Returns (GaussianCloth, OpacityNet) at the
    best iterate."""
    cfg = cfg or StageConfig()
    c1 = cfg.stage1
    lcfg = losses.LossConfig(lam=c1.lam)
    gcloth = gcloth.copy() if gcloth is not None else anchor_gaussians(
        mesh_0, c1.per_face, cfg.seed, c1.sh_degree)
    if net is None:
        net = OpacityNet.for_mesh(mesh_0, seed=cfg.seed,
                                  input_mask=(cfg.use_world, cfg.use_mesh))
    else:
        net = net.copy()
    targets = _as_framesets(frames_0)
    cam_by_id = {c.id: c for c in cams}
    opt = Adam(lrs={"colors": c1.lr_colors, "net": c1.lr_net, "scale": c1.lr_scale_mult})
    params = {"colors": gcloth.color_coeffs.copy(), "net": net.get_flat(),
              "scale": gcloth.scale_mult.copy()}
    best = (np.inf, None)
    history = []
    converged = False
    n_views = sum(len(fs) for fs in targets)
    for it in range(c1.max_iters):
        gcloth.color_coeffs = params["colors"]
        gcloth.scale_mult = params["scale"]
        net.set_flat(params["net"])
        total, grads = 0.0, None
        for fs in targets:
            views = [cam_by_id[i] for i in fs.camera_ids]
            rendered, tapes = render_batch(gcloth, mesh_0, net, views, cfg.background,
                                           return_tapes=True)
            d_imgs = []
            for img, ref in zip(rendered.images, fs.images):
                v, g = losses.render_loss_grad(img, ref, lcfg)
                total += v / n_views
                d_imgs.append(g / n_views)
            gb = render_backward(tapes, d_imgs)
            grads = gb if grads is None else grads + gb
        history.append(total)
        if total < best[0]:
            best = (total, (params["colors"].copy(), params["scale"].copy(), params["net"].copy()))
        if it % 25 == 0:
            log.info("stage=fit step=%d loss=%.6g", it, total)
        if it >= c1.window and history[it - c1.window] - min(history[it - c1.window:]) < c1.convergence_eps:
            converged = True
            break
        params = opt.step(params, {"colors": grads.d_colors, "net": grads.d_net_params,
                                   "scale": grads.d_scale_mult})
        params["scale"] = np.clip(params["scale"], c1.min_scale_mult, 1.0)
    if not converged and c1.max_iters > 0:
        warnings.warn(f"stage 1 stopped at max_iters={c1.max_iters} "
                      f"(best loss {best[0]:.4g})", NoConvergence, stacklevel=2)
    if best[1] is not None:
        gcloth.color_coeffs, gcloth.scale_mult, flat = best[1]
        net.set_flat(flat)
    gcloth.fit_history = history
    return gcloth, net


# ---------------------------------------------------------------------------
# stage 2

@dataclass
class ExtractionResult:
    trajectory: Trajectory
    geometry_loss: np.ndarray
    psnr: np.ndarray
    iters: np.ndarray = None


def _multi_view_l1(gcloth, mesh, net, cams, fs: FrameSet, background):
    rendered, tapes = render_batch(gcloth, mesh, net, cams, background, return_tapes=True)
    n = len(cams)
    vals, d_imgs = [], []
    for img, ref in zip(rendered.images, fs.images):
        v, g = losses.l1_grad(img, ref)
        vals.append(v)
        d_imgs.append(g / n)
    gb = render_backward(tapes, d_imgs)
    return float(np.mean(vals)), gb.d_node_pos, rendered


def _step_sizes(opt: Adam, key: str, free: np.ndarray) -> np.ndarray:
    """Per-node effective Adam step (lr / sqrt(v_hat)), averaged over xyz; 0 when pinned."""
    lr, _, b2, eps = opt.hyper
    v_hat = opt.state.v[key] / (1 - b2 ** opt.state.step)
    return np.mean(lr / (np.sqrt(v_hat) + eps), axis=1) * free


def extract_step(gcloth, net, mesh_prev: ClothMesh, fs: FrameSet, cams, rest, cfg: StageConfig,
                 pinned_pos=None):
    """Optimize one displacement field so the rendered mesh matches ``fs``.

    With ``optimizer="prox-adam"`` the photometric term drives Adam and the edge term
    is applied through its proximal step after every update; "adam" feeds the summed
    gradient of both terms to Adam.  Returns (positions, loss, rendered FrameSet,
    iterations) for the final iterate, or for the lowest-loss one when ``keep="best"``.
    """
    c2 = cfg.stage2
    if c2.optimizer not in ("prox-adam", "adam"):
        raise ValueError(f"unknown stage-2 optimizer {c2.optimizer!r}")
    if c2.keep not in ("last", "best"):
        raise ValueError(f"keep must be 'last' or 'best', got {c2.keep!r}")
    x_prev = mesh_prev.world_pos
    pins = mesh_prev.pinned
    free_nodes = mesh_prev.free_mask().astype(np.float64)
    free = free_nodes[:, None]
    base = x_prev.copy()
    if pinned_pos is not None and len(pins):
        base[pins] = pinned_pos
    lr0 = c2.lr_dx * float(np.mean(rest))
    cam_by_id = {c.id: c for c in cams}
    views = [cam_by_id[i] for i in fs.camera_ids]
    dx = np.zeros_like(x_prev)
    opt = Adam(lr=lr0)
    best = (np.inf, base.copy(), None)
    history = []
    it = 0
    for it in range(c2.inner_iters + 1):
        x = base + dx * free
        mesh = mesh_prev.with_positions(x)
        photo, g_photo, rendered = _multi_view_l1(gcloth, mesh, net, views, fs, cfg.background)
        e_val, g_edge = losses.edge_loss_grad(mesh, rest)
        loss = photo + c2.gamma * e_val
        if not np.isfinite(loss):
            raise NumericBlowup(f"non-finite geometry loss at inner iteration {it}")
        history.append(loss)
        if loss < best[0]:
            best = (loss, x.copy(), rendered)
        if it == c2.inner_iters:
            break
        # converged once the loss stays flat (within eps) over the window
        recent = history[-(c2.window + 1):]
        if it >= c2.window and max(recent) - min(recent) < c2.convergence_eps:
            break
        if c2.cosine:
            opt.hyper = (0.5 * lr0 * (1 + np.cos(np.pi * it / c2.inner_iters)),) + opt.hyper[1:]
        if c2.optimizer == "adam":
            dx = opt.step({"dx": dx}, {"dx": (g_photo + c2.gamma * g_edge) * free})["dx"]
        else:
            dx = opt.step({"dx": dx}, {"dx": g_photo * free})["dx"]
            if c2.gamma > 0:
                w = _step_sizes(opt, "dx", free_nodes)
                x_new = losses.edge_prox(base + dx * free, mesh_prev.edges, rest, w, c2.gamma,
                                         c2.prox_sweeps)
                dx = (x_new - base) * free
    if c2.keep == "last":
        return x, loss, rendered, it
    return best[1], best[0], best[2], it


def stage2_extract(gcloth, net, mesh_0: ClothMesh, frames, cams, cfg: StageConfig | None = None,
                   pinned_traj=None, rest=None) -> ExtractionResult:
    """Recursively extract meshes for ``frames`` (a list of FrameSets for steps 1..T).

    ``pinned_traj`` optionally gives pinned-node positions per step (same length as
    frames); otherwise pinned nodes keep their frame-0 positions.  The returned
    trajectory starts with mesh_0 and has len(frames) + 1 entries.
    """
    cfg = cfg or StageConfig()
    rest = losses.rest_lengths(mesh_0) if rest is None else rest
    diag = mesh_0.diagonal()
    xs = [mesh_0.world_pos.copy()]
    geo, ps, iters = [], [], []
    mesh = mesh_0
    for t, fs in enumerate(frames):
        pp = None if pinned_traj is None else np.asarray(pinned_traj[t])[mesh_0.pinned]
        x, loss, rendered, n_it = extract_step(gcloth, net, mesh, fs, cams, rest, cfg, pp)
        if not np.all(np.isfinite(x)) or np.abs(x - mesh_0.world_pos).max() > 1e3 * diag:
            raise NumericBlowup(f"extraction diverged at step {t + 1}")
        mesh = mesh.with_positions(x)
        xs.append(x)
        geo.append(loss)
        ps.append(float(np.mean([losses.psnr(a, b) for a, b in zip(rendered.images, fs.images)])))
        iters.append(n_it)
        log.info("stage=extract step=%d loss=%.6g", t + 1, loss)
    return ExtractionResult(Trajectory(np.array(xs)), np.array(geo), np.array(ps), np.array(iters))


# ---------------------------------------------------------------------------
# initial-mesh perturbations

def perturb_initial_mesh(mesh_0: ClothMesh, kind: str, magnitude: float, seed: int = 0) -> ClothMesh:
    """gaussian: i.i.d. node noise with variance ``magnitude``; translation: one global
    shift with per-axis N(0, magnitude) components; scaling: one factor drawn uniformly
    from [1 - magnitude, 1 + magnitude] about the centroid."""
    rng = np.random.default_rng(seed)
    x = mesh_0.world_pos.copy()
    if magnitude == 0:
        return mesh_0.with_positions(x)
    if kind == "gaussian":
        x = x + rng.normal(0.0, np.sqrt(magnitude), x.shape)
    elif kind == "translation":
        x = x + rng.normal(0.0, np.sqrt(magnitude), 3)
    elif kind == "scaling":
        s = rng.uniform(1 - magnitude, 1 + magnitude)
        c = x.mean(0)
        x = c + s * (x - c)
    else:
        raise ValueError(f"unknown perturbation kind {kind!r}")
    return mesh_0.with_positions(x)


# ---------------------------------------------------------------------------
# stage 3 and the forward process

def stage3_train(extractions, mesh: ClothMesh, cfg: StageConfig | None = None, holdout=None,
                 log_path=None):
    """Train the dynamics network on extracted trajectories (ExtractionResult,
    Trajectory or raw arrays)."""
    from . import dynamics

    cfg = cfg or StageConfig()
    gcfg = dynamics.GnnConfig(**{"seed": cfg.seed, **cfg.stage3})
    trajs = [getattr(e, "trajectory", e) for e in extractions]
    return dynamics.train_gnn(trajs, mesh, gcfg, holdout=holdout, log_path=log_path)


def dvc_forward(mesh_0: ClothMesh, x_1, gnn, gcloth, net, cams, steps: int,
                background=(0.0, 0.0, 0.0), pinned_script=None, render: bool = True):
    """Roll the dynamics forward from (mesh_0, x_1) and render every predicted state.
    Returns (Trajectory of ``steps`` states, list of FrameSets)."""
    from . import dynamics

    traj = dynamics.rollout(gnn, mesh_0.world_pos, x_1, mesh_0, steps, pinned_script)
    videos = []
    if render:
        for t, x in enumerate(traj.node_pos):
            fs = render_batch(gcloth, mesh_0.with_positions(x), net, cams, background)
            videos.append(FrameSet(fs.images, fs.camera_ids, t + 2))
    return traj, videos
