"""Mesh-anchored Gaussian splatting: components bound to faces, the position-driven
opacity network, pinhole cameras and the forward rasterizer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _raster, sh
from .geometry import ClothMesh, FrameCache, check_simplex, face_frames, sample_simplex

NEAR = 1e-2
COV2D_REG = 0.3  # px^2
FOOTPRINT_SIGMA = 3.0
T_MIN = 1e-4


class BehindCamera(ValueError):
    pass


class DegenerateCovariance(FloatingPointError):
    pass


class RenderError(RuntimeError):
    def __init__(self, camera_id, cause):
        super().__init__(f"camera {camera_id}: {cause}")
        self.camera_id = camera_id
        self.cause = cause


# ---------------------------------------------------------------------------
# cameras and frames

@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_cam: np.ndarray
    id: int = 0

    def __post_init__(self):
        self.world_to_cam = np.asarray(self.world_to_cam, dtype=np.float64).reshape(4, 4)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        R = self.rotation
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9:
            raise ValueError("camera rotation block is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_cam[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_cam[:3, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_view(self, pts):
        return np.asarray(pts) @ self.rotation.T + self.translation

    def project(self, pts) -> np.ndarray:
        """World points -> pixel coordinates (pixel (u, v) has its center at u+0.5, v+0.5)."""
        t = self.to_view(pts)
        return np.stack([self.fx * t[..., 0] / t[..., 2] + self.cx,
                         self.fy * t[..., 1] / t[..., 2] + self.cy], -1)

    def to_dict(self) -> dict:
        return {"id": int(self.id), "fx": float(self.fx), "fy": float(self.fy),
                "cx": float(self.cx), "cy": float(self.cy), "width": int(self.width),
                "height": int(self.height),
                "world_to_cam": [float(v) for v in self.world_to_cam.ravel()]}

    @classmethod
    def from_dict(cls, d) -> "Camera":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]),
                   np.asarray(d["world_to_cam"], dtype=np.float64).reshape(4, 4), int(d["id"]))


@dataclass
class FrameSet:
    images: list
    camera_ids: list
    timestep: int = 0

    def __post_init__(self):
        shapes = {im.shape for im in self.images}
        if len(shapes) > 1:
            raise ValueError("all images in a FrameSet must share a resolution")
        for im in self.images:
            if not np.all(np.isfinite(im)):
                raise ValueError("non-finite pixel values")

    def __len__(self):
        return len(self.images)


# ---------------------------------------------------------------------------
# Gaussian components

@dataclass
class GaussianCloth:
    face_id: np.ndarray
    beta: np.ndarray
    color_coeffs: np.ndarray
    scale_mult: np.ndarray
    epsilon: float
    sh_degree: int = 0

    def __post_init__(self):
        self.face_id = np.asarray(self.face_id, dtype=np.int64)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(-1, 3)
        self.color_coeffs = np.asarray(self.color_coeffs, dtype=np.float64).reshape(
            len(self.face_id), 3 * sh.n_basis(self.sh_degree))
        self.scale_mult = np.asarray(self.scale_mult, dtype=np.float64)
        check_simplex(self.beta)

    def __len__(self):
        return len(self.face_id)

    def copy(self) -> "GaussianCloth":
        return GaussianCloth(self.face_id.copy(), self.beta.copy(), self.color_coeffs.copy(),
                             self.scale_mult.copy(), self.epsilon, self.sh_degree)


def anchor_gaussians(mesh: ClothMesh, per_face: int, seed: int, sh_degree: int = 0,
                     epsilon: float | None = None) -> GaussianCloth:
    if per_face < 1:
        raise ValueError("per_face must be >= 1")
    rng = np.random.default_rng(seed)
    F = mesh.n_faces
    face_id = np.repeat(np.arange(F), per_face)
    beta = sample_simplex(rng, F * per_face)
    if epsilon is None:
        epsilon = 1e-4 * mesh.mean_edge_length()
    coeffs = np.zeros((F * per_face, 3 * sh.n_basis(sh_degree)))
    return GaussianCloth(face_id, beta, coeffs, np.full(F * per_face, 1.0 / np.sqrt(per_face)),
                         float(epsilon), sh_degree)


@dataclass
class Realized:
    """Per-frame component state derived from the mesh."""
    mu_w: np.ndarray
    mu_m: np.ndarray
    R: np.ndarray
    S: np.ndarray
    face_S: np.ndarray
    frame_cache: FrameCache
    face_R: np.ndarray

    @property
    def cov3(self) -> np.ndarray:
        return np.einsum("nij,nj,nkj->nik", self.R, self.S ** 2, self.R)


def realize(gcloth: GaussianCloth, mesh: ClothMesh) -> Realized:
    verts = mesh.world_pos[mesh.faces]
    face_R, face_S, cache = face_frames(verts, gcloth.epsilon)
    f = gcloth.face_id
    tri = mesh.faces[f]
    mu_w = np.einsum("nk,nkd->nd", gcloth.beta, mesh.world_pos[tri])
    mu_m = np.einsum("nk,nkd->nd", gcloth.beta, mesh.mesh_pos[tri])
    S = face_S[f].copy()
    S[:, 1:] *= gcloth.scale_mult[:, None]
    return Realized(mu_w, mu_m, face_R[f], S, face_S, cache, face_R)


# ---------------------------------------------------------------------------
# opacity network

class OpacityNet:
    """MLP f(mu_w, mu_m) -> (0, 1) on a sinusoidal encoding of both positions.

    World positions are mapped into roughly [-1, 1] with a fixed affine normalization
    (``world_center``/``world_scale``); UVs are mapped from [0, 1] to [-1, 1].  Inputs
    switched off by ``input_mask`` are replaced by zeros before encoding.
    """

    Z_CLIP = 30.0

    def __init__(self, params, world_center=(0, 0, 0), world_scale=1.0, n_freq=4,
                 input_mask=(True, True)):
        self.params = [np.asarray(p, dtype=np.float64) for p in params]
        self.world_center = np.asarray(world_center, dtype=np.float64)
        self.world_scale = float(world_scale)
        self.n_freq = int(n_freq)
        self.input_mask = (bool(input_mask[0]), bool(input_mask[1]))

    @classmethod
    def init(cls, seed=0, hidden=64, n_freq=4, world_center=(0, 0, 0), world_scale=1.0,
             input_mask=(True, True), init_logit=2.0):
        rng = np.random.default_rng(seed)
        d_in = 5 * (1 + 2 * n_freq)
        sizes = [d_in, hidden, hidden, 1]
        params = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            std = np.sqrt(2.0 / a) if i < 2 else 0.1 / np.sqrt(a)
            params.append(rng.normal(0, std, size=(a, b)))
            params.append(np.zeros(b))
        params[-1][:] = init_logit
        return cls(params, world_center, world_scale, n_freq, input_mask)

    @classmethod
    def for_mesh(cls, mesh: ClothMesh, seed=0, **kw):
        lo, hi = mesh.world_pos.min(0), mesh.world_pos.max(0)
        return cls.init(seed, world_center=0.5 * (lo + hi),
                        world_scale=0.5 * float(np.linalg.norm(hi - lo)), **kw)

    def copy(self) -> "OpacityNet":
        return OpacityNet([p.copy() for p in self.params], self.world_center.copy(),
                          self.world_scale, self.n_freq, self.input_mask)

    def with_mask(self, use_world: bool, use_mesh: bool) -> "OpacityNet":
        net = self.copy()
        net.input_mask = (use_world, use_mesh)
        return net

    # flat parameter vector helpers
    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        off = 0
        for p in self.params:
            p[...] = np.asarray(flat[off:off + p.size]).reshape(p.shape)
            off += p.size

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def _inputs(self, mu_w, mu_m):
        mu_w = np.atleast_2d(np.asarray(mu_w, dtype=np.float64))
        mu_m = np.atleast_2d(np.asarray(mu_m, dtype=np.float64))
        xw = (mu_w - self.world_center) / self.world_scale
        xm = 2.0 * mu_m - 1.0
        if not self.input_mask[0]:
            xw = np.zeros_like(xw)
        if not self.input_mask[1]:
            xm = np.zeros_like(xm)
        return np.concatenate([xw, xm], axis=1)

    def forward(self, mu_w, mu_m):
        x = self._inputs(mu_w, mu_m)
        freqs = np.pi * 2.0 ** np.arange(self.n_freq)
        ang = x[:, :, None] * freqs  # (N, 5, L)
        enc = np.concatenate([x, np.sin(ang).reshape(len(x), -1),
                              np.cos(ang).reshape(len(x), -1)], axis=1)
        W1, b1, W2, b2, W3, b3 = self.params
        z1 = enc @ W1 + b1
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ W2 + b2
        h2 = np.maximum(z2, 0.0)
        z = (h2 @ W3 + b3)[:, 0]
        zc = np.clip(z, -self.Z_CLIP, self.Z_CLIP)
        alpha = 1.0 / (1.0 + np.exp(-zc))
        cache = (x, ang, freqs, enc, z1, h1, z2, h2, z, alpha)
        return alpha, cache

    def backward(self, cache, g_alpha):
        """Returns (flat parameter gradient, gradient w.r.t. mu_w)."""
        x, ang, freqs, enc, z1, h1, z2, h2, z, alpha = cache
        W1, b1, W2, b2, W3, b3 = self.params
        N = len(x)
        gz = g_alpha * alpha * (1.0 - alpha) * (np.abs(z) < self.Z_CLIP)
        gz = gz[:, None]
        gW3 = h2.T @ gz
        gb3 = gz.sum(0)
        gh2 = gz @ W3.T
        gz2 = gh2 * (z2 > 0)
        gW2 = h1.T @ gz2
        gb2 = gz2.sum(0)
        gh1 = gz2 @ W2.T
        gz1 = gh1 * (z1 > 0)
        gW1 = enc.T @ gz1
        gb1 = gz1.sum(0)
        flat = np.concatenate([g.ravel() for g in (gW1, gb1, gW2, gb2, gW3, gb3)])
        g_mu_w = np.zeros((N, 3))
        if self.input_mask[0]:
            genc = gz1 @ W1.T
            L = self.n_freq
            g_sin = genc[:, 5:5 + 5 * L].reshape(N, 5, L)
            g_cos = genc[:, 5 + 5 * L:].reshape(N, 5, L)
            gx = genc[:, :5] + np.sum((g_sin * np.cos(ang) - g_cos * np.sin(ang)) * freqs, axis=2)
            g_mu_w = gx[:, :3] / self.world_scale
        return flat, g_mu_w


def opacity(net: OpacityNet, mu_w, mu_m):
    """Opacity for one center (returns a float) or a batch of centers (returns an array)."""
    alpha, _ = net.forward(mu_w, mu_m)
    if np.ndim(mu_w) == 1:
        return float(alpha[0])
    return alpha


# ---------------------------------------------------------------------------
# projection

def _project(cam: Camera, mu: np.ndarray, cov3: np.ndarray):
    Rc = cam.rotation
    t = mu @ Rc.T + cam.translation
    valid = t[:, 2] > NEAR
    tz = np.where(valid, t[:, 2], 1.0)
    tx, ty = t[:, 0], t[:, 1]
    N = len(mu)
    J = np.zeros((N, 2, 3))
    J[:, 0, 0] = cam.fx / tz
    J[:, 0, 2] = -cam.fx * tx / tz ** 2
    J[:, 1, 1] = cam.fy / tz
    J[:, 1, 2] = -cam.fy * ty / tz ** 2
    M = Rc @ cov3 @ Rc.T
    cov2 = J @ M @ J.transpose(0, 2, 1)
    cov2[:, 0, 0] += COV2D_REG
    cov2[:, 1, 1] += COV2D_REG
    mean2d = np.stack([cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy], 1)
    return mean2d, cov2, t[:, 2], valid, (t, tz, J, M)


def project_gaussian(cam: Camera, mu, R, S):
    """Local-affine projection of one Gaussian -> (mean2d px, cov2d px^2, view depth)."""
    mu = np.asarray(mu, dtype=np.float64)[None]
    R = np.asarray(R, dtype=np.float64)
    cov3 = (R * np.asarray(S, dtype=np.float64) ** 2) @ R.T
    mean2d, cov2, depth, valid, _ = _project(cam, mu, cov3[None])
    if not valid[0]:
        raise BehindCamera("point is not in front of the camera")
    return mean2d[0], cov2[0], float(depth[0])


# ---------------------------------------------------------------------------
# rendering

@dataclass
class SceneState:
    """View-independent part of a render: realized components and their opacities."""
    gcloth: GaussianCloth
    mesh: ClothMesh
    net: OpacityNet
    realized: Realized
    alpha: np.ndarray
    net_cache: tuple


@dataclass
class RenderTape:
    """Everything the backward pass needs for one camera."""
    scene: SceneState
    cam: Camera
    background: np.ndarray
    t_min: float
    mean2d: np.ndarray
    cov2: np.ndarray
    conic: np.ndarray
    depth: np.ndarray
    proj_cache: tuple
    colors: np.ndarray
    sh_cache: tuple
    order: np.ndarray
    bbox: np.ndarray
    ptr: np.ndarray
    comp: np.ndarray
    n_used: np.ndarray
    a_pair: np.ndarray
    g_pair: np.ndarray
    t_pair: np.ndarray
    t_final: np.ndarray
    image: np.ndarray = field(repr=False)

    def replay(self) -> np.ndarray:
        img = _raster.replay(self.ptr, self.comp, self.n_used, self.a_pair, self.t_pair,
                             self.colors, self.t_final, self.background)
        return img.reshape(self.cam.height, self.cam.width, 3)

    def signature(self) -> tuple:
        """Discrete structure of the render (sort order, footprints, termination)."""
        return (self.order.tobytes(), self.bbox.tobytes(), self.n_used.tobytes())


def prepare_scene(gcloth: GaussianCloth, mesh: ClothMesh, net: OpacityNet) -> SceneState:
    if len(gcloth) and gcloth.face_id.max() >= mesh.n_faces:
        raise IndexError("component anchored to a face outside the mesh")
    rl = realize(gcloth, mesh)
    alpha, cache = net.forward(rl.mu_w, rl.mu_m)
    return SceneState(gcloth, mesh, net, rl, alpha, cache)


def _colors(gcloth: GaussianCloth, mu: np.ndarray, cam: Camera):
    nb = sh.n_basis(gcloth.sh_degree)
    coeffs = gcloth.color_coeffs.reshape(len(gcloth), nb, 3)
    diff = mu - cam.center
    dist = np.linalg.norm(diff, axis=1, keepdims=True)
    dirs = diff / np.maximum(dist, 1e-12)
    Y, dY = sh.basis(dirs, gcloth.sh_degree)
    colors = np.einsum("nb,nbc->nc", Y, coeffs) + sh.COLOR_OFFSET
    return colors, (Y, dY, dirs, dist)


def render_scene(scene: SceneState, cam: Camera, background=(0.0, 0.0, 0.0), t_min=T_MIN,
                 tile: int | None = None):
    rl = scene.realized
    N = len(rl.mu_w)
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    W, H = int(cam.width), int(cam.height)
    mean2d, cov2, depth, valid, pcache = _project(cam, rl.mu_w, rl.cov3)
    det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] * cov2[:, 1, 0]
    if np.any(valid & ~(det > 0)) or not np.all(np.isfinite(cov2[valid])):
        raise DegenerateCovariance("2D covariance not invertible after regularization")
    det = np.where(valid, det, 1.0)
    conic = np.stack([cov2[:, 1, 1] / det, -cov2[:, 0, 1] / det, cov2[:, 0, 0] / det], 1)
    colors, sh_cache = _colors(scene.gcloth, rl.mu_w, cam)

    rx = FOOTPRINT_SIGMA * np.sqrt(np.where(valid, cov2[:, 0, 0], 0.0))
    ry = FOOTPRINT_SIGMA * np.sqrt(np.where(valid, cov2[:, 1, 1], 0.0))
    mx = np.where(valid, mean2d[:, 0], -1e9)
    my = np.where(valid, mean2d[:, 1], -1e9)
    umin = np.clip(np.ceil(mx - rx - 0.5), 0, W).astype(np.int64)
    umax = np.clip(np.floor(mx + rx - 0.5), -1, W - 1).astype(np.int64)
    vmin = np.clip(np.ceil(my - ry - 0.5), 0, H).astype(np.int64)
    vmax = np.clip(np.floor(my + ry - 0.5), -1, H - 1).astype(np.int64)
    visible = valid & (umin <= umax) & (vmin <= vmax)
    idx = np.flatnonzero(visible)
    order = idx[np.argsort(depth[idx], kind="stable")]
    if tile:
        ptr, comp = _raster.build_lists_tiled(order, umin, umax, vmin, vmax, W, H, int(tile))
    else:
        ptr, comp = _raster.build_lists(order, umin, umax, vmin, vmax, W, H)
    image, a_pair, g_pair, t_pair, n_used, t_final = _raster.composite(
        ptr, comp, mean2d, conic, scene.alpha, colors, bg, W, float(t_min))
    image = image.reshape(H, W, 3)
    bbox = np.stack([umin, umax, vmin, vmax], 1)
    tape = RenderTape(scene, cam, bg, float(t_min), mean2d, cov2, conic, depth, pcache, colors,
                      sh_cache, order, bbox, ptr, comp, n_used, a_pair, g_pair, t_pair, t_final,
                      image)
    return image, tape


def render(gcloth: GaussianCloth, mesh: ClothMesh, net: OpacityNet, cam: Camera,
           background=(0.0, 0.0, 0.0), t_min=T_MIN, tile: int | None = None):
    """Render one view.  Returns (H x W x 3 float image, RenderTape)."""
    scene = prepare_scene(gcloth, mesh, net)
    return render_scene(scene, cam, background, t_min, tile)


def render_batch(gcloth: GaussianCloth, mesh: ClothMesh, net: OpacityNet, cams,
                 background=(0.0, 0.0, 0.0), timestep: int = 0, return_tapes: bool = False,
                 t_min=T_MIN, tile=None):
    scene = prepare_scene(gcloth, mesh, net)
    images, tapes = [], []
    for cam in cams:
        try:
            img, tape = render_scene(scene, cam, background, t_min, tile)
        except (DegenerateCovariance, FloatingPointError, ValueError) as exc:
            raise RenderError(cam.id, exc) from exc
        images.append(img)
        tapes.append(tape)
    fs = FrameSet(images, [c.id for c in cams], timestep)
    return (fs, tapes) if return_tapes else fs
