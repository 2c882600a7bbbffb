"""Ground-truth data: mass-spring cloth simulation, camera rings and an independent
z-buffered triangle rasterizer for textured multi-view frames."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit

from .geometry import ClothMesh, Trajectory, grid_mesh
from .splat import Camera, FrameSet

log = logging.getLogger(__name__)


class Unstable(FloatingPointError):
    pass


@dataclass
class SimParams:
    nx: int = 16
    ny: int = 16
    width: float = 1.0
    height: float = 1.0
    plane: str = "xz"
    origin: tuple = (0.0, 0.0, 0.0)
    mass: float = 1.0
    k_struct: float = 2000.0
    k_shear: float = 2000.0
    k_bend: float = 20.0
    damping: float = 0.02           # along-spring relative-velocity damping
    drag: float = 0.2               # global velocity drag (1/s)
    gravity: tuple = (0.0, 0.0, -2.0)
    wind: tuple = (1.5, 0.0, 0.0)
    gust: tuple = (0.0, 0.8, 0.0)   # amplitude vector of the sinusoidal gust
    gust_freq: float = 0.7          # Hz
    aero: float = 0.5               # normal-pressure coefficient
    skin: float = 1.0               # isotropic (tangential) drag coefficient
    dt: float = 0.02
    substeps: int = 50
    steps: int = 100
    warmup: int = 0                 # simulated steps discarded before recording
    pin: str = "left"               # left | top | middle | none | all
    init_angle: float = 0.0         # rotation of the initial sheet about the pin line (rad)
    init_wave: float = 0.0          # amplitude of a smooth out-of-plane initial bump
    init_velocity: float = 0.0      # std of random initial node velocities
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if min(self.k_struct, self.k_shear, self.k_bend) < 0:
            raise ValueError("stiffness must be nonnegative")

    def to_dict(self):
        d = asdict(self)
        d["origin"], d["gravity"], d["wind"], d["gust"] = (list(self.origin), list(self.gravity),
                                                         list(self.wind), list(self.gust))
        return d


def pinned_nodes(nx: int, ny: int, pin: str) -> np.ndarray:
    idx = np.arange(nx * ny).reshape(ny, nx)
    if pin == "left":
        return idx[:, 0].copy()
    if pin == "top":
        return idx[-1, :].copy()
    if pin == "middle":
        return idx[:, nx // 2].copy()
    if pin == "none":
        return np.zeros(0, dtype=np.int64)
    if pin == "all":
        return idx.ravel().copy()
    raise ValueError(f"unknown pin selector {pin!r}")


def spring_sets(nx: int, ny: int):
    """(i, j) node pairs for structural, shear and bend springs of a grid."""
    idx = np.arange(nx * ny).reshape(ny, nx)
    struct = np.concatenate([np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], 1),
                             np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], 1)])
    shear = np.concatenate([np.stack([idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()], 1),
                            np.stack([idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()], 1)])
    bend = np.concatenate([np.stack([idx[:, :-2].ravel(), idx[:, 2:].ravel()], 1),
                           np.stack([idx[:-2, :].ravel(), idx[2:, :].ravel()], 1)])
    return struct, shear, bend


def _rotation_about(axis, angle):
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def initial_mesh(p: SimParams) -> ClothMesh:
    mesh = grid_mesh(p.nx, p.ny, p.width, p.height, p.plane, p.origin)
    x = mesh.world_pos.copy()
    pins = pinned_nodes(p.nx, p.ny, p.pin)
    if p.init_angle and 0 < len(pins) < len(x):
        a, b = x[pins[0]], x[pins[-1]]
        Rm = _rotation_about(b - a, p.init_angle)
        x = (x - a) @ Rm.T + a
    if p.init_wave:
        normal = np.cross(x[1] - x[0], x[p.nx] - x[0])
        normal /= np.linalg.norm(normal)
        rng = np.random.default_rng(p.seed)
        ph = rng.uniform(0, 2 * np.pi, 2)
        uv = mesh.mesh_pos
        bump = np.sin(np.pi * uv[:, 0] + ph[0]) * np.sin(np.pi * uv[:, 1] + ph[1])
        bump *= uv[:, 0] if p.pin == "left" else 1.0
        free = np.ones(len(x), bool)
        free[pins] = False
        x[free] += p.init_wave * bump[free, None] * normal
    return ClothMesh(x, mesh.mesh_pos, mesh.faces, pins)


@njit(cache=True)
def _spring_forces(x, v, si, sj, rest, k, c, f):
    for s in range(si.shape[0]):
        i = si[s]
        j = sj[s]
        d0 = x[j, 0] - x[i, 0]
        d1 = x[j, 1] - x[i, 1]
        d2 = x[j, 2] - x[i, 2]
        L = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        n0 = d0 / L
        n1 = d1 / L
        n2 = d2 / L
        rv = (v[j, 0] - v[i, 0]) * n0 + (v[j, 1] - v[i, 1]) * n1 + (v[j, 2] - v[i, 2]) * n2
        mag = k[s] * (L - rest[s]) + c[s] * rv
        f[i, 0] += mag * n0
        f[i, 1] += mag * n1
        f[i, 2] += mag * n2
        f[j, 0] -= mag * n0
        f[j, 1] -= mag * n1
        f[j, 2] -= mag * n2


def _wind_forces(x, v, faces, wind, aero, skin, f):
    a = x[faces[:, 1]] - x[faces[:, 0]]
    b = x[faces[:, 2]] - x[faces[:, 0]]
    cr = np.cross(a, b)
    area2 = np.linalg.norm(cr, axis=1, keepdims=True)
    n = cr / area2
    vf = v[faces].mean(axis=1)
    rel = wind - vf
    area = 0.5 * area2
    ff = (aero * area[:, 0] * np.sum(n * rel, 1))[:, None] * n + skin * area * rel
    ff /= 3.0
    for k in range(3):
        np.add.at(f, faces[:, k], ff)


def simulate_cloth(p: SimParams):
    """Semi-implicit Euler mass-spring sheet.  Returns (frame-0 mesh, Trajectory of p.steps frames)."""
    mesh0 = initial_mesh(p)
    K = mesh0.n_nodes
    m = p.mass / K
    rest_mesh = grid_mesh(p.nx, p.ny, p.width, p.height, p.plane, p.origin)
    st, sh_, bd = spring_sets(p.nx, p.ny)
    springs = np.concatenate([st, sh_, bd])
    k = np.concatenate([np.full(len(st), p.k_struct), np.full(len(sh_), p.k_shear),
                        np.full(len(bd), p.k_bend)])
    c = np.full(len(springs), p.damping)
    rx = rest_mesh.world_pos
    rest = np.linalg.norm(rx[springs[:, 1]] - rx[springs[:, 0]], axis=1)
    h = p.dt / p.substeps
    node_k = np.zeros(K)
    np.add.at(node_k, springs[:, 0], k)
    np.add.at(node_k, springs[:, 1], k)
    if h * h * node_k.max() / m >= 1.0:
        raise Unstable(f"substep {h:g}s violates dt^2 k / m < 1 ({h * h * node_k.max() / m:.3g})")

    x = mesh0.world_pos.copy()
    rng = np.random.default_rng(p.seed + 7919)
    v = rng.normal(0, p.init_velocity, x.shape) if p.init_velocity else np.zeros_like(x)
    pins = mesh0.pinned
    pin_pos = x[pins].copy()
    v[pins] = 0.0
    g = np.asarray(p.gravity, float)
    wind0 = np.asarray(p.wind, float)
    gust = np.asarray(p.gust, float)
    si, sj = springs[:, 0].copy(), springs[:, 1].copy()
    vmax = 1e3 * max(p.width, p.height) / p.dt
    has_wind = bool(np.any(wind0) or np.any(gust)) and (p.aero > 0 or p.skin > 0)
    frames = []
    total = p.warmup + p.steps
    for step in range(total):
        if step >= p.warmup:
            frames.append(x.copy())
        if step == total - 1:
            break
        for sub in range(p.substeps):
            t = (step * p.substeps + sub) * h
            f = np.zeros_like(x)
            _spring_forces(x, v, si, sj, rest, k, c, f)
            f += m * g
            if p.drag:
                f -= p.drag * m * v
            if has_wind:
                wind = wind0 + gust * np.sin(2 * np.pi * p.gust_freq * t)
                _wind_forces(x, v, mesh0.faces, wind, p.aero, p.skin, f)
            v += h * f / m
            v[pins] = 0.0
            x += h * v
            x[pins] = pin_pos
        if not np.all(np.isfinite(v)) or np.abs(v).max() > vmax:
            raise Unstable(f"velocity blow-up at step {step}")
    traj = Trajectory(np.array(frames), p.dt, mesh0.faces)
    mesh_first = mesh0.with_positions(traj.node_pos[0]) if len(traj) else mesh0
    return mesh_first, traj


def total_momentum(p: SimParams, steps: int | None = None):
    """Momentum per recorded frame (finite differences of positions times mass)."""
    _, traj = simulate_cloth(p)
    m = p.mass / (p.nx * p.ny)
    return m * np.diff(traj.node_pos, axis=0).sum(axis=1) / p.dt


# ---------------------------------------------------------------------------
# cameras

def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera matrix (x right, y down, z forward)."""
    eye = np.asarray(eye, float)
    fwd = np.asarray(target, float) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-12:
        right = np.cross(fwd, (0.0, 1.0, 0.0))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    Rm = np.stack([right, down, fwd])
    M = np.eye(4)
    M[:3, :3] = Rm
    M[:3, 3] = -Rm @ eye
    return M


def make_camera_ring(n: int, radius: float, center=(0.0, 0.0, 0.0), height: float = 0.0,
                     resolution=(64, 64), fov_deg: float = 45.0, phase: float = 0.0) -> list:
    """n cameras evenly spaced on a horizontal circle, all looking at ``center``."""
    W, H = (resolution, resolution) if np.isscalar(resolution) else resolution
    f = 0.5 * W / np.tan(np.radians(fov_deg) / 2)
    center = np.asarray(center, float)
    cams = []
    for i in range(n):
        th = phase + 2 * np.pi * i / n
        eye = center + np.array([radius * np.cos(th), radius * np.sin(th), height])
        cams.append(Camera(f, f, W / 2.0, H / 2.0, W, H, look_at(eye, center), i))
    return cams


# ---------------------------------------------------------------------------
# independent ground-truth rasterizer

@njit(cache=True)
def _raster_tris(sx, sy, sz, faces, Ws, Hs, depth, fid, b0, b1, b2):
    """Z-buffered coverage at sample centers with perspective-correct barycentrics."""
    for f in range(faces.shape[0]):
        i0 = faces[f, 0]
        i1 = faces[f, 1]
        i2 = faces[f, 2]
        z0 = sz[i0]
        z1 = sz[i1]
        z2 = sz[i2]
        if z0 <= 1e-6 or z1 <= 1e-6 or z2 <= 1e-6:
            continue
        x0 = sx[i0]
        y0 = sy[i0]
        x1 = sx[i1]
        y1 = sy[i1]
        x2 = sx[i2]
        y2 = sy[i2]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        lo_x = max(int(np.floor(min(x0, min(x1, x2)))), 0)
        hi_x = min(int(np.ceil(max(x0, max(x1, x2)))), Ws - 1)
        lo_y = max(int(np.floor(min(y0, min(y1, y2)))), 0)
        hi_y = min(int(np.ceil(max(y0, max(y1, y2)))), Hs - 1)
        for py in range(lo_y, hi_y + 1):
            cy = py + 0.5
            for px in range(lo_x, hi_x + 1):
                cx = px + 0.5
                w0 = ((x1 - cx) * (y2 - cy) - (x2 - cx) * (y1 - cy)) / area
                w1 = ((x2 - cx) * (y0 - cy) - (x0 - cx) * (y2 - cy)) / area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                q0 = w0 / z0
                q1 = w1 / z1
                q2 = w2 / z2
                qs = q0 + q1 + q2
                z = 1.0 / qs
                if z < depth[py, px]:
                    depth[py, px] = z
                    fid[py, px] = f
                    b0[py, px] = q0 / qs
                    b1[py, px] = q1 / qs
                    b2[py, px] = q2 / qs


def rasterize_buffers(world_pos, faces, cam: Camera, supersample: int = 1):
    """Sample-resolution buffers: depth (inf where empty), face id (-1), perspective-correct
    barycentrics (Hs, Ws, 3)."""
    ss = int(supersample)
    Ws, Hs = cam.width * ss, cam.height * ss
    t = world_pos @ cam.rotation.T + cam.translation
    z = t[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (cam.fx * t[:, 0] / z + cam.cx) * ss
        sy = (cam.fy * t[:, 1] / z + cam.cy) * ss
    depth = np.full((Hs, Ws), np.inf)
    fid = np.full((Hs, Ws), -1, np.int64)
    b = [np.zeros((Hs, Ws)) for _ in range(3)]
    _raster_tris(sx, sy, z, np.asarray(faces, np.int64), Ws, Hs, depth, fid, *b)
    return depth, fid, np.stack(b, -1)


def sample_texture(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear lookup; u runs along texture columns, v along rows; edge-clamped."""
    th, tw = texture.shape[:2]
    x = np.clip(uv[..., 0] * tw - 0.5, 0, tw - 1)
    y = np.clip(uv[..., 1] * th - 0.5, 0, th - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, tw - 1)
    y1 = np.minimum(y0 + 1, th - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = texture[y0, x0] * (1 - fx) + texture[y0, x1] * fx
    bot = texture[y1, x0] * (1 - fx) + texture[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def render_mesh_gt(world_pos, mesh: ClothMesh, cam: Camera, texture: np.ndarray,
                   light=None, supersample: int = 3, background=(0.0, 0.0, 0.0),
                   ambient: float = 0.3) -> np.ndarray:
    ss = int(supersample)
    depth, fid, bary = rasterize_buffers(world_pos, mesh.faces, cam, ss)
    hit = fid >= 0
    out = np.empty(fid.shape + (3,))
    out[:] = np.asarray(background, float)
    if np.any(hit):
        tri = mesh.faces[fid[hit]]
        uv = np.einsum("nk,nkd->nd", bary[hit], mesh.mesh_pos[tri])
        col = sample_texture(texture, uv)
        if light is not None:
            ldir = np.asarray(light, float)
            ldir = ldir / np.linalg.norm(ldir)
            v = world_pos[mesh.faces]
            fn = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
            fn /= np.linalg.norm(fn, axis=1, keepdims=True)
            shade = ambient + (1 - ambient) * np.abs(fn @ ldir)
            col = col * shade[fid[hit]][:, None]
        out[hit] = col
    H, W = cam.height, cam.width
    return out.reshape(H, ss, W, ss, 3).mean(axis=(1, 3))


def render_ground_truth(traj: Trajectory, mesh: ClothMesh, cams, texture: np.ndarray,
                        light=None, supersample: int = 3, background=(0.0, 0.0, 0.0)) -> list:
    if texture is None or np.size(texture) == 0:
        raise ValueError("texture must be non-empty")
    texture = np.asarray(texture, dtype=np.float64)
    frames = []
    for t in range(len(traj)):
        imgs = [render_mesh_gt(traj.node_pos[t], mesh, cam, texture, light, supersample,
                               background) for cam in cams]
        frames.append(FrameSet(imgs, [c.id for c in cams], t))
    return frames


def checkerboard(size: int = 128, squares: int = 4, c0=(0.85, 0.35, 0.2),
                 c1=(0.15, 0.45, 0.8)) -> np.ndarray:
    idx = (np.arange(size) * squares // size)
    board = (idx[:, None] + idx[None, :]) % 2
    return np.where(board[..., None] == 0, np.asarray(c0, float), np.asarray(c1, float))


def occlusion_fraction(world_pos, mesh: ClothMesh, cams, supersample: int = 2) -> float:
    """Share of the cloth's projected area hidden by other parts of the cloth, averaged
    over views: 1 - (z-buffer visible samples) / (sum of per-face footprints)."""
    fracs = []
    for cam in cams:
        _, fid, _ = rasterize_buffers(world_pos, mesh.faces, cam, supersample)
        visible = np.bincount(fid[fid >= 0], minlength=mesh.n_faces)
        alone = np.zeros(mesh.n_faces)
        for f in range(mesh.n_faces):
            _, fid1, _ = rasterize_buffers(world_pos, mesh.faces[f:f + 1], cam, supersample)
            alone[f] = np.count_nonzero(fid1 >= 0)
        tot = alone.sum()
        if tot > 0:
            fracs.append(1.0 - visible.sum() / tot)
    return float(np.mean(fracs)) if fracs else 0.0


def flag_family(n: int, steps: int, seed: int = 0, base: SimParams | None = None) -> list:
    """``n`` varied flag set-ups sharing mesh topology and pins: the sheet starts swung
    about the pole by a random angle with a random out-of-plane bump, under a steady
    wind of random strength.  No gust, so the motion is a function of state alone."""
    base = base or SimParams(gust=(0.0, 0.0, 0.0))
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        angle, wave, ws = rng.uniform(-0.8, 0.8), rng.uniform(-0.15, 0.15), rng.uniform(0.6, 1.4)
        out.append(replace(base, steps=steps, seed=seed * 1000 + i, init_angle=float(angle), gust=(0.0, 0.0, 0.0),
                           init_wave=float(wave), wind=tuple(float(ws) * np.asarray(base.wind))))
    return out


# ---------------------------------------------------------------------------
# dataset on disk

@dataclass
class CameraParams:
    n_views: int = 8
    radius: float = 2.6
    height: float = 0.6
    resolution: int = 64
    fov_deg: float = 45.0
    center: tuple = None
    supersample: int = 3
    light: tuple = None


def default_center(mesh: ClothMesh) -> np.ndarray:
    lo, hi = mesh.world_pos.min(0), mesh.world_pos.max(0)
    return 0.5 * (lo + hi)


def dataset_build(sims, cam_params: CameraParams, texture_path, out_dir, seed: int = 0) -> dict:
    """Simulate, render and write a dataset; returns the manifest dict (also written)."""
    from . import io

    sims = [sims] if isinstance(sims, SimParams) else list(sims)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    texture = checkerboard() if texture_path is None else io.read_png(texture_path)
    io.write_png(out / "texture.png", texture)
    texture = io.read_png(out / "texture.png")

    results = [simulate_cloth(p) for p in sims]
    mesh0 = results[0][0]
    center = np.asarray(cam_params.center if cam_params.center is not None else
                        [0.5 * sims[0].width, 0.0, 0.5 * sims[0].height], float)
    cams = make_camera_ring(cam_params.n_views, cam_params.radius, center, cam_params.height,
                            cam_params.resolution, cam_params.fov_deg)
    io.write_obj(out / "mesh.obj", mesh0)
    io.write_pinned(out / "mesh_pinned.json", mesh0.pinned)
    io.write_cameras(out / "cameras.json", cams)
    manifest = {
        "version": 1,
        "seed": int(seed),
        "mesh": "mesh.obj",
        "pinned": "mesh_pinned.json",
        "cameras": "cameras.json",
        "texture": "texture.png",
        "camera_params": {k: (list(v) if isinstance(v, tuple) else v)
                          for k, v in asdict(cam_params).items()},
        "trajectories": [],
        "stages": {},
    }
    for n, (p, (mesh_t, traj)) in enumerate(zip(sims, results)):
        name = f"traj{n:03d}"
        tdir = out / name
        io.write_trajectory(tdir / "trajectory.ctrj", traj)
        frames = render_ground_truth(traj, mesh_t, cams, texture, cam_params.light,
                                     cam_params.supersample)
        for fs in frames:
            for cid, img in zip(fs.camera_ids, fs.images):
                io.write_pfm(tdir / "frames" / f"view{cid}" / f"t{fs.timestep}.pfm", img)
                io.write_png(tdir / "frames" / f"view{cid}" / f"t{fs.timestep}.png", img)
        manifest["trajectories"].append({"name": name, "trajectory": f"{name}/trajectory.ctrj",
                                         "frames": f"{name}/frames", "steps": len(traj),
                                         "sim": p.to_dict()})
        log.info("stage=synth step=%d loss=nan", n)
    manifest["stages"]["synth"] = {"done": True}
    io.write_manifest(out / "manifest.json", manifest)
    return manifest
