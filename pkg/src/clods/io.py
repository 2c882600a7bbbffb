"""On-disk formats.

Binary layouts (all little-endian):

* Trajectory ``.ctrj``: ``b"CTRJ"``, u32 version (1), u32 T, u32 K, then T*K*3 float64.
* Splat checkpoint ``.smgs``: ``b"SMGS"``, u32 version (1), u32 N (components),
  u32 F (faces of the anchoring mesh), u32 sh_degree, u32 n_freq, u32 hidden width,
  u32 use_world, u32 use_mesh, float64 epsilon, float64 world_scale, float64[3] world_center,
  then arrays in this order: face_id (N int64), beta (N*3 float64),
  color_coeffs (N*3*(deg+1)^2 float64), scale_mult (N float64),
  opacity-net parameters W1, b1, W2, b2, W3, b3 (float64, row-major).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import ClothMesh, Trajectory


def _mkparent(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# meshes

def write_obj(path, mesh: ClothMesh) -> None:
    path = _mkparent(path)
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.world_pos.tolist()]
    lines += [f"vt {u!r} {v!r}" for u, v in mesh.mesh_pos.tolist()]
    lines += [f"f {a + 1}/{a + 1} {b + 1}/{b + 1} {c + 1}/{c + 1}" for a, b, c in mesh.faces.tolist()]
    path.write_text("\n".join(lines) + "\n")


def read_obj(path, pinned=None) -> ClothMesh:
    v, vt, faces = [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            v.append([float(t) for t in parts[1:4]])
        elif parts[0] == "vt":
            vt.append([float(t) for t in parts[1:3]])
        elif parts[0] == "f":
            if len(parts) != 4:
                raise ValueError("only triangle faces are supported")
            idx = []
            for tok in parts[1:]:
                fields = tok.split("/")
                a = int(fields[0]) - 1
                if len(fields) > 1 and fields[1] and int(fields[1]) - 1 != a:
                    raise ValueError("position and UV indices must coincide")
                idx.append(a)
            faces.append(idx)
    if len(vt) != len(v):
        raise ValueError("expected one vt per v")
    if pinned is None:
        side = Path(str(path)[:-4] + "_pinned.json") if str(path).endswith(".obj") else None
        pinned = read_pinned(side) if side is not None and side.exists() else []
    return ClothMesh(np.array(v), np.array(vt), np.array(faces, dtype=np.int64), pinned)


def write_pinned(path, pinned) -> None:
    _mkparent(path).write_text(json.dumps({"pinned": [int(i) for i in pinned]}))


def read_pinned(path) -> np.ndarray:
    return np.asarray(json.loads(Path(path).read_text())["pinned"], dtype=np.int64)


# ---------------------------------------------------------------------------
# cameras

def write_cameras(path, cams) -> None:
    _mkparent(path).write_text(json.dumps([c.to_dict() for c in cams], indent=1))


def read_cameras(path) -> list:
    from .splat import Camera
    return [Camera.from_dict(d) for d in json.loads(Path(path).read_text())]


# ---------------------------------------------------------------------------
# images

def write_pfm(path, img) -> None:
    """32-bit float PFM, little-endian (negative scale), rows stored bottom to top."""
    img = np.asarray(img, dtype="<f4")
    H, W = img.shape[:2]
    header = ("PF" if img.ndim == 3 else "Pf") + f"\n{W} {H}\n-1.0\n"
    with open(_mkparent(path), "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        W, H = (int(t) for t in fh.readline().split())
        scale = float(fh.readline().strip())
        ch = 3 if kind == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype, count=W * H * ch)
    img = data.reshape((H, W, ch) if ch == 3 else (H, W))[::-1]
    return img.astype(np.float64)


def linear_to_srgb(x):
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def srgb_to_linear(x):
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def write_png(path, img, srgb: bool = True) -> None:
    """8-bit PNG for inspection; linear values are sRGB-encoded."""
    img = np.asarray(img, dtype=np.float64)
    v = linear_to_srgb(img) if srgb else np.clip(img, 0, 1)
    Image.fromarray(np.round(v * 255).astype(np.uint8)).save(_mkparent(path))


def read_png(path, srgb: bool = True) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return srgb_to_linear(arr) if srgb else arr


# ---------------------------------------------------------------------------
# trajectories

CTRJ_VERSION = 1


def write_trajectory(path, traj: Trajectory) -> None:
    x = np.asarray(traj.node_pos, dtype="<f8")
    T, K = (x.shape[0], x.shape[1]) if x.size else (0, 0)
    with open(_mkparent(path), "wb") as fh:
        fh.write(b"CTRJ" + struct.pack("<III", CTRJ_VERSION, T, K))
        fh.write(x.tobytes())


def read_trajectory(path, dt: float = 0.02) -> Trajectory:
    raw = Path(path).read_bytes()
    if raw[:4] != b"CTRJ":
        raise ValueError(f"{path}: not a CTRJ file")
    version, T, K = struct.unpack("<III", raw[4:16])
    if version != CTRJ_VERSION:
        raise ValueError(f"unsupported CTRJ version {version}")
    x = np.frombuffer(raw[16:], dtype="<f8", count=T * K * 3).reshape(T, K, 3)
    return Trajectory(x.astype(np.float64), dt)


# ---------------------------------------------------------------------------
# splat checkpoint

SMGS_VERSION = 1


def save_splat(path, gcloth, net, n_faces: int) -> None:
    hidden = net.params[0].shape[1]
    with open(_mkparent(path), "wb") as fh:
        fh.write(b"SMGS")
        fh.write(struct.pack("<8I", SMGS_VERSION, len(gcloth), n_faces, gcloth.sh_degree,
                             net.n_freq, hidden, int(net.input_mask[0]), int(net.input_mask[1])))
        fh.write(struct.pack("<5d", gcloth.epsilon, net.world_scale, *net.world_center))
        fh.write(np.asarray(gcloth.face_id, "<i8").tobytes())
        for arr in (gcloth.beta, gcloth.color_coeffs, gcloth.scale_mult, *net.params):
            fh.write(np.asarray(arr, "<f8").tobytes())


def load_splat(path):
    """Returns (GaussianCloth, OpacityNet, n_faces)."""
    from . import sh
    from .splat import GaussianCloth, OpacityNet

    raw = Path(path).read_bytes()
    if raw[:4] != b"SMGS":
        raise ValueError(f"{path}: not an SMGS checkpoint")
    version, N, F, deg, n_freq, hidden, uw, um = struct.unpack("<8I", raw[4:36])
    if version != SMGS_VERSION:
        raise ValueError(f"unsupported SMGS version {version}")
    eps, wscale, cx, cy, cz = struct.unpack("<5d", raw[36:76])
    off = 76

    def take(count, dtype="<f8"):
        nonlocal off
        a = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
        off += a.nbytes
        return a.astype(np.int64 if dtype == "<i8" else np.float64)

    face_id = take(N, "<i8")
    beta = take(N * 3).reshape(N, 3)
    nb = sh.n_basis(deg)
    coeffs = take(N * 3 * nb).reshape(N, 3 * nb)
    scale_mult = take(N)
    d_in = 5 * (1 + 2 * n_freq)
    shapes = [(d_in, hidden), (hidden,), (hidden, hidden), (hidden,), (hidden, 1), (1,)]
    params = [take(int(np.prod(s))).reshape(s) for s in shapes]
    gc = GaussianCloth(face_id, beta, coeffs, scale_mult, eps, deg)
    net = OpacityNet(params, (cx, cy, cz), wscale, n_freq, (bool(uw), bool(um)))
    return gc, net, F


# ---------------------------------------------------------------------------
# manifest

def write_manifest(path, manifest: dict) -> None:
    _mkparent(path).write_text(json.dumps(manifest, indent=1, sort_keys=True))


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def frame_path(root, frames_dir, view_id, step, ext="pfm") -> Path:
    return Path(root) / frames_dir / f"view{view_id}" / f"t{step}.{ext}"


def load_frames(root, frames_dir, cam_ids, steps) -> list:
    from .splat import FrameSet
    out = []
    for t in steps:
        imgs = [read_pfm(frame_path(root, frames_dir, c, t)) for c in cam_ids]
        out.append(FrameSet(imgs, list(cam_ids), t))
    return out
