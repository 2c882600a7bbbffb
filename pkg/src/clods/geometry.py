"""Cloth mesh data model, per-face orthonormal frames and barycentric helpers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEGENERATE_REL_AREA = 1e-12


class DegenerateFace(ValueError):
    pass


class InvalidBarycentric(ValueError):
    pass


def unique_edges(faces: np.ndarray) -> np.ndarray:
    """Undirected edges of a triangle list, min-index first, lexicographically sorted."""
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


@dataclass
class ClothMesh:
    world_pos: np.ndarray
    mesh_pos: np.ndarray
    faces: np.ndarray
    pinned: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    edges: np.ndarray = None

    def __post_init__(self):
        self.world_pos = np.asarray(self.world_pos, dtype=np.float64)
        self.mesh_pos = np.asarray(self.mesh_pos, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.pinned = np.unique(np.asarray(self.pinned, dtype=np.int64))
        if self.edges is None:
            self.edges = unique_edges(self.faces)
        else:
            self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)

    @property
    def n_nodes(self) -> int:
        return len(self.world_pos)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_positions(self, world_pos) -> "ClothMesh":
        """Same topology and UVs, new world positions."""
        return ClothMesh(np.array(world_pos, dtype=np.float64), self.mesh_pos, self.faces,
                         self.pinned, self.edges)

    def free_mask(self) -> np.ndarray:
        m = np.ones(self.n_nodes, dtype=bool)
        m[self.pinned] = False
        return m

    def diagonal(self) -> float:
        """Bounding-box diagonal of the current world positions."""
        return float(np.linalg.norm(self.world_pos.max(0) - self.world_pos.min(0)))

    def mean_edge_length(self) -> float:
        return float(edge_lengths(self).mean())


def grid_mesh(nx: int, ny: int, width: float = 1.0, height: float = 1.0,
              plane: str = "xz", origin=(0.0, 0.0, 0.0)) -> ClothMesh:
    """Regular triangulated grid with nx columns and ny rows of nodes.

    Node (i, j) (column i, row j) has UV (i/(nx-1), j/(ny-1)).  ``plane`` picks the
    world axes spanned by (u, v): "xz" gives a vertical sheet, "xy" a horizontal one.
    """
    if nx < 2 or ny < 2:
        raise ValueError("grid needs at least 2x2 nodes")
    u, v = np.meshgrid(np.linspace(0, 1, nx), np.linspace(0, 1, ny))
    uv = np.stack([u.ravel(), v.ravel()], axis=1)
    axes = {"xz": (0, 2), "xy": (0, 1), "yz": (1, 2)}[plane]
    pos = np.zeros((nx * ny, 3)) + np.asarray(origin, dtype=np.float64)
    pos[:, axes[0]] += uv[:, 0] * width
    pos[:, axes[1]] += uv[:, 1] * height
    idx = np.arange(nx * ny).reshape(ny, nx)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, :-1].ravel()
    d = idx[1:, 1:].ravel()
    faces = np.concatenate([np.stack([a, b, d], 1), np.stack([a, d, c], 1)])
    return ClothMesh(pos, uv, faces)


# ---------------------------------------------------------------------------
# face frames

@dataclass
class FaceFrame:
    rotation: np.ndarray
    scales: np.ndarray


def _norm(v):
    return np.sqrt(np.sum(v * v, axis=-1, keepdims=True))


def triangle_areas(verts: np.ndarray) -> np.ndarray:
    """verts: (..., 3, 3) with vertex index on axis -2."""
    e1 = verts[..., 1, :] - verts[..., 0, :]
    e2 = verts[..., 2, :] - verts[..., 0, :]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=-1)


def _degenerate(verts, ref_len2=None):
    area = triangle_areas(verts)
    if ref_len2 is None:
        lens = np.stack([
            np.linalg.norm(verts[..., 1, :] - verts[..., 0, :], axis=-1),
            np.linalg.norm(verts[..., 2, :] - verts[..., 1, :], axis=-1),
            np.linalg.norm(verts[..., 0, :] - verts[..., 2, :], axis=-1)], -1)
        ref_len2 = lens.mean(-1) ** 2
    return ~(area > DEGENERATE_REL_AREA * ref_len2)


@dataclass
class FrameCache:
    """Intermediates of a vectorized face-frame evaluation, kept for the backward pass."""
    e1: np.ndarray
    e2: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    n_len: np.ndarray
    e1_len: np.ndarray
    u_len: np.ndarray
    proj: np.ndarray


def face_frames(verts: np.ndarray, epsilon: float, check: bool = True):
    """Vectorized face frames.

    verts: (F, 3, 3) triangle vertices.  Returns rotations (F, 3, 3) with columns
    (normal, first-edge direction, in-plane complement), scales (F, 3) and a cache
    for :func:`face_frames_backward`.
    """
    verts = np.asarray(verts, dtype=np.float64)
    if check:
        bad = _degenerate(verts)
        if np.any(bad):
            raise DegenerateFace(f"degenerate faces: {np.flatnonzero(bad)[:10].tolist()}")
    e1 = verts[:, 1] - verts[:, 0]
    e2 = verts[:, 2] - verts[:, 0]
    n = np.cross(e1, e2)
    n_len = _norm(n)
    r1 = n / n_len
    e1_len = _norm(e1)
    r2 = e1 / e1_len
    proj = np.sum(e2 * r2, -1, keepdims=True)
    u = e2 - proj * r2
    u_len = _norm(u)
    r3 = u / u_len
    R = np.stack([r1, r2, r3], axis=-1)
    S = np.empty((len(verts), 3))
    S[:, 0] = epsilon
    S[:, 1] = e1_len[:, 0]
    S[:, 2] = np.sum(e2 * r3, -1)
    return R, S, FrameCache(e1, e2, r1, r2, r3, n_len, e1_len, u_len, proj)


def face_frames_backward(cache: FrameCache, dR: np.ndarray, dS: np.ndarray) -> np.ndarray:
    """Pull gradients on (R, S) back to the three vertices of each face -> (F, 3, 3)."""
    c = cache
    g_r1, g_r2, g_r3 = dR[:, :, 0], dR[:, :, 1].copy(), dR[:, :, 2].copy()
    g_s2, g_s3 = dS[:, 1:2], dS[:, 2:3]

    # s3 = <e2, r3>
    g_e2 = g_s3 * c.r3
    g_r3 = g_r3 + g_s3 * c.e2
    # r3 = u / |u|
    g_u = (g_r3 - c.r3 * np.sum(c.r3 * g_r3, -1, keepdims=True)) / c.u_len
    # u = e2 - <e2, r2> r2
    r2_gu = np.sum(c.r2 * g_u, -1, keepdims=True)
    g_e2 += g_u - c.r2 * r2_gu
    g_r2 = g_r2 - (c.proj * g_u + r2_gu * c.e2)
    # r2 = e1 / |e1|, s2 = |e1|
    g_e1 = (g_r2 - c.r2 * np.sum(c.r2 * g_r2, -1, keepdims=True)) / c.e1_len + g_s2 * c.r2
    # r1 = n / |n|, n = e1 x e2
    g_n = (g_r1 - c.r1 * np.sum(c.r1 * g_r1, -1, keepdims=True)) / c.n_len
    g_e1 += np.cross(c.e2, g_n)
    g_e2 += np.cross(g_n, c.e1)

    out = np.empty((len(g_e1), 3, 3))
    out[:, 0] = -g_e1 - g_e2
    out[:, 1] = g_e1
    out[:, 2] = g_e2
    return out


def face_frame(v1, v2, v3, epsilon: float) -> FaceFrame:
    verts = np.asarray([v1, v2, v3], dtype=np.float64)[None]
    R, S, _ = face_frames(verts, epsilon)
    return FaceFrame(R[0], S[0])


# ---------------------------------------------------------------------------
# barycentric helpers

def check_simplex(beta, tol: float = 1e-9) -> None:
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(np.abs(beta.sum(-1) - 1.0) > tol) or np.any(beta < -tol):
        raise InvalidBarycentric("barycentric weights must be nonnegative and sum to 1")


def barycentric_point(face_verts, beta) -> np.ndarray:
    """beta-weighted combination of the three rows of face_verts (broadcasts over leading axes)."""
    check_simplex(beta)
    face_verts = np.asarray(face_verts, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    return np.einsum("...k,...kd->...d", beta, face_verts)


def recover_barycentric(face_verts, point) -> np.ndarray:
    """Inverse of barycentric_point for a point in the face plane (least squares in-plane)."""
    v = np.asarray(face_verts, dtype=np.float64)
    p = np.asarray(point, dtype=np.float64)
    A = np.stack([v[1] - v[0], v[2] - v[0]], axis=1)
    sol, *_ = np.linalg.lstsq(A, p - v[0], rcond=None)
    return np.array([1.0 - sol.sum(), sol[0], sol[1]])


def sample_simplex(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform samples on the 2-simplex (flat Dirichlet)."""
    return rng.dirichlet(np.ones(3), size=n)


# ---------------------------------------------------------------------------

def edge_lengths(mesh: ClothMesh, world_pos=None) -> np.ndarray:
    x = mesh.world_pos if world_pos is None else np.asarray(world_pos)
    d = x[mesh.edges[:, 0]] - x[mesh.edges[:, 1]]
    return np.sqrt(np.sum(d * d, axis=-1))


def validate_mesh(mesh: ClothMesh) -> list[str]:
    """Human-readable invariant violations; empty when the mesh is well formed."""
    report = []
    K = len(mesh.world_pos)
    if mesh.world_pos.shape != (K, 3):
        report.append(f"world_pos has shape {mesh.world_pos.shape}, expected ({K}, 3)")
    if mesh.mesh_pos.shape != (K, 2):
        report.append(f"mesh_pos has shape {mesh.mesh_pos.shape}, expected ({K}, 2)")
    bad_f = np.flatnonzero(np.any((mesh.faces < 0) | (mesh.faces >= K), axis=1))
    for f in bad_f:
        report.append(f"index: face {f} references node outside [0, {K}): {mesh.faces[f].tolist()}")
    bad_e = np.flatnonzero(np.any((mesh.edges < 0) | (mesh.edges >= K), axis=1))
    for e in bad_e:
        report.append(f"index: edge {e} references node outside [0, {K}): {mesh.edges[e].tolist()}")
    bad_p = mesh.pinned[(mesh.pinned < 0) | (mesh.pinned >= K)]
    if len(bad_p):
        report.append(f"index: pinned nodes outside [0, {K}): {bad_p.tolist()}")
    ok_faces = np.setdiff1d(np.arange(len(mesh.faces)), bad_f)
    if len(ok_faces) and len(bad_e) == 0 and len(mesh.edges):
        mean_edge = edge_lengths(mesh).mean()
        verts = mesh.world_pos[mesh.faces[ok_faces]]
        degen = _degenerate(verts, ref_len2=mean_edge ** 2)
        for f in ok_faces[degen]:
            report.append(f"degenerate: face {f} has area below threshold")
    elif len(ok_faces):
        verts = mesh.world_pos[mesh.faces[ok_faces]]
        for f in ok_faces[_degenerate(verts)]:
            report.append(f"degenerate: face {f} has area below threshold")
    if len(bad_f) == 0:
        expected = unique_edges(mesh.faces)
        if expected.shape != mesh.edges.shape or not np.array_equal(expected, mesh.edges):
            report.append("edges: edge list differs from the unique undirected edges of faces")
    return report


@dataclass
class Trajectory:
    """Node positions over time for a fixed topology."""
    node_pos: np.ndarray
    dt: float = 0.02
    faces: np.ndarray = None

    def __post_init__(self):
        self.node_pos = np.asarray(self.node_pos, dtype=np.float64)
        if self.node_pos.ndim != 3 or self.node_pos.shape[-1] != 3:
            if self.node_pos.size == 0:
                self.node_pos = self.node_pos.reshape(0, 0, 3)
            else:
                raise ValueError(f"node_pos must be (T, K, 3), got {self.node_pos.shape}")

    def __len__(self):
        return len(self.node_pos)

    def __getitem__(self, t):
        return self.node_pos[t]
