"""Graph-network cloth dynamics: encode, process with residual message passing, decode
an acceleration, integrate with a second-order step, roll out recursively."""
from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .geometry import ClothMesh, Trajectory
from .losses import ShapeMismatch, per_step_rmse

log = logging.getLogger(__name__)
DTYPE = torch.float64          # positions, features, statistics
NET_DTYPE = torch.float32      # network weights and activations

NODE_DIM = 5   # pinned/free one-hot + velocity
EDGE_DIM = 7   # world displacement + norm, mesh-space displacement + norm


class NumericBlowup(FloatingPointError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass
class GnnConfig:
    width: int = 128
    blocks: int = 8
    epochs: int = 1000
    rollout_T: int = 8
    lr: float = 1e-3
    lr_final: float = 1e-5
    noise_scale: float = 0.3
    windows_per_traj: int = 1
    seed: int = 0
    backbone: str = "mgn"
    holdout_every: int = 0

    def __post_init__(self):
        if self.width < 1 or self.blocks < 0 or self.epochs < 0 or self.rollout_T < 1:
            raise ValueError("invalid GNN configuration")


# ---------------------------------------------------------------------------
# graph features

@dataclass
class MeshGraph:
    node_features: np.ndarray    # K x 5
    edge_features: np.ndarray    # 2E x 7
    senders: np.ndarray          # 2E
    receivers: np.ndarray        # 2E

    def __post_init__(self):
        if len(self.senders) != len(self.edge_features):
            raise ShapeMismatch("edge arrays disagree")


def directed_edges(mesh: ClothMesh):
    e = mesh.edges
    return np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]])


def build_graph(x_prev, x_now, mesh: ClothMesh) -> MeshGraph:
    """Raw (unnormalized) graph features; normalization happens inside the model."""
    x_prev = np.asarray(x_prev, dtype=np.float64)
    x_now = np.asarray(x_now, dtype=np.float64)
    if x_prev.shape != (mesh.n_nodes, 3) or x_now.shape != (mesh.n_nodes, 3):
        raise ShapeMismatch(f"positions {x_prev.shape}/{x_now.shape} vs {mesh.n_nodes} nodes")
    snd, rcv = directed_edges(mesh)
    pinned = np.zeros(mesh.n_nodes)
    pinned[mesh.pinned] = 1.0
    nodes = np.column_stack([pinned, 1.0 - pinned, x_now - x_prev])
    dw = x_now[snd] - x_now[rcv]
    dm = mesh.mesh_pos[snd] - mesh.mesh_pos[rcv]
    edges = np.column_stack([dw, np.linalg.norm(dw, axis=1), dm, np.linalg.norm(dm, axis=1)])
    return MeshGraph(nodes, edges, snd, rcv)


# ---------------------------------------------------------------------------
# model

def _mlp(d_in, width, d_out, norm=True):
    layers = [nn.Linear(d_in, width), nn.ReLU(), nn.Linear(width, width), nn.ReLU(),
              nn.Linear(width, d_out)]
    if norm:
        layers.append(nn.LayerNorm(d_out))
    return nn.Sequential(*layers)


class Normalizer(nn.Module):
    """Feature-wise standardizer with statistics fixed once by :meth:`fit`."""

    def __init__(self, dim):
        super().__init__()
        self.register_buffer("mean", torch.zeros(dim, dtype=DTYPE))
        self.register_buffer("std", torch.ones(dim, dtype=DTYPE))

    def fit(self, x: torch.Tensor, skip=(), degenerate=1.0):
        """``degenerate`` replaces the std of (near-)constant columns."""
        m, s = x.mean(0), x.std(0, unbiased=False)
        s = torch.where(s > 1e-8, s, torch.full_like(s, degenerate))
        for i in skip:           # categorical columns stay as-is
            m[i], s[i] = 0.0, 1.0
        self.mean.copy_(m)
        self.std.copy_(s)

    def forward(self, x):
        return (x - self.mean) / self.std

    def inverse(self, y):
        return y * self.std + self.mean


class Block(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.edge = _mlp(3 * width, width, width)
        self.node = _mlp(2 * width, width, width)

    def forward(self, h, e, snd, rcv):
        e_new = e + self.edge(torch.cat([e, h[snd], h[rcv]], dim=1))
        agg = torch.zeros_like(h).index_add_(0, rcv, e_new)
        h_new = h + self.node(torch.cat([h, agg], dim=1))
        return h_new, e_new


class MeshGNN(nn.Module):
    """Encode-process-decode network predicting normalized per-node accelerations."""

    def __init__(self, width=128, blocks=8):
        super().__init__()
        self.width, self.n_blocks = width, blocks
        self.node_norm = Normalizer(NODE_DIM)
        self.edge_norm = Normalizer(EDGE_DIM)
        self.accel_norm = Normalizer(3)
        self.node_enc = _mlp(NODE_DIM, width, width)
        self.edge_enc = _mlp(EDGE_DIM, width, width)
        self.blocks = nn.ModuleList(Block(width) for _ in range(blocks))
        self.decoder = _mlp(width, width, 3, norm=False)

    def zero_decoder(self):
        with torch.no_grad():
            self.decoder[-1].weight.zero_()
            self.decoder[-1].bias.zero_()
        return self

    def forward(self, nodes, edges, snd, rcv):
        h = self.node_enc(self.node_norm(nodes).to(NET_DTYPE))
        e = self.edge_enc(self.edge_norm(edges).to(NET_DTYPE))
        for blk in self.blocks:
            h, e = blk(h, e, snd, rcv)
        return self.decoder(h).to(DTYPE)


BACKBONES = {"mgn": MeshGNN}


@dataclass
class GnnParams:
    model: MeshGNN
    config: GnnConfig = field(default_factory=GnnConfig)

    def state(self):
        return self.model.state_dict()


def new_params(cfg: GnnConfig | None = None) -> GnnParams:
    cfg = cfg or GnnConfig()
    if cfg.backbone not in BACKBONES:
        raise ValueError(f"unknown backbone {cfg.backbone!r}; available: {sorted(BACKBONES)}")
    torch.manual_seed(cfg.seed)
    model = BACKBONES[cfg.backbone](cfg.width, cfg.blocks).to(NET_DTYPE)
    for norm in (model.node_norm, model.edge_norm, model.accel_norm):
        norm.to(DTYPE)
    return GnnParams(model, cfg)


def _tensors(g: MeshGraph):
    return (torch.as_tensor(g.node_features), torch.as_tensor(g.edge_features),
            torch.as_tensor(g.senders), torch.as_tensor(g.receivers))


def gnn_forward(params: GnnParams, g: MeshGraph) -> np.ndarray:
    """Normalized accelerations (K x 3) for one graph."""
    with torch.no_grad():
        return params.model(*_tensors(g)).numpy()


def _integrate_t(x_prev, x_now, accel, norm, pinned_idx, pinned_next):
    x_next = 2 * x_now - x_prev + norm.inverse(accel)
    if pinned_idx is not None and len(pinned_idx):
        x_next = x_next.clone()
        x_next[pinned_idx] = pinned_next
    return x_next


def integrate(x_prev, x_now, accel, stats=None, pinned=None, pinned_next=None) -> np.ndarray:
    """x_next = 2 x_now - x_prev + denormalize(accel); pinned nodes take ``pinned_next``
    (or keep their current position when none is given).  ``stats`` is a (mean, std)
    pair or anything with ``accel_norm``; ``None`` means accel is already physical."""
    x_prev = np.asarray(x_prev, dtype=np.float64)
    x_now = np.asarray(x_now, dtype=np.float64)
    a = np.asarray(accel, dtype=np.float64)
    if stats is not None:
        if hasattr(stats, "model"):
            stats = stats.model
        if hasattr(stats, "accel_norm"):
            stats = (stats.accel_norm.mean.numpy(), stats.accel_norm.std.numpy())
        a = a * stats[1] + stats[0]
    x_next = 2 * x_now - x_prev + a
    if pinned is not None and len(pinned):
        x_next[pinned] = x_now[pinned] if pinned_next is None else pinned_next
    return x_next


def _graph_t(x_prev, x_now, mesh_t):
    """Differentiable feature construction (torch) used during training."""
    pinned, free, snd, rcv, dm_feat = mesh_t
    vel = x_now - x_prev
    nodes = torch.cat([pinned[:, None], free[:, None], vel], dim=1)
    dw = x_now[snd] - x_now[rcv]
    edges = torch.cat([dw, dw.norm(dim=1, keepdim=True), dm_feat], dim=1)
    return nodes, edges


def _mesh_tensors(mesh: ClothMesh):
    snd, rcv = directed_edges(mesh)
    pinned = np.zeros(mesh.n_nodes)
    pinned[mesh.pinned] = 1.0
    dm = mesh.mesh_pos[snd] - mesh.mesh_pos[rcv]
    dm_feat = np.column_stack([dm, np.linalg.norm(dm, axis=1)])
    return (torch.as_tensor(pinned), torch.as_tensor(1.0 - pinned), torch.as_tensor(snd),
            torch.as_tensor(rcv), torch.as_tensor(dm_feat))


def rollout(params: GnnParams, x_0, x_1, mesh: ClothMesh, steps: int, pinned_script=None) -> Trajectory:
    """Predict ``steps`` further states after (x_0, x_1).  ``pinned_script`` (steps x K x 3,
    optional) supplies the pinned nodes' positions; otherwise they stay where x_1 has them."""
    if steps <= 0:
        return Trajectory(np.zeros((0, mesh.n_nodes, 3)))
    mt = _mesh_tensors(mesh)
    model = params.model
    pins = torch.as_tensor(mesh.pinned)
    limit = 1e3 * mesh.diagonal()
    x_prev = torch.as_tensor(np.asarray(x_0, dtype=np.float64))
    x_now = torch.as_tensor(np.asarray(x_1, dtype=np.float64))
    origin = x_now.clone()
    out = []
    with torch.no_grad():
        for t in range(steps):
            nodes, edges = _graph_t(x_prev, x_now, mt)
            acc = model(nodes, edges, mt[2], mt[3])
            pn = x_now[pins] if pinned_script is None else torch.as_tensor(np.asarray(pinned_script[t])[mesh.pinned])
            x_next = _integrate_t(x_prev, x_now, acc, model.accel_norm, pins, pn)
            if not torch.isfinite(x_next).all() or (x_next - origin).abs().max() > limit:
                raise NumericBlowup(f"rollout diverged at step {t + 1}")
            out.append(x_next.numpy().copy())
            x_prev, x_now = x_now, x_next
    return Trajectory(np.array(out))


# ---------------------------------------------------------------------------
# training

def _fit_statistics(model: MeshGNN, trajs, mt):
    nodes, edges, accs = [], [], []
    for x in trajs:
        for t in range(1, len(x) - 1):
            n, e = _graph_t(x[t - 1], x[t], mt)
            nodes.append(n)
            edges.append(e)
            accs.append(x[t + 1] - 2 * x[t] + x[t - 1])
    model.node_norm.fit(torch.cat(nodes), skip=(0, 1))
    model.edge_norm.fit(torch.cat(edges))
    # constant targets: keep predicted accelerations at the scale of the data (zero)
    model.accel_norm.fit(torch.cat(accs), degenerate=1e-8)


def _window_loss(model, x, start, T, mt, pins, free, noise_std, gen):
    """Rollout over T steps from ``start`` with input noise; returns the node loss."""
    x_prev, x_now = x[start - 1], x[start]
    if noise_std > 0:
        x_now = x_now + noise_std * torch.randn(x_now.shape, generator=gen, dtype=DTYPE) * free[:, None]
    loss = 0.0
    for k in range(T):
        nodes, edges = _graph_t(x_prev, x_now, mt)
        acc = model(nodes, edges, mt[2], mt[3])
        x_next = _integrate_t(x_prev, x_now, acc, model.accel_norm, pins, x[start + k + 1][pins])
        loss = loss + ((x_next - x[start + k + 1]) ** 2).sum(1).mean()
        x_prev, x_now = x_now, x_next
    return loss


def train_gnn(trajectories, mesh: ClothMesh, cfg: GnnConfig | None = None,
              holdout=None, log_path=None) -> GnnParams:
    """Fit a dynamics network to position sequences with T-step rollout windows.

    ``holdout`` optionally gives a list of (T, K, 3) arrays evaluated every
    ``cfg.holdout_every`` epochs (full rollout RMSE); results go to the log CSV.
    """
    cfg = cfg or GnnConfig()
    trajs = [np.asarray(getattr(t, "node_pos", t), dtype=np.float64) for t in trajectories]
    if not trajs or any(len(x) < cfg.rollout_T + 2 for x in trajs):
        raise InsufficientData(f"need >=1 trajectory of length >= {cfg.rollout_T + 2}")
    torch.use_deterministic_algorithms(True)
    params = new_params(cfg)
    model = params.model
    mt = _mesh_tensors(mesh)
    xs = [torch.as_tensor(x) for x in trajs]
    pins = torch.as_tensor(mesh.pinned)
    free = mt[1]
    _fit_statistics(model, xs, mt)
    disp = torch.cat([(x[1:] - x[:-1])[:, free > 0] for x in xs])
    noise_std = cfg.noise_scale * float(disp.std()) if cfg.noise_scale > 0 else 0.0
    model.noise_std = noise_std
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    decay = (cfg.lr_final / cfg.lr) ** (1.0 / max(cfg.epochs, 1))
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, decay)
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0
        for i in torch.randperm(len(xs), generator=gen).tolist():
            x = xs[i]
            for _ in range(cfg.windows_per_traj):
                start = int(torch.randint(1, len(x) - cfg.rollout_T, (1,), generator=gen))
                loss = _window_loss(model, x, start, cfg.rollout_T, mt, pins, free, noise_std, gen)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item()
                count += 1
        sched.step()
        hold = ""
        if holdout is not None and cfg.holdout_every and epoch % cfg.holdout_every == 0:
            hold = holdout_rmse(params, holdout, mesh)
        rows.append((epoch, total / count, hold))
        if epoch == 1 or epoch % 25 == 0 or epoch == cfg.epochs:
            log.info("stage=train step=%d loss=%.6g", epoch, total / count)
    params.history = rows
    if log_path is not None:
        write_training_log(log_path, rows)
    return params


def holdout_rmse(params: GnnParams, trajs, mesh: ClothMesh) -> float:
    vals = []
    for x in trajs:
        x = np.asarray(getattr(x, "node_pos", x))
        pred = rollout(params, x[0], x[1], mesh, len(x) - 2, pinned_script=x[2:])
        vals.append(float(np.mean(per_step_rmse(pred.node_pos, x[2:]))))
    return float(np.mean(vals))


def write_training_log(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "node_loss", "holdout_rmse"])
        for ep, loss, hold in rows:
            w.writerow([ep, repr(float(loss)), "" if hold == "" else repr(float(hold))])


# ---------------------------------------------------------------------------
# checkpoint: b"CDGN", u32 version, u32 header length, JSON header, float64 arrays

CDGN_VERSION = 1


def save_gnn(path, params: GnnParams) -> None:
    state = params.model.state_dict()
    header = {"config": asdict(params.config),
              "tensors": [[k, list(v.shape)] for k, v in state.items()]}
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"CDGN" + struct.pack("<II", CDGN_VERSION, len(blob)) + blob)
        for v in state.values():
            fh.write(v.detach().numpy().astype("<f8").tobytes())


def load_gnn(path) -> GnnParams:
    raw = Path(path).read_bytes()
    if raw[:4] != b"CDGN":
        raise ValueError(f"{path}: not a CDGN checkpoint")
    version, n = struct.unpack("<II", raw[4:12])
    if version != CDGN_VERSION:
        raise ValueError(f"unsupported CDGN version {version}")
    header = json.loads(raw[12:12 + n])
    params = new_params(GnnConfig(**header["config"]))
    off = 12 + n
    state = {}
    for name, shape in header["tensors"]:
        cnt = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, "<f8", cnt, off).reshape(shape)
        off += 8 * cnt
        state[name] = torch.as_tensor(arr.copy())
    params.model.load_state_dict(state)
    return params
