"""Command-line interface: ``clods <subcommand> [options]``.

Subcommands: synth, fit, extract, train, rollout, eval, gradcheck.  Every command that
works on a dataset reads and updates ``manifest.json``; outputs land next to it.

Exit codes: 0 success, 1 invalid input, 2 numeric failure.  Progress goes to stderr as
``stage=<s> step=<t> loss=<v>`` lines.

Evaluation CSV contract (``eval``): header ``metric,timestep,value``.  Per-step rows use
metric ``node_rmse`` (and ``psnr``/``ssim``/``image_rmse`` when videos are compared);
aggregate rows leave ``timestep`` empty: ``rollout_rmse_interp``, ``rollout_rmse_extrap``,
``rollout_rmse_final``, ``rollout_rmse_mean``, ``psnr_mean``, ``ssim_mean``, ``rmse_vp``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

log = logging.getLogger("clods")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _progress(stage, step, loss=float("nan")):
    print(f"stage={stage} step={step} loss={loss:.6g}", file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# manifest helpers

def default_root() -> Path:
    return Path(os.environ.get("CLODS_DATA_DIR", "clods_data"))


def _manifest_path(args) -> Path:
    if args.manifest is None:
        return default_root() / "manifest.json"
    return Path(args.manifest)


def _load(args):
    from . import io

    path = _manifest_path(args)
    if not path.exists():
        raise UsageError(f"manifest not found: {path}")
    try:
        return path.parent, io.read_manifest(path)
    except json.JSONDecodeError as exc:
        raise UsageError(f"manifest does not parse: {exc}") from exc


def _save(root: Path, manifest: dict):
    from . import io

    io.write_manifest(root / "manifest.json", manifest)


def _done(manifest, key) -> bool:
    return bool(manifest.get("stages", {}).get(key, {}).get("done"))


def _mark(root, manifest, key, **info):
    manifest.setdefault("stages", {})[key] = {"done": True, **info}
    _save(root, manifest)


def _dataset(root: Path, manifest: dict):
    from . import io

    mesh = io.read_obj(root / manifest["mesh"], pinned=io.read_pinned(root / manifest["pinned"]))
    cams = io.read_cameras(root / manifest["cameras"])
    return mesh, cams


def _traj_indices(manifest, spec: str | None, split: str | None = None):
    entries = manifest["trajectories"]
    if spec:
        idx = []
        for part in spec.split(","):
            if "-" in part:
                a, b = part.split("-")
                idx.extend(range(int(a), int(b) + 1))
            else:
                idx.append(int(part))
        for i in idx:
            if not 0 <= i < len(entries):
                raise UsageError(f"trajectory index {i} out of range (0..{len(entries) - 1})")
        return idx
    if split is None:
        return list(range(len(entries)))
    return [i for i, e in enumerate(entries) if e.get("split", "train") == split]


def _gt(root, manifest, i):
    from . import io

    return io.read_trajectory(root / manifest["trajectories"][i]["trajectory"])


def _frames(root, manifest, i, cams, steps):
    from . import io

    e = manifest["trajectories"][i]
    return io.load_frames(root / e["name"], "frames", [c.id for c in cams], steps)


def _stage_config(args, manifest, **over):
    from .pipeline import StageConfig

    cfg = StageConfig.from_dict(manifest.get("config", {})) if manifest.get("config") else StageConfig()
    cfg.seed = args.seed
    for k, v in over.items():
        if v is None:
            continue
        section, _, name = k.partition("__")
        if name:
            setattr(getattr(cfg, section), name, v)
        else:
            setattr(cfg, section, v)
    return cfg


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args):
    from . import synth

    out = Path(args.out) if args.out else (_manifest_path(args).parent if args.manifest else default_root())
    if args.resume and (out / "manifest.json").exists():
        from . import io
        if _done(io.read_manifest(out / "manifest.json"), "synth"):
            _progress("synth", "skip")
            return io.read_manifest(out / "manifest.json")
    if args.steps < 1 or args.trajectories < 1 or args.views < 1 or args.resolution < 8:
        raise UsageError("steps, trajectories and views must be >= 1 and resolution >= 8")
    if args.holdout >= args.trajectories and args.holdout > 0:
        raise UsageError("holdout must leave at least one training trajectory")
    if args.trajectories == 1:
        sims = [synth.SimParams(steps=args.steps, warmup=args.warmup, seed=args.seed)]
    else:
        sims = synth.flag_family(args.trajectories, args.steps, seed=args.seed)
    cam = synth.CameraParams(n_views=args.views, resolution=args.resolution,
                             supersample=args.supersample)
    manifest = synth.dataset_build(sims, cam, args.texture, out, seed=args.seed)
    n = len(manifest["trajectories"])
    for k, e in enumerate(manifest["trajectories"]):
        e["split"] = "holdout" if k >= n - args.holdout else "train"
    _save(out, manifest)
    print(out / "manifest.json")
    return manifest


def _splat_name(mask):
    return {(True, True): "splat.smgs", (False, True): "splat_noworld.smgs",
            (True, False): "splat_nomesh.smgs"}[mask]


def _fit(args, root, manifest, mask):
    from . import io, losses
    from .pipeline import stage1_fit
    from .splat import render_batch

    mesh, cams = _dataset(root, manifest)
    i = args.trajectory
    if not 0 <= i < len(manifest["trajectories"]):
        raise UsageError(f"trajectory index {i} out of range")
    x0 = _gt(root, manifest, i).node_pos[0]
    mesh0 = mesh.with_positions(x0)
    frames0 = _frames(root, manifest, i, cams, [0])[0]
    cfg = _stage_config(args, manifest, stage1__max_iters=getattr(args, "iters", None),
                        stage1__per_face=getattr(args, "per_face", None),
                        stage1__sh_degree=getattr(args, "sh_degree", None))
    cfg.use_world, cfg.use_mesh = mask
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        start = time.perf_counter()
        gc, net = stage1_fit(mesh0, frames0, cams, cfg)
        seconds = time.perf_counter() - start
    converged = not caught
    rendered = render_batch(gc, mesh0, net, cams, cfg.background)
    ps = [losses.psnr(a, b) for a, b in zip(rendered.images, frames0.images)]
    name = _splat_name(mask)
    io.save_splat(root / name, gc, net, mesh.n_faces)
    summary = {"checkpoint": name, "psnr_mean": float(np.mean(ps)), "psnr": ps,
               "iters": len(gc.fit_history), "final_loss": float(min(gc.fit_history)),
               "converged": converged, "n_gaussians": len(gc), "seconds": seconds}
    (root / name.replace(".smgs", "_summary.json")).write_text(json.dumps(summary, indent=1))
    manifest["config"] = cfg.to_dict() | {"use_world": True, "use_mesh": True}
    _mark(root, manifest, "fit" if mask == (True, True) else name[:-5],
          checkpoint=name, psnr=float(np.mean(ps)))
    _progress("fit", len(gc.fit_history), min(gc.fit_history))
    return summary


def cmd_fit(args):
    root, manifest = _load(args)
    mask = _ablation_mask(args.ablate_opacity)
    key = "fit" if mask == (True, True) else _splat_name(mask)[:-5]
    if args.resume and _done(manifest, key):
        _progress("fit", "skip")
        return None
    summary = _fit(args, root, manifest, mask)
    print(f"psnr_mean={summary['psnr_mean']:.4f}")
    return summary


def _ablation_mask(value):
    if value in (None, "none"):
        return (True, True)
    if value == "world":
        return (False, True)
    if value == "mesh":
        return (True, False)
    raise UsageError(f"--ablate-opacity must be world or mesh, got {value!r}")


def _parse_noise(spec):
    if not spec:
        return None
    kind, sep, mag = spec.partition(":")
    if not sep or kind not in ("gaussian", "translation", "scaling"):
        raise UsageError("--init-noise expects kind:magnitude with kind in gaussian|translation|scaling")
    try:
        mag = float(mag)
    except ValueError as exc:
        raise UsageError(f"bad noise magnitude {mag!r}") from exc
    if mag < 0:
        raise UsageError("noise magnitude must be >= 0")
    return kind, mag


def cmd_extract(args):
    from . import io, losses
    from .pipeline import perturb_initial_mesh, stage2_extract

    root, manifest = _load(args)
    mask = _ablation_mask(args.ablate_opacity)
    noise = _parse_noise(args.init_noise)
    tag = args.tag or ("extract" + ("" if mask == (True, True) else "_" + _splat_name(mask)[6:-5])
                       + ("" if noise is None else f"_{noise[0]}{noise[1]:g}"))
    if args.resume and _done(manifest, tag):
        _progress("extract", "skip")
        return None
    ckpt = root / _splat_name(mask)
    if not ckpt.exists():
        if mask == (True, True):
            raise UsageError("no fitted splat checkpoint; run `clods fit` first")
        args.trajectory = 0
        _fit(args, root, manifest, mask)
        manifest = io.read_manifest(root / "manifest.json")
    gc, net, _ = io.load_splat(ckpt)
    mesh, cams = _dataset(root, manifest)
    cfg = _stage_config(args, manifest, stage2__inner_iters=args.inner_iters,
                        stage2__gamma=args.gamma)
    out = root / tag
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    done = []
    # a perturbed start keeps the template's edge lengths; its own are noise
    rest = None if noise is None else losses.rest_lengths(mesh)
    for i in _traj_indices(manifest, args.trajectories, "train"):
        gt = _gt(root, manifest, i)
        T = len(gt) if args.steps is None else min(len(gt), args.steps + 1)
        mesh0 = mesh.with_positions(gt.node_pos[0])
        if noise is not None:
            mesh0 = perturb_initial_mesh(mesh0, noise[0], noise[1], seed=args.seed + i)
        frames = _frames(root, manifest, i, cams, range(1, T))
        res = stage2_extract(gc, net, mesh0, frames, cams, cfg, pinned_traj=gt.node_pos[1:T],
                             rest=rest)
        name = manifest["trajectories"][i]["name"]
        io.write_trajectory(out / f"{name}.ctrj", res.trajectory)
        for t, (g, p) in enumerate(zip(res.geometry_loss, res.psnr), start=1):
            rows.append((name, t, g, p))
        done.append(name)
        _progress("extract", f"{name}", float(res.geometry_loss[-1]) if len(res.geometry_loss) else 0.0)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "timestep", "geometry_loss", "psnr"])
        for r in rows:
            w.writerow([r[0], r[1], repr(float(r[2])), repr(float(r[3]))])
    _mark(root, manifest, tag, dir=tag, trajectories=done,
          ablate=args.ablate_opacity or "none", init_noise=args.init_noise or "")
    return out


def cmd_train(args):
    from . import io
    from .dynamics import save_gnn
    from .pipeline import stage3_train

    root, manifest = _load(args)
    name = args.name or ("gnn_gt" if args.source == "gt" else f"gnn_{args.source}")
    if args.resume and _done(manifest, name):
        _progress("train", "skip")
        return None
    mesh, _ = _dataset(root, manifest)
    train_idx = _traj_indices(manifest, args.trajectories, "train")
    trajs = []
    for i in train_idx:
        tname = manifest["trajectories"][i]["name"]
        if args.source == "gt":
            trajs.append(_gt(root, manifest, i))
        else:
            path = root / args.source / f"{tname}.ctrj"
            if not path.exists():
                raise UsageError(f"missing extracted trajectory {path}; run `clods extract` first")
            trajs.append(io.read_trajectory(path))
    if args.max_steps:
        trajs = [t.node_pos[:args.max_steps] for t in trajs]
    holdout = [_gt(root, manifest, i).node_pos for i in _traj_indices(manifest, None, "holdout")]
    stage3 = {"epochs": args.epochs, "width": args.width, "blocks": args.blocks,
              "backbone": args.backbone, "holdout_every": args.holdout_every if holdout else 0}
    cfg = _stage_config(args, manifest)
    cfg.stage3 = {k: v for k, v in stage3.items() if v is not None}
    params = stage3_train(trajs, mesh, cfg, holdout=holdout or None, log_path=root / f"{name}_log.csv")
    save_gnn(root / f"{name}.cdgn", params)
    hist = params.history
    from .plot import line_chart
    line_chart(root / f"{name}_loss.png", {"node_loss": ([h[0] for h in hist], [h[1] for h in hist])},
               title=f"{name} training", xlabel="epoch", ylabel="node loss", logy=True)
    _mark(root, manifest, name, checkpoint=f"{name}.cdgn", source=args.source)
    return params


def cmd_rollout(args):
    from . import io
    from .dynamics import load_gnn
    from .pipeline import dvc_forward

    root, manifest = _load(args)
    gpath = Path(args.gnn) if args.gnn.endswith(".cdgn") else root / f"{args.gnn}.cdgn"
    if not gpath.exists():
        raise UsageError(f"GNN checkpoint not found: {gpath}")
    key = f"rollout_{gpath.stem}_{args.trajectory}"
    if args.resume and _done(manifest, key):
        _progress("rollout", "skip")
        return None
    gnn = load_gnn(gpath)
    mesh, cams = _dataset(root, manifest)
    gt = _gt(root, manifest, args.trajectory)
    steps = len(gt) - 2 if args.steps is None else args.steps
    if steps < 0 or steps > len(gt) - 2:
        raise UsageError(f"--steps must lie in [0, {len(gt) - 2}]")
    gc = net = None
    if not args.mesh_only:
        if not (root / "splat.smgs").exists():
            raise UsageError("no fitted splat checkpoint; run `clods fit` or pass --mesh-only")
        gc, net, _ = io.load_splat(root / "splat.smgs")
    mesh0 = mesh.with_positions(gt.node_pos[0])
    traj, video = dvc_forward(mesh0, gt.node_pos[1], gnn, gc, net, cams, steps,
                              pinned_script=gt.node_pos[2:2 + steps], render=not args.mesh_only)
    out = root / key
    io.write_trajectory(out / "trajectory.ctrj", traj)
    for fs in video:
        for cid, img in zip(fs.camera_ids, fs.images):
            io.write_pfm(out / "frames" / f"view{cid}" / f"t{fs.timestep}.pfm", img)
            io.write_png(out / "frames" / f"view{cid}" / f"t{fs.timestep}.png", img)
    _progress("rollout", steps)
    _mark(root, manifest, key, dir=key, steps=steps, trajectory=args.trajectory,
          rendered=not args.mesh_only)
    return out


def evaluate(pred, gt, split: int | None = None, pred_video=None, gt_video=None):
    """Rows (metric, timestep, value) for a predicted vs reference trajectory (and video)."""
    from . import losses

    pred, gt = np.asarray(pred), np.asarray(gt)
    err = losses.per_step_rmse(pred, gt)
    T = len(err)
    split = T // 2 if split is None else min(split, T)
    rows = [("node_rmse", t, float(e)) for t, e in enumerate(err)]
    rows += [("rollout_rmse_interp", "", losses.rollout_rmse(pred, gt, (0, split))),
             ("rollout_rmse_extrap", "", losses.rollout_rmse(pred, gt, (split, T))),
             ("rollout_rmse_final", "", float(err[-1]) if T else 0.0),
             ("rollout_rmse_mean", "", float(err.mean()) if T else 0.0)]
    if pred_video is not None:
        ps, ss, rm = [], [], []
        for t, (a, b) in enumerate(zip(pred_video, gt_video)):
            pa, gb = np.stack(a.images), np.stack(b.images)
            ps.append(float(np.mean([losses.psnr(x, y) for x, y in zip(a.images, b.images)])))
            ss.append(float(np.mean([losses.ssim(x, y) for x, y in zip(a.images, b.images)])))
            rm.append(losses.rmse(pa, gb))
            rows += [("psnr", t, ps[-1]), ("ssim", t, ss[-1]), ("image_rmse", t, rm[-1])]
        rows += [("psnr_mean", "", float(np.mean(ps)) if ps else 0.0),
                 ("ssim_mean", "", float(np.mean(ss)) if ss else 0.0),
                 ("rmse_vp", "", losses.rmse_vp(pred_video, gt_video))]
    return rows


def write_eval_csv(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "timestep", "value"])
        for m, t, v in rows:
            w.writerow([m, t, repr(float(v))])


def cmd_eval(args):
    from . import io
    from .plot import line_chart

    root, manifest = _load(args)
    gt_full = _gt(root, manifest, args.trajectory).node_pos
    pred_path = Path(args.pred)
    if pred_path.is_dir():
        pred_path = pred_path / "trajectory.ctrj"
    if not pred_path.exists():
        raise UsageError(f"prediction not found: {pred_path}")
    pred = io.read_trajectory(pred_path).node_pos
    if args.gt:
        gt = io.read_trajectory(args.gt).node_pos
    else:
        offset = len(gt_full) - len(pred) if args.offset is None else args.offset
        gt = gt_full[offset:offset + len(pred)]
    if gt.shape != pred.shape:
        raise UsageError(f"prediction shape {pred.shape} does not match reference {gt.shape}")
    pv = gv = None
    frames_dir = pred_path.parent / "frames"
    if args.video and frames_dir.exists() and len(pred):
        _, cams = _dataset(root, manifest)
        ids = [c.id for c in cams]
        start = len(gt_full) - len(pred)
        pv = io.load_frames(pred_path.parent, "frames", ids, range(start, start + len(pred)))
        gv = _frames(root, manifest, args.trajectory, cams, range(start, start + len(pred)))
    rows = evaluate(pred, gt, args.split, pv, gv)
    out = Path(args.out) if args.out else pred_path.parent / "eval.csv"
    write_eval_csv(out, rows)
    summary = {m: v for m, t, v in rows if t == ""}
    out.with_suffix(".json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    per = [(t, v) for m, t, v in rows if m == "node_rmse"]
    if per:
        line_chart(out.with_suffix(".png"), {"node RMSE": ([p[0] for p in per], [p[1] for p in per])},
                   title="rollout error", xlabel="step", ylabel="RMSE")
    for k, v in summary.items():
        print(f"{k}={v:.6g}")
    return rows


def gradcheck_fixture(seed=0, size=32):
    """Two faces, four components, one view looking at the quad."""
    from .geometry import grid_mesh
    from .splat import Camera, OpacityNet, anchor_gaussians
    from .synth import look_at

    rng = np.random.default_rng(seed)
    mesh = grid_mesh(2, 2, 1.0, 1.0, "xy")
    mesh = mesh.with_positions(mesh.world_pos + rng.normal(0, 0.05, mesh.world_pos.shape))
    gc = anchor_gaussians(mesh, 2, seed, sh_degree=1)
    gc.color_coeffs = rng.normal(0, 0.5, gc.color_coeffs.shape)
    gc.scale_mult = np.full(len(gc), 0.9)
    net = OpacityNet.for_mesh(mesh, seed=seed)
    f = 0.5 * size / np.tan(np.radians(25))
    cam = Camera(f, f, size / 2, size / 2, size, size,
                 look_at(np.array([0.5, 0.4, 2.2]), np.array([0.5, 0.5, 0.0]), (0, 1, 0)))
    return mesh, gc, net, cam


def run_gradcheck(seed=0, size=32, h=1e-5):
    from . import losses
    from .grad import grad_check, render_backward
    from .splat import render

    mesh, gc, net, cam = gradcheck_fixture(seed, size)
    ref = np.random.default_rng(seed + 1).uniform(0, 1, (size, size, 3))

    def closure(x):
        m = mesh.with_positions(x.reshape(-1, 3))
        img, tape = render(gc, m, net, cam)
        val, g = losses.l1_grad(img, ref)
        return val, render_backward(tape, g).d_node_pos.ravel()

    def structure(x):
        _, tape = render(gc, mesh.with_positions(x.reshape(-1, 3)), net, cam)
        return tape.signature()

    return grad_check(closure, mesh.world_pos.ravel().copy(), h=h, structure=structure)


def cmd_gradcheck(args):
    rep = run_gradcheck(args.seed, args.size, args.h)
    print(rep.summary())
    if args.out:
        Path(args.out).write_text(json.dumps({"max_rel_err": rep.max_rel_err,
                                              "pass_fraction": rep.pass_fraction,
                                              "passed": rep.passed(0.95)}, indent=1))
    if not rep.passed(0.95):
        raise FloatingPointError("gradient check failed")
    return rep


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", default=argparse.SUPPRESS, help="path to manifest.json")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS,
                        help="worker count (views are processed in a fixed order)")
    common.add_argument("--resume", action="store_true", default=argparse.SUPPRESS,
                        help="skip stages already marked done in the manifest")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    p = _Parser(prog="clods", parents=[common],
                description="Mesh-anchored Gaussian cloth reconstruction and dynamics.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="simulate and render a synthetic dataset")
    s.add_argument("--out", help="output directory (default: $CLODS_DATA_DIR or ./clods_data)")
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--trajectories", type=int, default=1)
    s.add_argument("--holdout", type=int, default=0, help="trailing trajectories kept for evaluation")
    s.add_argument("--warmup", type=int, default=50)
    s.add_argument("--views", type=int, default=8)
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--supersample", type=int, default=3)
    s.add_argument("--texture", help="PNG texture (default: checkerboard)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit", parents=[common], help="fit Gaussian appearance to frame 0")
    s.add_argument("--iters", type=int)
    s.add_argument("--per-face", type=int)
    s.add_argument("--sh-degree", type=int)
    s.add_argument("--trajectory", type=int, default=0)
    s.add_argument("--ablate-opacity", choices=["world", "mesh"])
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("extract", parents=[common], help="extract meshes from the videos")
    s.add_argument("--trajectories", help="indices, e.g. 0,2,5-7 (default: training split)")
    s.add_argument("--steps", type=int, help="limit to this many steps after frame 0")
    s.add_argument("--inner-iters", type=int)
    s.add_argument("--gamma", type=float)
    s.add_argument("--init-noise", help="perturb the initial mesh, kind:magnitude")
    s.add_argument("--ablate-opacity", choices=["world", "mesh"])
    s.add_argument("--tag", help="output directory name")
    s.add_argument("--iters", type=int, help="stage-1 iterations when an ablated fit is needed")
    s.add_argument("--per-face", type=int)
    s.add_argument("--sh-degree", type=int)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train", parents=[common], help="train the dynamics network")
    s.add_argument("--source", default="extract",
                   help="extraction directory name, or 'gt' for ground-truth supervision")
    s.add_argument("--trajectories")
    s.add_argument("--name")
    s.add_argument("--epochs", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--blocks", type=int)
    s.add_argument("--backbone", default="mgn")
    s.add_argument("--max-steps", type=int)
    s.add_argument("--holdout-every", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("rollout", parents=[common], help="roll out dynamics and render")
    s.add_argument("--gnn", default="gnn_extract", help="checkpoint path or name")
    s.add_argument("--trajectory", type=int, default=0)
    s.add_argument("--steps", type=int)
    s.add_argument("--mesh-only", action="store_true")
    s.set_defaults(func=cmd_rollout)

    s = sub.add_parser("eval", parents=[common], help="compare a rollout with ground truth")
    s.add_argument("--pred", required=True, help="trajectory .ctrj or rollout directory")
    s.add_argument("--gt", help="reference .ctrj (default: the manifest trajectory)")
    s.add_argument("--trajectory", type=int, default=0)
    s.add_argument("--offset", type=int)
    s.add_argument("--split", type=int, help="last step of the interpolation range")
    s.add_argument("--video", action="store_true", help="also compare rendered frames")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--h", type=float, default=1e-5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gradcheck)
    return p


GLOBAL_DEFAULTS = {"manifest": None, "seed": 0, "workers": 1, "resume": False, "verbose": 0}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr, force=True)
    for name in ("clods.pipeline", "clods.dynamics", "clods.synth"):
        logging.getLogger(name).setLevel(logging.INFO)
    from .splat import RenderError

    try:
        args.func(args)
    except (UsageError, FileNotFoundError, KeyError) as exc:
        print(f"clods: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FloatingPointError, RenderError) as exc:
        print(f"clods: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"clods: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
