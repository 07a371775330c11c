"""Command-line entry point: world generation, rendering, training,
dream rollouts and evaluation reports.

All outputs are deterministic functions of the config seeds. Panoramas
are stored as PNG triplets (8-bit RGB, 16-bit millimeter depth, 8-bit
class ids) with a sidecar JSON carrying pose and geometry.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import cloud as cloudmod
from . import dataset as datasetmod
from . import evaluate, imggen, structgen, synthworld
from .config import RunConfig
from .errors import DataError, PanoworldError
from .geom import PanoGeometry, Pose
from .palette import D_MAX, NUM_CLASSES


# ---------------------------------------------------------------------------
# Panorama file I/O.


def write_pano(out_dir, stem: str, frame: cloudmod.PanoFrame, g: PanoGeometry) -> None:
    """Write rgb/depth/sem PNGs plus a pose/geometry sidecar JSON.

    Depth is stored as 16-bit millimeters (0 = invalid); the 1 mm
    quantization is the defined storage precision.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    Image.fromarray(frame.rgb.astype(np.uint8), mode="RGB").save(out_dir / f"{stem}_rgb.png")
    mm = np.round(frame.depth * 1000.0).astype(np.uint16)
    Image.fromarray(mm).save(out_dir / f"{stem}_depth.png")
    Image.fromarray(frame.sem.astype(np.uint8), mode="L").save(out_dir / f"{stem}_sem.png")
    sidecar = {
        "geometry": {"width": g.width, "height": g.height},
        "pose": {"position": list(map(float, frame.pose.position)),
                 "yaw": float(frame.pose.yaw)},
        "depth_unit": "millimeter",
    }
    (out_dir / f"{stem}_pose.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def read_pano(out_dir, stem: str) -> tuple[cloudmod.PanoFrame, PanoGeometry]:
    out_dir = Path(out_dir)
    rgb = np.asarray(Image.open(out_dir / f"{stem}_rgb.png"), dtype=np.uint8)
    mm = np.asarray(Image.open(out_dir / f"{stem}_depth.png"))
    sem = np.asarray(Image.open(out_dir / f"{stem}_sem.png"), dtype=np.int64)
    doc = json.loads((out_dir / f"{stem}_pose.json").read_text())
    g = PanoGeometry(doc["geometry"]["width"], doc["geometry"]["height"])
    pose = Pose(np.array(doc["pose"]["position"]), doc["pose"]["yaw"])
    frame = cloudmod.PanoFrame(sem=sem, depth=mm.astype(np.float64) / 1000.0,
                               rgb=rgb, pose=pose)
    return frame, g


def _load_world(path):
    scene = synthworld.scene_from_json(Path(path).read_text())
    gpath = Path(str(path).replace("world_", "graph_"))
    graph = synthworld.graph_from_json(gpath.read_text()) if gpath != Path(path) and gpath.exists() else None
    return scene, graph


# ---------------------------------------------------------------------------
# Commands.


def cmd_worldgen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = None
    if args.config:
        params = RunConfig.load(args.config).world_params()
    for i in range(args.count):
        seed = args.seed + i
        scene, graph = synthworld.generate_world(seed, params)
        (out / f"world_{seed:05d}.json").write_text(synthworld.scene_to_json(scene))
        (out / f"graph_{seed:05d}.json").write_text(synthworld.graph_to_json(graph))
        print(f"world {seed}: {len(scene.rooms)} rooms, {len(graph.nodes)} nodes")
    return 0


def cmd_validate(args) -> int:
    scene, graph = _load_world(args.world)
    synthworld.validate_scene(scene)
    if graph is not None:
        synthworld.validate_graph(scene, graph)
    round_trip = synthworld.scene_to_json(synthworld.scene_from_json(synthworld.scene_to_json(scene)))
    if round_trip != synthworld.scene_to_json(scene):
        raise DataError("scene JSON does not round-trip")
    print(f"{args.world}: valid")
    return 0


def _parse_pose(text: str) -> Pose:
    x, y, z, yaw = (float(v) for v in text.split(","))
    return Pose(np.array([x, y, z]), yaw)


def cmd_render(args) -> int:
    scene, graph = _load_world(args.world)
    g = PanoGeometry(args.width, args.height)
    if args.pose:
        poses = [_parse_pose(args.pose)]
    else:
        poses = synthworld.sample_trajectory(graph, args.traj_seed)
    for t, pose in enumerate(poses):
        write_pano(args.out, f"step{t:03d}", synthworld.render_pano(scene, pose, g), g)
    print(f"rendered {len(poses)} panorama(s) to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g = cfg.geometry()
    seeds = cfg.doc["seeds"]
    samples = datasetmod.build_dataset(
        seeds["train_worlds"], g,
        trajectories_per_world=cfg.doc["trajectory"]["per_world"],
        seed=seeds["train"], world_params=cfg.world_params(),
        perturb_sigma=cfg.doc["trajectory"]["perturb_sigma"])
    if args.stage == "structure":
        model = structgen.StructureGenerator(cfg.struct_config(), seed=seeds["train"])
        curve = structgen.train_structure(model, samples, cfg.train_config())
        structgen.save_model(model, out / "structure.ckpt")
        header = "step,total,ce,depth,kl"
    else:
        icfg = cfg.img_config()
        gen = imggen.ImageGenerator(icfg, seed=seeds["train"])
        disc = imggen.Discriminator(icfg, seed=seeds["train"] + 1)
        pairs = _image_pairs(samples, g, icfg)
        curve = imggen.train_image_generator(gen, disc, pairs,
                                             cfg.doc["image"]["steps"], seed=seeds["train"])
        imggen.save_generator(gen, out / "image.ckpt")
        header = "step,total,gan,perc,fm,d"
    lines = [header] + [",".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in row)
                        for row in curve]
    (out / f"{args.stage}_curve.csv").write_text("\n".join(lines) + "\n")
    print(f"{args.stage}: {len(curve)} steps, final loss {curve[-1][1]:.4f}")
    return 0


def _image_pairs(samples, g: PanoGeometry, icfg: imggen.ImgConfig):
    pairs = []
    for sample in samples:
        frames = sample.frames
        pc = cloudmod.PointCloud(icfg.num_classes, icfg.d_max)
        cloudmod.insert_frame(pc, frames[0], stride=1)
        for t in range(1, len(frames)):
            guide = cloudmod.render_guidance(pc, frames[t].pose, g)
            pairs.append({
                "sem": frames[t].sem,
                "depth01": np.clip(frames[t].depth / icfg.d_max, 0.0, 1.0),
                "guide_rgb": guide.rgb.transpose(2, 0, 1) / 255.0,
                "mask": guide.valid[None].astype(np.float64),
                "real": frames[t].rgb.transpose(2, 0, 1) / 255.0,
            })
            cloudmod.insert_frame(pc, frames[t], stride=1)
    return pairs


def cmd_dream(args) -> int:
    cfg = RunConfig.load(args.config)
    g = cfg.geometry()
    scene, graph = _load_world(args.world)
    poses = synthworld.sample_trajectory(graph, args.traj_seed)
    gt = [synthworld.render_pano(scene, p, g) for p in poses]
    context = gt[:args.context]
    targets = poses[args.context:]
    if not targets:
        raise DataError("trajectory shorter than requested context")
    out = Path(args.out)

    img_gen = imggen.load_generator(args.image_checkpoint) if args.image_checkpoint else None

    def emit(sub: str, preds, guides):
        metrics = []
        for t, (sem, depth) in enumerate(preds):
            gt_frame = gt[args.context + t]
            rgb = _predict_rgb(img_gen, sem, depth, guides[t])
            frame = cloudmod.PanoFrame(sem=sem, depth=depth, rgb=rgb, pose=targets[t])
            write_pano(out / sub, f"step{t:03d}", frame, g)
            metrics.append({
                "step": t + 1,
                "miou": evaluate.miou(gt_frame.sem, sem),
                "depth_mae": evaluate.depth_mae(gt_frame.depth, depth),
                "pixel_acc": evaluate.pixel_accuracy(gt_frame.sem, sem),
            })
        (out / sub / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))

    if args.model == "nn":
        pc = cloudmod.PointCloud(NUM_CLASSES, D_MAX)
        for f in context:
            cloudmod.insert_frame(pc, f, stride=1)
        preds, guides = [], []
        for pose in targets:
            guide = cloudmod.render_guidance(pc, pose, g)
            sem, depth = cloudmod.nn_fill(guide)
            preds.append((sem, np.clip(depth, 0.0, D_MAX)))
            guides.append(guide)
        emit("nn", preds, guides)
    else:
        if not args.checkpoint:
            raise DataError("--model struct requires --checkpoint")
        model = structgen.load_model(args.checkpoint)
        if (model.config.width, model.config.height) != (g.width, g.height):
            raise DataError("checkpoint geometry does not match config")
        if args.zmode == "mean":
            policies = [("mean", "prior_mean", 0)]
        elif args.zmode.startswith("sample:"):
            base = int(args.zmode.split(":", 1)[1])
            policies = [(f"sample{base + k}", "prior_sample", base + k)
                        for k in range(args.samples)]
        else:
            raise DataError(f"unknown zmode {args.zmode!r}")
        for sub, policy, zseed in policies:
            raw, guides = structgen.rollout(model, context, targets,
                                            mode="recurrent", z_policy=policy, seed=zseed)
            preds = [(np.argmax(p[0], axis=0), p[1] * model.config.d_max) for p in raw]
            emit(sub, preds, guides)
    print(f"dream: {len(targets)} step(s) written to {out}")
    return 0


def _predict_rgb(img_gen, sem, depth, guide):
    if img_gen is None:
        return imggen.colorize(sem, depth, D_MAX)
    out, _ = img_gen.forward(
        sem[None], np.clip(depth / img_gen.config.d_max, 0.0, 1.0)[None],
        (guide.rgb.transpose(2, 0, 1) / 255.0)[None],
        guide.valid[None, None].astype(np.float64))
    return np.clip(np.round(out[0].transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)


def cmd_eval(args) -> int:
    cfg = RunConfig.load(args.config)
    g = cfg.geometry()
    models = {"nearest_neighbor": "nearest_neighbor"}
    for spec in args.checkpoint or []:
        name, path = spec.split("=", 1)
        models[name] = structgen.load_model(path)
    e = cfg.doc["eval"]
    report = evaluate.run_eval_grid(
        models, cfg.doc["seeds"]["eval_worlds"], g,
        trajectories_per_world=e["trajectories_per_world"],
        contexts=tuple(e["contexts"]), max_steps=e["max_steps"],
        seed=cfg.doc["seeds"]["eval"], world_params=cfg.world_params())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    print(f"eval: {len(report.cells)} grid cells written to {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser.


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="panoworld",
                                description="Hierarchical panoramic world model toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    w = sub.add_parser("worldgen", help="generate procedural worlds")
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--count", type=int, default=1)
    w.add_argument("--out", required=True)
    w.add_argument("--config", default=None)
    w.set_defaults(fn=cmd_worldgen)

    v = sub.add_parser("validate", help="validate a world file")
    v.add_argument("--world", required=True)
    v.set_defaults(fn=cmd_validate)

    r = sub.add_parser("render", help="render ground-truth panoramas")
    r.add_argument("--world", required=True)
    r.add_argument("--pose", default=None, help="x,y,z,yaw")
    r.add_argument("--traj-seed", type=int, default=0)
    r.add_argument("--width", type=int, default=64)
    r.add_argument("--height", type=int, default=32)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_render)

    t = sub.add_parser("train", help="train a model stage")
    t.add_argument("--stage", choices=("structure", "image"), required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    d = sub.add_parser("dream", help="predict unseen viewpoints along a trajectory")
    d.add_argument("--config", required=True)
    d.add_argument("--world", required=True)
    d.add_argument("--traj-seed", type=int, default=0)
    d.add_argument("--context", type=int, default=1)
    d.add_argument("--model", choices=("nn", "struct"), default="nn")
    d.add_argument("--checkpoint", default=None)
    d.add_argument("--image-checkpoint", default=None)
    d.add_argument("--zmode", default="mean", help="mean | sample:<seed>")
    d.add_argument("--samples", type=int, default=1)
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_dream)

    e = sub.add_parser("eval", help="run the evaluation grid")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", action="append", default=[],
                   help="name=path, repeatable")
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PanoworldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
