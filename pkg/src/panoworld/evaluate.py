"""Segmentation/depth metrics and the rollout evaluation grid.

The grid crosses context sizes {1,2,3}, prediction steps 1..6, and a set
of predictors (geometry-only nearest-neighbor baseline and trained
structure models) over trajectories from held-out worlds, averaging
per-image metrics per cell.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import cloud as cloudmod
from . import dataset as datasetmod
from . import structgen
from .errors import DataError, DomainError, ShapeError
from .geom import PanoGeometry
from .palette import D_MAX, NUM_CLASSES

SCHEMA_VERSION = 1

METRIC_FIELDS = ("miou", "depth_mae", "pixel_acc", "div_unobserved", "div_observed")
CSV_HEADER = ("model", "context", "step") + METRIC_FIELDS + ("count",)


def miou(gt, pred, num_classes: int = NUM_CLASSES) -> float:
    """Mean IOU over classes present in gt or pred; absent classes excluded."""
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise ShapeError(f"gt {gt.shape} vs pred {pred.shape}")
    if gt.size == 0:
        raise DomainError("empty class maps")
    if min(gt.min(), pred.min()) < 0 or max(gt.max(), pred.max()) >= num_classes:
        raise DataError("class id out of range")
    ious = []
    for c in range(num_classes):
        a = gt == c
        b = pred == c
        union = np.count_nonzero(a | b)
        if union:
            ious.append(np.count_nonzero(a & b) / union)
    return float(np.mean(ious))


def depth_mae(gt, pred) -> float:
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ShapeError(f"gt {gt.shape} vs pred {pred.shape}")
    return float(np.abs(gt - pred).mean())


def pixel_accuracy(gt, pred) -> float:
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise ShapeError(f"gt {gt.shape} vs pred {pred.shape}")
    return float(np.mean(gt == pred))


def diversity_score(samples, unobserved_mask) -> tuple[float, float]:
    """Mean pairwise pixel disagreement inside/outside the unobserved mask."""
    samples = [np.asarray(s) for s in samples]
    if len(samples) < 2:
        raise DomainError("diversity needs at least two samples")
    mask = np.asarray(unobserved_mask, dtype=bool)
    for s in samples:
        if s.shape != samples[0].shape or s.shape != mask.shape:
            raise ShapeError("sample/mask shape mismatch")
    n_in = int(mask.sum())
    n_out = mask.size - n_in
    acc_in = acc_out = 0.0
    pairs = 0
    for i in range(len(samples)):
        for j in range(i + 1, len(samples)):
            dis = samples[i] != samples[j]
            acc_in += float(dis[mask].sum()) / n_in if n_in else 0.0
            acc_out += float(dis[~mask].sum()) / n_out if n_out else 0.0
            pairs += 1
    return acc_in / pairs, acc_out / pairs


@dataclass
class EvalReport:
    """Metric means per (model, context, step) cell plus run provenance."""

    models: list
    contexts: list
    steps: list
    cells: dict  # (model, context, step) -> {metric: mean, "count": n}
    seeds: dict = field(default_factory=dict)
    fingerprint: dict = field(default_factory=dict)

    def cell(self, model: str, context: int, step: int) -> dict:
        return self.cells[(model, context, step)]

    def to_json(self) -> str:
        rows = [
            {"model": m, "context": c, "step": s, **self.cells[(m, c, s)]}
            for (m, c, s) in sorted(self.cells)
        ]
        return json.dumps(
            {
                "schema_version": SCHEMA_VERSION,
                "models": self.models,
                "contexts": self.contexts,
                "steps": self.steps,
                "seeds": self.seeds,
                "fingerprint": self.fingerprint,
                "cells": rows,
            },
            indent=2,
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        doc = json.loads(text)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported report schema {doc.get('schema_version')!r}")
        cells = {}
        for row in doc["cells"]:
            key = (row["model"], int(row["context"]), int(row["step"]))
            cells[key] = {k: v for k, v in row.items() if k not in ("model", "context", "step")}
        return EvalReport(doc["models"], doc["contexts"], doc["steps"], cells,
                          doc.get("seeds", {}), doc.get("fingerprint", {}))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for (m, c, s) in sorted(self.cells):
            cell = self.cells[(m, c, s)]
            w.writerow([m, c, s] + [f"{cell[f]:.6f}" for f in METRIC_FIELDS] + [cell["count"]])
        return buf.getvalue()


def nn_predict(frames_context, pose, g: PanoGeometry, num_classes: int = NUM_CLASSES,
               d_max: float = D_MAX):
    """Geometry-only baseline: reproject context, fill holes by nearest pixel."""
    pc = cloudmod.PointCloud(num_classes, d_max)
    for f in frames_context:
        cloudmod.insert_frame(pc, f, stride=1)
    guide = cloudmod.render_guidance(pc, pose, g)
    sem, depth = cloudmod.nn_fill(guide)
    return sem, depth, guide


def run_eval_grid(
    models: dict,
    world_seeds,
    g: PanoGeometry,
    trajectories_per_world: int = 2,
    contexts=(1, 2, 3),
    max_steps: int = 6,
    seed: int = 0,
    world_params=None,
    diversity_samples: int = 2,
    samples=None,
):
    """Evaluate predictors over held-out worlds.

    models maps a name to either the string "nearest_neighbor" or a
    trained StructureGenerator (evaluated recurrently with prior-mean z;
    diversity uses prior-sampled z). Pass precomputed `samples` to skip
    dataset generation. Returns an EvalReport covering the full grid.
    """
    if samples is None:
        if not list(world_seeds):
            raise DomainError("empty world set")
        samples = datasetmod.build_dataset(
            list(world_seeds), g, trajectories_per_world=trajectories_per_world,
            seed=seed, world_params=world_params)
    if not samples:
        raise DomainError("empty evaluation trajectory set")
    if not models:
        raise DomainError("no models requested")

    sums = {}

    def add(key, vals):
        cell = sums.setdefault(key, {f: 0.0 for f in METRIC_FIELDS} | {"count": 0})
        for f, v in vals.items():
            cell[f] += v
        cell["count"] += 1

    for name, model in models.items():
        for context in contexts:
            for ti, sample in enumerate(samples):
                frames = sample.frames
                if len(frames) <= context:
                    continue
                ctx = list(frames[:context])
                targets = frames[context:context + max_steps]
                poses = [f.pose for f in targets]
                if model == "nearest_neighbor":
                    pc = cloudmod.PointCloud(NUM_CLASSES, D_MAX)
                    for f in ctx:
                        cloudmod.insert_frame(pc, f, stride=1)
                    step_preds = []
                    for f in targets:
                        guide = cloudmod.render_guidance(pc, f.pose, g)
                        sem, depth = cloudmod.nn_fill(guide)
                        step_preds.append((sem, depth, ~guide.valid))
                    divs = [(0.0, 0.0)] * len(targets)
                else:
                    preds, guides = structgen.rollout(
                        model, ctx, poses, mode="recurrent", z_policy="prior_mean")
                    step_preds = [
                        (np.argmax(p[0], axis=0), p[1] * model.config.d_max, ~gd.valid)
                        for p, gd in zip(preds, guides)
                    ]
                    sample_rolls = [
                        structgen.rollout(model, ctx, poses, mode="recurrent",
                                          z_policy="prior_sample", seed=1000 * ti + k)[0]
                        for k in range(diversity_samples)
                    ]
                    divs = []
                    for t in range(len(targets)):
                        sems = [np.argmax(r[t][0], axis=0) for r in sample_rolls]
                        divs.append(diversity_score(sems, step_preds[t][2]))
                for t, f in enumerate(targets):
                    sem, depth, _ = step_preds[t]
                    add((name, context, t + 1), {
                        "miou": miou(f.sem, sem),
                        "depth_mae": depth_mae(f.depth, np.clip(depth, 0, D_MAX)),
                        "pixel_acc": pixel_accuracy(f.sem, sem),
                        "div_unobserved": divs[t][0],
                        "div_observed": divs[t][1],
                    })

    cells = {}
    for key, cell in sums.items():
        n = cell.pop("count")
        cells[key] = {f: cell[f] / n for f in METRIC_FIELDS} | {"count": n}
    return EvalReport(
        models=sorted(models), contexts=list(contexts),
        steps=list(range(1, max_steps + 1)), cells=cells,
        seeds={"eval": seed, "worlds": list(world_seeds) if world_seeds else []},
        fingerprint={"geometry": [g.width, g.height], "d_max": D_MAX},
    )
