import sys
import time

import numpy as np

from panoworld import cloud, evaluate, structgen
from panoworld.dataset import build_dataset
from panoworld.geom import PanoGeometry

seed = int(sys.argv[1])
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 3000
ohw = int(sys.argv[3]) if len(sys.argv) > 3 else 32

g = PanoGeometry(64, 32)
train_samples = build_dataset(list(range(50)), g, trajectories_per_world=2, seed=seed)

gr = float(sys.argv[4]) if len(sys.argv) > 4 else 0.0
cfg = structgen.StructConfig(enc_widths=(32, 64, 128, 128), out_head_width=ohw, guide_residual=gr)
model = structgen.StructureGenerator(cfg, seed=seed)
tc = structgen.TrainConfig(mode="teacher_forcing", steps=steps, seed=seed)
t0 = time.time()
curve = structgen.train_structure(model, train_samples, tc)
print(f"train {steps} steps in {time.time()-t0:.0f}s; loss {curve[0][1]:.2f} -> {curve[-1][1]:.2f}", flush=True)
structgen.save_model(model, f"/tmp/calib6c_s{seed}.ckpt")

eval_samples = build_dataset(list(range(1000, 1010)), g, trajectories_per_world=2, seed=999)
rep = evaluate.run_eval_grid({"nn": "nearest_neighbor", "struct": model},
                             list(range(1000, 1010)), g, samples=eval_samples,
                             contexts=(1, 2, 3), max_steps=3, seed=999)
g1 = []
for c in (1, 2, 3):
    for s in (1, 2, 3):
        nn = rep.cell("nn", c, s)["miou"]
        st = rep.cell("struct", c, s)["miou"]
        print(f"ctx {c} step {s}: nn {nn:.3f}  struct {st:.3f}  gap {100*(st-nn):+.1f} pts", flush=True)
nn1 = np.mean([rep.cell("nn", c, 1)["miou"] for c in (1, 2, 3)])
st1 = np.mean([rep.cell("struct", c, 1)["miou"] for c in (1, 2, 3)])
nn13 = np.mean([rep.cell("nn", c, s)["miou"] for c in (1, 2, 3) for s in (1, 2, 3)])
st13 = np.mean([rep.cell("struct", c, s)["miou"] for c in (1, 2, 3) for s in (1, 2, 3)])
print(f"1-step mean: nn {nn1:.3f} struct {st1:.3f} gap {100*(st1-nn1):+.1f}")
print(f"steps1-3 mean: nn {nn13:.3f} struct {st13:.3f} gap {100*(st13-nn13):+.1f}")
