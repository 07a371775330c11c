import sys
import time

import numpy as np

from panoworld import evaluate, structgen
from panoworld.dataset import build_dataset
from panoworld.geom import PanoGeometry

seed = int(sys.argv[1])
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 2000

g = PanoGeometry(64, 32)
t0 = time.time()
train_samples = build_dataset(list(range(50)), g, trajectories_per_world=2, seed=seed)
print(f"dataset: {len(train_samples)} trajectories in {time.time()-t0:.0f}s", flush=True)

model = structgen.StructureGenerator(structgen.StructConfig(enc_widths=(32, 64, 128, 128)), seed=seed)
tc = structgen.TrainConfig(mode="teacher_forcing", steps=steps, seed=seed)
t0 = time.time()
curve = structgen.train_structure(model, train_samples, tc)
print(f"train {steps} steps in {time.time()-t0:.0f}s; loss {curve[0][1]:.2f} -> {curve[-1][1]:.2f}", flush=True)
for i in range(0, len(curve), max(1, len(curve)//10)):
    print("  ", curve[i], flush=True)

eval_samples = build_dataset(list(range(1000, 1010)), g, trajectories_per_world=2, seed=999)
rep = evaluate.run_eval_grid({"nn": "nearest_neighbor", "struct": model},
                             list(range(1000, 1010)), g, samples=eval_samples,
                             contexts=(1,), max_steps=3, seed=999)
for s in (1, 2, 3):
    nn = rep.cell("nn", 1, s)["miou"]
    st = rep.cell("struct", 1, s)["miou"]
    print(f"step {s}: nn {nn:.3f}  struct {st:.3f}  gap {100*(st-nn):+.1f} pts", flush=True)
