import sys
import time

import numpy as np

from panoworld import evaluate, structgen
from panoworld.dataset import build_dataset
from panoworld.geom import PanoGeometry

ckpt = sys.argv[1]
steps = int(sys.argv[2])
lr = float(sys.argv[3])

g = PanoGeometry(64, 32)
model = structgen.load_model(ckpt)
train_samples = build_dataset(list(range(50)), g, trajectories_per_world=2, seed=0)
tc = structgen.TrainConfig(mode="teacher_forcing", steps=steps, lr=lr, seed=1)
t0 = time.time()
curve = structgen.train_structure(model, train_samples, tc)
print(f"continue {steps} steps lr {lr} in {time.time()-t0:.0f}s; loss {curve[0][1]:.2f} -> {curve[-1][1]:.2f}", flush=True)
structgen.save_model(model, ckpt + ".cont")

eval_samples = build_dataset(list(range(1000, 1010)), g, trajectories_per_world=2, seed=999)
rep = evaluate.run_eval_grid({"nn": "nearest_neighbor", "struct": model},
                             list(range(1000, 1010)), g, samples=eval_samples,
                             contexts=(1, 2, 3), max_steps=3, seed=999)
nn1 = np.mean([rep.cell("nn", c, 1)["miou"] for c in (1, 2, 3)])
st1 = np.mean([rep.cell("struct", c, 1)["miou"] for c in (1, 2, 3)])
nn13 = np.mean([rep.cell("nn", c, s)["miou"] for c in (1, 2, 3) for s in (1, 2, 3)])
st13 = np.mean([rep.cell("struct", c, s)["miou"] for c in (1, 2, 3) for s in (1, 2, 3)])
print(f"1-step mean: nn {nn1:.3f} struct {st1:.3f} gap {100*(st1-nn1):+.1f}")
print(f"steps1-3 mean: nn {nn13:.3f} struct {st13:.3f} gap {100*(st13-nn13):+.1f}")
