import sys
import time

import numpy as np

from panoworld import cloud, evaluate, structgen
from panoworld.dataset import build_dataset
from panoworld.geom import PanoGeometry

seed = int(sys.argv[1])
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 3000

g = PanoGeometry(64, 32)
t0 = time.time()
train_samples = build_dataset(list(range(50)), g, trajectories_per_world=2, seed=seed)
print(f"dataset: {len(train_samples)} trajectories in {time.time()-t0:.0f}s", flush=True)

model = structgen.StructureGenerator(structgen.StructConfig(enc_widths=(32, 64, 128, 128)), seed=seed)
tc = structgen.TrainConfig(mode="teacher_forcing", steps=steps, seed=seed)
t0 = time.time()
curve = structgen.train_structure(model, train_samples, tc)
print(f"train {steps} steps in {time.time()-t0:.0f}s; loss {curve[0][1]:.2f} -> {curve[-1][1]:.2f}", flush=True)
structgen.save_model(model, "/tmp/calib6b.ckpt")

eval_samples = build_dataset(list(range(1000, 1010)), g, trajectories_per_world=2, seed=999)
rep = evaluate.run_eval_grid({"nn": "nearest_neighbor", "struct": model},
                             list(range(1000, 1010)), g, samples=eval_samples,
                             contexts=(1, 2, 3), max_steps=3, seed=999)
for c in (1, 2, 3):
    for s in (1, 2, 3):
        nn = rep.cell("nn", c, s)["miou"]
        st = rep.cell("struct", c, s)["miou"]
        print(f"ctx {c} step {s}: nn {nn:.3f}  struct {st:.3f}  gap {100*(st-nn):+.1f} pts", flush=True)

# visible vs hole accuracy at context 1, step 1
va_s, ha_s, va_n, ha_n, vf = [], [], [], [], []
for sm in eval_samples:
    fr = sm.frames
    pc = cloud.PointCloud(13, 10.0)
    cloud.insert_frame(pc, fr[0], stride=1)
    guide = cloud.render_guidance(pc, fr[1].pose, g)
    gt = fr[1].sem
    preds, _ = structgen.rollout(model, fr[:1], [fr[1].pose], mode="recurrent", z_policy="prior_mean")
    ps = preds[0][0]
    nnp = evaluate.nn_predict(pc, fr[1].pose, g)[0]
    v = guide.valid
    vf.append(v.mean())
    va_s.append((ps[v] == gt[v]).mean()); ha_s.append((ps[~v] == gt[~v]).mean())
    va_n.append((nnp[v] == gt[v]).mean()); ha_n.append((nnp[~v] == gt[~v]).mean())
print(f"valid frac {np.mean(vf):.3f}")
print(f"visible acc: struct {np.mean(va_s):.3f}  nn {np.mean(va_n):.3f}")
print(f"hole acc:    struct {np.mean(ha_s):.3f}  nn {np.mean(ha_n):.3f}")
