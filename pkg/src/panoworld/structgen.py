"""Stage 1: stochastic Structure Generator for semantics and depth.

An encoder-decoder over sparse guidance images with a learned conditional
prior over a spatial latent noise tensor. Training minimizes
cross-entropy + weighted depth MAE + weighted KL(posterior || prior),
with the decoder fed posterior samples; inference uses the prior mean by
default. The posterior conditions on ground truth encoded by the shared
encoder with an all-valid mask.
"""

from dataclasses import dataclass, field

import numpy as np

from . import cloud as cloudmod
from . import geom
from .errors import DataError, DomainError, NumericError, ShapeError
from .palette import D_MAX, INVALID_CLASS, NUM_CLASSES, PALETTE
from .tinynn import Conv2d, ConvTranspose2d, ParamStore, adam_step, ops


@dataclass
class StructConfig:
    num_classes: int = NUM_CLASSES
    width: int = 64
    height: int = 32
    latent_channels: int = 8
    latent_height: int = 4
    latent_width: int = 8
    enc_widths: tuple = (16, 32, 64, 64)
    head_width: int = 32
    out_head_width: int = 0
    # Residual weight adding the guidance one-hot straight onto the output
    # logits. Observed pixels then default to their guidance class (one-hot
    # channels are all-zero at invalid pixels) and training capacity goes to
    # the holes; 0 disables the skip.
    guide_residual: float = 0.0
    lambda_ce: float = 1.0
    lambda_depth: float = 100.0
    lambda_kl: float = 0.5
    d_max: float = D_MAX
    log_var_clamp: float = 10.0

    def geometry(self) -> geom.PanoGeometry:
        return geom.PanoGeometry(self.width, self.height)


@dataclass
class GaussianParams:
    """Diagonal Gaussian over the latent tensor, log-variance form."""

    mu: np.ndarray
    log_var: np.ndarray


@dataclass
class TrainConfig:
    mode: str = "teacher_forcing"  # or "recurrent"
    lr: float = 1e-3
    batch: int = 8
    steps: int = 500
    seed: int = 0
    context_range: tuple = (1, 3)  # contexts trained on, both modes (inclusive)


class StructureGenerator:
    """Encoder-decoder with latent injection at the bottleneck."""

    def __init__(self, config: StructConfig = None, seed: int = 0):
        self.config = config or StructConfig()
        c = self.config
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        cin = c.num_classes + 2  # one-hot + depth + validity
        w1, w2, w3, w4 = c.enc_widths
        z = c.latent_channels
        self.enc = [
            Conv2d(self.store, "enc1", cin, w1, 3, 2, rng),
            Conv2d(self.store, "enc2", w1, w2, 3, 2, rng),
            Conv2d(self.store, "enc3", w2, w3, 3, 2, rng),
            Conv2d(self.store, "enc4", w3, w4, 3, 2, rng),
        ]
        self.prior_head = _gauss_head(self.store, "prior", w3, z, c.head_width, rng)
        self.post_head = _gauss_head(self.store, "post", w3, z, c.head_width, rng)
        self.dec = [
            ConvTranspose2d(self.store, "dec1", w4 + z, w4, 3, 2, rng),
            ConvTranspose2d(self.store, "dec2", w4 + w3, w2, 3, 2, rng),
            ConvTranspose2d(self.store, "dec3", w2 + w2, w1, 3, 2, rng),
            ConvTranspose2d(self.store, "dec4", w1 + w1, w1, 3, 2, rng),
        ]
        # The raw encoder input is concatenated back at full resolution
        # (finest skip) so observed guidance pixels can be copied through.
        # out_head_width > 0 inserts an extra full-resolution conv before
        # the logits; thin classes need more than one 3x3 at full res.
        if c.out_head_width:
            self.out_head = [
                Conv2d(self.store, "head1", w1 + cin, c.out_head_width, 3, 1, rng),
                Conv2d(self.store, "head2", c.out_head_width, c.num_classes + 1, 3, 1, rng),
            ]
        else:
            self.out_head = [Conv2d(self.store, "head", w1 + cin, c.num_classes + 1, 3, 1, rng)]

    # -- input encoding ----------------------------------------------------

    def encode_input(self, sem, depth, valid):
        """Stack one-hot semantics (+ all-zero at INVALID), depth/D_max, mask."""
        c = self.config
        sem = np.asarray(sem)
        if sem.ndim == 2:
            sem, depth, valid = sem[None], depth[None], valid[None]
        b, h, w = sem.shape
        if (h, w) != (c.height, c.width):
            raise ShapeError(f"guidance is {h}x{w}, config wants {c.height}x{c.width}")
        if sem.max() >= c.num_classes:
            raise DataError("class id out of range")
        onehot = np.zeros((b, c.num_classes, h, w))
        bi, yi, xi = np.nonzero(sem != INVALID_CLASS)
        onehot[bi, sem[bi, yi, xi], yi, xi] = 1.0
        d = (depth / c.d_max)[:, None]
        v = valid.astype(np.float64)[:, None]
        return np.concatenate([onehot, d, v], axis=1)

    # -- forward pieces (each returns caches for backward) -----------------

    def encoder_forward(self, x):
        feats, caches = [], []
        for layer in self.enc:
            a, cc = layer.forward(x)
            x, cr = ops.relu(a)
            feats.append(x)
            caches.append((cc, cr))
        return feats, caches

    def encoder_backward(self, caches, gfeats):
        g = None
        for lvl in range(3, -1, -1):
            gl = gfeats[lvl]
            if g is None:
                g = gl
            elif gl is not None:
                g = g + gl
            if g is None:
                continue
            cc, cr = caches[lvl]
            g = self.enc[lvl].backward(cc, ops.relu_backward(cr, g))
        return g

    def head_forward(self, layers, f):
        caches = []
        x = f
        for i, layer in enumerate(layers):
            a, cc = layer.forward(x)
            if i < len(layers) - 1:
                x, cr = ops.relu(a)
            else:
                x, cr = a, None
            caches.append((cc, cr))
        z = self.config.latent_channels
        mu = x[:, :z]
        lv_raw = x[:, z:]
        lim = self.config.log_var_clamp
        lv, cl = ops.clamp(lv_raw, -lim, lim)
        return GaussianParams(mu, lv), (caches, cl)

    def head_backward(self, layers, cache, gmu, glv):
        caches, cl = cache
        g = np.concatenate([gmu, ops.clamp_backward(cl, glv)], axis=1)
        for i in range(len(layers) - 1, -1, -1):
            cc, cr = caches[i]
            if cr is not None:
                g = ops.relu_backward(cr, g)
            g = layers[i].backward(cc, g)
        return g

    def decode_forward(self, bottleneck, skips, z):
        c = self.config
        zr, crz = ops.nearest_resize(z, bottleneck.shape[2:])
        x, csplit0 = ops.concat_channels([bottleneck, zr])
        caches = [("z", crz, csplit0)]
        for i, layer in enumerate(self.dec):
            a, cc = layer.forward(x)
            x, cr = ops.relu(a)
            skip = skips[2 - i] if i < 3 else skips[3]
            x, csp = ops.concat_channels([x, skip])
            caches.append((cc, cr, csp))
        hcaches = []
        for j, layer in enumerate(self.out_head):
            a, cc = layer.forward(x)
            x, cr = (ops.relu(a) if j < len(self.out_head) - 1 else (a, None))
            hcaches.append((cc, cr))
        logits_all = x
        caches.append(hcaches)
        sem_logits = logits_all[:, : c.num_classes]
        if c.guide_residual:
            # skips[3] is the raw encoder input; its one-hot block is constant
            # with respect to the parameters, so backward needs no change.
            sem_logits = sem_logits + c.guide_residual * skips[3][:, : c.num_classes]
        depth_raw = logits_all[:, c.num_classes]
        depth01, cs = ops.sigmoid(depth_raw)
        caches.append(cs)
        return sem_logits, depth01, caches

    def decode_backward(self, caches, g_logits, g_depth01):
        cs = caches[-1]
        g_depth_raw = ops.sigmoid_backward(cs, g_depth01)
        g_all = np.concatenate([g_logits, g_depth_raw[:, None]], axis=1)
        g = g_all
        for j in range(len(self.out_head) - 1, -1, -1):
            cc, cr = caches[-2][j]
            if cr is not None:
                g = ops.relu_backward(cr, g)
            g = self.out_head[j].backward(cc, g)
        gskips = [None, None, None, None]
        for i in range(3, -1, -1):
            cc, cr, csp = caches[i + 1]
            g, gskip = ops.concat_channels_backward(csp, g)
            gskips[2 - i if i < 3 else 3] = gskip
            g = ops.relu_backward(cr, g)
            g = self.dec[i].backward(cc, g)
        _, crz, csplit0 = caches[0]
        g_bottleneck, gzr = ops.concat_channels_backward(csplit0, g)
        gz = ops.nearest_resize_backward(crz, gzr)
        return g_bottleneck, gskips, gz

    def parameters(self) -> dict:
        return self.store.params


def _gauss_head(store, name, cin, z, width, rng):
    return [
        Conv2d(store, f"{name}1", cin, width, 3, 1, rng),
        Conv2d(store, f"{name}2", width, width, 3, 1, rng),
        Conv2d(store, f"{name}3", width, 2 * z, 3, 1, rng),
    ]


# ---------------------------------------------------------------------------
# Spec-facing operations.


def guide_to_batch(guides):
    """Stack GuidanceImages into (sem, depth, valid) batch arrays."""
    if isinstance(guides, cloudmod.GuidanceImage):
        guides = [guides]
    sem = np.stack([g.sem for g in guides])
    depth = np.stack([g.depth for g in guides])
    valid = np.stack([g.valid for g in guides])
    return sem, depth, valid


def encode(model: StructureGenerator, guide):
    """Encode guidance into (bottleneck, skip features)."""
    sem, depth, valid = guide_to_batch(guide)
    x = model.encode_input(sem, depth, valid)
    feats, _ = model.encoder_forward(x)
    return feats[3], feats[:3] + [x]


def prior(model: StructureGenerator, guide) -> GaussianParams:
    sem, depth, valid = guide_to_batch(guide)
    x = model.encode_input(sem, depth, valid)
    feats, _ = model.encoder_forward(x)
    gp, _ = model.head_forward(model.prior_head, feats[2])
    return gp


def posterior(model: StructureGenerator, gt_sem, gt_depth) -> GaussianParams:
    """Posterior conditioned on ground truth (encoded fully valid)."""
    gt_sem = np.asarray(gt_sem)
    if gt_sem.ndim == 2:
        gt_sem, gt_depth = gt_sem[None], np.asarray(gt_depth)[None]
    valid = np.ones(gt_sem.shape, dtype=bool)
    x = model.encode_input(gt_sem, gt_depth, valid)
    feats, _ = model.encoder_forward(x)
    gp, _ = model.head_forward(model.post_head, feats[2])
    return gp


def sample_z(gp: GaussianParams, eps: np.ndarray) -> np.ndarray:
    """Reparameterized sample z = mu + exp(log_var / 2) * eps."""
    if eps.shape != gp.mu.shape:
        raise ShapeError(f"eps shape {eps.shape} != latent {gp.mu.shape}")
    return gp.mu + np.exp(0.5 * gp.log_var) * eps


def kl_diag_gauss(q: GaussianParams, p: GaussianParams) -> float:
    """Closed-form KL(q || p), summed over latents, batch-averaged."""
    val, _ = ops.kl_diag_gauss(q.mu, q.log_var, p.mu, p.log_var)
    return val


def decode(model: StructureGenerator, bottleneck, skips, z):
    """Decode to (semantic logits (B,C,H,W), depth01 (B,H,W))."""
    sem_logits, depth01, _ = model.decode_forward(bottleneck, skips, z)
    return sem_logits, depth01


def structure_loss(model_or_config, sem_logits, depth01, gt_sem, gt_depth01, q, p):
    """Weighted CE + depth MAE + KL; returns (total, components dict)."""
    c = model_or_config.config if isinstance(model_or_config, StructureGenerator) else model_or_config
    if np.asarray(gt_sem).max() >= c.num_classes:
        raise DataError("ground-truth class id out of range")
    ce, _ = ops.softmax_cross_entropy(sem_logits, gt_sem)
    mae, _ = ops.mae_loss(depth01, gt_depth01)
    kl = kl_diag_gauss(q, p)
    total = c.lambda_ce * ce + c.lambda_depth * mae + c.lambda_kl * kl
    return total, {"ce": ce, "depth": mae, "kl": kl}


# ---------------------------------------------------------------------------
# Rollout.


def _prediction_to_frame(config, sem_logits, depth01, pose):
    sem = np.argmax(sem_logits, axis=0)
    depth = np.clip(depth01, 1e-6, 1.0 - 1e-9) * config.d_max
    rgb = PALETTE[sem]
    return cloudmod.PanoFrame(sem=sem, depth=depth, rgb=rgb, pose=pose)


def predict_step(model: StructureGenerator, guide, z):
    """One forward pass on a single guidance image; returns (logits, depth01)."""
    sem, depth, valid = guide_to_batch(guide)
    x = model.encode_input(sem, depth, valid)
    feats, _ = model.encoder_forward(x)
    sem_logits, depth01, _ = model.decode_forward(feats[3], feats[:3] + [x], z)
    return sem_logits[0], depth01[0]


def rollout(
    model: StructureGenerator,
    context,
    trajectory,
    mode: str = "recurrent",
    z_policy: str = "prior_mean",
    seed: int = 0,
    gt_frames=None,
):
    """Predict (sem, depth) along a pose trajectory.

    mode 'recurrent' feeds predictions back into the point cloud;
    'teacher_forcing' inserts the supplied ground-truth frames instead.
    z_policy is 'prior_mean', 'prior_sample' (seeded) or 'posterior'
    (requires gt_frames). Returns (predictions, guidance images) lists.
    """
    if not context:
        raise DomainError("rollout needs at least one context frame")
    if not trajectory:
        raise DomainError("rollout needs a non-empty trajectory")
    if mode not in ("recurrent", "teacher_forcing"):
        raise DomainError(f"unknown rollout mode {mode!r}")
    if (mode == "teacher_forcing" or z_policy == "posterior") and (
        gt_frames is None or len(gt_frames) < len(trajectory)
    ):
        raise DomainError("ground-truth frames required for this mode/policy")
    c = model.config
    g = c.geometry()
    pc = cloudmod.PointCloud(c.num_classes, c.d_max)
    for f in context:
        cloudmod.insert_frame(pc, f, stride=1)
    rng = np.random.default_rng(seed)
    preds, guides = [], []
    for t, pose in enumerate(trajectory):
        guide = cloudmod.render_guidance(pc, pose, g)
        guides.append(guide)
        sem, depth, valid = guide_to_batch(guide)
        x = model.encode_input(sem, depth, valid)
        feats, _ = model.encoder_forward(x)
        gp, _ = model.head_forward(model.prior_head, feats[2])
        if z_policy == "prior_mean":
            z = gp.mu
        elif z_policy == "prior_sample":
            z = sample_z(gp, rng.standard_normal(gp.mu.shape))
        elif z_policy == "posterior":
            gq = posterior(model, gt_frames[t].sem, gt_frames[t].depth)
            z = sample_z(gq, rng.standard_normal(gq.mu.shape))
        else:
            raise DomainError(f"unknown z policy {z_policy!r}")
        sem_logits, depth01, _ = model.decode_forward(feats[3], feats[:3] + [x], z)
        preds.append((sem_logits[0], depth01[0]))
        if t + 1 < len(trajectory):
            if mode == "teacher_forcing":
                cloudmod.insert_frame(pc, gt_frames[t], stride=1)
            else:
                frame = _prediction_to_frame(c, sem_logits[0], depth01[0], pose)
                cloudmod.insert_frame(pc, frame, stride=1)
    return preds, guides


# ---------------------------------------------------------------------------
# Training.


def make_teacher_forcing_pairs(samples, config: StructConfig):
    """Precompute (guidance, target) pairs with all-ground-truth clouds."""
    g = config.geometry()
    pairs = []
    for sample in samples:
        frames = sample.frames if hasattr(sample, "frames") else sample
        pc = cloudmod.PointCloud(config.num_classes, config.d_max)
        cloudmod.insert_frame(pc, frames[0], stride=1)
        for t in range(1, len(frames)):
            guide = cloudmod.render_guidance(pc, frames[t].pose, g)
            pairs.append(
                {
                    "guide_sem": guide.sem,
                    "guide_depth": guide.depth,
                    "guide_valid": guide.valid,
                    "gt_sem": frames[t].sem,
                    "gt_depth01": frames[t].depth / config.d_max,
                    "context": t,
                }
            )
            if t + 1 < len(frames):
                cloudmod.insert_frame(pc, frames[t], stride=1)
    return pairs


def _recurrent_pair(model, frames, context, target, seed):
    """Guidance at `target` with model predictions fed back after `context`."""
    c = model.config
    g = c.geometry()
    pc = cloudmod.PointCloud(c.num_classes, c.d_max)
    for f in frames[:context]:
        cloudmod.insert_frame(pc, f, stride=1)
    for t in range(context, target):
        guide = cloudmod.render_guidance(pc, frames[t].pose, g)
        sem, depth, valid = guide_to_batch(guide)
        x = model.encode_input(sem, depth, valid)
        feats, _ = model.encoder_forward(x)
        gp, _ = model.head_forward(model.prior_head, feats[2])
        sem_logits, depth01, _ = model.decode_forward(feats[3], feats[:3] + [x], gp.mu)
        frame = _prediction_to_frame(c, sem_logits[0], depth01[0], frames[t].pose)
        cloudmod.insert_frame(pc, frame, stride=1)
    guide = cloudmod.render_guidance(pc, frames[target].pose, g)
    return {
        "guide_sem": guide.sem,
        "guide_depth": guide.depth,
        "guide_valid": guide.valid,
        "gt_sem": frames[target].sem,
        "gt_depth01": frames[target].depth / c.d_max,
    }


def train_step(model: StructureGenerator, batch, rng, lr: float):
    """One optimization step on a batch of (guidance, target) pairs.

    Returns (total, components). Gradients flow through the decoder,
    posterior sample, both Gaussian heads and both encoder branches.
    """
    model.store.zero_grad()
    gsem = np.stack([p["guide_sem"] for p in batch])
    gdep = np.stack([p["guide_depth"] for p in batch])
    gval = np.stack([p["guide_valid"] for p in batch])
    tsem = np.stack([p["gt_sem"] for p in batch])
    tdep01 = np.stack([p["gt_depth01"] for p in batch])
    eps = rng.standard_normal(
        (gsem.shape[0], model.config.latent_channels,
         model.config.latent_height, model.config.latent_width))
    total, comps = _loss_and_grads(model, gsem, gdep, gval, tsem, tdep01, eps)
    adam_step(model.store, lr)
    return total, comps


def train_step_loss_and_grads(model: StructureGenerator, guide, gt_sem, gt_depth01, eps):
    """Full training loss with gradients accumulated (no optimizer step)."""
    gsem, gdep, gval = guide_to_batch(guide)
    total, _ = _loss_and_grads(model, gsem, gdep, gval, gt_sem, gt_depth01, eps)
    return total


def _loss_and_grads(model, gsem, gdep, gval, tsem, tdep01, eps):
    c = model.config

    x_g = model.encode_input(gsem, gdep, gval)
    feats_g, caches_g = model.encoder_forward(x_g)
    gp_p, cache_p = model.head_forward(model.prior_head, feats_g[2])

    ones = np.ones(tsem.shape, dtype=bool)
    x_t = model.encode_input(tsem, tdep01 * c.d_max, ones)
    feats_t, caches_t = model.encoder_forward(x_t)
    gp_q, cache_q = model.head_forward(model.post_head, feats_t[2])

    z = gp_q.mu + np.exp(0.5 * gp_q.log_var) * eps
    sem_logits, depth01, caches_d = model.decode_forward(feats_g[3], feats_g[:3] + [x_g], z)

    ce, cce = ops.softmax_cross_entropy(sem_logits, tsem)
    mae, cmae = ops.mae_loss(depth01, tdep01)
    kl, ckl = ops.kl_diag_gauss(gp_q.mu, gp_q.log_var, gp_p.mu, gp_p.log_var)
    total = c.lambda_ce * ce + c.lambda_depth * mae + c.lambda_kl * kl
    if not np.isfinite(total):
        raise NumericError(f"non-finite loss: ce={ce} depth={mae} kl={kl}")

    g_logits = ops.softmax_cross_entropy_backward(cce, c.lambda_ce)
    g_depth01 = ops.mae_loss_backward(cmae, c.lambda_depth)
    g_bot, g_skips, gz = model.decode_backward(caches_d, g_logits, g_depth01)

    g_mu_q = gz.copy()
    g_lv_q = gz * eps * 0.5 * np.exp(0.5 * gp_q.log_var)
    k_mu_q, k_lv_q, k_mu_p, k_lv_p = ops.kl_diag_gauss_backward(ckl, c.lambda_kl)
    g_mu_q += k_mu_q
    g_lv_q += k_lv_q

    gf3_t = model.head_backward(model.post_head, cache_q, g_mu_q, g_lv_q)
    model.encoder_backward(caches_t, [None, None, gf3_t, None])

    gf3_p = model.head_backward(model.prior_head, cache_p, k_mu_p, k_lv_p)
    gfeats = [g_skips[0], g_skips[1], g_skips[2] + gf3_p, g_bot]
    model.encoder_backward(caches_g, gfeats)
    return total, {"ce": ce, "depth": mae, "kl": kl}


def train_structure(model: StructureGenerator, samples, config: TrainConfig):
    """Train on trajectory samples; returns the loss curve.

    Curve rows are (step, total, ce, depth, kl). Deterministic in
    config.seed. Teacher-forcing pairs are precomputed; recurrent mode
    regenerates its guidance from current-model rollouts each step.
    """
    if not samples:
        raise DomainError("empty training dataset")
    rng = np.random.default_rng(config.seed)
    curve = []
    tf_pairs = None
    if config.mode == "teacher_forcing":
        lo, hi = config.context_range
        tf_pairs = [p for p in make_teacher_forcing_pairs(samples, model.config)
                    if lo <= p["context"] <= hi]
        if not tf_pairs:
            raise DomainError("no teacher-forcing pairs inside context_range")
    for step in range(config.steps):
        if config.mode == "teacher_forcing":
            idx = rng.integers(len(tf_pairs), size=config.batch)
            batch = [tf_pairs[i] for i in idx]
        elif config.mode == "recurrent":
            batch = []
            for _ in range(config.batch):
                frames = samples[int(rng.integers(len(samples)))].frames
                cmax = min(config.context_range[1], len(frames) - 1)
                ctx = int(rng.integers(config.context_range[0], cmax + 1))
                tgt = int(rng.integers(ctx, len(frames)))
                batch.append(_recurrent_pair(model, frames, ctx, tgt, config.seed))
        else:
            raise DomainError(f"unknown training mode {config.mode!r}")
        try:
            total, comps = train_step(model, batch, rng, config.lr)
        except NumericError as e:
            raise NumericError(f"step {step}: {e}") from e
        curve.append((step, total, comps["ce"], comps["depth"], comps["kl"]))
    return curve


def save_model(model: StructureGenerator, path) -> None:
    from dataclasses import asdict

    from .tinynn import save_checkpoint

    cfg = asdict(model.config)
    cfg["enc_widths"] = list(cfg["enc_widths"])
    save_checkpoint(path, model.store.params, {"kind": "structure", "config": cfg})


def load_model(path) -> StructureGenerator:
    from .tinynn import load_checkpoint

    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "structure":
        raise DataError(f"checkpoint kind {meta.get('kind')!r} is not 'structure'")
    cfg = dict(meta["config"])
    cfg["enc_widths"] = tuple(cfg["enc_widths"])
    model = StructureGenerator(StructConfig(**cfg))
    for name, arr in tensors.items():
        if name not in model.store.params or model.store.params[name].shape != arr.shape:
            raise DataError(f"checkpoint/config mismatch at tensor {name!r}")
        model.store.params[name][...] = arr
    return model
