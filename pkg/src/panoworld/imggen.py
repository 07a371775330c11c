"""Stage 2: RGB synthesis from semantics, depth and sparse RGB guidance.

A coarse-to-fine stack of residual blocks, each holding two spatially-
adaptive modulation sites: one conditioned on the semantic/depth maps and
one on partial-convolution features of the sparse RGB guidance. Trained
adversarially with a hinge loss plus feature-matching and perceptual L1
terms over a fixed random conv feature extractor. A deterministic
palette colorizer is provided as the non-adversarial fallback.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError, NumericError, ShapeError
from .palette import D_MAX, NUM_CLASSES, PALETTE
from .tinynn import Conv2d, ParamStore, PartialConv2d, Spade, adam_step, ops


@dataclass
class ImgConfig:
    num_classes: int = NUM_CLASSES
    width: int = 128
    height: int = 64
    blocks: int = 4
    base_width: int = 16
    spade_hidden: int = 16
    guide_features: int = 8
    disc_widths: tuple = (16, 32, 64)
    d_max: float = D_MAX
    lambda_gan: float = 1.0
    lambda_perc: float = 10.0
    lambda_fm: float = 10.0
    lr: float = 2e-4


def colorize(sem, depth, d_max: float = D_MAX, num_classes: int = NUM_CLASSES):
    """Deterministic palette colorizer: class color shaded by depth.

    Shading factor is 1 - 0.5 * depth / d_max; output is uint8 RGB.
    """
    sem = np.asarray(sem)
    if sem.min() < 0 or sem.max() >= num_classes:
        raise DataError("class id out of range")
    shade = 1.0 - 0.5 * np.clip(np.asarray(depth, dtype=np.float64), 0, d_max) / d_max
    return (PALETTE[sem].astype(np.float64) * shade[..., None]).astype(np.uint8)


def _onehot(sem, num_classes):
    b, h, w = sem.shape
    out = np.zeros((b, num_classes, h, w))
    bi, yi, xi = np.ogrid[:b, :h, :w]
    out[bi, sem, yi, xi] = 1.0
    return out


class FeatureExtractor:
    """Fixed seeded conv+relu stack exposing intermediate feature maps."""

    def __init__(self, seed: int = 0, widths=(8, 16, 16), strides=(1, 2, 2)):
        rng = np.random.default_rng(seed)
        self.kernels = []
        self.strides = strides
        cin = 3
        for w, _s in zip(widths, strides):
            std = np.sqrt(2.0 / (cin * 9))
            self.kernels.append(rng.normal(0.0, std, size=(w, cin, 3, 3)))
            cin = w

    def forward(self, x):
        feats, caches = [], []
        for k, s in zip(self.kernels, self.strides):
            a, cc = ops.conv2d_circx(x, k, np.zeros(k.shape[0]), s)
            x, cr = ops.relu(a)
            feats.append(x)
            caches.append((cc, cr, k, s, a.shape))
        return feats, caches

    def backward_input(self, caches, gfeats):
        """Gradient w.r.t. the input image; extractor weights stay frozen."""
        g = None
        for i in range(len(self.kernels) - 1, -1, -1):
            gi = gfeats[i]
            if g is None:
                g = gi
            elif gi is not None:
                g = g + gi
            if g is None:
                continue
            cc, cr, k, s, _ = caches[i]
            g = ops.relu_backward(cr, g)
            gx, _, _ = ops.conv2d_circx_backward(cc, g)
            g = gx
        return g


class ImageGenerator:
    """Residual generator with two modulation sites per block."""

    def __init__(self, config: ImgConfig = None, seed: int = 0):
        self.config = config or ImgConfig()
        c = self.config
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        w = c.base_width
        cond_ch = c.num_classes + 1
        self.stem = Conv2d(self.store, "stem", cond_ch, w, 3, 1, rng)
        self.blocks = []
        for i in range(c.blocks):
            blk = {
                "spade_sd": Spade(self.store, f"b{i}.spade_sd", w, cond_ch, c.spade_hidden, rng),
                "conv1": Conv2d(self.store, f"b{i}.conv1", w, w, 3, 1, rng),
                "pconv": PartialConv2d(self.store, f"b{i}.pconv", 3, c.guide_features, 3, rng),
                "spade_rgb": Spade(self.store, f"b{i}.spade_rgb", w, c.guide_features, c.spade_hidden, rng),
                "conv2": Conv2d(self.store, f"b{i}.conv2", w, w, 3, 1, rng),
            }
            self.blocks.append(blk)
        self.head = Conv2d(self.store, "head", w, 3, 3, 1, rng)

    def _scales(self):
        c = self.config
        return [
            (c.height >> (c.blocks - 1 - i), c.width >> (c.blocks - 1 - i))
            for i in range(c.blocks)
        ]

    def forward(self, sem, depth01, guide_rgb, mask):
        """sem (B,H,W) int; depth01 (B,H,W); guide_rgb (B,3,H,W); mask (B,1,H,W)."""
        c = self.config
        if sem.shape[1:] != (c.height, c.width):
            raise ShapeError(f"input is {sem.shape[1:]}, config wants {(c.height, c.width)}")
        cond = np.concatenate([_onehot(sem, c.num_classes), depth01[:, None]], axis=1)
        scales = self._scales()
        x0, c_r0 = ops.nearest_resize(cond, scales[0])
        x, c_stem = self.stem.forward(x0)
        caches = {"stem": c_stem, "blocks": []}
        rgbm = guide_rgb * mask
        for i, blk in enumerate(self.blocks):
            rgb_s, c_rr = ops.nearest_resize(rgbm, scales[i])
            mask_s, _ = ops.nearest_resize(mask, scales[i])
            (gfeat, _), c_pc = blk["pconv"].forward(rgb_s, mask_s)
            h1, c_s1 = blk["spade_sd"].forward(x, cond)
            h2, c_a1 = ops.relu(h1)
            h3, c_c1 = blk["conv1"].forward(h2)
            h4, c_s2 = blk["spade_rgb"].forward(h3, gfeat)
            h5, c_a2 = ops.relu(h4)
            h6, c_c2 = blk["conv2"].forward(h5)
            x = x + h6
            bc = {"pc": c_pc, "rr": c_rr, "s1": c_s1, "a1": c_a1, "c1": c_c1,
                  "s2": c_s2, "a2": c_a2, "c2": c_c2, "up": None}
            if i + 1 < c.blocks:
                x, c_up = ops.nearest_resize(x, scales[i + 1])
                bc["up"] = c_up
            caches["blocks"].append(bc)
        hf, c_af = ops.relu(x)
        ho, c_h = self.head.forward(hf)
        rgb, c_sg = ops.sigmoid(ho)
        caches["af"] = c_af
        caches["h"] = c_h
        caches["sg"] = c_sg
        return rgb, caches

    def backward(self, caches, g_rgb):
        g = ops.sigmoid_backward(caches["sg"], g_rgb)
        g = self.head.backward(caches["h"], g)
        g = ops.relu_backward(caches["af"], g)
        for i in range(len(self.blocks) - 1, -1, -1):
            blk = self.blocks[i]
            bc = caches["blocks"][i]
            if bc["up"] is not None:
                g = ops.nearest_resize_backward(bc["up"], g)
            gh6 = g
            gh5 = blk["conv2"].backward(bc["c2"], gh6)
            gh4 = ops.relu_backward(bc["a2"], gh5)
            gh3, g_gfeat = blk["spade_rgb"].backward(bc["s2"], gh4)
            gh2 = blk["conv1"].backward(bc["c1"], gh3)
            gh1 = ops.relu_backward(bc["a1"], gh2)
            gx_s1, _ = blk["spade_sd"].backward(bc["s1"], gh1)
            blk["pconv"].backward(bc["pc"], g_gfeat)
            g = g + gx_s1
        self.stem.backward(caches["stem"], g)


class Discriminator:
    """Strided conv patch classifier over concat(RGB, one-hot sem, depth)."""

    def __init__(self, config: ImgConfig = None, seed: int = 100):
        self.config = config or ImgConfig()
        c = self.config
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        cin = 3 + c.num_classes + 1
        self.layers = []
        for i, w in enumerate(c.disc_widths):
            self.layers.append(Conv2d(self.store, f"d{i}", cin, w, 3, 2, rng))
            cin = w
        self.score = Conv2d(self.store, "score", cin, 1, 3, 1, rng)

    def forward(self, rgb, cond):
        """Returns (score map, intermediate features, cache)."""
        x = np.concatenate([rgb, cond], axis=1)
        feats, caches = [], []
        for layer in self.layers:
            a, cc = layer.forward(x)
            x, cr = ops.leaky_relu(a)
            feats.append(x)
            caches.append((cc, cr))
        s, c_s = self.score.forward(x)
        return s, feats, (caches, c_s, rgb.shape[1])

    def backward(self, cache, g_score, g_feats=None):
        """Backprop to the RGB input (cond gradient is discarded)."""
        caches, c_s, rgb_ch = cache
        g = self.score.backward(c_s, g_score) if g_score is not None else None
        for i in range(len(self.layers) - 1, -1, -1):
            gi = None if g_feats is None else g_feats[i]
            if g is None:
                g = gi
            elif gi is not None:
                g = g + gi
            cc, cr = caches[i]
            g = ops.leaky_relu_backward(cr, g)
            g = self.layers[i].backward(cc, g)
        return g[:, :rgb_ch]


def make_condition(sem, depth01, num_classes):
    return np.concatenate([_onehot(sem, num_classes), depth01[:, None]], axis=1)


def generate_rgb(gen: ImageGenerator, sem, depth01, guide_rgb, mask):
    """Deterministic forward synthesis; output in (0,1)^3 per pixel."""
    rgb, _ = gen.forward(sem, depth01, guide_rgb, mask)
    return rgb


def generator_loss(gen_out, real, disc, disc_cond, fx: FeatureExtractor, config: ImgConfig):
    """Hinge-GAN + perceptual + feature-matching generator objective.

    Returns (total, components, backward) where backward() yields the
    gradient w.r.t. gen_out (parameter grads land in disc's store and are
    the caller's job to discard before the discriminator update).
    """
    c = config
    s_f, df_f, dc_f = disc.forward(gen_out, disc_cond)
    s_r, df_r, _ = disc.forward(real, disc_cond)
    pf_f, fc_f = fx.forward(gen_out)
    pf_r, _ = fx.forward(real)

    gan = -float(s_f.mean())
    n = len(pf_f)
    perc_terms = [np.abs(r - f) for r, f in zip(pf_r, pf_f)]
    perc = float(sum(t.mean() for t in perc_terms) / n)
    m = max(len(df_f), 1)
    fm_terms = [np.abs(r - f) for r, f in zip(df_r, df_f)]
    fm = float(sum(t.mean() for t in fm_terms) / m)
    total = c.lambda_gan * gan + c.lambda_perc * perc + c.lambda_fm * fm
    comps = {"gan": gan, "perc": perc, "fm": fm}

    def backward():
        g_score = np.full(s_f.shape, -c.lambda_gan / s_f.size)
        g_dfeats = [
            -np.sign(r - f) * (c.lambda_fm / (m * f.size)) for r, f in zip(df_r, df_f)
        ]
        g_img = disc.backward(dc_f, g_score, g_dfeats)
        g_pfeats = [
            -np.sign(r - f) * (c.lambda_perc / (n * f.size)) for r, f in zip(pf_r, pf_f)
        ]
        g_img = g_img + fx.backward_input(fc_f, g_pfeats)
        return g_img

    return total, comps, backward


def discriminator_loss(disc, real, fake, disc_cond):
    """Hinge loss; returns (value, backward) updating disc's grads."""
    s_r, _, dc_r = disc.forward(real, disc_cond)
    s_f, _, dc_f = disc.forward(fake, disc_cond)
    loss = float(
        -np.minimum(0.0, -1.0 + s_r).mean() - np.minimum(0.0, -1.0 - s_f).mean()
    )

    def backward():
        g_r = np.where(s_r < 1.0, -1.0 / s_r.size, 0.0)
        disc.backward(dc_r, g_r)
        g_f = np.where(s_f > -1.0, 1.0 / s_f.size, 0.0)
        disc.backward(dc_f, g_f)

    return loss, backward


def train_image_generator(gen: ImageGenerator, disc: Discriminator, pairs, steps: int,
                          seed: int = 0, fx_seed: int = 7):
    """Alternating single-step G/D Adam updates.

    pairs: list of dicts with sem, depth01, guide_rgb, mask, real. With
    lambda_gan == 0 the discriminator is frozen and the generator trains
    as a pure feature-regression. Returns the loss curve.
    """
    if not pairs:
        raise DomainError("empty image-generator dataset")
    c = gen.config
    fx = FeatureExtractor(fx_seed)
    rng = np.random.default_rng(seed)
    curve = []
    for step in range(steps):
        idx = rng.integers(len(pairs), size=1)
        batch = [pairs[i] for i in idx]
        sem = np.stack([p["sem"] for p in batch])
        depth01 = np.stack([p["depth01"] for p in batch])
        guide_rgb = np.stack([p["guide_rgb"] for p in batch])
        mask = np.stack([p["mask"] for p in batch])
        real = np.stack([p["real"] for p in batch])
        disc_cond = make_condition(sem, depth01, c.num_classes)

        d_val = 0.0
        if c.lambda_gan > 0:
            fake, _ = gen.forward(sem, depth01, guide_rgb, mask)
            disc.store.zero_grad()
            d_val, d_back = discriminator_loss(disc, real, fake, disc_cond)
            d_back()
            adam_step(disc.store, c.lr)

        gen.store.zero_grad()
        disc.store.zero_grad()
        fake, g_cache = gen.forward(sem, depth01, guide_rgb, mask)
        g_val, comps, g_back = generator_loss(fake, real, disc, disc_cond, fx, c)
        if not np.isfinite(g_val) or not np.isfinite(d_val):
            raise NumericError(f"non-finite loss at step {step}: G={g_val} D={d_val} {comps}")
        gen.backward(g_cache, g_back())
        disc.store.zero_grad()  # G-step byproducts must not leak into D
        adam_step(gen.store, c.lr)
        curve.append((step, g_val, comps["gan"], comps["perc"], comps["fm"], d_val))
    return curve


def save_generator(gen: ImageGenerator, path) -> None:
    from dataclasses import asdict

    from .tinynn import save_checkpoint

    save_checkpoint(path, gen.store.params, {"kind": "image", "config": asdict(gen.config)})


def load_generator(path) -> ImageGenerator:
    from .tinynn import load_checkpoint

    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "image":
        raise DataError(f"checkpoint kind {meta.get('kind')!r} is not 'image'")
    cfg = dict(meta["config"])
    cfg["disc_widths"] = tuple(cfg["disc_widths"])
    gen = ImageGenerator(ImgConfig(**cfg))
    for name, arr in tensors.items():
        if name not in gen.store.params or gen.store.params[name].shape != arr.shape:
            raise DataError(f"checkpoint/config mismatch at tensor {name!r}")
        gen.store.params[name][...] = arr
    return gen
