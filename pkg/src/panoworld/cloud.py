"""Accumulating semantic point-cloud memory and guidance-image rendering.

The cloud stores back-projected pixels from previous panoramas. Rendering
re-projects every point into a query pose and z-buffers per pixel to build
sparse guidance images; nn_fill is the non-learned hole-filling baseline.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geom
from .errors import DataError, DomainError, NoContextError, ShapeError
from .palette import D_MAX, INVALID_CLASS


@dataclass
class PanoFrame:
    """Aligned equirectangular semantic/depth/RGB observation at a pose."""

    sem: np.ndarray  # (H, W) int class ids
    depth: np.ndarray  # (H, W) float meters, Euclidean ray length
    rgb: np.ndarray  # (H, W, 3) uint8
    pose: geom.Pose

    def geometry(self) -> geom.PanoGeometry:
        h, w = self.sem.shape
        return geom.PanoGeometry(w, h)

    def validate(self, num_classes: int, d_max: float = D_MAX) -> None:
        if self.depth.shape != self.sem.shape or self.rgb.shape[:2] != self.sem.shape:
            raise ShapeError("sem/depth/rgb shapes disagree")
        if self.sem.min() < 0 or self.sem.max() >= num_classes:
            raise DataError(f"class id out of range [0, {num_classes})")
        if np.any(self.depth <= 0) or np.any(self.depth > d_max):
            raise DataError("frame depth outside (0, D_max]")


@dataclass
class GuidanceImage:
    """Sparse re-projected semantics/depth/RGB plus validity mask."""

    sem: np.ndarray  # (H, W) int, INVALID_CLASS where no point landed
    depth: np.ndarray  # (H, W) float meters, 0 where invalid
    rgb: np.ndarray  # (H, W, 3) float, 0 where invalid
    valid: np.ndarray  # (H, W) bool


@dataclass
class PointCloud:
    """World-frame points carrying class, color and insertion provenance."""

    num_classes: int
    d_max: float = D_MAX
    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    class_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    frame_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    _next_frame: int = 0

    def __len__(self) -> int:
        return self.positions.shape[0]


def insert_frame(cloud: PointCloud, frame: PanoFrame, stride: int = 1) -> int:
    """Back-project a frame's pixels (on the stride grid) into the cloud.

    Returns the number of points added. Points are tagged with a
    non-decreasing frame index for z-buffer tie-breaking.
    """
    if stride < 1:
        raise DomainError("stride must be >= 1")
    frame.validate(cloud.num_classes, cloud.d_max)
    g = frame.geometry()
    ys, xs = np.mgrid[0 : g.height : stride, 0 : g.width : stride]
    ys = ys.ravel()
    xs = xs.ravel()
    depths = frame.depth[ys, xs]
    pts = geom.backproject(g, xs + 0.5, ys + 0.5, depths, frame.pose)
    cloud.positions = np.concatenate([cloud.positions, pts])
    cloud.class_ids = np.concatenate([cloud.class_ids, frame.sem[ys, xs].astype(np.int64)])
    cloud.colors = np.concatenate([cloud.colors, frame.rgb[ys, xs].astype(np.float64)])
    idx = np.full(len(xs), cloud._next_frame, dtype=np.int64)
    cloud.frame_indices = np.concatenate([cloud.frame_indices, idx])
    cloud._next_frame += 1
    return len(xs)


def render_guidance(cloud: PointCloud, pose: geom.Pose, g: geom.PanoGeometry) -> GuidanceImage:
    """Re-project the cloud into a pose; nearest point per pixel wins.

    Per pixel the minimum-depth point is kept, ties broken by smaller
    frame index then insertion order. Points beyond D_max are discarded.
    """
    h, w = g.height, g.width
    sem = np.full((h, w), INVALID_CLASS, dtype=np.int64)
    depth = np.zeros((h, w))
    rgb = np.zeros((h, w, 3))
    valid = np.zeros((h, w), dtype=bool)
    if len(cloud) == 0:
        return GuidanceImage(sem, depth, rgb, valid)

    keep = np.any(cloud.positions != pose.position, axis=1)
    x, y, d = geom.project(g, cloud.positions[keep], pose)
    order = np.nonzero(keep)[0]
    px = np.floor(x).astype(np.int64)
    py = np.floor(y).astype(np.int64)
    np.clip(px, 0, w - 1, out=px)
    np.clip(py, 0, h - 1, out=py)
    ok = d <= cloud.d_max
    px, py, d, order = px[ok], py[ok], d[ok], order[ok]
    if len(order) == 0:
        return GuidanceImage(sem, depth, rgb, valid)

    # Fixed reduction order: lexsort so the first hit per pixel is the
    # z-buffer winner under the documented tie-breaks.
    pix = py * w + px
    sel = np.lexsort((order, cloud.frame_indices[order], d, pix))
    pix_sorted = pix[sel]
    first = np.ones(len(sel), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    winners = sel[first]
    wy, wx = py[winners], px[winners]
    src = order[winners]
    sem[wy, wx] = cloud.class_ids[src]
    depth[wy, wx] = d[winners]
    rgb[wy, wx] = cloud.colors[src]
    valid[wy, wx] = True
    return GuidanceImage(sem, depth, rgb, valid)


def nn_fill(guide: GuidanceImage) -> tuple[np.ndarray, np.ndarray]:
    """Fill invalid pixels from the nearest valid pixel (x wraps, y does not).

    Distance is sqrt(dy^2 + wrap(dx)^2); ties break by smaller |dy|, then
    smaller wrapped |dx|, then smaller source x. Returns dense (sem, depth).
    """
    valid = guide.valid
    if not valid.any():
        raise NoContextError("guidance has no valid pixel")
    h, w = valid.shape
    sem = guide.sem.copy()
    depth = guide.depth.copy()
    if valid.all():
        return sem, depth

    vy, vx = np.nonzero(valid)
    iy, ix = np.nonzero(~valid)
    # Composite integer key: (dist^2, |dy|, wrap|dx|, source x), argmin is
    # the lexicographic winner. Chunk over target pixels to bound memory.
    vy64 = vy.astype(np.int64)
    vx64 = vx.astype(np.int64)
    chunk = max(1, 2_000_000 // max(1, len(vy)))
    for s in range(0, len(iy), chunk):
        ty = iy[s : s + chunk, None].astype(np.int64)
        tx = ix[s : s + chunk, None].astype(np.int64)
        dy = np.abs(ty - vy64[None, :])
        adx = np.abs(tx - vx64[None, :])
        wdx = np.minimum(adx, w - adx)
        d2 = dy * dy + wdx * wdx
        key = ((d2 * (h + 1) + dy) * (w + 1) + wdx) * w + vx64[None, :]
        best = np.argmin(key, axis=1)
        sy, sx = vy[best], vx[best]
        sem[iy[s : s + chunk], ix[s : s + chunk]] = guide.sem[sy, sx]
        depth[iy[s : s + chunk], ix[s : s + chunk]] = guide.depth[sy, sx]
    return sem, depth
