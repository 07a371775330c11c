import math

import numpy as np
import pytest

from panoworld import cloud, geom, synthworld
from panoworld.errors import DataError, DomainError, NoContextError
from panoworld.palette import D_MAX, NUM_CLASSES


def _random_frame(rng, g, pose=None):
    sem = rng.integers(0, NUM_CLASSES, size=(g.height, g.width))
    depth = rng.uniform(0.5, 9.5, size=(g.height, g.width))
    rgb = rng.integers(0, 256, size=(g.height, g.width, 3), dtype=np.uint8)
    pose = pose or geom.Pose(rng.normal(size=3), rng.uniform(-math.pi, math.pi))
    return cloud.PanoFrame(sem=sem, depth=depth, rgb=rgb, pose=pose)


def test_frame_validate_rejects_bad_depth():
    g = geom.PanoGeometry(16, 8)
    rng = np.random.default_rng(0)
    f = _random_frame(rng, g)
    f.depth[0, 0] = 0.0
    with pytest.raises(DataError):
        f.validate(NUM_CLASSES)


def test_insert_frame_counts_points():
    g = geom.PanoGeometry(16, 8)
    rng = np.random.default_rng(1)
    pc = cloud.PointCloud(NUM_CLASSES)
    f = _random_frame(rng, g)
    cloud.insert_frame(pc, f, stride=1)
    assert len(pc) == g.width * g.height
    cloud.insert_frame(pc, f, stride=2)
    assert len(pc) == g.width * g.height + (g.width // 2) * (g.height // 2)
    assert pc._next_frame == 2


def test_insert_frame_invalid_stride():
    g = geom.PanoGeometry(16, 8)
    pc = cloud.PointCloud(NUM_CLASSES)
    f = _random_frame(np.random.default_rng(2), g)
    with pytest.raises(DomainError):
        cloud.insert_frame(pc, f, stride=0)


def test_render_guidance_empty_cloud_is_all_invalid():
    g = geom.PanoGeometry(16, 8)
    pc = cloud.PointCloud(NUM_CLASSES)
    guide = cloud.render_guidance(pc, geom.identity_pose(), g)
    assert not guide.valid.any()


def test_identity_reprojection_exact_on_synthetic_world():
    # Insert one rendered frame and re-render guidance at the same pose:
    # away from the pole rows, sem and depth reproduce exactly.
    g = geom.PanoGeometry(64, 32)
    scene, graph = synthworld.generate_world(3)
    frame = synthworld.render_pano(scene, graph.nodes[0], g)
    pc = cloud.PointCloud(NUM_CLASSES)
    cloud.insert_frame(pc, frame, stride=1)
    guide = cloud.render_guidance(pc, frame.pose, g)
    band = slice(1, g.height - 1)
    assert guide.valid[band].all()
    sem_ok = guide.sem[band] == frame.sem[band]
    depth_ok = np.abs(guide.depth[band] - frame.depth[band]) < 1e-9
    assert np.mean(sem_ok & depth_ok) >= 0.99


def test_zbuffer_keeps_nearest_point():
    g = geom.PanoGeometry(16, 8)
    pc = cloud.PointCloud(NUM_CLASSES)
    pose = geom.identity_pose()
    # Two points along the same ray (+z, center pixel): nearer one wins.
    far = geom.backproject(g, 8.5, 4.5, 5.0, pose)
    near = geom.backproject(g, 8.5, 4.5, 2.0, pose)
    for p, cls in [(far, 1), (near, 2)]:
        pc.positions = np.vstack([pc.positions, p])
        pc.class_ids = np.append(pc.class_ids, cls)
        pc.colors = np.vstack([pc.colors, np.zeros(3)])
        pc.frame_indices = np.append(pc.frame_indices, 0)
    guide = cloud.render_guidance(pc, pose, g)
    assert guide.sem[4, 8] == 2
    assert abs(guide.depth[4, 8] - 2.0) < 1e-9


def test_zbuffer_tie_breaks_by_frame_then_order():
    g = geom.PanoGeometry(16, 8)
    pose = geom.identity_pose()
    p = geom.backproject(g, 8.5, 4.5, 2.0, pose)

    def cloud_with(frames_classes):
        pc = cloud.PointCloud(NUM_CLASSES)
        for fi, cls in frames_classes:
            pc.positions = np.vstack([pc.positions, p])
            pc.class_ids = np.append(pc.class_ids, cls)
            pc.colors = np.vstack([pc.colors, np.zeros(3)])
            pc.frame_indices = np.append(pc.frame_indices, fi)
        return pc

    # Equal depth: lower frame index wins regardless of insertion order.
    guide = cloud.render_guidance(cloud_with([(1, 5), (0, 7)]), pose, g)
    assert guide.sem[4, 8] == 7
    # Same frame index: earlier insertion wins.
    guide = cloud.render_guidance(cloud_with([(0, 5), (0, 7)]), pose, g)
    assert guide.sem[4, 8] == 5


def test_guidance_pixel_binning_uses_floor():
    g = geom.PanoGeometry(16, 8)
    pose = geom.identity_pose()
    pc = cloud.PointCloud(NUM_CLASSES)
    # A point projecting to continuous x=8.9, y=4.2 must land in pixel (8, 4).
    p = geom.backproject(g, 8.9, 4.2, 3.0, pose)
    pc.positions = np.vstack([pc.positions, p])
    pc.class_ids = np.append(pc.class_ids, 6)
    pc.colors = np.vstack([pc.colors, np.zeros(3)])
    pc.frame_indices = np.append(pc.frame_indices, 0)
    guide = cloud.render_guidance(pc, pose, g)
    assert guide.sem[4, 8] == 6
    assert guide.valid.sum() == 1


def _nn_fill_oracle(guide):
    """Brute-force nearest-valid-pixel fill with wrapped-x metric."""
    h, w = guide.sem.shape
    vy, vx = np.nonzero(guide.valid)
    sem = np.empty((h, w), dtype=guide.sem.dtype)
    depth = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            best = None
            for sy, sx in zip(vy, vx):
                dy = abs(y - sy)
                dx = abs(x - sx)
                dx = min(dx, w - dx)
                key = (dy * dy + dx * dx, dy, dx, sx)
                if best is None or key < best[0]:
                    best = (key, sy, sx)
            sem[y, x] = guide.sem[best[1], best[2]]
            depth[y, x] = guide.depth[best[1], best[2]]
    return sem, depth


def test_nn_fill_matches_bruteforce_oracle():
    rng = np.random.default_rng(7)
    for case in range(60):
        h, w = 6, 12
        valid = rng.random((h, w)) < rng.uniform(0.05, 0.5)
        if not valid.any():
            valid[rng.integers(h), rng.integers(w)] = True
        guide = cloud.GuidanceImage(
            sem=rng.integers(0, NUM_CLASSES, size=(h, w)),
            depth=rng.uniform(0.1, 9.9, size=(h, w)),
            rgb=rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8),
            valid=valid,
        )
        sem, depth = cloud.nn_fill(guide)
        osem, odepth = _nn_fill_oracle(guide)
        assert np.array_equal(sem, osem), f"case {case}"
        assert np.array_equal(depth, odepth), f"case {case}"


def test_nn_fill_preserves_valid_pixels():
    rng = np.random.default_rng(8)
    g = geom.PanoGeometry(32, 16)
    scene, graph = synthworld.generate_world(1)
    frame = synthworld.render_pano(scene, graph.nodes[0], g)
    pc = cloud.PointCloud(NUM_CLASSES)
    cloud.insert_frame(pc, frame, stride=3)
    guide = cloud.render_guidance(pc, graph.nodes[1], g)
    sem, depth = cloud.nn_fill(guide)
    assert np.array_equal(sem[guide.valid], guide.sem[guide.valid])
    assert np.array_equal(depth[guide.valid], guide.depth[guide.valid])
    assert sem.shape == guide.sem.shape


def test_nn_fill_requires_a_valid_pixel():
    guide = cloud.GuidanceImage(
        sem=np.zeros((4, 8), dtype=np.int64),
        depth=np.ones((4, 8)),
        rgb=np.zeros((4, 8, 3), dtype=np.uint8),
        valid=np.zeros((4, 8), dtype=bool),
    )
    with pytest.raises(NoContextError):
        cloud.nn_fill(guide)
