"""Procedural indoor worlds with ray-cast ground truth panoramas.

Scenes are axis-aligned room rectangles (interior free space) separated by
0.1 m wall slabs, connected by door openings cut into the shared slab.
Layout is computed on an integer decimeter grid so wall/gap relations are
exact; the public SceneSpec is in meters.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .errors import DataError, DomainError, GenerationError, GeometryError
from .palette import (
    CAMERA_HEIGHT,
    CEILING,
    CEILING_HEIGHT,
    D_MAX,
    DOOR,
    DOOR_HEIGHT,
    FLOOR,
    NUM_CLASSES,
    PALETTE,
    WALL,
    WALL_THICKNESS,
)

SCHEMA_VERSION = 1

_T = WALL_THICKNESS
_LIGHT = np.array([1.0, 2.0, 1.0]) / np.linalg.norm([1.0, 2.0, 1.0])

# Furniture catalog: class_id -> (footprint_w, footprint_d, height) meters.
_FURNITURE_CATALOG = {
    6: (1.2, 0.8, 0.8),  # table
    7: (0.5, 0.5, 0.9),  # chair
    8: (2.0, 1.5, 0.6),  # bed
    9: (1.8, 0.8, 0.8),  # sofa
    10: (0.6, 1.2, 1.8),  # cabinet
    11: (0.3, 0.3, 1.6),  # lamp
    12: (0.7, 0.7, 1.0),  # appliance
}

DOOR_WIDTH = 0.9


@dataclass
class Room:
    rect: tuple[float, float, float, float]  # x0, z0, x1, z1 (interior)
    tint: np.ndarray  # (3,) multiplier in [0.7, 1.0]


@dataclass
class Opening:
    rooms: tuple[int, int]
    axis: str  # 'z': wall slab spans z in strip, door spans x; 'x': swapped
    strip: tuple[float, float]
    span: tuple[float, float]


@dataclass
class FurnitureItem:
    box: tuple[float, float, float, float, float, float]  # x0,y0,z0,x1,y1,z1
    class_id: int
    room: int


@dataclass
class SceneSpec:
    rooms: list[Room]
    openings: list[Opening]
    furniture: list[FurnitureItem]
    ceiling_height: float = CEILING_HEIGHT
    class_count: int = NUM_CLASSES
    _compiled: dict = field(default=None, repr=False, compare=False)


@dataclass
class NavGraph:
    nodes: list[geom.Pose]
    edges: list[tuple[int, int]]

    def adjacency(self) -> list[list[int]]:
        adj = [[] for _ in self.nodes]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj


@dataclass
class WorldParams:
    room_count_range: tuple[int, int] = (3, 6)
    furniture_density: float = 0.15  # items per square meter


# ---------------------------------------------------------------------------
# Scene compilation: rooms -> axis-aligned box soup for raycasting.


def _subtract_intervals(a0, a1, cuts):
    """Remove [c0,c1) cut intervals from [a0,a1]; returns kept segments."""
    segs = [(a0, a1)]
    for c0, c1 in cuts:
        out = []
        for s0, s1 in segs:
            lo, hi = max(s0, c0), min(s1, c1)
            if lo >= hi:
                out.append((s0, s1))
                continue
            if s0 < lo:
                out.append((s0, lo))
            if hi < s1:
                out.append((hi, s1))
        segs = out
    return segs


def _compile(scene: SceneSpec) -> dict:
    """Build the box soup (walls, lintels, furniture) once per scene."""
    if scene._compiled is not None:
        return scene._compiled
    mins, maxs, cls, tints = [], [], [], []
    ch = scene.ceiling_height

    def add(x0, y0, z0, x1, y1, z1, c, tint):
        mins.append((x0, y0, z0))
        maxs.append((x1, y1, z1))
        cls.append(c)
        tints.append(tint)

    ones = np.ones(3)
    for ri, room in enumerate(scene.rooms):
        x0, z0, x1, z1 = room.rect
        edges = [
            ("z", z1, z1 + _T, x0 - _T, x1 + _T),
            ("z", z0 - _T, z0, x0 - _T, x1 + _T),
            ("x", x1, x1 + _T, z0, z1),
            ("x", x0 - _T, x0, z0, z1),
        ]
        for axis, lo, hi, a0, a1 in edges:
            cuts = []
            for op in scene.openings:
                if op.axis == axis and abs(op.strip[0] - lo) < 1e-6 and ri in op.rooms:
                    c0, c1 = max(op.span[0], a0), min(op.span[1], a1)
                    if c0 < c1:
                        cuts.append((c0, c1))
            for s0, s1 in _subtract_intervals(a0, a1, cuts):
                if axis == "z":
                    add(s0, 0.0, lo, s1, ch, hi, WALL, room.tint)
                else:
                    add(lo, 0.0, s0, hi, ch, s1, WALL, room.tint)
            for c0, c1 in cuts:
                if axis == "z":
                    add(c0, DOOR_HEIGHT, lo, c1, ch, hi, DOOR, ones)
                else:
                    add(lo, DOOR_HEIGHT, c0, hi, ch, c1, DOOR, ones)

    for item in scene.furniture:
        x0, y0, z0, x1, y1, z1 = item.box
        add(x0, y0, z0, x1, y1, z1, item.class_id, ones)

    compiled = {
        "mins": np.array(mins, dtype=np.float64).reshape(-1, 3),
        "maxs": np.array(maxs, dtype=np.float64).reshape(-1, 3),
        "cls": np.array(cls, dtype=np.int64),
        "tints": np.array(tints, dtype=np.float64).reshape(-1, 3),
        "room_rects": np.array([r.rect for r in scene.rooms], dtype=np.float64),
        "room_tints": np.array([r.tint for r in scene.rooms], dtype=np.float64),
    }
    object.__setattr__(scene, "_compiled", compiled)
    return compiled


def _room_tint_at(scene, hx, hz):
    """Tint of the room containing ground-plane points; 1 outside (doorways)."""
    comp = _compile(scene)
    rects = comp["room_rects"]
    out = np.ones(hx.shape + (3,))
    for k in range(len(rects)):
        x0, z0, x1, z1 = rects[k]
        m = (hx >= x0) & (hx <= x1) & (hz >= z0) & (hz <= z1)
        out[m] = comp["room_tints"][k]
    return out


def point_in_free_space(scene: SceneSpec, p) -> bool:
    """True if p lies in room interior or a door passage, clear of furniture."""
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if not (0.0 < y < scene.ceiling_height):
        return False
    inside = False
    for room in scene.rooms:
        x0, z0, x1, z1 = room.rect
        if x0 < x < x1 and z0 < z < z1:
            inside = True
            break
    if not inside:
        for op in scene.openings:
            lo, hi = op.strip
            a0, a1 = op.span
            if y >= DOOR_HEIGHT:
                continue
            if op.axis == "z" and lo <= z <= hi and a0 < x < a1:
                inside = True
                break
            if op.axis == "x" and lo <= x <= hi and a0 < z < a1:
                inside = True
                break
    if not inside:
        return False
    for item in scene.furniture:
        x0, y0, z0, x1, y1, z1 = item.box
        if x0 < x < x1 and y0 < y < y1 and z0 < z < z1:
            return False
    return True


# ---------------------------------------------------------------------------
# Raycasting.


def raycast_batch(scene: SceneSpec, origins: np.ndarray, dirs: np.ndarray):
    """Nearest-hit raycast for N rays against the scene.

    Returns (distance (N,), class_id (N,), normal (N,3), tint (N,3)).
    Origins must be in free space; directions unit length.
    """
    comp = _compile(scene)
    n = origins.shape[0]
    eps = 1e-9
    best_t = np.full(n, np.inf)
    best_cls = np.full(n, -1, dtype=np.int64)
    best_normal = np.zeros((n, 3))
    best_tint = np.ones((n, 3))

    # Floor and ceiling planes.
    dy = dirs[:, 1]
    for plane_y, c, ny in ((0.0, FLOOR, 1.0), (scene.ceiling_height, CEILING, -1.0)):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (plane_y - origins[:, 1]) / dy
        hit = np.isfinite(t) & (t > eps)
        upd = hit & (t < best_t)
        if upd.any():
            best_t[upd] = t[upd]
            best_cls[upd] = c
            best_normal[upd] = (0.0, ny, 0.0)
            hx = origins[upd, 0] + t[upd] * dirs[upd, 0]
            hz = origins[upd, 2] + t[upd] * dirs[upd, 2]
            best_tint[upd] = _room_tint_at(scene, hx, hz)

    mins, maxs = comp["mins"], comp["maxs"]
    par = dirs == 0.0
    with np.errstate(divide="ignore"):
        inv = np.where(par, np.inf, 1.0 / np.where(par, 1.0, dirs))
    for b in range(mins.shape[0]):
        with np.errstate(invalid="ignore"):
            t1 = (mins[b] - origins) * inv
            t2 = (maxs[b] - origins) * inv
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        inside = (origins >= mins[b]) & (origins <= maxs[b])
        near = np.where(par, np.where(inside, -np.inf, np.inf), near)
        far = np.where(par, np.where(inside, np.inf, -np.inf), far)
        tn = near.max(axis=1)
        tf = far.min(axis=1)
        hit = (tn > eps) & (tn <= tf) & (tn < best_t)
        if not hit.any():
            continue
        axis = np.argmax(near[hit], axis=1)
        best_t[hit] = tn[hit]
        best_cls[hit] = comp["cls"][b]
        nrm = np.zeros((int(hit.sum()), 3))
        nrm[np.arange(len(axis)), axis] = -np.sign(dirs[hit, axis])
        best_normal[hit] = nrm
        best_tint[hit] = comp["tints"][b]

    if not np.all(np.isfinite(best_t)):
        raise GeometryError("ray escaped the scene (origin outside free space?)")
    return best_t, best_cls, best_normal, best_tint


def raycast(scene: SceneSpec, origin, direction):
    """Single-ray convenience wrapper: (distance, class_id, normal)."""
    o = np.asarray(origin, dtype=np.float64).reshape(1, 3)
    d = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise DomainError("direction must be unit length")
    t, c, nrm, _ = raycast_batch(scene, o, d)
    return float(t[0]), int(c[0]), nrm[0]


def render_pano(scene: SceneSpec, pose: geom.Pose, g: geom.PanoGeometry, d_max: float = D_MAX):
    """Ray-cast a ground-truth panorama frame at a pose.

    Depth is the hit distance clamped to d_max; RGB is the class base
    color tinted per room and Lambert-shaded with a fixed light direction.
    """
    from .cloud import PanoFrame

    if not point_in_free_space(scene, pose.position):
        raise GeometryError(f"pose position {pose.position} not in free space")
    ys, xs = np.mgrid[0 : g.height, 0 : g.width]
    rays = geom.pixel_to_ray(g, xs.ravel() + 0.5, ys.ravel() + 0.5)
    world_rays = rays @ pose.rotation().T
    origins = np.broadcast_to(pose.position, world_rays.shape)
    t, cls, nrm, tint = raycast_batch(scene, origins, world_rays)
    lam = np.maximum(0.2, np.abs(nrm @ _LIGHT))
    base = PALETTE[cls].astype(np.float64)
    rgb = np.clip(base * tint * lam[:, None], 0, 255).astype(np.uint8)
    depth = np.minimum(t, d_max)
    return PanoFrame(
        sem=cls.reshape(g.height, g.width),
        depth=depth.reshape(g.height, g.width),
        rgb=rgb.reshape(g.height, g.width, 3),
        pose=pose,
    )


# ---------------------------------------------------------------------------
# World generation (integer decimeter grid internally).


def _rects_ok(new, existing):
    """New interior rect keeps >= 1 dm wall gap to all existing interiors."""

    def area_overlap(a, b):
        w = min(a[2], b[2]) - max(a[0], b[0])
        d = min(a[3], b[3]) - max(a[1], b[1])
        return max(w, 0) * max(d, 0)

    infl_new = (new[0] - 1, new[1] - 1, new[2] + 1, new[3] + 1)
    for old in existing:
        infl_old = (old[0] - 1, old[1] - 1, old[2] + 1, old[3] + 1)
        if area_overlap(infl_new, old) > 0 or area_overlap(infl_old, new) > 0:
            return False
    return True


def _layout_rooms(rng, n_rooms):
    """Attach rooms one by one with exact 1 dm gaps; returns dm-int rects."""
    sizes = np.arange(30, 65, 5)
    rects = [(0, 0, int(rng.choice(sizes)), int(rng.choice(sizes)))]
    openings = []  # (ia, ib, axis, strip_lo, span0, span1) in dm
    for _ in range(1, n_rooms):
        for _attempt in range(80):
            base_i = int(rng.integers(len(rects)))
            bx0, bz0, bx1, bz1 = rects[base_i]
            side = int(rng.integers(4))
            w = int(rng.choice(sizes))
            d = int(rng.choice(sizes))
            if side in (0, 1):  # north / south: shared axis is x
                lo_limit = bx0 - (w - 13)
                hi_limit = bx1 - 13
                if hi_limit < lo_limit:
                    continue
                offs = np.arange(lo_limit, hi_limit + 1, 5)
                x0 = int(rng.choice(offs))
                if side == 0:
                    rect = (x0, bz1 + 1, x0 + w, bz1 + 1 + d)
                    strip = bz1
                else:
                    rect = (x0, bz0 - 1 - d, x0 + w, bz0 - 1)
                    strip = bz0 - 1
                axis = "z"
                ov0, ov1 = max(x0, bx0), min(x0 + w, bx1)
            else:  # east / west: shared axis is z
                lo_limit = bz0 - (d - 13)
                hi_limit = bz1 - 13
                if hi_limit < lo_limit:
                    continue
                offs = np.arange(lo_limit, hi_limit + 1, 5)
                z0 = int(rng.choice(offs))
                if side == 2:
                    rect = (bx1 + 1, z0, bx1 + 1 + w, z0 + d)
                    strip = bx1
                else:
                    rect = (bx0 - 1 - w, z0, bx0 - 1, z0 + d)
                    strip = bx0 - 1
                axis = "x"
                ov0, ov1 = max(z0, bz0), min(z0 + d, bz1)
            if not _rects_ok(rect, rects):
                continue
            door_lo = int(rng.integers(ov0 + 2, ov1 - 2 - 9 + 1))
            rects.append(rect)
            openings.append((base_i, len(rects) - 1, axis, strip, door_lo, door_lo + 9))
            break
        else:
            return None
    return rects, openings


def _place_furniture(rng, rects_m, openings, density):
    """Sample non-overlapping furniture boxes inside rooms (meters)."""
    items = []
    classes = sorted(_FURNITURE_CATALOG)
    for ri, (x0, z0, x1, z1) in enumerate(rects_m):
        area = (x1 - x0) * (z1 - z0)
        want = int(round(density * area))
        placed = []
        attempts = 0
        while len(placed) < want and attempts < 60:
            attempts += 1
            cid = int(rng.choice(classes))
            fw, fd, fh = _FURNITURE_CATALOG[cid]
            if rng.integers(2):
                fw, fd = fd, fw
            fx0 = x0 + 0.3 + float(rng.random()) * max(0.0, (x1 - x0) - 0.6 - fw)
            fz0 = z0 + 0.3 + float(rng.random()) * max(0.0, (z1 - z0) - 0.6 - fd)
            box2d = (fx0 - 0.1, fz0 - 0.1, fx0 + fw + 0.1, fz0 + fd + 0.1)
            if fx0 + fw > x1 - 0.3 or fz0 + fd > z1 - 0.3:
                continue
            clear = True
            for op in openings:
                # keep a 0.5 m approach corridor in front of each door
                lo, hi = op.strip
                a0, a1 = op.span
                if op.axis == "z":
                    door_rect = (a0 - 0.1, lo - 0.5, a1 + 0.1, hi + 0.5)
                else:
                    door_rect = (lo - 0.5, a0 - 0.1, hi + 0.5, a1 + 0.1)
                if box2d[0] < door_rect[2] and door_rect[0] < box2d[2] and box2d[1] < door_rect[3] and door_rect[1] < box2d[3]:
                    clear = False
                    break
            if not clear:
                continue
            for other in placed:
                if box2d[0] < other[2] and other[0] < box2d[2] and box2d[1] < other[3] and other[1] < box2d[3]:
                    clear = False
                    break
            if not clear:
                continue
            placed.append(box2d)
            items.append(FurnitureItem((fx0, 0.0, fz0, fx0 + fw, fh, fz0 + fd), cid, ri))
    return items


def _build_graph(scene: SceneSpec, rng) -> NavGraph:
    """Lattice + door-midpoint nodes, line-of-sight edges, largest component."""
    positions = []
    for room in scene.rooms:
        x0, z0, x1, z1 = room.rect
        for gx in range(int(np.ceil(x0)), int(np.floor(x1)) + 1):
            for gz in range(int(np.ceil(z0)), int(np.floor(z1)) + 1):
                p = np.array([gx, CAMERA_HEIGHT, gz], dtype=np.float64)
                if x0 + 0.2 < gx < x1 - 0.2 and z0 + 0.2 < gz < z1 - 0.2 and point_in_free_space(scene, p):
                    positions.append(p)
    for op in scene.openings:
        lo, hi = op.strip
        a0, a1 = op.span
        mid_strip = 0.5 * (lo + hi)
        mid_span = 0.5 * (a0 + a1)
        if op.axis == "z":
            p = np.array([mid_span, CAMERA_HEIGHT, mid_strip])
        else:
            p = np.array([mid_strip, CAMERA_HEIGHT, mid_span])
        positions.append(p)
    if len(positions) < 2:
        raise GenerationError("too few navigable positions")
    pos = np.array(positions)

    # Candidate pairs by separation, then line-of-sight by raycast.
    diff = pos[None, :, :] - pos[:, None, :]
    dist = np.linalg.norm(diff, axis=2)
    ii, jj = np.nonzero(np.triu((dist >= 1.0) & (dist <= 3.5), k=1))
    edges = []
    if len(ii):
        d = dist[ii, jj]
        dirs = diff[ii, jj] / d[:, None]
        t, _, _, _ = raycast_batch(scene, pos[ii], dirs)
        vis = t > d - 1e-6
        edges = list(zip(ii[vis].tolist(), jj[vis].tolist()))

    # Largest connected component.
    adj = [[] for _ in range(len(pos))]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = np.full(len(pos), -1)
    comp = 0
    for s in range(len(pos)):
        if seen[s] >= 0:
            continue
        stack = [s]
        seen[s] = comp
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if seen[v] < 0:
                    seen[v] = comp
                    stack.append(v)
        comp += 1
    counts = np.bincount(seen, minlength=comp)
    keep_comp = int(np.argmax(counts))
    keep = np.nonzero(seen == keep_comp)[0]
    if len(keep) < 2:
        raise GenerationError("navigation graph collapsed")
    remap = {int(old): new for new, old in enumerate(keep)}
    nodes = [geom.Pose(pos[old], 0.0) for old in keep]
    new_edges = sorted(
        (remap[i], remap[j]) for i, j in edges if i in remap and j in remap
    )
    return NavGraph(nodes, new_edges)


def generate_world(seed: int, params: WorldParams = None):
    """Deterministically generate a (SceneSpec, NavGraph) pair from a seed."""
    params = params or WorldParams()
    lo, hi = params.room_count_range
    if not (1 <= lo <= hi <= 12):
        raise DomainError("room_count_range must lie within [1, 12]")
    last_err = None
    for attempt in range(20):
        rng = np.random.default_rng([int(seed), attempt])
        n_rooms = int(rng.integers(lo, hi + 1))
        layout = _layout_rooms(rng, n_rooms)
        if layout is None:
            last_err = "room layout failed"
            continue
        rects_i, openings_i = layout
        rects_m = [tuple(v / 10.0 for v in r) for r in rects_i]
        rooms = [Room(rect, 0.7 + 0.3 * rng.random(3)) for rect in rects_m]
        openings = []
        for ia, ib, axis, strip, s0, s1 in openings_i:
            openings.append(
                Opening((ia, ib), axis, (strip / 10.0, strip / 10.0 + _T), (s0 / 10.0, s1 / 10.0))
            )
        furniture = _place_furniture(rng, rects_m, openings, params.furniture_density)
        scene = SceneSpec(rooms, openings, furniture)
        try:
            validate_scene(scene)
            graph = _build_graph(scene, rng)
            validate_graph(scene, graph)
        except (GenerationError, DataError) as e:
            last_err = str(e)
            continue
        return scene, graph
    raise GenerationError(f"world generation failed for seed {seed}: {last_err}")


# ---------------------------------------------------------------------------
# Trajectories and viewpoint augmentation.


def sample_trajectory(graph: NavGraph, seed: int) -> list[geom.Pose]:
    """Random walk of 5-8 nodes; uniform start, no immediate backtracking."""
    if len(graph.nodes) < 2:
        raise DomainError("graph needs at least 2 nodes")
    rng = np.random.default_rng(seed)
    adj = graph.adjacency()
    length = int(rng.integers(5, 9))
    cur = int(rng.integers(len(graph.nodes)))
    prev = -1
    out = [graph.nodes[cur]]
    for _ in range(length - 1):
        options = [v for v in adj[cur] if v != prev]
        if not options:
            options = adj[cur]
        nxt = int(options[rng.integers(len(options))])
        prev, cur = cur, nxt
        out.append(graph.nodes[cur])
    return out


def perturb_viewpoint(scene: SceneSpec, pose: geom.Pose, seed: int, sigma: float = 0.2) -> geom.Pose:
    """Add N(0, sigma) positional noise per axis, resampling to stay free."""
    if sigma == 0.0:
        return pose
    rng = np.random.default_rng(seed)
    for _ in range(100):
        cand = pose.position + rng.normal(0.0, sigma, size=3)
        if point_in_free_space(scene, cand):
            return geom.Pose(cand, pose.yaw)
    raise GenerationError("no free-space perturbation found after 100 retries")


# ---------------------------------------------------------------------------
# Validation.


def validate_scene(scene: SceneSpec) -> None:
    """Check all SceneSpec invariants; raises DataError on violation."""
    rects = [r.rect for r in scene.rooms]
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            a, b = rects[i], rects[j]
            w = min(a[2], b[2]) - max(a[0], b[0])
            d = min(a[3], b[3]) - max(a[1], b[1])
            if w > 1e-9 and d > 1e-9:
                raise DataError(f"rooms {i} and {j} overlap")
    for op in scene.openings:
        ia, ib = op.rooms
        a, b = rects[ia], rects[ib]
        if op.span[1] - op.span[0] < DOOR_WIDTH - 1e-9:
            raise DataError("opening narrower than 0.9 m")
        if op.axis == "z":
            gap_ok = (
                abs(a[3] + _T - b[1]) < 1e-6 and abs(op.strip[0] - a[3]) < 1e-6
            ) or (abs(b[3] + _T - a[1]) < 1e-6 and abs(op.strip[0] - b[3]) < 1e-6)
            ov0, ov1 = max(a[0], b[0]), min(a[2], b[2])
        else:
            gap_ok = (
                abs(a[2] + _T - b[0]) < 1e-6 and abs(op.strip[0] - a[2]) < 1e-6
            ) or (abs(b[2] + _T - a[0]) < 1e-6 and abs(op.strip[0] - b[2]) < 1e-6)
            ov0, ov1 = max(a[1], b[1]), min(a[3], b[3])
        if not gap_ok:
            raise DataError("opening strip does not sit on the shared wall")
        if op.span[0] < ov0 - 1e-9 or op.span[1] > ov1 + 1e-9:
            raise DataError("opening span leaves the shared wall segment")
    for item in scene.furniture:
        x0, _, z0, x1, _, z1 = item.box
        if item.class_id not in _FURNITURE_CATALOG:
            raise DataError(f"unknown furniture class {item.class_id}")
        containing = [
            k
            for k, r in enumerate(rects)
            if r[0] < x0 and x1 < r[2] and r[1] < z0 and z1 < r[3]
        ]
        if containing != [item.room]:
            raise DataError("furniture not strictly inside its room")
    # Room adjacency connectivity via openings.
    adj = [[] for _ in scene.rooms]
    for op in scene.openings:
        adj[op.rooms[0]].append(op.rooms[1])
        adj[op.rooms[1]].append(op.rooms[0])
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    if len(seen) != len(scene.rooms):
        raise DataError("room adjacency graph is disconnected")


def validate_graph(scene: SceneSpec, graph: NavGraph) -> None:
    """Check NavGraph invariants; raises on violation."""
    if len(graph.nodes) < 2:
        raise GenerationError("graph has fewer than 2 nodes")
    for node in graph.nodes:
        if abs(node.position[1] - CAMERA_HEIGHT) > 1e-9:
            raise DataError("node not at camera height")
        if not point_in_free_space(scene, node.position):
            raise DataError("node not in free space")
    if graph.edges:
        a = np.array([graph.nodes[i].position for i, _ in graph.edges])
        b = np.array([graph.nodes[j].position for _, j in graph.edges])
        d = np.linalg.norm(b - a, axis=1)
        if np.any(d < 1.0 - 1e-9) or np.any(d > 3.5 + 1e-9):
            raise DataError("edge length outside [1.0, 3.5]")
        t, _, _, _ = raycast_batch(scene, a, (b - a) / d[:, None])
        if np.any(t <= d - 1e-6):
            raise DataError("edge endpoints lack line-of-sight")
    adj = graph.adjacency()
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    if len(seen) != len(graph.nodes):
        raise GenerationError("navigation graph is disconnected")


# ---------------------------------------------------------------------------
# JSON serialization.


def scene_to_json(scene: SceneSpec) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "ceiling_height": scene.ceiling_height,
        "class_count": scene.class_count,
        "rooms": [
            {"rect": list(r.rect), "tint": [float(v) for v in r.tint]} for r in scene.rooms
        ],
        "openings": [
            {
                "rooms": list(op.rooms),
                "axis": op.axis,
                "strip": list(op.strip),
                "span": list(op.span),
            }
            for op in scene.openings
        ],
        "furniture": [
            {"box": list(f.box), "class_id": f.class_id, "room": f.room}
            for f in scene.furniture
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def scene_from_json(text: str) -> SceneSpec:
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported scene schema version {doc.get('schema_version')}")
    rooms = [Room(tuple(r["rect"]), np.array(r["tint"])) for r in doc["rooms"]]
    openings = [
        Opening(tuple(o["rooms"]), o["axis"], tuple(o["strip"]), tuple(o["span"]))
        for o in doc["openings"]
    ]
    furniture = [FurnitureItem(tuple(f["box"]), f["class_id"], f["room"]) for f in doc["furniture"]]
    return SceneSpec(rooms, openings, furniture, doc["ceiling_height"], doc["class_count"])


def graph_to_json(graph: NavGraph) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "nodes": [
            {"position": [float(v) for v in n.position], "yaw": n.yaw} for n in graph.nodes
        ],
        "edges": [list(e) for e in graph.edges],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def graph_from_json(text: str) -> NavGraph:
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported graph schema version {doc.get('schema_version')}")
    nodes = [geom.Pose(np.array(n["position"]), n["yaw"]) for n in doc["nodes"]]
    edges = [tuple(e) for e in doc["edges"]]
    return NavGraph(nodes, edges)
