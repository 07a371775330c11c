"""Dataset construction: worlds -> rendered trajectory samples."""

from dataclasses import dataclass

import numpy as np

from . import geom, synthworld
from .cloud import PanoFrame


@dataclass
class TrajectorySample:
    frames: list  # list[PanoFrame], ordered along the trajectory
    world_seed: int


def render_trajectory(scene, poses, g: geom.PanoGeometry, d_max: float):
    return [synthworld.render_pano(scene, p, g, d_max) for p in poses]


def build_dataset(
    world_seeds,
    g: geom.PanoGeometry,
    trajectories_per_world: int = 3,
    seed: int = 0,
    world_params: synthworld.WorldParams = None,
    perturb_sigma: float = 0.2,
    d_max: float = 10.0,
):
    """Render trajectory samples over a set of procedurally generated worlds.

    Viewpoints are Gaussian-perturbed (sigma in meters) as augmentation;
    frames are rendered at the perturbed poses so data stays consistent.
    """
    samples = []
    rng = np.random.default_rng(seed)
    for ws in world_seeds:
        scene, graph = synthworld.generate_world(ws, world_params)
        for k in range(trajectories_per_world):
            traj_seed = int(rng.integers(2**62))
            poses = synthworld.sample_trajectory(graph, traj_seed)
            if perturb_sigma > 0:
                poses = [
                    synthworld.perturb_viewpoint(scene, p, int(rng.integers(2**62)), perturb_sigma)
                    for p in poses
                ]
            frames = render_trajectory(scene, poses, g, d_max)
            samples.append(TrajectorySample(frames, ws))
    return samples
