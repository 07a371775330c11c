"""Equirectangular camera model and gravity-aligned pose algebra.

Conventions:
  - World frame: x east, y up, z north. Yaw rotates about +y, zero facing
    +z, positive toward +x.
  - Image: x in [0, W) maps linearly to longitude theta in [-pi, pi),
    y in [0, H] maps to latitude phi in [pi/2, -pi/2] (top = +pi/2).
  - Ray direction: (cos(phi) sin(theta), sin(phi), cos(phi) cos(theta)).
  - Integer pixel index i samples at continuous coordinate i + 0.5.
  - Depth is Euclidean ray length in meters, never planar z.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GeometryError


def wrap_angle(a):
    """Wrap angle(s) into [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class Pose:
    """Gravity-aligned camera pose: 3D position (m) + yaw (rad)."""

    position: np.ndarray
    yaw: float

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64)
        if pos.shape != (3,):
            raise DomainError(f"position must be a 3-vector, got shape {pos.shape}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "yaw", float(wrap_angle(self.yaw)))

    def rotation(self) -> np.ndarray:
        """3x3 world-from-camera rotation for this yaw."""
        return yaw_matrix(self.yaw)


def identity_pose() -> Pose:
    return Pose(np.zeros(3), 0.0)


def yaw_matrix(yaw: float) -> np.ndarray:
    """Rotation about +y: maps camera +z toward world +z rotated by yaw."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def compose(a: Pose, b: Pose) -> Pose:
    """Pose of b expressed in a's parent frame (a then b)."""
    return Pose(a.position + a.rotation() @ b.position, a.yaw + b.yaw)


def inverse(p: Pose) -> Pose:
    return Pose(-(yaw_matrix(-p.yaw) @ p.position), -p.yaw)


@dataclass(frozen=True)
class PanoGeometry:
    """Full-sphere equirectangular image dimensions."""

    width: int
    height: int

    def __post_init__(self):
        w, h = self.width, self.height
        if w != 2 * h:
            raise DomainError(f"equirectangular geometry needs width = 2*height, got {w}x{h}")
        if w < 8 or h < 4 or w % 2 or h % 2:
            raise DomainError(f"geometry too small or odd-sized: {w}x{h}")


def pixel_to_ray(g: PanoGeometry, x, y) -> np.ndarray:
    """Map continuous pixel coordinates to unit ray directions (camera frame).

    x, y may be scalars or broadcastable arrays; output has shape (..., 3).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(x < 0) or np.any(x >= g.width) or np.any(y < 0) or np.any(y >= g.height):
        raise DomainError("pixel coordinates out of range")
    theta = 2.0 * np.pi * x / g.width - np.pi
    phi = np.pi / 2.0 - np.pi * y / g.height
    cp = np.cos(phi)
    return np.stack([cp * np.sin(theta), np.sin(phi), cp * np.cos(theta)], axis=-1)


def ray_to_pixel(g: PanoGeometry, d) -> tuple[np.ndarray, np.ndarray]:
    """Map unit direction(s) to continuous pixel coordinates (x, y).

    Inverse of pixel_to_ray; x is wrapped into [0, W). Longitude at the
    poles is degenerate and defined by atan2(0, 0) = 0.
    """
    d = np.asarray(d, dtype=np.float64)
    n = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(n - 1.0) > 1e-6):
        if np.any(n == 0):
            raise DomainError("zero direction vector")
        raise DomainError("direction not unit length")
    theta = np.arctan2(d[..., 0], d[..., 2])
    phi = np.arcsin(np.clip(d[..., 1], -1.0, 1.0))
    x = g.width * (theta + np.pi) / (2.0 * np.pi)
    y = g.height * (np.pi / 2.0 - phi) / np.pi
    x = np.where(x >= g.width, x - g.width, x)
    return x, y


def backproject(g: PanoGeometry, x, y, depth, pose: Pose) -> np.ndarray:
    """Lift pixel(s) with Euclidean ray depth (m) to world-frame 3D points."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise DomainError("depth must be positive")
    rays = pixel_to_ray(g, x, y)
    world_rays = rays @ pose.rotation().T
    return pose.position + depth[..., None] * world_rays


def project(g: PanoGeometry, point, pose: Pose):
    """Project world point(s) to (x, y, depth) at the given pose.

    Inverse of backproject: depth is Euclidean distance from the camera.
    """
    point = np.asarray(point, dtype=np.float64)
    offset = (point - pose.position) @ yaw_matrix(-pose.yaw).T
    depth = np.linalg.norm(offset, axis=-1)
    if np.any(depth == 0):
        raise GeometryError("point coincides with the camera position")
    x, y = ray_to_pixel(g, offset / depth[..., None])
    return x, y, depth
