"""Pinhole camera model and ray generation.

Coordinate convention (fixed for all pose files and renderers):
  - camera-to-world extrinsics (rotation R, translation t); world point of a
    camera-frame point p is R @ p + t
  - camera frame: +z forward (into the scene), +x right, +y down
  - image coords: u right, v down, origin at the top-left corner; the center
    of pixel (u, v) is sampled at (u + 0.5, v + 0.5)
"""

from dataclasses import dataclass

import numpy as np

from .errors import DatasetError


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray      # (3, 3) camera-to-world
    translation: np.ndarray   # (3,) camera origin in world units
    width: int
    height: int

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or not np.isclose(np.linalg.det(R), 1.0, atol=1e-6):
            raise ValueError("rotation is not a proper orthonormal matrix (det +1)")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def optical_axis(self):
        """Viewing direction (+z of the camera frame) in world coordinates."""
        return self.rotation[:, 2].copy()

    def to_dict(self, name):
        c2w = np.eye(4)
        c2w[:3, :3] = self.rotation
        c2w[:3, 3] = self.translation
        return {
            "name": name,
            "transform": [float(v) for v in c2w.reshape(-1)],  # 4x4 row-major camera-to-world
            "fx": float(self.fx), "fy": float(self.fy),
            "cx": float(self.cx), "cy": float(self.cy),
            "width": int(self.width), "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            c2w = np.asarray(d["transform"], dtype=np.float64).reshape(4, 4)
            return cls(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                       rotation=c2w[:3, :3], translation=c2w[:3, 3],
                       width=int(d["width"]), height=int(d["height"]))
        except (KeyError, ValueError) as e:
            raise DatasetError(f"bad camera entry {d.get('name', '?')!r}: {e}") from e


def generate_rays(camera, pixels):
    """Back-project pixel coordinates into world-space rays.

    pixels: (N, 2) array of (u, v); the ray passes through (u + 0.5, v + 0.5).
    Returns (origins (N, 3), directions (N, 3)) with unit directions.
    """
    px = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    u, v = px[:, 0], px[:, 1]
    if np.any(u < 0) or np.any(u >= camera.width) or np.any(v < 0) or np.any(v >= camera.height):
        raise ValueError("pixel coordinates out of image bounds")
    d_cam = np.stack([
        (u + 0.5 - camera.cx) / camera.fx,
        (v + 0.5 - camera.cy) / camera.fy,
        np.ones_like(u),
    ], axis=-1)
    d_world = d_cam @ camera.rotation.T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.translation, d_world.shape).copy()
    return origins, d_world


def pixel_grid(camera):
    """All integer pixel coordinates of the image, row-major: (W*H, 2)."""
    u, v = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    return np.stack([u.reshape(-1), v.reshape(-1)], axis=-1)


def project(camera, points):
    """Project world points to (u, v) pixel-center coordinates.

    Inverse of generate_rays up to depth: project(o + t*d) == pixel + 0.5.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    p_cam = (p - camera.translation) @ camera.rotation
    z = p_cam[:, 2]
    u = camera.fx * p_cam[:, 0] / z + camera.cx
    v = camera.fy * p_cam[:, 1] / z + camera.cy
    return np.stack([u, v], axis=-1)


def look_at(position, target, world_up=(0.0, 1.0, 0.0)):
    """Camera-to-world rotation for a camera at `position` looking at `target`.

    Image-up aligns with `world_up` as closely as the viewing direction
    allows. Columns of the result are the world directions of the camera
    axes (+x right, +y down, +z forward); the rotation is always proper.
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - position
    forward /= np.linalg.norm(forward)
    up = np.asarray(world_up, dtype=np.float64)
    down = -(up - np.dot(up, forward) * forward)
    n = np.linalg.norm(down)
    if n < 1e-9:
        # viewing direction parallel to up; pick any perpendicular
        alt = np.array([1.0, 0.0, 0.0]) if abs(forward[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
        down = alt - np.dot(alt, forward) * forward
        n = np.linalg.norm(down)
    down /= n
    right = np.cross(down, forward)  # x = y cross z keeps det +1
    return np.stack([right, down, forward], axis=-1)
