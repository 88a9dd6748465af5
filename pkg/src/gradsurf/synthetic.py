"""Synthetic desk-scale scenes with analytic ground truth.

Scenes are analytic signed-distance shapes with a procedural surface color,
rendered by an independent sphere-tracing oracle (never the trainable
volume renderer) so pipeline bugs cannot hide in shared code. The blob
shape carries its bumps on the frontal (+z) hemisphere: rear views alone
underdetermine them, which is exactly what the second training stage is
supposed to fix.
"""

from dataclasses import dataclass

import numpy as np

from .cameras import Camera, look_at, pixel_grid, generate_rays
from .dataset import Dataset, ViewRecord, split_views
from .meshing import TriangleMesh, mesh_from_grid

SHAPES = ("sphere", "blob", "capsule")
LIGHT_DIR = np.array([0.35, 0.75, 0.56])
LIGHT_DIR = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)


@dataclass(frozen=True)
class SynthConfig:
    shape: str = "sphere"
    texture_seed: int = 0
    n_views: int = 30
    resolution: int = 64
    noise: float = 0.0
    seed: int = 0
    yaw_threshold: float = 120.0
    camera_distance: float = 2.2
    gt_grid: int = 160

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SyntheticScene:
    sdf: callable            # (N, 3) -> (N,)
    sdf_grad: callable       # (N, 3) -> (N, 3)
    texture: callable        # (N, 3) -> (N, 3) albedo in [0, 1]
    gt_mesh: TriangleMesh
    dataset: Dataset
    bound: float
    config: SynthConfig


class _Sphere:
    radius = 0.5
    bound = 0.5

    def sdf(self, x):
        return np.linalg.norm(x, axis=-1) - self.radius

    def grad(self, x):
        n = np.linalg.norm(x, axis=-1, keepdims=True)
        return x / np.maximum(n, 1e-12)


class _Blob:
    """Smooth union of a base sphere and frontal bumps (log-sum-exp blend)."""

    k = 0.05

    def __init__(self, seed):
        rng = np.random.default_rng(np.random.PCG64(seed ^ 0x51B0B))
        self.centers = [np.zeros(3)]
        self.radii = [0.42]
        for _ in range(3):
            az = np.radians(rng.uniform(-65.0, 65.0))
            el = np.radians(rng.uniform(-35.0, 35.0))
            dist = rng.uniform(0.34, 0.42)
            c = dist * np.array([np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])
            self.centers.append(c)
            self.radii.append(rng.uniform(0.15, 0.20))
        self.centers = np.asarray(self.centers)
        self.radii = np.asarray(self.radii)
        self.bound = float(max(np.linalg.norm(self.centers, axis=1) + self.radii) + self.k * np.log(len(self.radii)))

    def _components(self, x):
        d = x[..., None, :] - self.centers           # (..., K, 3)
        dist = np.linalg.norm(d, axis=-1)            # (..., K)
        return d, dist - self.radii

    def sdf(self, x):
        _, f = self._components(x)
        m = f.min(axis=-1, keepdims=True)
        return (m - self.k * np.log(np.exp(-(f - m) / self.k).sum(axis=-1, keepdims=True)))[..., 0]

    def grad(self, x):
        d, f = self._components(x)
        m = f.min(axis=-1, keepdims=True)
        w = np.exp(-(f - m) / self.k)
        w = w / w.sum(axis=-1, keepdims=True)
        n = d / np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-12)
        return (w[..., None] * n).sum(axis=-2)


class _Capsule:
    a = np.array([0.0, -0.22, 0.0])
    b = np.array([0.0, 0.22, 0.0])
    radius = 0.32

    def __init__(self):
        self.bound = float(np.linalg.norm(self.b) + self.radius)

    def _closest(self, x):
        ab = self.b - self.a
        t = np.clip(((x - self.a) @ ab) / (ab @ ab), 0.0, 1.0)
        return self.a + t[..., None] * ab

    def sdf(self, x):
        return np.linalg.norm(x - self._closest(x), axis=-1) - self.radius

    def grad(self, x):
        d = x - self._closest(x)
        return d / np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-12)


def make_shape(name, seed=0):
    if name == "sphere":
        return _Sphere()
    if name == "blob":
        return _Blob(seed)
    if name == "capsule":
        return _Capsule()
    raise ValueError(f"unknown shape {name!r}, expected one of {SHAPES}")


def make_texture(texture_seed):
    rng = np.random.default_rng(np.random.PCG64(texture_seed ^ 0x7E47))
    omega = rng.uniform(2.5, 8.0, size=(3, 3))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=3)

    def albedo(x):
        return 0.5 + 0.28 * np.sin(x @ omega.T + phase)

    return albedo


def shade(texture, x, n, light=LIGHT_DIR):
    lam = np.maximum((n * light).sum(-1, keepdims=True), 0.0)
    return np.clip(texture(x) * (0.3 + 0.7 * lam), 0.0, 1.0)


def sphere_trace(sdf, origins, dirs, t_near, t_far, eps=1e-5, max_steps=256):
    """March rays to the surface; returns (hit mask, hit distances)."""
    t = t_near.astype(np.float64).copy()
    hit = np.zeros(len(t), dtype=bool)
    active = t < t_far
    for _ in range(max_steps):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        x = origins[idx] + t[idx, None] * dirs[idx]
        f = sdf(x)
        arrived = f < eps
        hit[idx[arrived]] = True
        active[idx[arrived]] = False
        rest = idx[~arrived]
        t[rest] += np.maximum(f[~arrived], eps * 0.5)
        active[rest[t[rest] >= t_far[rest]]] = False
    return hit, t


def _ring_cameras(config, bound):
    cams = []
    D = config.camera_distance
    res = config.resolution
    # widest focal that keeps the whole bounding sphere inside the frame,
    # backed off 10% so silhouettes never graze the border
    f = 0.9 * 0.5 * res * np.sqrt(D * D - bound * bound) / bound
    elevations = (-15.0, 0.0, 15.0)
    for i in range(config.n_views):
        az = np.radians(360.0 * i / config.n_views - 180.0)
        el = np.radians(elevations[i % len(elevations)])
        pos = D * np.array([np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])
        R = look_at(pos, np.zeros(3))
        cams.append(Camera(fx=f, fy=f, cx=res / 2.0, cy=res / 2.0,
                           rotation=R, translation=pos, width=res, height=res))
    return cams


def render_view_oracle(shape, texture, camera, bound, noise=0.0, rng=None):
    """Sphere-traced reference render of one view (float RGB in [0, 1])."""
    px = pixel_grid(camera)
    o, d = generate_rays(camera, px)
    b = (o * d).sum(-1)
    c = (o * o).sum(-1) - bound * bound
    disc = b * b - c
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0 = np.where(disc > 0, -b - sq, np.inf)
    t1 = np.where(disc > 0, -b + sq, -np.inf)
    img = np.zeros((len(px), 3))
    ok = np.isfinite(t0)
    if ok.any():
        hit, t = sphere_trace(shape.sdf, o[ok], d[ok], t0[ok], t1[ok])
        if hit.any():
            xs = o[ok][hit] + t[hit, None] * d[ok][hit]
            g = shape.grad(xs)
            n = g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
            col = shade(texture, xs, n)
            sub = np.zeros((ok.sum(), 3))
            sub[hit] = col
            img[ok] = sub
    img = img.reshape(camera.height, camera.width, 3)
    if noise > 0.0:
        img = np.clip(img + rng.normal(0.0, noise, size=img.shape), 0.0, 1.0)
    return img


def synth_scene(config):
    """Build a synthetic scene: oracle-rendered views, analytic ground-truth mesh."""
    if config.n_views < 2:
        raise ValueError("need at least 2 views")
    if config.shape not in SHAPES:
        raise ValueError(f"unknown shape {config.shape!r}, expected one of {SHAPES}")
    shape = make_shape(config.shape, config.seed)
    texture = make_texture(config.texture_seed)
    bound = shape.bound
    rng = np.random.default_rng(np.random.PCG64(config.seed))

    views = []
    for i, cam in enumerate(_ring_cameras(config, bound)):
        img = render_view_oracle(shape, texture, cam, bound * 1.02, config.noise, rng)
        img8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
        views.append(ViewRecord(name=f"view_{i:03d}", camera=cam, sensitivity="neutral",
                                rgb_data=img8.astype(np.float32) / np.float32(255.0)))

    dataset = Dataset(views=views, scene_bounds=float(bound))
    dataset = split_views(dataset, yaw_threshold=config.yaw_threshold)

    span = bound * 1.08
    g = np.linspace(-span, span, config.gt_grid)
    Y, Z = np.meshgrid(g, g, indexing="ij")
    vol = np.empty((config.gt_grid,) * 3)
    for i, gx in enumerate(g):  # slab-wise to bound peak memory
        pts = np.stack([np.full_like(Y, gx), Y, Z], axis=-1).reshape(-1, 3)
        vol[i] = shape.sdf(pts).reshape(config.gt_grid, config.gt_grid)
    gt_mesh = mesh_from_grid(vol, -span, span)
    worst = np.abs(shape.sdf(gt_mesh.vertices)).max()
    if worst > 1e-3 * bound:
        raise AssertionError(f"gt mesh deviates {worst:.2e} from the analytic surface")

    return SyntheticScene(sdf=shape.sdf, sdf_grad=shape.grad, texture=texture,
                          gt_mesh=gt_mesh, dataset=dataset, bound=bound, config=config)
