"""Zero-level-set mesh extraction, cropping/alignment, and Chamfer distance."""

import functools
import hashlib
from dataclasses import dataclass

import jax
import numpy as np
from scipy.spatial import cKDTree
from skimage import measure

from .errors import EmptyLevelSetError
from .fields import eval_sdf_feat


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64, world units
    faces: np.ndarray     # (F, 3) int64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)


@dataclass
class CdReport:
    cd: float
    mean_a_to_b: float
    mean_b_to_a: float
    n_samples: int
    mode: str

    def to_dict(self):
        return dict(self.__dict__)


def _face_areas(mesh):
    v = mesh.vertices
    a, b, c = v[mesh.faces[:, 0]], v[mesh.faces[:, 1]], v[mesh.faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _drop_degenerate(vertices, faces, area_eps=1e-12):
    m = TriangleMesh(vertices, faces)
    keep = _face_areas(m) > area_eps
    return TriangleMesh(vertices, m.faces[keep])


def mesh_from_grid(volume, lo, hi):
    """Marching cubes on a (R, R, R) scalar grid spanning [lo, hi]^3 at level 0."""
    res = volume.shape[0]
    cell = (hi - lo) / (res - 1)
    if volume.min() > 0.0 or volume.max() < 0.0:
        raise EmptyLevelSetError("empty level set: the field has uniform sign on the grid")
    verts, faces, _, _ = measure.marching_cubes(volume, level=0.0, spacing=(cell, cell, cell))
    verts = verts + lo
    return _drop_degenerate(verts, faces)


@functools.partial(jax.jit, static_argnums=())
def _sdf_chunk(params, x):
    return eval_sdf_feat(params, x)[0]


def grid_sdf(params, grid_res, bounds, chunk=65536):
    """Evaluate the learned SDF over a grid_res^3 lattice spanning bounds^3."""
    lo, hi = bounds
    g = np.linspace(lo, hi, grid_res, dtype=np.float32)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    pts = np.stack([X.reshape(-1), Y.reshape(-1), Z.reshape(-1)], axis=-1)
    out = np.empty(len(pts), dtype=np.float32)
    for i in range(0, len(pts), chunk):
        block = pts[i:i + chunk]
        pad = chunk - len(block)
        if pad:
            block = np.concatenate([block, np.zeros((pad, 3), dtype=np.float32)])
        vals = np.asarray(_sdf_chunk(params, block))
        out[i:i + chunk] = vals[:chunk - pad] if pad else vals
    return out.reshape(grid_res, grid_res, grid_res)


def extract_mesh(params, grid_res=256, bounds=(-1.0, 1.0)):
    """Marching cubes over the learned field; vertices interpolate the zero crossing."""
    if grid_res < 16:
        raise ValueError("grid_res must be >= 16")
    if bounds[0] > -1.0 or bounds[1] < 1.0:
        raise ValueError("bounds must enclose the unit sphere")
    vol = grid_sdf(params, grid_res, bounds)
    return mesh_from_grid(vol, bounds[0], bounds[1])


def crop_mesh(mesh, bbox):
    """Keep faces whose centroids lie inside the axis-aligned box, reindexed."""
    lo = np.asarray(bbox[0], dtype=np.float64)
    hi = np.asarray(bbox[1], dtype=np.float64)
    if np.any(hi <= lo):
        raise ValueError(f"degenerate crop box {bbox}")
    cent = mesh.vertices[mesh.faces].mean(axis=1)
    keep = np.all((cent >= lo) & (cent <= hi), axis=1)
    faces = mesh.faces[keep]
    if not len(faces):
        raise ValueError("crop box contains no face centroids")
    used = np.unique(faces)
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(mesh.vertices[used], remap[faces])


def align_mesh(mesh, rotation=None, translation=(0.0, 0.0, 0.0), scale=1.0):
    """Apply a similarity transform v -> scale * R v + t."""
    R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
    if not np.allclose(R @ R.T, np.eye(3), atol=1e-8) or np.linalg.det(R) < 0.0:
        raise ValueError("rotation must be proper orthonormal")
    if scale == 0.0:
        raise ValueError("non-invertible transform: scale is zero")
    t = np.asarray(translation, dtype=np.float64)
    return TriangleMesh(scale * (mesh.vertices @ R.T) + t, mesh.faces.copy())


def _mesh_seed(mesh, seed):
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(mesh.vertices).tobytes())
    digest.update(np.ascontiguousarray(mesh.faces).tobytes())
    return (int.from_bytes(digest.digest()[:8], "little") ^ seed) & 0xFFFFFFFFFFFFFFFF


def sample_surface(mesh, n_samples, seed=0):
    """Area-weighted uniform surface samples; the sample seed is derived from
    the mesh content so chamfer_distance is exactly symmetric in its arguments.

    Meshes without faces are treated as point sets (degenerate test mode).
    """
    if not len(mesh.vertices):
        raise ValueError("empty mesh")
    if not len(mesh.faces):
        return mesh.vertices.copy()
    rng = np.random.default_rng(np.random.PCG64(_mesh_seed(mesh, seed)))
    areas = _face_areas(mesh)
    probs = areas / areas.sum()
    idx = rng.choice(len(mesh.faces), size=n_samples, p=probs)
    tri = mesh.vertices[mesh.faces[idx]]
    u = rng.random(n_samples)
    v = rng.random(n_samples)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    return tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])


def chamfer_distance(mesh_a, mesh_b, n_samples=100_000, seed=0, mode="euclidean"):
    """Symmetric Chamfer distance between surface samples of two meshes.

    euclidean: average of the two directed mean distances.
    squared:   same with squared distances.
    """
    if mode not in ("euclidean", "squared"):
        raise ValueError(f"unknown mode {mode!r}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    pa = sample_surface(mesh_a, n_samples, seed)
    pb = sample_surface(mesh_b, n_samples, seed)
    d_ab = cKDTree(pb).query(pa, workers=-1)[0]
    d_ba = cKDTree(pa).query(pb, workers=-1)[0]
    if mode == "squared":
        d_ab, d_ba = d_ab ** 2, d_ba ** 2
    m_ab, m_ba = float(d_ab.mean()), float(d_ba.mean())
    return CdReport(cd=(m_ab + m_ba) / 2.0, mean_a_to_b=m_ab, mean_b_to_a=m_ba,
                    n_samples=n_samples, mode=mode)


def write_obj(mesh, path):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def read_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return TriangleMesh(np.asarray(verts, dtype=np.float64),
                        np.asarray(faces, dtype=np.int64) if faces else np.zeros((0, 3), np.int64))
