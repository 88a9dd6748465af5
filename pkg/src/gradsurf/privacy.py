"""Gradient-magnitude privacy operator and its verification helpers.

The operator maps an RGB (or monochrome) raster to a single-channel map:
per pixel, the L2 norm over color channels of the x-derivative plus the L2
norm over channels of the y-derivative. Only this magnitude leaves the
user's side; collision constructions below witness that the mapping is
many-to-one.

One implementation backs both the dataset-side protection and the
differentiable training loss, so stored references and re-applied operators
agree bit for bit.
"""

import logging
from dataclasses import dataclass, replace

import jax.numpy as jnp
import numpy as np

log = logging.getLogger(__name__)

KERNELS = ("sobel", "cdiff")

# Slope-consistent scales: a unit-slope ramp yields magnitude 1 under both
# kernels (sobel row sums to 8, central difference spans 2 pixels).
_CANONICAL_SCALE = {"sobel": 1.0 / 8.0, "cdiff": 1.0 / 2.0}

# Collision constructions snap values to this dyadic grid so that every
# derivative below is computed exactly in float arithmetic.
_DYADIC = 1024


@dataclass(frozen=True)
class OperatorConfig:
    kernel: str = "sobel"
    normalization: float | None = None  # None = canonical slope-consistent scale
    boundary: str = "replicate"

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}, expected one of {KERNELS}")
        if self.boundary != "replicate":
            raise ValueError("only replicate padding is supported")

    @property
    def scale(self):
        return _CANONICAL_SCALE[self.kernel] if self.normalization is None else self.normalization

    def to_dict(self):
        return {"kernel": self.kernel, "normalization": self.normalization, "boundary": self.boundary}

    @classmethod
    def from_dict(cls, d):
        return cls(kernel=d["kernel"], normalization=d.get("normalization"), boundary=d.get("boundary", "replicate"))


@dataclass(frozen=True)
class ProtectedImage:
    magnitude: np.ndarray        # (H, W) float32, >= 0
    source_resolution: tuple     # (w, h) of the RGB source

    def __post_init__(self):
        mag = np.asarray(self.magnitude)
        if mag.ndim != 2:
            raise ValueError("magnitude must be single-channel")
        if mag.size and mag.min() < 0:
            raise ValueError("magnitude must be non-negative")


def gradient_magnitude(image, cfg=OperatorConfig()):
    """Apply the operator to an (H, W, C) or (H, W) image; returns (H, W).

    Differentiable (jax) and dtype-following; replicate padding at borders.
    """
    img = jnp.asarray(image)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"image {img.shape[:2]} smaller than the 3x3 kernel support")
    p = jnp.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    s = cfg.scale
    if cfg.kernel == "cdiff":
        dx = (p[1:-1, 2:] - p[1:-1, :-2]) * s
        dy = (p[2:, 1:-1] - p[:-2, 1:-1]) * s
    else:  # sobel, separable as (1,2,1) smoothing times (-1,0,1) difference
        sm_y = p[:-2, :] + 2.0 * p[1:-1, :] + p[2:, :]
        dx = (sm_y[:, 2:] - sm_y[:, :-2]) * s
        sm_x = p[:, :-2] + 2.0 * p[:, 1:-1] + p[:, 2:]
        dy = (sm_x[2:, :] - sm_x[:-2, :]) * s
    return jnp.sqrt((dx * dx).sum(-1)) + jnp.sqrt((dy * dy).sum(-1))


def protect_image(image, cfg=OperatorConfig()):
    """Convert an RGB raster in [0, 1] to its ProtectedImage."""
    img = np.asarray(image)
    h, w = img.shape[0], img.shape[1]
    mag = np.asarray(gradient_magnitude(img, cfg), dtype=np.float32)
    return ProtectedImage(magnitude=mag, source_resolution=(w, h))


def encode_16bit(magnitude):
    """Quantize a magnitude map to uint16; returns (raster, g_max)."""
    mag = np.asarray(magnitude, dtype=np.float64)
    g_max = float(mag.max()) if mag.size else 0.0
    if g_max <= 0.0:
        return np.zeros(mag.shape, dtype=np.uint16), 0.0
    return np.round(mag * (65535.0 / g_max)).astype(np.uint16), g_max


def decode_16bit(raster, g_max):
    return (np.asarray(raster, dtype=np.float32) * (np.float32(g_max) / np.float32(65535.0))).astype(np.float32)


def _snap_dyadic(image):
    return np.round(np.asarray(image, dtype=np.float64) * _DYADIC) / _DYADIC


def verify_multiplicity(image, cfg=OperatorConfig()):
    """Construct colliding images and check operator invariances.

    Returns (image2, report). image2 is the per-channel negation of the
    (dyadic-snapped) input about its range midpoint; the report also covers
    image3 = input + k for the largest in-range constant offset k. Snapping
    to a 1/1024 grid makes every kernel operation exact in float arithmetic,
    so the collision checks compare magnitude maps bit for bit.
    """
    work = _snap_dyadic(np.clip(image, 0.0, 1.0))
    quant_delta = float(np.max(np.abs(work - np.asarray(image, dtype=np.float64)))) if work.size else 0.0
    mn, mx = float(work.min()), float(work.max())
    image2 = (mn + mx) - work
    k = np.floor((1.0 - mx) * _DYADIC) / _DYADIC
    if k == 0.0:
        k = -np.floor(mn * _DYADIC) / _DYADIC
    image3 = work + k

    mag = np.asarray(gradient_magnitude(work, cfg))
    mag2 = np.asarray(gradient_magnitude(image2, cfg))
    mag3 = np.asarray(gradient_magnitude(image3, cfg))

    negation_exact = bool(np.array_equal(mag, mag2))
    offset_exact = bool(np.array_equal(mag, mag3))
    distance = float(np.max(np.abs(image2 - work)))
    degenerate = bool(distance == 0.0)

    report = {
        "negation_invariance_exact": negation_exact,
        "offset_invariance_exact": offset_exact,
        "collision_distance_linf": distance,
        "degenerate_midpoint_fixed_point": degenerate,
        "offset_used": float(k),
        "quantization_delta_linf": quant_delta,
        "passed": negation_exact and offset_exact,
    }
    return image2, report


def collision_witness(size=5, seed=0):
    """Two distinct monochrome images with identical boundaries and magnitude maps.

    The boundary is held at the midpoint constant and interior deviations are
    negated about it, so both share all boundary rows/columns (left and bottom
    included) yet differ everywhere the interior is off-midpoint.
    """
    rng = np.random.default_rng(seed)
    c = 0.5
    img = np.full((size, size), c)
    interior = rng.integers(1, _DYADIC, size=(size - 2, size - 2)) / _DYADIC
    img[1:-1, 1:-1] = np.where(interior == c, c + 1.0 / _DYADIC, interior)
    img2 = 2.0 * c - img
    return img, img2


def protect_dataset(dataset, cfg=OperatorConfig()):
    """Replace every protected-marked RGB view with its gradient-magnitude map.

    Neutral views pass through untouched; the original RGB of protected views
    is dropped. Views already in protected form are skipped with a notice.
    """
    from .dataset import Dataset, ViewRecord  # local import to avoid a cycle

    new_views = []
    for view in dataset.views:
        if view.sensitivity == "protected":
            if view.rgb_data is None:
                log.info("view %s already protected; skipping", view.name)
                new_views.append(view)
            else:
                protected = protect_image(view.rgb_data, cfg)
                new_views.append(ViewRecord(
                    name=view.name, camera=view.camera, sensitivity="protected",
                    rgb_data=None, magnitude_data=protected.magnitude))
        else:
            new_views.append(view)
    return Dataset(views=new_views, scene_bounds=dataset.scene_bounds, operator=cfg)
