"""Multi-view dataset ingestion, the view-split policy, and image utilities.

On-disk layout (produced by the synthesizer and the protect command):

    images/<name>.png      8-bit RGB, privacy-neutral views (and raw views
                           that are marked for protection but not yet run
                           through the operator)
    protected/<name>.png   16-bit single-channel gradient magnitudes,
                           values = round(mag * 65535 / g_max)
    protected/manifest.json  operator config + per-view g_max
    cameras.json           scene_bounds + per-view intrinsics/extrinsics
    split.json             view name -> "neutral" | "protected"
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .cameras import Camera
from .errors import DatasetError
from .privacy import OperatorConfig, decode_16bit, encode_16bit

log = logging.getLogger(__name__)


@dataclass
class ViewRecord:
    name: str
    camera: Camera
    sensitivity: str                      # "neutral" | "protected" (declared)
    rgb_data: np.ndarray | None = None    # (H, W, 3) float32 in [0, 1]
    magnitude_data: np.ndarray | None = None  # (H, W) float32

    def __post_init__(self):
        if self.sensitivity not in ("neutral", "protected"):
            raise ValueError(f"bad sensitivity {self.sensitivity!r}")
        if self.sensitivity == "neutral" and self.rgb_data is None:
            raise ValueError(f"neutral view {self.name} must carry an RGB image")
        if self.rgb_data is not None and self.rgb_data.ndim != 3:
            raise ValueError(f"view {self.name}: rgb payload must be 3-channel")
        if self.magnitude_data is not None and self.magnitude_data.ndim != 2:
            raise ValueError(f"view {self.name}: magnitude payload must be single-channel")

    def rgb(self):
        """RGB payload accessor; the only path trainers use to read colors."""
        if self.rgb_data is None:
            raise DatasetError(f"view {self.name} holds no RGB data")
        return self.rgb_data

    def magnitude(self):
        """Gradient-magnitude accessor; the only path trainers read it through."""
        if self.magnitude_data is None:
            raise DatasetError(f"view {self.name} holds no protected magnitude; run protect first")
        return self.magnitude_data


@dataclass
class Dataset:
    views: list
    scene_bounds: float = 1.0
    operator: OperatorConfig | None = None  # set once protected views exist

    def neutral_views(self):
        return [v for v in self.views if v.sensitivity == "neutral"]

    def protected_views(self):
        return [v for v in self.views if v.sensitivity == "protected"]


def _read_image(path):
    try:
        with Image.open(path) as im:
            return np.array(im)
    except Exception as e:
        raise DatasetError(f"unreadable image {path}: {e}") from e


def load_dataset(path):
    """Load the documented layout; see the module docstring."""
    root = Path(path)
    cam_path = root / "cameras.json"
    if not cam_path.exists():
        raise DatasetError(f"missing cameras manifest {cam_path}")
    try:
        cam_doc = json.loads(cam_path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"bad cameras.json: {e}") from e
    entries = cam_doc.get("views", [])
    scene_bounds = float(cam_doc.get("scene_bounds", 1.0))

    rgb_files = {p.stem: p for p in sorted((root / "images").glob("*.png"))} if (root / "images").exists() else {}
    prot_files = {p.stem: p for p in sorted((root / "protected").glob("*.png"))} if (root / "protected").exists() else {}
    n_images = len(rgb_files) + len(prot_files)
    if n_images == 0:
        raise DatasetError(f"no views found under {root}")
    if len(entries) != n_images:
        raise DatasetError(f"manifest/image count mismatch: cameras.json lists {len(entries)} "
                           f"views but {n_images} image files exist")

    split = {}
    split_path = root / "split.json"
    if split_path.exists():
        split = json.loads(split_path.read_text())

    operator = None
    g_max = {}
    prot_manifest = root / "protected" / "manifest.json"
    if prot_manifest.exists():
        doc = json.loads(prot_manifest.read_text())
        operator = OperatorConfig.from_dict(doc["operator"])
        g_max = doc.get("g_max", {})

    views = []
    for entry in entries:
        name = entry.get("name")
        camera = Camera.from_dict(entry)
        if name in rgb_files:
            arr = _read_image(rgb_files[name])
            if arr.ndim != 3 or arr.shape[2] < 3:
                raise DatasetError(f"image {rgb_files[name]} is not RGB")
            rgb = (arr[:, :, :3].astype(np.float32) / np.float32(255.0))
            sens = split.get(name, "neutral")
            views.append(ViewRecord(name=name, camera=camera, sensitivity=sens, rgb_data=rgb))
        elif name in prot_files:
            if split.get(name, "protected") != "protected":
                raise DatasetError(f"view {name} is in protected/ but split.json marks it neutral")
            arr = _read_image(prot_files[name])
            if arr.ndim != 2:
                raise DatasetError(f"protected image {prot_files[name]} is not single-channel")
            if name not in g_max:
                raise DatasetError(f"protected view {name} missing g_max in protected/manifest.json")
            mag = decode_16bit(arr, g_max[name])
            views.append(ViewRecord(name=name, camera=camera, sensitivity="protected",
                                    magnitude_data=mag))
        else:
            raise DatasetError(f"camera entry {name!r} has no image file")
    return Dataset(views=views, scene_bounds=scene_bounds, operator=operator)


def save_dataset(dataset, path):
    """Write the on-disk layout for a dataset (RGB and/or protected payloads)."""
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    split = {}
    g_max = {}
    any_protected_payload = False
    for view in dataset.views:
        entries.append(view.camera.to_dict(view.name))
        split[view.name] = view.sensitivity
        if view.magnitude_data is not None:
            any_protected_payload = True
            (root / "protected").mkdir(exist_ok=True)
            raster, gm = encode_16bit(view.magnitude_data)
            Image.fromarray(raster).save(root / "protected" / f"{view.name}.png")
            g_max[view.name] = gm
        else:
            arr = np.clip(np.round(view.rgb() * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(arr).save(root / "images" / f"{view.name}.png")
    (root / "cameras.json").write_text(json.dumps(
        {"format": 1, "scene_bounds": dataset.scene_bounds, "views": entries}, indent=1))
    (root / "split.json").write_text(json.dumps(split, indent=1))
    if any_protected_payload:
        operator = dataset.operator or OperatorConfig()
        (root / "protected" / "manifest.json").write_text(json.dumps(
            {"format": 1, "operator": operator.to_dict(), "g_max": g_max}, indent=1))


def split_views(dataset, yaw_threshold=None, manifest=None, front_axis=(0.0, 0.0, 1.0)):
    """Assign sensitivities by frontal-cone policy or an explicit manifest.

    A view is protected when the angle between its incoming viewing direction
    (the negated optical axis) and `front_axis` is strictly below
    `yaw_threshold` degrees. An explicit manifest overrides the policy.
    """
    if manifest is None and yaw_threshold is None:
        raise ValueError("provide a yaw threshold or an explicit manifest")
    front = np.asarray(front_axis, dtype=np.float64)
    front = front / np.linalg.norm(front)
    new_views = []
    for view in dataset.views:
        if manifest is not None:
            sens = manifest.get(view.name, "neutral")
        else:
            toward_front = -view.camera.optical_axis
            ang = np.degrees(np.arccos(np.clip(np.dot(toward_front, front), -1.0, 1.0)))
            sens = "protected" if ang < yaw_threshold else "neutral"
        new_views.append(replace(view, sensitivity=sens))
    out = Dataset(views=new_views, scene_bounds=dataset.scene_bounds, operator=dataset.operator)
    if not out.neutral_views():
        log.warning("split left zero neutral views; stage-1 training will need a template")
    return out


def downsample_image(image, target):
    """Area-average pooling to (w, h); source dims must be integer multiples."""
    img = np.asarray(image)
    w, h = target
    H, W = img.shape[0], img.shape[1]
    if H % h != 0 or W % w != 0:
        raise ValueError(f"cannot downsample {W}x{H} to {w}x{h}: non-integer ratio")
    ky, kx = H // h, W // w
    if img.ndim == 2:
        return img.reshape(h, ky, w, kx).mean(axis=(1, 3))
    return img.reshape(h, ky, w, kx, img.shape[2]).mean(axis=(1, 3))
