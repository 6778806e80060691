"""On-disk dataset layout.

::

    <root>/meta.json
    <root>/<category>/<instance>/<view:03>_{rgb,normal,nocs,mask}.png
    <root>/<category>/<instance>/<view:03>_depth.png   # 16-bit, millimeters
    <root>/<category>/<instance>/<view:03>_pose.json

``meta.json`` records the category list (id = index + 1), intrinsics, image
size, format version and a SHA-256 per file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..core import CameraIntrinsics, NocsMap, SimilarityPose
from .render import RenderedView

FORMAT_VERSION = 1
MAPS = ("rgb", "normal", "nocs", "mask", "depth")


class DatasetError(RuntimeError):
    """Missing, corrupt or inconsistent dataset file."""

    def __init__(self, message: str, path: Path | None = None):
        super().__init__(f"{message}: {path}" if path is not None else message)
        self.path = path


@dataclass
class Dataset:
    views: list[RenderedView]
    categories: list[str]
    intrinsics: CameraIntrinsics
    meta: dict

    def __len__(self) -> int:
        return len(self.views)

    def category_name(self, category_id: int) -> str:
        return "unknown" if category_id == 0 else self.categories[category_id - 1]


def _u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


def encode_view(view: RenderedView) -> dict[str, Image.Image]:
    depth_mm = np.clip(np.rint(view.depth * 1000.0), 0, 65535).astype(np.uint16)
    return {
        "rgb": Image.fromarray(_u8(view.rgb), "RGB"),
        "normal": Image.fromarray(_u8(view.normal * 0.5 + 0.5), "RGB"),
        "nocs": Image.fromarray(_u8(view.nocs.values), "RGB"),
        "mask": Image.fromarray(view.mask.astype(np.uint8) * 255, "L"),
        "depth": Image.fromarray(depth_mm),
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def view_stem(categories: list[str], view: RenderedView) -> str:
    name = "unknown" if view.category == 0 else categories[view.category - 1]
    return f"{name}/{view.instance}/{view.view_index:03d}"


def write_dataset(views: list[RenderedView], directory, categories: list[str]) -> Path:
    root = Path(directory)
    if not views:
        raise DatasetError("refusing to write an empty dataset")
    k = views[0].intrinsics
    files: dict[str, str] = {}
    for view in views:
        stem = view_stem(categories, view)
        (root / stem).parent.mkdir(parents=True, exist_ok=True)
        for name, img in encode_view(view).items():
            rel = f"{stem}_{name}.png"
            img.save(root / rel, format="PNG", optimize=False)
            files[rel] = _sha256(root / rel)
        rel = f"{stem}_pose.json"
        pose = {**view.pose.to_dict(), "category": view.category}
        (root / rel).write_text(json.dumps(pose, indent=1, sort_keys=True))
        files[rel] = _sha256(root / rel)
    meta = {
        "format_version": FORMAT_VERSION,
        "categories": list(categories),
        "intrinsics": k.to_dict(),
        "image_size": [k.height, k.width],
        "files": dict(sorted(files.items())),
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return root


def _load(path: Path, expected: str | None) -> bytes:
    if not path.is_file():
        raise DatasetError("missing dataset file", path)
    data = path.read_bytes()
    if expected is not None and hashlib.sha256(data).hexdigest() != expected:
        raise DatasetError("checksum mismatch", path)
    return data


def _image(path: Path, expected: str | None) -> np.ndarray:
    import io

    try:
        return np.asarray(Image.open(io.BytesIO(_load(path, expected))))
    except DatasetError:
        raise
    except Exception as exc:  # PIL raises a zoo of decoder errors
        raise DatasetError(f"corrupt image ({exc})", path) from exc


def read_view(root: Path, stem: str, k: CameraIntrinsics, files: dict | None = None) -> RenderedView:
    files = files or {}
    get = lambda name: _image(root / f"{stem}_{name}.png", files.get(f"{stem}_{name}.png"))  # noqa: E731
    mask = get("mask") > 127
    nocs = get("nocs").astype(np.float64) / 255.0
    normal = get("normal").astype(np.float64) / 255.0 * 2.0 - 1.0
    norms = np.linalg.norm(normal, axis=-1, keepdims=True)
    normal = np.where(mask[..., None], normal / np.maximum(norms, 1e-12), 0.0)
    depth = get("depth").astype(np.float64) / 1000.0
    pose_path = root / f"{stem}_pose.json"
    try:
        pose_d = json.loads(_load(pose_path, files.get(f"{stem}_pose.json")))
    except json.JSONDecodeError as exc:
        raise DatasetError("corrupt pose file", pose_path) from exc
    _, instance, view_idx = stem.split("/")
    return RenderedView(
        rgb=get("rgb").astype(np.float64) / 255.0,
        depth=depth,
        normal=normal,
        nocs=NocsMap(nocs, mask),
        mask=mask,
        pose=SimilarityPose.from_dict(pose_d),
        category=int(pose_d["category"]),
        intrinsics=k,
        instance=instance,
        view_index=int(view_idx),
    )


def read_dataset(directory, verify: bool = True) -> Dataset:
    root = Path(directory)
    meta_path = root / "meta.json"
    try:
        meta = json.loads(_load(meta_path, None))
    except json.JSONDecodeError as exc:
        raise DatasetError("corrupt meta file", meta_path) from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"unsupported format version {meta.get('format_version')}", meta_path)
    k = CameraIntrinsics.from_dict(meta["intrinsics"])
    files = meta["files"] if verify else {}
    stems = sorted({rel.rsplit("_", 1)[0] for rel in meta["files"]})
    views = [read_view(root, stem, k, files) for stem in stems]
    return Dataset(views, list(meta["categories"]), k, meta)
