"""Scene files (versioned UTF-8 JSON, one scene per file) and dataset manifests."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import Box3D, Instance, PointCloud, Scene, validate_scene

SCENE_FORMAT = "ssd3d-scene"
SCENE_VERSION = 1
MANIFEST_FORMAT = "ssd3d-manifest"
MANIFEST_VERSION = 1
DECIMALS = 6
SPLITS = ("train", "val")


class SceneFormatError(ValueError):
    """Malformed file, unsupported version, or a scene that fails validation."""


def _r(x) -> float:
    v = round(float(x), DECIMALS)
    return 0.0 if v == 0 else v  # no "-0.0" in files


def quantize_yaw(yaw: float) -> float:
    """Yaw rounded to the file precision and kept inside [-pi, pi)."""
    y = _r(yaw)
    if y >= math.pi:
        y = _r(y - 2 * math.pi)
    if y < -math.pi:
        y = _r(y + 2 * math.pi)
    return y


def box_to_record(box: Box3D) -> Dict[str, object]:
    return {
        "center": [_r(v) for v in box.center],
        "size": [_r(v) for v in box.size],
        "yaw": quantize_yaw(box.yaw),
    }


def box_from_record(rec) -> Box3D:
    try:
        return Box3D(tuple(rec["center"]), tuple(rec["size"]), float(rec["yaw"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneFormatError(f"bad box record: {exc}") from None


def scene_to_dict(scene: Scene, class_names: Optional[Dict[int, str]] = None) -> Dict[str, object]:
    cloud = scene.cloud
    cols = [cloud.xyz]
    if cloud.reflectance is not None:
        cols.append(cloud.reflectance[:, None])
    pts = np.concatenate(cols, axis=1)
    out: Dict[str, object] = {
        "format": SCENE_FORMAT,
        "version": SCENE_VERSION,
        "id": scene.id,
        "class_names": {str(k): v for k, v in sorted((class_names or {}).items())},
        "channels": ["x", "y", "z"] + (["r"] if cloud.reflectance is not None else []),
        "points": [[_r(v) for v in row] for row in pts],
        "instances": [
            {"class_id": inst.class_id, "box": box_to_record(inst.box), "points": list(inst.interior_point_indices)}
            for inst in scene.instances
        ],
    }
    if cloud.features is not None:
        out["features"] = [[_r(v) for v in row] for row in cloud.features]
    return out


def scene_from_dict(data) -> Scene:
    """Build a scene without rejecting bad values, so validation can report them all."""
    if not isinstance(data, dict) or data.get("format") != SCENE_FORMAT:
        raise SceneFormatError("not a scene file")
    if data.get("version") != SCENE_VERSION:
        raise SceneFormatError(f"unsupported scene version {data.get('version')}")
    try:
        channels = list(data["channels"])
        pts = np.asarray(data["points"], dtype=np.float64).reshape(-1, len(channels))
        if channels[:3] != ["x", "y", "z"] or len(channels) not in (3, 4):
            raise SceneFormatError(f"unsupported channels {channels}")
        refl = pts[:, 3] if len(channels) == 4 else None
        feats = data.get("features")
        if feats is not None:
            feats = np.asarray(feats, dtype=np.float64).reshape(len(pts), -1)
        cloud = PointCloud(pts[:, :3], refl, feats, check_finite=False)
        instances = tuple(
            Instance(box_from_record(i["box"]), int(i["class_id"]), tuple(int(p) for p in i["points"]))
            for i in data["instances"]
        )
        return Scene(cloud, instances, str(data["id"]))
    except SceneFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneFormatError(f"malformed scene: {exc}") from None


def dumps_scene(scene: Scene, class_names: Optional[Dict[int, str]] = None) -> str:
    return json.dumps(scene_to_dict(scene, class_names), separators=(",", ":")) + "\n"


def loads_scene(text: str, validate: bool = True) -> Scene:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"invalid JSON: {exc}") from None
    scene = scene_from_dict(data)
    if validate:
        report = validate_scene(scene)
        if report:
            raise SceneFormatError("; ".join(str(v) for v in report))
    return scene


def save_scene(path, scene: Scene, class_names: Optional[Dict[int, str]] = None) -> None:
    Path(path).write_text(dumps_scene(scene, class_names), encoding="utf-8")


def load_scene(path, validate: bool = True) -> Scene:
    return loads_scene(Path(path).read_text(encoding="utf-8"), validate)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    split: str


def save_manifest(path, entries: Sequence[ManifestEntry], meta: Optional[Dict[str, object]] = None) -> None:
    for e in entries:
        if e.split not in SPLITS:
            raise ValueError(f"unknown split {e.split!r}")
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "meta": meta or {},
        "scenes": [{"path": e.path, "split": e.split} for e in entries],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_manifest(path) -> List[ManifestEntry]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"invalid manifest JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MANIFEST_FORMAT:
        raise SceneFormatError("not a manifest file")
    if doc.get("version") != MANIFEST_VERSION:
        raise SceneFormatError(f"unsupported manifest version {doc.get('version')}")
    out = []
    for rec in doc.get("scenes", []):
        if rec.get("split") not in SPLITS:
            raise SceneFormatError(f"unknown split {rec.get('split')!r}")
        out.append(ManifestEntry(str(rec["path"]), rec["split"]))
    return out


def load_split(manifest_path, split: str) -> List[Scene]:
    """Scenes tagged ``split``; relative paths resolve against the manifest's folder."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
    base = Path(manifest_path).parent
    scenes = []
    for e in load_manifest(manifest_path):
        if e.split == split:
            p = Path(e.path)
            scenes.append(load_scene(p if p.is_absolute() else base / p))
    return scenes


def write_dataset(out_dir, splits: Dict[str, Sequence[Scene]], class_names=None, meta=None) -> Path:
    """Write every scene plus ``manifest.json``; returns the manifest path."""
    unknown = set(splits) - set(SPLITS)
    if unknown:
        raise ValueError(f"unknown splits {sorted(unknown)}")
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    entries = []
    for split in SPLITS:
        for scene in splits.get(split, ()):
            rel = os.path.join("scenes", f"{scene.id}.json")
            save_scene(out / rel, scene, class_names)
            entries.append(ManifestEntry(rel, split))
    manifest = out / "manifest.json"
    save_manifest(manifest, entries, meta)
    return manifest
