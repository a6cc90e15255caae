"""File-backend manifests.

Paths inside a manifest are relative to the manifest's directory so a dump can
be moved as a unit.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

KEYS = {"native_resolution", "feature_dims", "images", "segmenter"}
SEGMENTER_KINDS = {"synthetic", "decoder_graph"}


def _rel(path: Path, root: Path) -> str:
    return Path(os.path.relpath(Path(path).resolve(), Path(root).resolve())).as_posix()


def build_manifest(
    manifest_path: Path,
    native_resolution: int,
    feature_dims: tuple[int, int, int],
    images: dict[str, tuple[Path, Path]],
    segmenter: tuple[str, Path],
) -> dict:
    kind, target = segmenter
    if kind not in SEGMENTER_KINDS:
        raise ValueError(f"segmenter kind must be one of {sorted(SEGMENTER_KINDS)}, got {kind!r}")
    root = Path(manifest_path).parent
    return {
        "native_resolution": int(native_resolution),
        "feature_dims": [int(d) for d in feature_dims],
        "images": {
            image_id: {"anomaly_map": _rel(amap, root), "features": _rel(feat, root)}
            for image_id, (amap, feat) in sorted(images.items())
        },
        "segmenter": {kind: _rel(target, root)},
    }


def write_manifest(path: Path, manifest: dict) -> None:
    validate(manifest)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path: Path) -> dict:
    manifest = json.loads(Path(path).read_text())
    validate(manifest)
    return manifest


def validate(manifest: dict) -> None:
    keys = set(manifest)
    if keys != KEYS:
        raise ValueError(f"manifest keys {sorted(keys)}, expected {sorted(KEYS)}")
    if len(manifest["feature_dims"]) != 3:
        raise ValueError("feature_dims needs 3 entries")
    seg = manifest["segmenter"]
    if len(seg) != 1 or next(iter(seg)) not in SEGMENTER_KINDS:
        raise ValueError(f"segmenter must be one of {sorted(SEGMENTER_KINDS)}: {seg}")
    for image_id, entry in manifest["images"].items():
        if set(entry) != {"anomaly_map", "features"}:
            raise ValueError(f"image {image_id}: entry keys {sorted(entry)}")
        for p in entry.values():
            if Path(p).is_absolute():
                raise ValueError(f"image {image_id}: path {p} is absolute")
