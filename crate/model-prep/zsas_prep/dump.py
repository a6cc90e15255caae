"""Runs exported graphs over a dataset and writes a file-backend manifest."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import onnxruntime as ort
from PIL import Image

from .graphs import read_metadata
from .manifest import build_manifest, write_manifest
from .recipe import ExportRecipe, Preprocess
from .tensors import write_tensor

log = logging.getLogger(__name__)


def scan_dataset(root: Path) -> list[tuple[str, Path]]:
    """``<root>/<category>/test/<defect>/<nnn>.png`` as ``(category/defect/nnn, path)``."""
    root = Path(root)
    out = []
    for path in sorted(root.glob("*/test/*/*.png")):
        category = path.parents[2].name
        out.append((f"{category}/{path.parent.name}/{path.stem}", path))
    return out


def _taps(in_len: int, out_len: int):
    s = (np.arange(out_len, dtype=np.float64) + 0.5) * in_len / out_len - 0.5
    s = np.clip(s, 0.0, in_len - 1)
    i0 = np.floor(s).astype(np.int64)
    i1 = np.minimum(i0 + 1, in_len - 1)
    return i0, i1, s - i0


def resize_bilinear(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-center aligned, edge-clamped bilinear resampling of a 2-D array."""
    in_h, in_w = plane.shape
    if (in_h, in_w) == (out_h, out_w):
        return plane.astype(np.float32)
    p = plane.astype(np.float64)
    y0, y1, ty = _taps(in_h, out_h)
    x0, x1, tx = _taps(in_w, out_w)
    ty, tx = ty[:, None], tx[None, :]
    top = p[y0][:, x0] * (1.0 - tx) + p[y0][:, x1] * tx
    bottom = p[y1][:, x0] * (1.0 - tx) + p[y1][:, x1] * tx
    return (top * (1.0 - ty) + bottom * ty).astype(np.float32)


def image_tensor(path: Path, pre: Preprocess) -> np.ndarray:
    rgb = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    s = pre.input_size
    planes = [
        (resize_bilinear(rgb[..., c], s, s) - np.float32(pre.mean[c])) / np.float32(pre.std[c])
        for c in range(3)
    ]
    return np.stack(planes)[None].astype(np.float32)


def _session(path: Path) -> ort.InferenceSession:
    opts = ort.SessionOptions()
    opts.intra_op_num_threads = 1
    opts.inter_op_num_threads = 1
    return ort.InferenceSession(str(path), opts, providers=["CPUExecutionProvider"])


@dataclass
class DumpResult:
    manifest: Path
    written: list[str] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def dump_precomputed(recipe: ExportRecipe, images: list[tuple[str, Path]], out_dir: Path) -> DumpResult:
    """Writes anomaly maps and feature grids for ``images`` plus ``manifest.json``.

    Failed images are left out of the manifest and listed in ``dump_report.json``.
    """
    out_dir = Path(out_dir)
    encoder, scorer = _session(recipe.encoder_path), _session(recipe.scorer_path)
    enc_pre = Preprocess.from_metadata(read_metadata(recipe.encoder_path))
    sc_pre = Preprocess.from_metadata(read_metadata(recipe.scorer_path))
    enc_in, sc_in = encoder.get_inputs()[0].name, scorer.get_inputs()[0].name

    manifest_path = out_dir / "manifest.json"
    result = DumpResult(manifest_path)
    entries: dict[str, tuple[Path, Path]] = {}
    native = feature_dims = None
    for n, (image_id, path) in enumerate(images):
        try:
            emb = encoder.run(None, {enc_in: image_tensor(path, enc_pre)})[0]
            amap = scorer.run(None, {sc_in: image_tensor(path, sc_pre)})[0]
            if emb.ndim != 4 or emb.shape[0] != 1:
                raise ValueError(f"encoder output {emb.shape}, expected [1, C, h, w]")
            amap = amap.reshape(amap.shape[-2:])
            if amap.shape[0] != amap.shape[1]:
                raise ValueError(f"anomaly map {amap.shape} is not square")
            if native is None:
                native, feature_dims = amap.shape[0], tuple(emb.shape[1:])
            elif (amap.shape[0], tuple(emb.shape[1:])) != (native, feature_dims):
                raise ValueError("tensor shapes differ from earlier images")
        except Exception as e:  # noqa: BLE001
            log.warning("%s: %s", image_id, e)
            result.failures.append({"id": image_id, "error": str(e)})
            continue
        amap_path = out_dir / "maps" / f"{n:05}.f32"
        feat_path = out_dir / "features" / f"{n:05}.f32"
        write_tensor(amap_path, amap)
        write_tensor(feat_path, emb[0])
        entries[image_id] = (amap_path, feat_path)
        result.written.append(image_id)

    if native is None:
        raise RuntimeError(f"no image could be processed: {result.failures}")
    manifest = build_manifest(manifest_path, native, feature_dims, entries, ("decoder_graph", recipe.decoder_path))
    write_manifest(manifest_path, manifest)
    report = {"images": len(images), "written": len(entries), "partial": result.partial, "failures": result.failures}
    (out_dir / "dump_report.json").write_text(json.dumps(report, indent=2) + "\n")
    return result
