"""Graph signatures and metadata shared by the exporters."""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import onnx
import torch

DECODER_INPUTS = ("image_embeddings", "point_coords", "point_labels", "mask_input", "has_mask_input")
DECODER_OUTPUTS = ("masks", "iou_predictions", "low_res_masks")


class SignatureError(ValueError):
    pass


@contextmanager
def exportable_attention():
    """The fused attention kernel has no ONNX mapping; trace the unfused path."""
    was = torch.backends.mha.get_fastpath_enabled()
    torch.backends.mha.set_fastpath_enabled(False)
    try:
        yield
    finally:
        torch.backends.mha.set_fastpath_enabled(was)


def set_metadata(path: Path, meta: dict[str, str]) -> None:
    model = onnx.load(str(path))
    kept = [p for p in model.metadata_props if p.key not in meta]
    del model.metadata_props[:]
    model.metadata_props.extend(kept)
    for k, v in sorted(meta.items()):
        model.metadata_props.add(key=k, value=str(v))
    onnx.save(model, str(path))


def read_metadata(path: Path) -> dict[str, str]:
    return {p.key: p.value for p in onnx.load(str(path)).metadata_props}


def _io(path: Path) -> tuple[list[str], list[str], onnx.ModelProto]:
    model = onnx.load(str(path))
    onnx.checker.check_model(model)
    return [i.name for i in model.graph.input], [o.name for o in model.graph.output], model


def _dims(value_info) -> list:
    return [d.dim_value if d.HasField("dim_value") else d.dim_param for d in value_info.type.tensor_type.shape.dim]


def check_encoder(path: Path) -> list:
    inputs, outputs, model = _io(path)
    if len(inputs) != 1 or not outputs:
        raise SignatureError(f"{path}: encoder inputs {inputs}, outputs {outputs}")
    dims = _dims(model.graph.output[0])
    if len(dims) != 4:
        raise SignatureError(f"{path}: encoder output dims {dims}, expected [1, C, h, w]")
    return dims


def check_decoder(path: Path) -> None:
    inputs, outputs, _ = _io(path)
    extra = [n for n in inputs if n not in DECODER_INPUTS and n != "orig_im_size"]
    missing = [n for n in DECODER_INPUTS if n not in inputs] + [n for n in DECODER_OUTPUTS if n not in outputs]
    if missing or extra:
        raise SignatureError(
            f"{path}: expected inputs {list(DECODER_INPUTS)} and outputs {list(DECODER_OUTPUTS)}; "
            f"found inputs {inputs}, outputs {outputs}"
        )


def check_scorer(path: Path) -> list:
    inputs, outputs, model = _io(path)
    if len(inputs) != 1 or len(outputs) != 1:
        raise SignatureError(f"{path}: scorer inputs {inputs}, outputs {outputs}")
    dims = _dims(model.graph.output[0])
    if len(dims) < 2 or dims[-1] != dims[-2]:
        raise SignatureError(f"{path}: scorer output dims {dims}, expected a square map")
    return dims
