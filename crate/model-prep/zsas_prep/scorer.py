"""Anomaly scorer export.

Patch tokens from a few vision-tower blocks are projected into the joint
embedding space, optionally passed through per-block linear adapters, and
compared with a "normal" and an "anomalous" text embedding. The anomalous
probability is upsampled, averaged over blocks and min-max normalized inside
the graph.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path

import torch
from torch import nn
from torch.nn import functional as F

from .graphs import check_scorer, exportable_attention, set_metadata
from .recipe import ExportRecipe

log = logging.getLogger(__name__)

NORMAL_PROMPTS = [
    "a photo of a flawless {}",
    "a photo of a perfect {}",
    "a close-up photo of an intact {}",
]
ANOMALOUS_PROMPTS = [
    "a photo of a damaged {}",
    "a photo of a {} with a defect",
    "a close-up photo of a broken {}",
]


def adapter_stack(n: int, dim: int) -> nn.ModuleList:
    return nn.ModuleList(nn.Linear(dim, dim) for _ in range(n))


class PatchScorer(nn.Module):
    def __init__(
        self,
        visual: nn.Module,
        text_features: torch.Tensor,
        layers: tuple[int, ...],
        native_resolution: int,
        adapters: nn.ModuleList | None = None,
        temperature: float = 100.0,
    ):
        super().__init__()
        if text_features.shape[0] != 2:
            raise ValueError(f"need 2 text embeddings (normal, anomalous), got {text_features.shape[0]}")
        self.visual = visual
        self.register_buffer("text", F.normalize(text_features.float(), dim=-1))
        self.indices = [l - 1 for l in layers]
        self.native_resolution = native_resolution
        self.adapters = adapters
        self.temperature = temperature

    def layer_probs(self, image: torch.Tensor) -> torch.Tensor:
        """Anomalous probability per tapped block, ``[L, B, g, g]``."""
        out = self.visual.forward_intermediates(
            image,
            indices=self.indices,
            normalize_intermediates=True,
            intermediates_only=True,
            output_fmt="NLC",
        )
        maps = []
        for k, tokens in enumerate(out["image_intermediates"]):
            t = tokens @ self.visual.proj
            if self.adapters is not None:
                t = self.adapters[k](t)
            t = F.normalize(t, dim=-1)
            p = (self.temperature * t @ self.text.T).softmax(-1)[..., 1]
            g = math.isqrt(p.shape[1])
            maps.append(p.reshape(p.shape[0], g, g))
        return torch.stack(maps)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        probs = self.layer_probs(image)
        r = self.native_resolution
        up = F.interpolate(probs.permute(1, 0, 2, 3), size=(r, r), mode="bilinear", align_corners=False)
        m = up.mean(1, keepdim=True)
        # Explicit axes: some runtimes read an empty axes list as "reduce nothing".
        lo = m.amin(dim=(1, 2, 3), keepdim=True)
        hi = m.amax(dim=(1, 2, 3), keepdim=True)
        return (m - lo) / (hi - lo).clamp_min(1e-12)


@torch.no_grad()
def text_features(model, tokenizer, object_name: str = "object") -> torch.Tensor:
    rows = []
    for prompts in (NORMAL_PROMPTS, ANOMALOUS_PROMPTS):
        emb = model.encode_text(tokenizer([p.format(object_name) for p in prompts]))
        rows.append(F.normalize(F.normalize(emb, dim=-1).mean(0), dim=-1))
    return torch.stack(rows)


def load_adapters(path: Path | None, n: int, dim: int) -> nn.ModuleList | None:
    """Adapters from a checkpoint, or None when there is none to load."""
    if path is None:
        return None
    if not Path(path).is_file():
        log.warning("adapter checkpoint %s not found; exporting unaligned", path)
        return None
    adapters = adapter_stack(n, dim)
    adapters.load_state_dict(torch.load(path, map_location="cpu"))
    return adapters


def build_scorer(recipe: ExportRecipe, object_name: str = "object") -> PatchScorer:
    import open_clip

    spec = recipe.scorer
    model, _, _ = open_clip.create_model_and_transforms(spec.model_id, pretrained=spec.pretrained)
    model.eval()
    tokenizer = open_clip.get_tokenizer(spec.model_id)
    dim = model.visual.proj.shape[1]
    return PatchScorer(
        model.visual,
        text_features(model, tokenizer, object_name),
        spec.layers,
        spec.native_resolution,
        load_adapters(spec.adapter_checkpoint, len(spec.layers), dim),
    ).eval()


def export_scorer(recipe: ExportRecipe, scorer: PatchScorer | None = None) -> Path:
    if scorer is None:
        scorer = build_scorer(recipe)
    pre = recipe.scorer.preprocess
    s = pre.input_size
    recipe.out_dir.mkdir(parents=True, exist_ok=True)
    with torch.no_grad(), exportable_attention():
        torch.onnx.export(
            scorer,
            (torch.zeros(1, 3, s, s),),
            str(recipe.scorer_path),
            input_names=["image"],
            output_names=["anomaly_map"],
            opset_version=recipe.opset,
            dynamo=False,
        )
    meta = pre.metadata() | {
        "native_resolution": str(scorer.native_resolution),
        "layers": ",".join(str(i + 1) for i in scorer.indices),
        "unaligned": "false" if scorer.adapters is not None else "true",
    }
    set_metadata(recipe.scorer_path, meta)
    check_scorer(recipe.scorer_path)
    return recipe.scorer_path
