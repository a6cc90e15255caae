"""What to export and how images are prepared for each graph."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

# Pixel-space (0-255) constants; the runtime feeds raw 8-bit values.
CLIP_MEAN = (122.7709383, 116.7460125, 104.09373615)
CLIP_STD = (68.5005327, 66.6321579, 70.32316305)
SAM_MEAN = (123.675, 116.28, 103.53)
SAM_STD = (58.395, 57.12, 57.375)


@dataclass(frozen=True)
class Preprocess:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    input_size: int

    def metadata(self) -> dict[str, str]:
        return {
            "mean": json.dumps(list(self.mean)),
            "std": json.dumps(list(self.std)),
            "input_size": str(self.input_size),
        }

    @classmethod
    def from_metadata(cls, meta: dict[str, str]) -> Preprocess:
        missing = [k for k in ("mean", "std", "input_size") if k not in meta]
        if missing:
            raise KeyError(f"graph metadata lacks {missing}")
        return cls(
            mean=tuple(_triple(meta["mean"])),
            std=tuple(_triple(meta["std"])),
            input_size=int(meta["input_size"]),
        )


def _triple(text: str) -> list[float]:
    v = json.loads(text)
    v = [float(x) for x in (v if isinstance(v, list) else [v])]
    return v * 3 if len(v) == 1 else v


@dataclass
class ScorerSpec:
    model_id: str = "ViT-L-14-336"
    pretrained: str = "openai"
    # 1-based transformer block indices.
    layers: tuple[int, ...] = (6, 12, 18, 24)
    adapter_checkpoint: Path | None = None
    native_resolution: int = 336
    preprocess: Preprocess = field(default_factory=lambda: Preprocess(CLIP_MEAN, CLIP_STD, 336))


@dataclass
class SegmenterSpec:
    model_type: str = "vit_h"
    checkpoint: Path | None = None
    logit_size: int = 256
    preprocess: Preprocess = field(default_factory=lambda: Preprocess(SAM_MEAN, SAM_STD, 1024))


@dataclass
class ExportRecipe:
    scorer: ScorerSpec = field(default_factory=ScorerSpec)
    segmenter: SegmenterSpec = field(default_factory=SegmenterSpec)
    out_dir: Path = Path("graphs")
    opset: int = 17

    @property
    def encoder_path(self) -> Path:
        return self.out_dir / "encoder.onnx"

    @property
    def decoder_path(self) -> Path:
        return self.out_dir / "decoder.onnx"

    @property
    def scorer_path(self) -> Path:
        return self.out_dir / "scorer.onnx"

    def to_json(self) -> str:
        def plain(v):
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, dict):
                return {k: plain(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [plain(x) for x in v]
            return v

        return json.dumps(plain(asdict(self)), indent=2)

    @classmethod
    def from_json(cls, text: str) -> ExportRecipe:
        raw = json.loads(text)

        def pre(d, default):
            return Preprocess(tuple(d["mean"]), tuple(d["std"]), int(d["input_size"])) if d else default

        s = raw.get("scorer", {})
        g = raw.get("segmenter", {})
        base_s, base_g = ScorerSpec(), SegmenterSpec()
        scorer = ScorerSpec(
            model_id=s.get("model_id", base_s.model_id),
            pretrained=s.get("pretrained", base_s.pretrained),
            layers=tuple(s.get("layers", base_s.layers)),
            adapter_checkpoint=Path(s["adapter_checkpoint"]) if s.get("adapter_checkpoint") else None,
            native_resolution=int(s.get("native_resolution", base_s.native_resolution)),
            preprocess=pre(s.get("preprocess"), base_s.preprocess),
        )
        segmenter = SegmenterSpec(
            model_type=g.get("model_type", base_g.model_type),
            checkpoint=Path(g["checkpoint"]) if g.get("checkpoint") else None,
            logit_size=int(g.get("logit_size", base_g.logit_size)),
            preprocess=pre(g.get("preprocess"), base_g.preprocess),
        )
        return cls(
            scorer=scorer,
            segmenter=segmenter,
            out_dir=Path(raw.get("out_dir", "graphs")),
            opset=int(raw.get("opset", 17)),
        )

    @classmethod
    def load(cls, path: Path) -> ExportRecipe:
        return cls.from_json(Path(path).read_text())
