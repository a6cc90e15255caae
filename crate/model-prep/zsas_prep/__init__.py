from .dump import dump_precomputed, scan_dataset
from .manifest import build_manifest, read_manifest, write_manifest
from .recipe import ExportRecipe, Preprocess, ScorerSpec, SegmenterSpec
from .scorer import PatchScorer, export_scorer
from .segmenter import export_segmenter
from .tensors import read_tensor, write_tensor

__all__ = [
    "ExportRecipe",
    "PatchScorer",
    "Preprocess",
    "ScorerSpec",
    "SegmenterSpec",
    "build_manifest",
    "dump_precomputed",
    "export_scorer",
    "export_segmenter",
    "read_manifest",
    "read_tensor",
    "scan_dataset",
    "write_manifest",
    "write_tensor",
]
