"""Smoke checks against the real checkpoints.

Skipped unless ``ZSAS_SAM_CHECKPOINT`` (a ViT-H segmenter checkpoint) and
``ZSAS_DATASET`` (a dataset root with at least one defect and one good image of
the same category) are set. The scorer weights are fetched by open_clip.
"""

import os
from pathlib import Path

import numpy as np
import onnxruntime as ort
import pytest
import torch

from zsas_prep.dump import image_tensor, scan_dataset
from zsas_prep.recipe import ExportRecipe
from zsas_prep.scorer import build_scorer, export_scorer
from zsas_prep.segmenter import export_segmenter

pytestmark = pytest.mark.skipif(
    not (os.environ.get("ZSAS_SAM_CHECKPOINT") and os.environ.get("ZSAS_DATASET")),
    reason="real checkpoints not configured",
)


@pytest.fixture(scope="module")
def recipe(tmp_path_factory):
    r = ExportRecipe(out_dir=tmp_path_factory.mktemp("real"))
    r.segmenter.checkpoint = Path(os.environ["ZSAS_SAM_CHECKPOINT"])
    return r


def test_centered_point_gives_a_mask(recipe):
    export_segmenter(recipe)
    _, path = scan_dataset(Path(os.environ["ZSAS_DATASET"]))[0]
    enc = ort.InferenceSession(str(recipe.encoder_path))
    dec = ort.InferenceSession(str(recipe.decoder_path))
    (emb,) = enc.run(None, {"image": image_tensor(path, recipe.segmenter.preprocess)})
    s, l = recipe.segmenter.preprocess.input_size, recipe.segmenter.logit_size
    masks, _, _ = dec.run(
        None,
        {
            "image_embeddings": emb,
            "point_coords": np.array([[[s / 2, s / 2], [0, 0]]], np.float32),
            "point_labels": np.array([[1, -1]], np.float32),
            "mask_input": np.zeros((1, 1, l, l), np.float32),
            "has_mask_input": np.zeros(1, np.float32),
        },
    )
    assert (masks[0, 0] > 0).any()


def test_defect_scores_above_its_good_counterpart(recipe):
    scorer = build_scorer(recipe)
    export_scorer(recipe, scorer)
    images = scan_dataset(Path(os.environ["ZSAS_DATASET"]))
    category = images[0][0].split("/")[0]
    same = [(i, p) for i, p in images if i.startswith(category + "/")]
    defect = next(p for i, p in same if "/good/" not in i)
    good = next(p for i, p in same if "/good/" in i)
    pre = recipe.scorer.preprocess

    # The exported map is normalized per image; compare raw probabilities.
    def mean_prob(p):
        with torch.no_grad():
            return scorer.layer_probs(torch.from_numpy(image_tensor(p, pre))).mean().item()

    assert mean_prob(defect) > mean_prob(good)
