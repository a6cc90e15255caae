import os
import shutil
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image
from torch import nn
from torch.nn import functional as F

from zsas_prep.recipe import SAM_MEAN, SAM_STD, CLIP_MEAN, CLIP_STD, ExportRecipe, Preprocess, ScorerSpec, SegmenterSpec
from zsas_prep.scorer import PatchScorer, text_features

REPO = Path(__file__).resolve().parents[2]

IMG = 64
LOGIT = 16


def tiny_sam():
    from segment_anything.modeling import ImageEncoderViT, MaskDecoder, PromptEncoder, Sam, TwoWayTransformer

    torch.manual_seed(0)
    dim = 32
    sam = Sam(
        image_encoder=ImageEncoderViT(
            img_size=IMG, patch_size=16, embed_dim=dim, depth=2, num_heads=2, out_chans=dim, window_size=0
        ),
        prompt_encoder=PromptEncoder(
            embed_dim=dim, image_embedding_size=(IMG // 16, IMG // 16), input_image_size=(IMG, IMG), mask_in_chans=4
        ),
        mask_decoder=MaskDecoder(
            num_multimask_outputs=3,
            transformer=TwoWayTransformer(depth=2, embedding_dim=dim, mlp_dim=64, num_heads=2),
            transformer_dim=dim,
            iou_head_depth=2,
            iou_head_hidden_dim=dim,
        ),
        pixel_mean=list(SAM_MEAN),
        pixel_std=list(SAM_STD),
    )
    return sam.eval()


class PoolEncoder(nn.Module):
    def forward(self, image):
        return F.avg_pool2d(image, 4)


class DiscDecoder(nn.Module):
    """Candidates are discs of four radii around the positive points."""

    def __init__(self, img_size=IMG, logit_size=LOGIT, radius=6.0):
        super().__init__()
        self.scale = logit_size / img_size
        self.logit_size = logit_size
        self.img_size = img_size
        self.register_buffer("radii", torch.tensor([1.0, 0.5, 1.5, 2.0]) * radius * self.scale)
        self.register_buffer("iou", torch.tensor([[0.5, 0.9, 0.7, 0.6]]))

    def forward(self, image_embeddings, point_coords, point_labels, mask_input, has_mask_input):
        l = self.logit_size
        axis = torch.arange(l, dtype=torch.float32) + 0.5
        c = (point_coords + 0.5) * self.scale
        dx = axis[None, None, None, :] - c[..., 0, None, None]
        dy = axis[None, None, :, None] - c[..., 1, None, None]
        d = (dx * dx + dy * dy).sqrt()  # [1, N, l, l]
        pos = (point_labels == 1).float()[..., None, None]
        near = (-d * pos + -1e4 * (1 - pos)).amax(1, keepdim=True)  # [1, 1, l, l]
        low = near + self.radii[None, :, None, None]
        low = low + 0.01 * has_mask_input * mask_input + 0.0 * image_embeddings.mean()
        masks = F.interpolate(low, size=(self.img_size, self.img_size), mode="bilinear", align_corners=False)
        return masks, self.iou + 0.0 * has_mask_input, low


def tiny_clip():
    import open_clip

    torch.manual_seed(1)
    model = open_clip.CLIP(
        embed_dim=16,
        vision_cfg=dict(layers=4, width=32, patch_size=8, image_size=32, head_width=16),
        text_cfg=dict(context_length=77, vocab_size=49408, width=32, heads=2, layers=1),
    ).eval()
    return model, open_clip.get_tokenizer("ViT-B-32")


def tiny_scorer(adapters=None):
    model, tok = tiny_clip()
    return PatchScorer(model.visual, text_features(model, tok, "tile"), (1, 2, 3, 4), 32, adapters).eval()


def tiny_recipe(out_dir: Path) -> ExportRecipe:
    return ExportRecipe(
        scorer=ScorerSpec(
            model_id="tiny", layers=(1, 2, 3, 4), native_resolution=32, preprocess=Preprocess(CLIP_MEAN, CLIP_STD, 32)
        ),
        segmenter=SegmenterSpec(model_type="tiny", logit_size=LOGIT, preprocess=Preprocess(SAM_MEAN, SAM_STD, IMG)),
        out_dir=out_dir,
    )


def write_dataset(root: Path, n_defect=3, n_good=2, size=48):
    """A small ``category/test/defect/nnn.png`` tree with bright square defects."""
    rng = np.random.default_rng(5)
    for i in range(n_defect + n_good):
        defect = "crack" if i < n_defect else "good"
        idx = i if i < n_defect else i - n_defect
        img = (rng.random((size, size, 3)) * 40 + 80).astype(np.uint8)
        path = root / "tile" / "test" / defect / f"{idx:03}.png"
        path.parent.mkdir(parents=True, exist_ok=True)
        if defect != "good":
            mask = np.zeros((size, size), np.uint8)
            y, x = 10 + 6 * idx, 12 + 5 * idx
            mask[y : y + 10, x : x + 10] = 255
            img[mask > 0] = 250
            gt = root / "tile" / "ground_truth" / defect / f"{idx:03}_mask.png"
            gt.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(mask).save(gt)
        Image.fromarray(img).save(path)
    return root


@pytest.fixture
def dataset(tmp_path):
    return write_dataset(tmp_path / "data")


@pytest.fixture(scope="session")
def disc_graphs(tmp_path_factory):
    """Pool encoder, disc decoder and tiny scorer exported with the tiny recipe."""
    from zsas_prep.scorer import export_scorer
    from zsas_prep.segmenter import export_segmenter

    recipe = tiny_recipe(tmp_path_factory.mktemp("graphs"))
    export_segmenter(recipe, PoolEncoder(), DiscDecoder())
    export_scorer(recipe, tiny_scorer())
    return recipe


@pytest.fixture(scope="session")
def zsas_bin():
    explicit = os.environ.get("ZSAS_BIN")
    candidates = [Path(explicit)] if explicit else [REPO / "target" / "debug" / "zsas", REPO / "target" / "release" / "zsas"]
    for c in candidates:
        if c.is_file():
            return c
    found = shutil.which("zsas")
    if found:
        return Path(found)
    pytest.skip("zsas binary not built; run `cargo build` first or set ZSAS_BIN")
