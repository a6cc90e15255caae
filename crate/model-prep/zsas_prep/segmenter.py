"""Promptable segmenter export: image encoder and prompt decoder as two graphs."""

from __future__ import annotations

from pathlib import Path

import torch
from torch import nn
from torch.nn import functional as F

from .graphs import DECODER_INPUTS, DECODER_OUTPUTS, check_decoder, check_encoder, set_metadata
from .recipe import ExportRecipe


class EncoderGraph(nn.Module):
    def __init__(self, sam):
        super().__init__()
        self.image_encoder = sam.image_encoder

    def forward(self, image):
        return self.image_encoder(image)


def _square_decoder(sam):
    from segment_anything.utils.onnx import SamOnnxModel

    class SquareDecoder(SamOnnxModel):
        """All candidates, upscaled to the square encoder input.

        The runtime feeds square inputs, so the crop-and-resize to an original
        image size is dropped along with the `orig_im_size` input.
        """

        @torch.no_grad()
        def forward(self, image_embeddings, point_coords, point_labels, mask_input, has_mask_input):
            sparse = self._embed_points(point_coords, point_labels)
            dense = self._embed_masks(mask_input, has_mask_input)
            masks, scores = self.model.mask_decoder.predict_masks(
                image_embeddings=image_embeddings,
                image_pe=self.model.prompt_encoder.get_dense_pe(),
                sparse_prompt_embeddings=sparse,
                dense_prompt_embeddings=dense,
            )
            up = F.interpolate(masks, size=(self.img_size, self.img_size), mode="bilinear", align_corners=False)
            return up, scores, masks

    return SquareDecoder(sam, return_single_mask=False)


def load_sam(recipe: ExportRecipe):
    from segment_anything import sam_model_registry

    spec = recipe.segmenter
    if spec.checkpoint is None:
        raise FileNotFoundError("segmenter checkpoint is not set in the recipe")
    sam = sam_model_registry[spec.model_type](checkpoint=str(spec.checkpoint))
    return sam.eval()


def modules_from_sam(sam) -> tuple[nn.Module, nn.Module]:
    return EncoderGraph(sam).eval(), _square_decoder(sam).eval()


def export_segmenter(
    recipe: ExportRecipe,
    encoder: nn.Module | None = None,
    decoder: nn.Module | None = None,
) -> tuple[Path, Path]:
    """Writes encoder and decoder graphs. Without modules, loads the checkpoint named by the recipe."""
    if encoder is None or decoder is None:
        encoder, decoder = modules_from_sam(load_sam(recipe))
    pre = recipe.segmenter.preprocess
    s = pre.input_size
    recipe.out_dir.mkdir(parents=True, exist_ok=True)

    image = torch.zeros(1, 3, s, s)
    with torch.no_grad():
        embeddings = encoder(image)
    _, c, h, w = embeddings.shape
    torch.onnx.export(
        encoder,
        (image,),
        str(recipe.encoder_path),
        input_names=["image"],
        output_names=["image_embeddings"],
        opset_version=recipe.opset,
        dynamo=False,
    )

    l = recipe.segmenter.logit_size
    n = 3
    dummy = (
        embeddings,
        torch.randint(0, s, (1, n, 2)).float(),
        torch.tensor([[1.0, 0.0, -1.0]]),
        torch.zeros(1, 1, l, l),
        torch.tensor([1.0]),
    )
    points = {1: "num_points"}
    torch.onnx.export(
        decoder,
        dummy,
        str(recipe.decoder_path),
        input_names=list(DECODER_INPUTS),
        output_names=list(DECODER_OUTPUTS),
        dynamic_axes={"point_coords": points, "point_labels": points},
        opset_version=recipe.opset,
        dynamo=False,
    )

    meta = pre.metadata() | {"feature_dims": f"[{c}, {h}, {w}]", "logit_size": str(l)}
    for path in (recipe.encoder_path, recipe.decoder_path):
        set_metadata(path, meta)
    check_encoder(recipe.encoder_path)
    check_decoder(recipe.decoder_path)
    return recipe.encoder_path, recipe.decoder_path
