from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .recipe import ExportRecipe


def _recipe(args) -> ExportRecipe:
    recipe = ExportRecipe.load(args.recipe) if args.recipe else ExportRecipe()
    if args.out_dir:
        recipe.out_dir = Path(args.out_dir)
    return recipe


def _training_set(root: Path, pre, limit: int | None):
    import numpy as np
    import torch
    from PIL import Image

    from .dump import image_tensor, resize_bilinear, scan_dataset

    samples = []
    for image_id, path in scan_dataset(root)[:limit]:
        category, defect, stem = image_id.split("/")
        s = pre.input_size
        if defect == "good":
            mask = np.zeros((s, s), np.float32)
        else:
            gt = root / category / "ground_truth" / defect / f"{stem}_mask.png"
            raw = np.asarray(Image.open(gt).convert("L"), dtype=np.float32) / 255.0
            mask = (resize_bilinear(raw, s, s) >= 0.5).astype(np.float32)
        samples.append((torch.from_numpy(image_tensor(path, pre)[0]), torch.from_numpy(mask)))
    return samples


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(prog="zsas-prep")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--recipe", type=Path)
        sp.add_argument("--out-dir", type=Path, help="overrides the recipe's graph directory")

    sub.add_parser("recipe", help="print the default recipe as JSON")
    common(sub.add_parser("export-segmenter"))
    sc = sub.add_parser("export-scorer")
    common(sc)
    sc.add_argument("--object", default="object", help="object name used in the text prompts")
    d = sub.add_parser("dump")
    common(d)
    d.add_argument("--dataset", type=Path, required=True)
    d.add_argument("--out", type=Path, required=True)
    d.add_argument("--limit", type=int)
    t = sub.add_parser("train-adapters")
    common(t)
    t.add_argument("--dataset", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--dataset-kind", default="mvtec", choices=["mvtec", "visa"])
    t.add_argument("--limit", type=int)
    t.add_argument("--object", default="object")

    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    if args.cmd == "recipe":
        print(ExportRecipe().to_json())
        return 0
    recipe = _recipe(args)
    if args.cmd == "export-segmenter":
        from .segmenter import export_segmenter

        for path in export_segmenter(recipe):
            print(path)
    elif args.cmd == "export-scorer":
        from .scorer import build_scorer, export_scorer

        print(export_scorer(recipe, build_scorer(recipe, args.object)))
    elif args.cmd == "dump":
        from .dump import dump_precomputed, scan_dataset

        result = dump_precomputed(recipe, scan_dataset(args.dataset)[: args.limit], args.out)
        print(f"{len(result.written)} images -> {result.manifest}")
        if result.partial:
            print(f"{len(result.failures)} failures, see dump_report.json", file=sys.stderr)
            return 1
    elif args.cmd == "train-adapters":
        from .scorer import build_scorer
        from .train import epochs_for, save_adapters, stack_samples, train_adapters

        scorer = build_scorer(recipe, args.object)
        images, masks = stack_samples(_training_set(args.dataset, recipe.scorer.preprocess, args.limit))
        history = train_adapters(scorer, images, masks, args.epochs or epochs_for(args.dataset_kind))
        save_adapters(scorer, args.out)
        print(f"final loss {history[-1]:.4f} -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
