"""Optional adapter training for the scorer.

Only the adapters learn; the vision tower and text embeddings stay frozen.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import torch
from torch.nn import functional as F

from .scorer import PatchScorer, adapter_stack


def train_adapters(
    scorer: PatchScorer,
    images: torch.Tensor,
    masks: torch.Tensor,
    epochs: int,
    batch_size: int = 16,
    lr: float = 1e-3,
    seed: int = 0,
) -> list[float]:
    """Fits ``scorer.adapters`` to pixel masks. Returns the mean loss per epoch.

    ``images`` is ``[N, 3, S, S]`` already normalized; ``masks`` is ``[N, S, S]`` in {0, 1}.
    """
    if scorer.adapters is None:
        dim = scorer.visual.proj.shape[1]
        scorer.adapters = adapter_stack(len(scorer.indices), dim)
    for p in scorer.parameters():
        p.requires_grad_(False)
    for p in scorer.adapters.parameters():
        p.requires_grad_(True)
    opt = torch.optim.Adam(scorer.adapters.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    history = []
    scorer.train()
    for _ in range(epochs):
        order = torch.randperm(len(images), generator=gen)
        total, batches = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            probs = scorer.layer_probs(images[idx])
            g = probs.shape[-1]
            target = F.adaptive_avg_pool2d(masks[idx, None].float(), g)[:, 0]
            loss = F.binary_cross_entropy(probs.clamp(1e-6, 1 - 1e-6), target.expand_as(probs))
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            batches += 1
        history.append(total / max(batches, 1))
    scorer.eval()
    return history


def save_adapters(scorer: PatchScorer, path: Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(scorer.adapters.state_dict(), path)


def epochs_for(dataset: str) -> int:
    """Default epoch count: 3 for VisA, 15 for MVTec-AD."""
    return {"visa": 3, "mvtec": 15}.get(dataset.lower(), 15)


def stack_samples(samples: Sequence[tuple[torch.Tensor, torch.Tensor]]) -> tuple[torch.Tensor, torch.Tensor]:
    images, masks = zip(*samples)
    return torch.stack(images), torch.stack(masks)
