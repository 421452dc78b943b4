"""Dataset -> torch batch conversion (NCHW float32)."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .types import DISEASES, FLAGS


def images_tensor(samples, size: int | None = None) -> torch.Tensor:
    x = torch.from_numpy(np.stack([s.image for s in samples]).astype(np.float32)).permute(0, 3, 1, 2)
    if size is not None and x.shape[-1] != size:
        x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
    return x.contiguous()


def masks_tensor(samples, lesions, size: int | None = None) -> torch.Tensor:
    m = np.stack([np.stack([s.mask(k) for k in lesions]) for s in samples]).astype(np.float32)
    y = torch.from_numpy(m)
    if size is not None and y.shape[-1] != size:
        y = F.interpolate(y, size=(size, size), mode="nearest")
    return y.contiguous()


def grades_tensor(samples) -> torch.Tensor:
    return torch.tensor([s.grade for s in samples], dtype=torch.long)


def flags_tensor(samples) -> torch.Tensor:
    return torch.tensor(
        [[float(bool((s.lesion_flags or {}).get(f))) for f in FLAGS] for s in samples], dtype=torch.float32
    )


def disease_tensor(samples) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.disease_labels for s in samples]).astype(np.float32)).reshape(
        len(samples), len(DISEASES)
    )
