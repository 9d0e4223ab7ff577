"""Video object segmentation support construction.

Every instance in the first frame becomes its own 1-shot task; the support is
the first frame plus optional random-crop augmentations (image and label
cropped consistently, then resized back).
"""

import numpy as np
import torch
import torch.nn.functional as F


def _crop_pair(image, mask, rng, scale_range):
    H, W = image.shape[-2:]
    scale = float(rng.uniform(*scale_range))
    ch, cw = max(8, int(round(H * scale))), max(8, int(round(W * scale)))
    y0 = int(rng.integers(0, H - ch + 1))
    x0 = int(rng.integers(0, W - cw + 1))
    img = image[..., y0 : y0 + ch, x0 : x0 + cw]
    lab = mask[..., y0 : y0 + ch, x0 : x0 + cw]
    img = F.interpolate(
        img.reshape(-1, 1, ch, cw), size=(H, W), mode="bilinear", align_corners=False
    ).reshape(image.shape)
    lab = F.interpolate(lab.reshape(1, 1, ch, cw), size=(H, W), mode="nearest").reshape(
        mask.shape
    )
    return img, lab


def video_support(first_frame, instance_map, rng, n_aug: int = 0,
                  crop_scale=(0.6, 0.95)) -> dict:
    """first_frame: [I, 3, H, W]; instance_map: [H, W] integers (0 = background).

    Returns {instance_id: [(image, label [1, H, W]), ...]} — one task per
    instance, each with 1 + n_aug support pairs.
    """
    frame = first_frame if isinstance(first_frame, torch.Tensor) else torch.as_tensor(first_frame)
    arr = np.asarray(instance_map)
    supports = {}
    for inst in np.unique(arr):
        if inst == 0:
            continue
        mask = torch.from_numpy((arr == inst).astype(np.float32)).unsqueeze(0)
        pairs = [(frame, mask)]
        for _ in range(n_aug):
            pairs.append(_crop_pair(frame, mask, rng, crop_scale))
        supports[int(inst)] = pairs
    return supports
