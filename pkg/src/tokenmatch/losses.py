"""Training losses.

L1 is the default for continuous targets, binary cross-entropy for
segmentation, spatial softmax for joint-specific keypoint heatmaps, MSE for
density fine-tuning, and a multi-instance cross-entropy (background logit
fixed at zero) for video instance tasks.
"""

import torch
import torch.nn.functional as F

from .errors import InputError, ShapeError


def _check_same_shape(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")


def l1_loss(pred, target):
    _check_same_shape(pred, target)
    return (pred - target).abs().mean()


def mse_loss(pred, target):
    _check_same_shape(pred, target)
    return ((pred - target) ** 2).mean()


def bce_loss(logits, target):
    """Sigmoid BCE in log-sum-exp form; targets must be exactly 0 or 1."""
    _check_same_shape(logits, target)
    if not bool(((target == 0) | (target == 1)).all()):
        raise InputError("bce targets must be binary")
    return F.binary_cross_entropy_with_logits(logits, target.to(logits.dtype))


def spatial_softmax_loss(logits, target, include_complement: bool = True):
    """Softmax over all spatial positions, then pixel BCE against the target
    heatmap, normalized by the target mass.

    ``include_complement`` keeps the (1-y)*log(1-p) term; disabling it reduces
    the loss to normalized cross-entropy on the target support.
    """
    _check_same_shape(logits, target)
    single = logits.dim() == 3
    if single:
        logits, target = logits.unsqueeze(0), target.unsqueeze(0)
    B = logits.shape[0]
    flat = logits.reshape(B, -1)
    y = target.reshape(B, -1).to(logits.dtype)
    mass = y.sum(dim=1)
    if bool((mass <= 0).any()):
        raise InputError("spatial softmax loss undefined for all-zero target")
    logp = F.log_softmax(flat, dim=1)
    terms = -y * logp
    if include_complement:
        p = logp.exp().clamp(max=1.0 - 1e-7)
        terms = terms - (1.0 - y) * torch.log1p(-p)
    loss = terms.sum(dim=1) / mass
    return loss.mean()


def multi_instance_ce(instance_logits, gt_index):
    """Per-pixel softmax over K+1 classes with the background logit fixed to 0.

    instance_logits: [K, H, W]; gt_index: [H, W] integers in 0..K (0 = background).
    """
    if instance_logits.dim() != 3:
        raise ShapeError(f"instance logits must be [K, H, W], got {tuple(instance_logits.shape)}")
    K, H, W = instance_logits.shape
    if gt_index.shape != (H, W):
        raise ShapeError(f"gt index map must be [H, W] = {(H, W)}")
    gt = gt_index.long()
    if bool((gt < 0).any()) or bool((gt > K).any()):
        raise InputError(f"gt indices must lie in [0, {K}]")
    zeros = instance_logits.new_zeros(1, H, W)
    full = torch.cat([zeros, instance_logits], dim=0)  # [K+1, H, W]
    return F.cross_entropy(full.unsqueeze(0), gt.unsqueeze(0))


LOSS_FUNCTIONS = {
    "l1": l1_loss,
    "mse": mse_loss,
    "bce": bce_loss,
    "spatial_softmax": spatial_softmax_loss,
    "multi_instance_ce": multi_instance_ce,
}


def loss_for_kind(kind: str):
    if kind not in LOSS_FUNCTIONS:
        raise InputError(f"unknown loss kind {kind!r}")
    return LOSS_FUNCTIONS[kind]
