"""Inspection dumps: matching attention maps and learned feature weights."""

import json
import os

import numpy as np
import torch
from PIL import Image

from .data import safe_name
from .matching import normalize_lambda
from . import tsr


def _heat_to_image(weights_2d, size=None) -> Image.Image:
    """Grayscale-to-hot rendering of a nonnegative map."""
    w = np.asarray(weights_2d, dtype=np.float64)
    if w.max() > 0:
        w = w / w.max()
    r = np.clip(w * 3.0, 0, 1)
    g = np.clip(w * 3.0 - 1.0, 0, 1)
    b = np.clip(w * 3.0 - 2.0, 0, 1)
    rgb = (np.stack([r, g, b], axis=-1) * 255).astype(np.uint8)
    img = Image.fromarray(rgb)
    if size is not None:
        img = img.resize((size[1], size[0]), Image.NEAREST)
    return img


def inspect_attention(model, params, episode, query_index: int, query_token: int,
                      out_dir) -> dict:
    """Dump per-level, per-head matching attention of one query token.

    Writes one TSR per level with the [heads, N*M] weight rows, plus rendered
    per-support overlays; returns a summary dict (files, weight sums).
    """
    os.makedirs(out_dir, exist_ok=True)
    query = episode.queries[query_index][0]
    with torch.no_grad():
        _, weights = model.predict(query, episode.support, params, return_attention=True)
    H, W = query.shape[-2:]
    ph, pw = model.config.patch_size
    gh, gw = H // ph, W // pw
    N = len(episode.support)
    summary = {"files": [], "level_weight_sums": []}
    for level, w in enumerate(weights, start=1):
        rows = w[:, query_token, :]  # [heads, N*M]
        path = os.path.join(out_dir, f"attention-level{level}.tsr")
        tsr.write_tensor(path, rows.numpy().astype(np.float32))
        summary["files"].append(path)
        summary["level_weight_sums"].append(
            [float(s) for s in rows.sum(dim=-1)]
        )
        per_support = rows.mean(dim=0).reshape(N, gh, gw)
        for n in range(N):
            img = _heat_to_image(per_support[n].numpy(), size=(H, W))
            base = episode.support[n][0][0]  # modality 0 [3, H, W]
            base_img = Image.fromarray(
                (base.permute(1, 2, 0).numpy() * 255).astype(np.uint8)
            )
            overlay = Image.blend(base_img, img, alpha=0.55)
            opath = os.path.join(out_dir, f"overlay-level{level}-support{n}.png")
            overlay.save(opath)
            summary["files"].append(opath)
    with open(os.path.join(out_dir, "attention-summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary


def inspect_lambda(registry, out_dir) -> dict:
    """Emit each group's row-normalized feature re-weighting matrix.

    Writes a text table plus one heat rendering per group, ordered as in the
    manifest; returns {group_id: matrix as lists}.
    """
    os.makedirs(out_dir, exist_ok=True)
    report = {}
    lines = []
    ordered = [gid for gid in registry.manifest.groups if gid in registry._groups]
    for gid in ordered:
        lam_logits, _ = registry._groups[gid]
        lam = normalize_lambda(lam_logits.detach())
        report[gid] = [[round(float(v), 6) for v in row] for row in lam]
        lines.append(f"group {gid}")
        for row in report[gid]:
            lines.append("  " + "  ".join(f"{v:.4f}" for v in row))
        _heat_to_image(lam.numpy()).resize((160, 160), Image.NEAREST).save(
            os.path.join(out_dir, f"lambda-{safe_name(gid)}.png")
        )
    with open(os.path.join(out_dir, "lambda-report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "lambda-report.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    return report
