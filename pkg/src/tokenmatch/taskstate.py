"""Persistence for fine-tuned task states.

A fine-tuned product is a small directory: one tensor bundle in the
checkpoint TSR format plus a structured-text meta file (task descriptors,
label statistics, file hash).  Position bias tables are always stored; the
meta records whether each channel owns (fine-tuned) its tables or references
the shared frozen set.
"""

import json
import os
from collections import OrderedDict

import numpy as np
import torch
from torch import nn

from .checkpoint import _copy_into, _sha256
from .errors import CheckpointError
from .finetune import ChannelState, FinetunedTask
from .registry import PositionBiasTables, TaskParams
from .tasks import TaskDescriptor
from . import tsr

STATE_VERSION = 1


def save_finetuned(state: FinetunedTask, path) -> None:
    os.makedirs(path, exist_ok=True)
    tensors = OrderedDict()
    first = state.channels[0].params
    tensors["lambda_logits"] = first.lambda_logits.detach().numpy()
    tensors["head.weight"] = first.head.weight.detach().numpy()
    tensors["head.bias"] = first.head.bias.detach().numpy()
    for ch in state.channels:
        prefix = f"channel{ch.task.channel_index}"
        for i, block in enumerate(ch.params.biases):
            for name in sorted(block):
                tensors[f"{prefix}/bias/{i}/{name}"] = block[name].detach().numpy()
        for i, t in enumerate(ch.params.pos_bias.tables):
            tensors[f"{prefix}/posbias/layer{i}"] = t.detach().numpy()
    bundle_path = os.path.join(path, "params.tsrb")
    tsr.write_bundle(bundle_path, tensors)
    meta = {
        "format_version": STATE_VERSION,
        "tasks": [ch.task.to_dict() for ch in state.channels],
        "label_stats": [list(ch.label_stats) if ch.label_stats else None
                        for ch in state.channels],
        "owns_pos_bias": [bool(ch.params.owns_pos_bias) for ch in state.channels],
        "files": {"params.tsrb": _sha256(bundle_path)},
    }
    with open(os.path.join(path, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def load_finetuned(model, path) -> FinetunedTask:
    meta_path = os.path.join(path, "meta.json")
    if not os.path.exists(meta_path):
        raise CheckpointError(f"no fine-tuned state at {path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    if meta.get("format_version") != STATE_VERSION:
        raise CheckpointError(f"unknown task-state version {meta.get('format_version')!r}")
    bundle_path = os.path.join(path, "params.tsrb")
    actual = _sha256(bundle_path)
    if actual != meta["files"]["params.tsrb"]:
        raise CheckpointError("integrity error: params.tsrb hash mismatch")
    tensors = tsr.read_bundle(bundle_path)

    cfg = model.config
    lam = nn.Parameter(torch.from_numpy(np.ascontiguousarray(tensors["lambda_logits"])))
    head = nn.Conv2d(cfg.decoder_dim, 1, 1)
    _copy_into(head.weight, tensors["head.weight"], "head.weight")
    _copy_into(head.bias, tensors["head.bias"], "head.bias")

    channels = []
    shared_tables = None  # non-owned channels alias one loaded table set
    for task_dict, stats, owns in zip(
        meta["tasks"], meta["label_stats"], meta["owns_pos_bias"]
    ):
        task = TaskDescriptor.from_dict(task_dict)
        prefix = f"channel{task.channel_index}"
        biases = []
        for i, block in enumerate(model.image_encoder.current_bias_values()):
            loaded = {}
            for name in block:
                key = f"{prefix}/bias/{i}/{name}"
                if key not in tensors:
                    raise CheckpointError(f"missing tensor {key} in {path}")
                loaded[name] = nn.Parameter(
                    torch.from_numpy(np.ascontiguousarray(tensors[key]))
                )
            biases.append(loaded)

        def build_tables():
            tables = [
                torch.from_numpy(
                    np.ascontiguousarray(tensors[f"{prefix}/posbias/layer{i}"])
                )
                for i in range(cfg.depth)
            ]
            rows, cols = tables[0].shape[1], tables[0].shape[2]
            return PositionBiasTables(
                task.modality_count, ((rows + 1) // 2, (cols + 1) // 2),
                cfg.depth, tables,
            )

        if owns:
            pos = build_tables()
        else:
            if shared_tables is None:
                shared_tables = build_tables()
            pos = shared_tables
        channels.append(
            ChannelState(
                task=task,
                params=TaskParams(
                    task=task, biases=biases, pos_bias=pos, lambda_logits=lam,
                    head=head, owns_pos_bias=owns,
                ),
                label_stats=tuple(stats) if stats else None,
            )
        )
    return FinetunedTask(channels=channels)
