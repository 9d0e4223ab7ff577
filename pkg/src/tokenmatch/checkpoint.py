"""Checkpoint persistence.

A checkpoint is a directory with a structured-text manifest and binary
tensor bundles:

    manifest.json      version, model config, dataset manifest, task/group
                       listing, per-file SHA-256
    shared.tsrb        shared model parameters
    groups/<gid>.tsrb  group-shared re-weighting logits and decoder head
    posbias/<I>.tsrb   globally shared position bias tables per modality count
    tasks/<tid>.tsrb   per-task bias vectors (and cloned position tables after
                       fine-tuning)
    trainer.tsrb       optional optimizer state for exact resumption

Writs are staged into a sibling temporary directory and atomically renamed;
a failed write never leaves a half-written checkpoint at the target path.
Reloading reproduces every tensor bit for bit, and re-saving a loaded
checkpoint writes byte-identical bundles.
"""

import hashlib
import json
import os
import shutil
from collections import OrderedDict

import numpy as np
import torch

from .config import ModelConfig
from .data import safe_name
from .errors import CheckpointError
from .model import FewShotDenseModel
from .registry import PositionBiasTables, Registry
from .tasks import DatasetManifest

CHECKPOINT_VERSION = 1


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _to_numpy(tensor) -> np.ndarray:
    return tensor.detach().cpu().numpy()


def _registry_bundles(registry: Registry) -> "OrderedDict[str, OrderedDict]":
    """relpath -> bundle of named tensors (task/group/shared split)."""
    from . import tsr  # local import keeps module load light

    bundles = OrderedDict()
    for gid in sorted(registry._groups):
        lam, head = registry._groups[gid]
        bundles[f"groups/{safe_name(gid)}.tsrb"] = OrderedDict(
            [
                ("lambda_logits", _to_numpy(lam)),
                ("head.weight", _to_numpy(head.weight)),
                ("head.bias", _to_numpy(head.bias)),
            ]
        )
    for count in sorted(registry._pos):
        tables = registry._pos[count]
        bundles[f"posbias/{count}.tsrb"] = OrderedDict(
            (f"layer{i}", _to_numpy(t)) for i, t in enumerate(tables.tables)
        )
    for tid in sorted(registry._tasks):
        params = registry._tasks[tid]
        entries = OrderedDict()
        for i, block in enumerate(params.biases):
            for name in sorted(block):
                entries[f"bias/{i}/{name}"] = _to_numpy(block[name])
        if params.owns_pos_bias:
            for i, t in enumerate(params.pos_bias.tables):
                entries[f"posbias/layer{i}"] = _to_numpy(t)
        bundles[f"tasks/{safe_name(tid)}.tsrb"] = entries
    return bundles


def save_checkpoint(model: FewShotDenseModel, registry: Registry, path,
                    extra: dict = None, trainer_state: dict = None) -> dict:
    """Write a checkpoint directory; returns the manifest dict."""
    from . import tsr

    path = str(path)
    staging = path + ".staging"
    if os.path.exists(staging):
        shutil.rmtree(staging)
    os.makedirs(staging)
    try:
        bundles = OrderedDict()
        bundles["shared.tsrb"] = OrderedDict(
            (name, _to_numpy(param)) for name, param in model.state_dict().items()
        )
        bundles.update(_registry_bundles(registry))
        if trainer_state:
            bundles["trainer.tsrb"] = OrderedDict(
                (name, np.asarray(value)) for name, value in trainer_state.items()
            )
        files = {}
        for relpath, tensors in bundles.items():
            full = os.path.join(staging, relpath)
            os.makedirs(os.path.dirname(full), exist_ok=True)
            tsr.write_bundle(full, tensors)
            files[relpath] = _sha256(full)
        manifest = {
            "format_version": CHECKPOINT_VERSION,
            "model_config": model.config.to_dict(),
            "dataset_manifest": registry.manifest.to_dict(),
            "registry_seed": registry.seed,
            "task_ids": sorted(registry._tasks),
            "owned_pos_bias": sorted(
                tid for tid, p in registry._tasks.items() if p.owns_pos_bias
            ),
            "group_ids": sorted(registry._groups),
            "pos_modalities": sorted(registry._pos),
            "extra": extra or {},
            "files": files,
        }
        with open(os.path.join(staging, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
        _atomic_swap(staging, path)
        return manifest
    except Exception:
        shutil.rmtree(staging, ignore_errors=True)
        raise


def _atomic_swap(staging, path):
    backup = path + ".old"
    try:
        if os.path.exists(path):
            if os.path.exists(backup):
                shutil.rmtree(backup)
            os.rename(path, backup)
        os.rename(staging, path)
    except OSError as exc:
        raise CheckpointError(f"atomic rename into {path} failed: {exc}") from exc
    shutil.rmtree(backup, ignore_errors=True)


def _verify_files(path, manifest):
    for relpath, expected in manifest["files"].items():
        full = os.path.join(path, relpath)
        if not os.path.exists(full):
            raise CheckpointError(f"checkpoint file missing: {relpath}")
        actual = _sha256(full)
        if actual != expected:
            raise CheckpointError(
                f"integrity error: {relpath} hash {actual[:12]}... does not match "
                f"manifest {expected[:12]}..."
            )


def _copy_into(param, array, origin):
    tensor = torch.from_numpy(np.ascontiguousarray(array))
    if tensor.shape != param.shape:
        raise CheckpointError(
            f"{origin}: stored shape {tuple(tensor.shape)} != expected {tuple(param.shape)}"
        )
    with torch.no_grad():
        param.copy_(tensor.to(param.dtype))


def load_checkpoint(path, verify: bool = True):
    """Rebuild (model, registry, extra, trainer_state) from a checkpoint."""
    from . import tsr

    path = str(path)
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise CheckpointError(f"no checkpoint manifest at {path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unknown checkpoint version {version!r}")
    if verify:
        _verify_files(path, manifest)

    config = ModelConfig.from_dict(manifest["model_config"])
    model = FewShotDenseModel(config)
    shared = tsr.read_bundle(os.path.join(path, "shared.tsrb"))
    state = model.state_dict()
    if set(shared) != set(state):
        missing = set(state) - set(shared)
        surplus = set(shared) - set(state)
        raise CheckpointError(
            f"shared weights mismatch (missing {sorted(missing)[:3]}, "
            f"surplus {sorted(surplus)[:3]})"
        )
    for name, param in state.items():
        _copy_into(param, shared[name], f"shared.{name}")

    data_manifest = DatasetManifest.from_dict(manifest["dataset_manifest"])
    registry = Registry(data_manifest, model, seed=manifest.get("registry_seed", 0))
    owned = set(manifest.get("owned_pos_bias", []))
    for tid in manifest["task_ids"]:
        params = registry.get_or_create_params(tid)
        task_file = os.path.join(path, "tasks", f"{safe_name(tid)}.tsrb")
        if not os.path.exists(task_file):
            raise CheckpointError(f"missing task container for task {tid!r}")
        entries = tsr.read_bundle(task_file)
        for i, block in enumerate(params.biases):
            for name in block:
                key = f"bias/{i}/{name}"
                if key not in entries:
                    raise CheckpointError(f"task {tid}: missing tensor {key}")
                _copy_into(block[name], entries[key], f"task {tid} {key}")
        if tid in owned:
            tables = [
                torch.from_numpy(np.ascontiguousarray(entries[f"posbias/layer{i}"]))
                for i in range(model.config.depth)
            ]
            grid_rows = tables[0].shape[1]
            grid = ((grid_rows + 1) // 2, (tables[0].shape[2] + 1) // 2)
            params.pos_bias = PositionBiasTables(
                params.task.modality_count, grid, model.config.depth, tables
            )
            params.owns_pos_bias = True
    for gid in manifest["group_ids"]:
        lam, head = registry._groups.get(gid, (None, None))
        if lam is None:
            continue  # group exists in manifest but no task materialized it
        entries = tsr.read_bundle(os.path.join(path, "groups", f"{safe_name(gid)}.tsrb"))
        _copy_into(lam, entries["lambda_logits"], f"group {gid} lambda")
        _copy_into(head.weight, entries["head.weight"], f"group {gid} head.weight")
        _copy_into(head.bias, entries["head.bias"], f"group {gid} head.bias")
    for count in manifest["pos_modalities"]:
        tables = registry.shared_pos_tables(int(count))
        entries = tsr.read_bundle(os.path.join(path, "posbias", f"{count}.tsrb"))
        for i, t in enumerate(tables.tables):
            _copy_into(t, entries[f"layer{i}"], f"posbias[{count}] layer{i}")

    trainer_state = None
    trainer_file = os.path.join(path, "trainer.tsrb")
    if os.path.exists(trainer_file):
        trainer_state = dict(tsr.read_bundle(trainer_file))
    return model, registry, manifest.get("extra", {}), trainer_state
