"""Episodic meta-training.

Each iteration draws one (or more) episodic batches with the four-step
sampler, forwards every query through the matching pipeline, dispatches the
per-task loss by loss kind, and takes one optimizer step that touches exactly
the shared weights plus the task-specific parameters of the sampled tasks
(AdamW leaves parameters without gradients untouched, including their
moments).

Every iteration's randomness is derived from (seed, iteration), so training
is resumable: restoring the checkpointed model, task parameters and optimizer
moments continues the loss sequence bit for bit.
"""

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig
from .errors import CheckpointError, TrainStepError
from .losses import loss_for_kind
from .model import FewShotDenseModel
from .registry import Registry
from .sampler import SamplerConfig, materialize, plan_batch
from .seeding import derive_seed, numpy_rng
from .tasks import DatasetManifest


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    lr: float = 1e-3
    task_lr_scale: float = 10.0
    weight_decay: float = 0.01
    warmup: int = 100
    min_lr_scale: float = 0.05
    groups_per_step: int = 1
    checkpoint_every: int = 1000
    log_every: int = 25
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "sampler" in data and isinstance(data["sampler"], dict):
            data["sampler"] = SamplerConfig(**data["sampler"])
        return cls(**data)


def run_hash(model_config: ModelConfig, train_config: TrainConfig,
             manifest: DatasetManifest, seed: int) -> str:
    import hashlib

    blob = json.dumps(
        {
            "model": model_config.to_dict(),
            "train": train_config.to_dict(),
            "manifest": manifest.to_dict(),
            "seed": seed,
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()


def lr_at(iteration: int, config: TrainConfig) -> float:
    if iteration < config.warmup:
        return config.lr * (iteration + 1) / config.warmup
    span = max(1, config.iterations - config.warmup)
    progress = min(1.0, (iteration - config.warmup) / span)
    scale = config.min_lr_scale + (1 - config.min_lr_scale) * 0.5 * (
        1 + math.cos(math.pi * progress)
    )
    return config.lr * scale


def named_parameter_map(model, registry):
    names = {f"shared/{n}": p for n, p in model.named_parameters()}
    names.update(registry.named_tensors())
    return names


def build_optimizer(model, registry, config: TrainConfig):
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        (decay if p.dim() >= 2 else no_decay).append(p)
    task_params = registry.all_parameters()
    optimizer = torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": config.weight_decay, "lr_scale": 1.0},
            {"params": no_decay, "weight_decay": 0.0, "lr_scale": 1.0},
            {
                "params": task_params,
                "weight_decay": 0.0,
                "lr_scale": config.task_lr_scale,
            },
        ],
        lr=config.lr,
    )
    return optimizer


def set_lr(optimizer, lr: float):
    for group in optimizer.param_groups:
        group["lr"] = lr * group.get("lr_scale", 1.0)


def episode_loss(model, registry, episode):
    params = registry.get_or_create_params(episode.task)
    queries = torch.stack([q for q, _ in episode.queries])
    targets = torch.stack([y for _, y in episode.queries])
    preds = model.predict(queries, episode.support, params)
    return loss_for_kind(episode.task.loss_kind)(preds, targets)


def train_step(model, registry, episodes, optimizer, lr: float):
    """One optimization step over a list of episodes; returns (loss, per-task)."""
    set_lr(optimizer, lr)
    per_task = {}
    losses = []
    for ep in episodes:
        loss = episode_loss(model, registry, ep)
        per_task[ep.task.task_id] = float(loss.detach())
        losses.append(loss)
    total = torch.stack(losses).mean()
    if not torch.isfinite(total):
        grad_norms = {
            name: float(p.grad.norm()) if p.grad is not None else 0.0
            for name, p in list(model.named_parameters())[:3]
        }
        raise TrainStepError(
            f"non-finite loss; per-task losses {per_task}; sample grad norms {grad_norms}"
        )
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    return float(total.detach()), per_task


def export_optimizer_state(optimizer, name_of) -> dict:
    state = {}
    for param, st in optimizer.state.items():
        name = name_of[id(param)]
        for key, value in st.items():
            state[f"{name}::{key}"] = value.detach().cpu().numpy()
    return state


def load_optimizer_state(optimizer, name_of, stored: dict):
    by_name = {}
    for full_key, array in stored.items():
        name, key = full_key.rsplit("::", 1)
        by_name.setdefault(name, {})[key] = array
    id_map = {}
    for group in optimizer.param_groups:
        for p in group["params"]:
            id_map[name_of[id(p)]] = p
    for name, entries in by_name.items():
        if name not in id_map:
            raise CheckpointError(f"optimizer state for unknown parameter {name}")
        p = id_map[name]
        optimizer.state[p] = {
            key: torch.from_numpy(np.ascontiguousarray(value))
            for key, value in entries.items()
        }


class TrainLog:
    def __init__(self, path, header: dict = None):
        self.path = path
        if header is not None:
            with open(path, "w") as fh:
                fh.write(json.dumps(header, sort_keys=True) + "\n")

    def append(self, record: dict):
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def meta_train(model_config: ModelConfig, train_config: TrainConfig,
               manifest: DatasetManifest, source, seed: int, out_dir,
               resume=None) -> str:
    """Run the episodic loop; returns the final checkpoint path."""
    os.makedirs(out_dir, exist_ok=True)
    expected_hash = run_hash(model_config, train_config, manifest, seed)

    if resume is not None:
        model, registry, extra, trainer_state = load_checkpoint(resume)
        if extra.get("run_hash") != expected_hash:
            raise CheckpointError(
                "resume refused: checkpoint was produced by a different "
                "model/train/manifest/seed configuration"
            )
        start = int(extra["iteration"])
        optimizer = build_optimizer(model, registry, train_config)
        if trainer_state:
            name_of = {
                id(p): n for n, p in named_parameter_map(model, registry).items()
            }
            load_optimizer_state(optimizer, name_of, trainer_state)
        log = TrainLog(os.path.join(out_dir, "log.jsonl"))  # append to existing
    else:
        torch.manual_seed(derive_seed(seed, "model-init"))
        model = FewShotDenseModel(model_config)
        registry = Registry(manifest, model, seed=seed).create_all()
        optimizer = build_optimizer(model, registry, train_config)
        start = 0
        log = TrainLog(
            os.path.join(out_dir, "log.jsonl"),
            header={"run_hash": expected_hash, "seed": seed,
                    "model_config": model_config.to_dict(),
                    "train_config": train_config.to_dict()},
        )

    name_of = {id(p): n for n, p in named_parameter_map(model, registry).items()}
    final_path = os.path.join(out_dir, "checkpoint-final")

    def save(path, iteration):
        save_checkpoint(
            model,
            registry,
            path,
            extra={"iteration": iteration, "run_hash": expected_hash, "seed": seed,
                   "train_config": train_config.to_dict()},
            trainer_state=export_optimizer_state(optimizer, name_of),
        )

    model.train()
    for it in range(start, train_config.iterations):
        rng = numpy_rng(seed, "sample", it)
        t0 = time.time()
        episodes = []
        plans = []
        for _ in range(train_config.groups_per_step):
            plan = plan_batch(manifest, train_config.sampler, rng)
            plans.append(plan)
            episodes.extend(materialize(plan, manifest, source))
        loss, per_task = train_step(
            model, registry, episodes, optimizer, lr_at(it, train_config)
        )
        record = {
            "iteration": it,
            "loss": loss,
            "arm": plans[0].arm,
            "task_type": plans[0].task_type,
            "dataset": plans[0].dataset_id,
            "task_ids": [tid for p in plans for tid in p.task_ids],
            "lr": lr_at(it, train_config),
            "wall_time": round(time.time() - t0, 4),
        }
        if it % train_config.log_every == 0 or it == train_config.iterations - 1:
            log.append(record)
        if (it + 1) % train_config.checkpoint_every == 0 and it + 1 < train_config.iterations:
            save(os.path.join(out_dir, f"checkpoint-{it + 1}"), it + 1)
    save(final_path, train_config.iterations)
    return final_path
