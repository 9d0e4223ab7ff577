"""Domain types: tasks, task groups, episodes, dataset manifests.

A dense prediction task is always single-channel; a multi-channel annotation
is disassembled into one task per channel, tied together by a TaskGroup that
shares one feature re-weighting matrix and one decoder head.
"""

import json
from dataclasses import dataclass, field, asdict

import torch

from .errors import ConfigError, InputError, RegistrationError

TASK_TYPES = ("categorical", "continuous", "low_level")
LOSS_KINDS = ("l1", "bce", "spatial_softmax", "mse", "multi_instance_ce")


@dataclass(frozen=True)
class TaskDescriptor:
    task_id: str
    group_id: str
    dataset_id: str
    task_type: str
    modality_count: int
    channel_index: int
    loss_kind: str
    resolution: tuple

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(self.resolution))
        if self.task_type not in TASK_TYPES:
            raise ConfigError(f"unknown task_type {self.task_type!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss_kind {self.loss_kind!r}")
        if self.modality_count < 1:
            raise ConfigError("modality_count must be >= 1")
        if self.channel_index < 0:
            raise ConfigError("channel_index must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TaskDescriptor":
        return cls(**data)


@dataclass(frozen=True)
class TaskGroup:
    group_id: str
    member_task_ids: tuple
    parent_channels: int

    def __post_init__(self):
        object.__setattr__(self, "member_task_ids", tuple(self.member_task_ids))
        if len(self.member_task_ids) != self.parent_channels:
            raise ConfigError(
                f"group {self.group_id}: {len(self.member_task_ids)} members "
                f"but parent_channels={self.parent_channels}"
            )


@dataclass
class Episode:
    """One task's support and query pairs.

    Images are [I, 3, H, W] floats in [0, 1]; labels are [1, H, W].
    """

    task: TaskDescriptor
    support: list
    queries: list

    def __post_init__(self):
        if len(self.support) < 1:
            raise InputError("episode needs at least one support pair")
        ref_x, ref_y = self.support[0]
        for x, y in list(self.support) + list(self.queries):
            if x.shape != ref_x.shape:
                raise InputError(f"image shape {tuple(x.shape)} != {tuple(ref_x.shape)}")
            if y.shape != ref_y.shape:
                raise InputError(f"label shape {tuple(y.shape)} != {tuple(ref_y.shape)}")
            if x.dim() != 4 or x.shape[0] != self.task.modality_count or x.shape[1] != 3:
                raise InputError(
                    f"image must be [{self.task.modality_count}, 3, H, W], got {tuple(x.shape)}"
                )
            if y.dim() != 3 or y.shape[0] != 1:
                raise InputError(f"label must be [1, H, W], got {tuple(y.shape)}")
            if not torch.isfinite(y).all():
                raise InputError("label contains non-finite values")
            # Binary-valued labels are a bce contract; spatial-softmax heatmap
            # targets are [0, 1]-valued masses.
            if self.task.loss_kind == "bce":
                binary = (y == 0) | (y == 1)
                if not binary.all():
                    raise InputError("bce label values must be in {0, 1}")
            elif self.task.task_type == "categorical":
                if bool((y < 0).any()):
                    raise InputError("categorical label values must be non-negative")

    @property
    def num_shots(self) -> int:
        return len(self.support)


@dataclass(frozen=True)
class DatasetEntry:
    dataset_id: str
    image_count: int
    resolution: tuple
    tasks: tuple

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(self.resolution))
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if self.image_count <= 0:
            raise ConfigError(f"dataset {self.dataset_id}: image_count must be positive")


class DatasetManifest:
    """Collection of datasets with their task pools and group structure."""

    def __init__(self, datasets):
        self.datasets = list(datasets)
        ids = [d.dataset_id for d in self.datasets]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate dataset ids in manifest")
        self._by_dataset = {d.dataset_id: d for d in self.datasets}
        self._tasks = {}
        for entry in self.datasets:
            for task in entry.tasks:
                if task.task_id in self._tasks:
                    raise ConfigError(f"duplicate task id {task.task_id}")
                if task.dataset_id != entry.dataset_id:
                    raise ConfigError(
                        f"task {task.task_id} claims dataset {task.dataset_id} "
                        f"but is listed under {entry.dataset_id}"
                    )
                self._tasks[task.task_id] = task
        self._groups = self._build_groups()

    def _build_groups(self):
        members = {}
        for task in self._tasks.values():
            members.setdefault(task.group_id, []).append(task)
        groups = {}
        for gid, tasks in members.items():
            tasks = sorted(tasks, key=lambda t: (t.dataset_id, t.channel_index, t.task_id))
            for task in tasks:
                if task.channel_index >= len(tasks):
                    raise ConfigError(
                        f"task {task.task_id}: channel_index {task.channel_index} "
                        f">= group size {len(tasks)}"
                    )
            groups[gid] = TaskGroup(
                group_id=gid,
                member_task_ids=tuple(t.task_id for t in tasks),
                parent_channels=len(tasks),
            )
        return groups

    # -- lookups -----------------------------------------------------------

    def task(self, task_id: str) -> TaskDescriptor:
        if task_id not in self._tasks:
            raise RegistrationError(f"unknown task id {task_id!r}")
        return self._tasks[task_id]

    def has_task(self, task_id: str) -> bool:
        return task_id in self._tasks

    def dataset(self, dataset_id: str) -> DatasetEntry:
        if dataset_id not in self._by_dataset:
            raise RegistrationError(f"unknown dataset id {dataset_id!r}")
        return self._by_dataset[dataset_id]

    def group(self, group_id: str) -> TaskGroup:
        if group_id not in self._groups:
            raise RegistrationError(f"unknown group id {group_id!r}")
        return self._groups[group_id]

    @property
    def tasks(self):
        return list(self._tasks.values())

    @property
    def groups(self):
        return dict(self._groups)

    def task_pool(self, task_type=None, modality_count=None, dataset_id=None):
        pool = self._tasks.values()
        if task_type is not None:
            pool = [t for t in pool if t.task_type == task_type]
        if modality_count is not None:
            pool = [t for t in pool if t.modality_count == modality_count]
        if dataset_id is not None:
            pool = [t for t in pool if t.dataset_id == dataset_id]
        return list(pool)

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "datasets": [
                {
                    "dataset_id": d.dataset_id,
                    "image_count": d.image_count,
                    "resolution": list(d.resolution),
                    "tasks": [t.to_dict() for t in d.tasks],
                }
                for d in self.datasets
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        if data.get("format_version") != 1:
            raise ConfigError(f"unknown manifest version {data.get('format_version')!r}")
        datasets = []
        for entry in data["datasets"]:
            tasks = tuple(TaskDescriptor.from_dict(t) for t in entry["tasks"])
            datasets.append(
                DatasetEntry(
                    dataset_id=entry["dataset_id"],
                    image_count=entry["image_count"],
                    resolution=tuple(entry["resolution"]),
                    tasks=tasks,
                )
            )
        return cls(datasets)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
