"""Dataset directory access.

Directory contract (one tree per corpus):

    <root>/manifest.json                 dataset manifest (see tasks.py)
    <root>/<dataset_id>/images/<i>.tsr   [I_ds, 3, H, W] float32 in [0, 1]
    <root>/<dataset_id>/labels/<task_id>/<i>.tsr   [1, H, W] float32

A dataset stores the full modality stack per example; a task with
modality_count I consumes the first I modalities.  Task ids are quoted for
use as directory names.
"""

import os
from urllib.parse import quote

import numpy as np
import torch

from .errors import InputError
from .tasks import DatasetManifest, Episode
from . import tsr


def safe_name(identifier: str) -> str:
    return quote(identifier, safe="")


class DirectoryDataSource:
    """Loads (image, label) pairs from a dataset directory tree."""

    def __init__(self, root, manifest: DatasetManifest = None, cache: bool = True):
        self.root = str(root)
        if manifest is None:
            manifest = DatasetManifest.load(os.path.join(self.root, "manifest.json"))
        self.manifest = manifest
        self._cache = {} if cache else None

    def _read(self, path):
        if self._cache is not None and path in self._cache:
            return self._cache[path]
        arr = torch.from_numpy(np.ascontiguousarray(tsr.read_tensor(path)))
        if self._cache is not None:
            self._cache[path] = arr
        return arr

    def image_path(self, dataset_id: str, index: int) -> str:
        return os.path.join(self.root, safe_name(dataset_id), "images", f"{index}.tsr")

    def label_path(self, task_id: str, dataset_id: str, index: int) -> str:
        return os.path.join(
            self.root, safe_name(dataset_id), "labels", safe_name(task_id), f"{index}.tsr"
        )

    def load_pair(self, task, index: int):
        image = self._read(self.image_path(task.dataset_id, index))
        if image.dim() != 4 or image.shape[1] != 3:
            raise InputError(
                f"stored image must be [I, 3, H, W], got {tuple(image.shape)} "
                f"({task.dataset_id}/{index})"
            )
        if image.shape[0] < task.modality_count:
            raise InputError(
                f"dataset {task.dataset_id} stores {image.shape[0]} modalities, task "
                f"{task.task_id} needs {task.modality_count}"
            )
        label = self._read(self.label_path(task.task_id, task.dataset_id, index))
        return image[: task.modality_count].float(), label.float()

    def episode(self, task, support_indices, query_indices) -> Episode:
        support = [self.load_pair(task, i) for i in support_indices]
        queries = [self.load_pair(task, i) for i in query_indices]
        return Episode(task=task, support=support, queries=queries)
