import numpy as np
import pytest
import torch

from tokenmatch import (
    DatasetEntry,
    DatasetManifest,
    FewShotDenseModel,
    ModelConfig,
    Registry,
    TaskDescriptor,
)


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        embed_dim=16,
        depth=2,
        num_heads=2,
        patch_size=(4, 4),
        num_levels=2,
        matching_heads=2,
        decoder_dim=8,
        train_resolution=(16, 16),
        label_depth=2,
    )
    base.update(overrides)
    return ModelConfig(**base)


def make_task(task_id="t0", group_id="g0", dataset_id="d0", task_type="categorical",
              modality_count=1, channel_index=0, loss_kind="bce", resolution=(16, 16)):
    return TaskDescriptor(
        task_id=task_id, group_id=group_id, dataset_id=dataset_id,
        task_type=task_type, modality_count=modality_count,
        channel_index=channel_index, loss_kind=loss_kind, resolution=resolution,
    )


def small_manifest(resolution=(16, 16)) -> DatasetManifest:
    tasks = (
        make_task("seg-a", "seg", task_type="categorical", loss_kind="bce",
                  resolution=resolution, channel_index=0),
        make_task("seg-b", "seg", task_type="categorical", loss_kind="bce",
                  resolution=resolution, channel_index=1),
        make_task("depth", "depth", task_type="continuous", loss_kind="l1",
                  resolution=resolution),
        make_task("stereo", "stereo", task_type="continuous", loss_kind="l1",
                  modality_count=2, resolution=resolution),
        make_task("edges", "edges", task_type="low_level", loss_kind="l1",
                  resolution=resolution),
    )
    return DatasetManifest([DatasetEntry("d0", 12, resolution, tasks)])


@pytest.fixture
def tiny_setup():
    torch.manual_seed(0)
    config = tiny_config()
    model = FewShotDenseModel(config)
    manifest = small_manifest()
    registry = Registry(manifest, model, seed=0)
    return model, manifest, registry


def to_double(params):
    """Cast a TaskParams handle (and what it aliases) to float64 in place."""
    for block in params.biases:
        for key in block:
            block[key].data = block[key].data.double()
    for table in params.pos_bias.tables:
        table.data = table.data.double()
    params.lambda_logits.data = params.lambda_logits.data.double()
    params.head.double()
    return params


def random_support(n, modalities=1, resolution=(16, 16), binary=False, gen=None):
    gen = gen or torch.Generator().manual_seed(0)
    H, W = resolution
    pairs = []
    for _ in range(n):
        x = torch.rand(modalities, 3, H, W, generator=gen)
        if binary:
            y = (torch.rand(1, H, W, generator=gen) > 0.5).float()
        else:
            y = torch.rand(1, H, W, generator=gen)
        pairs.append((x, y))
    return pairs
