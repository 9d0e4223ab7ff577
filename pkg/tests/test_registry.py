import pytest
import torch

from tokenmatch import (
    DatasetEntry,
    DatasetManifest,
    FewShotDenseModel,
    RegistrationError,
    Registry,
)
from conftest import make_task, small_manifest, tiny_config


def test_idempotent_handles(tiny_setup):
    _, _, registry = tiny_setup
    a = registry.get_or_create_params("seg-a")
    b = registry.get_or_create_params("seg-a")
    assert a is b


def test_group_sharing_pattern(tiny_setup):
    _, _, registry = tiny_setup
    a = registry.get_or_create_params("seg-a")
    b = registry.get_or_create_params("seg-b")
    c = registry.get_or_create_params("depth")
    # One group: identical lambda/head storage, never-aliased biases.
    assert a.lambda_logits is b.lambda_logits
    assert a.head is b.head
    assert a.lambda_logits is not c.lambda_logits
    for block_a, block_b in zip(a.biases, b.biases):
        for name in block_a:
            assert block_a[name] is not block_b[name]


def test_position_bias_shared_per_modality(tiny_setup):
    _, _, registry = tiny_setup
    a = registry.get_or_create_params("seg-a")
    d = registry.get_or_create_params("depth")
    s = registry.get_or_create_params("stereo")
    assert a.pos_bias is d.pos_bias  # both uni-modal
    assert a.pos_bias is not s.pos_bias
    assert s.pos_bias.tables[0].shape[0] == 4  # I*I pairs


def test_initialization_contract(tiny_setup):
    model, _, registry = tiny_setup
    params = registry.get_or_create_params("seg-a")
    lam = params.lambda_matrix()
    L = model.config.num_levels
    assert torch.allclose(lam, torch.full((L, L), 1.0 / L))
    # Zero offsets: the task's effective biases start at the shared encoder's
    # current values exactly.
    for i, (block, shared) in enumerate(
        zip(params.biases, model.image_encoder.current_bias_values())
    ):
        for name in block:
            assert torch.equal(block[name], torch.zeros_like(shared[name]))
            effective = shared[name] + block[name]
            assert torch.equal(effective, shared[name])


def test_unknown_task_rejected(tiny_setup):
    _, _, registry = tiny_setup
    with pytest.raises(RegistrationError):
        registry.get_or_create_params("missing-task")
    foreign = make_task("alien", "seg", dataset_id="other-ds")
    with pytest.raises(RegistrationError):
        registry.get_or_create_params(foreign)


def _table5_manifest():
    """Mirror of the meta-training corpus statistics: 332 single-channel
    tasks whose re-weighting matrices collapse to 42 sharing units."""
    datasets = {
        "taskonomy": dict(
            images=381916,
            groups=[("seg", "categorical", "bce", 12)]
            + [(f"cont{i}", "continuous", "l1", n)
               for i, n in enumerate([3, 3, 1, 2, 2, 2, 3, 3])]  # 19 channels
            + [("auto", "low_level", "l1", 3), ("den", "low_level", "l1", 3),
               ("edge", "low_level", "l1", 3)],
        ),
        "coco": dict(
            images=118287,
            groups=[("seg", "categorical", "bce", 80),
                    # panoptic shares the semantic matrix: same group id
                    ("seg", "categorical", "bce", 5, 80),
                    ("inter", "categorical", "bce", 80),
                    ("kp", "categorical", "spatial_softmax", 17),
                    ("kpag", "continuous", "l1", 1),
                    ("auto", "low_level", "l1", 3), ("den", "low_level", "l1", 3),
                    ("edge", "low_level", "l1", 3)],
        ),
        "midair": dict(
            images=423676,
            groups=[("seg", "categorical", "bce", 8),
                    ("mono-a", "continuous", "l1", 1), ("mono-b", "continuous", "l1", 3),
                    ("bino-a", "continuous", "l1", 1, 0, 2),
                    ("bino-b", "continuous", "l1", 3, 0, 2),
                    ("auto", "low_level", "l1", 3), ("den", "low_level", "l1", 3),
                    ("edge", "low_level", "l1", 3)],
        ),
        "mpii": dict(
            images=24984,
            groups=[("kp", "categorical", "spatial_softmax", 16),
                    ("kpag", "continuous", "l1", 1),
                    ("auto", "low_level", "l1", 3), ("den", "low_level", "l1", 3),
                    ("edge", "low_level", "l1", 3)],
        ),
        "deepfashion": dict(
            images=123016,
            groups=[("kp", "categorical", "spatial_softmax", 8),
                    ("kpag", "continuous", "l1", 1),
                    ("auto", "low_level", "l1", 3), ("den", "low_level", "l1", 3),
                    ("edge", "low_level", "l1", 3)],
        ),
        "freihand": dict(
            images=130240,
            groups=[("kp", "categorical", "spatial_softmax", 21),
                    ("kpag", "continuous", "l1", 1),
                    ("auto", "low_level", "l1", 3), ("den", "low_level", "l1", 3),
                    ("edge", "low_level", "l1", 3)],
        ),
    }
    entries = []
    for ds, info in datasets.items():
        tasks = []
        for spec in info["groups"]:
            name, ttype, loss, channels = spec[0], spec[1], spec[2], spec[3]
            offset = spec[4] if len(spec) > 4 else 0
            modality = spec[5] if len(spec) > 5 else 1
            gid = f"{ds}/{name}"
            for c in range(channels):
                tasks.append(
                    make_task(
                        task_id=f"{ds}/{name}/{offset + c}",
                        group_id=gid,
                        dataset_id=ds,
                        task_type=ttype,
                        modality_count=modality,
                        channel_index=offset + c,
                        loss_kind=loss,
                        resolution=(16, 16),
                    )
                )
        entries.append(DatasetEntry(ds, info["images"], (16, 16), tuple(tasks)))
    return DatasetManifest(entries)


def test_meta_training_scale_sharing():
    man = _table5_manifest()
    assert len(man.tasks) == 332
    torch.manual_seed(0)
    model = FewShotDenseModel(tiny_config())
    registry = Registry(man, model, seed=0).create_all()
    bias_ids = {id(p.biases[0]["qkv"]) for p in registry._tasks.values()}
    assert len(bias_ids) == 332  # one bias set per task, never aliased
    lambda_ids = {id(p.lambda_logits) for p in registry._tasks.values()}
    assert len(lambda_ids) == 42  # channels of one annotation share a matrix
    pos_ids = {id(p.pos_bias) for p in registry._tasks.values()}
    assert len(pos_ids) == 2  # one shared table set per modality count


def test_named_tensors_cover_everything(tiny_setup):
    _, _, registry = tiny_setup
    registry.create_all()
    names = registry.named_tensors()
    unique = {id(p) for p in registry.all_parameters()}
    assert {id(t) for t in names.values()} == unique
