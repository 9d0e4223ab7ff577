import pytest
import torch

from tokenmatch import (
    ConfigError,
    DatasetEntry,
    DatasetManifest,
    Episode,
    InputError,
    RegistrationError,
)
from conftest import make_task, small_manifest


def test_descriptor_validation():
    with pytest.raises(ConfigError):
        make_task(task_type="bogus")
    with pytest.raises(ConfigError):
        make_task(loss_kind="bogus")
    with pytest.raises(ConfigError):
        make_task(modality_count=0)
    with pytest.raises(ConfigError):
        make_task(channel_index=-1)


def test_manifest_groups_and_lookup():
    man = small_manifest()
    assert len(man.tasks) == 5
    seg = man.group("seg")
    assert seg.parent_channels == 2
    assert set(seg.member_task_ids) == {"seg-a", "seg-b"}
    with pytest.raises(RegistrationError):
        man.task("nope")
    with pytest.raises(RegistrationError):
        man.dataset("nope")


def test_manifest_rejects_channel_overflow():
    bad = make_task("solo", "gX", channel_index=3)
    with pytest.raises(ConfigError, match="channel_index"):
        DatasetManifest([DatasetEntry("d0", 5, (16, 16), (bad,))])


def test_manifest_round_trip(tmp_path):
    man = small_manifest()
    path = tmp_path / "manifest.json"
    man.save(path)
    back = DatasetManifest.load(path)
    assert back.to_dict() == man.to_dict()


def test_episode_validation():
    task = make_task(task_type="categorical", loss_kind="bce")
    x = torch.rand(1, 3, 16, 16)
    y = (torch.rand(1, 16, 16) > 0.5).float()
    ep = Episode(task=task, support=[(x, y)], queries=[(x, y)])
    assert ep.num_shots == 1

    with pytest.raises(InputError, match="at least one support"):
        Episode(task=task, support=[], queries=[(x, y)])
    with pytest.raises(InputError, match="0, 1"):
        Episode(task=task, support=[(x, torch.rand(1, 16, 16) + 0.1)], queries=[])
    bad = torch.full((1, 16, 16), float("nan"))
    cont = make_task(task_type="continuous", loss_kind="l1")
    with pytest.raises(InputError, match="finite"):
        Episode(task=cont, support=[(x, bad)], queries=[])
    with pytest.raises(InputError, match="shape"):
        Episode(task=task, support=[(x, y), (torch.rand(1, 3, 8, 8), y)], queries=[])


def test_episode_heatmap_targets_allowed():
    # Spatial-softmax channels carry [0, 1] heatmap mass, not binary masks.
    task = make_task(task_type="categorical", loss_kind="spatial_softmax")
    x = torch.rand(1, 3, 16, 16)
    y = torch.rand(1, 16, 16) * 0.9
    Episode(task=task, support=[(x, y)], queries=[(x, y)])
    with pytest.raises(InputError, match="non-negative"):
        Episode(task=task, support=[(x, -y)], queries=[])
