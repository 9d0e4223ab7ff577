import filecmp
import os

import numpy as np
import pytest
import torch
from scipy import ndimage

from tokenmatch.data import DirectoryDataSource
from tokenmatch.synth import (
    FamilySpec,
    SynthSpec,
    desk_holdout_spec,
    desk_train_spec,
    generate_example,
    shape_corners,
    shape_mask,
    synth_generate,
)


def _tree_files(root):
    out = {}
    for base, _, files in os.walk(root):
        for f in files:
            path = os.path.join(base, f)
            out[os.path.relpath(path, root)] = open(path, "rb").read()
    return out


def test_same_seed_byte_identical(tmp_path):
    spec = SynthSpec(
        image_size=(32, 32),
        families=(FamilySpec("mini", "shapes", 6, ("circle", "square", "triangle")),),
    )
    synth_generate(spec, 9, tmp_path / "a")
    synth_generate(spec, 9, tmp_path / "b")
    a, b = _tree_files(tmp_path / "a"), _tree_files(tmp_path / "b")
    assert set(a) == set(b)
    for rel in a:
        assert a[rel] == b[rel], rel
    synth_generate(spec, 10, tmp_path / "c")
    c = _tree_files(tmp_path / "c")
    assert any(a[rel] != c[rel] for rel in a if rel.endswith(".tsr"))


def test_manifest_counts_after_disassembly(tmp_path):
    spec = SynthSpec(
        image_size=(32, 32),
        families=(
            FamilySpec("sh", "shapes", 4, ("circle", "square")),
            FamilySpec("kp", "keypoints", 4, carrier="square"),
            FamilySpec("st", "stereo", 4, ("circle",)),
            FamilySpec("ck", "clicks", 4, ("circle", "square"), target_class="circle"),
        ),
    )
    manifest = synth_generate(spec, 0, tmp_path)
    # shapes: 2 seg + 2 sdf + 3 auto + 1 edge = 8; kp: 4; stereo: 3; clicks: 1
    assert len(manifest.tasks) == 8 + 4 + 3 + 1
    assert manifest.group("sh/seg").parent_channels == 2
    assert manifest.group("kp/kp").parent_channels == 4
    for task in manifest.tasks:
        assert task.channel_index < manifest.group(task.group_id).parent_channels


def test_segmentation_matches_analytic_masks():
    spec = FamilySpec("oracle", "shapes", 3, ("circle", "square", "triangle"))
    for index in range(3):
        image, labels, meta = generate_example(spec, (64, 64), 123, index)
        for cls in spec.classes:
            stored = labels[f"oracle/seg-{cls}"][0]
            analytic = np.zeros((64, 64), dtype=bool)
            full = [
                shape_mask(s["cls"], s["cy"], s["cx"], s["r"], s["theta"], (64, 64))
                for s in meta["shapes"]
            ]
            for i, s in enumerate(meta["shapes"]):
                if s["cls"] != cls:
                    continue
                vis = full[i].copy()
                for later in full[i + 1 :]:
                    vis &= ~later
                analytic |= vis
            assert (stored.astype(bool) == analytic).all()


def test_keypoint_peaks_at_corners():
    spec = FamilySpec("kp", "keypoints", 2, carrier="triangle")
    image, labels, meta = generate_example(spec, (64, 64), 5, 0)
    corners = meta["corners"]
    assert len(corners) == 3
    for j, (cy, cx) in enumerate(corners):
        hm = labels[f"kp/kp{j}"][0]
        peak = np.unravel_index(hm.argmax(), hm.shape)
        assert abs(peak[0] - cy) <= 0.5 and abs(peak[1] - cx) <= 0.5
        assert hm.max() == pytest.approx(1.0)


def test_stereo_disparity_consistency():
    spec = FamilySpec("st", "stereo", 2, ("circle",))
    image, labels, meta = generate_example(spec, (64, 64), 11, 1)
    assert image.shape[0] == 2
    disparity = labels["st/disparity"][0]
    seg = labels["st/seg-any"][0].astype(bool)
    assert (disparity[~seg] == 0).all()
    assert disparity[seg].min() >= 2.0 / 8.0 - 1e-6
    assert disparity[seg].max() <= 6.0 / 8.0 + 1e-6
    # the right view is genuinely shifted: views differ on shape pixels
    assert np.abs(image[0] - image[1]).max() > 0.1


def test_clicks_guide_and_target(tmp_path):
    spec = FamilySpec("ck", "clicks", 3, ("ring", "circle"), target_class="ring")
    image, labels, meta = generate_example(spec, (64, 64), 2, 0)
    assert image.shape[0] == 2
    target = labels["ck/click-seg-ring"][0]
    assert set(np.unique(target)) <= {0.0, 1.0}
    guide = image[1]
    assert guide.max() <= 1.0
    # clicks sit inside the target region
    for cy, cx in meta["centers"]:
        assert target[cy, cx] == 1.0


def test_desk_specs_cover_all_arms():
    train = desk_train_spec(scale=0.1)
    holdout = desk_holdout_spec(scale=0.1)
    import tempfile

    with tempfile.TemporaryDirectory() as td:
        manifest = synth_generate(train, 1, td)
        pools = {
            (t, m): len(manifest.task_pool(task_type=t, modality_count=m))
            for t in ("categorical", "continuous", "low_level")
            for m in (1, 2)
        }
        assert all(v > 0 for v in pools.values()), pools
    for fam in holdout.families:
        assert fam.dataset_id in ("ring-seg", "corner-kp", "ring-clicks")


def test_loadable_through_data_source(tmp_path):
    spec = SynthSpec(
        image_size=(32, 32),
        families=(FamilySpec("sh", "shapes", 5, ("circle", "triangle")),),
    )
    manifest = synth_generate(spec, 4, tmp_path)
    source = DirectoryDataSource(str(tmp_path), manifest)
    task = manifest.task("sh/seg-circle")
    image, label = source.load_pair(task, 2)
    assert image.shape == (1, 3, 32, 32)
    assert label.shape == (1, 32, 32)
    assert image.dtype == torch.float32
    episode = source.episode(task, [0, 1], [2, 3])
    assert episode.num_shots == 2
