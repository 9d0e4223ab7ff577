"""The synthetic verification corpus.

Generates a small training corpus (shape segmentation, signed-distance
regression, corner keypoints, stereo-like bi-modal pairs) plus the held-out
corpus (an unseen shape class, an unseen keypoint family, and click-guided
segmentation, which never appears in training), then samples episodic batches
the way the meta-trainer does.
"""

import collections
import tempfile

from tokenmatch.data import DirectoryDataSource
from tokenmatch.sampler import SamplerConfig, plan_batch, sample_batch
from tokenmatch.seeding import numpy_rng
from tokenmatch.synth import desk_holdout_spec, desk_train_spec, synth_generate

root = tempfile.mkdtemp(prefix="tokenmatch-demo-")
train_manifest = synth_generate(desk_train_spec(scale=0.2), seed=7, out_root=f"{root}/train")
holdout_manifest = synth_generate(desk_holdout_spec(scale=0.2), seed=8, out_root=f"{root}/holdout")

print(f"training corpus at {root}/train")
for entry in train_manifest.datasets:
    kinds = collections.Counter(t.task_type for t in entry.tasks)
    print(f"  {entry.dataset_id}: {entry.image_count} images, "
          f"{len(entry.tasks)} single-channel tasks {dict(kinds)}")
print(f"held-out corpus: {[d.dataset_id for d in holdout_manifest.datasets]}")

config = SamplerConfig()  # 3:3:1 task types, 4 tasks x (4 support + 4 query), 246:84 arms
rng = numpy_rng(0, "demo-sampler")
counts = collections.Counter()
for _ in range(2000):
    plan = plan_batch(train_manifest, config, rng)
    counts[(plan.arm, plan.task_type)] += 1
print("2000 batch draws by (arm, type):")
for key, n in sorted(counts.items()):
    print(f"  {key}: {n / 2000:.3f}")

source = DirectoryDataSource(f"{root}/train", train_manifest)
episodes = sample_batch(train_manifest, config, rng, source)
ep = episodes[0]
print(f"one episode: task {ep.task.task_id}, {ep.num_shots} support + "
      f"{len(ep.queries)} query pairs, image {tuple(ep.support[0][0].shape)}, "
      f"label {tuple(ep.support[0][1].shape)}")
