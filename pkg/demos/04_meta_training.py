"""Episodic meta-training, checkpointing and exact resumption.

Runs a short loop on a small model: every iteration samples one episodic
batch (four tasks, four shots, four queries), dispatches the per-task loss,
and steps the shared weights plus the sampled tasks' parameters.  A second
run from the same seed reproduces the loss sequence exactly, and resuming
from the midpoint checkpoint continues it bit for bit.
"""

import json
import os
import tempfile

from tokenmatch import ModelConfig
from tokenmatch.data import DirectoryDataSource
from tokenmatch.synth import desk_train_spec, synth_generate
from tokenmatch.trainer import TrainConfig, meta_train

root = tempfile.mkdtemp(prefix="tokenmatch-train-")
manifest = synth_generate(desk_train_spec(scale=0.1), seed=5, out_root=f"{root}/data")
source = DirectoryDataSource(f"{root}/data", manifest)

model_config = ModelConfig(
    embed_dim=48, depth=3, num_heads=3, patch_size=(8, 8), num_levels=2,
    matching_heads=3, decoder_dim=24, train_resolution=(64, 64), label_depth=2,
)
train_config = TrainConfig(iterations=30, lr=1e-3, warmup=5, checkpoint_every=15,
                           log_every=1)


def losses(run_dir):
    with open(os.path.join(run_dir, "log.jsonl")) as fh:
        return [
            (r["iteration"], round(r["loss"], 6))
            for r in map(json.loads, fh) if "iteration" in r
        ]


path_a = meta_train(model_config, train_config, manifest, source, seed=11,
                    out_dir=f"{root}/run-a")
print("run A:", losses(f"{root}/run-a")[:6], "...")

meta_train(model_config, train_config, manifest, source, seed=11,
           out_dir=f"{root}/run-b")
print("same-seed rerun identical:", losses(f"{root}/run-a") == losses(f"{root}/run-b"))

meta_train(model_config, train_config, manifest, source, seed=11,
           out_dir=f"{root}/run-c", resume=f"{root}/run-a/checkpoint-15")
tail_a = dict(losses(f"{root}/run-a"))
tail_c = dict(losses(f"{root}/run-c"))
print("resumed continuation identical:",
      all(tail_c[i] == tail_a[i] for i in range(15, 30)))
print("final checkpoint:", path_a)
