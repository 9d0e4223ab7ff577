"""Few-shot fine-tuning on an unseen task family.

Meta-trains a small model briefly, then adapts it to a held-out shape class
with ten labeled examples.  Only the task-specific parameters move: the
per-channel bias vectors, the level-mixing logits and the output head (plus
cloned position tables for multi-modal tasks).  The zero-shot operating point
(before any fine-tune step) serves as the baseline.
"""

import tempfile

import numpy as np
import torch

from tokenmatch import ModelConfig
from tokenmatch.checkpoint import load_checkpoint
from tokenmatch.data import DirectoryDataSource
from tokenmatch.finetune import FinetuneConfig, finetune
from tokenmatch.inference import FewShotPredictor
from tokenmatch.metrics import evaluate
from tokenmatch.synth import desk_holdout_spec, desk_train_spec, synth_generate
from tokenmatch.trainer import TrainConfig, meta_train

root = tempfile.mkdtemp(prefix="tokenmatch-ft-")
train_manifest = synth_generate(desk_train_spec(scale=0.2), 3, f"{root}/train")
holdout_manifest = synth_generate(desk_holdout_spec(scale=0.3), 4, f"{root}/holdout")

model_config = ModelConfig(
    embed_dim=64, depth=4, num_heads=4, patch_size=(8, 8), num_levels=2,
    matching_heads=4, decoder_dim=32, train_resolution=(64, 64), label_depth=3,
)
print("meta-training a small model (200 iterations)...")
ckpt = meta_train(
    model_config, TrainConfig(iterations=200, lr=1e-3, warmup=20, log_every=50),
    train_manifest, DirectoryDataSource(f"{root}/train", train_manifest),
    seed=1, out_dir=f"{root}/run",
)
model, registry, _, _ = load_checkpoint(ckpt)

holdout = DirectoryDataSource(f"{root}/holdout", holdout_manifest)
group = holdout_manifest.group("ring-seg/seg")
tasks = [holdout_manifest.task(t) for t in group.member_task_ids]
shots = 10
support = []
for i in range(shots):
    image, label = holdout.load_pair(tasks[0], i)
    support.append((image, label))

initial, tuned, history = finetune(
    model, tasks, support, FinetuneConfig(steps=120, lr=5e-3), seed=2,
    meta_registry=registry, source_group="shapes-rgb/seg",
)
print(f"fine-tune loss {history[0]:.4f} -> {history[-1]:.4f}")


def mean_iou(state):
    predictor = FewShotPredictor(model, state, support)
    scores = []
    count = holdout_manifest.dataset("ring-seg").image_count
    for i in range(shots, count):
        image, gt = holdout.load_pair(tasks[0], i)
        with torch.no_grad():
            pred = predictor.predict(image)
        scores.append(evaluate(pred[0] > 0, gt[0] > 0.5, "iou"))
    return float(np.mean(scores))


zero_shot = mean_iou(initial)
adapted = mean_iou(tuned)
print(f"held-out IoU on the unseen shape class: zero-shot {zero_shot:.3f} -> "
      f"fine-tuned {adapted:.3f}")
print("(the acceptance suite runs this at full desk scale with IoU >= 0.80)")
