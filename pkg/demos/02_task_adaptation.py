"""The task-specific parameter set and its sharing rules.

Three knobs adapt the shared model to a task: per-layer bias vectors in the
image encoder (one set per task), relative position bias tables (shared per
modality count, cloned for multi-modal fine-tuning), and a row-stochastic
matrix mixing the feature levels (shared within a task group, like channels
of one multi-channel annotation).  The decoder contributes a fourth: a 1x1
output head per group.
"""

import torch

from tokenmatch import (
    DatasetEntry,
    DatasetManifest,
    FewShotDenseModel,
    ModelConfig,
    Registry,
    TaskDescriptor,
)
from tokenmatch.finetune import init_task_params, parameter_budget, trainable_parameters
from tokenmatch.resolution import adapt_resolution

torch.manual_seed(0)
config = ModelConfig()  # desk defaults: 64x64, patch 8, 6 blocks at width 192

tasks = tuple(
    TaskDescriptor(f"normals-{c}", "normals", "demo-ds", "continuous", 1, c, "l1", (64, 64))
    for c in range(3)
) + (
    TaskDescriptor("stereo-depth", "stereo", "demo-ds", "continuous", 2, 0, "l1", (64, 64)),
)
manifest = DatasetManifest([DatasetEntry("demo-ds", 16, (64, 64), tasks)])
model = FewShotDenseModel(config)
registry = Registry(manifest, model, seed=0)

n0 = registry.get_or_create_params("normals-0")
n1 = registry.get_or_create_params("normals-1")
st = registry.get_or_create_params("stereo-depth")

print("sharing pattern:")
print(f"  channels of one annotation share the mixing matrix: {n0.lambda_logits is n1.lambda_logits}")
print(f"  ... and the decoder head: {n0.head is n1.head}")
print(f"  but never their bias vectors: {n0.biases[0]['qkv'] is n1.biases[0]['qkv']}")
print(f"  position tables are shared per modality count: "
      f"{n0.pos_bias is registry.shared_pos_tables(1)}")
print(f"  a bi-modal task uses {st.pos_bias.tables[0].shape[0]} modality-pair slices")

lam = n0.lambda_matrix()
print(f"fresh mixing matrix rows (uniform): {lam[0].tolist()}")

state = init_task_params(model, [manifest.task("stereo-depth")], seed=0,
                         meta_registry=registry)
tuned = sum(p.numel() for p in trainable_parameters(state))
total = sum(p.numel() for p in model.parameters())
print(f"fine-tuning budget: {tuned:,} of {total + tuned:,} parameters "
      f"({100 * parameter_budget(model, state):.2f}%)")

# Moving to a new resolution only resizes positional state.
bigger_model, bigger_params = adapt_resolution(model, n0, (128, 128))
old = n0.pos_bias.tables[0]
new = bigger_params.pos_bias.tables[0]
print(f"resolution 64 -> 128: table {tuple(old.shape)} -> {tuple(new.shape)}, "
      f"zero-offset entry preserved: "
      f"{bool(torch.equal(new[:, 15, 15], old[:, 7, 7]))}")
