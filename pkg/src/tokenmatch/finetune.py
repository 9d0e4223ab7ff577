"""Few-shot fine-tuning of task-specific parameters.

Fine-tuning optimizes exactly the task-specific set against the task loss on
inner episodes resampled from the support set: per-channel bias vectors, the
group's re-weighting logits and decoder head, and (for multi-modal tasks
only) a per-task clone of the position bias tables.  Shared weights stay
frozen; the optimizer never sees them.

A multi-channel annotation fine-tunes all of its channel tasks jointly: one
loss summed over channels, one re-weighting matrix and one head shared by the
group, separate biases per channel.
"""

import copy
from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigError, InputError, ResolutionMismatchError, TrainStepError
from .losses import loss_for_kind
from .registry import PositionBiasTables, TaskParams
from .seeding import derive_seed, numpy_rng


@dataclass(frozen=True)
class FinetuneConfig:
    steps: int = 200
    lr: float = 5e-3
    weight_decay: float = 0.0
    inner_shots: int = None  # default min(N - 1, 4)
    inner_queries: int = 4
    augment_crop: bool = True
    augment_flip: bool = False
    crop_scale: tuple = (0.75, 1.0)
    standardize_continuous: bool = True


@dataclass
class ChannelState:
    task: object
    params: TaskParams
    label_stats: tuple = None  # (mean, std) for continuous de-standardization


@dataclass
class FinetunedTask:
    channels: list

    def clone(self) -> "FinetunedTask":
        return copy.deepcopy(self)


def _check_group(tasks):
    if not tasks:
        raise InputError("no tasks to fine-tune")
    gid = tasks[0].group_id
    modality = tasks[0].modality_count
    for t in tasks:
        if t.group_id != gid or t.modality_count != modality:
            raise ConfigError("fine-tuned channels must share group and modality count")
    return sorted(tasks, key=lambda t: t.channel_index)


def init_task_params(model, tasks, seed: int, meta_registry=None,
                     source_group: str = None) -> FinetunedTask:
    """Fresh task parameters at the meta-trained operating point.

    Bias offsets start at zero, so the effective biases equal the shared
    encoder's current (meta-trained) values; re-weighting logits start
    uniform; position tables start from the shared meta-trained tables (cloned
    per task when the task is multi-modal, so they can be tuned); the head is
    cloned from ``source_group`` when given, else freshly initialized.
    """
    tasks = _check_group(tasks)
    modality = tasks[0].modality_count
    cfg = model.config
    grid = cfg.grid(tasks[0].resolution)

    lam = nn.Parameter(torch.zeros(cfg.num_levels, cfg.num_levels))
    if meta_registry is not None and source_group is not None:
        _, src_head = meta_registry._group_params(source_group)
        head = nn.Conv2d(cfg.decoder_dim, 1, 1)
        with torch.no_grad():
            head.weight.copy_(src_head.weight)
            head.bias.copy_(src_head.bias)
    else:
        head = model.new_head(seed=(seed, "finetune-head", tasks[0].group_id))

    if meta_registry is not None:
        shared_tables = meta_registry.shared_pos_tables(modality)
        if shared_tables.grid != grid:
            raise ResolutionMismatchError(
                f"shared position tables are on grid {shared_tables.grid}, task "
                f"needs {grid}; run adapt_resolution first"
            )
    else:
        shared_tables = PositionBiasTables(modality, grid, cfg.depth)

    channels = []
    for task in tasks:
        biases = [
            {name: nn.Parameter(value) for name, value in block.items()}
            for block in model.image_encoder.zero_bias_offsets()
        ]
        if modality > 1:
            pos = shared_tables.clone()
            owns = True
        else:
            pos = shared_tables
            owns = False
        channels.append(
            ChannelState(
                task=task,
                params=TaskParams(
                    task=task,
                    biases=biases,
                    pos_bias=pos,
                    lambda_logits=lam,
                    head=head,
                    owns_pos_bias=owns,
                ),
            )
        )
    return FinetunedTask(channels=channels)


def trainable_parameters(state: FinetunedTask):
    seen, params = set(), []
    for ch in state.channels:
        include_pos = ch.params.owns_pos_bias
        for p in ch.params.trainable_parameters(include_pos_bias=include_pos):
            if id(p) not in seen:
                seen.add(id(p))
                params.append(p)
    return params


def parameter_budget(model, state: FinetunedTask) -> float:
    """|trainable| / |total| for one fine-tuned task."""
    tuned = sum(p.numel() for p in trainable_parameters(state))
    total = sum(p.numel() for p in model.parameters()) + tuned
    return tuned / total


def _standardize_stats(labels, eps=1e-6):
    mean = float(labels.mean())
    std = float(labels.std()) + eps
    return mean, std


def standardize(y, stats):
    mean, std = stats
    return ((y - mean) / (3.0 * std) + 0.5).clamp(0.0, 1.0)


def destandardize(y, stats):
    mean, std = stats
    return (y - 0.5) * 3.0 * std + mean


def random_crop_resize(image, label, rng, scale_range, nearest_label: bool):
    """Consistent random crop of an (image, label) pair, resized back."""
    import torch.nn.functional as F

    H, W = image.shape[-2:]
    scale = rng.uniform(*scale_range)
    ch, cw = max(8, int(round(H * scale))), max(8, int(round(W * scale)))
    y0 = int(rng.integers(0, H - ch + 1))
    x0 = int(rng.integers(0, W - cw + 1))
    img = image[..., y0 : y0 + ch, x0 : x0 + cw]
    lab = label[..., y0 : y0 + ch, x0 : x0 + cw]
    img = F.interpolate(
        img.reshape(-1, 1, ch, cw), size=(H, W), mode="bilinear", align_corners=False
    ).reshape(image.shape)
    mode = "nearest" if nearest_label else "bilinear"
    kwargs = {} if nearest_label else {"align_corners": False}
    lab = F.interpolate(
        lab.reshape(-1, 1, ch, cw), size=(H, W), mode=mode, **kwargs
    ).reshape(label.shape)
    return img, lab


def _augment_pair(image, label, task, rng, config):
    # TODO: mixed-loss groups (e.g. binary foreground + regression flow
    # channels) should resample each label channel with its own mode.
    if not config.augment_crop and not config.augment_flip:
        return image, label
    nearest = task.loss_kind == "bce"
    out_img, out_lab = image, label
    if config.augment_crop:
        needs_mass = task.loss_kind == "spatial_softmax"
        for _ in range(8):
            img, lab = random_crop_resize(out_img, out_lab, rng, config.crop_scale, nearest)
            if not needs_mass or float(lab.sum()) > 0:
                out_img, out_lab = img, lab
                break
    if config.augment_flip:
        if rng.random() < 0.5:
            out_img = torch.flip(out_img, [-1])
            out_lab = torch.flip(out_lab, [-1])
        if rng.random() < 0.5:
            out_img = torch.flip(out_img, [-2])
            out_lab = torch.flip(out_lab, [-2])
    return out_img, out_lab


def finetune(model, tasks, support, config: FinetuneConfig, seed: int,
             meta_registry=None, source_group: str = None):
    """Fine-tune a task group's parameters on a support set.

    support: list of (image [I, 3, H, W], label [C, H, W]) with one label
    channel per task in the group.
    Returns (initial, tuned, loss_history): ``initial`` is the pre-optimization
    snapshot (the zero-shot operating point), ``tuned`` the optimized state.
    """
    tasks = _check_group(tasks)
    if len(support) < 1:
        raise InputError("fine-tuning needs at least one support pair")
    C = support[0][1].shape[0]
    if C != len(tasks):
        raise ConfigError(f"{C} label channels for {len(tasks)} channel tasks")

    state = init_task_params(model, tasks, seed, meta_registry, source_group)
    for ch in state.channels:
        if config.standardize_continuous and ch.task.task_type == "continuous":
            labels = torch.stack([lab[ch.task.channel_index] for _, lab in support])
            ch.label_stats = _standardize_stats(labels)
    initial = state.clone()

    frozen = [p.requires_grad for p in model.parameters()]
    for p in model.parameters():
        p.requires_grad_(False)
    optimizer = torch.optim.AdamW(
        trainable_parameters(state), lr=config.lr, weight_decay=config.weight_decay
    )

    N = len(support)
    inner_shots = config.inner_shots
    if inner_shots is None:
        inner_shots = min(max(N - 1, 1), 4)
    inner_shots = min(inner_shots, N)

    history = []
    try:
        for step in range(config.steps):
            rng = numpy_rng(seed, "finetune", step)
            order = rng.permutation(N)
            sup_idx = order[:inner_shots]
            rest = order[inner_shots:]
            if len(rest) == 0:
                qry_idx = order[:1]
            else:
                qry_idx = rest[: config.inner_queries]

            # Each occurrence augments independently, so a 1-shot task still
            # sees a query that differs from its support.
            sup_pairs = [
                _augment_pair(support[int(i)][0], support[int(i)][1], tasks[0], rng, config)
                for i in sup_idx
            ]
            qry_pairs = [
                _augment_pair(support[int(i)][0], support[int(i)][1], tasks[0], rng, config)
                for i in qry_idx
            ]

            losses = []
            for ch in state.channels:
                c = ch.task.channel_index
                sup = [(x, y[c : c + 1]) for x, y in sup_pairs]
                qimgs = torch.stack([x for x, _ in qry_pairs])
                qlabs = torch.stack([y[c : c + 1] for _, y in qry_pairs])
                if ch.label_stats is not None:
                    sup = [(x, standardize(y, ch.label_stats)) for x, y in sup]
                    qlabs = standardize(qlabs, ch.label_stats)
                preds = model.predict(qimgs, sup, ch.params)
                losses.append(loss_for_kind(ch.task.loss_kind)(preds, qlabs))
            total = torch.stack(losses).mean()
            if not torch.isfinite(total):
                raise TrainStepError(
                    f"non-finite fine-tune loss at step {step} "
                    f"({[float(l) for l in losses]})"
                )
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            optimizer.step()
            history.append(float(total.detach()))
    finally:
        for p, flag in zip(model.parameters(), frozen):
            p.requires_grad_(flag)
    return initial, state, history
