"""Command-line interface.

Subcommands: meta-train, finetune, predict, eval, inspect, synth.  Every
subcommand accepts --config, --seed, --checkpoint and --out; success exits 0,
any domain failure exits 1 with a single machine-parsable line on stderr.
"""

import argparse
import json
import os
import sys

import numpy as np
import torch

from . import runconfig, tsr
from .checkpoint import load_checkpoint
from .config import ModelConfig
from .data import DirectoryDataSource
from .errors import ConfigError, InputError, TokenMatchError
from .finetune import FinetuneConfig, finetune
from .inference import FewShotPredictor
from .inspect_tools import inspect_attention, inspect_lambda
from .metrics import evaluate, report_record
from .sampler import SamplerConfig
from .adapters.counting import count_from_density
from .synth import desk_holdout_spec, desk_train_spec, synth_generate
from .taskstate import load_finetuned, save_finetuned
from .tasks import DatasetManifest, Episode
from .trainer import TrainConfig, meta_train


def _model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(
        embed_dim=cfg["embed_dim"],
        depth=cfg["depth"],
        num_heads=cfg["num_heads"],
        patch_size=(cfg["patch"], cfg["patch"]),
        num_levels=cfg["num_levels"],
        matching_heads=cfg["matching_heads"],
        decoder_dim=cfg["decoder_dim"],
        label_depth=cfg["label_depth"],
        train_resolution=(cfg["resolution"], cfg["resolution"]),
        bias_tuning=cfg["bias_tuning"],
    )


def _require(args, *names):
    for name in names:
        if getattr(args, name.replace("-", "_"), None) is None:
            raise ConfigError(f"--{name} is required for this command")


def _group_support(manifest, source, group_id, indices):
    group = manifest.group(group_id)
    tasks = [manifest.task(tid) for tid in group.member_task_ids]
    tasks = sorted(tasks, key=lambda t: t.channel_index)
    support = []
    for i in indices:
        image = None
        labels = []
        for task in tasks:
            img, lab = source.load_pair(task, i)
            image = img if image is None else image
            labels.append(lab[0])
        support.append((image, torch.stack(labels)))
    return tasks, support


def cmd_synth(args):
    cfg = runconfig.load(args.config, runconfig.SYNTH_SCHEMA, "synth")
    _require(args, "out")
    spec = (
        desk_train_spec(cfg["scale"])
        if cfg["preset"] == "desk-train"
        else desk_holdout_spec(cfg["scale"])
    )
    manifest = synth_generate(spec, args.seed, args.out)
    print(f"synth: wrote {len(manifest.tasks)} tasks to {args.out}")
    return 0


def cmd_meta_train(args):
    cfg = runconfig.load(args.config, runconfig.META_TRAIN_SCHEMA, "meta-train")
    _require(args, "out")
    torch.set_num_threads(max(1, torch.get_num_threads()))
    manifest = DatasetManifest.load(os.path.join(cfg["data_root"], "manifest.json"))
    source = DirectoryDataSource(cfg["data_root"], manifest)
    model_config = _model_config(cfg)
    train_config = TrainConfig(
        iterations=cfg["iterations"],
        lr=cfg["lr"],
        task_lr_scale=cfg["task_lr_scale"],
        weight_decay=cfg["weight_decay"],
        warmup=cfg["warmup"],
        groups_per_step=cfg["groups_per_step"],
        checkpoint_every=cfg["checkpoint_every"],
        log_every=cfg["log_every"],
        sampler=SamplerConfig(
            shots=cfg["shots"], queries=cfg["queries"],
            tasks_per_batch=cfg["tasks_per_batch"],
        ),
    )
    path = meta_train(
        model_config, train_config, manifest, source, args.seed, args.out,
        resume=args.checkpoint,
    )
    print(f"meta-train: config {runconfig.config_hash(cfg)[:12]} -> {path}")
    return 0


def cmd_finetune(args):
    cfg = runconfig.load(args.config, runconfig.FINETUNE_SCHEMA, "finetune")
    _require(args, "checkpoint", "out")
    model, registry, _, _ = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.load(os.path.join(cfg["data_root"], "manifest.json"))
    source = DirectoryDataSource(cfg["data_root"], manifest)
    tasks, support = _group_support(
        manifest, source, cfg["group_id"], range(cfg["shots"])
    )
    ft_config = FinetuneConfig(
        steps=cfg["steps"],
        lr=cfg["lr"],
        augment_crop=cfg["augment_crop"],
        augment_flip=cfg["augment_flip"],
        standardize_continuous=cfg["standardize_continuous"],
    )
    source_group = cfg["source_group"] or None
    _, tuned, history = finetune(
        model, tasks, support, ft_config, args.seed,
        meta_registry=registry, source_group=source_group,
    )
    save_finetuned(tuned, args.out)
    print(
        f"finetune: group {cfg['group_id']} loss {history[0]:.4f} -> "
        f"{history[-1]:.4f} saved {args.out}"
    )
    return 0


def cmd_predict(args):
    cfg = runconfig.load(args.config, runconfig.PREDICT_SCHEMA, "predict")
    _require(args, "checkpoint", "out")
    model, _, _, _ = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.load(os.path.join(cfg["data_root"], "manifest.json"))
    source = DirectoryDataSource(cfg["data_root"], manifest)
    state = load_finetuned(model, cfg["task_params"])
    tasks, support = _group_support(
        manifest, source, cfg["group_id"], range(cfg["shots"])
    )
    predictor = FewShotPredictor(model, state, support)
    dataset = manifest.dataset(tasks[0].dataset_id)
    indices = cfg["indices"]
    if indices is None:
        indices = list(range(cfg["shots"], dataset.image_count))
    os.makedirs(args.out, exist_ok=True)
    for i in indices:
        image, _ = source.load_pair(tasks[0], int(i))
        pred = predictor.predict(image)
        tsr.write_tensor(
            os.path.join(args.out, f"pred-{int(i)}.tsr"),
            pred.numpy().astype(np.float32),
        )
    print(f"predict: wrote {len(indices)} predictions to {args.out}")
    return 0


def _load_maps(path):
    if os.path.isdir(path):
        names = sorted(f for f in os.listdir(path) if f.endswith(".tsr"))
        return [tsr.read_tensor(os.path.join(path, f)) for f in names]
    return [tsr.read_tensor(path)]


def cmd_eval(args):
    cfg = runconfig.load(args.config, runconfig.EVAL_SCHEMA, "eval")
    preds = _load_maps(cfg["pred"])
    gts = _load_maps(cfg["gt"])
    if len(preds) != len(gts):
        raise InputError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    metric = cfg["metric"]
    values = []
    for pred, gt in zip(preds, gts):
        if metric in ("iou", "f1", "region_J", "boundary_F"):
            values.append(
                evaluate(pred > cfg["threshold"], gt > 0.5, metric)
            )
        elif metric == "ap50_instances":
            values.append(evaluate(pred.astype(np.int64), gt.astype(np.int64), metric))
        elif metric == "mae_count":
            pc = count_from_density(pred)
            gc = int(round(float(gt.sum())))
            values.append(evaluate([pc], [gc], metric))
        else:
            raise ConfigError(f"metric {metric!r} needs the Python API")
    value = float(np.mean(values))
    print(f"metric={metric} value={value:.6f} n={len(values)}")
    if args.out:
        with open(args.out, "a") as fh:
            fh.write(
                report_record(cfg["task_id"], metric, value, cfg["support_size"],
                              args.seed) + "\n"
            )
    return 0


def cmd_inspect(args):
    cfg = runconfig.load(args.config, runconfig.INSPECT_SCHEMA, "inspect")
    _require(args, "checkpoint", "out")
    model, registry, _, _ = load_checkpoint(args.checkpoint)
    report = inspect_lambda(registry, args.out)
    if cfg["task_id"]:
        manifest = DatasetManifest.load(os.path.join(cfg["data_root"], "manifest.json"))
        source = DirectoryDataSource(cfg["data_root"], manifest)
        task = manifest.task(cfg["task_id"])
        params = registry.get_or_create_params(task)
        shots = cfg["shots"]
        episode = source.episode(
            task, range(shots), [shots + cfg["query_index"]]
        )
        inspect_attention(
            model, params, episode, 0, cfg["query_token"], args.out
        )
    print(f"inspect: wrote reports for {len(report)} groups to {args.out}")
    return 0


HANDLERS = {
    "meta-train": cmd_meta_train,
    "finetune": cmd_finetune,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokenmatch",
        description="Few-shot dense prediction by hierarchical token matching",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in HANDLERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except TokenMatchError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
