"""Episodic task sampling.

One batch is drawn in four steps: (1) the task type at a fixed
categorical : continuous : low-level ratio, (2) a source dataset weighted by
its task count (categorical/continuous) or image count (low-level), (3) a
uniform draw of single-channel tasks from the filtered pool, (4) support and
query examples per task.  A uni-modal or bi-modal arm is chosen per batch
with probability proportional to the configured task counts.

Planning is pure metadata (cheap enough for statistical testing in bulk);
materialization loads the planned tensors through a data source.
"""

from dataclasses import dataclass, field

from .errors import SamplerError
from .tasks import TASK_TYPES


@dataclass(frozen=True)
class SamplerConfig:
    type_ratio: tuple = (3, 3, 1)  # categorical : continuous : low_level
    tasks_per_batch: int = 4
    shots: int = 4
    queries: int = 4
    arm_weights: tuple = (246, 84)  # uni-modal : bi-modal
    max_retries: int = 16

    def __post_init__(self):
        object.__setattr__(self, "type_ratio", tuple(self.type_ratio))
        object.__setattr__(self, "arm_weights", tuple(self.arm_weights))


@dataclass(frozen=True)
class BatchPlan:
    arm: str  # "uni" | "bi"
    task_type: str
    dataset_id: str
    task_ids: tuple
    support_indices: tuple  # per task: tuple of example indices
    query_indices: tuple

    @property
    def modality_count(self) -> int:
        return 1 if self.arm == "uni" else 2


def _weighted_choice(rng, items, weights):
    total = float(sum(weights))
    probs = [w / total for w in weights]
    return items[rng.choice(len(items), p=probs)]


def plan_batch(manifest, config: SamplerConfig, rng) -> BatchPlan:
    """Draw one episodic batch plan (metadata only)."""
    arm = _weighted_choice(rng, ["uni", "bi"], config.arm_weights)
    modality = 1 if arm == "uni" else 2
    task_type = _weighted_choice(rng, list(TASK_TYPES), config.type_ratio)

    # The arm's batch draws from the arm's own pool, so dataset weights count
    # only tasks of the chosen (type, modality) combination.
    candidates = []
    weights = []
    for entry in manifest.datasets:
        typed = manifest.task_pool(
            task_type=task_type, modality_count=modality, dataset_id=entry.dataset_id
        )
        if not typed:
            continue
        candidates.append(entry)
        weights.append(
            entry.image_count if task_type == "low_level" else len(typed)
        )
    if not candidates:
        raise SamplerError(f"no dataset offers {arm}-modal {task_type} tasks")

    pool = []
    dataset = None
    for _ in range(config.max_retries):
        dataset = _weighted_choice(rng, candidates, weights)
        pool = manifest.task_pool(
            task_type=task_type, modality_count=modality, dataset_id=dataset.dataset_id
        )
        if pool:
            break
    if not pool:
        raise SamplerError(
            f"no {arm}-modal {task_type} tasks found after {config.max_retries} "
            "dataset draws"
        )

    pool = sorted(pool, key=lambda t: t.task_id)
    n = config.tasks_per_batch
    replace = len(pool) < n
    picks = rng.choice(len(pool), size=n, replace=replace)
    tasks = [pool[i] for i in picks]

    per_task = config.shots + config.queries
    support_indices, query_indices = [], []
    for _ in tasks:
        count = dataset.image_count
        idx = rng.choice(count, size=per_task, replace=count < per_task)
        support_indices.append(tuple(int(i) for i in idx[: config.shots]))
        query_indices.append(tuple(int(i) for i in idx[config.shots :]))

    return BatchPlan(
        arm=arm,
        task_type=task_type,
        dataset_id=dataset.dataset_id,
        task_ids=tuple(t.task_id for t in tasks),
        support_indices=tuple(support_indices),
        query_indices=tuple(query_indices),
    )


def materialize(plan: BatchPlan, manifest, source):
    """Load a plan's episodes; always single-channel tasks, shots+queries pairs."""
    episodes = []
    for task_id, sup, qry in zip(plan.task_ids, plan.support_indices, plan.query_indices):
        task = manifest.task(task_id)
        episodes.append(source.episode(task, sup, qry))
    return episodes


def sample_batch(manifest, config: SamplerConfig, rng, source):
    """Plan and materialize one episodic batch: a list of per-task Episodes."""
    return materialize(plan_batch(manifest, config, rng), manifest, source)
