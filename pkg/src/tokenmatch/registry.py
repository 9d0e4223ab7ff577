"""Task-specific parameters and their sharing rules.

Sharing policy:
  - bias vectors b: one set per task, never aliased;
  - feature re-weighting logits and the decoder head: one per task group
    (the disassembled channels of a multi-channel annotation);
  - relative position bias tables: shared globally per modality count during
    meta-training, cloned per task at fine-tuning when the task is
    multi-modal.
"""

from dataclasses import dataclass, field

import torch
from torch import nn

from .encoder import bias_names_for_mode
from .errors import RegistrationError, ShapeError
from .matching import normalize_lambda
from .tasks import TaskDescriptor


class PositionBiasTables:
    """Per-attention-layer [I*I, 2*grid_h-1, 2*grid_w-1] bias tables."""

    def __init__(self, modalities: int, grid, depth: int, tables=None):
        self.modalities = modalities
        self.grid = tuple(grid)
        gh, gw = self.grid
        if tables is None:
            tables = [
                torch.zeros(modalities * modalities, 2 * gh - 1, 2 * gw - 1)
                for _ in range(depth)
            ]
        self.tables = [
            t if isinstance(t, nn.Parameter) else nn.Parameter(t) for t in tables
        ]
        for t in self.tables:
            if t.shape != (modalities * modalities, 2 * gh - 1, 2 * gw - 1):
                raise ShapeError(f"bad position table shape {tuple(t.shape)}")

    def clone(self) -> "PositionBiasTables":
        return PositionBiasTables(
            self.modalities,
            self.grid,
            len(self.tables),
            [t.detach().clone() for t in self.tables],
        )

    def parameters(self):
        return list(self.tables)


@dataclass
class TaskParams:
    """Handle on one task's tunable parameters.

    ``biases`` are per-block offsets on the shared encoder biases (zero
    offset = the shared operating point).  ``lambda_logits`` and ``head`` may
    be aliased across a group; ``pos_bias`` is aliased globally unless
    ``owns_pos_bias`` is set.
    """

    task: TaskDescriptor
    biases: list  # per encoder block: {bias_name: nn.Parameter offset}
    pos_bias: PositionBiasTables
    lambda_logits: nn.Parameter
    head: nn.Conv2d
    owns_pos_bias: bool = False

    def lambda_matrix(self) -> torch.Tensor:
        return normalize_lambda(self.lambda_logits)

    def bias_parameters(self):
        return [p for block in self.biases for p in block.values()]

    def trainable_parameters(self, include_pos_bias: bool):
        params = self.bias_parameters()
        params.append(self.lambda_logits)
        params.extend(self.head.parameters())
        if include_pos_bias:
            params.extend(self.pos_bias.parameters())
        seen, unique = set(), []
        for p in params:
            if id(p) not in seen:
                seen.add(id(p))
                unique.append(p)
        return unique


class Registry:
    """Creates and stores TaskParams under the sharing policy.

    Creation order is deterministic given the manifest and seed, so two runs
    from the same seed materialize identical parameters.  Mutation is
    single-writer (creation happens before training); handles passed to
    inference are treated as immutable snapshots and are safe to read from
    parallel workers.
    """

    def __init__(self, manifest, model, seed: int = 0):
        self.manifest = manifest
        self.model = model
        self.seed = seed
        self._tasks = {}
        self._groups = {}  # group_id -> (lambda_logits, head)
        self._pos = {}  # modality count -> PositionBiasTables
        self._head_counter = 0

    # -- shared pieces -------------------------------------------------------

    def shared_pos_tables(self, modalities: int) -> PositionBiasTables:
        if modalities not in self._pos:
            self._pos[modalities] = PositionBiasTables(
                modalities, self.model.config.grid(), self.model.config.depth
            )
        return self._pos[modalities]

    def _group_params(self, group_id: str):
        if group_id not in self._groups:
            L = self.model.config.num_levels
            lam = nn.Parameter(torch.zeros(L, L))
            head = self.model.new_head(seed=(self.seed, "head", group_id))
            self._groups[group_id] = (lam, head)
        return self._groups[group_id]

    # -- the main entry point --------------------------------------------------

    def get_or_create_params(self, task) -> TaskParams:
        if isinstance(task, str):
            task = self.manifest.task(task)
        if not self.manifest.has_task(task.task_id):
            raise RegistrationError(f"task {task.task_id!r} not in manifest")
        registered = self.manifest.task(task.task_id)
        if registered != task:
            raise RegistrationError(
                f"task {task.task_id!r} disagrees with its manifest entry"
            )
        self.manifest.dataset(task.dataset_id)  # raises on unknown dataset
        self.manifest.group(task.group_id)  # raises on unknown group
        if task.task_id in self._tasks:
            return self._tasks[task.task_id]
        # Zero offsets: the task's effective biases start exactly at the
        # shared encoder's current values.
        biases = [
            {name: nn.Parameter(value) for name, value in block.items()}
            for block in self.model.image_encoder.zero_bias_offsets()
        ]
        lam, head = self._group_params(task.group_id)
        params = TaskParams(
            task=task,
            biases=biases,
            pos_bias=self.shared_pos_tables(task.modality_count),
            lambda_logits=lam,
            head=head,
        )
        self._tasks[task.task_id] = params
        return params

    # -- views ---------------------------------------------------------------

    @property
    def task_ids(self):
        return list(self._tasks)

    def params_for(self, task_id: str) -> TaskParams:
        if task_id not in self._tasks:
            raise RegistrationError(f"no parameters created for task {task_id!r}")
        return self._tasks[task_id]

    def create_all(self):
        for task in self.manifest.tasks:
            self.get_or_create_params(task)
        return self

    def all_parameters(self):
        """Unique parameters across all tasks (shared pieces listed once)."""
        seen, unique = set(), []
        for params in self._tasks.values():
            for p in params.trainable_parameters(include_pos_bias=True):
                if id(p) not in seen:
                    seen.add(id(p))
                    unique.append(p)
        return unique

    def named_tensors(self):
        """Canonical name -> tensor mapping used by checkpointing.

        Group- and globally-shared tensors are stored once under their own
        namespace; per-task containers carry only task-owned tensors.
        """
        names = {}
        for gid, (lam, head) in sorted(self._groups.items()):
            names[f"group/{gid}/lambda_logits"] = lam
            names[f"group/{gid}/head.weight"] = head.weight
            names[f"group/{gid}/head.bias"] = head.bias
        for count, tables in sorted(self._pos.items()):
            for i, t in enumerate(tables.tables):
                names[f"posbias/{count}/layer{i}"] = t
        for tid, params in sorted(self._tasks.items()):
            for i, block in enumerate(params.biases):
                for bias_name, p in block.items():
                    names[f"task/{tid}/bias/{i}/{bias_name}"] = p
            if params.owns_pos_bias:
                for i, t in enumerate(params.pos_bias.tables):
                    names[f"task/{tid}/posbias/layer{i}"] = t
        return names
