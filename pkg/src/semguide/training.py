"""Loss, learning-rate schedule, the epoch loop and checkpoint I/O."""
from __future__ import annotations

import contextlib
import copy
import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn

from . import tenarch

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    initial_lr: float = 1e-5
    plateau_patience: int = 4
    plateau_factor: float = 0.1
    plateau_tol: float = 1e-4
    max_epochs: int = 40
    batch_size: int = 32
    seed: int = 0
    min_lr: float = 0.0
    val_fraction: float = 0.1
    grad_clip: float | None = None

    def __post_init__(self):
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.initial_lr < 0:
            raise ValueError("initial_lr must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class LRSchedulerState:
    best_loss: float = math.inf
    epochs_since_improvement: int = 0
    current_lr: float = 1e-5

    @classmethod
    def initial(cls, config: TrainConfig) -> "LRSchedulerState":
        return cls(math.inf, 0, config.initial_lr)


def plateau_step(state: LRSchedulerState, epoch_loss: float, config: TrainConfig) -> LRSchedulerState:
    """Reduce-on-plateau with an absolute tolerance; the counter must exceed patience."""
    if epoch_loss < state.best_loss - config.plateau_tol:
        return LRSchedulerState(epoch_loss, 0, state.current_lr)
    count = state.epochs_since_improvement + 1
    lr = state.current_lr
    if count > config.plateau_patience:
        lr = max(lr * config.plateau_factor, config.min_lr)
        count = 0
    return LRSchedulerState(state.best_loss, count, lr)


def sigmoid_cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean over all B*C entries of the binary log-loss, in the overflow-free form

    ``max(x, 0) - x*y + log(1 + exp(-|x|))``.
    """
    if logits.shape != targets.shape:
        raise ValueError(f"logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    targets = targets.to(logits.dtype)
    loss = logits.clamp(min=0) - logits * targets + torch.log1p(torch.exp(-logits.abs()))
    return loss.mean()


@contextlib.contextmanager
def seeded(seed: int):
    """Run a block under a fixed torch seed without disturbing the global RNG."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        yield


class TensorData(NamedTuple):
    inputs: tuple[torch.Tensor, ...]
    targets: torch.Tensor

    def __len__(self):
        return len(self.targets)

    def take(self, idx) -> "TensorData":
        return TensorData(tuple(t[idx] for t in self.inputs), self.targets[idx])


@dataclass
class FitResult:
    history: list[dict]
    best_state: dict
    best_epoch: int
    best_val_loss: float
    final_state: dict
    scheduler: LRSchedulerState


def _batches(n: int, batch_size: int, gen: torch.Generator) -> list[torch.Tensor]:
    order = torch.randperm(n, generator=gen)
    chunks = list(torch.split(order, batch_size))
    # a trailing singleton breaks batch norm in train mode
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = torch.cat([chunks[-2], chunks.pop()])
    return chunks


def split_validation(data: TensorData, fraction: float, seed: int) -> tuple[TensorData, TensorData]:
    n = len(data)
    n_val = int(round(n * fraction))
    if fraction <= 0 or n_val < 1 or n - n_val < 2:
        return data, data
    perm = torch.from_numpy(np.random.default_rng([int(seed), 0xA11]).permutation(n))
    return data.take(perm[n_val:]), data.take(perm[:n_val])


@torch.no_grad()
def evaluate_loss(model: nn.Module, data: TensorData, batch_size: int = 128) -> float:
    model.eval()
    total = 0.0
    for i in range(0, len(data), batch_size):
        sl = slice(i, i + batch_size)
        logits = model(*(t[sl] for t in data.inputs))
        total += sigmoid_cross_entropy(logits, data.targets[sl]).item() * len(data.targets[sl])
    return total / len(data)


@torch.no_grad()
def predict_logits(model: nn.Module, inputs: tuple[torch.Tensor, ...], batch_size: int = 128) -> torch.Tensor:
    model.eval()
    n = len(inputs[0])
    return torch.cat([model(*(t[i : i + batch_size] for t in inputs)) for i in range(0, n, batch_size)])


def _snapshot(model: nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def fit(
    model: nn.Module,
    data: TensorData,
    config: TrainConfig,
    val_data: TensorData | None = None,
    resume: "CheckpointRecord | None" = None,
) -> FitResult:
    """Adam on sigmoid cross-entropy, plateau schedule on validation loss.

    Without ``val_data`` a ``config.val_fraction`` slice of ``data`` is held out
    (or, if that is too small, the training data itself is monitored).
    """
    if len(data) == 0:
        raise ValueError("empty training data")
    if val_data is None:
        data, val_data = split_validation(data, config.val_fraction, config.seed)

    history: list[dict] = []
    sched = LRSchedulerState.initial(config)
    start = 0
    if resume is not None:
        model.load_state_dict(state_from_numpy(resume.parameters))
        history = [dict(h) for h in resume.history]
        start = resume.epoch
        if resume.scheduler:
            sched = LRSchedulerState(**resume.scheduler)

    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=sched.current_lr, betas=(0.9, 0.999), eps=1e-8)
    gen = torch.Generator().manual_seed(int(config.seed) * 7919 + start)

    best_state = _snapshot(model)
    best_val = min((h["val_loss"] for h in history), default=math.inf)
    best_epoch = start if not history else min(history, key=lambda h: h["val_loss"])["epoch"]

    for epoch in range(start + 1, start + config.max_epochs + 1):
        model.train()
        running, seen = 0.0, 0
        for b, idx in enumerate(_batches(len(data), config.batch_size, gen)):
            batch = data.take(idx)
            logits = model(*batch.inputs)
            loss = sigmoid_cross_entropy(logits, batch.targets)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss {loss.item()} at epoch {epoch}, batch {b}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if config.grad_clip:
                nn.utils.clip_grad_norm_(params, config.grad_clip)
            optimizer.step()
            running += loss.item() * len(idx)
            seen += len(idx)
        val_loss = evaluate_loss(model, val_data)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": running / seen, "val_loss": val_loss, "lr": sched.current_lr})
        log.info("epoch %d train %.4f val %.4f lr %.2e", epoch, running / seen, val_loss, sched.current_lr)
        if val_loss < best_val:
            best_val, best_epoch, best_state = val_loss, epoch, _snapshot(model)
        sched = plateau_step(sched, val_loss, config)
        for group in optimizer.param_groups:
            group["lr"] = sched.current_lr

    return FitResult(history, best_state, best_epoch, best_val, _snapshot(model), sched)


def write_history_csv(history: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "lr"])
        w.writeheader()
        for h in history:
            w.writerow({k: repr(h[k]) if isinstance(h[k], float) else h[k] for k in w.fieldnames})


# -- checkpoints ----------------------------------------------------------------

@dataclass
class CheckpointRecord:
    parameters: dict[str, np.ndarray]
    config: dict
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    scheduler: dict | None = None


def state_to_numpy(state: dict) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in state.items()}


def state_from_numpy(arrays: dict[str, np.ndarray]) -> dict[str, torch.Tensor]:
    return {k: torch.from_numpy(np.array(v)) for k, v in arrays.items()}


def save_checkpoint(path: str | Path, record: CheckpointRecord) -> None:
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": record.config,
        "epoch": record.epoch,
        "history": record.history,
        "scheduler": record.scheduler,
    }
    arrays = {f"param/{k}": v for k, v in record.parameters.items()}
    arrays["__meta__"] = tenarch.pack_json(meta)
    tenarch.save(path, arrays)


def load_checkpoint(path: str | Path, num_classes: int | None = None) -> CheckpointRecord:
    arrays = tenarch.load(path)
    if "__meta__" not in arrays:
        raise tenarch.ArchiveFormatError(f"{path} has no checkpoint metadata record")
    meta = tenarch.unpack_json(arrays.pop("__meta__"))
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointConfigError(f"unsupported checkpoint version {meta.get('format_version')}")
    config = meta["config"]
    if num_classes is not None and config.get("num_classes") != num_classes:
        raise CheckpointConfigError(
            f"checkpoint built for {config.get('num_classes')} classes, expected {num_classes}"
        )
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    return CheckpointRecord(params, config, meta["epoch"], meta["history"], meta.get("scheduler"))


def checkpoint_from_fit(model: nn.Module, result: FitResult, config: dict) -> CheckpointRecord:
    """Best-by-validation parameters, with the scheduler state of the last epoch."""
    epoch = result.history[-1]["epoch"] if result.history else 0
    return CheckpointRecord(
        state_to_numpy(result.best_state), config, epoch, result.history, dataclasses.asdict(result.scheduler)
    )


def clone_module(model: nn.Module) -> nn.Module:
    return copy.deepcopy(model)
