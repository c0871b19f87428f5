"""Training loop for the synthetic grounding task.

Batches average per-sample losses by backpropagating each sample scaled
by 1/B and letting gradients accumulate; one optimizer step follows.
Data order and dropout draw from separately spawned generators so
disabling one does not shift the other, keeping seeded runs comparable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig, TrainConfig
from .data import GroundingSample
from .errors import NumericError, UsageError
from .heads import Interval
from .losses import make_foreground_labels, total_loss
from .metrics import EvalRecord, summarize
from .model import GroundingModel
from .optim import Adam
from .tensor import Tensor


@dataclass
class StepLog:
    step: int
    loss: float
    parts: dict[str, float] = field(default_factory=dict)


@dataclass
class TrainResult:
    model: GroundingModel
    optimizer: Adam
    steps: list[StepLog]
    eval_history: list[tuple[int, dict[str, float]]]


def evaluate(model: GroundingModel, samples: list[GroundingSample]) -> dict[str, float]:
    """Prediction-only metrics over a sample list."""
    if not samples:
        raise UsageError("cannot evaluate on an empty sample list")
    return summarize(predict_records(model, samples))


def predict_records(model: GroundingModel, samples: list[GroundingSample]) -> list[EvalRecord]:
    records = []
    for s in samples:
        start, end = model.predict(s.video, s.query)
        records.append(EvalRecord(s.sample_id, Interval(start, end), s.gt_interval))
    return records


def train_step(
    model: GroundingModel,
    optimizer: Adam,
    batch: list[GroundingSample],
    train_cfg: TrainConfig,
    dropout_rng: np.random.Generator | None,
) -> StepLog:
    optimizer.zero_grad()
    weights, flags = train_cfg.weights(), train_cfg.flags()
    scale = 1.0 / len(batch)
    total = 0.0
    part_sums: dict[str, float] = {}
    for s in batch:
        result = model.forward(
            s.video, s.query, training=True, rng=dropout_rng, with_fg=flags.use_cls
        )
        labels = (
            Tensor(make_foreground_labels(s.gt_interval, model.cfg.t))
            if flags.use_cls
            else None
        )
        loss, parts = total_loss(
            result.moment,
            s.gt_moment,
            result.fg_probs,
            labels,
            weights,
            flags,
        )
        (loss * scale).backward()
        total += parts.total * scale
        for k, v in parts.as_dict().items():
            if k != "total":
                part_sums[k] = part_sums.get(k, 0.0) + v * scale
    if not np.isfinite(total):
        raise NumericError(f"non-finite training loss {total}")
    optimizer.step()
    return StepLog(step=optimizer.t, loss=total, parts=part_sums)


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_samples: list[GroundingSample],
    eval_samples: list[GroundingSample] | None = None,
    checkpoint_path: str | None = None,
    log=None,
) -> TrainResult:
    """Train from scratch; returns the model plus loss/eval traces.

    With a checkpoint path, saves after the final step, and also saves
    the last finite state before raising if the loss turns non-finite.
    """
    seed_root = np.random.SeedSequence(train_cfg.seed)
    init_ss, order_ss, dropout_ss = seed_root.spawn(3)
    model = GroundingModel(model_cfg, np.random.default_rng(init_ss))
    optimizer = Adam(model.named_parameters(), lr=train_cfg.lr)
    order_rng = np.random.default_rng(order_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    steps: list[StepLog] = []
    eval_history: list[tuple[int, dict[str, float]]] = []
    n = len(train_samples)
    if n == 0:
        raise UsageError("no training samples")
    for step in range(1, train_cfg.max_steps + 1):
        idx = order_rng.choice(n, size=min(train_cfg.batch_size, n), replace=False)
        batch = [train_samples[i] for i in idx]
        try:
            entry = train_step(model, optimizer, batch, train_cfg, dropout_rng)
        except NumericError:
            if checkpoint_path:
                model.save_checkpoint(
                    checkpoint_path, train_cfg, step - 1, optimizer.state_arrays()
                )
            raise
        steps.append(entry)
        if log:
            log(entry)
        if eval_samples and train_cfg.eval_every and step % train_cfg.eval_every == 0:
            eval_history.append((step, evaluate(model, eval_samples)))
    if checkpoint_path:
        model.save_checkpoint(
            checkpoint_path, train_cfg, train_cfg.max_steps, optimizer.state_arrays()
        )
    return TrainResult(
        model=model, optimizer=optimizer, steps=steps, eval_history=eval_history
    )
