"""Finite-difference verification of the end-to-end gradient.

Runs the whole model plus loss at 64-bit precision with dropout off,
perturbs every parameter element with central differences, and compares
against the backward-pass gradients group by group.  Relative error uses
max(|analytic|, |numeric|, 1e-8) in the denominator.

Central differences on a unit-scale loss carry ~1e-11 of cancellation
noise, so a parameter whose true gradient is exactly zero (attention key
biases: softmax is invariant to a per-row constant shift of the logits)
would divide noise by the floor and fail spuriously.  Elements where
both sides sit below `atol` are therefore counted as agreeing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig, TrainConfig
from .data import GroundingSample
from .losses import make_foreground_labels, total_loss
from .model import GroundingModel
from .tensor import Tensor


@dataclass
class GroupReport:
    name: str
    max_rel_err: float
    worst_index: int
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    groups: list[GroupReport]
    threshold: float

    @property
    def max_rel_err(self) -> float:
        return max(g.max_rel_err for g in self.groups)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold


def _loss_value(
    model: GroundingModel, sample: GroundingSample, train_cfg: TrainConfig
) -> Tensor:
    flags = train_cfg.flags()
    result = model.forward(sample.video, sample.query, training=False, with_fg=flags.use_cls)
    labels = (
        Tensor(make_foreground_labels(sample.gt_interval, model.cfg.t))
        if flags.use_cls
        else None
    )
    loss, _ = total_loss(
        result.moment,
        sample.gt_moment,
        result.fg_probs,
        labels,
        train_cfg.weights(),
        flags,
    )
    return loss


def check_model_gradients(
    model_cfg: ModelConfig,
    sample: GroundingSample,
    train_cfg: TrainConfig | None = None,
    eps: float = 1e-5,
    threshold: float = 1e-4,
    atol: float = 1e-8,
    init_seed: int = 0,
    progress=None,
) -> GradCheckReport:
    """Verify d(loss)/d(param) for every parameter element.

    Forces 64-bit precision and zero dropout regardless of the incoming
    configuration so the comparison is meaningful.
    """
    cfg_dict = {**model_cfg.__dict__, "precision": "f64", "dropout": 0.0}
    model_cfg = ModelConfig(**cfg_dict).validate()
    train_cfg = train_cfg or TrainConfig()
    model = GroundingModel(model_cfg, np.random.default_rng(init_seed))
    params = model.named_parameters()

    loss = _loss_value(model, sample, train_cfg)
    loss.backward()
    analytic = {
        k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for k, p in params.items()
    }

    groups: list[GroupReport] = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        worst = GroupReport(name, 0.0, -1, 0.0, 0.0)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = _loss_value(model, sample, train_cfg).item()
            flat[i] = orig - eps
            lo = _loss_value(model, sample, train_cfg).item()
            flat[i] = orig
            num = (hi - lo) / (2.0 * eps)
            ana = a_flat[i]
            if max(abs(num), abs(ana)) < atol:
                continue
            rel = abs(num - ana) / max(abs(num), abs(ana), 1e-8)
            if rel > worst.max_rel_err:
                worst = GroupReport(name, rel, i, float(ana), float(num))
        groups.append(worst)
        if progress:
            progress(worst)
    return GradCheckReport(groups=groups, threshold=threshold)
