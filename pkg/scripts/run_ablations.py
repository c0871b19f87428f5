#!/usr/bin/env python3
"""Token and loss-term ablations on the planted task.

Two studies, selectable with --study:
  token   full regression-token model vs the attentive-pool variant,
          several seeds each, identical budget
  loss    six enable-flag combinations of the three loss terms
          (every pair plus each regression term alone), one seed,
          shared budget

Prints one result row per run plus per-variant means.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from vigt.config import ModelConfig, TrainConfig
from vigt.data import SynthConfig, generate
from vigt.train import evaluate, train

LOSS_COMBOS = (
    (True, False, False),
    (False, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, False),
    (True, True, True),
)


def run_once(no_token, seed, steps, batch_size, train_samples, eval_samples,
             flags=(True, True, True)):
    model_cfg = ModelConfig.toy()
    model_cfg.no_token = no_token
    train_cfg = TrainConfig.toy()
    train_cfg.max_steps = steps
    train_cfg.batch_size = batch_size
    train_cfg.seed = seed
    train_cfg.eval_every = 0
    train_cfg.use_l1, train_cfg.use_giou, train_cfg.use_cls = flags
    result = train(model_cfg, train_cfg, train_samples)
    return evaluate(result.model, eval_samples)


def fmt(metrics):
    return ("  ".join(f"{k}={metrics[k]:.3f}"
            for k in ("recall@0.3", "recall@0.5", "recall@0.7", "mean_iou")))


def study_token(args, train_samples, eval_samples):
    rows = {"full": [], "no_token": []}
    for seed in range(args.seeds):
        for name, no_token in (("full", False), ("no_token", True)):
            m = run_once(no_token, seed, args.steps, args.batch_size,
                         train_samples, eval_samples)
            rows[name].append(m["mean_iou"])
            print(f"{name:9s} seed {seed}  {fmt(m)}")
    for name, vals in rows.items():
        print(f"{name:9s} mean mIoU over {args.seeds} seeds: {np.mean(vals):.3f}")
    gap = np.mean(rows["full"]) - np.mean(rows["no_token"])
    print(f"full - no_token = {gap:+.3f}")


def study_loss(args, train_samples, eval_samples):
    for flags in LOSS_COMBOS:
        tag = "+".join(n for n, on in zip(("l1", "giou", "cls"), flags) if on)
        m = run_once(False, 0, args.steps, args.batch_size,
                     train_samples, eval_samples, flags=flags)
        print(f"{tag:12s} {fmt(m)}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--study", choices=("token", "loss"), default="token")
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--n-train", type=int, default=512)
    ap.add_argument("--n-eval", type=int, default=100)
    ap.add_argument("--data-seed", type=int, default=0)
    args = ap.parse_args()

    model_cfg = ModelConfig.toy()
    synth = SynthConfig(seed=args.data_seed, t=model_cfg.t, l=model_cfg.l,
                        d_v=model_cfg.d_v, d_q=model_cfg.d_q)
    train_samples = generate(synth, args.n_train, start_id=0)
    eval_samples = generate(synth, args.n_eval, start_id=args.n_train)

    if args.study == "token":
        study_token(args, train_samples, eval_samples)
    else:
        study_loss(args, train_samples, eval_samples)
    return 0


if __name__ == "__main__":
    sys.exit(main())
