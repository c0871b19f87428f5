#!/usr/bin/env python3
"""Train the full model on the planted grounding task and report metrics.

Reproduces the learnability target on a laptop CPU: a few hundred steps
at batch 32 should put held-out recall@0.5 above 0.85 and mean IoU above
0.70.  Writes the metrics CSV and, optionally, a checkpoint.
"""

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from vigt.config import ModelConfig, TrainConfig
from vigt.data import SynthConfig, generate
from vigt.metrics import metrics_csv
from vigt.train import evaluate, train


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-train", type=int, default=512)
    ap.add_argument("--n-eval", type=int, default=200)
    ap.add_argument("--eval-every", type=int, default=100)
    ap.add_argument("--checkpoint", default=None)
    ap.add_argument("--out", default=None, help="metrics CSV path")
    args = ap.parse_args()

    model_cfg = ModelConfig.toy()
    train_cfg = TrainConfig.toy()
    train_cfg.max_steps = args.steps
    train_cfg.batch_size = args.batch_size
    train_cfg.lr = args.lr
    train_cfg.seed = args.seed
    train_cfg.eval_every = 0

    synth = SynthConfig(seed=args.seed, t=model_cfg.t, l=model_cfg.l,
                        d_v=model_cfg.d_v, d_q=model_cfg.d_q)
    train_samples = generate(synth, args.n_train, start_id=0)
    eval_samples = generate(synth, args.n_eval, start_id=args.n_train)

    history = []

    def log(entry):
        if entry.step == 1 or entry.step % 50 == 0:
            print(f"step {entry.step:4d}  loss {entry.loss:.4f}")
        history.append(entry.loss)

    t0 = time.monotonic()
    result = train(model_cfg, train_cfg, train_samples,
                   checkpoint_path=args.checkpoint, log=log)
    elapsed = time.monotonic() - t0

    metrics = evaluate(result.model, eval_samples)
    print(f"\ntrained {args.steps} steps in {elapsed:.0f}s "
          f"({elapsed / args.steps * 1000:.0f} ms/step)")
    if args.steps >= 200:
        print(f"loss step 1 -> 200: {history[0]:.3f} -> {history[199]:.3f} "
              f"({history[199] / history[0]:.0%})")
    csv = metrics_csv(metrics)
    print(csv, end="")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv)
        print(f"metrics written to {args.out}")
    ok = metrics["recall@0.5"] >= 0.85 and metrics["mean_iou"] >= 0.70
    print("targets met" if ok else "targets NOT met")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
