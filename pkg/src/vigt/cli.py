"""Command-line front end.

Subcommands: gen-data, train, eval, gradcheck, dump-attention, histogram.
Every model/training flag can also come from a plain-text key=value file
via --config; explicit flags win over the file, which wins over defaults.

Exit codes: 0 success, 1 usage or configuration error, 2 verification
failure (gradcheck over threshold), 3 numeric failure (non-finite loss
or gradients).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from .config import ModelConfig, TrainConfig
from .data import SynthConfig, generate, load_feature_file, save_dataset
from .errors import ConfigError, FormatError, NumericError, UsageError
from .gradcheck import check_model_gradients
from .metrics import (
    histogram_csv,
    iou_histogram,
    metrics_csv,
    predictions_csv,
    summarize,
    uniform_bins,
)
from .model import GroundingModel
from .train import evaluate, predict_records, train
from .transformer import token_query_attention, token_video_attention

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def parse_config_file(path: str) -> dict[str, str]:
    """key=value per line; blank lines and # comments ignored."""
    out: dict[str, str] = {}
    try:
        with open(path) as fh:
            for ln, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{ln}: expected key=value, got {line!r}")
                key, value = line.split("=", 1)
                out[key.strip()] = value.strip()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    return out


def _coerce(value: str, target_type: type):
    if target_type is bool:
        low = value.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    try:
        return target_type(value)
    except ValueError as e:
        raise ConfigError(f"cannot parse {value!r} as {target_type.__name__}") from e


_MODEL_FIELDS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_SYNTH_FIELDS = {f.name: f.type for f in dataclasses.fields(SynthConfig)}
_TYPE_NAMES = {"int": int, "float": float, "bool": bool, "str": str}


def _field_type(annotation) -> type:
    if isinstance(annotation, str):
        return _TYPE_NAMES.get(annotation, str)
    return annotation


def build_configs(args: argparse.Namespace) -> tuple[ModelConfig, TrainConfig, SynthConfig]:
    """Merge defaults, config file, and explicit flags, in that order."""
    model_kv: dict = {}
    train_kv: dict = {}
    synth_kv: dict = {}
    if getattr(args, "config", None):
        for key, raw in parse_config_file(args.config).items():
            if key in _MODEL_FIELDS:
                model_kv[key] = _coerce(raw, _field_type(_MODEL_FIELDS[key]))
            elif key in _TRAIN_FIELDS:
                train_kv[key] = _coerce(raw, _field_type(_TRAIN_FIELDS[key]))
            elif key in _SYNTH_FIELDS and key not in ("seed",):
                synth_kv[key] = _coerce(raw, _field_type(_SYNTH_FIELDS[key]))
            else:
                raise ConfigError(f"unknown config key {key!r} in {args.config}")
    for key in _MODEL_FIELDS:
        flag = getattr(args, f"model_{key}", None)
        if flag is not None:
            model_kv[key] = flag
    for key in _TRAIN_FIELDS:
        flag = getattr(args, key, None)
        if flag is not None:
            train_kv[key] = flag
    for key in _SYNTH_FIELDS:
        flag = getattr(args, f"synth_{key}", None)
        if flag is not None:
            synth_kv[key] = flag
    if getattr(args, "toy", False):
        model = ModelConfig.toy(**model_kv)
        trainc = TrainConfig.toy(**train_kv)
    else:
        model = ModelConfig(**model_kv).validate()
        trainc = TrainConfig(**train_kv)
    synth_kv.setdefault("seed", trainc.seed)
    synth = SynthConfig(
        **{
            "t": model.t,
            "l": model.l,
            "d_v": model.d_v,
            "d_q": model.d_q,
            **synth_kv,
        }
    ).validate()
    return model, trainc, synth


def _add_shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; explicit flags override it")
    p.add_argument("--toy", action="store_true", help="start from the small CPU profile")
    for key, ann in _MODEL_FIELDS.items():
        t = _field_type(ann)
        p.add_argument(
            f"--{key.replace('_', '-')}",
            dest=f"model_{key}",
            type=str if t is bool else t,
            default=None,
            metavar=key.upper(),
        )
    for key, ann in _TRAIN_FIELDS.items():
        t = _field_type(ann)
        flag = "--lambda" if key == "lam" else f"--{key.replace('_', '-')}"
        p.add_argument(
            flag, dest=key, type=str if t is bool else t, default=None, metavar=key.upper()
        )
    for key, ann in _SYNTH_FIELDS.items():
        if key in ("t", "l", "d_v", "d_q", "seed"):
            continue  # owned by the model/train config
        t = _field_type(ann)
        p.add_argument(
            f"--{key.replace('_', '-')}",
            dest=f"synth_{key}",
            type=str if t is bool else t,
            default=None,
            metavar=key.upper(),
        )


def _fix_bool_flags(args: argparse.Namespace) -> None:
    """Booleans arrive as strings from argparse; coerce in place."""
    for ns_key, fields, prefix in (
        (None, _MODEL_FIELDS, "model_"),
        (None, _TRAIN_FIELDS, ""),
        (None, _SYNTH_FIELDS, "synth_"),
    ):
        for key, ann in fields.items():
            if _field_type(ann) is not bool:
                continue
            attr = f"{prefix}{key}"
            val = getattr(args, attr, None)
            if isinstance(val, str):
                setattr(args, attr, _coerce(val, bool))


def _make_splits(synth: SynthConfig, n_train: int, n_eval: int):
    train_samples = generate(synth, n_train, start_id=0)
    eval_samples = generate(synth, n_eval, start_id=n_train)
    return train_samples, eval_samples


def cmd_gen_data(args: argparse.Namespace) -> int:
    _, _, synth = build_configs(args)
    samples = generate(synth, args.n, start_id=args.start_id)
    index, arrays = save_dataset(args.out_dir, args.name, synth, samples)
    print(f"wrote {len(samples)} samples to {index} + {arrays}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    model_cfg, train_cfg, synth = build_configs(args)
    if args.data:
        _, train_samples = load_feature_file(args.data, model_cfg.t)
        eval_samples = None
        if args.eval_data:
            _, eval_samples = load_feature_file(args.eval_data, model_cfg.t)
    else:
        train_samples, eval_samples = _make_splits(synth, args.n_train, args.n_eval)

    def log(entry):
        if entry.step == 1 or entry.step % args.log_every == 0:
            parts = " ".join(f"{k}={v:.4f}" for k, v in sorted(entry.parts.items()))
            print(f"step {entry.step} loss {entry.loss:.6f} {parts}")

    result = train(
        model_cfg,
        train_cfg,
        train_samples,
        eval_samples=eval_samples,
        checkpoint_path=args.checkpoint,
        log=log,
    )
    for step, metrics in result.eval_history:
        line = " ".join(f"{k}={v:.4f}" for k, v in metrics.items())
        print(f"eval@{step} {line}")
    if eval_samples:
        final = evaluate(result.model, eval_samples)
        print(metrics_csv(final), end="")
    if args.checkpoint:
        print(f"checkpoint saved to {args.checkpoint}")
    return 0


def _load_eval_samples(args, model: GroundingModel):
    if args.data:
        _, samples = load_feature_file(args.data, model.cfg.t)
        return samples
    synth = SynthConfig(
        t=model.cfg.t,
        l=model.cfg.l,
        d_v=model.cfg.d_v,
        d_q=model.cfg.d_q,
        seed=args.data_seed,
    )
    return generate(synth, args.n_eval, start_id=args.start_id)


def cmd_eval(args: argparse.Namespace) -> int:
    model, _, _, _ = GroundingModel.load_checkpoint(args.checkpoint)
    samples = _load_eval_samples(args, model)
    records = predict_records(model, samples)
    summary = summarize(records, inclusive=args.inclusive)
    csv = metrics_csv(summary)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv)
    if args.predictions:
        with open(args.predictions, "w") as fh:
            fh.write(predictions_csv(records))
    print(csv, end="")
    return 0


def cmd_histogram(args: argparse.Namespace) -> int:
    model, _, _, _ = GroundingModel.load_checkpoint(args.checkpoint)
    samples = _load_eval_samples(args, model)
    records = predict_records(model, samples)
    bins = iou_histogram(records, uniform_bins(args.bins))
    csv = histogram_csv(bins)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv)
    print(csv, end="")
    return 0


def _write_matrix_csv(path: str, header: str, matrix: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(f"layer,{header}\n")
        for layer, row in enumerate(matrix):
            fh.write(",".join([str(layer)] + [f"{v:.8f}" for v in row]) + "\n")


def cmd_dump_attention(args: argparse.Namespace) -> int:
    model, _, _, _ = GroundingModel.load_checkpoint(args.checkpoint)
    samples = _load_eval_samples(args, model)
    sample = next((s for s in samples if s.sample_id == args.sample_id), None)
    if sample is None:
        raise UsageError(f"sample id {args.sample_id} not found")
    result = model.forward(sample.video, sample.query, training=False, with_fg=False)
    video_attn = token_video_attention(result.fused)
    query_attn = token_query_attention(result.fused)
    prefix = args.out_prefix
    _write_matrix_csv(
        f"{prefix}.token_video.csv",
        ",".join(f"clip{i}" for i in range(video_attn.shape[1])),
        video_attn,
    )
    _write_matrix_csv(
        f"{prefix}.token_query.csv",
        ",".join(f"word{i}" for i in range(query_attn.shape[1])),
        query_attn,
    )
    if result.encoded.attn_q2v is not None:
        q2v = result.encoded.attn_q2v.mean(axis=0)  # head-averaged [L, T]
        with open(f"{prefix}.cmca_q2v.csv", "w") as fh:
            fh.write("word," + ",".join(f"clip{i}" for i in range(q2v.shape[1])) + "\n")
            for w, row in enumerate(q2v):
                fh.write(",".join([str(w)] + [f"{v:.8f}" for v in row]) + "\n")
    print(f"wrote attention CSVs with prefix {prefix}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    model_cfg, train_cfg, synth = build_configs(args)
    sample = generate(synth, 1, start_id=args.start_id)[0]

    def progress(report):
        print(
            f"{report.name}: max rel err {report.max_rel_err:.3e} "
            f"(analytic {report.analytic:.6e}, numeric {report.numeric:.6e})"
        )

    report = check_model_gradients(
        model_cfg,
        sample,
        train_cfg,
        threshold=args.threshold,
        progress=progress if args.verbose else None,
    )
    print(f"max relative error {report.max_rel_err:.3e} (threshold {report.threshold})")
    if not report.passed:
        offenders = [g for g in report.groups if g.max_rel_err >= report.threshold]
        for g in offenders:
            print(f"FAIL {g.name}: {g.max_rel_err:.3e}")
        return 2
    print("PASS")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vigt",
        description="Train and probe a token-regression video grounding model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _add_shared_flags(p)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--start-id", type=int, default=0)
    p.add_argument("--out-dir", default="data")
    p.add_argument("--name", default="synth")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train on synthetic or file data")
    _add_shared_flags(p)
    p.add_argument("--data", help="dataset index (.jsonl); default generates synthetic")
    p.add_argument("--eval-data", help="held-out dataset index")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-eval", type=int, default=200)
    p.add_argument("--checkpoint", help="where to save the trained model")
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset index; default generates synthetic")
    p.add_argument("--n-eval", type=int, default=200)
    p.add_argument("--start-id", type=int, default=2000)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--inclusive", action="store_true", help="recall uses IoU >= m")
    p.add_argument("--out", help="metrics CSV path")
    p.add_argument("--predictions", help="per-sample predictions CSV path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("histogram", help="IoU histogram of a checkpoint's predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--n-eval", type=int, default=200)
    p.add_argument("--start-id", type=int, default=2000)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", help="histogram CSV path")
    p.set_defaults(fn=cmd_histogram)

    p = sub.add_parser("dump-attention", help="token and co-attention maps as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--n-eval", type=int, default=16)
    p.add_argument("--start-id", type=int, default=2000)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--sample-id", type=int, default=2000)
    p.add_argument("--out-prefix", default="attention")
    p.set_defaults(fn=cmd_dump_attention)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_shared_flags(p)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--start-id", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _fix_bool_flags(args)
        return args.fn(args)
    except (ConfigError, UsageError, FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
