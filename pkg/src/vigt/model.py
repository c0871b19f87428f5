"""The assembled grounding model and its checkpoint format.

Forward pass: project and encode both streams, co-attend, run the fused
transformer with the regression token, then read a (center, width)
moment off the token and per-clip foreground probabilities off the clip
states.  Prediction uses only the moment; the foreground head exists for
the training signal.

Checkpoints reuse the array container: every parameter, the optimizer
moments, the step counter, and the configuration (as UTF-8 bytes in a
float array) live in one file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .arrayfile import read_arrays, write_arrays
from .config import ModelConfig, TrainConfig, config_from_dict, config_to_dict
from .encoder import CoAttendedFeatures, VideoLanguageEncoder
from .errors import FormatError
from .heads import AttentivePoolHead, BoundaryHead, ForegroundHead, Moment, moment_to_interval
from .tensor import Tensor, set_default_dtype
from .transformer import TransformerOutput, VideoLanguageTransformer

CHECKPOINT_FORMAT = 1


@dataclass
class ForwardResult:
    moment: Moment  # Tensor center/width
    fg_probs: Tensor | None  # [T], None when the head was not run
    fused: TransformerOutput
    encoded: CoAttendedFeatures


class GroundingModel:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        cfg.validate()
        set_default_dtype(cfg.precision)
        self.cfg = cfg
        self.encoder = VideoLanguageEncoder.init(
            rng,
            d=cfg.d,
            heads=cfg.heads,
            d_v=cfg.d_v,
            d_q=cfg.d_q,
            k1d=cfg.k1d,
            n_conv=cfg.n_conv,
            mode=cfg.encoder_mode,
        )
        self.vl = VideoLanguageTransformer.init(
            rng,
            d=cfg.d,
            heads=cfg.heads,
            seq_q=cfg.l,
            seq_v=cfg.t,
            n_layers=cfg.n_layers,
            use_token=not cfg.no_token,
            dropout_rate=cfg.dropout,
            final_ln=cfg.final_ln,
        )
        self.reg_head = BoundaryHead.init(rng, cfg.d) if not cfg.no_token else None
        self.pool_head = AttentivePoolHead.init(rng, cfg.d) if cfg.no_token else None
        self.cls_head = ForegroundHead.init(rng, cfg.d)

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.encoder.named("encoder"))
        out.update(self.vl.named("vl"))
        if self.reg_head is not None:
            out.update(self.reg_head.named("reg"))
        if self.pool_head is not None:
            out.update(self.pool_head.named("pool"))
        out.update(self.cls_head.named("cls"))
        if not self.vl.use_token:
            del out["vl.token"]
        return out

    def forward(
        self,
        video: np.ndarray | Tensor,
        query: np.ndarray | Tensor,
        training: bool = False,
        rng: np.random.Generator | None = None,
        with_fg: bool = True,
    ) -> ForwardResult:
        video = video if isinstance(video, Tensor) else Tensor(video)
        query = query if isinstance(query, Tensor) else Tensor(query)
        encoded = self.encoder(video, query)
        fused = self.vl(encoded.q_star, encoded.v_star, training=training, rng=rng)
        if self.vl.use_token:
            moment = self.reg_head(fused.f_r_hat)
        else:
            moment = self.pool_head(fused.v_hat_star)
        fg = self.cls_head(fused.v_hat_star) if with_fg else None
        return ForwardResult(moment=moment, fg_probs=fg, fused=fused, encoded=encoded)

    def predict(self, video: np.ndarray, query: np.ndarray) -> tuple[float, float]:
        """Evaluation path: moment only, no dropout, foreground head untouched."""
        result = self.forward(video, query, training=False, with_fg=False)
        iv = moment_to_interval(
            Moment(result.moment.center.item(), result.moment.width.item())
        )
        return iv.start, iv.end

    # -- checkpointing ------------------------------------------------------

    def save_checkpoint(
        self,
        path: str,
        train_cfg: TrainConfig,
        step: int,
        optimizer_state: dict[str, np.ndarray] | None = None,
    ) -> None:
        blob = config_to_dict(self.cfg, train_cfg)
        blob["format"] = CHECKPOINT_FORMAT
        meta = np.frombuffer(json.dumps(blob).encode("utf-8"), dtype=np.uint8)
        arrays: dict[str, np.ndarray] = {
            "meta/config": meta.astype(np.float64),
            "meta/step": np.array([float(step)]),
        }
        for k, p in self.named_parameters().items():
            arrays[f"param/{k}"] = p.data
        if optimizer_state:
            arrays.update({f"opt/{k}": v for k, v in optimizer_state.items()})
        write_arrays(path, arrays)

    @classmethod
    def load_checkpoint(
        cls, path: str
    ) -> tuple["GroundingModel", TrainConfig, int, dict[str, np.ndarray]]:
        arrays = read_arrays(path)
        if "meta/config" not in arrays or "meta/step" not in arrays:
            raise FormatError(f"{path}: not a checkpoint (missing meta entries)")
        meta = bytes(arrays["meta/config"].astype(np.uint8))
        try:
            blob = json.loads(meta.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"{path}: corrupt checkpoint metadata") from e
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise FormatError(f"{path}: unsupported checkpoint format {blob.get('format')}")
        model_cfg, train_cfg = config_from_dict(
            {"model": blob["model"], "train": blob["train"]}
        )
        model = cls(model_cfg, np.random.default_rng(0))
        params = model.named_parameters()
        for k, p in params.items():
            key = f"param/{k}"
            if key not in arrays:
                raise FormatError(f"{path}: checkpoint missing parameter {k!r}")
            stored = arrays[key]
            if stored.shape != p.data.shape:
                raise FormatError(
                    f"{path}: parameter {k!r} has shape {stored.shape}, expected {p.data.shape}"
                )
            p.data = stored.astype(p.data.dtype)
        extra = [
            k[len("param/"):]
            for k in arrays
            if k.startswith("param/") and k[len("param/"):] not in params
        ]
        if extra:
            raise FormatError(f"{path}: checkpoint has unknown parameters {extra}")
        step = int(arrays["meta/step"][0])
        opt_state = {
            k[len("opt/"):]: v for k, v in arrays.items() if k.startswith("opt/")
        }
        return model, train_cfg, step, opt_state
