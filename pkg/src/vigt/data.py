"""Synthetic planted-moment data and the dataset file format.

Generation plants a concept pattern inside a random sub-interval of a
noisy video and describes it with noisy copies of the same concept's
code in a separate query feature space.  Grounding therefore requires
reading the query: each video carries one concept, and which one it is
cannot be predicted from position alone.  Everything is deterministic
per (seed, sample id), so shards and re-runs agree.

On disk a dataset is a JSONL index (one record per line: id, interval,
array names) next to an array container holding the feature matrices.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .arrayfile import read_arrays, write_arrays
from .errors import ConfigError, FormatError
from .heads import Interval, Moment, moment_to_interval

PATTERN_NORM = 2.0  # planted concept vector length in feature space


@dataclass
class SynthConfig:
    t: int = 32  # video clips
    l: int = 6  # query tokens
    d_v: int = 64
    d_q: int = 32
    n_concepts: int = 16
    noise_std: float = 0.5
    min_width: float = 0.1
    max_width: float = 0.5
    seed: int = 0

    def validate(self) -> "SynthConfig":
        if not 0.0 < self.min_width <= self.max_width <= 1.0:
            raise ConfigError(
                f"need 0 < min_width <= max_width <= 1, got [{self.min_width}, {self.max_width}]"
            )
        if self.n_concepts < 2:
            raise ConfigError(f"need at least 2 concepts, got {self.n_concepts}")
        if min(self.t, self.l, self.d_v, self.d_q) < 1:
            raise ConfigError("all dimensions must be positive")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be nonnegative, got {self.noise_std}")
        return self


@dataclass
class GroundingSample:
    sample_id: int
    video: np.ndarray  # [T, d_v]
    query: np.ndarray  # [L, d_q]
    gt_moment: Moment  # float center/width
    gt_interval: Interval  # float start/end, always Φ(gt_moment)
    concept: int = 0


def _sample_from_interval(sid: int, video, query, start: float, end: float, concept: int = 0) -> GroundingSample:
    moment = Moment(center=(start + end) / 2.0, width=end - start)
    return GroundingSample(
        sample_id=sid,
        video=video,
        query=query,
        gt_moment=moment,
        gt_interval=moment_to_interval(moment),
        concept=concept,
    )


def _concept_codes(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fixed per-config concept directions in video and query space."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xC0DE]))
    vdirs = rng.normal(size=(cfg.n_concepts, cfg.d_v))
    qdirs = rng.normal(size=(cfg.n_concepts, cfg.d_q))
    vdirs /= np.linalg.norm(vdirs, axis=1, keepdims=True)
    qdirs /= np.linalg.norm(qdirs, axis=1, keepdims=True)
    return vdirs * PATTERN_NORM, qdirs * PATTERN_NORM


def generate(cfg: SynthConfig, n: int, start_id: int = 0) -> list[GroundingSample]:
    """Generate n samples with ids start_id .. start_id + n - 1."""
    cfg.validate()
    vdirs, qdirs = _concept_codes(cfg)
    samples = []
    for sid in range(start_id, start_id + n):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, sid]))
        concept = int(rng.integers(cfg.n_concepts))
        width = float(rng.uniform(cfg.min_width, cfg.max_width))
        center = float(rng.uniform(width / 2, 1.0 - width / 2))
        start, end = center - width / 2, center + width / 2
        video = rng.normal(0.0, cfg.noise_std, size=(cfg.t, cfg.d_v))
        centers = (np.arange(cfg.t) + 0.5) / cfg.t
        inside = (centers >= start) & (centers <= end)
        video[inside] += vdirs[concept]
        query = qdirs[concept] + rng.normal(0.0, cfg.noise_std, size=(cfg.l, cfg.d_q))
        samples.append(_sample_from_interval(sid, video, query, start, end, concept))
    return samples


def save_dataset(dir_path: str, name: str, cfg: SynthConfig, samples: list[GroundingSample]) -> tuple[str, str]:
    """Write <name>.jsonl plus <name>.arr into dir_path; returns both paths."""
    os.makedirs(dir_path, exist_ok=True)
    index_path = os.path.join(dir_path, f"{name}.jsonl")
    array_path = os.path.join(dir_path, f"{name}.arr")
    arrays: dict[str, np.ndarray] = {}
    with open(index_path, "w") as fh:
        header = {
            "kind": "grounding-dataset",
            "arrays": f"{name}.arr",
            "config": cfg.__dict__,
            "count": len(samples),
        }
        fh.write(json.dumps(header) + "\n")
        for s in samples:
            vname = f"video/{s.sample_id}"
            qname = f"query/{s.sample_id}"
            arrays[vname] = s.video.astype(np.float32)
            arrays[qname] = s.query.astype(np.float32)
            fh.write(
                json.dumps(
                    {
                        "id": s.sample_id,
                        "start": s.gt_interval.start,
                        "end": s.gt_interval.end,
                        "concept": s.concept,
                        "video": vname,
                        "query": qname,
                    }
                )
                + "\n"
            )
    write_arrays(array_path, arrays)
    return index_path, array_path


def load_feature_file(index_path: str, t: int | None = None) -> tuple[SynthConfig | None, list[GroundingSample]]:
    """Read a dataset index plus its array container back into samples.

    With ``t`` set, video features are pooled to exactly t clips (uniform
    bucket averaging); otherwise native lengths pass through.  Malformed
    records raise with the offending line/record named.
    """
    with open(index_path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{index_path}: empty dataset index")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise FormatError(f"{index_path}: header line is not JSON") from e
    if header.get("kind") != "grounding-dataset":
        raise FormatError(f"{index_path}: unrecognized dataset kind {header.get('kind')!r}")
    if "arrays" not in header:
        raise FormatError(f"{index_path}: header missing the sidecar array name")
    cfg = SynthConfig(**header["config"]) if "config" in header else None
    array_path = os.path.join(os.path.dirname(index_path) or ".", header["arrays"])
    arrays = read_arrays(array_path)
    samples = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"{index_path}:{i}: record is not JSON") from e
        for key in ("id", "start", "end", "video", "query"):
            if key not in rec:
                raise FormatError(f"{index_path}:{i}: record missing {key!r}")
        if rec["video"] not in arrays or rec["query"] not in arrays:
            raise FormatError(f"{index_path}:{i}: arrays missing for record {rec['id']}")
        video = arrays[rec["video"]].astype(np.float64)
        query = arrays[rec["query"]].astype(np.float64)
        if video.ndim != 2 or query.ndim != 2:
            raise FormatError(f"{index_path}:{i}: record {rec['id']} features must be 2-D")
        if not (np.isfinite(video).all() and np.isfinite(query).all()):
            raise FormatError(f"{index_path}:{i}: non-finite features in record {rec['id']}")
        if not (0.0 <= rec["start"] <= rec["end"] <= 1.0):
            raise FormatError(f"{index_path}:{i}: bad interval [{rec['start']}, {rec['end']}]")
        if t is not None:
            video = pool_clips(video, t)
        samples.append(
            _sample_from_interval(
                int(rec["id"]), video, query,
                float(rec["start"]), float(rec["end"]),
                int(rec.get("concept", 0)),
            )
        )
    if "count" in header and len(samples) != header["count"]:
        raise FormatError(
            f"{index_path}: header promises {header['count']} records, found {len(samples)}"
        )
    return cfg, samples


def load_dataset(index_path: str) -> tuple[SynthConfig | None, list[GroundingSample]]:
    """load_feature_file without resampling."""
    return load_feature_file(index_path, t=None)


def pool_clips(x: np.ndarray, t_out: int) -> np.ndarray:
    """Resample [T_in, d] features to t_out rows by uniform bucket averaging.

    Bucket i covers input rows floor(i*T_in/t_out) .. floor((i+1)*T_in/t_out);
    an empty bucket (upsampling) repeats the row at its left edge.
    """
    t_in = x.shape[0]
    if t_in == 0:
        raise FormatError("cannot pool an empty feature sequence")
    if t_in == t_out:
        return x.copy()
    out = np.empty((t_out, x.shape[1]), dtype=x.dtype)
    for i in range(t_out):
        lo = (i * t_in) // t_out
        hi = ((i + 1) * t_in) // t_out
        out[i] = x[lo] if hi <= lo else x[lo:hi].mean(axis=0)
    return out
