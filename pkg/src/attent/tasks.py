"""Synthetic target mappings realized as dense sets of sequence/property pairs."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .learner import AttentionParams, LabeledSequence, forward_batch
from .numerics import ContractError, RandomSource

TEACHER = "teacher"
MEAN_POOL = "meanpool"
LINEAR_MIX = "linearmix"
TASK_KINDS = (TEACHER, MEAN_POOL, LINEAR_MIX)


class DatasetFormatError(ValueError):
    """A dataset file could not be parsed."""


@dataclass(frozen=True)
class TaskSpec:
    kind: str = TEACHER
    n: int = 64
    s: int = 4
    d: int = 4
    p: int = 4
    v: int = 1
    noise_sd: float = 0.0
    seed: int = 0
    teacher_scale: float = 1.0

    def validate(self):
        if self.kind not in TASK_KINDS:
            raise ContractError(f"task.kind: unknown task {self.kind!r}; expected one of {TASK_KINDS}")
        for name in ("n", "s", "d", "p", "v"):
            if getattr(self, name) < 1:
                raise ContractError(f"task.{name}: must be >= 1, got {getattr(self, name)}")
        if not (np.isfinite(self.noise_sd) and self.noise_sd >= 0):
            raise ContractError(f"task.noise_sd: must be finite and >= 0, got {self.noise_sd}")
        if self.kind == MEAN_POOL and self.v != self.d:
            raise ContractError(f"task.v: mean pooling needs v == d, got v={self.v}, d={self.d}")
        return self


@dataclass(eq=False)
class Dataset:
    items: list[LabeledSequence]
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.items)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.meta == other.meta and len(self.items) == len(other.items) and all(
            a == b for a, b in zip(self.items, other.items)
        )

    def features(self) -> list[np.ndarray]:
        return [it.features for it in self.items]


def _meta(spec: TaskSpec) -> dict:
    meta = asdict(spec)
    meta["generator"] = f"attent.tasks/{spec.kind}"
    return meta


def _features(spec: TaskSpec, src: RandomSource) -> np.ndarray:
    return src.normal((spec.n, spec.s, spec.d))


def gen_teacher(spec: TaskSpec) -> tuple[Dataset, AttentionParams]:
    """Dataset labelled by a frozen random attention learner of the same shape."""
    spec.validate()
    if spec.kind != TEACHER:
        raise ContractError(f"gen_teacher needs kind={TEACHER!r}, got {spec.kind!r}")
    root = RandomSource(spec.seed)
    teacher = AttentionParams.init(spec.d, spec.p, spec.v, root.child(1), scale=spec.teacher_scale)
    x = _features(spec, root.child(2))
    y = forward_batch(teacher, x)
    if spec.noise_sd > 0:
        y = y + root.child(3).normal(y.shape, spec.noise_sd)
    items = [LabeledSequence(x[n], y[n]) for n in range(spec.n)]
    return Dataset(items, _meta(spec)), teacher


def gen_analytic(spec: TaskSpec, mix: np.ndarray | None = None) -> Dataset:
    """Mean-pool or linear-mix targets (not realizable by attention in general).

    ``mix`` overrides the random d x v matrix of the linear-mix task.
    """
    spec.validate()
    if spec.kind not in (MEAN_POOL, LINEAR_MIX):
        raise ContractError(f"gen_analytic needs kind in {(MEAN_POOL, LINEAR_MIX)}, got {spec.kind!r}")
    root = RandomSource(spec.seed)
    x = _features(spec, root.child(2))
    if spec.kind == MEAN_POOL:
        y = np.repeat(x.mean(axis=1, keepdims=True), spec.s, axis=1)
    else:
        if mix is None:
            mix = root.child(1).normal((spec.d, spec.v), 1.0 / np.sqrt(spec.d))
        mix = np.asarray(mix, dtype=np.float64)
        if mix.shape != (spec.d, spec.v):
            raise ContractError(f"mix matrix must be {(spec.d, spec.v)}, got {mix.shape}")
        y = x @ mix
    if spec.noise_sd > 0:
        y = y + root.child(3).normal(y.shape, spec.noise_sd)
    return Dataset([LabeledSequence(x[n], y[n]) for n in range(spec.n)], _meta(spec))


def generate(spec: TaskSpec) -> Dataset:
    if spec.kind == TEACHER:
        return gen_teacher(spec)[0]
    return gen_analytic(spec)


def normalize_length(seq, target_len: int, pad_value: float = 0.0) -> np.ndarray:
    """Truncate to the first ``target_len`` rows or pad with ``pad_value`` rows."""
    x = np.asarray(seq, dtype=np.float64)
    if target_len < 1:
        raise ContractError(f"target_len must be >= 1, got {target_len}")
    if x.shape[0] >= target_len:
        return x[:target_len].copy()
    pad = np.full((target_len - x.shape[0], x.shape[1]), float(pad_value))
    return np.vstack([x, pad])


def normalize_item(item: LabeledSequence, target_len: int, pad_value: float = 0.0) -> LabeledSequence:
    return LabeledSequence(
        normalize_length(item.features, target_len, pad_value),
        normalize_length(item.target, target_len, pad_value),
    )


# JSON floats are written with repr(), which round-trips doubles exactly.


def save_jsonl(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"meta": ds.meta}, sort_keys=True) + "\n")
        for n, item in enumerate(ds.items):
            rec = {"id": n, "features": item.features.tolist(), "target": item.target.tolist()}
            fh.write(json.dumps(rec) + "\n")


def _matrix(rec, key, lineno):
    if key not in rec:
        raise DatasetFormatError(f"line {lineno}: record is missing {key!r}")
    try:
        arr = np.array(rec[key], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"line {lineno}: {key!r} is not a numeric matrix ({exc})") from None
    if arr.ndim != 2 or 0 in arr.shape:
        raise DatasetFormatError(f"line {lineno}: {key!r} must be a non-empty 2-D array")
    return arr


def load_jsonl(path) -> Dataset:
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset not found: {path}")
    meta: dict = {}
    items: list[LabeledSequence] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DatasetFormatError(f"line {lineno}: expected a JSON object")
            if "meta" in rec and lineno == 1:
                meta = rec["meta"]
                continue
            x = _matrix(rec, "features", lineno)
            y = _matrix(rec, "target", lineno)
            if x.shape[0] != y.shape[0]:
                raise DatasetFormatError(f"line {lineno}: features and target row counts differ")
            items.append(LabeledSequence(x, y))
    return Dataset(items, meta)
