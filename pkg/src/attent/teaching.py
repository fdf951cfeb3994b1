"""Greedy example selection for attention learners.

The teacher scores every sequence by the Frobenius norm of its residual,
picks a subset (Hard top-m, Soft Gumbel-Top-k, or uniform Random), and the
learner takes SGD steps on that subset only. Ratio and interval schedules
decide how large the subset is and how often it is recomputed.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Sequence as Seq

import numpy as np

from .learner import SQUARED, AttentionParams, LabeledSequence, StackedBatch, backward, residual_sq_norms, sgd_step
from .numerics import ContractError, RandomSource, gumbel

RANDOM, HARD, SOFT = "random", "hard", "soft"
STRATEGIES = (RANDOM, HARD, SOFT)
FIXED, INCREMENTAL, COSINE = "fixed", "incremental", "cosine"
SCORE_FLOOR = 1e-12

TRACE_COLUMNS = (
    "iter", "epoch", "ratio", "n_selected", "subset_loss", "full_loss",
    "residual_fro", "reselected", "wall_ns",
)


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str = HARD
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ContractError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if self.kind == SOFT and not self.temperature > 0:
            raise ContractError(f"soft selection needs temperature > 0, got {self.temperature}")


@dataclass(frozen=True)
class RatioSchedule:
    """Fraction of the dataset selected at each epoch.

    ``warmup`` epochs at the start use the full dataset.
    """

    kind: str = FIXED
    r: float = 1.0
    r_min: float = 0.2
    r_max: float = 0.8
    horizon: int = 100
    warmup: int = 0

    def __post_init__(self):
        if self.kind not in (FIXED, INCREMENTAL, COSINE):
            raise ContractError(f"unknown ratio schedule {self.kind!r}")
        if self.kind == FIXED and not 0 < self.r <= 1:
            raise ContractError(f"fixed ratio must lie in (0, 1], got {self.r}")
        if self.kind != FIXED and not 0 < self.r_min <= self.r_max <= 1:
            raise ContractError(f"need 0 < r_min <= r_max <= 1, got {self.r_min}, {self.r_max}")
        if self.horizon < 1:
            raise ContractError(f"ratio horizon must be >= 1, got {self.horizon}")
        if self.warmup < 0:
            raise ContractError(f"warmup must be >= 0, got {self.warmup}")


@dataclass(frozen=True)
class IntervalSchedule:
    kind: str = FIXED
    k: int = 1
    k0: int = 1
    growth: float = 2.0

    def __post_init__(self):
        if self.kind not in (FIXED, INCREMENTAL):
            raise ContractError(f"unknown interval schedule {self.kind!r}")
        if self.kind == FIXED and self.k < 1:
            raise ContractError(f"fixed interval needs k >= 1, got {self.k}")
        if self.kind == INCREMENTAL and (self.k0 < 1 or not self.growth > 1):
            raise ContractError(f"incremental interval needs k0 >= 1 and growth > 1, got {self.k0}, {self.growth}")


@dataclass(frozen=True)
class TeachingConfig:
    strategy: SelectionStrategy = field(default_factory=SelectionStrategy)
    ratio: RatioSchedule = field(default_factory=RatioSchedule)
    interval: IntervalSchedule = field(default_factory=IntervalSchedule)
    eta: float = 0.1
    epsilon: float = 1e-6
    max_iters: int = 1000
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ContractError(f"eta must be positive, got {self.eta}")
        if not self.epsilon > 0:
            raise ContractError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iters < 1:
            raise ContractError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")


# --- scoring and selection ---------------------------------------------------


def residual_scores(params: AttentionParams, data: Seq[LabeledSequence]) -> np.ndarray:
    """Frobenius norm of ``f(S_i) - y_i`` for every sequence."""
    if not isinstance(data, StackedBatch) and len(data) == 0:
        raise ContractError("residual_scores needs at least one sequence")
    return np.sqrt(residual_sq_norms(params, data))


def _check_m(m: int, n: int):
    if not 1 <= m <= n:
        raise ContractError(f"subset size {m} out of range for N={n}")


def select_hard(scores, m: int) -> list[int]:
    """Indices of the m largest scores (lowest index wins ties), ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    _check_m(m, len(scores))
    # stable sort on -score keeps lower indices first among equal scores
    order = np.argsort(-scores, kind="stable")
    return sorted(int(i) for i in order[:m])


def select_soft(scores, m: int, temperature: float, source: RandomSource) -> list[int]:
    """Gumbel-Top-k: m draws without replacement, P(i) proportional to score_i^(1/T)."""
    scores = np.asarray(scores, dtype=np.float64)
    _check_m(m, len(scores))
    if not temperature > 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    if np.any(scores < 0):
        raise ContractError("soft selection needs non-negative scores")
    keys = np.log(scores + SCORE_FLOOR) / temperature + gumbel(source, len(scores))
    order = np.argsort(-keys, kind="stable")
    return sorted(int(i) for i in order[:m])


def select_random(n: int, m: int, source: RandomSource) -> list[int]:
    _check_m(m, n)
    return sorted(int(i) for i in source.permutation(n)[:m])


# --- schedules ---------------------------------------------------------------


def ratio_at(sched: RatioSchedule, epoch: int) -> float:
    if not 0 <= epoch <= sched.horizon:
        raise ContractError(f"epoch {epoch} outside [0, {sched.horizon}]")
    if epoch < sched.warmup:
        return 1.0
    if sched.kind == FIXED:
        r = sched.r
    else:
        t = epoch / sched.horizon
        w = t if sched.kind == INCREMENTAL else (1.0 - math.cos(math.pi * t)) / 2.0
        # convex combination so both endpoints are reproduced exactly
        r = (1.0 - w) * sched.r_min + w * sched.r_max
    return min(max(r, np.nextafter(0.0, 1.0)), 1.0)


def reselection_epochs(sched: IntervalSchedule, upto: int) -> list[int]:
    """All re-selection epochs in ``[0, upto]``."""
    if sched.kind == FIXED:
        return list(range(0, upto + 1, sched.k))
    out, epoch, j = [], 0, 0
    while epoch <= upto:
        out.append(epoch)
        epoch += max(1, math.floor(sched.k0 * sched.growth**j))
        j += 1
    return out


def should_reselect(sched: IntervalSchedule, epoch: int) -> bool:
    """Fixed(k): every k epochs. Incremental(k0, g): gaps floor(k0 * g^j), j = 0, 1, ..."""
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    if sched.kind == FIXED:
        return epoch % sched.k == 0
    return epoch in reselection_epochs(sched, epoch)


def subset_size(ratio: float, n: int) -> int:
    return min(n, max(1, math.ceil(ratio * n - 1e-12)))


# --- teaching loop -------------------------------------------------------------


@dataclass(frozen=True)
class TraceRow:
    iter: int
    epoch: int
    ratio: float
    n_selected: int
    subset_loss: float
    full_loss: float
    residual_fro: float
    reselected: int
    wall_ns: int

    def as_tuple(self):
        return tuple(getattr(self, c) for c in TRACE_COLUMNS)


@dataclass
class TeachingTrace:
    rows: list[TraceRow] = field(default_factory=list)
    selections: list[dict] = field(default_factory=list)
    initial_loss: float = float("nan")
    initial_residual: float = float("nan")
    stop_reason: str = ""

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]

    def iterations_to(self, threshold: float) -> int | None:
        """First iteration whose full-set loss is <= threshold (0 if already there)."""
        if self.initial_loss <= threshold:
            return 0
        for row in self.rows:
            if row.full_loss <= threshold:
                return row.iter
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(x) for x in row.as_tuple()])
        return buf.getvalue()

    def selections_jsonl(self) -> str:
        return "".join(json.dumps(s, sort_keys=True) + "\n" for s in self.selections)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _full_state(params, data: StackedBatch):
    total = float(np.sum(residual_sq_norms(params, data)))
    return 0.5 * total / data.rows, float(np.sqrt(total))


def _select(strategy: SelectionStrategy, params, data: StackedBatch, m, source):
    n = data.size
    if strategy.kind == RANDOM:
        return select_random(n, m, source)
    scores = residual_scores(params, data)
    if strategy.kind == HARD:
        return select_hard(scores, m)
    return select_soft(scores, m, strategy.temperature, source)


def teach_loop(
    init: AttentionParams,
    data: Seq[LabeledSequence],
    config: TeachingConfig,
    timing: bool = True,
    loss: str = SQUARED,
    on_step=None,
) -> tuple[AttentionParams, TeachingTrace]:
    """Run the teacher/learner loop until the residual drops below epsilon.

    Each epoch may re-select the teaching subset, then sweeps it in
    mini-batches of ``config.batch_size`` (whole subset when ``None``); every
    mini-batch update counts as one iteration. Stops after ``max_iters``
    updates or when the full-set residual norm falls below ``epsilon``.
    With ``timing=False`` the ``wall_ns`` column is written as 0 so traces are
    byte-reproducible. ``on_step(t, params)`` is called after every update.
    """
    if not isinstance(data, StackedBatch) and len(data) == 0:
        raise ContractError("teach_loop needs a non-empty dataset")
    source = RandomSource(config.seed)
    data = StackedBatch.of(data, init)
    n = data.size
    params = init
    trace = TeachingTrace()
    full_loss, resid = _full_state(params, data)
    trace.initial_loss, trace.initial_residual = full_loss, resid
    selected: list[int] | None = None
    t, epoch = 0, 0
    started = time.perf_counter_ns()
    while True:
        if resid < config.epsilon:
            trace.stop_reason = "epsilon"
            break
        if t >= config.max_iters:
            trace.stop_reason = "max_iters"
            break
        sched_epoch = min(epoch, config.ratio.horizon)
        ratio = ratio_at(config.ratio, sched_epoch)
        reselect = selected is None or should_reselect(config.interval, epoch)
        if reselect:
            m = subset_size(ratio, n)
            selected = _select(config.strategy, params, data, m, source)
            trace.selections.append({"epoch": epoch, "iter": t, "ratio": ratio, "selected": selected})
        bs = config.batch_size or len(selected)
        first = True
        for start in range(0, len(selected), bs):
            if t >= config.max_iters or resid < config.epsilon:
                break
            batch = data.subset(selected[start:start + bs])
            grad, subset_loss = backward(params, batch, loss)
            params = sgd_step(params, grad, config.eta)
            t += 1
            full_loss, resid = _full_state(params, data)
            trace.rows.append(
                TraceRow(
                    iter=t,
                    epoch=epoch,
                    ratio=ratio,
                    n_selected=len(selected),
                    subset_loss=subset_loss,
                    full_loss=full_loss,
                    residual_fro=resid,
                    reselected=int(reselect and first),
                    wall_ns=(time.perf_counter_ns() - started) if timing else 0,
                )
            )
            first = False
            if on_step is not None:
                on_step(t, params)
        epoch += 1
    return params, trace


def full_batch_sgd(init: AttentionParams, data: Seq[LabeledSequence], eta: float, steps: int):
    """Plain full-batch SGD; returns final params and per-step full-set losses."""
    params = init
    data = StackedBatch.of(data, init)
    losses = []
    for _ in range(steps):
        grad, _ = backward(params, data)
        params = sgd_step(params, grad, eta)
        losses.append(_full_state(params, data)[0])
    return params, losses


PRESETS = ("llm", "vit")


def preset(name: str, horizon: int = 100, **overrides) -> TeachingConfig:
    """Named configurations.

    ``llm``: one full-data epoch, then a fixed 70% subset chosen by Hard
    selection, re-selected every epoch.
    ``vit``: ratio ramps linearly from 20% to 80%, re-selection gaps grow
    geometrically, Soft selection.
    """
    key = name.lower().replace("style", "").replace("_", "").replace("-", "")
    if key == "llm":
        cfg = TeachingConfig(
            strategy=SelectionStrategy(HARD),
            ratio=RatioSchedule(FIXED, r=0.7, horizon=horizon, warmup=1),
            interval=IntervalSchedule(FIXED, k=1),
        )
    elif key == "vit":
        cfg = TeachingConfig(
            strategy=SelectionStrategy(SOFT, temperature=1.0),
            ratio=RatioSchedule(INCREMENTAL, r_min=0.2, r_max=0.8, horizon=horizon),
            interval=IntervalSchedule(INCREMENTAL, k0=1, growth=2.0),
        )
    else:
        raise ContractError(f"unknown preset {name!r}; expected one of {PRESETS}")
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg
