"""Single-head attention learner with closed-form parameter Jacobians.

The learner maps an ``S x d`` feature matrix to an ``S x v`` output::

    f(X) = softmax(X Wq (X Wk)^T / sqrt(d)) X Wv

Rows of every Jacobian follow the rows (elements) of the input sequence.
Column indices ``i`` are zero-based.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence as Seq

import numpy as np

from .numerics import MASK_VALUE, ContractError, RandomSource, as_matrix, row_softmax

SQUARED = "squared"
LOSS_KINDS = (SQUARED,)


@dataclass(frozen=True, eq=False)
class AttentionParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        w_q = as_matrix(self.w_q, "w_q")
        w_k = as_matrix(self.w_k, "w_k")
        w_v = as_matrix(self.w_v, "w_v")
        if w_q.shape != w_k.shape:
            raise ContractError(f"w_q {w_q.shape} and w_k {w_k.shape} must share a shape")
        if w_v.shape[0] != w_q.shape[0]:
            raise ContractError(f"w_v has {w_v.shape[0]} rows, expected d={w_q.shape[0]}")
        for name, w in (("w_q", w_q), ("w_k", w_k), ("w_v", w_v)):
            if not np.all(np.isfinite(w)):
                raise ContractError(f"{name} has non-finite entries")
            w.setflags(write=False)
            object.__setattr__(self, name, w)

    @property
    def d(self) -> int:
        return self.w_q.shape[0]

    @property
    def p(self) -> int:
        return self.w_q.shape[1]

    @property
    def v(self) -> int:
        return self.w_v.shape[1]

    @property
    def n_params(self) -> int:
        return self.w_v.size + self.w_q.size + self.w_k.size

    @classmethod
    def init(cls, d: int, p: int, v: int, source: RandomSource, scale: float = 1.0) -> "AttentionParams":
        """I.i.d. Gaussian weights with standard deviation ``scale / sqrt(d)``."""
        if min(d, p, v) < 1:
            raise ContractError(f"dims must be positive, got d={d}, p={p}, v={v}")
        sd = scale / np.sqrt(d)
        return cls(
            w_q=source.normal((d, p), sd),
            w_k=source.normal((d, p), sd),
            w_v=source.normal((d, v), sd),
        )

    @classmethod
    def zeros_like(cls, other: "AttentionParams") -> "AttentionParams":
        return cls(np.zeros_like(other.w_q), np.zeros_like(other.w_k), np.zeros_like(other.w_v))

    def flat(self) -> np.ndarray:
        """Parameter vector ordered as (Wv, Wq, Wk), each row-major."""
        return np.concatenate([self.w_v.ravel(), self.w_q.ravel(), self.w_k.ravel()])

    @classmethod
    def from_flat(cls, theta, d: int, p: int, v: int) -> "AttentionParams":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (d * v + 2 * d * p,):
            raise ContractError(f"flat vector has shape {theta.shape}")
        wv, wq, wk = np.split(theta, [d * v, d * v + d * p])
        return cls(wq.reshape(d, p), wk.reshape(d, p), wv.reshape(d, v))

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for w in (self.w_q, self.w_k, self.w_v):
            h.update(repr(w.shape).encode())
            h.update(np.ascontiguousarray(w).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {"w_q": self.w_q.tolist(), "w_k": self.w_k.tolist(), "w_v": self.w_v.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "AttentionParams":
        return cls(np.array(data["w_q"]), np.array(data["w_k"]), np.array(data["w_v"]))

    def __eq__(self, other):
        if not isinstance(other, AttentionParams):
            return NotImplemented
        return all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in ((self.w_q, other.w_q), (self.w_k, other.w_k), (self.w_v, other.w_v))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LabeledSequence:
    features: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        x = as_matrix(self.features, "features")
        y = as_matrix(self.target, "target")
        if x.shape[0] != y.shape[0]:
            raise ContractError(f"target has {y.shape[0]} rows, features have {x.shape[0]}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "target", y)

    def __eq__(self, other):
        if not isinstance(other, LabeledSequence):
            return NotImplemented
        return (
            self.features.shape == other.features.shape
            and self.target.shape == other.target.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.target, other.target)
        )

    __hash__ = None


@dataclass(frozen=True)
class FlatGradient:
    g_wq: np.ndarray
    g_wk: np.ndarray
    g_wv: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.g_wv.ravel(), self.g_wq.ravel(), self.g_wk.ravel()])

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.flat())))


def _check_features(params: AttentionParams, x, name: str = "sequence") -> np.ndarray:
    x = as_matrix(x, name)
    if x.shape[1] != params.d:
        raise ContractError(f"{name} has width {x.shape[1]}, params expect d={params.d}")
    return x


def causal_mask(s: int) -> np.ndarray:
    """Zero on and below the diagonal, sentinel strictly above."""
    return np.triu(np.full((s, s), MASK_VALUE), k=1)


def _attend(params, xq, xkv, mask=None):
    q = xq @ params.w_q
    k = xkv @ params.w_k
    v = xkv @ params.w_v
    logits = (q @ np.swapaxes(k, -1, -2)) / np.sqrt(params.d)
    if mask is not None:
        logits = logits + mask
    a = row_softmax(logits)
    return q, k, v, a, a @ v


def forward_self(params: AttentionParams, seq) -> np.ndarray:
    x = _check_features(params, seq)
    return _attend(params, x, x)[-1]


def forward_masked(params: AttentionParams, seq) -> np.ndarray:
    x = _check_features(params, seq)
    return _attend(params, x, x, causal_mask(x.shape[0]))[-1]


def forward_cross(params: AttentionParams, seq_q, seq_kv) -> np.ndarray:
    xq = _check_features(params, seq_q, "query sequence")
    xkv = _check_features(params, seq_kv, "key/value sequence")
    return _attend(params, xq, xkv)[-1]


def attention_weights(params: AttentionParams, seq) -> np.ndarray:
    x = _check_features(params, seq)
    return _attend(params, x, x)[3]


# --- v = 1 closed forms --------------------------------------------------------


def _require_scalar_output(params: AttentionParams):
    if params.v != 1:
        raise ContractError(f"closed-form column Jacobians need v == 1, got v={params.v}; use backward()")


def _require_column(params: AttentionParams, i: int):
    if not 0 <= i < params.p:
        raise ContractError(f"column index {i} out of range for p={params.p}")


def jac_value(params: AttentionParams, seq) -> np.ndarray:
    """d f / d Wv for scalar outputs: the attention matrix applied to the features."""
    _require_scalar_output(params)
    x = _check_features(params, seq)
    a = _attend(params, x, x)[3]
    return a @ x


def importance_scalars(params: AttentionParams, seq, i: int) -> np.ndarray:
    """Per-element importance of query column ``i``.

    ``imp_j = K[:, i]^T (diag(a_j) - a_j^T a_j) V`` where ``a_j`` is the
    j-th attention row.
    """
    _require_scalar_output(params)
    _require_column(params, i)
    x = _check_features(params, seq)
    _, k, v, a, _ = _attend(params, x, x)
    k_i = k[:, i]
    imp = np.empty(x.shape[0])
    for j in range(x.shape[0]):
        a_j = a[j]
        imp[j] = (k_i @ np.diag(a_j) @ v - k_i @ np.outer(a_j, a_j) @ v)[0]
    return imp


def jac_query_col(params: AttentionParams, seq, i: int) -> np.ndarray:
    """d f / d Wq[:, i]; row j is ``imp_j * X[j] / sqrt(d)``."""
    x = _check_features(params, seq)
    imp = importance_scalars(params, x, i)
    return imp[:, None] * x / np.sqrt(params.d)


def jac_key_col(params: AttentionParams, seq, i: int) -> np.ndarray:
    """d f / d Wk[:, i].

    Unlike the query case the key column enters through every key row, so
    row j is ``Q[j, i] / sqrt(d) * sum_s a_js (V_s - f_j) X[s]``.
    """
    _require_scalar_output(params)
    _require_column(params, i)
    x = _check_features(params, seq)
    q, _, v, a, f = _attend(params, x, x)
    out = np.empty_like(x)
    for j in range(x.shape[0]):
        a_j = a[j]
        # (diag(a_j) - a_j^T a_j) V, elementwise over keys
        centred = a_j * v[:, 0] - a_j * (a_j @ v[:, 0])
        out[j] = q[j, i] * (centred @ x) / np.sqrt(params.d)
    return out


# --- general-v Jacobians -------------------------------------------------------


@dataclass(frozen=True)
class JacobianSet:
    """Full parameter Jacobian of one sequence's output.

    ``wv[j, c]`` holds d f[j, c] / d Wv (shape d x v); likewise ``wq`` and
    ``wk`` (shape d x p). For v == 1, ``query_col(i)`` etc. give the S x d
    column Jacobians.
    """

    wv: np.ndarray  # (S, v, d, v)
    wq: np.ndarray  # (S, v, d, p)
    wk: np.ndarray  # (S, v, d, p)
    valid_for: tuple

    def flat(self) -> np.ndarray:
        s, v = self.wv.shape[:2]
        return np.concatenate(
            [self.wv.reshape(s * v, -1), self.wq.reshape(s * v, -1), self.wk.reshape(s * v, -1)], axis=1
        )

    def value(self) -> np.ndarray:
        return self.wv[:, 0, :, 0]

    def query_col(self, i: int) -> np.ndarray:
        return self.wq[:, 0, :, i]

    def key_col(self, i: int) -> np.ndarray:
        return self.wk[:, 0, :, i]


def _sequence_fingerprint(x: np.ndarray) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(repr(x.shape).encode())
    h.update(np.ascontiguousarray(x).tobytes())
    return h.hexdigest()


def _compute_jacobian_set(params: AttentionParams, x: np.ndarray) -> JacobianSet:
    d, v = params.d, params.v
    q, k, val, a, f = _attend(params, x, x)
    ax = a @ x
    eye_v = np.eye(v)
    wv = np.einsum("jr,cb->jcrb", ax, eye_v)
    # centred[j, s, c] = a_js (V_sc - f_jc)
    centred = a[:, :, None] * (val[None, :, :] - f[:, None, :])
    scale = 1.0 / np.sqrt(d)
    wq = scale * np.einsum("jr,si,jsc->jcri", x, k, centred)
    wk = scale * np.einsum("ji,sr,jsc->jcri", q, x, centred)
    return JacobianSet(wv=wv, wq=wq, wk=wk, valid_for=(params.fingerprint(), _sequence_fingerprint(x)))


class JacobianCache:
    """Small LRU cache of JacobianSets keyed by (params, sequence) fingerprints."""

    def __init__(self, maxsize: int = 4096):
        self.maxsize = maxsize
        self._store: OrderedDict = OrderedDict()
        self.hits = 0
        self.misses = 0

    def get(self, params: AttentionParams, seq) -> JacobianSet:
        x = _check_features(params, seq)
        key = (params.fingerprint(), _sequence_fingerprint(x))
        hit = self._store.get(key)
        if hit is not None:
            self._store.move_to_end(key)
            self.hits += 1
            return hit
        self.misses += 1
        js = _compute_jacobian_set(params, x)
        self._store[key] = js
        if len(self._store) > self.maxsize:
            self._store.popitem(last=False)
        return js

    def clear(self):
        self._store.clear()


_default_cache = JacobianCache()


def jacobian_set(params: AttentionParams, seq, cache: JacobianCache | None = None) -> JacobianSet:
    return (cache or _default_cache).get(params, seq)


# --- loss and reverse pass -----------------------------------------------------


def _check_loss(loss: str):
    if loss not in LOSS_KINDS:
        raise ContractError(f"unsupported loss {loss!r}; expected one of {LOSS_KINDS}")


def loss_derivative(output: np.ndarray, target: np.ndarray, loss: str = SQUARED) -> np.ndarray:
    """Per-row dL/df for the elementwise loss."""
    _check_loss(loss)
    return output - target


def _check_batch(params: AttentionParams, batch: Seq[LabeledSequence]):
    if len(batch) == 0:
        raise ContractError("batch is empty")
    for n, item in enumerate(batch):
        _check_features(params, item.features, f"batch[{n}].features")
        if item.target.shape[1] != params.v:
            raise ContractError(f"batch[{n}].target has width {item.target.shape[1]}, expected v={params.v}")


class StackedBatch:
    """Sequences grouped by length into ``(N, S, d)`` arrays.

    Validation and stacking happen once; training loops reuse the result.
    """

    def __init__(self, groups, size: int, d: int, v: int):
        self.groups = groups  # list of (original indices, X, Y)
        self.size = size
        self.d = d
        self.v = v
        self.rows = sum(x.shape[0] * x.shape[1] for _, x, _ in groups)

    @classmethod
    def of(cls, batch, params: AttentionParams | None = None) -> "StackedBatch":
        if isinstance(batch, StackedBatch):
            if params is not None and (batch.d, batch.v) != (params.d, params.v):
                raise ContractError(f"batch has (d, v)={(batch.d, batch.v)}, params expect {(params.d, params.v)}")
            return batch
        if len(batch) == 0:
            raise ContractError("batch is empty")
        if params is not None:
            _check_batch(params, batch)
        by_len: dict[int, list[int]] = {}
        for n, item in enumerate(batch):
            by_len.setdefault(item.features.shape[0], []).append(n)
        groups = []
        for s in sorted(by_len):
            idx = by_len[s]
            x = np.stack([batch[n].features for n in idx])
            y = np.stack([batch[n].target for n in idx])
            groups.append((np.array(idx), x, y))
        d = batch[0].features.shape[1]
        v = batch[0].target.shape[1]
        return cls(groups, len(batch), d, v)

    def subset(self, indices) -> "StackedBatch":
        """Sub-batch of the given original indices, keeping their order within each group."""
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size == 0:
            raise ContractError("batch is empty")
        if len(self.groups) == 1:
            _, x, y = self.groups[0]
            return StackedBatch([(np.arange(indices.size), x[indices], y[indices])], indices.size, self.d, self.v)
        where = {}
        for g, (idx, _, _) in enumerate(self.groups):
            for pos, n in enumerate(idx):
                where[int(n)] = (g, pos)
        picked: dict[int, list] = {}
        for out_pos, n in enumerate(indices):
            g, pos = where[int(n)]
            picked.setdefault(g, []).append((out_pos, pos))
        groups = []
        for g in sorted(picked):
            _, x, y = self.groups[g]
            out_idx = np.array([o for o, _ in picked[g]])
            pos = np.array([p for _, p in picked[g]])
            groups.append((out_idx, x[pos], y[pos]))
        return StackedBatch(groups, indices.size, self.d, self.v)


def forward_batch(params: AttentionParams, x: np.ndarray) -> np.ndarray:
    """Self-attention over a stacked ``(N, S, d)`` batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != params.d:
        raise ContractError(f"batch must have shape (N, S, {params.d}), got {x.shape}")
    return _attend(params, x, x)[-1]


def residual_sq_norms(params: AttentionParams, batch) -> np.ndarray:
    """Squared Frobenius norm of each sequence's residual, in batch order."""
    sb = StackedBatch.of(batch, params)
    out = np.empty(sb.size)
    for idx, x, y in sb.groups:
        r = _attend(params, x, x)[-1] - y
        out[idx] = np.sum(r * r, axis=(1, 2))
    return out


def batch_loss(params: AttentionParams, batch, loss: str = SQUARED) -> float:
    """Loss averaged over every element of every sequence."""
    _check_loss(loss)
    sb = StackedBatch.of(batch, params)
    return 0.5 * float(np.sum(residual_sq_norms(params, sb))) / sb.rows


def backward(params: AttentionParams, batch, loss: str = SQUARED):
    """Averaged loss gradient and averaged loss over ``batch``.

    Uses a reverse pass through the cached attention weights; valid for any v.
    ``batch`` is a list of LabeledSequence or a StackedBatch.
    Returns ``(FlatGradient, loss_value)``.
    """
    _check_loss(loss)
    sb = StackedBatch.of(batch, params)
    g_wq = np.zeros_like(params.w_q)
    g_wk = np.zeros_like(params.w_k)
    g_wv = np.zeros_like(params.w_v)
    total = 0.0
    scale = 1.0 / np.sqrt(params.d)
    for _, x, y in sb.groups:
        q, k, v, a, f = _attend(params, x, x)
        r = f - y
        total += 0.5 * float(np.sum(r * r))
        xt = np.swapaxes(x, -1, -2)
        g_v = np.swapaxes(a, -1, -2) @ r
        g_a = r @ np.swapaxes(v, -1, -2)
        g_z = a * (g_a - np.sum(g_a * a, axis=-1, keepdims=True)) * scale
        g_q = g_z @ k
        g_k = np.swapaxes(g_z, -1, -2) @ q
        g_wv += (xt @ g_v).sum(axis=0)
        g_wq += (xt @ g_q).sum(axis=0)
        g_wk += (xt @ g_k).sum(axis=0)
    n = sb.rows
    return FlatGradient(g_wq / n, g_wk / n, g_wv / n), total / n


def sgd_step(params: AttentionParams, grad: FlatGradient, eta: float) -> AttentionParams:
    if not eta > 0:
        raise ContractError(f"learning rate must be positive, got {eta}")
    for name, w, g in (("w_q", params.w_q, grad.g_wq), ("w_k", params.w_k, grad.g_wk), ("w_v", params.w_v, grad.g_wv)):
        if w.shape != np.shape(g):
            raise ContractError(f"gradient for {name} has shape {np.shape(g)}, expected {w.shape}")
    return AttentionParams(
        w_q=params.w_q - eta * grad.g_wq,
        w_k=params.w_k - eta * grad.g_wk,
        w_v=params.w_v - eta * grad.g_wv,
    )
