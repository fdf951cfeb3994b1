"""Brute-force ground truth for the analytic learner, kernel and selection code.

Everything here is deliberately naive: a step-by-step forward pass built only
from :mod:`attent.numerics`, central finite differences, and exhaustive subset
enumeration. Nothing is imported from the learner's analytic paths.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .numerics import ContractError, matmul, row_softmax

WEIGHTS = ("wv", "wq", "wk")
_FIELD = {"wv": "w_v", "wq": "w_q", "wk": "w_k"}


@dataclass(frozen=True)
class FdConfig:
    step: float = 1e-5

    def __post_init__(self):
        if not self.step > 0:
            raise ContractError(f"finite-difference step must be positive, got {self.step}")


def reference_forward(w_q, w_k, w_v, features) -> np.ndarray:
    """Self-attention output composed from matmul and row_softmax only."""
    d = w_q.shape[0]
    if features.shape[1] != d:
        raise ContractError(f"sequence width {features.shape[1]} does not match d={d}")
    q = matmul(features, w_q)
    k = matmul(features, w_k)
    v = matmul(features, w_v)
    logits = matmul(q, k.T) / np.sqrt(d)
    return matmul(row_softmax(logits), v)


def _weights(params):
    return {"w_q": np.array(params.w_q), "w_k": np.array(params.w_k), "w_v": np.array(params.w_v)}


def _perturbed_outputs(weights, field, r, c, h, features):
    plus = {k: w.copy() for k, w in weights.items()}
    minus = {k: w.copy() for k, w in weights.items()}
    plus[field][r, c] += h
    minus[field][r, c] -= h
    return reference_forward(**plus, features=features), reference_forward(**minus, features=features)


def fd_jacobian(params, seq, which: str, column: int = 0, cfg: FdConfig = FdConfig()) -> np.ndarray:
    """Central-difference Jacobian of scalar outputs w.r.t. one weight column.

    Returns an ``S x d`` matrix whose row j is d f[j] / d W[:, column].
    """
    if which not in WEIGHTS:
        raise ContractError(f"unknown weight selector {which!r}; expected one of {WEIGHTS}")
    features = np.asarray(seq, dtype=np.float64)
    weights = _weights(params)
    field = _FIELD[which]
    w = weights[field]
    if w.shape[0] != features.shape[1]:
        raise ContractError(f"sequence width {features.shape[1]} does not match d={w.shape[0]}")
    if weights["w_v"].shape[1] != 1:
        raise ContractError("fd_jacobian compares scalar outputs; use fd_full_jacobian for v > 1")
    if not 0 <= column < w.shape[1]:
        raise ContractError(f"column {column} out of range for {field} with {w.shape[1]} columns")
    h = cfg.step
    jac = np.empty((features.shape[0], w.shape[0]))
    for r in range(w.shape[0]):
        fp, fm = _perturbed_outputs(weights, field, r, column, h, features)
        jac[:, r] = (fp[:, 0] - fm[:, 0]) / (2 * h)
    return jac


def fd_full_jacobian(params, seq, cfg: FdConfig = FdConfig()) -> np.ndarray:
    """Central-difference Jacobian of every output entry w.r.t. every weight.

    Shape ``(S*v, n_params)``; rows ordered (element, channel), columns ordered
    Wv, Wq, Wk each row-major.
    """
    features = np.asarray(seq, dtype=np.float64)
    weights = _weights(params)
    h = cfg.step
    cols = []
    for field in ("w_v", "w_q", "w_k"):
        w = weights[field]
        for r in range(w.shape[0]):
            for c in range(w.shape[1]):
                fp, fm = _perturbed_outputs(weights, field, r, c, h, features)
                cols.append(((fp - fm) / (2 * h)).ravel())
    return np.stack(cols, axis=1)


def reference_loss(w_q, w_k, w_v, batch) -> float:
    total, rows = 0.0, 0
    for item in batch:
        out = reference_forward(w_q, w_k, w_v, item.features)
        diff = out - item.target
        for row in diff:
            total += 0.5 * sum(float(x) * float(x) for x in row)
        rows += diff.shape[0]
    return total / rows


def fd_loss_grad(params, batch, cfg: FdConfig = FdConfig()):
    """Central-difference gradient of the row-averaged squared loss.

    Returns a :class:`attent.learner.FlatGradient` (only the container type is
    shared with the learner).
    """
    from .learner import FlatGradient

    if len(batch) == 0:
        raise ContractError("batch is empty")
    weights = _weights(params)
    h = cfg.step
    grads = {}
    for field, w in weights.items():
        g = np.empty_like(w)
        for r in range(w.shape[0]):
            for c in range(w.shape[1]):
                plus = {k: x.copy() for k, x in weights.items()}
                minus = {k: x.copy() for k, x in weights.items()}
                plus[field][r, c] += h
                minus[field][r, c] -= h
                g[r, c] = (reference_loss(**plus, batch=batch) - reference_loss(**minus, batch=batch)) / (2 * h)
        grads[field] = g
    return FlatGradient(g_wq=grads["w_q"], g_wk=grads["w_k"], g_wv=grads["w_v"])


MAX_BRUTE_N = 20


def set_objective(scores, subset) -> float:
    """Frobenius norm of the stacked residuals of ``subset``."""
    return float(np.sqrt(sum(float(scores[i]) ** 2 for i in subset)))


def brute_select(scores, m: int) -> list[int]:
    """Best m-subset by exhaustive enumeration; lexicographically first on ties."""
    n = len(scores)
    if n > MAX_BRUTE_N:
        raise ContractError(f"brute_select is limited to N <= {MAX_BRUTE_N}, got {n}")
    if not 1 <= m <= n:
        raise ContractError(f"subset size {m} out of range for N={n}")
    best, best_val = None, -np.inf
    # combinations() yields subsets in lexicographic order, so strict > keeps the first.
    for subset in itertools.combinations(range(n), m):
        val = set_objective(scores, subset)
        if val > best_val:
            best, best_val = subset, val
    return list(best)


def relative_error(actual, expected, abs_floor: float = 0.0) -> float:
    """max |a - e| / max(|e|, abs_floor) over all entries."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    denom = np.maximum(np.abs(expected), abs_floor)
    err = np.abs(actual - expected)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(denom > 0, err / np.where(denom > 0, denom, 1.0), np.where(err > 0, np.inf, 0.0))
    return float(rel.max()) if rel.size else 0.0


def within(actual, expected, rel: float, abs_tol: float = 0.0) -> bool:
    """Entrywise ``|a - e| <= max(rel * |e|, abs_tol)``."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    return bool(np.all(np.abs(actual - expected) <= np.maximum(rel * np.abs(expected), abs_tol)))
