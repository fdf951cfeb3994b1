"""Empirical attention neural tangent kernel.

The kernel between output row ``i`` of sequence ``a`` and output row ``j`` of
sequence ``b`` is the inner product of their parameter Jacobians, summed over
every entry of Wv, Wq and Wk. Grams are dense; cost grows as O(N^2) in the
number of probe sequences, which is fine for a few dozen probes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence as Seq

import numpy as np

from .learner import AttentionParams, JacobianCache, jacobian_set
from .numerics import ContractError, frobenius_norm

FINAL_CHECKPOINT = "final"
REFERENCE_KINDS = (FINAL_CHECKPOINT,)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Kernel block plus a (sequence, element, channel) label for each row/col."""

    values: np.ndarray
    row_index: np.ndarray
    col_index: np.ndarray

    @property
    def shape(self):
        return self.values.shape

    def symmetry_error(self) -> float:
        return float(np.max(np.abs(self.values - self.values.T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.values + self.values.T))[0])

    def is_psd(self, sym_tol: float = 1e-10, eig_tol: float = 1e-8) -> bool:
        if self.values.shape[0] != self.values.shape[1]:
            return False
        return self.symmetry_error() <= sym_tol and self.min_eigenvalue() >= -eig_tol


def _index(seq_ids, lengths, v) -> np.ndarray:
    rows = [(n, e, c) for n, s in zip(seq_ids, lengths) for e in range(s) for c in range(v)]
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def _flat_jacobian(params, seq, cache):
    return jacobian_set(params, seq, cache).flat()


def antk_pair(params: AttentionParams, a, b, cache: JacobianCache | None = None) -> KernelMatrix:
    ja = _flat_jacobian(params, a, cache)
    jb = _flat_jacobian(params, b, cache)
    return KernelMatrix(
        values=ja @ jb.T,
        row_index=_index([0], [np.shape(a)[0]], params.v),
        col_index=_index([1], [np.shape(b)[0]], params.v),
    )


def antk_gram(params: AttentionParams, data: Seq, cache: JacobianCache | None = None) -> KernelMatrix:
    """Gram over all output rows of ``data``; blocks in row-major pair order."""
    if len(data) == 0:
        raise ContractError("antk_gram needs at least one sequence")
    jacs = [_flat_jacobian(params, x, cache) for x in data]
    sizes = [j.shape[0] for j in jacs]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    gram = np.empty((offsets[-1], offsets[-1]))
    for r, jr in enumerate(jacs):
        for c, jc in enumerate(jacs):
            gram[offsets[r]:offsets[r + 1], offsets[c]:offsets[c + 1]] = jr @ jc.T
    idx = _index(range(len(data)), [np.shape(x)[0] for x in data], params.v)
    return KernelMatrix(values=gram, row_index=idx, col_index=idx)


def kernel_diff(a: KernelMatrix, b: KernelMatrix) -> float:
    if a.shape != b.shape:
        raise ContractError(f"kernel shapes differ: {a.shape} vs {b.shape}")
    return frobenius_norm(a.values - b.values)


@dataclass
class KernelTrace:
    steps: list[int] = field(default_factory=list)
    diffs: list[float] = field(default_factory=list)
    kernels: list[KernelMatrix | None] = field(default_factory=list)

    def append(self, step: int, diff: float, kernel: KernelMatrix | None = None):
        if self.steps and step <= self.steps[-1]:
            raise ContractError(f"trace steps must increase; got {step} after {self.steps[-1]}")
        self.steps.append(int(step))
        self.diffs.append(float(diff))
        self.kernels.append(kernel)

    def quarter_means(self) -> tuple[float, float]:
        """Mean diff over the first and last quarter of checkpoints."""
        n = len(self.diffs)
        q = max(1, n // 4)
        return float(np.mean(self.diffs[:q])), float(np.mean(self.diffs[-q:]))


def track_convergence(
    checkpoints: Seq[AttentionParams],
    probes: Seq,
    reference: str = FINAL_CHECKPOINT,
    steps: Seq[int] | None = None,
    keep_kernels: bool = False,
) -> KernelTrace:
    """Frobenius distance of each checkpoint's probe Gram to the reference Gram.

    The reference is the Gram at the final checkpoint (the converged kernel).
    """
    if len(checkpoints) < 2:
        raise ContractError("track_convergence needs at least two checkpoints")
    if len(probes) == 0:
        raise ContractError("track_convergence needs at least one probe sequence")
    if reference not in REFERENCE_KINDS:
        raise ContractError(f"unknown reference kind {reference!r}")
    if steps is None:
        steps = list(range(len(checkpoints)))
    if len(steps) != len(checkpoints):
        raise ContractError("steps and checkpoints differ in length")
    cache = JacobianCache()
    grams = [antk_gram(p, probes, cache) for p in checkpoints]
    ref = grams[-1]
    trace = KernelTrace()
    for step, gram in zip(steps, grams):
        trace.append(step, kernel_diff(gram, ref), gram if keep_kernels else None)
    return trace


def loss_reduction_bound(gram: KernelMatrix, grads, eta: float, tau: float = 1.0):
    """Step-size ceiling and guaranteed loss decrease for a smooth convex loss.

    ``gamma_hat`` (max absolute Gram entry) estimates the kernel bound.
    Returns ``(gamma_hat, eta_max, bound)`` with ``eta_max = 1/(2 tau gamma_hat)``
    and ``bound = -(eta gamma_hat / 2) * |mean per-row loss derivative|^2``.
    """
    gamma_hat = float(np.max(np.abs(gram.values)))
    eta_max = np.inf if gamma_hat == 0 else 1.0 / (2.0 * tau * gamma_hat)
    g = np.asarray(grads, dtype=np.float64)
    if g.ndim <= 1:
        g = g.reshape(-1, 1)
    mean = g.reshape(-1, g.shape[-1]).mean(axis=0)
    bound = -(eta * gamma_hat / 2.0) * float(mean @ mean)
    return gamma_hat, float(eta_max), bound
