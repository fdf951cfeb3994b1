"""Dense matrix primitives, stable row softmax and the seeded random source.

Matrices are plain ``float64`` numpy arrays. Every public helper returns a new
array and never mutates its inputs.
"""

from __future__ import annotations

import numpy as np

# Finite stand-in for -inf in attention masks; exp() of it underflows to 0.
MASK_VALUE = -1e30

EULER_GAMMA = 0.5772156649015329


class ContractError(ValueError):
    """Raised when an operation is called outside its preconditions."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ContractError(f"{name} must have positive dimensions, got {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def row_softmax(a) -> np.ndarray:
    """Softmax over the last axis with per-row max subtraction.

    Works on any array with at least one column; leading axes are batch axes.
    A row made only of mask sentinels has no valid entry and is rejected.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 1 or a.shape[-1] < 1:
        raise ContractError("row_softmax needs at least one column")
    row_max = a.max(axis=-1, keepdims=True)
    if np.any(row_max <= MASK_VALUE / 2):
        raise ContractError("row_softmax received a fully masked row")
    e = np.exp(a - row_max)
    return e / e.sum(axis=-1, keepdims=True)


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


class RandomSource:
    """Seeded, counter-based random stream (Philox).

    The same seed yields the same draws on every platform. Instances are not
    meant to be shared; use :meth:`child` to derive independent streams.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ContractError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.Philox(seed))

    def child(self, key: int) -> "RandomSource":
        """Independent stream derived from ``(seed, key)``; does not consume draws."""
        derived = np.random.SeedSequence([self.seed, int(key)]).generate_state(2, np.uint64)
        return RandomSource(int(derived[0]))

    def uniform(self, size=None):
        """Uniform draws on the open interval (0, 1)."""
        u = self._gen.random(size)
        # random() is [0, 1); redraw the (astronomically rare) exact zeros.
        if size is None:
            while u == 0.0:
                u = self._gen.random()
            return float(u)
        zero = u == 0.0
        while np.any(zero):
            u[zero] = self._gen.random(int(zero.sum()))
            zero = u == 0.0
        return u

    def normal(self, size=None, scale: float = 1.0):
        return self._gen.normal(0.0, scale, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def gumbel_transform(u):
    return -np.log(-np.log(u))


def gumbel(source: RandomSource, size=None):
    """Standard Gumbel(0, 1) draw(s) via ``-ln(-ln(u))``."""
    u = source.uniform(size)
    if size is None:
        return float(gumbel_transform(u))
    return gumbel_transform(u)
