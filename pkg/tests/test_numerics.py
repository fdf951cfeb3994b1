import math

import mpmath
import numpy as np
import pytest

from attent.numerics import (
    EULER_GAMMA, MASK_VALUE, ContractError, RandomSource, frobenius_norm, gumbel, gumbel_transform,
    matmul, row_softmax,
)


def test_matmul_identity_and_basis_column():
    a = np.array([[1.5, -2.0], [0.25, 7.0]])
    assert np.array_equal(matmul(np.eye(2), a), a)
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[1], [0]]), [[1], [3]])


def test_matmul_matches_triple_loop(src):
    a, b = src.normal((3, 4)), src.normal((4, 2))
    ref = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                ref[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(matmul(a, b), ref, rtol=1e-14, atol=1e-14)


def test_matmul_rejects_mismatch():
    with pytest.raises(ContractError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_softmax_uniform_and_two_logit():
    np.testing.assert_allclose(row_softmax([[0.0, 0.0, 0.0]]), [[1 / 3] * 3], rtol=1e-15)
    for c in (-50.0, 0.0, 3.7, 400.0):
        np.testing.assert_allclose(row_softmax([[c, c + math.log(3)]]), [[0.25, 0.75]], rtol=1e-12)


def test_softmax_matches_extended_precision(src):
    x = src.normal(4) * 5
    with mpmath.workdps(40):
        e = [mpmath.exp(mpmath.mpf(float(t))) for t in x]
        z = mpmath.fsum(e)
        ref = np.array([float(t / z) for t in e])
    np.testing.assert_allclose(row_softmax(x[None, :])[0], ref, rtol=1e-14)


def test_softmax_rows_sum_to_one(src):
    a = src.normal((50, 7)) * 30
    assert np.max(np.abs(row_softmax(a).sum(axis=1) - 1)) <= 1e-12


def test_softmax_masked_entries_vanish():
    out = row_softmax([[0.3, MASK_VALUE, 1.0]])
    assert out[0, 1] == 0.0


def test_softmax_rejects_empty_and_fully_masked():
    with pytest.raises(ContractError):
        row_softmax(np.zeros((2, 0)))
    with pytest.raises(ContractError):
        row_softmax([[MASK_VALUE, MASK_VALUE]])


def test_frobenius():
    assert frobenius_norm(np.zeros((2, 2))) == 0.0
    assert frobenius_norm([[3.0, 4.0]]) == 5.0


def test_frobenius_matches_accumulation(src):
    a = src.normal((5, 3))
    acc = 0.0
    for row in a:
        for x in row:
            acc += x * x
    assert frobenius_norm(a) == pytest.approx(math.sqrt(acc), rel=1e-14)


def test_gumbel_fixed_point():
    assert gumbel_transform(1 / math.e) == pytest.approx(0.0, abs=1e-15)


def test_gumbel_mean_is_euler_gamma():
    draws = gumbel(RandomSource(5), 10**6)
    assert abs(draws.mean() - EULER_GAMMA) < 0.01


def test_same_seed_same_draws():
    a, b = RandomSource(99), RandomSource(99)
    assert [gumbel(a) for _ in range(100)] == [gumbel(b) for _ in range(100)]


def test_child_streams_are_stable_and_distinct():
    root = RandomSource(3)
    assert np.array_equal(root.child(1).normal(5), RandomSource(3).child(1).normal(5))
    assert not np.array_equal(root.child(1).normal(5), root.child(2).normal(5))


def test_uniform_open_interval():
    u = RandomSource(0).uniform(10000)
    assert np.all((u > 0) & (u < 1))


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_seed_range(seed):
    with pytest.raises(ContractError):
        RandomSource(seed)
