"""Analytic-vs-oracle checks behind ``attent verify``."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import antk, learner, oracle, teaching
from .learner import AttentionParams, LabeledSequence
from .numerics import RandomSource


@dataclass
class CheckResult:
    name: str
    instances: int
    max_error: float
    tolerance: float
    passed: bool
    seconds: float
    detail: str = ""

    def as_dict(self):
        return asdict(self)


def _tol_ratio(actual, expected, rel, abs_tol):
    """Largest |a - e| / max(rel |e|, abs_tol); <= 1 means within tolerance."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    allowed = np.maximum(rel * np.abs(expected), abs_tol)
    return float(np.max(np.abs(actual - expected) / allowed)) if actual.size else 0.0


def _random_dims(src: RandomSource, dmax=4, pmax=4, smax=6):
    d = 1 + int(src.permutation(dmax)[0])
    p = 1 + int(src.permutation(pmax)[0])
    s = 1 + int(src.permutation(smax)[0])
    return d, p, s


def _instance(src: RandomSource, v: int = 1):
    d, p, s = _random_dims(src)
    params = AttentionParams.init(d, p, v, src)
    return params, src.normal((s, d))


def check_jacobians(n: int = 200, seed: int = 0, rel: float = 1e-6, abs_tol: float = 1e-8):
    """Closed-form column Jacobians vs central differences; one result per weight."""
    src = RandomSource(seed)
    worst = {"wv": 0.0, "wq": 0.0, "wk": 0.0}
    abs_err = dict(worst)
    t0 = time.perf_counter()
    for _ in range(n):
        params, x = _instance(src)
        pairs = [("wv", 0, learner.jac_value(params, x))]
        for i in range(params.p):
            pairs.append(("wq", i, learner.jac_query_col(params, x, i)))
            pairs.append(("wk", i, learner.jac_key_col(params, x, i)))
        for which, i, analytic in pairs:
            fd = oracle.fd_jacobian(params, x, which, i)
            worst[which] = max(worst[which], _tol_ratio(analytic, fd, rel, abs_tol))
            abs_err[which] = max(abs_err[which], float(np.max(np.abs(analytic - fd))))
    elapsed = time.perf_counter() - t0
    names = {"wv": "jac_value", "wq": "jac_query_col", "wk": "jac_key_col"}
    return [
        CheckResult(names[w], n, abs_err[w], rel, worst[w] <= 1.0, elapsed,
                    f"worst error / allowed = {worst[w]:.3g} (rel {rel:g}, abs {abs_tol:g})")
        for w in ("wv", "wq", "wk")
    ]


def _random_batch(src: RandomSource, vmax: int = 3, nmax: int = 8):
    d, p, s = _random_dims(src)
    v = 1 + int(src.permutation(vmax)[0])
    n = 1 + int(src.permutation(nmax)[0])
    params = AttentionParams.init(d, p, v, src)
    batch = [LabeledSequence(src.normal((s, d)), src.normal((s, v))) for _ in range(n)]
    return params, batch


def check_backward_fd(n: int = 100, seed: int = 1, rel: float = 1e-6, abs_tol: float = 1e-8):
    src = RandomSource(seed)
    worst, abs_err = 0.0, 0.0
    t0 = time.perf_counter()
    for _ in range(n):
        params, batch = _random_batch(src)
        g, _ = learner.backward(params, batch)
        ref = oracle.fd_loss_grad(params, batch)
        worst = max(worst, _tol_ratio(g.flat(), ref.flat(), rel, abs_tol))
        abs_err = max(abs_err, float(np.max(np.abs(g.flat() - ref.flat()))))
    return CheckResult("backward_vs_fd", n, abs_err, rel, worst <= 1.0, time.perf_counter() - t0,
                       f"worst error / allowed = {worst:.3g}")


def jacobian_contraction(params: AttentionParams, item: LabeledSequence):
    """Loss gradient of one v=1 sequence assembled from the column Jacobians."""
    x, y = item.features, item.target
    s = x.shape[0]
    r = (learner.forward_self(params, x) - y)[:, 0] / s
    g_wv = (r @ learner.jac_value(params, x))[:, None]
    g_wq = np.stack([r @ learner.jac_query_col(params, x, i) for i in range(params.p)], axis=1)
    g_wk = np.stack([r @ learner.jac_key_col(params, x, i) for i in range(params.p)], axis=1)
    return learner.FlatGradient(g_wq=g_wq, g_wk=g_wk, g_wv=g_wv)


def check_backward_contraction(n: int = 100, seed: int = 2, tol: float = 1e-10):
    src = RandomSource(seed)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(n):
        params, x = _instance(src)
        item = LabeledSequence(x, src.normal((x.shape[0], 1)))
        g, _ = learner.backward(params, [item])
        ref = jacobian_contraction(params, item)
        worst = max(worst, float(np.max(np.abs(g.flat() - ref.flat()))))
    return CheckResult("backward_vs_jacobians", n, worst, tol, worst <= tol, time.perf_counter() - t0)


def check_antk_pair(n: int = 50, seed: int = 3, rel: float = 1e-5, abs_tol: float = 1e-8):
    src = RandomSource(seed)
    worst, abs_err = 0.0, 0.0
    t0 = time.perf_counter()
    for _ in range(n):
        d = 1 + int(src.permutation(3)[0])
        p = 1 + int(src.permutation(2)[0])
        v = 1 + int(src.permutation(2)[0])
        params = AttentionParams.init(d, p, v, src)
        a = src.normal((1 + int(src.permutation(4)[0]), d))
        b = src.normal((1 + int(src.permutation(4)[0]), d))
        k = antk.antk_pair(params, a, b, learner.JacobianCache()).values
        ref = oracle.fd_full_jacobian(params, a) @ oracle.fd_full_jacobian(params, b).T
        worst = max(worst, _tol_ratio(k, ref, rel, abs_tol))
        abs_err = max(abs_err, float(np.max(np.abs(k - ref))))
    return CheckResult("antk_pair_vs_fd", n, abs_err, rel, worst <= 1.0, time.perf_counter() - t0,
                       f"worst error / allowed = {worst:.3g}")


def check_selection(n: int = 500, seed: int = 4):
    src = RandomSource(seed)
    mismatches = 0
    t0 = time.perf_counter()
    for _ in range(n):
        size = 1 + int(src.permutation(10)[0])
        m = 1 + int(src.permutation(size)[0])
        scores = np.abs(src.normal(size))
        if teaching.select_hard(scores, m) != oracle.brute_select(scores, m):
            mismatches += 1
    return CheckResult("select_hard_vs_brute_force", n, float(mismatches), 0.0, mismatches == 0,
                       time.perf_counter() - t0, f"{mismatches} mismatching instances")


def run_all(seed: int = 0, scale: float = 1.0) -> list[CheckResult]:
    """Every oracle comparison; ``scale`` shrinks instance counts for quick runs."""

    def k(count):
        return max(1, int(round(count * scale)))

    results = check_jacobians(k(200), seed)
    results.append(check_backward_fd(k(100), seed + 1))
    results.append(check_backward_contraction(k(100), seed + 2))
    results.append(check_antk_pair(k(50), seed + 3))
    results.append(check_selection(k(500), seed + 4))
    return results
