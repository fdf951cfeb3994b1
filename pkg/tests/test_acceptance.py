"""Acceptance criteria, one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line; the lines are printed in the terminal
summary (see conftest.py) and immediately with ``pytest -s``.
"""

import json
import time

import numpy as np
import pytest
from scipy.stats import chi2

from attent import verify
from attent.antk import antk_gram, loss_reduction_bound, track_convergence
from attent.cli import run
from attent.learner import (
    AttentionParams, JacobianCache, LabeledSequence, StackedBatch, backward, forward_masked, forward_self,
    jac_value, sgd_step,
)
from attent.numerics import RandomSource
from attent.tasks import TaskSpec, gen_teacher, generate, load_jsonl, save_jsonl
from attent.teaching import (
    FIXED, HARD, RANDOM, SOFT, IntervalSchedule, RatioSchedule, SelectionStrategy, TeachingConfig, full_batch_sgd,
    preset, select_hard, select_random, select_soft, teach_loop,
)
from conftest import ACCEPTANCE

STUDENT_STREAM = 99


def record(name, ok, detail):
    ACCEPTANCE[name] = (bool(ok), detail)
    print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def student(seed, d=4, p=4, v=1):
    return AttentionParams.init(d, p, v, RandomSource(seed).child(STUDENT_STREAM))


def dims(src, dmax=4, pmax=4, smax=6):
    return tuple(1 + int(src.permutation(k)[0]) for k in (dmax, pmax, smax))


def test_01_jacobians_vs_finite_differences():
    t0 = time.perf_counter()
    results = verify.check_jacobians(200, seed=0, rel=1e-6, abs_tol=1e-8)
    elapsed = time.perf_counter() - t0
    ok = all(r.passed for r in results) and elapsed < 30
    detail = "; ".join(f"{r.name} max abs err {r.max_error:.2e}" for r in results) + f"; {elapsed:.1f}s"
    record("1. gradient fidelity", ok, detail)


def test_02_backward_fidelity():
    t0 = time.perf_counter()
    fd = verify.check_backward_fd(100, seed=1, rel=1e-6, abs_tol=1e-8)
    contraction = verify.check_backward_contraction(100, seed=2, tol=1e-10)
    elapsed = time.perf_counter() - t0
    ok = fd.passed and contraction.passed and elapsed < 30
    record("2. backward fidelity", ok,
           f"vs FD {fd.detail}; vs Jacobian contraction max err {contraction.max_error:.1e}; {elapsed:.1f}s")


def test_03_structural_properties():
    src = RandomSource(30)
    perm_err = jac_err = grad_err = 0.0
    dup_fwd = dup_grad = 0.0
    causal_breaks = 0
    for _ in range(100):
        d, p, s = dims(src)
        v = 1 + int(src.permutation(3)[0])
        params = AttentionParams.init(d, p, v, src)
        x, y = src.normal((s, d)), src.normal((s, v))
        perm = src.permutation(s)
        # permutation equivariance
        perm_err = max(perm_err, np.max(np.abs(forward_self(params, x[perm]) - forward_self(params, x)[perm])))
        g1, _ = backward(params, [LabeledSequence(x, y)])
        g2, _ = backward(params, [LabeledSequence(x[perm], y[perm])])
        grad_err = max(grad_err, np.max(np.abs(g1.flat() - g2.flat())))
        p1 = AttentionParams(params.w_q, params.w_k, params.w_v[:, :1])
        jac_err = max(jac_err, np.max(np.abs(jac_value(p1, x[perm]) - jac_value(p1, x)[perm])))
        # length scaling: every row duplicated
        xd, yd = np.repeat(x, 2, axis=0), np.repeat(y, 2, axis=0)
        dup_fwd = max(dup_fwd, np.max(np.abs(forward_self(params, xd)[::2] - forward_self(params, x))))
        g3, _ = backward(params, [LabeledSequence(xd, yd)])
        dup_grad = max(dup_grad, np.max(np.abs(g3.flat() - g1.flat())))
        # causality: perturb every row after j
        j = int(src.permutation(s)[0])
        xp = x.copy()
        xp[j + 1:] += src.normal((s - j - 1, d))
        if not np.array_equal(forward_masked(params, x)[: j + 1], forward_masked(params, xp)[: j + 1]):
            causal_breaks += 1
    ok = max(perm_err, jac_err, grad_err, dup_fwd) <= 1e-12 and dup_grad <= 1e-10 and causal_breaks == 0
    record("3. structural gradient properties", ok,
           f"permutation fwd {perm_err:.1e} jac {jac_err:.1e} grad {grad_err:.1e} (tol 1e-12); "
           f"duplication fwd {dup_fwd:.1e} grad {dup_grad:.1e} (tol 1e-10); causality breaks {causal_breaks}")


def test_04_antk_correctness():
    pair = verify.check_antk_pair(50, seed=3, rel=1e-5)
    src = RandomSource(40)
    sym, min_eig = 0.0, np.inf
    for _ in range(50):
        d, p, s = dims(src)
        v = 1 + int(src.permutation(2)[0])
        params = AttentionParams.init(d, p, v, src)
        n = 1 + int(src.permutation(6)[0])
        gram = antk_gram(params, [src.normal((s, d)) for _ in range(n)], JacobianCache())
        sym = max(sym, gram.symmetry_error())
        min_eig = min(min_eig, gram.min_eigenvalue())
    ok = pair.passed and sym <= 1e-10 and min_eig >= -1e-8
    record("4. ANTK correctness", ok,
           f"pair vs FD {pair.detail}; Gram asymmetry {sym:.1e}; min eigenvalue {min_eig:.2e}")


def test_05_kernel_stabilizes():
    t0 = time.perf_counter()
    ds, _ = gen_teacher(TaskSpec(n=64, s=4, d=4, p=4, v=1, seed=0))
    data = StackedBatch.of(ds.items)
    steps = 2000
    marks = sorted(set(np.linspace(0, steps, 40).round().astype(int).tolist()))
    params, checkpoints = student(0), []
    for t in range(steps + 1):
        if t in marks:
            checkpoints.append(params)
        if t < steps:
            grad, _ = backward(params, data)
            params = sgd_step(params, grad, 0.5)
    trace = track_convergence(checkpoints, [it.features for it in ds.items[:16]], steps=marks)
    head, tail = trace.quarter_means()
    elapsed = time.perf_counter() - t0
    ok = len(marks) == 40 and tail <= 0.2 * head and elapsed < 300
    record("5. kernel stabilization", ok,
           f"head mean {head:.3g}, tail mean {tail:.3g}, tail/head {tail / head:.3f} (need <= 0.2); {elapsed:.1f}s")


def test_06_loss_decrease_below_bound():
    ds, _ = gen_teacher(TaskSpec(n=64, s=4, d=4, p=4, v=1, seed=0))
    init = student(0)
    gram = antk_gram(init, [it.features for it in ds.items], JacobianCache())
    deriv = np.concatenate([forward_self(init, it.features) - it.target for it in ds.items])
    _, eta_max, _ = loss_reduction_bound(gram, deriv, 1.0)
    eta = eta_max / 4
    _, losses = full_batch_sgd(init, ds.items, eta, 500)
    losses = [backward(init, ds.items)[1]] + losses
    increases = sum(b > a + 1e-12 for a, b in zip(losses, losses[1:]))
    frac = 1 - increases / 500
    record("6. loss decrease below the bound", frac >= 0.99,
           f"eta {eta:.3g}; non-increasing on {frac:.1%} of 500 steps; loss {losses[0]:.3g} -> {losses[-1]:.3g}")


def _scaled_chisquare(counts, trials, m):
    """Pearson statistic for per-index inclusion counts of m-subsets.

    Inclusions are drawn without replacement, so the raw statistic has mean
    N - m instead of N - 1; rescaling restores the usual chi-square(N - 1) reference.
    """
    n = len(counts)
    expected = trials * m / n
    stat = float(np.sum((counts - expected) ** 2 / expected)) * (n - 1) / (n - m)
    return chi2.sf(stat, n - 1)


def test_07_selection():
    brute = verify.check_selection(500, seed=4)
    src = RandomSource(70)
    cold_mismatch = 0
    for _ in range(100):
        n = 2 + int(src.permutation(9)[0])
        m = 1 + int(src.permutation(n)[0])
        scores = np.abs(src.normal(n)) + 1e-3
        if len(set(scores.tolist())) < n:
            continue
        if select_soft(scores, m, 1e-9, src) != select_hard(scores, m):
            cold_mismatch += 1
    n, m, trials = 10, 3, 100_000
    soft_counts, rand_counts = np.zeros(n), np.zeros(n)
    equal = np.ones(n)
    s_src, r_src = RandomSource(71), RandomSource(72)
    for _ in range(trials):
        soft_counts[select_soft(equal, m, 1.0, s_src)] += 1
        rand_counts[select_random(n, m, r_src)] += 1
    p_soft = _scaled_chisquare(soft_counts, trials, m)
    p_rand = _scaled_chisquare(rand_counts, trials, m)
    ok = brute.passed and cold_mismatch == 0 and p_soft > 0.01 and p_rand > 0.01
    record("7. selection optimality", ok,
           f"hard vs brute force {brute.detail}; T=1e-9 soft vs hard mismatches {cold_mismatch}/100; "
           f"uniformity p soft {p_soft:.3f} random {p_rand:.3f} (need > 0.01)")


def _iterations_to_tenth(seed, kind, max_iters=400):
    ds, _ = gen_teacher(TaskSpec(n=256, s=4, d=4, p=4, v=1, seed=seed))
    cfg = TeachingConfig(strategy=SelectionStrategy(kind), ratio=RatioSchedule(FIXED, r=0.5),
                         interval=IntervalSchedule(FIXED, k=1), eta=0.5, epsilon=1e-12,
                         max_iters=max_iters, seed=seed)
    params = student(seed)
    _, trace = teach_loop(params, ds.items, cfg, timing=False)
    hit = trace.iterations_to(0.1 * trace.initial_loss)
    return max_iters + 1 if hit is None else hit


def test_08_hard_beats_random():
    t0 = time.perf_counter()
    hard = [_iterations_to_tenth(s, HARD) for s in range(10)]
    rand = [_iterations_to_tenth(s, RANDOM) for s in range(10)]
    mh, mr = float(np.median(hard)), float(np.median(rand))
    elapsed = time.perf_counter() - t0
    ok = mh < mr and mh / mr < 0.9 and elapsed < 600
    record("8. teaching efficiency", ok,
           f"median iterations hard {mh:g} vs random {mr:g}, ratio {mh / mr:.2f} (need < 0.9); {elapsed:.1f}s")


def test_09_full_ratio_is_plain_sgd():
    ds, _ = gen_teacher(TaskSpec(n=64, s=4, d=4, p=4, v=1, seed=9))
    init = student(9)
    cfg = TeachingConfig(strategy=SelectionStrategy(HARD), ratio=RatioSchedule(FIXED, r=1.0),
                         eta=0.5, epsilon=1e-300, max_iters=200, seed=9)
    params, trace = teach_loop(init, ds.items, cfg, timing=False)
    ref, losses = full_batch_sgd(init, ds.items, 0.5, 200)
    ok = len(trace.rows) == 200 and params == ref and trace.column("full_loss") == losses
    record("9. no-op equivalence", ok, f"{len(trace.rows)} steps, params identical: {params == ref}")


def _run_twice(tmp_path, args):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"{args[0]}_{tag}"
        assert run([*args, "--out", str(out), "--seed", "11"]) == 0
        outs.append({p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    return outs


def test_10_reproducibility_and_io(tmp_path, capsys):
    small = ["--set", "task.n=16", "--set", "task.s=3", "--set", "task.d=3", "--set", "task.p=2"]
    commands = [
        ["gen", *small],
        ["teach", *small, "--set", "teaching.preset=vit", "--set", "teaching.horizon=5", "--set", "teaching.max_iters=30"],
        ["ntk", *small, "--set", "ntk.steps=40", "--set", "ntk.checkpoint_every=10", "--set", "ntk.probes=4"],
        ["ablate", *small, "--set", "teaching.max_iters=10", "--set", "teaching.r=0.5"],
        ["verify", "--set", "verify.scale=0.05"],
    ]
    mismatched = []
    for args in commands:
        a, b = _run_twice(tmp_path, args)
        if not a or a != b:
            mismatched.append(args[0])
    capsys.readouterr()

    ds = generate(TaskSpec(n=20, s=5, d=3, p=2, v=2, noise_sd=0.1, seed=12))
    save_jsonl(ds, tmp_path / "rt.jsonl")
    back = load_jsonl(tmp_path / "rt.jsonl")
    roundtrip = back == ds and all(
        x.features.tobytes() == y.features.tobytes() and x.target.tobytes() == y.target.tobytes()
        for x, y in zip(ds.items, back.items)
    )

    teach_ds, _ = gen_teacher(TaskSpec(n=20, s=3, d=3, p=2, v=1, seed=13))
    init = AttentionParams.init(3, 2, 1, RandomSource(13).child(STUDENT_STREAM))
    long_run = dict(eta=0.2, epsilon=1e-300, max_iters=60)
    _, llm = teach_loop(init, teach_ds.items, preset("LlmStyle", horizon=8, **long_run), timing=False)
    _, vit = teach_loop(init, teach_ds.items, preset("VitStyle", horizon=8, **long_run), timing=False)
    llm_r, vit_r = llm.column("ratio"), vit.column("ratio")
    llm_ok = llm_r[0] == 1.0 and set(llm_r[1:]) == {0.7}
    vit_ok = vit_r[0] == 0.2 and vit_r[-1] == 0.8 and max(vit_r) == 0.8

    ok = not mismatched and roundtrip and llm_ok and vit_ok
    record("10. reproducibility and I/O", ok,
           f"byte-identical reruns: {'all 5 commands' if not mismatched else 'differ: ' + ','.join(mismatched)}; "
           f"JSONL round trip exact: {roundtrip}; LlmStyle {llm_r[0]} -> {llm_r[-1]}; VitStyle {vit_r[0]} -> {vit_r[-1]}")
