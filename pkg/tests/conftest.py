import numpy as np
import pytest

from attent.learner import AttentionParams, LabeledSequence
from attent.numerics import RandomSource

# name -> (passed, detail), filled by the acceptance tests
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def src():
    return RandomSource(1234)


def random_params(src, d=3, p=2, v=1, scale=1.0):
    return AttentionParams.init(d, p, v, src, scale=scale)


def random_item(src, s, d, v):
    return LabeledSequence(src.normal((s, d)), src.normal((s, v)))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0].rstrip("."))):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
