from __future__ import annotations

import numpy as np
import pytest

from hasanet.demo import generate_audio
from hasanet.hearing import builtin_pattern_bank


@pytest.fixture(scope="session")
def bank():
    return builtin_pattern_bank()


@pytest.fixture(scope="session")
def audio(tmp_path_factory):
    """Six train and two test clean utterances plus seven synthetic noises on disk."""
    return generate_audio(tmp_path_factory.mktemp("audio"), n_train=6, n_test=2, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ------------------------------------------------------------

_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.failed:
        _acceptance[name] = "FAIL"
    elif report.when == "call" and name not in _acceptance:
        _acceptance[name] = "PASS"
    elif report.skipped:
        _acceptance[name] = "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    from test_acceptance import CRITERIA

    terminalreporter.section("acceptance criteria")
    for name, label in CRITERIA.items():
        status = _acceptance.get(name)
        if status:
            terminalreporter.write_line(f"{status}  {label}")
