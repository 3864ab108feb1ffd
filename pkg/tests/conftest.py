"""Shared fixtures plus the acceptance-criteria summary hook.

Tests marked ``@pytest.mark.acceptance(n, label)`` are the final gate; the
terminal summary prints one PASS/FAIL line per criterion so the verdict is
readable without scrolling the full log.
"""
import numpy as np
import pytest

import onebitsim as ob

_ACCEPTANCE_KEY = "_acceptance_results"


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(n, label): final acceptance criterion"
    )
    setattr(config, _ACCEPTANCE_KEY, {})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    results = getattr(item.config, _ACCEPTANCE_KEY)
    n, label = marker.args
    if report.when == "call":
        results[n] = (label, report.passed)
    elif report.failed:  # setup/teardown error counts as a failure
        results[n] = (label, False)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, _ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        label, ok = results[n]
        terminalreporter.write_line(
            f"criterion {n} ({label}): {'PASS' if ok else 'FAIL'}"
        )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_blobs():
    """Well-separated 4-class problem where a tuned model is near-perfect."""
    train = ob.generate_blobs(4, 60, 6, 8.0, 1.0, seed=11, split="train")
    test = ob.generate_blobs(4, 30, 6, 8.0, 1.0, seed=11, split="test")
    return train, test


@pytest.fixture(scope="session")
def fast_trainer_params():
    return {"hidden_layers": (16,), "epochs": 8, "lam": 5.0, "lr": 0.05,
            "input_noise": 0.1}
