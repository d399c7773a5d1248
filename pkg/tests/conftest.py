"""Shared fixtures: full default-config pipeline runs and the acceptance summary.

Tests marked ``@pytest.mark.criterion(key, title)`` get one PASS/FAIL line
in the terminal summary, whatever the pytest verbosity.
"""
import time

import pytest

from semiadv.cli import run

PIPELINE = ("synth", "prototypes", "train-aux-gender", "train-aux-matcher", "pretrain", "train", "perturb",
            "evaluate", "report")

_RESULTS = []


class PipelineRun:
    def __init__(self, out, seconds):
        self.out = out
        self.seconds = seconds

    def __truediv__(self, rel):
        return self.out / rel


def run_pipeline(out, seed=0):
    t0 = time.perf_counter()
    for cmd in PIPELINE:
        code = run(["--config", "default", "--seed", str(seed), "--out", str(out), cmd])
        if code != 0:
            raise RuntimeError(f"pipeline step {cmd!r} exited with {code}")
    return PipelineRun(out, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """The whole CLI pipeline on the default config (several minutes)."""
    return run_pipeline(tmp_path_factory.mktemp("default_run"))


@pytest.fixture(scope="session")
def repeat_run(tmp_path_factory, default_run):
    """A second, independent default run with the same seed."""
    return run_pipeline(tmp_path_factory.mktemp("repeat_run"))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    failed_setup = rep.when == "setup" and not rep.passed
    if rep.when == "call" or failed_setup:
        detail = dict(item.user_properties).get("detail", "")
        if not rep.passed and not detail:
            detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
        _RESULTS.append((str(mark.args[0]), mark.args[1], rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key, title, passed, detail in _RESULTS:
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {key:>3} {title}: {detail}")
