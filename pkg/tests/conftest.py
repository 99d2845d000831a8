import numpy as np
import pytest

from lrml.data import build_dataset, leave_one_out_split
from lrml.synthetic import random_events

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        key = (marker.args[0], marker.args[1])
        _criteria.setdefault(key, []).append((item.name, rep.outcome, rep))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for (num, title), runs in sorted(_criteria.items()):
        outcomes = [o for _, o, _ in runs]
        if "failed" in outcomes:
            verdict = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        extra = ""
        skipped = [rep for _, o, rep in runs if o == "skipped"]
        if skipped and verdict != "FAIL":
            reason = skipped[0].longrepr[2] if isinstance(skipped[0].longrepr, tuple) else ""
            extra = f"  ({len(skipped)} part(s) skipped: {reason})"
        tr.write_line(f"criterion {num}: {title} ... {verdict}{extra}")


@pytest.fixture(scope="session")
def small_dataset():
    return build_dataset(random_events(40, 160, 12, seed=3), min_interactions=5)


@pytest.fixture(scope="session")
def small_split(small_dataset):
    return leave_one_out_split(small_dataset, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
