import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lineagestore.catalog import Catalog
from lineagestore.core import ArrayMeta, LineageRelation

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

GOLDENS = os.path.join(os.path.dirname(__file__), "goldens")


@pytest.fixture
def fig1_rel():
    """Sum over the second axis of a 3x2 array: B[i] <- A[i, 1..2]."""
    rows = [((i,), (i, k)) for i in (1, 2, 3) for k in (1, 2)]
    return LineageRelation.from_rows(ArrayMeta("B", (3,)), ArrayMeta("A", (3, 2)), rows)


@pytest.fixture
def catalog(tmp_path):
    return Catalog.open(tmp_path / "cat")


def cell_set(cells):
    return set(map(tuple, np.asarray(cells).tolist()))


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``acceptance(criterion, ok, detail)`` records one line for the summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(criterion, ok, detail=""):
        line = f"{criterion}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
