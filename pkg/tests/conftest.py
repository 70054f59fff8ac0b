from pathlib import Path

import numpy as np
import pytest

from hmlmatch.hierarchy import FIVE_LEVEL_GRID, HierarchySpec, build_hierarchy

DATA = Path(__file__).parent / "data"

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_log(request):
    """Append one ``criterion N: PASS|FAIL ...`` line; shown in the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE]

    def log(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return log


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def grid5():
    return build_hierarchy(HierarchySpec.grid(FIVE_LEVEL_GRID), 32, 32)


@pytest.fixture(scope="session")
def split3():
    """Three levels: whole image, top/bottom halves, 2x2 quarters."""
    return build_hierarchy(HierarchySpec.grid([(1, 1), (2, 1), (2, 2)]), 8, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
