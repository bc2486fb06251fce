import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def cell_2x2():
    """Full PBCS on the 2x2 maze with seed 0, shared by several test modules."""
    from pbcs.experiment import ExperimentConfig, run_cell

    return run_cell(ExperimentConfig(size=2, seed=0, mode="pbcs"))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
