from __future__ import annotations

import pytest

from t4ckit.cli import main


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """A written synthetic city with its manifest (default spec, seed 7)."""
    out = tmp_path_factory.mktemp("synth") / "city"
    assert main(["synth", "--seed", "7", "--out", str(out)]) == 0
    return out


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
