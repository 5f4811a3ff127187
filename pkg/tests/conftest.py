import json

import pytest

from preintvio.config import ScenarioConfig


@pytest.fixture
def tiny_config(tmp_path):
    """Path to a two-run, two-second noisy scenario."""
    d = ScenarioConfig.load("configs/smoke.json").to_dict()
    d["trajectory"]["duration"] = 2.0
    d["runs"] = 2
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(d))
    return path


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts at the end of the run, in criterion order."""
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
