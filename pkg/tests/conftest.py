import sys
from pathlib import Path

import pytest

from a51tmto.cipher import MICRO_TOY, TOY
from a51tmto.oracle import build_image_table

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def toy_images():
    return build_image_table(TOY)


@pytest.fixture(scope="session")
def micro_images():
    return build_image_table(MICRO_TOY)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
