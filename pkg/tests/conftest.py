import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

import fixtures  # noqa: E402

DATA = Path(__file__).resolve().parent / "data"


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """Generated binaries written once per session."""
    d = tmp_path_factory.mktemp("bin")
    (d / "planted.dll").write_bytes(fixtures.planted_pe())
    (d / "backdoor.dll").write_bytes(fixtures.backdoor_like_pe())
    (d / "benign.dll").write_bytes(fixtures.benign_pe())
    left, right = fixtures.similarity_pair()
    (d / "left.dll").write_bytes(left)
    (d / "right.dll").write_bytes(right)
    return d


@pytest.fixture(scope="session")
def iis_dll():
    return DATA / "iis_raid_like.dll"


ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    """Collect one PASS/FAIL line for the session summary."""
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
