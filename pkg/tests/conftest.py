import sys
from pathlib import Path

import pytest

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))  # make `oracles` importable

FIXTURES = HERE / "fixtures"
TOY = HERE.parent / "src" / "rxdistill" / "data" / "toy"


@pytest.fixture
def fixture_kg_path():
    return FIXTURES / "fixture_kg.tsv"


@pytest.fixture
def fixture_graph(fixture_kg_path):
    from rxdistill.kg_store import load_triples

    return load_triples(fixture_kg_path)


@pytest.fixture
def write_kg(tmp_path):
    def _write(rows, name="kg.tsv"):
        path = tmp_path / name
        path.write_text("".join("\t".join(r) + "\n" for r in rows))
        return path

    return _write


# Acceptance criteria register one line each here; printed at the end of the run.
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
