import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]
MOVIELENS = Path(os.environ.get("CFBA_MOVIELENS", ROOT / "data" / "ml-100k"))


@pytest.fixture(scope="session")
def movielens_dir():
    if not (MOVIELENS / "u.data").is_file():
        pytest.skip(f"MovieLens 100k not found at {MOVIELENS}; "
                    "run tools/materialize_ml100k.py data/ml-100k")
    return MOVIELENS


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
