import json
import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).resolve().parent
MATRIX = TESTS / "fixtures" / "matrix"
sys.path.insert(0, str(TESTS))


def load_truth() -> dict:
    return json.loads((MATRIX / "truth.json").read_text())


TRUTH = load_truth()
MATRIX_NAMES = sorted(k for k, v in TRUTH.items() if not v.get("ladder"))
LADDER_NAMES = sorted(k for k, v in TRUTH.items() if v.get("ladder"))


def fixture_bytes(name: str) -> bytes:
    return (MATRIX / name).read_bytes()


@pytest.fixture(scope="session")
def truth():
    return TRUTH
