import json
from pathlib import Path

import numpy as np
import pytest

SCHEMA_DIR = Path(__file__).resolve().parents[1] / "src" / "docseg" / "schemas"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def load_schema(name):
    return json.loads((SCHEMA_DIR / f"{name}.schema.json").read_text())


def write_pgm(path, arr):
    arr = np.asarray(arr, dtype=np.uint8)
    path.write_bytes(b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]) + arr.tobytes())
    return path


# acceptance criterion outcomes, filled by tests/test_acceptance.py
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        status, title, detail = CRITERIA[n]
        line = f"criterion {n:>2}: {status}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
