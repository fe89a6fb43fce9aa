import os
import tempfile
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"

# keep discovered bases out of the user's cache; one directory per session
os.environ.setdefault("RO_INIT_CACHE_DIR", tempfile.mkdtemp(prefix="ro-init-cache-"))

# criterion number -> list of (label, passed, detail)
ACCEPTANCE: dict = {}


def record(criterion: int, label: str, passed: bool, detail: str = "") -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((label, bool(passed), detail))
    return bool(passed)


@pytest.fixture
def data_dir() -> Path:
    return DATA


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        ok = all(p for _, p, _ in parts)
        failed = [f"{label} ({detail})" if detail else label for label, p, detail in parts if not p]
        line = f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}"
        if failed:
            line += " - failing: " + "; ".join(failed)
        tr.write_line(line)
