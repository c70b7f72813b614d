import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]
DATA_ROOT = Path(os.environ.get("GRAPHCOND_DATA", ROOT / "data"))
MUTAG_DIR = DATA_ROOT / "MUTAG"
NCI1_DIR = DATA_ROOT / "NCI1"

requires_mutag = pytest.mark.skipif(not MUTAG_DIR.is_dir(), reason="MUTAG files not present")

# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
