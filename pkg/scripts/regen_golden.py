"""Rebuild tests/golden/demo from the bundled demo.

Only run this after an intentional change to the report format or the demo
specs; review the diff before committing.
"""

import shutil
import tempfile
from pathlib import Path

from tprgap.bundled import build_demo

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "golden" / "demo"

if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        report = build_demo(tmp)
        shutil.rmtree(GOLDEN, ignore_errors=True)
        shutil.copytree(report, GOLDEN)
    print(f"golden files written to {GOLDEN}")
