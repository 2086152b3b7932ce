"""Synthesize the four demo cohorts and audit them.

    python scripts/run_demo.py [workdir]
"""

import sys
from pathlib import Path

from tprgap.bundled import build_demo

if __name__ == "__main__":
    workdir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")
    report = build_demo(workdir)
    print((report / "summary.txt").read_text())
    print((report / "correlation.csv").read_text())
