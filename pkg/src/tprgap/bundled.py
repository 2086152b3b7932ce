"""The bundled four-cohort demo: synthesize every cohort, then audit them."""

from __future__ import annotations

import shutil
from pathlib import Path

from .cli import main

DEMO_DIR = Path(__file__).parent / "demo"
DEMO_SPECS = ("cxr.ini", "cxp.ini", "nih.ini", "all.ini")


def build_demo(workdir: str | Path, report_dir: str | Path | None = None) -> Path:
    """Write demo cohorts under ``workdir`` and the audit reports under ``report_dir``.

    Returns the report directory.  Raises ``RuntimeError`` if a step fails.
    """
    workdir = Path(workdir)
    report_dir = Path(report_dir) if report_dir is not None else workdir / "report"
    workdir.mkdir(parents=True, exist_ok=True)
    for spec in DEMO_SPECS:
        if main(["synth", "--config", str(DEMO_DIR / spec), "--out", str(workdir)]) != 0:
            raise RuntimeError(f"synth failed for {spec}")
    shutil.copyfile(DEMO_DIR / "audit.ini", workdir / "audit.ini")
    if main(["audit", "--config", str(workdir / "audit.ini"), "--out", str(report_dir)]) != 0:
        raise RuntimeError("audit failed")
    return report_dir
