"""Command line entry point: ``tprgap {ingest,synth,audit}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .cohort import SPLITS, UNASSIGNED, export_cohort, harmonize, ingest_cohort, split_patients
from .config import float_list, read_ini, require, sections_with_prefix, split_list
from .errors import AuditError, ConfigError, InputError
from .pipeline import load_audit_config, run_audit, write_reports
from .synth import expected_gaps, generate, load_synth_spec
from .thresholds import write_scores

log = logging.getLogger("tprgap")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INPUT = 2


def _counts(cohort) -> str:
    per_split = ", ".join(f"{s}={int(np.count_nonzero(cohort.split_mask(s)))}" for s in SPLITS)
    n_patients = len(np.unique(cohort.patient_ids))
    return f"{cohort.name}: {len(cohort)} records, {n_patients} patients ({per_split})"


def cmd_ingest(config: Path, out: Path, seed: int | None) -> None:
    """Validate source cohorts, assign patient splits, optionally harmonize.

    Config::

        [ingest]
        seed = 0
        split_fractions = 0.8, 0.1, 0.1
        shared_labels = Atelectasis, Edema      ; optional: write a merged cohort
        merged_name = ALL

        [dataset:CXR]
        records = cxr.csv
        schema = cxr_schema.ini
        raw_labels = false                      ; true: pos/neg/unc/nm tokens
    """
    parser = read_ini(config)
    sec = parser["ingest"] if "ingest" in parser else {}
    seed = int(sec.get("seed", "0")) if seed is None else seed
    fractions = float_list(sec.get("split_fractions", "0.8, 0.1, 0.1"), "split_fractions")
    sources = sections_with_prefix(parser, "dataset")
    if not sources:
        raise ConfigError(f"{config}: no [dataset:*] sections")
    cohorts = []
    for name, dsec in sources:
        raw = dsec.get("raw_labels", "false").strip().lower() in ("1", "true", "yes")
        cohort = ingest_cohort(config.parent / require(dsec, "records"), config.parent / require(dsec, "schema"), raw)
        cohort = cohort.replace(name=name)
        unassigned = cohort.splits == UNASSIGNED
        if unassigned.any():
            if not unassigned.all():
                log.warning("%s: %d records lack a split; re-splitting the whole cohort", name, int(unassigned.sum()))
            cohort = split_patients(cohort, fractions, seed)
        cohorts.append(cohort)
    if "shared_labels" in sec:
        cohorts.append(harmonize(cohorts, split_list(sec["shared_labels"]), sec.get("merged_name", "ALL")))
    out.mkdir(parents=True, exist_ok=True)
    for cohort in cohorts:
        d = out / cohort.name
        d.mkdir(exist_ok=True)
        export_cohort(cohort, d / "records.csv", d / "schema.ini")
        print(_counts(cohort))


def cmd_synth(config: Path, out: Path, seed: int | None) -> None:
    spec = load_synth_spec(config, seed=seed)
    cohort, scoresets = generate(spec)
    d = out / spec.name
    d.mkdir(parents=True, exist_ok=True)
    export_cohort(cohort, d / "records.csv", d / "schema.ini")
    for ss in scoresets:
        write_scores(ss, d / f"scores_run{ss.run_id}.csv")
    with open(d / "expected_gaps.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attribute", "subgroup", "label", "expected_gap"])
        for (attr, sub, lab), g in expected_gaps(spec).items():
            w.writerow([attr, sub, lab, format(g, ".12g")])
    print(_counts(cohort) + f", {len(scoresets)} score files")


def cmd_audit(config: Path, out: Path, seed: int | None) -> None:
    cfg = load_audit_config(config)
    if seed is not None:
        cfg.seed = seed
    result = run_audit(cfg)
    write_reports(result, out)
    print(f"wrote reports for {len(result.datasets)} datasets to {out}")
    print(f"{result.n_hypotheses} hypotheses, significance threshold p < {result.significance_threshold:.7f}")


COMMANDS = {"ingest": cmd_ingest, "synth": cmd_synth, "audit": cmd_audit}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tprgap", description="Subgroup TPR-disparity audits of classifier scores.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "validate cohorts, assign patient-level splits, harmonize",
        "synth": "generate a synthetic cohort and score files from a spec",
        "audit": "compute gaps, summaries and correlation reports",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        COMMANDS[args.command](args.config, args.out, args.seed)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AuditError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
