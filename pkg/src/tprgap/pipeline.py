"""Audit orchestration: configuration, per-dataset audits and report files."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import Cohort, ingest_cohort
from .config import float_list, read_ini, require, sections_with_prefix, split_list
from .disparity import AttributeAudit, AttributeSummary, audit_attribute, summarize_audit
from .errors import ConfigError, InputError, UndefinedMetricError
from .stats import (
    CENSUS_MODES,
    CI_METHOD,
    CorrelationResult,
    RunAggregate,
    aggregate_runs,
    bonferroni_threshold,
    correlate_disparities,
    hypothesis_census,
)
from .thresholds import ScoreSet, ThresholdTable, align_scores, auc, compute_thresholds, read_scores

log = logging.getLogger(__name__)


@dataclass
class DatasetSource:
    name: str
    records: Path
    schema: Path
    scores: list[Path]
    thresholds: Path | None = None


@dataclass
class AuditConfig:
    datasets: list[DatasetSource]
    attributes: tuple[str, ...] | None = None
    alpha: float = 0.05
    confidence: float = 0.95
    census: str = "paper"
    seed: int = 0
    out: Path | None = None

    def validate(self) -> None:
        if not self.datasets:
            raise ConfigError("audit config declares no [dataset:*] sections")
        if not 0 < self.alpha < 1 or not 0 < self.confidence < 1:
            raise ConfigError("alpha and confidence must lie in (0, 1)")
        if self.census not in CENSUS_MODES:
            raise ConfigError(f"census must be one of {CENSUS_MODES}")
        for ds in self.datasets:
            if not ds.scores:
                raise ConfigError(f"dataset {ds.name!r}: at least one score file (run) is required")
            for p in [ds.records, ds.schema, *ds.scores, *([ds.thresholds] if ds.thresholds else [])]:
                if not p.is_file():
                    raise InputError(f"input error: no such file: {p}")


def load_audit_config(path: str | Path) -> AuditConfig:
    """Read an audit plan; relative paths resolve against the config's folder.

    Layout::

        [audit]
        alpha = 0.05
        confidence = 0.95
        census = paper
        attributes = sex, age        ; optional filter

        [dataset:CXR]
        records = CXR/records.csv
        schema = CXR/schema.ini
        scores = CXR/scores_run0.csv, CXR/scores_run1.csv
        thresholds = CXR/thresholds.csv   ; optional, else tuned on validation
    """
    path = Path(path)
    parser = read_ini(path)
    base = path.parent
    sec = parser["audit"] if "audit" in parser else {}
    try:
        cfg = AuditConfig(
            datasets=[],
            attributes=tuple(split_list(sec["attributes"])) if "attributes" in sec else None,
            alpha=float(sec.get("alpha", "0.05")),
            confidence=float(sec.get("confidence", "0.95")),
            census=sec.get("census", "paper"),
            seed=int(sec.get("seed", "0")),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: [audit] {exc}") from None
    for name, dsec in sections_with_prefix(parser, "dataset"):
        thr = dsec.get("thresholds")
        cfg.datasets.append(
            DatasetSource(
                name=name,
                records=base / require(dsec, "records"),
                schema=base / require(dsec, "schema"),
                scores=[base / p for p in split_list(require(dsec, "scores"))],
                thresholds=base / thr if thr else None,
            )
        )
    return cfg


@dataclass
class ScatterPoint:
    order: int
    label: str
    subgroup: str
    mean_gap: float
    ci_halfwidth: float
    n_runs: int
    marker_weight: float


def scatter_series(audit: AttributeAudit, summary: AttributeSummary) -> list[ScatterPoint]:
    """Plot data: x follows the summary's ascending-distance label order."""
    points = []
    for x, lab in enumerate(summary.ordering):
        for s in audit.attribute.subgroups:
            agg = audit.mean_gaps[(s, lab)]
            weight = audit.group_share[s]
            if agg is None or weight <= 0:
                continue
            points.append(ScatterPoint(x, lab, s, agg.mean, agg.ci_halfwidth, agg.n_runs, weight))
    return points


@dataclass
class DatasetResult:
    cohort: Cohort
    scoresets: list[ScoreSet]
    thresholds: ThresholdTable
    thresholds_tuned: bool
    auc: dict[str, RunAggregate | None]
    audits: list[AttributeAudit] = field(default_factory=list)
    summaries: list[AttributeSummary] = field(default_factory=list)


@dataclass
class AuditResult:
    config: AuditConfig
    datasets: list[DatasetResult]
    census: list[tuple[str, str, str]]
    correlations: list[CorrelationResult]

    @property
    def n_hypotheses(self) -> int:
        return len(self.census)

    @property
    def significance_threshold(self) -> float:
        return bonferroni_threshold(self.config.alpha, max(1, self.n_hypotheses))


def audit_dataset(
    cohort: Cohort,
    scoresets: list[ScoreSet],
    thresholds: ThresholdTable | None = None,
    attributes: tuple[str, ...] | None = None,
    confidence: float = 0.95,
) -> DatasetResult:
    tuned = thresholds is None
    required = ("validation", "test") if tuned else ("test",)
    aligned = {ss.run_id: align_scores(cohort, ss, required_splits=required) for ss in scoresets}
    if tuned:
        thresholds = compute_thresholds(cohort, scoresets)
    test = cohort.split_mask("test")
    aucs = {}
    for j, lab in enumerate(cohort.label_schema.labels):
        per_run = []
        for ss in scoresets:
            try:
                per_run.append(auc(aligned[ss.run_id][test, j], cohort.truth[test, j]))
            except UndefinedMetricError:
                pass
        aucs[lab] = aggregate_runs(per_run, confidence) if per_run else None
    result = DatasetResult(cohort, scoresets, thresholds, tuned, aucs)
    names = cohort.attribute_schema.names if attributes is None else [a for a in attributes if a in cohort.attribute_schema.names]
    for name in names:
        audit = audit_attribute(cohort, scoresets, thresholds, name, confidence, aligned=aligned)
        result.audits.append(audit)
        result.summaries.append(summarize_audit(audit, cohort.label_schema))
    return result


def correlate_all(datasets: list[DatasetResult], census_mode: str, alpha: float):
    plan = [
        (ds.cohort.name, a.attribute.name, a.attribute.subgroups, a.attribute.arity)
        for ds in datasets
        for a in ds.audits
    ]
    census = hypothesis_census(plan, census_mode)
    audits = {(ds.cohort.name, a.attribute.name): a for ds in datasets for a in ds.audits}
    results = []
    for dataset, attribute, subgroup in census:
        a = audits[(dataset, attribute)]
        results.append(
            correlate_disparities(
                [a.mean_gap(subgroup, lab) for lab in a.labels],
                [a.membership[(subgroup, lab)] for lab in a.labels],
                n_hypotheses=len(census),
                alpha=alpha,
                attribute=attribute,
                subgroup=subgroup,
                dataset=dataset,
            )
        )
    return census, results


def run_audit(config: AuditConfig) -> AuditResult:
    config.validate()
    datasets = []
    for src in config.datasets:
        cohort = ingest_cohort(src.records, src.schema)
        if cohort.name != src.name:
            cohort = cohort.replace(name=src.name)
        scoresets = [read_scores(p, run) for run, p in enumerate(src.scores)]
        thresholds = ThresholdTable.from_csv(src.thresholds) if src.thresholds else None
        datasets.append(audit_dataset(cohort, scoresets, thresholds, config.attributes, config.confidence))
        log.info("audited %s: %d records, %d runs", src.name, len(cohort), len(scoresets))
    census, correlations = correlate_all(datasets, config.census, config.alpha)
    return AuditResult(config, datasets, census, correlations)


# --------------------------------------------------------------------------
# emission


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if np.isnan(x):
            return ""
        return format(x, ".12g")
    return str(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


SUMMARY_COLUMNS = [
    "attribute",
    "dataset",
    "average_cross_label_gap",
    "lowest_label",
    "lowest_distance",
    "greatest_label",
    "greatest_distance",
    "unfavorable_subgroups",
    "unfavorable_count",
    "favorable_subgroups",
    "favorable_count",
    "counted_labels",
]


def summary_rows(result: AuditResult) -> list[list]:
    """Summary table rows: grouped by attribute, datasets by ascending average gap."""
    by_attr: dict[str, list[tuple[str, AttributeSummary]]] = {}
    for ds in result.datasets:
        for s in ds.summaries:
            by_attr.setdefault(s.attribute, []).append((ds.cohort.name, s))
    rows = []
    for attribute, entries in by_attr.items():
        entries = sorted(entries, key=lambda e: (e[1].average_gap is None, e[1].average_gap or 0.0))
        for dataset, s in entries:
            low, high = s.lowest or (None, None), s.greatest or (None, None)
            unfav, n_unfav = s.most_frequent_unfavorable
            fav, n_fav = s.most_frequent_favorable
            rows.append(
                [
                    attribute,
                    dataset,
                    s.average_gap,
                    low[0],
                    low[1],
                    high[0],
                    high[1],
                    ";".join(unfav),
                    n_unfav,
                    ";".join(fav),
                    n_fav,
                    len(s.counted_labels),
                ]
            )
    return rows


def render_summary(rows: list[list]) -> str:
    def d3(x):
        return "-" if x is None else f"{x:.3f}"

    def who(names, count, total):
        return "-" if not names else f"{', '.join(names.split(';'))} ({count}/{total})"

    header = ["Attribute", "Dataset", "Gap", "Lowest", "Greatest", "Unfavorable", "Favorable"]
    table = [header]
    for r in rows:
        table.append(
            [
                r[0],
                r[1],
                d3(r[2]),
                "-" if r[3] is None else f"{r[3]}:{d3(r[4])}",
                "-" if r[5] is None else f"{r[5]}:{d3(r[6])}",
                who(r[7], r[8], r[11]),
                who(r[9], r[10], r[11]),
            ]
        )
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_reports(result: AuditResult, out: str | Path) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    n_undefined = 0
    for ds in result.datasets:
        d = out / ds.cohort.name
        d.mkdir(exist_ok=True)
        ds.thresholds.to_csv(d / "thresholds.csv")
        _write_csv(
            d / "auc.csv",
            ["label", "mean_auc", "ci_halfwidth", "n_runs", "defined"],
            [
                [lab, *((agg.mean, agg.ci_halfwidth, agg.n_runs) if agg else (None, None, 0)), agg is not None]
                for lab, agg in ds.auc.items()
            ],
        )
        written += [d / "thresholds.csv", d / "auc.csv"]
        for a, s in zip(ds.audits, ds.summaries):
            name = a.attribute.name
            gap_by_key = {(g.subgroup, g.label, g.run_id): g for g in a.gaps}
            rows = []
            for c in a.cells:
                g = gap_by_key[(c.subgroup, c.label, c.run_id)]
                n_undefined += not g.defined
                rows.append([name, c.subgroup, c.label, c.run_id, c.tpr, g.gap, c.positives, c.membership_fraction, g.defined])
            _write_csv(
                d / f"gaps_{name}.csv",
                ["attribute", "subgroup", "label", "run_id", "tpr", "gap", "positives", "membership_fraction", "defined"],
                rows,
            )
            _write_csv(
                d / f"gap_means_{name}.csv",
                ["attribute", "subgroup", "label", "mean_gap", "ci_halfwidth", "n_runs", "membership", "defined"],
                [
                    [
                        name,
                        sub,
                        lab,
                        *((agg.mean, agg.ci_halfwidth, agg.n_runs) if agg else (None, None, 0)),
                        a.membership[(sub, lab)],
                        agg is not None,
                    ]
                    for (sub, lab), agg in a.mean_gaps.items()
                ],
            )
            _write_csv(
                d / f"scatter_{name}.csv",
                ["order", "label", "subgroup", "mean_gap", "ci_halfwidth", "n_runs", "marker_weight"],
                [
                    [p.order, p.label, p.subgroup, p.mean_gap, p.ci_halfwidth, p.n_runs, p.marker_weight]
                    for p in scatter_series(a, s)
                ],
            )
            _write_csv(
                d / f"distances_{name}.csv",
                ["order", "label", "distance", "least_favorable", "most_favorable"],
                [[i, lab, s.distances[lab], s.least_favorable[lab], s.most_favorable[lab]] for i, lab in enumerate(s.ordering)],
            )
            written += [d / f"{stem}_{name}.csv" for stem in ("gaps", "gap_means", "scatter", "distances")]

    rows = summary_rows(result)
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, rows)
    (out / "summary.txt").write_text(render_summary(rows), encoding="utf-8")
    _write_csv(
        out / "correlation.csv",
        ["attribute", "subgroup", "dataset", "r", "p_value", "n_labels", "threshold", "significant", "defined"],
        [
            [c.attribute, c.subgroup, c.dataset, c.r, c.p_value, c.n_labels, c.threshold, c.significant, c.defined]
            for c in result.correlations
        ],
    )
    cfg = result.config
    meta = {
        "version": __version__,
        "seed": cfg.seed,
        "alpha": cfg.alpha,
        "confidence": cfg.confidence,
        "ci_method": CI_METHOD,
        "census_mode": cfg.census,
        "n_hypotheses": result.n_hypotheses,
        "significance_threshold": result.significance_threshold,
        "undefined_gap_cells": n_undefined,
        "decision_rule": "score >= threshold",
        "datasets": {
            ds.cohort.name: {
                "n_records": len(ds.cohort),
                "n_runs": len(ds.scoresets),
                "thresholds": "tuned on validation (max F1)" if ds.thresholds_tuned else "supplied",
                "attributes": [a.attribute.name for a in ds.audits],
            }
            for ds in result.datasets
        },
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written += [out / "summary.csv", out / "summary.txt", out / "correlation.csv", out / "metadata.json"]
    if n_undefined:
        log.warning("%d gap cells are undefined (no positives or too few defined subgroups); flagged in gap tables", n_undefined)
    return written
