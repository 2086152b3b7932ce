"""Subgroup TPRs, TPR gaps and per-attribute favourability summaries.

Gaps are taken per run and then averaged.  Binary attributes use
``tpr(reference) - tpr(other)``; multi-valued attributes use
``tpr(subgroup) - median(tpr of subgroups with positives)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cohort import MISSING, Attribute, Cohort, LabelSchema
from .errors import ContractError, SchemaError
from .stats import RunAggregate, aggregate_runs
from .thresholds import ScoreSet, ThresholdTable, align_scores


@dataclass(frozen=True)
class SubgroupCell:
    attribute: str
    subgroup: str
    label: str
    run_id: int
    tpr: float | None
    positives: int
    membership_fraction: float

    @property
    def defined(self) -> bool:
        return self.tpr is not None


@dataclass(frozen=True)
class GapCell:
    attribute: str
    subgroup: str
    label: str
    run_id: int
    gap: float | None

    @property
    def defined(self) -> bool:
        return self.gap is not None


def _cells_from_positives(
    attr: Attribute, label: str, run_id: int, pos_codes: np.ndarray, pos_scores: np.ndarray, threshold: float
) -> list[SubgroupCell]:
    """Cells for one label/run from the test positives that carry the attribute."""
    k = len(attr.subgroups)
    positives = np.bincount(pos_codes, minlength=k)
    hits = np.bincount(pos_codes, weights=pos_scores >= threshold, minlength=k)
    total = int(positives.sum())
    cells = []
    for s, name in enumerate(attr.subgroups):
        pos = int(positives[s])
        cells.append(
            SubgroupCell(
                attribute=attr.name,
                subgroup=name,
                label=label,
                run_id=run_id,
                tpr=int(hits[s]) / pos if pos else None,
                positives=pos,
                membership_fraction=pos / total if total else 0.0,
            )
        )
    return cells


def subgroup_tpr(
    cohort: Cohort, scores: ScoreSet, thresholds: ThresholdTable, attribute: str, label: str
) -> list[SubgroupCell]:
    """Per-subgroup sensitivity for one label and run on the test split."""
    attr = cohort.attribute_schema.get(attribute)
    j = cohort.label_schema.index(label)
    mat = align_scores(cohort, scores, required_splits=("test",))
    rows = _audit_rows(cohort, attr)
    rows = rows[cohort.truth[rows, j] == 1]
    return _cells_from_positives(
        attr,
        label,
        scores.run_id,
        cohort.attributes[attr.name][rows],
        mat[rows, j],
        thresholds[(label, scores.run_id)],
    )


def _audit_rows(cohort: Cohort, attr: Attribute) -> np.ndarray:
    return np.flatnonzero(cohort.split_mask("test") & (cohort.attributes[attr.name] != MISSING))


def binary_gap(cells: Sequence[SubgroupCell], reference: str) -> list[GapCell]:
    if len(cells) != 2:
        raise ContractError(f"binary_gap needs exactly 2 subgroup cells, got {len(cells)}")
    names = [c.subgroup for c in cells]
    if reference not in names:
        raise SchemaError(f"reference subgroup {reference!r} not among {names}")
    ref = cells[names.index(reference)]
    other = cells[1 - names.index(reference)]
    if ref.defined and other.defined:
        g = ref.tpr - other.tpr
        by_name = {ref.subgroup: g, other.subgroup: -g}
    else:
        by_name = {ref.subgroup: None, other.subgroup: None}
    return [GapCell(c.attribute, c.subgroup, c.label, c.run_id, by_name[c.subgroup]) for c in cells]


def median_gap(cells: Sequence[SubgroupCell]) -> list[GapCell]:
    """Gap to the median of defined TPRs (midpoint for an even count)."""
    defined = [c.tpr for c in cells if c.defined]
    if len(defined) < 2:
        return [GapCell(c.attribute, c.subgroup, c.label, c.run_id, None) for c in cells]
    med = float(np.median(defined))
    return [
        GapCell(c.attribute, c.subgroup, c.label, c.run_id, c.tpr - med if c.defined else None) for c in cells
    ]


def gaps_for(attr: Attribute, cells: Sequence[SubgroupCell]) -> list[GapCell]:
    if attr.arity == "binary":
        return binary_gap(cells, attr.reference)
    return median_gap(cells)


@dataclass
class AttributeAudit:
    """Everything measured for one (dataset, attribute) pair."""

    dataset: str
    attribute: Attribute
    labels: tuple[str, ...]
    run_ids: tuple[int, ...]
    cells: list[SubgroupCell]
    gaps: list[GapCell]
    mean_gaps: dict[tuple[str, str], RunAggregate | None]
    membership: dict[tuple[str, str], float | None]
    group_share: dict[str, float]

    def mean_gap(self, subgroup: str, label: str) -> float | None:
        agg = self.mean_gaps[(subgroup, label)]
        return None if agg is None else agg.mean


def audit_attribute(
    cohort: Cohort,
    scoresets: Sequence[ScoreSet],
    thresholds: ThresholdTable,
    attribute: str,
    confidence: float = 0.95,
    aligned: Mapping[int, np.ndarray] | None = None,
) -> AttributeAudit:
    """Per-run cells and gaps for every label, then run-averaged gaps.

    ``aligned`` may carry pre-aligned score matrices keyed by run id.
    """
    attr = cohort.attribute_schema.get(attribute)
    if not scoresets:
        raise ContractError("audit needs at least one score set")
    labels = cohort.label_schema.labels
    cells: list[SubgroupCell] = []
    gaps: list[GapCell] = []
    rows = _audit_rows(cohort, attr)
    pos_rows = [rows[cohort.truth[rows, j] == 1] for j in range(len(labels))]
    pos_codes = [cohort.attributes[attr.name][r] for r in pos_rows]
    for ss in scoresets:
        mat = aligned[ss.run_id] if aligned is not None else align_scores(cohort, ss, required_splits=("test",))
        for j, lab in enumerate(labels):
            run_cells = _cells_from_positives(
                attr, lab, ss.run_id, pos_codes[j], mat[pos_rows[j], j], thresholds[(lab, ss.run_id)]
            )
            cells.extend(run_cells)
            gaps.extend(gaps_for(attr, run_cells))

    per_cell: dict[tuple[str, str], list[float]] = {(s, lab): [] for s in attr.subgroups for lab in labels}
    for g in gaps:
        if g.defined:
            per_cell[(g.subgroup, g.label)].append(g.gap)
    mean_gaps = {key: aggregate_runs(v, confidence) if v else None for key, v in per_cell.items()}

    # membership is a property of the test split, identical for every run
    first = [c for c in cells if c.run_id == scoresets[0].run_id]
    totals = {lab: 0 for lab in labels}
    for c in first:
        totals[c.label] += c.positives
    membership = {(c.subgroup, c.label): c.membership_fraction if totals[c.label] else None for c in first}

    codes = cohort.attributes[attr.name][cohort.split_mask("test")]
    codes = codes[codes != MISSING]
    counts = np.bincount(codes, minlength=len(attr.subgroups))
    share = {s: (int(counts[i]) / codes.size if codes.size else 0.0) for i, s in enumerate(attr.subgroups)}

    return AttributeAudit(
        dataset=cohort.name,
        attribute=attr,
        labels=labels,
        run_ids=tuple(ss.run_id for ss in scoresets),
        cells=cells,
        gaps=gaps,
        mean_gaps=mean_gaps,
        membership=membership,
        group_share=share,
    )


@dataclass
class AttributeSummary:
    attribute: str
    subgroups: tuple[str, ...]
    distances: dict[str, float | None]
    least_favorable: dict[str, str | None]
    most_favorable: dict[str, str | None]
    ordering: tuple[str, ...]
    average_gap: float | None
    counted_labels: tuple[str, ...]
    unfavorable_counts: dict[str, int]
    favorable_counts: dict[str, int]
    undefined: list[tuple[str, str]] = field(default_factory=list)

    @property
    def lowest(self) -> tuple[str, float] | None:
        defined = [lab for lab in self.ordering if self.distances[lab] is not None]
        return (defined[0], self.distances[defined[0]]) if defined else None

    @property
    def greatest(self) -> tuple[str, float] | None:
        defined = [lab for lab in self.ordering if self.distances[lab] is not None]
        return (defined[-1], self.distances[defined[-1]]) if defined else None

    def _most(self, counts: dict[str, int]) -> tuple[tuple[str, ...], int]:
        top = max(counts.values(), default=0)
        if top == 0:
            return (), 0
        return tuple(s for s in self.subgroups if counts[s] == top), top

    @property
    def most_frequent_unfavorable(self) -> tuple[tuple[str, ...], int]:
        return self._most(self.unfavorable_counts)

    @property
    def most_frequent_favorable(self) -> tuple[tuple[str, ...], int]:
        return self._most(self.favorable_counts)


def summarize_attribute(
    mean_gaps: Mapping[tuple[str, str], float | None],
    label_schema: LabelSchema,
    subgroups: Sequence[str],
    attribute: str = "",
) -> AttributeSummary:
    """Least/most favourable spread per label and favourability counts.

    ``mean_gaps`` maps ``(subgroup, label)`` to the run-averaged gap or None.
    Distances use every label; counts skip the no-finding label.
    """
    subgroups = tuple(subgroups)
    distances: dict[str, float | None] = {}
    lo: dict[str, str | None] = {}
    hi: dict[str, str | None] = {}
    undefined = []
    for lab in label_schema.labels:
        vals = []
        for s in subgroups:
            g = mean_gaps.get((s, lab))
            if g is None:
                undefined.append((s, lab))
            else:
                vals.append((g, s))
        if len(vals) < 2:
            distances[lab], lo[lab], hi[lab] = None, None, None
            continue
        gmin = min(vals, key=lambda t: t[0])
        gmax = max(vals, key=lambda t: t[0])
        distances[lab] = gmax[0] - gmin[0]
        lo[lab], hi[lab] = gmin[1], gmax[1]

    defined_labels = [lab for lab in label_schema.labels if distances[lab] is not None]
    ordering = tuple(sorted(defined_labels, key=lambda lab: distances[lab])) + tuple(
        lab for lab in label_schema.labels if distances[lab] is None
    )
    average = sum(distances[lab] for lab in defined_labels) / len(defined_labels) if defined_labels else None

    counted = label_schema.disease_labels
    unfav = {s: 0 for s in subgroups}
    fav = {s: 0 for s in subgroups}
    for lab in counted:
        for s in subgroups:
            g = mean_gaps.get((s, lab))
            if g is None:
                continue
            if g < 0:
                unfav[s] += 1
            else:
                fav[s] += 1
    return AttributeSummary(
        attribute=attribute,
        subgroups=subgroups,
        distances=distances,
        least_favorable=lo,
        most_favorable=hi,
        ordering=ordering,
        average_gap=average,
        counted_labels=counted,
        unfavorable_counts=unfav,
        favorable_counts=fav,
        undefined=undefined,
    )


def summarize_audit(audit: AttributeAudit, label_schema: LabelSchema) -> AttributeSummary:
    means = {key: (None if agg is None else agg.mean) for key, agg in audit.mean_gaps.items()}
    return summarize_attribute(means, label_schema, audit.attribute.subgroups, audit.attribute.name)
