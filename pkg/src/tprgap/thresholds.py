"""Confusion counts, F1-optimal thresholds on validation data, and ROC-AUC."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .cohort import Cohort
from .errors import ContractError, EmptyInputError, InputError, ParseError, SchemaError, UndefinedMetricError

SCORE_SUFFIX = "_score"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _pair(scores, truth) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(truth).ravel()
    if s.shape != y.shape:
        raise ContractError(f"scores ({s.size}) and truth ({y.size}) differ in length")
    return s, y.astype(bool)


def confusion(scores: Sequence[float], truth: Sequence[int], threshold: float) -> ConfusionCounts:
    """Counts for the rule ``predict 1 iff score >= threshold``."""
    s, y = _pair(scores, truth)
    pred = s >= threshold
    tp = int(np.count_nonzero(pred & y))
    fp = int(np.count_nonzero(pred & ~y))
    fn = int(np.count_nonzero(~pred & y))
    return ConfusionCounts(tp=tp, fp=fp, tn=s.size - tp - fp - fn, fn=fn)


def f1(counts: ConfusionCounts) -> float:
    denom = 2 * counts.tp + counts.fp + counts.fn
    return 0.0 if denom == 0 else 2 * counts.tp / denom


def candidate_thresholds(scores: Sequence[float]) -> np.ndarray:
    """0, the midpoints of adjacent distinct scores, and 1 (sorted, unique)."""
    u = np.unique(np.asarray(scores, dtype=float))
    mids = (u[:-1] + u[1:]) / 2
    return np.unique(np.concatenate([[0.0], mids, [1.0]]))


def select_threshold(scores: Sequence[float], truth: Sequence[int]) -> float:
    """Smallest candidate threshold with maximal F1.

    Every achievable confusion matrix is realised by some candidate, so the
    search is exact.  Counts per candidate come from ``searchsorted`` on the
    sorted scores, which reproduces ``score >= t`` for the float ``t`` itself.
    """
    s, y = _pair(scores, truth)
    if s.size == 0:
        raise ContractError("select_threshold needs at least one record")
    cands = candidate_thresholds(s)
    pos_sorted = np.sort(s[y])
    neg_sorted = np.sort(s[~y])
    tp = pos_sorted.size - np.searchsorted(pos_sorted, cands, side="left")
    fp = neg_sorted.size - np.searchsorted(neg_sorted, cands, side="left")
    fn = pos_sorted.size - tp
    denom = 2 * tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        scores_f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    return float(cands[int(np.argmax(scores_f1))])


def auc(scores: Sequence[float], truth: Sequence[int]) -> float:
    """Rank-statistic AUC with ties counted at one half.

    ``(sum of positive midranks - P(P+1)/2) / (P N)``, which is the
    pair-counting probability written with ranks.
    """
    s, y = _pair(scores, truth)
    n_pos = int(np.count_nonzero(y))
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC is undefined without both positive and negative records")
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    # midrank of a tie block = (first rank + last rank) / 2, in half-units to stay integral
    ends = np.cumsum(counts)
    twice_midrank = 2 * ends - counts + 1
    twice_rank_sum = int(twice_midrank[inverse.ravel()][y].sum())
    twice_u = twice_rank_sum - n_pos * (n_pos + 1)
    return (twice_u / 2) / (n_pos * n_neg)


# --------------------------------------------------------------------------
# score sets and threshold tables


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """One run's scores: ``scores[i, j]`` for ``image_ids[i]`` and ``labels[j]``."""

    run_id: int
    image_ids: np.ndarray
    labels: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.image_ids, dtype=str)
        sc = np.asarray(self.scores, dtype=float)
        if sc.shape != (ids.size, len(self.labels)):
            raise ContractError(f"score matrix shape {sc.shape} != ({ids.size}, {len(self.labels)})")
        if sc.size and (np.isnan(sc).any() or sc.min() < 0.0 or sc.max() > 1.0):
            raise ContractError(f"run {self.run_id}: scores must lie in [0, 1]")
        ids.flags.writeable = False
        sc = sc.copy()
        sc.flags.writeable = False
        object.__setattr__(self, "image_ids", ids)
        object.__setattr__(self, "scores", sc)
        object.__setattr__(self, "labels", tuple(self.labels))


def align_scores(cohort: Cohort, scoreset: ScoreSet, required_splits: Iterable[str] = ("validation", "test")) -> np.ndarray:
    """Score matrix in cohort record order and label-schema order.

    Records absent from the score set get NaN; that is an error for records in
    ``required_splits``.  Score ids unknown to the cohort are an error too.
    """
    labels = cohort.label_schema.labels
    missing_labels = [lab for lab in labels if lab not in scoreset.labels]
    if missing_labels:
        raise SchemaError(f"run {scoreset.run_id}: no scores for labels {missing_labels}")
    cols = [scoreset.labels.index(lab) for lab in labels]
    if scoreset.image_ids.shape == cohort.image_ids.shape and np.array_equal(scoreset.image_ids, cohort.image_ids):
        return scoreset.scores[:, cols]
    pos = pd.Index(cohort.image_ids).get_indexer(scoreset.image_ids)
    unknown = scoreset.image_ids[pos < 0]
    if unknown.size:
        raise ContractError(
            f"run {scoreset.run_id}: scores for image_ids not in cohort {cohort.name!r}: {list(unknown[:5])}"
        )
    out = np.full((len(cohort), len(labels)), np.nan)
    out[pos] = scoreset.scores[:, cols]
    need = np.zeros(len(cohort), dtype=bool)
    for split in required_splits:
        need |= cohort.split_mask(split)
    absent = np.flatnonzero(need & np.isnan(out[:, 0]))
    if absent.size:
        raise ContractError(
            f"run {scoreset.run_id}: missing scores for image_ids {list(cohort.image_ids[absent[:5]])}"
        )
    return out


def read_scores(path: str | Path, run_id: int) -> ScoreSet:
    """Read ``image_id, <label>_score, ...``."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"input error: no such file: {path}")
    try:
        df = pd.read_csv(path, dtype={"image_id": str}, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise EmptyInputError(f"{path}: file is empty") from None
    if "image_id" not in df.columns:
        raise SchemaError(f"{path}: missing column 'image_id'")
    score_cols = [c for c in df.columns if c.endswith(SCORE_SUFFIX)]
    try:
        values = df[score_cols].to_numpy(dtype=float)
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric score: {exc}") from None
    return ScoreSet(
        run_id=run_id,
        image_ids=df["image_id"].to_numpy(dtype=str),
        labels=tuple(c[: -len(SCORE_SUFFIX)] for c in score_cols),
        scores=values,
    )


def write_scores(scoreset: ScoreSet, path: str | Path) -> None:
    df = pd.DataFrame(scoreset.scores, columns=[lab + SCORE_SUFFIX for lab in scoreset.labels])
    df.insert(0, "image_id", scoreset.image_ids)
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


class ThresholdTable:
    """Binarisation threshold per (label, run_id)."""

    def __init__(self, values: Mapping[tuple[str, int], float] | None = None):
        self._values: dict[tuple[str, int], float] = {}
        for key, t in (values or {}).items():
            self[key] = t

    def __setitem__(self, key: tuple[str, int], t: float) -> None:
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise ContractError(f"threshold {t} for {key} outside [0, 1]")
        self._values[(str(key[0]), int(key[1]))] = t

    def __getitem__(self, key: tuple[str, int]) -> float:
        try:
            return self._values[(key[0], int(key[1]))]
        except KeyError:
            raise ContractError(f"no threshold for label {key[0]!r}, run {key[1]}") from None

    def __contains__(self, key) -> bool:
        return (key[0], int(key[1])) in self._values

    def __len__(self):
        return len(self._values)

    def items(self):
        return self._values.items()

    @classmethod
    def constant(cls, labels: Iterable[str], run_ids: Iterable[int], value: float = 0.5) -> "ThresholdTable":
        run_ids = list(run_ids)
        return cls({(lab, r): value for lab in labels for r in run_ids})

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "run_id", "threshold"])
            for (lab, run), t in self._values.items():
                w.writerow([lab, run, repr(t)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ThresholdTable":
        path = Path(path)
        if not path.is_file():
            raise InputError(f"input error: no such file: {path}")
        table = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for col in ("label", "run_id", "threshold"):
                if col not in (reader.fieldnames or []):
                    raise SchemaError(f"{path}: missing column {col!r}")
            for lineno, row in enumerate(reader, start=2):
                try:
                    table[(row["label"], int(row["run_id"]))] = float(row["threshold"])
                except ValueError:
                    raise ParseError(f"{path}: line {lineno}: bad threshold row {row}") from None
        return table


def compute_thresholds(cohort: Cohort, scoresets: Sequence[ScoreSet]) -> ThresholdTable:
    """F1-optimal threshold per label and run on the validation split."""
    mask = cohort.split_mask("validation")
    if not mask.any():
        raise EmptyInputError(f"cohort {cohort.name!r} has no validation records to tune thresholds on")
    table = ThresholdTable()
    for ss in scoresets:
        mat = align_scores(cohort, ss, required_splits=("validation",))
        for j, lab in enumerate(cohort.label_schema.labels):
            table[(lab, ss.run_id)] = select_threshold(mat[mask, j], cohort.truth[mask, j])
    return table
