"""Synthetic cohorts with prescribed subgroup TPR/FPR, used as an audit oracle.

Each record draws its subgroup for every attribute from the membership
weights and each label independently from its prevalence (a no-finding label,
if declared, is 1 exactly when every other label is 0).  Scores are placed on
the correct side of 0.5 with the target probability, so thresholding at 0.5
reproduces the targets in expectation.

With several attributes the per-record target is additive: the first
attribute sets the level and every further attribute adds its deviation from
its own membership-weighted mean.  Marginal TPRs of the first attribute equal
the targets; later attributes are shifted by a per-label constant, which
leaves their gaps unchanged.

Random streams: ``SeedSequence(seed, spawn_key=(0,))`` for the cohort and
``spawn_key=(1, run)`` for run ``run``, so adding runs never changes earlier
ones.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cohort import SPLITS, Attribute, AttributeSchema, Cohort, LabelSchema, patient_split_codes
from .config import float_list, read_ini, require, sections_with_prefix, split_list
from .errors import ConfigError
from .thresholds import ScoreSet

# keeps lower-side scores strictly below the cut
_BELOW_HALF = np.nextafter(0.5, 0.0)


@dataclass(frozen=True)
class SynthAttribute:
    name: str
    subgroups: tuple[str, ...]
    weights: tuple[float, ...]
    # target_tpr[s][j] / target_fpr[s][j]: subgroup s, label j
    target_tpr: tuple[tuple[float, ...], ...]
    target_fpr: tuple[tuple[float, ...], ...]
    arity: str = ""

    def __post_init__(self):
        if not self.arity:
            object.__setattr__(self, "arity", "binary" if len(self.subgroups) == 2 else "multi")

    def as_attribute(self) -> Attribute:
        return Attribute(self.name, self.subgroups, self.arity)


@dataclass(frozen=True)
class SynthSpec:
    name: str
    labels: tuple[str, ...]
    prevalence: tuple[float, ...]
    attributes: tuple[SynthAttribute, ...]
    n_records: int
    n_runs: int = 1
    seed: int = 0
    score_sharpness: float = 2.0
    no_finding_label: str | None = None
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "prevalence", tuple(float(p) for p in self.prevalence))
        object.__setattr__(self, "attributes", tuple(self.attributes))
        self.validate()

    @property
    def all_labels(self) -> tuple[str, ...]:
        return self.labels + ((self.no_finding_label,) if self.no_finding_label else ())

    def validate(self) -> None:
        if len(self.prevalence) != len(self.labels):
            raise ConfigError("one prevalence per disease label is required")
        if any(not 0.0 < p < 1.0 for p in self.prevalence):
            raise ConfigError(f"prevalences must lie in (0, 1): {self.prevalence}")
        if self.n_records < 1 or self.n_runs < 1:
            raise ConfigError("n_records and n_runs must be positive")
        if self.score_sharpness <= 0:
            raise ConfigError("score_sharpness must be positive")
        if not self.attributes:
            raise ConfigError("at least one attribute is required")
        n_labels = len(self.all_labels)
        for a in self.attributes:
            if len(a.weights) != len(a.subgroups) or any(w <= 0 for w in a.weights):
                raise ConfigError(f"attribute {a.name!r}: one positive weight per subgroup required")
            if abs(sum(a.weights) - 1.0) > 1e-9:
                raise ConfigError(f"attribute {a.name!r}: weights must sum to 1, got {sum(a.weights)}")
            for table, what in ((a.target_tpr, "tpr"), (a.target_fpr, "fpr")):
                if len(table) != len(a.subgroups) or any(len(row) != n_labels for row in table):
                    raise ConfigError(f"attribute {a.name!r}: {what} targets need one value per subgroup and label")
                if any(not 0.0 <= v <= 1.0 for row in table for v in row):
                    raise ConfigError(f"attribute {a.name!r}: {what} targets must lie in [0, 1]")
            a.as_attribute()
        for which in ("tpr", "fpr"):
            lo, hi = _combined_range(self, which)
            if lo < -1e-12 or hi > 1 + 1e-12:
                raise ConfigError(
                    f"combined {which} targets leave [0, 1] for some subgroup combination; "
                    "reduce the spread of later attributes"
                )


def _tables(spec: SynthSpec, which: str) -> list[np.ndarray]:
    return [np.asarray(a.target_tpr if which == "tpr" else a.target_fpr, dtype=float) for a in spec.attributes]


def _combined_range(spec: SynthSpec, which: str) -> tuple[float, float]:
    tables = _tables(spec, which)
    lo = tables[0].min(axis=0)
    hi = tables[0].max(axis=0)
    for a, t in zip(spec.attributes[1:], tables[1:]):
        centre = np.asarray(a.weights) @ t
        lo = lo + (t - centre).min(axis=0)
        hi = hi + (t - centre).max(axis=0)
    return float(lo.min()), float(hi.max())


def run_seed(seed: int, run: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(1, run))


def _record_targets(spec: SynthSpec, codes: list[np.ndarray], which: str) -> np.ndarray:
    """Per-record, per-label target rate under the additive model."""
    tables = _tables(spec, which)
    out = tables[0][codes[0]].copy()
    for a, t, c in zip(spec.attributes[1:], tables[1:], codes[1:]):
        out += t[c] - np.asarray(a.weights) @ t
    return np.clip(out, 0.0, 1.0)


def generate(spec: SynthSpec) -> tuple[Cohort, list[ScoreSet]]:
    n = spec.n_records
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(0,)))
    codes = [rng.choice(len(a.subgroups), size=n, p=np.asarray(a.weights)).astype(np.int16) for a in spec.attributes]
    disease = (rng.random((n, len(spec.labels))) < np.asarray(spec.prevalence)).astype(np.int8)
    truth = disease
    if spec.no_finding_label:
        truth = np.concatenate([disease, (disease.sum(axis=1) == 0).astype(np.int8)[:, None]], axis=1)

    digits = np.arange(n).astype(str)
    ids = np.char.add("img", digits)
    patients = np.char.add("pt", digits)
    label_schema = LabelSchema(spec.all_labels, spec.no_finding_label)
    attr_schema = AttributeSchema(tuple(a.as_attribute() for a in spec.attributes))
    cohort = Cohort(
        name=spec.name,
        label_schema=label_schema,
        attribute_schema=attr_schema,
        image_ids=ids,
        patient_ids=patients,
        truth=truth,
        splits=patient_split_codes(patients, spec.split_fractions, seed=int(spec.seed)),
        attributes={a.name: c for a, c in zip(spec.attributes, codes)},
    )

    p_above = np.where(truth == 1, _record_targets(spec, codes, "tpr"), _record_targets(spec, codes, "fpr"))
    inv_sharp = 1.0 / spec.score_sharpness
    scoresets = []
    for run in range(spec.n_runs):
        u = np.random.default_rng(run_seed(spec.seed, run)).random(truth.shape)
        above = u < p_above
        # reuse u within its side: v is uniform on [0, 1) above and (0, 1] below;
        # the selected denominator is never 0 (u < 0 or u >= 1 cannot happen)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(above, u, 1.0 - u) / np.where(above, p_above, 1.0 - p_above)
        # sharper spread pushes scores towards 1 (above) or 0 (below)
        if inv_sharp != 1.0:
            v **= inv_sharp
        scores = 0.5 + np.where(above, 0.5, -0.5) * v
        np.minimum(scores, _BELOW_HALF, out=scores, where=~above)
        scoresets.append(ScoreSet(run_id=run, image_ids=ids, labels=label_schema.labels, scores=scores))
    return cohort, scoresets


def expected_gaps(spec: SynthSpec) -> dict[tuple[str, str, str], float]:
    """Closed-form gaps keyed ``(attribute, subgroup, label)`` from target TPRs.

    Written independently of the disparity module on purpose.
    """
    out = {}
    for a in spec.attributes:
        for j, lab in enumerate(spec.all_labels):
            tprs = [a.target_tpr[s][j] for s in range(len(a.subgroups))]
            if a.arity == "binary":
                d = tprs[0] - tprs[1]
                out[(a.name, a.subgroups[0], lab)] = d
                out[(a.name, a.subgroups[1], lab)] = -d
            else:
                mid = statistics.median(tprs)
                for s, name in enumerate(a.subgroups):
                    out[(a.name, name, lab)] = tprs[s] - mid
    return out


# --------------------------------------------------------------------------
# configuration


def _targets(sec, key: str, n_sub: int, labels: tuple[str, ...], what: str) -> tuple[tuple[float, ...], ...]:
    base = float_list(require(sec, key), f"[{sec.name}] {key}")
    if len(base) != n_sub:
        raise ConfigError(f"[{sec.name}] {key}: expected {n_sub} values, got {len(base)}")
    table = [[base[s]] * len(labels) for s in range(n_sub)]
    for j, lab in enumerate(labels):
        override = sec.get(f"{key}.{lab}")
        if override is None:
            continue
        vals = float_list(override, f"[{sec.name}] {key}.{lab}")
        if len(vals) != n_sub:
            raise ConfigError(f"[{sec.name}] {key}.{lab}: expected {n_sub} values")
        for s in range(n_sub):
            table[s][j] = vals[s]
    return tuple(tuple(row) for row in table)


def load_synth_spec(path: str | Path, seed: int | None = None) -> SynthSpec:
    """Read a synthetic-cohort spec.

    Layout::

        [synth]
        name = demo
        n_records = 20000
        n_runs = 5
        seed = 0
        score_sharpness = 2.0
        split_fractions = 0.8, 0.1, 0.1
        no_finding_label = No Finding

        [labels]
        Atelectasis = 0.2
        Edema = 0.1

        [attribute:sex]
        subgroups = Female, Male
        weights = 0.45, 0.55
        tpr = 0.70, 0.80
        tpr.Edema = 0.60, 0.85
        fpr = 0.10, 0.10

    ``tpr``/``fpr`` give one value per subgroup for every label;
    ``tpr.<label>`` overrides a single label (the no-finding label included).
    """
    parser = read_ini(path)
    if "synth" not in parser or "labels" not in parser:
        raise ConfigError(f"{path}: [synth] and [labels] sections are required")
    sec = parser["synth"]
    labels = tuple(parser["labels"].keys())
    try:
        prevalence = tuple(float(parser["labels"][lab]) for lab in labels)
        n_records = int(require(sec, "n_records"))
        n_runs = int(sec.get("n_runs", "1"))
        spec_seed = int(sec.get("seed", "0"))
        sharpness = float(sec.get("score_sharpness", "2.0"))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    fractions = tuple(float_list(sec.get("split_fractions", "0.8, 0.1, 0.1"), "split_fractions"))
    nf = sec.get("no_finding_label") or None
    all_labels = labels + ((nf,) if nf else ())
    attrs = []
    for name, asec in sections_with_prefix(parser, "attribute"):
        subgroups = tuple(split_list(require(asec, "subgroups")))
        weights = float_list(require(asec, "weights"), f"[{asec.name}] weights")
        total = sum(weights)
        attrs.append(
            SynthAttribute(
                name=name,
                subgroups=subgroups,
                weights=tuple(w / total for w in weights),
                target_tpr=_targets(asec, "tpr", len(subgroups), all_labels, "tpr"),
                target_fpr=_targets(asec, "fpr", len(subgroups), all_labels, "fpr"),
                arity=asec.get("arity", ""),
            )
        )
    return SynthSpec(
        name=sec.get("name", Path(path).stem),
        labels=labels,
        prevalence=prevalence,
        attributes=tuple(attrs),
        n_records=n_records,
        n_runs=n_runs,
        seed=spec_seed if seed is None else seed,
        score_sharpness=sharpness,
        no_finding_label=nf,
        split_fractions=fractions,
    )


def split_counts(cohort: Cohort) -> dict[str, int]:
    return {s: int(np.count_nonzero(cohort.split_mask(s))) for s in SPLITS}
