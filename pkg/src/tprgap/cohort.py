"""Audit cohorts: schemas, records, ingestion, harmonization and splitting.

A :class:`Cohort` is stored column-wise (numpy arrays) so that cohorts with
hundreds of thousands of images stay cheap to audit.  The record-level view
(:class:`Record`) is materialised on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .config import read_ini, require, sections_with_prefix, split_list
from .errors import (
    ConfigError,
    EmptyInputError,
    HarmonizationError,
    InputError,
    IntegrityError,
    ParseError,
    SchemaError,
)

SPLITS = ("train", "validation", "test")
UNASSIGNED = -1
MISSING = -1
TRUTH_SUFFIX = "_truth"

# U-zero: everything that is not an explicit positive counts as negative.
RAW_STATES = {
    "pos": 1,
    "positive": 1,
    "neg": 0,
    "negative": 0,
    "unc": 0,
    "uncertain": 0,
    "nm": 0,
    "not-mentioned": 0,
    "1": 1,
    "0": 0,
}


@dataclass(frozen=True)
class LabelSchema:
    labels: tuple[str, ...]
    no_finding_label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.labels:
            raise SchemaError("label schema is empty")
        if any(not str(lab).strip() for lab in self.labels):
            raise SchemaError("label names must be non-empty")
        if len(set(self.labels)) != len(self.labels):
            raise SchemaError(f"duplicate label names in {self.labels}")
        if self.no_finding_label is not None and self.no_finding_label not in self.labels:
            raise SchemaError(f"no-finding label {self.no_finding_label!r} is not among the labels")

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise SchemaError(f"unknown label {label!r}") from None

    @property
    def disease_labels(self) -> tuple[str, ...]:
        return tuple(lab for lab in self.labels if lab != self.no_finding_label)


@dataclass(frozen=True)
class Attribute:
    name: str
    subgroups: tuple[str, ...]
    arity: str = "multi"

    def __post_init__(self):
        object.__setattr__(self, "subgroups", tuple(self.subgroups))
        if self.arity not in ("binary", "multi"):
            raise SchemaError(f"attribute {self.name!r}: arity must be binary or multi, got {self.arity!r}")
        if len(self.subgroups) < 2:
            raise SchemaError(f"attribute {self.name!r} needs at least 2 subgroups")
        if len(set(self.subgroups)) != len(self.subgroups):
            raise SchemaError(f"attribute {self.name!r} has duplicate subgroup names")
        if self.arity == "binary" and len(self.subgroups) != 2:
            raise SchemaError(f"binary attribute {self.name!r} must have exactly 2 subgroups")

    @property
    def reference(self) -> str:
        """Subgroup whose gap is reported first for binary attributes."""
        return self.subgroups[0]


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[Attribute, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate attribute names in {names}")

    def __iter__(self):
        return iter(self.attributes)

    def __len__(self):
        return len(self.attributes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def get(self, name: str) -> Attribute:
        for attr in self.attributes:
            if attr.name == name:
                return attr
        raise SchemaError(f"unknown attribute {name!r}")


@dataclass(frozen=True)
class Record:
    image_id: str
    patient_id: str
    split: str | None
    truth: tuple[int, ...]
    attribute_values: Mapping[str, str | None]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Cohort:
    """Column-wise cohort.

    ``splits`` holds indices into :data:`SPLITS` (-1 = unassigned) and each
    entry of ``attributes`` holds subgroup indices (-1 = missing value).
    """

    name: str
    label_schema: LabelSchema
    attribute_schema: AttributeSchema
    image_ids: np.ndarray
    patient_ids: np.ndarray
    truth: np.ndarray
    splits: np.ndarray | None = None
    attributes: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.image_ids)
        image_ids = _frozen(np.asarray(self.image_ids, dtype=str))
        patient_ids = _frozen(np.asarray(self.patient_ids, dtype=str))
        truth = np.asarray(self.truth)
        if truth.ndim != 2 or truth.shape != (n, len(self.label_schema)):
            raise SchemaError(
                f"truth matrix shape {truth.shape} does not match {n} records x {len(self.label_schema)} labels"
            )
        if truth.size and not ((truth == 0) | (truth == 1)).all():
            raise ParseError("truth values must be 0 or 1")
        truth = _frozen(truth.astype(np.int8))
        if len(patient_ids) != n:
            raise SchemaError("patient_ids length does not match image_ids")
        splits = np.full(n, UNASSIGNED, dtype=np.int8) if self.splits is None else np.asarray(self.splits)
        if splits.shape != (n,) or (splits.size and (splits.min() < UNASSIGNED or splits.max() >= len(SPLITS))):
            raise SchemaError("split codes must be -1 (unassigned) or an index into SPLITS")
        attrs = {}
        for attr in self.attribute_schema:
            codes = self.attributes.get(attr.name)
            if codes is None:
                codes = np.full(n, MISSING, dtype=np.int16)
            codes = np.asarray(codes)
            if codes.shape != (n,):
                raise SchemaError(f"attribute {attr.name!r} column has wrong length")
            if codes.size and (codes.min() < MISSING or codes.max() >= len(attr.subgroups)):
                raise IntegrityError(f"attribute {attr.name!r} names a subgroup outside the schema")
            attrs[attr.name] = _frozen(codes.astype(np.int16))
        extra = set(self.attributes) - set(attrs)
        if extra:
            raise SchemaError(f"attribute columns not in schema: {sorted(extra)}")
        nf = self.label_schema.no_finding_label
        if nf is not None and n:
            j = self.label_schema.index(nf)
            others = np.delete(truth, j, axis=1)
            bad = np.flatnonzero((truth[:, j] == 1) & (others.sum(axis=1) > 0))
            if bad.size:
                raise IntegrityError(
                    f"no-finding invariant violated for image {image_ids[bad[0]]!r}: "
                    f"{nf!r} is 1 but another label is also 1"
                )
        dup = pd.Index(image_ids).duplicated()
        if dup.any():
            raise IntegrityError(f"duplicate image_id {image_ids[np.flatnonzero(dup)[0]]!r}")
        object.__setattr__(self, "image_ids", image_ids)
        object.__setattr__(self, "patient_ids", patient_ids)
        object.__setattr__(self, "truth", truth)
        object.__setattr__(self, "splits", _frozen(splits.astype(np.int8)))
        object.__setattr__(self, "attributes", attrs)

    def __len__(self):
        return len(self.image_ids)

    @classmethod
    def from_records(
        cls,
        name: str,
        label_schema: LabelSchema,
        attribute_schema: AttributeSchema,
        records: Iterable[Record],
    ) -> "Cohort":
        records = list(records)
        for r in records:
            if len(r.truth) != len(label_schema):
                raise SchemaError(f"record {r.image_id!r}: truth length {len(r.truth)} != {len(label_schema)}")
        truth = np.array([r.truth for r in records], dtype=np.int8).reshape(len(records), len(label_schema))
        splits = np.array(
            [UNASSIGNED if r.split is None else _split_code(r.split) for r in records], dtype=np.int8
        )
        attrs = {}
        for attr in attribute_schema:
            codes = []
            for r in records:
                value = r.attribute_values.get(attr.name)
                if value is None:
                    codes.append(MISSING)
                elif value in attr.subgroups:
                    codes.append(attr.subgroups.index(value))
                else:
                    raise IntegrityError(f"record {r.image_id!r}: {value!r} is not a subgroup of {attr.name!r}")
            attrs[attr.name] = np.array(codes, dtype=np.int16)
        return cls(
            name=name,
            label_schema=label_schema,
            attribute_schema=attribute_schema,
            image_ids=np.array([r.image_id for r in records], dtype=str),
            patient_ids=np.array([r.patient_id for r in records], dtype=str),
            truth=truth,
            splits=splits,
            attributes=attrs,
        )

    def record(self, i: int) -> Record:
        split = int(self.splits[i])
        values = {}
        for attr in self.attribute_schema:
            code = int(self.attributes[attr.name][i])
            values[attr.name] = None if code == MISSING else attr.subgroups[code]
        return Record(
            image_id=str(self.image_ids[i]),
            patient_id=str(self.patient_ids[i]),
            split=None if split == UNASSIGNED else SPLITS[split],
            truth=tuple(int(v) for v in self.truth[i]),
            attribute_values=values,
        )

    @property
    def records(self) -> list[Record]:
        return [self.record(i) for i in range(len(self))]

    def split_mask(self, split: str) -> np.ndarray:
        return self.splits == _split_code(split)

    def replace(self, **changes) -> "Cohort":
        fields = dict(
            name=self.name,
            label_schema=self.label_schema,
            attribute_schema=self.attribute_schema,
            image_ids=self.image_ids,
            patient_ids=self.patient_ids,
            truth=self.truth,
            splits=self.splits,
            attributes=self.attributes,
        )
        fields.update(changes)
        return Cohort(**fields)


def _split_code(split: str) -> int:
    try:
        return SPLITS.index(split)
    except ValueError:
        raise ParseError(f"unknown split {split!r}; expected one of {SPLITS}") from None


# --------------------------------------------------------------------------
# schema configuration


def load_schema_config(path: str | Path) -> tuple[str, LabelSchema, AttributeSchema]:
    """Read a schema file.

    Layout::

        [cohort]
        name = CXR
        labels = Atelectasis, Cardiomegaly, No Finding
        no_finding_label = No Finding

        [attribute:sex]
        subgroups = Female, Male
        arity = binary
    """
    parser = read_ini(path)
    if "cohort" not in parser:
        raise ConfigError(f"{path}: missing [cohort] section")
    sec = parser["cohort"]
    labels = LabelSchema(tuple(split_list(require(sec, "labels"))), sec.get("no_finding_label") or None)
    attrs = []
    for name, asec in sections_with_prefix(parser, "attribute"):
        subgroups = tuple(split_list(require(asec, "subgroups")))
        arity = asec.get("arity", "binary" if len(subgroups) == 2 else "multi")
        attrs.append(Attribute(name, subgroups, arity))
    return sec.get("name", Path(path).stem), labels, AttributeSchema(tuple(attrs))


def write_schema_config(
    path: str | Path, name: str, label_schema: LabelSchema, attribute_schema: AttributeSchema
) -> None:
    lines = ["[cohort]", f"name = {name}", "labels = " + ", ".join(label_schema.labels)]
    if label_schema.no_finding_label is not None:
        lines.append(f"no_finding_label = {label_schema.no_finding_label}")
    for attr in attribute_schema:
        lines += ["", f"[attribute:{attr.name}]", "subgroups = " + ", ".join(attr.subgroups), f"arity = {attr.arity}"]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# ingestion / export


def collapse_labels(raw_truth: Sequence) -> list[int]:
    """Map raw report states to binary truth: positive -> 1, anything else -> 0."""
    out = []
    for value in raw_truth:
        key = str(value).strip().lower()
        if key not in RAW_STATES:
            raise ParseError(f"unrecognised label state {value!r}")
        out.append(RAW_STATES[key])
    return out


def ingest_cohort(
    records_file: str | Path,
    schema_config: str | Path | tuple[str, LabelSchema, AttributeSchema],
    raw_labels: bool = False,
) -> Cohort:
    """Load a records CSV against a schema and validate every row.

    With ``raw_labels`` the ``<label>_truth`` columns hold pos/neg/unc/nm
    tokens which are collapsed to binary; otherwise they must be 0/1.
    """
    if isinstance(schema_config, tuple):
        name, label_schema, attribute_schema = schema_config
    else:
        name, label_schema, attribute_schema = load_schema_config(schema_config)
    records_file = Path(records_file)
    if not records_file.is_file():
        raise InputError(f"input error: no such file: {records_file}")
    try:
        df = pd.read_csv(records_file, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise EmptyInputError(f"{records_file}: file is empty") from None
    required = ["image_id", "patient_id", *attribute_schema.names, *(lab + TRUTH_SUFFIX for lab in label_schema.labels)]
    for col in required:
        if col not in df.columns:
            raise SchemaError(f"{records_file}: missing column {col!r}")
    if len(df) == 0:
        raise EmptyInputError(f"{records_file}: no records")

    def line(i):  # header is line 1
        return i + 2

    truth = np.zeros((len(df), len(label_schema)), dtype=np.int8)
    for j, lab in enumerate(label_schema.labels):
        col = df[lab + TRUTH_SUFFIX].str.strip()
        if raw_labels:
            mapped = col.str.lower().map(RAW_STATES)
            what = "label state (pos/neg/unc/nm)"
        else:
            mapped = col.map({"0": 0, "1": 1})
            what = "binary truth value"
        bad = np.flatnonzero(mapped.isna().to_numpy())
        if bad.size:
            i = bad[0]
            raise ParseError(
                f"{records_file}: line {line(i)}: column {lab + TRUTH_SUFFIX!r}: "
                f"{df.iloc[i][lab + TRUTH_SUFFIX]!r} is not a valid {what}"
            )
        truth[:, j] = mapped.to_numpy(dtype=np.int8)

    nf = label_schema.no_finding_label
    if nf is not None:
        j = label_schema.index(nf)
        bad = np.flatnonzero((truth[:, j] == 1) & (np.delete(truth, j, axis=1).sum(axis=1) > 0))
        if bad.size:
            raise IntegrityError(
                f"{records_file}: line {line(bad[0])}: no-finding invariant violated: "
                f"{nf!r} is 1 while another label is 1"
            )

    image_ids = df["image_id"].to_numpy(dtype=str)
    dup = df["image_id"].duplicated().to_numpy()
    if dup.any():
        i = int(np.flatnonzero(dup)[0])
        raise IntegrityError(f"{records_file}: line {line(i)}: duplicate image_id {image_ids[i]!r}")
    empty_ids = np.flatnonzero((df["image_id"].str.strip() == "").to_numpy() | (df["patient_id"].str.strip() == "").to_numpy())
    if empty_ids.size:
        raise ParseError(f"{records_file}: line {line(empty_ids[0])}: empty image_id or patient_id")

    splits = np.full(len(df), UNASSIGNED, dtype=np.int8)
    if "split" in df.columns:
        codes = df["split"].str.strip().map({"": UNASSIGNED, **{s: k for k, s in enumerate(SPLITS)}})
        bad = np.flatnonzero(codes.isna().to_numpy())
        if bad.size:
            raise ParseError(f"{records_file}: line {line(bad[0])}: unknown split {df['split'].iloc[bad[0]]!r}")
        splits = codes.to_numpy(dtype=np.int8)

    attrs = {}
    for attr in attribute_schema:
        mapping = {"": MISSING, **{s: k for k, s in enumerate(attr.subgroups)}}
        codes = df[attr.name].str.strip().map(mapping)
        bad = np.flatnonzero(codes.isna().to_numpy())
        if bad.size:
            raise SchemaError(
                f"{records_file}: line {line(bad[0])}: {df[attr.name].iloc[bad[0]]!r} "
                f"is not a subgroup of attribute {attr.name!r}"
            )
        attrs[attr.name] = codes.to_numpy(dtype=np.int16)

    return Cohort(
        name=name,
        label_schema=label_schema,
        attribute_schema=attribute_schema,
        image_ids=image_ids,
        patient_ids=df["patient_id"].to_numpy(dtype=str),
        truth=truth,
        splits=splits,
        attributes=attrs,
    )


def cohort_frame(cohort: Cohort) -> pd.DataFrame:
    """Canonical tabular form: image_id, patient_id, split, attributes, truths."""
    cols = {
        "image_id": cohort.image_ids,
        "patient_id": cohort.patient_ids,
        "split": np.array([""] + list(SPLITS), dtype=object)[cohort.splits.astype(np.int64) + 1],
    }
    for attr in cohort.attribute_schema:
        names = np.array(list(attr.subgroups) + [""], dtype=object)
        cols[attr.name] = names[cohort.attributes[attr.name]]  # -1 picks the trailing ""
    for j, lab in enumerate(cohort.label_schema.labels):
        cols[lab + TRUTH_SUFFIX] = cohort.truth[:, j]
    return pd.DataFrame(cols)


def export_cohort(cohort: Cohort, records_file: str | Path, schema_file: str | Path | None = None) -> None:
    cohort_frame(cohort).to_csv(records_file, index=False, lineterminator="\n", encoding="utf-8")
    if schema_file is not None:
        write_schema_config(schema_file, cohort.name, cohort.label_schema, cohort.attribute_schema)


# --------------------------------------------------------------------------
# harmonization and splitting


def harmonize(cohorts: Sequence[Cohort], shared_labels: Sequence[str], name: str = "ALL") -> Cohort:
    """Concatenate cohorts over a shared label set.

    Image and patient ids are prefixed with ``<source name>/``.  Attributes
    not present in every source are dropped; shared attributes must declare
    the same subgroups.
    """
    if not cohorts:
        raise EmptyInputError("harmonize needs at least one cohort")
    shared_labels = list(shared_labels)
    for c in cohorts:
        for lab in shared_labels:
            if lab not in c.label_schema.labels:
                raise HarmonizationError(f"cohort {c.name!r} has no label {lab!r}")

    nf_candidates = {c.label_schema.no_finding_label for c in cohorts} & set(shared_labels)
    if len(nf_candidates) > 1:
        raise HarmonizationError(f"sources disagree on the no-finding label: {sorted(nf_candidates)}")
    no_finding = nf_candidates.pop() if nf_candidates else None

    common = [a for a in cohorts[0].attribute_schema if all(a.name in c.attribute_schema.names for c in cohorts)]
    for attr in common:
        for c in cohorts[1:]:
            other = c.attribute_schema.get(attr.name)
            if other.subgroups != attr.subgroups or other.arity != attr.arity:
                raise HarmonizationError(
                    f"attribute {attr.name!r} differs between {cohorts[0].name!r} and {c.name!r}"
                )

    def prefixed(c, ids):
        return np.char.add(f"{c.name}/", ids.astype(str))

    return Cohort(
        name=name,
        label_schema=LabelSchema(tuple(shared_labels), no_finding),
        attribute_schema=AttributeSchema(tuple(common)),
        image_ids=np.concatenate([prefixed(c, c.image_ids) for c in cohorts]),
        patient_ids=np.concatenate([prefixed(c, c.patient_ids) for c in cohorts]),
        truth=np.concatenate(
            [c.truth[:, [c.label_schema.index(lab) for lab in shared_labels]] for c in cohorts]
        ),
        splits=np.concatenate([c.splits for c in cohorts]),
        attributes={a.name: np.concatenate([c.attributes[a.name] for c in cohorts]) for a in common},
    )


def patient_split_codes(patient_ids: np.ndarray, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> np.ndarray:
    """Split code per record such that all images of a patient share a split.

    Patients (sorted by id) are shuffled with ``seed`` and cut into blocks of
    ``round(f * n_patients)``.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three positive numbers summing to 1, got {fractions}")
    if len(patient_ids) == 0:
        raise EmptyInputError("no records to split")
    inverse, uniques = pd.factorize(np.asarray(patient_ids), sort=True)
    n_patients = len(uniques)
    order = np.random.default_rng(seed).permutation(n_patients)
    n_train = round(fractions[0] * n_patients)
    n_val = min(round(fractions[1] * n_patients), n_patients - n_train)
    patient_split = np.empty(n_patients, dtype=np.int8)
    patient_split[order[:n_train]] = 0
    patient_split[order[n_train : n_train + n_val]] = 1
    patient_split[order[n_train + n_val :]] = 2
    return patient_split[inverse]


def split_patients(
    cohort: Cohort, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
) -> Cohort:
    """Assign train/validation/test at patient level (see :func:`patient_split_codes`)."""
    if len(cohort) == 0:
        raise EmptyInputError(f"cohort {cohort.name!r} has no records to split")
    return cohort.replace(splits=patient_split_codes(cohort.patient_ids, fractions, seed))
