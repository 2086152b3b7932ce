import numpy as np
import pytest

from tprgap.errors import ConfigError
from tprgap.synth import SynthAttribute, SynthSpec, expected_gaps, generate, load_synth_spec, split_counts
from tprgap.thresholds import ThresholdTable
from tprgap.disparity import subgroup_tpr


def binary_spec(tpr=(0.9, 0.6), fpr=(0.1, 0.1), n=50_000, runs=2, seed=1, labels=("A",), prevalence=(0.5,)):
    k = len(labels)
    return SynthSpec(
        name="s",
        labels=labels,
        prevalence=prevalence,
        attributes=(SynthAttribute("g", ("A1", "B1"), (0.5, 0.5), ((tpr[0],) * k, (tpr[1],) * k), ((fpr[0],) * k, (fpr[1],) * k)),),
        n_records=n,
        n_runs=runs,
        seed=seed,
        split_fractions=(0.05, 0.05, 0.9),
    )


def test_empirical_tpr_near_target():
    # ~0.9 * 0.5 * 0.5 * 100k ≈ 22.5k positives per subgroup on test
    spec = binary_spec(n=100_000, runs=1)
    cohort, runs = generate(spec)
    found = subgroup_tpr(cohort, runs[0], ThresholdTable.constant(["A"], [0], 0.5), "g", "A")
    assert min(c.positives for c in found) >= 20_000
    assert [c.tpr for c in found] == pytest.approx([0.9, 0.6], abs=0.01)


def test_perfect_recall_degenerate():
    spec = binary_spec(tpr=(1.0, 1.0), fpr=(1.0, 1.0), n=2000, runs=1)
    _, runs = generate(spec)
    assert runs[0].scores.min() >= 0.5


def test_zero_targets_put_everything_below():
    _, runs = generate(binary_spec(tpr=(0.0, 0.0), fpr=(0.0, 0.0), n=2000, runs=1))
    assert runs[0].scores.max() < 0.5


def test_determinism_and_seed():
    a_cohort, a_runs = generate(binary_spec(n=3000))
    b_cohort, b_runs = generate(binary_spec(n=3000))
    assert np.array_equal(a_cohort.truth, b_cohort.truth)
    assert np.array_equal(a_cohort.splits, b_cohort.splits)
    assert all(np.array_equal(x.scores, y.scores) for x, y in zip(a_runs, b_runs))
    c_cohort, _ = generate(binary_spec(n=3000, seed=2))
    assert not np.array_equal(a_cohort.truth, c_cohort.truth)
    # runs differ from each other
    assert not np.array_equal(a_runs[0].scores, a_runs[1].scores)


def test_run_stream_is_stable_under_run_count():
    _, two = generate(binary_spec(n=3000, runs=2))
    _, three = generate(binary_spec(n=3000, runs=3))
    assert np.array_equal(two[1].scores, three[1].scores)


def test_no_finding_label_derived():
    spec = SynthSpec(
        name="nf",
        labels=("A", "B"),
        prevalence=(0.3, 0.2),
        attributes=(SynthAttribute("g", ("x", "y"), (0.5, 0.5), ((0.8,) * 3, (0.7,) * 3), ((0.1,) * 3, (0.1,) * 3)),),
        n_records=2000,
        no_finding_label="NF",
    )
    cohort, _ = generate(spec)
    assert cohort.label_schema.labels == ("A", "B", "NF")
    assert np.array_equal(cohort.truth[:, 2], (cohort.truth[:, :2].sum(axis=1) == 0).astype(cohort.truth.dtype))
    counts = split_counts(cohort)
    assert sum(counts.values()) == 2000


@pytest.mark.parametrize(
    "tprs,want",
    [
        ((0.9, 0.6), [0.3, -0.3]),
        ((0.2, 0.5, 0.9), [-0.3, 0.0, 0.4]),
        ((0.2, 0.4, 0.6, 0.8), [-0.3, -0.1, 0.1, 0.3]),
    ],
)
def test_expected_gaps(tprs, want):
    k = len(tprs)
    subs = tuple(f"s{i}" for i in range(k))
    spec = SynthSpec(
        name="e",
        labels=("A",),
        prevalence=(0.2,),
        attributes=(SynthAttribute("g", subs, (1 / k,) * k, tuple((t,) for t in tprs), tuple((0.1,) for _ in tprs)),),
        n_records=10,
    )
    got = expected_gaps(spec)
    assert [got[("g", s, "A")] for s in subs] == pytest.approx(want)


def test_validation_errors():
    with pytest.raises(ConfigError):
        binary_spec(tpr=(1.2, 0.5))
    with pytest.raises(ConfigError):
        binary_spec(prevalence=(0.0,))
    with pytest.raises(ConfigError, match="weights"):
        SynthSpec("w", ("A",), (0.2,), (SynthAttribute("g", ("x", "y"), (0.6, 0.6), ((0.5,), (0.5,)), ((0.1,), (0.1,))),), 10)


def test_load_synth_spec(tmp_path):
    p = tmp_path / "s.ini"
    p.write_text(
        "[synth]\nname = toy\nn_records = 500\nn_runs = 3\nseed = 4\nno_finding_label = No Finding\n\n"
        "[labels]\nAtelectasis = 0.2\nEdema = 0.1\n\n"
        "[attribute:sex]\nsubgroups = Female, Male\nweights = 45, 55\ntpr = 0.7, 0.8\ntpr.Edema = 0.6, 0.85\nfpr = 0.1, 0.1\n"
    )
    spec = load_synth_spec(p)
    assert spec.labels == ("Atelectasis", "Edema") and spec.all_labels[-1] == "No Finding"
    assert spec.n_runs == 3 and spec.seed == 4
    attr = spec.attributes[0]
    assert attr.weights == pytest.approx((0.45, 0.55)) and attr.arity == "binary"
    assert [row[1] for row in attr.target_tpr] == [0.6, 0.85]
    assert load_synth_spec(p, seed=9).seed == 9
