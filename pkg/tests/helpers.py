"""Shared builders and brute-force oracles for the test suite."""

import math

import numpy as np

from tprgap.synth import SynthAttribute, SynthSpec


def f1_oracle(scores, truth, t):
    tp = fp = fn = 0
    for s, y in zip(scores, truth):
        pred = s >= t
        if pred and y:
            tp += 1
        elif pred:
            fp += 1
        elif y:
            fn += 1
    return 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


def candidates_oracle(scores):
    u = sorted(set(float(s) for s in scores))
    return [0.0] + [(a + b) / 2 for a, b in zip(u, u[1:])] + [1.0]


def best_f1_oracle(scores, truth):
    return max(f1_oracle(scores, truth, t) for t in candidates_oracle(scores))


def auc_oracle(scores, truth):
    pos = [s for s, y in zip(scores, truth) if y]
    neg = [s for s, y in zip(scores, truth) if not y]
    wins = ties = 0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1
            elif p == q:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def random_oracle_spec(rng, positives_per_cell=20_000, n_runs=2, seed=0):
    """Single-attribute spec sized so every (subgroup, label) cell expects enough test positives."""
    k = int(rng.integers(2, 7))
    n_labels = int(rng.integers(8, 15))
    weights = rng.uniform(1.0, 2.0, k)
    weights /= weights.sum()
    prevalence = rng.uniform(0.3, 0.6, n_labels)
    test_fraction = 0.9
    n = math.ceil(1.03 * positives_per_cell / (weights.min() * prevalence.min() * test_fraction))
    attr = SynthAttribute(
        name="group",
        subgroups=tuple(f"g{i}" for i in range(k)),
        weights=tuple(weights),
        target_tpr=tuple(tuple(rng.uniform(0.5, 0.95, n_labels)) for _ in range(k)),
        target_fpr=tuple(tuple(rng.uniform(0.05, 0.3, n_labels)) for _ in range(k)),
    )
    return SynthSpec(
        name=f"oracle{seed}",
        labels=tuple(f"L{j}" for j in range(n_labels)),
        prevalence=tuple(prevalence),
        attributes=(attr,),
        n_records=n,
        n_runs=n_runs,
        seed=seed,
        score_sharpness=float(rng.uniform(0.5, 4.0)),
        split_fractions=(0.05, 0.05, 0.9),
    )
