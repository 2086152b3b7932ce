"""Compare audited gaps with closed-form expectations on random synthetic specs.

    python scripts/oracle_sweep.py --specs 50 --positives 20000 --runs 2

Prints the error distribution per spec; useful for checking how the gap error
shrinks with cohort size.
"""

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from helpers import random_oracle_spec  # noqa: E402

from tprgap.disparity import audit_attribute  # noqa: E402
from tprgap.synth import expected_gaps, generate  # noqa: E402
from tprgap.thresholds import ThresholdTable  # noqa: E402


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--specs", type=int, default=50)
    ap.add_argument("--positives", type=int, default=20_000)
    ap.add_argument("--runs", type=int, default=2)
    ap.add_argument("--seed", type=int, default=20240611)
    ap.add_argument("--tolerance", type=float, default=0.02)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    all_errors = []
    t0 = time.perf_counter()
    for i in range(args.specs):
        spec = random_oracle_spec(rng, args.positives, args.runs, seed=1000 + i)
        cohort, scoresets = generate(spec)
        thresholds = ThresholdTable.constant(cohort.label_schema.labels, range(args.runs), 0.5)
        audit = audit_attribute(cohort, scoresets, thresholds, "group")
        errors = [
            math.inf if audit.mean_gap(s, lab) is None else abs(audit.mean_gap(s, lab) - g)
            for (_, s, lab), g in expected_gaps(spec).items()
        ]
        all_errors += errors
        k = len(spec.attributes[0].subgroups)
        print(f"{spec.name}: k={k} labels={len(spec.labels)} n={spec.n_records} max|err|={max(errors):.4f}")
    errs = np.array(all_errors)
    print(
        f"\n{errs.size} cells, max {errs.max():.4f}, p99 {np.quantile(errs, 0.99):.4f}, "
        f"violations {(errs > args.tolerance).sum()}, {time.perf_counter() - t0:.1f}s"
    )


if __name__ == "__main__":
    main()
