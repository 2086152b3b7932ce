"""Run aggregation with Student-t intervals, Pearson tests and Bonferroni."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from scipy import special, stats as sps

from .errors import ContractError, UndefinedMetricError

CI_METHOD = "student-t two-sided, sample stddev / sqrt(n)"


@dataclass(frozen=True)
class RunAggregate:
    mean: float
    ci_halfwidth: float
    n_runs: int
    degenerate: bool = False

    @property
    def interval(self) -> tuple[float, float]:
        return self.mean - self.ci_halfwidth, self.mean + self.ci_halfwidth


def t_quantile(confidence: float, df: int) -> float:
    """Two-sided critical value t* with P(|T_df| <= t*) = confidence."""
    return float(sps.t.ppf(0.5 + confidence / 2, df))


def aggregate_runs(values: Sequence[float], confidence: float = 0.95) -> RunAggregate:
    values = [float(v) for v in values]
    if not values:
        raise ContractError("aggregate_runs needs at least one value")
    if not 0.0 < confidence < 1.0:
        raise ContractError(f"confidence must lie in (0, 1), got {confidence}")
    n = len(values)
    # fsum is exactly rounded, which keeps the mean independent of input order
    mean = math.fsum(values) / n
    if n == 1:
        return RunAggregate(values[0], 0.0, 1, degenerate=True)
    if all(v == values[0] for v in values):
        return RunAggregate(values[0], 0.0, n)
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))
    return RunAggregate(mean, t_quantile(confidence, n - 1) * sd / math.sqrt(n), n)


def t_sf_two_sided_from_r(r: float, df: int) -> float:
    """Two-sided p-value of t = r sqrt(df / (1 - r^2)) under Student-t(df).

    P(|T| >= |t|) = I_x(df/2, 1/2) with x = df / (df + t^2), and for this t
    that x reduces to 1 - r^2, so perfect correlation gives p = 0 cleanly.
    """
    x = max(0.0, min(1.0, 1.0 - r * r))
    return float(special.betainc(df / 2.0, 0.5, x))


def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Sample Pearson r and its two-sided p-value (n - 2 degrees of freedom)."""
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    if len(x) != len(y):
        raise ContractError(f"pearson: series lengths differ ({len(x)} vs {len(y)})")
    n = len(x)
    if n < 3:
        raise ContractError(f"pearson needs at least 3 points, got {n}")
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedMetricError("pearson: correlation undefined for a constant series")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    return r, t_sf_two_sided_from_r(r, n - 2)


def bonferroni_threshold(alpha: float, n_hypotheses: int) -> float:
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"alpha must lie in (0, 1), got {alpha}")
    if n_hypotheses < 1:
        raise ContractError(f"need at least one hypothesis, got {n_hypotheses}")
    return alpha / n_hypotheses


@dataclass(frozen=True)
class CorrelationResult:
    attribute: str
    subgroup: str
    dataset: str
    r: float | None
    p_value: float | None
    n_labels: int
    threshold: float
    significant: bool

    @property
    def defined(self) -> bool:
        return self.r is not None


def correlate_disparities(
    gap_means: Sequence[float | None],
    membership: Sequence[float | None],
    n_hypotheses: int,
    alpha: float = 0.05,
    *,
    attribute: str = "",
    subgroup: str = "",
    dataset: str = "",
) -> CorrelationResult:
    """Correlate a subgroup's per-label mean gaps with its membership shares.

    Labels where either value is missing are dropped pairwise.  Fewer than
    three remaining labels, or a constant series, gives an undefined result.
    """
    if len(gap_means) != len(membership):
        raise ContractError("gap and membership series must be aligned per label")
    threshold = bonferroni_threshold(alpha, n_hypotheses)
    pairs = [
        (g, m)
        for g, m in zip(gap_means, membership)
        if g is not None and m is not None and not (math.isnan(g) or math.isnan(m))
    ]
    undefined = CorrelationResult(attribute, subgroup, dataset, None, None, len(pairs), threshold, False)
    if len(pairs) < 3:
        return undefined
    try:
        r, p = pearson([g for g, _ in pairs], [m for _, m in pairs])
    except UndefinedMetricError:
        return undefined
    return CorrelationResult(attribute, subgroup, dataset, r, p, len(pairs), threshold, p < threshold)


CENSUS_MODES = ("paper", "all-subgroups")


def hypothesis_census(
    plan: Iterable[tuple[str, str, Sequence[str], str]], mode: str = "paper"
) -> list[tuple[str, str, str]]:
    """Enumerate correlation hypotheses as ``(dataset, attribute, subgroup)``.

    ``plan`` yields ``(dataset, attribute, subgroups, arity)``.  In ``paper``
    mode a binary attribute contributes only its first subgroup, since the two
    series are negations of each other and share |r| and p.
    """
    if mode not in CENSUS_MODES:
        raise ContractError(f"unknown census mode {mode!r}; expected one of {CENSUS_MODES}")
    out = []
    for dataset, attribute, subgroups, arity in plan:
        chosen = subgroups[:1] if (mode == "paper" and arity == "binary") else subgroups
        out.extend((dataset, attribute, s) for s in chosen)
    return out
