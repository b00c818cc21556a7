"""Rank-sum comparison and bootstrap confidence intervals for run analysis."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

EXACT_LIMIT = 12  # pooled size at or below which the p value is enumerated


@dataclass(frozen=True)
class WilcoxonResult:
    u_statistic: float
    p_value: float
    exact: bool


def _midranks(pooled: list[float]) -> list[float]:
    n = len(pooled)
    order = sorted(range(n), key=lambda k: pooled[k])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        mid = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = mid
        i = j + 1
    return ranks


def wilcoxon_rank_sum(sample_a, sample_b) -> WilcoxonResult:
    """Two-sided rank-sum test with midranks for ties.

    The p value is exact (full enumeration of group assignments) when the
    pooled size is at most EXACT_LIMIT, otherwise a normal approximation with
    tie and continuity corrections is used.  Identical samples give p = 1.
    """
    a = [float(v) for v in sample_a]
    b = [float(v) for v in sample_b]
    if len(a) < 3 or len(b) < 3:
        raise ValueError("each sample needs at least 3 values")
    na, nb = len(a), len(b)
    n = na + nb
    ranks = _midranks(a + b)
    r_a = sum(ranks[:na])
    u = r_a - na * (na + 1) / 2.0

    if n <= EXACT_LIMIT:
        le = ge = total = 0
        for combo in itertools.combinations(range(n), na):
            u_perm = sum(ranks[k] for k in combo) - na * (na + 1) / 2.0
            total += 1
            if u_perm <= u + 1e-12:
                le += 1
            if u_perm >= u - 1e-12:
                ge += 1
        p = min(1.0, 2.0 * min(le / total, ge / total))
        return WilcoxonResult(u_statistic=u, p_value=p, exact=True)

    mean = na * nb / 2.0
    ties = {}
    for r in ranks:
        ties[r] = ties.get(r, 0) + 1
    tie_term = sum(t ** 3 - t for t in ties.values())
    var = na * nb / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0.0:
        return WilcoxonResult(u_statistic=u, p_value=1.0, exact=False)
    diff = u - mean
    if diff > 0.5:
        diff -= 0.5
    elif diff < -0.5:
        diff += 0.5
    else:
        diff = 0.0
    z = diff / math.sqrt(var)
    p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return WilcoxonResult(u_statistic=u, p_value=p, exact=False)


def bootstrap_mean_ci(values, rng: np.random.Generator,
                      n_resamples: int = 1000,
                      confidence: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of `values`."""
    values = np.asarray(list(values), dtype=float)
    if len(values) == 0:
        raise ValueError("cannot bootstrap an empty sample")
    if len(values) == 1:
        return float(values[0]), float(values[0])
    idx = rng.integers(0, len(values), size=(n_resamples, len(values)))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - confidence) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)
