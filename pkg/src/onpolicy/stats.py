"""Study statistics: conditional percentiles with order-statistic confidence
intervals, top-fraction value histograms, rescaled ECDFs and quantile tables.

Percentiles use the nearest-rank convention (no interpolation) so that point
estimates and interval bounds are always observed scores.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .config import is_active
from .errors import UsageError

QUANTILE_ROWS = (("90th", 0.90), ("95th", 0.95), ("99th", 0.99), ("Max", 1.0))


@dataclass(frozen=True)
class CiEstimate:
    point: float
    low: float
    high: float
    n: int


def binomial_ci_indices(n: int, p: float = 0.95, alpha: float = 0.05):
    """1-based ascending order-statistic ranks bounding the ``p`` quantile.

    The count of samples below the true ``p`` quantile is Binomial(n, p);
    its ``alpha/2`` and ``1 - alpha/2`` inverse-CDF values, clamped to
    ``[1, n]``, give the ranks of the lower and upper bound.
    """
    if n < 1:
        raise UsageError("need at least one sample")
    lo = int(binom.ppf(alpha / 2.0, n, p))
    hi = int(binom.ppf(1.0 - alpha / 2.0, n, p))
    lo = min(max(lo, 1), n)
    hi = min(max(hi, lo), n)
    return lo, hi


def nearest_rank(sorted_scores, q: float) -> float:
    n = len(sorted_scores)
    if n == 0:
        raise UsageError("empty sample")
    rank = min(max(int(math.ceil(q * n - 1e-12)), 1), n)
    return float(sorted_scores[rank - 1])


def percentile_ci(scores, q: float = 0.95, alpha: float = 0.05) -> CiEstimate:
    s = np.sort(np.asarray(scores, dtype=np.float64))
    if s.size == 0:
        raise UsageError("empty sample")
    point = nearest_rank(s, q)
    lo, hi = binomial_ci_indices(s.size, q, alpha)
    low, high = float(s[lo - 1]), float(s[hi - 1])
    return CiEstimate(point, min(low, point), max(high, point), int(s.size))


def _matches(a, b):
    if isinstance(a, str) or isinstance(b, str):
        return str(a).lower() == str(b).lower()
    if isinstance(a, float) or isinstance(b, float):
        return a is not None and b is not None and math.isclose(float(a), float(b), rel_tol=1e-12)
    return a == b


def active_records(records, choice):
    """Records in which ``choice`` is active (sub-choices condition on their parents)."""
    return [r for r in records if is_active(r.config, choice)]


def choice_values(records, choice):
    seen = []
    for r in active_records(records, choice):
        v = getattr(r.config, choice)
        if not any(_matches(v, s) and type(v) is type(s) for s in seen):
            seen.append(v)
    return sorted(seen, key=lambda v: (v is None, str(type(v)), v if v is not None else 0))


def conditional_percentile(records, choice, value, q: float = 0.95, alpha: float = 0.05):
    """Percentile of median scores among records with ``choice == value``.

    Returns ``None`` when no record matches.
    """
    scores = [r.median_score for r in active_records(records, choice)
              if _matches(getattr(r.config, choice), value)]
    if not scores:
        return None
    return percentile_ci(scores, q, alpha)


def _rank_key(r):
    return (-r.median_score, r.config.config_hash())


def top_fraction_distribution(records, choice, frac: float = 0.05) -> dict:
    """Value frequencies of ``choice`` within the top ``ceil(frac * n)`` records."""
    pool = active_records(records, choice)
    if not pool:
        return {}
    k = max(1, int(math.ceil(frac * len(pool) - 1e-12)))
    top = sorted(pool, key=_rank_key)[:k]
    counts = {}
    for r in top:
        v = getattr(r.config, choice)
        counts[v] = counts.get(v, 0) + 1
    out = {v: 0.0 for v in choice_values(pool, choice)}
    for v, c in counts.items():
        out[v] = c / k
    return out


def ecdf_rescaled(scores, random_baseline: float, best_score: float | None = None):
    """Sorted scores mapped to ``(s - random) / (best - random)`` and ECDF heights."""
    s = np.sort(np.asarray(scores, dtype=np.float64))
    if s.size == 0:
        raise UsageError("empty sample")
    best = float(s[-1]) if best_score is None else float(best_score)
    span = best - float(random_baseline)
    if not span > 0:
        raise UsageError("best score must exceed the random baseline")
    x = (s - random_baseline) / span
    y = np.arange(1, s.size + 1) / s.size
    return x, y


def quantile_table(scores) -> dict:
    s = np.sort(np.asarray(scores, dtype=np.float64))
    if s.size == 0:
        raise UsageError("empty sample")
    return {"q90": nearest_rank(s, 0.90), "q95": nearest_rank(s, 0.95),
            "q99": nearest_rank(s, 0.99), "max": float(s[-1])}


def format_quantile_table(tables: dict) -> str:
    """CSV with rows 90th/95th/99th/Max and one column per environment."""
    envs = list(tables)
    keys = {"90th": "q90", "95th": "q95", "99th": "q99", "Max": "max"}
    lines = ["quantile," + ",".join(envs)]
    for label, _ in QUANTILE_ROWS:
        lines.append(label + "," + ",".join(repr(tables[e][keys[label]]) for e in envs))
    return "\n".join(lines) + "\n"
