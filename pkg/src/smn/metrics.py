"""Ranking and regression metrics: literal absolute-error form of the
popularity MSE (plus the conventional squared form), top-K order loss,
mean average precision over rank thresholds, and NDCG.

All rankings order by descending score with ties broken lexicographically
by event id, so every metric is a total, reproducible function of its
inputs. Computations are plain Python loops with a fixed summation order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

MAP_THRESHOLDS = (6, 7, 8, 9, 10, 15)
OL_KS = (10, 20, 30)


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class EventScore:
    id: str
    y_true: float
    y_pred: float


def _require(results):
    if not results:
        raise MetricsError("empty result set")


def true_ranking(results) -> list[int]:
    """Indices sorted by descending true popularity, ties by id."""
    return sorted(range(len(results)), key=lambda i: (-results[i].y_true, results[i].id))


def predicted_ranking(results) -> list[int]:
    return sorted(range(len(results)), key=lambda i: (-results[i].y_pred, results[i].id))


def mse_abs(results) -> float:
    """Mean absolute difference, the literal form of the popularity error."""
    _require(results)
    total = 0.0
    for r in results:
        total += abs(r.y_pred - r.y_true)
    return total / len(results)


def mse_sq(results) -> float:
    """Conventional mean squared error."""
    _require(results)
    total = 0.0
    for r in results:
        d = r.y_pred - r.y_true
        total += d * d
    return total / len(results)


def order_loss(results, k: int) -> float:
    """OL@K: sum over ranks 1..K of |true popularity at that rank of the
    true ranking - true popularity at that rank of the predicted ranking|,
    divided by the total event count."""
    _require(results)
    n = len(results)
    if not 0 <= k <= n:
        raise MetricsError(f"order loss needs 0 <= K <= {n}, got {k}")
    tr = true_ranking(results)
    pr = predicted_ranking(results)
    total = 0.0
    for rank in range(k):
        total += abs(results[tr[rank]].y_true - results[pr[rank]].y_true)
    return total / n


def map_at(results, m: int) -> float:
    """Average precision with relevance = membership in the true top-m."""
    _require(results)
    n = len(results)
    if not 1 <= m <= n:
        raise MetricsError(f"mAP threshold needs 1 <= m <= {n}, got {m}")
    tr = true_ranking(results)
    relevant = {results[i].id for i in tr[:m]}
    ap = 0.0
    hits = 0
    for rank, idx in enumerate(predicted_ranking(results), start=1):
        if results[idx].id in relevant:
            hits += 1
            ap += hits / rank
    return ap / m


def map_mean(results, thresholds=MAP_THRESHOLDS) -> float:
    total = 0.0
    for m in thresholds:
        total += map_at(results, m)
    return total / len(thresholds)


def ndcg_at(results, k: int) -> float:
    """NDCG@k with gain = normalized true popularity and discount
    1/log2(rank + 1). An all-zero ideal ranking is vacuously perfect."""
    _require(results)
    n = len(results)
    if not 1 <= k <= n:
        raise MetricsError(f"NDCG needs 1 <= k <= {n}, got {k}")
    pr = predicted_ranking(results)
    tr = true_ranking(results)
    dcg = 0.0
    ideal = 0.0
    for rank in range(1, k + 1):
        discount = math.log2(rank + 1)
        dcg += results[pr[rank - 1]].y_true / discount
        ideal += results[tr[rank - 1]].y_true / discount
    if ideal == 0.0:
        warnings.warn("all NDCG gains are zero; defining the score as 1.0",
                      RuntimeWarning)
        return 1.0
    return dcg / ideal


def full_report(results, ol_ks=OL_KS, map_thresholds=MAP_THRESHOLDS,
                ndcg_k: int = 10) -> dict:
    """Report over every metric. Cutoffs larger than the result count are
    skipped (small validation splits) rather than raised."""
    _require(results)
    n = len(results)
    per_m = {str(m): map_at(results, m) for m in map_thresholds if m <= n}
    feasible = [m for m in map_thresholds if m <= n]
    return {
        "mse_abs": mse_abs(results),
        "mse_sq": mse_sq(results),
        "ol": {str(k): order_loss(results, k) for k in ol_ks if k <= n},
        "map": {"mean": map_mean(results, feasible) if feasible else None,
                "per_m": per_m},
        f"ndcg@{ndcg_k}": ndcg_at(results, min(ndcg_k, n)),
    }
