"""Set-level statistics: search efficiency, attribution distance and range."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

from .attribution import AttributionSet, AttributionSpace


def ser(n_valid: int, n_total: int) -> float:
    """Fraction of searched models that ended up in the set."""
    if n_total < 1:
        raise ValueError("n_total must be >= 1")
    if not 0 <= n_valid <= n_total:
        raise ValueError(f"need 0 <= n_valid <= n_total, got {n_valid}/{n_total}")
    return n_valid / n_total


def _scores(a):
    return a.scores if isinstance(a, AttributionSet) else a


def chebyshev_distance(a, b) -> float:
    """Max-norm distance between two attribution sets with identical keys."""
    sa, sb = _scores(a), _scores(b)
    if set(sa) != set(sb):
        raise ValueError("attribution sets have different subset keys")
    return max((abs(sa[k] - sb[k]) for k in sa), default=0.0)


def fer(space: AttributionSpace, order="all") -> float:
    """Sum of attribution interval widths over subsets of the given order (1, 2 or 'all')."""
    if not space.ranges:
        raise ValueError("attribution space is empty")
    if order in ("all", None):
        keep = lambda s: True  # noqa: E731
    elif int(order) in (1, 2):
        keep = lambda s: len(s) == int(order)  # noqa: E731
    else:
        raise ValueError(f"order must be 1, 2 or 'all', got {order!r}")
    return float(sum(r.max - r.min for s, r in space.ranges.items() if keep(s)))


def redundancy_filter(sets: Sequence, tol: float) -> tuple:
    """Greedy first-wins pass dropping sets within ``tol`` of an earlier kept set.

    Returns ``(kept, removed_ids)``.
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")
    kept, removed = [], []
    for a in sets:
        if any(chebyshev_distance(a, k) <= tol for k in kept):
            removed.append(getattr(a, "model_id", None))
        else:
            kept.append(a)
    return kept, removed


def min_pairwise_distance(sets: Sequence) -> float:
    if len(sets) < 2:
        return float("inf")
    return min(chebyshev_distance(a, b) for a, b in combinations(sets, 2))


@dataclass
class MetricsReport:
    ser: float
    fer_first_order: float
    fer_second_order: float
    min_pairwise_distance: float
    n_members: int
    n_searched: int

    def as_dict(self) -> dict:
        return {
            "ser": self.ser,
            "fer_first_order": self.fer_first_order,
            "fer_second_order": self.fer_second_order,
            "min_pairwise_distance": self.min_pairwise_distance,
            "n_members": self.n_members,
            "n_searched": self.n_searched,
        }


def metrics_report(space: AttributionSpace, sets: Sequence, n_members: int, n_searched: int) -> MetricsReport:
    has_second = any(len(s) == 2 for s in space.ranges)
    has_first = any(len(s) == 1 for s in space.ranges)
    return MetricsReport(
        ser=ser(n_members, n_searched),
        fer_first_order=fer(space, 1) if has_first else 0.0,
        fer_second_order=fer(space, 2) if has_second else 0.0,
        min_pairwise_distance=min_pairwise_distance(sets),
        n_members=n_members,
        n_searched=n_searched,
    )
