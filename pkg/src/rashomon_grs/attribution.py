"""Permutation-based first- and second-order feature attributions.

The effect of a subset is the loss increase caused by permuting its
columns as one block. Pair scores are interaction excesses: the pair
effect minus the two singleton effects.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (
    DEFAULT_FULL_CAP,
    DataError,
    Dataset,
    LossKind,
    empirical_loss,
    permutations_for,
    permuted_delta_full,
    permuted_deltas_mc,
    subset_index,
    subset_label,
)
from .models import QuadraticOracle, predict


@dataclass(frozen=True)
class Estimator:
    """How permuted losses are estimated: exact all-pairs or repeated shuffles."""

    mode: str = "mc"
    repeats: int = 100
    seed: int = 0
    cap: int = DEFAULT_FULL_CAP

    def __post_init__(self):
        if self.mode not in ("mc", "full"):
            raise ValueError(f"estimator mode must be 'mc' or 'full', got {self.mode!r}")
        if self.mode == "mc" and self.repeats < 2:
            raise ValueError(f"repeats must be >= 2, got {self.repeats}")

    def check(self, n: int) -> None:
        if self.mode == "full" and n > self.cap:
            raise DataError(f"full-pairs estimator limited to n <= {self.cap}, got n={n}")


class _EffectCache:
    """Per-(model, dataset) effects; MC draws share one permutation matrix."""

    def __init__(self, f, d: Dataset, kind: LossKind, est: Estimator, perms=None):
        est.check(d.n)
        self.f, self.d, self.kind, self.est = f, d, kind, est
        self.perms = perms
        if est.mode == "mc" and perms is None:
            self.perms = permutations_for(d.n, est.repeats, est.seed)
        self._effects = {}

    def effect(self, s: tuple):
        """Per-repeat effects (MC) or a length-1 array (full pairs)."""
        if s not in self._effects:
            if self.est.mode == "full":
                _, delta = permuted_delta_full(self.f, self.d, s, self.kind, self.est.cap)
                self._effects[s] = np.array([delta])
            else:
                _, deltas = permuted_deltas_mc(self.f, self.d, s, self.kind, perms=self.perms)
                self._effects[s] = deltas
        return self._effects[s]

    def score_draws(self, s: tuple) -> np.ndarray:
        if len(s) == 1:
            return self.effect(s)
        return self.effect(s) - sum(self.effect((i,)) for i in s)


def phi(f, d: Dataset, s, kind, est: Estimator = Estimator()) -> float:
    """Permuted loss minus baseline loss for the block ``s``."""
    s = subset_index(s, d.p)
    return float(np.mean(_EffectCache(f, d, LossKind.parse(kind), est).effect(s)))


def score(f, d: Dataset, s, kind, est: Estimator = Estimator()) -> float:
    """Effect for a single feature; interaction excess for a pair."""
    s = subset_index(s, d.p)
    return float(np.mean(_EffectCache(f, d, LossKind.parse(kind), est).score_draws(s)))


def score_with_se(f, d: Dataset, s, kind, est: Estimator = Estimator()) -> tuple:
    s = subset_index(s, d.p)
    draws = _EffectCache(f, d, LossKind.parse(kind), est).score_draws(s)
    se = float(np.std(draws, ddof=1) / np.sqrt(len(draws))) if len(draws) > 1 else 0.0
    return float(np.mean(draws)), se


@dataclass
class AttributionSet:
    model_id: str
    scores: dict

    def keys(self):
        return list(self.scores)


def _canonical_subsets(subsets, p: int) -> list:
    canon = [subset_index(s, p) for s in subsets]
    if not canon:
        raise DataError("subset list is empty")
    if len(set(canon)) != len(canon):
        raise DataError("subset list contains duplicates")
    return canon


def attribution_set(f, d: Dataset, subsets: Sequence, kind, est: Estimator = Estimator(),
                    model_id: str = "", perms=None) -> AttributionSet:
    canon = _canonical_subsets(subsets, d.p)
    cache = _EffectCache(f, d, LossKind.parse(kind), est, perms)
    return AttributionSet(model_id, {s: float(np.mean(cache.score_draws(s))) for s in canon})


@dataclass
class SubsetRange:
    scores: list
    min: float
    max: float
    reference: float

    @property
    def width(self) -> float:
        return self.max - self.min


@dataclass
class AttributionSpace:
    model_ids: list
    ranges: dict = field(default_factory=dict)

    def __getitem__(self, s) -> SubsetRange:
        return self.ranges[tuple(s)]

    def subsets(self) -> list:
        return list(self.ranges)

    def contains(self, s, value: float) -> bool:
        r = self.ranges[tuple(s)]
        return r.min <= value <= r.max


def attribution_space(sets: Sequence[AttributionSet], reference_id: str) -> AttributionSpace:
    if not sets:
        raise DataError("no attribution sets given")
    keys = list(sets[0].scores)
    for a in sets[1:]:
        if set(a.scores) != set(keys):
            raise DataError(f"attribution set {a.model_id!r} has different subset keys")
    ref = [a for a in sets if a.model_id == reference_id]
    if not ref:
        raise DataError(f"reference id {reference_id!r} not among attribution sets")
    space = AttributionSpace([a.model_id for a in sets])
    for k in sorted(keys, key=lambda s: (len(s), s)):
        vals = [a.scores[k] for a in sets]
        space.ranges[k] = SubsetRange(vals, float(min(vals)), float(max(vals)), float(ref[0].scores[k]))
    return space


QUADRATIC_TABLE_SUBSETS = ((0,), (1,), (2,), (0, 1), (0, 2), (1, 2))


def ground_truth_table(oracle: QuadraticOracle, d: Dataset, repeats: int = 100, seed: int = 0,
                       kind=LossKind.MSE) -> dict:
    """Oracle attributions on ``d`` as ``{subset: (mean, standard error)}``.

    Singletons give effects, pairs give interaction excesses; every entry
    uses the same ``repeats`` shuffles.
    """
    if not isinstance(oracle, QuadraticOracle):
        raise DataError("ground truth requires a QuadraticOracle")
    if d.p != 3 or d.m != oracle.output_dim:
        raise DataError("dataset does not match the quadratic oracle's dimensions")
    residual = empirical_loss(predict(oracle, d.X), d.Y, LossKind.MSE)
    if residual > 1e-9 * max(1.0, float(np.mean(d.Y ** 2))):
        raise DataError(f"dataset targets are not the oracle's roots (residual {residual:.3g})")
    cache = _EffectCache(oracle, d, LossKind.parse(kind), Estimator("mc", repeats, seed))
    table = {}
    for s in QUADRATIC_TABLE_SUBSETS:
        draws = cache.score_draws(s)
        table[s] = (float(np.mean(draws)), float(np.std(draws, ddof=1) / np.sqrt(len(draws))))
    return table


def export_attributions_csv(sets: Sequence[AttributionSet], path, names=None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subset", "model_id", "score"])
        for a in sets:
            for s, v in a.scores.items():
                w.writerow([subset_label(s, names), a.model_id, repr(float(v))])


def export_space_csv(space: AttributionSpace, path, names=None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subset", "model_id", "score", "min", "max", "reference"])
        for s, r in space.ranges.items():
            for mid, v in zip(space.model_ids, r.scores):
                w.writerow([subset_label(s, names), mid, repr(float(v)), repr(r.min), repr(r.max),
                            repr(r.reference)])
