"""Datasets, losses, permutation-loss estimators and column perturbation."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels

DEFAULT_FULL_CAP = 512
# Upper bound on rows handed to a single predict call by the estimators.
PREDICT_CHUNK = 1 << 16


class DataError(ValueError):
    """Raised for malformed datasets, CSV files or loss inputs."""


class LossKind(str, enum.Enum):
    MSE = "mse"
    MAE = "mae"
    LOGLOSS = "logloss"
    ZERO_ONE = "zero-one"

    @classmethod
    def parse(cls, value: "LossKind | str") -> "LossKind":
        if isinstance(value, cls):
            return value
        aliases = {
            "mean-squared-error": "mse",
            "mean-absolute-error": "mae",
            "logistic-loss": "logloss",
            "log-loss": "logloss",
            "zero-one-error": "zero-one",
            "zero_one": "zero-one",
        }
        key = str(value).strip().lower()
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise DataError(f"unknown loss kind {value!r}") from None

    @property
    def code(self) -> int:
        return _LOSS_CODES[self]

    @property
    def needs_binary_targets(self) -> bool:
        return self in (LossKind.LOGLOSS, LossKind.ZERO_ONE)


_LOSS_CODES = {
    LossKind.MSE: _kernels.MSE,
    LossKind.MAE: _kernels.MAE,
    LossKind.LOGLOSS: _kernels.LOGLOSS,
    LossKind.ZERO_ONE: _kernels.ZERO_ONE,
}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix ``X`` (n x p) with target matrix ``Y`` (n x m).

    Both arrays are copied and made read-only on construction.
    """

    X: np.ndarray
    Y: np.ndarray
    feature_names: tuple = ()
    target_names: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2:
            raise DataError(f"X must be 2-D, got shape {X.shape}")
        if X.shape[0] != Y.shape[0]:
            raise DataError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        n, p = X.shape
        if n < 2:
            raise DataError(f"dataset needs at least 2 rows, got {n}")
        if p < 1 or Y.shape[1] < 1:
            raise DataError("dataset needs at least one feature and one target")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DataError("dataset contains non-finite entries")
        fnames = tuple(self.feature_names) or tuple(f"x{i}" for i in range(p))
        tnames = tuple(self.target_names) or tuple(f"y{i}" for i in range(Y.shape[1]))
        if len(fnames) != p or len(tnames) != Y.shape[1]:
            raise DataError("name lists do not match matrix widths")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "Y", _frozen(Y))
        object.__setattr__(self, "feature_names", fnames)
        object.__setattr__(self, "target_names", tnames)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.X[rows], self.Y[rows], self.feature_names, self.target_names)


# --------------------------------------------------------------------------
# subsets and perturbations
# --------------------------------------------------------------------------

MAX_ORDER = 2


def subset_index(items: "int | Iterable[int]", p: int | None = None) -> tuple:
    """Canonical feature subset: a sorted tuple of 1 or 2 distinct indices."""
    if isinstance(items, (int, np.integer)):
        items = (int(items),)
    idx = tuple(int(i) for i in items)
    if len(set(idx)) != len(idx):
        raise DataError(f"subset {idx} has repeated indices")
    if not 1 <= len(idx) <= MAX_ORDER:
        raise DataError(f"subset order must be 1 or 2, got {len(idx)}")
    if p is not None and any(i < 0 or i >= p for i in idx):
        raise DataError(f"subset {idx} out of range for p={p}")
    return tuple(sorted(idx))


def subset_label(s: tuple, names: Sequence[str] | None = None) -> str:
    if names is None:
        return "+".join(str(i) for i in s)
    return "+".join(names[i] for i in s)


def subset_family(p: int, orders: Iterable[int] = (1, 2)) -> list:
    """All subsets of the requested orders, order-1 first, lexicographic within."""
    from itertools import combinations

    out = []
    for k in sorted(set(orders)):
        if not 1 <= k <= MAX_ORDER:
            raise DataError(f"subset order must be 1 or 2, got {k}")
        out.extend(tuple(c) for c in combinations(range(p), k))
    return out


@dataclass(frozen=True, eq=False)
class Perturbation:
    """Per-column affine map ``z_i = tau_i * x_i + zeta_i``."""

    tau: np.ndarray
    zeta: np.ndarray = field(default=None)

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=np.float64).ravel()
        zeta = np.zeros_like(tau) if self.zeta is None else np.asarray(self.zeta, dtype=np.float64).ravel()
        if tau.shape != zeta.shape:
            raise DataError("tau and zeta lengths differ")
        if not (np.all(np.isfinite(tau)) and np.all(np.isfinite(zeta))):
            raise DataError("perturbation has non-finite entries")
        object.__setattr__(self, "tau", _frozen(tau))
        object.__setattr__(self, "zeta", _frozen(zeta))

    @classmethod
    def identity(cls, p: int) -> "Perturbation":
        return cls(np.ones(p), np.zeros(p))

    @property
    def p(self) -> int:
        return self.tau.shape[0]

    def is_identity(self) -> bool:
        return bool(np.all(self.tau == 1.0) and np.all(self.zeta == 0.0))

    def then(self, other: "Perturbation") -> "Perturbation":
        """Perturbation equal to applying ``self`` first, then ``other``."""
        return Perturbation(other.tau * self.tau, other.tau * self.zeta + other.zeta)


def perturb_columns(X: np.ndarray, pert: Perturbation) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != pert.p:
        raise DataError(f"perturbation has {pert.p} entries, X has shape {X.shape}")
    if pert.is_identity():
        return X.copy()
    return X * pert.tau + pert.zeta


# --------------------------------------------------------------------------
# CSV and splitting
# --------------------------------------------------------------------------

def load_csv(path, target_columns: Sequence[str]) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        targets = list(target_columns)
        unknown = [t for t in targets if t not in header]
        if unknown:
            raise DataError(f"{path}: unknown target column(s) {unknown}")
        if not targets:
            raise DataError("at least one target column is required")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            vals = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: cannot parse row {lineno}, column {col!r}: {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value at row {lineno}, column {col!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    t_idx = [header.index(t) for t in targets]
    f_idx = [i for i in range(len(header)) if i not in t_idx]
    if not f_idx:
        raise DataError(f"{path}: no feature columns left after removing targets")
    return Dataset(
        table[:, f_idx],
        table[:, t_idx],
        tuple(header[i] for i in f_idx),
        tuple(targets),
    )


def write_csv(d: Dataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(d.feature_names) + list(d.target_names))
        for x, y in zip(d.X, d.Y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])


def split_sizes(n: int, fractions: Sequence[float]) -> tuple:
    if len(fractions) != 3:
        raise DataError("fractions must be (train, test, validation)")
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must be positive and sum to 1, got {tuple(fractions)}")
    n_test = int(math.floor(n * fractions[1] + 1e-9))
    n_val = int(math.floor(n * fractions[2] + 1e-9))
    n_train = n - n_test - n_val
    if min(n_train, n_test, n_val) <= 0:
        raise DataError(f"split of {n} rows by {tuple(fractions)} leaves an empty partition")
    return n_train, n_test, n_val


def split_dataset(d: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Random (train, test, validation) row partition; remainder goes to train."""
    n_train, n_test, _ = split_sizes(d.n, fractions)
    order = np.random.default_rng(seed).permutation(d.n)
    train = np.sort(order[:n_train])
    test = np.sort(order[n_train:n_train + n_test])
    val = np.sort(order[n_train + n_test:])
    return d.take(train), d.take(test), d.take(val)


# --------------------------------------------------------------------------
# losses and permutation estimators
# --------------------------------------------------------------------------

def _check_targets(Y: np.ndarray, kind: LossKind) -> None:
    if kind.needs_binary_targets and not np.all((Y == 0.0) | (Y == 1.0)):
        raise DataError(f"{kind.value} requires targets in {{0, 1}}")


def row_losses(predictions, Y, kind) -> np.ndarray:
    kind = LossKind.parse(kind)
    P = np.asarray(predictions, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if P.shape != Y.shape:
        raise DataError(f"prediction shape {P.shape} does not match target shape {Y.shape}")
    if not np.all(np.isfinite(P)):
        raise DataError("predictions contain non-finite values")
    _check_targets(Y, kind)
    return _kernels.row_losses(P, Y, kind.code)


def empirical_loss(predictions, Y, kind) -> float:
    """Mean over rows of the per-row loss (summed over output components)."""
    return float(np.mean(row_losses(predictions, Y, kind)))


def _predict(f, X: np.ndarray) -> np.ndarray:
    out = np.asarray(f.predict(X), dtype=np.float64)
    if out.ndim == 1:
        out = out[:, None]
    return out


def _predict_chunked(f, Z: np.ndarray) -> np.ndarray:
    if Z.shape[0] <= PREDICT_CHUNK:
        return _predict(f, Z)
    parts = [_predict(f, Z[i:i + PREDICT_CHUNK]) for i in range(0, Z.shape[0], PREDICT_CHUNK)]
    return np.concatenate(parts, axis=0)


def _fill_changed(f, Z: np.ndarray, changed: np.ndarray, base_pred: np.ndarray, lead_shape) -> np.ndarray:
    # Rows whose input is unchanged reuse the base prediction (predictors are pure).
    m = base_pred.shape[-1]
    pred = np.broadcast_to(base_pred, tuple(lead_shape) + (m,)).copy()
    if np.any(changed):
        pred[changed] = _predict_chunked(f, Z[changed])
    return pred


def permuted_delta_full(f, d: Dataset, s, kind, cap: int = DEFAULT_FULL_CAP) -> tuple:
    """Exact all-pairs permutation estimator as (baseline loss, mean increase)."""
    kind = LossKind.parse(kind)
    s = subset_index(s, d.p)
    if d.n > cap:
        raise DataError(f"full-pairs estimator limited to n <= {cap}, got n={d.n}")
    base_pred = _predict(f, d.X)
    base = row_losses(base_pred, d.Y, kind)
    Z = _kernels.switched_inputs(d.X, list(s))
    cols = list(s)
    changed = np.any(Z[:, :, cols] != d.X[:, None, cols], axis=2)
    pred = _fill_changed(f, Z, changed, base_pred[:, None, :], (d.n, d.n))
    if not np.all(np.isfinite(pred)):
        raise DataError("predictions contain non-finite values")
    delta = _kernels.pair_delta(pred, base, d.Y, kind.code)
    return float(np.mean(base)), delta


def permuted_loss_full(f, d: Dataset, s, kind, cap: int = DEFAULT_FULL_CAP) -> float:
    """All-pairs estimator of the loss with the columns in ``s`` switched.

    Averages ``loss(f(x_i with s-columns from x_j), y_i)`` over ordered
    pairs ``i != j``; cost is O(n^2) predictions, hence the row cap.
    """
    base, delta = permuted_delta_full(f, d, s, kind, cap)
    return base + delta


def random_derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform permutation without fixed points (rejection sampling, ~e draws)."""
    if n < 2:
        raise DataError("a derangement needs n >= 2")
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            return perm


def permutations_for(n: int, repeats: int, seed: int) -> np.ndarray:
    """``repeats`` seeded shuffles with no row left in place.

    Each row's donor is then uniform over the other rows, so the Monte
    Carlo mean targets exactly the all-pairs estimator.
    """
    rng = np.random.default_rng(seed)
    return np.stack([random_derangement(n, rng) for _ in range(repeats)])


def permuted_deltas_mc(f, d: Dataset, s, kind, repeats: int = 100, seed: int = 0,
                       perms: np.ndarray | None = None) -> tuple:
    """Per-repeat loss increases from jointly shuffling the columns in ``s``.

    Returns ``(baseline loss, deltas)`` where ``deltas`` has one entry per repeat.
    """
    kind = LossKind.parse(kind)
    s = subset_index(s, d.p)
    if perms is None:
        if repeats < 2:
            raise DataError(f"repeats must be >= 2, got {repeats}")
        perms = permutations_for(d.n, repeats, seed)
    reps = perms.shape[0]
    cols = list(s)
    base_pred = _predict(f, d.X)
    base = row_losses(base_pred, d.Y, kind)
    Z = np.broadcast_to(d.X, (reps,) + d.X.shape).copy()
    Z[:, :, cols] = d.X[perms][:, :, cols]
    changed = np.any(Z[:, :, cols] != d.X[None, :, cols], axis=2)
    pred = _fill_changed(f, Z, changed, base_pred[None, :, :], (reps, d.n))
    if not np.all(np.isfinite(pred)):
        raise DataError("predictions contain non-finite values")
    deltas = _kernels.repeat_delta(pred, base, d.Y, kind.code)
    return float(np.mean(base)), deltas


def permuted_loss_mc(f, d: Dataset, s, kind, repeats: int = 100, seed: int = 0) -> tuple:
    """Monte Carlo permuted loss: ``(mean, standard error)`` over ``repeats`` shuffles."""
    base, deltas = permuted_deltas_mc(f, d, s, kind, repeats, seed)
    se = float(np.std(deltas, ddof=1) / np.sqrt(len(deltas)))
    return base + float(np.mean(deltas)), se
