"""Loss-reduction kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``RASHOMON_GRS_NUMBA`` is not set to ``0``/``false``/``off``.
Both paths compute the same quantities; ``benchmarks/bench_kernels.py``
times them against each other.

Permuted losses are accumulated as deltas against the unpermuted row loss,
so a row whose input did not change contributes exactly zero.
"""
from __future__ import annotations

import os

import numpy as np

# Integer codes shared by both paths.
MSE, MAE, LOGLOSS, ZERO_ONE = 0, 1, 2, 3

_LOG_CLIP = 1e-15


def _numba_requested() -> bool:
    flag = os.environ.get("RASHOMON_GRS_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


try:
    if not _numba_requested():
        raise ImportError("numba disabled by RASHOMON_GRS_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


# --------------------------------------------------------------------------
# numpy path
# --------------------------------------------------------------------------

def _elementwise_np(pred, y, kind):
    if kind == MSE:
        d = pred - y
        return d * d
    if kind == MAE:
        return np.abs(pred - y)
    if kind == LOGLOSS:
        p = np.clip(pred, _LOG_CLIP, 1.0 - _LOG_CLIP)
        return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    if kind == ZERO_ONE:
        return ((pred >= 0.5) != (y >= 0.5)).astype(np.float64)
    raise ValueError(f"unknown loss code {kind}")


def row_losses_np(pred, y, kind):
    return _elementwise_np(pred, y, kind).sum(axis=1)


def pair_delta_np(pred, base, y, kind):
    # pred[i, j]: row i with the switched block taken from row j
    n = y.shape[0]
    per = _elementwise_np(pred, y[:, None, :], kind).sum(axis=2) - base[:, None]
    np.fill_diagonal(per, 0.0)
    return float(per.sum() / (n * (n - 1)))


def repeat_delta_np(pred, base, y, kind):
    # pred: (repeats, n, m) -> mean row-loss delta per repeat
    per = _elementwise_np(pred, y[None, :, :], kind).sum(axis=2) - base[None, :]
    return per.mean(axis=1)


def switched_inputs_np(x, cols):
    n, p = x.shape
    z = np.broadcast_to(x[:, None, :], (n, n, p)).copy()
    z[:, :, cols] = np.broadcast_to(x[None, :, :], (n, n, p))[:, :, cols]
    return z


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _elem(p, t, kind):
        if kind == 0:
            d = p - t
            return d * d
        if kind == 1:
            return abs(p - t)
        if kind == 2:
            q = min(max(p, 1e-15), 1.0 - 1e-15)
            return -(t * np.log(q) + (1.0 - t) * np.log(1.0 - q))
        return 1.0 if (p >= 0.5) != (t >= 0.5) else 0.0

    @njit(cache=True)
    def row_losses_nb(pred, y, kind):
        n, m = y.shape
        out = np.empty(n)
        for i in range(n):
            s = 0.0
            for k in range(m):
                s += _elem(pred[i, k], y[i, k], kind)
            out[i] = s
        return out

    @njit(cache=True)
    def pair_delta_nb(pred, base, y, kind):
        n, m = y.shape
        total = 0.0
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                s = 0.0
                for k in range(m):
                    s += _elem(pred[i, j, k], y[i, k], kind)
                total += s - base[i]
        return total / (n * (n - 1))

    @njit(cache=True)
    def repeat_delta_nb(pred, base, y, kind):
        reps, n, m = pred.shape
        out = np.empty(reps)
        for r in range(reps):
            total = 0.0
            for i in range(n):
                s = 0.0
                for k in range(m):
                    s += _elem(pred[r, i, k], y[i, k], kind)
                total += s - base[i]
            out[r] = total / n
        return out

    @njit(cache=True)
    def switched_inputs_nb(x, cols):
        n, p = x.shape
        z = np.empty((n, n, p))
        for i in range(n):
            for j in range(n):
                for c in range(p):
                    z[i, j, c] = x[i, c]
                for c in cols:
                    z[i, j, c] = x[j, c]
        return z


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def row_losses(pred, y, kind: int) -> np.ndarray:
    """Per-row loss summed over output components."""
    if HAS_NUMBA:
        return row_losses_nb(_f64(pred), _f64(y), kind)
    return row_losses_np(_f64(pred), _f64(y), kind)


def pair_delta(pred, base, y, kind: int) -> float:
    """Mean over ordered pairs i != j of ``loss(pred[i, j], y[i]) - base[i]``."""
    if HAS_NUMBA:
        return float(pair_delta_nb(_f64(pred), _f64(base), _f64(y), kind))
    return pair_delta_np(_f64(pred), _f64(base), _f64(y), kind)


def repeat_delta(pred, base, y, kind: int) -> np.ndarray:
    """Per-repeat mean of ``loss(pred[r, i], y[i]) - base[i]``."""
    if HAS_NUMBA:
        return repeat_delta_nb(_f64(pred), _f64(base), _f64(y), kind)
    return repeat_delta_np(_f64(pred), _f64(base), _f64(y), kind)


def switched_inputs(x, cols) -> np.ndarray:
    """(n, n, p) tensor: row i of ``x`` with columns ``cols`` taken from row j."""
    cols = np.asarray(cols, dtype=np.int64)
    if HAS_NUMBA:
        return switched_inputs_nb(_f64(x), cols)
    return switched_inputs_np(_f64(x), cols)


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
