"""Native predictors, their trainers, the quadratic-root oracle and weight bundles.

Every predictor exposes ``predict(X) -> (n, m)``, ``input_dim`` and
``output_dim`` and is a pure function of its parameters and input.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .data import DataError, Dataset, LossKind, Perturbation, perturb_columns

logger = logging.getLogger(__name__)

BUNDLE_FORMAT = "rashomon-grs-bundle"
BUNDLE_VERSION = 1
MLP_BLOCK = 2048


class ModelError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class BundleError(ValueError):
    pass


@runtime_checkable
class Predictor(Protocol):
    def predict(self, X: np.ndarray) -> np.ndarray: ...

    @property
    def input_dim(self) -> int: ...

    @property
    def output_dim(self) -> int: ...


def _check_input(X, p: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != p:
        raise ModelError(f"expected input with {p} columns, got shape {X.shape}")
    return X


# --------------------------------------------------------------------------
# predictors
# --------------------------------------------------------------------------

@dataclass(eq=False)
class LinearModel:
    W: np.ndarray
    b: np.ndarray
    meta: dict = field(default_factory=dict)

    kind = "linear"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim == 1:
            self.W = self.W[:, None]
        self.b = np.asarray(self.b, dtype=np.float64).reshape(self.W.shape[1])
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ModelError("linear model has non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.W.shape[1]

    def predict(self, X):
        X = _check_input(X, self.input_dim)
        return X @ self.W + self.b


def _relu(a):
    return np.maximum(a, 0.0)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


@dataclass(eq=False)
class MlpModel:
    """Fully connected network: rectifier hidden layers, linear or sigmoid output.

    Inputs are standardised with ``(x - x_shift) / x_scale`` and the raw
    network output is mapped back with ``out * y_scale + y_shift``; these
    shifts are part of the parameters, fixed at training time.
    """

    weights: list
    biases: list
    x_shift: np.ndarray
    x_scale: np.ndarray
    y_shift: np.ndarray
    y_scale: np.ndarray
    output_activation: str = "identity"
    meta: dict = field(default_factory=dict)

    kind = "mlp"

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).ravel() for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ModelError("mlp needs matching, non-empty weight and bias lists")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape[0] != w.shape[1]:
                raise ModelError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ModelError(f"layer {k}: input width {w.shape[0]} does not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ModelError(f"layer {k} has non-finite parameters")
        self.x_shift = np.asarray(self.x_shift, dtype=np.float64).ravel()
        self.x_scale = np.asarray(self.x_scale, dtype=np.float64).ravel()
        self.y_shift = np.asarray(self.y_shift, dtype=np.float64).ravel()
        self.y_scale = np.asarray(self.y_scale, dtype=np.float64).ravel()
        if self.output_activation not in ("identity", "sigmoid"):
            raise ModelError(f"unknown output activation {self.output_activation!r}")

    @property
    def layer_sizes(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def _raw(self, Xs):
        h = Xs
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = h @ w
            a += b
            np.maximum(a, 0.0, out=a)
            h = a
        out = h @ self.weights[-1] + self.biases[-1]
        if self.output_activation == "sigmoid":
            out = _sigmoid(out)
        return out

    def predict(self, X):
        X = _check_input(X, self.input_dim)
        out = np.empty((X.shape[0], self.output_dim))
        # Fixed-size row blocks keep intermediates cache-resident.
        for i in range(0, X.shape[0], MLP_BLOCK):
            xs = (X[i:i + MLP_BLOCK] - self.x_shift) / self.x_scale
            out[i:i + MLP_BLOCK] = self._raw(xs) * self.y_scale + self.y_shift
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases],
            self.x_shift.copy(), self.x_scale.copy(), self.y_shift.copy(), self.y_scale.copy(),
            self.output_activation, dict(self.meta),
        )

    def with_weight_noise(self, rng: np.random.Generator, scale: float) -> "MlpModel":
        """Copy with i.i.d. N(0, scale^2) noise added to every weight and bias."""
        out = self.copy()
        if scale > 0:
            out.weights = [w + rng.normal(0.0, scale, w.shape) for w in out.weights]
            out.biases = [b + rng.normal(0.0, scale, b.shape) for b in out.biases]
        return out


@dataclass(eq=False)
class QuadraticOracle:
    """Closed-form roots of ``a x^2 + b x + c = 0`` from input columns (a, b, c).

    Each root is emitted as (real part, imaginary part); with
    ``root_sign="both"`` the '+' branch comes first.
    """

    root_sign: str = "both"

    kind = "quadratic-oracle"

    def __post_init__(self):
        if self.root_sign not in ("+", "-", "both"):
            raise ModelError(f"root_sign must be '+', '-' or 'both', got {self.root_sign!r}")

    @property
    def input_dim(self) -> int:
        return 3

    @property
    def output_dim(self) -> int:
        return 4 if self.root_sign == "both" else 2

    def predict(self, X):
        X = _check_input(X, 3)
        a, b, c = X[:, 0], X[:, 1], X[:, 2]
        if np.any(a == 0.0):
            raise ModelError("quadratic oracle needs a != 0 on every row")
        root = np.sqrt((b * b - 4.0 * a * c).astype(np.complex128))
        cols = []
        if self.root_sign in ("+", "both"):
            r = (-b + root) / (2.0 * a)
            cols += [r.real, r.imag]
        if self.root_sign in ("-", "both"):
            r = (-b - root) / (2.0 * a)
            cols += [r.real, r.imag]
        return np.stack(cols, axis=1)


@dataclass(eq=False)
class PerturbedPredictor:
    """A reference predictor applied to column-perturbed inputs."""

    base: object
    perturbation: Perturbation

    kind = "perturbed"

    def __post_init__(self):
        if self.perturbation.p != self.base.input_dim:
            raise ModelError("perturbation width does not match predictor input")

    @property
    def input_dim(self) -> int:
        return self.base.input_dim

    @property
    def output_dim(self) -> int:
        return self.base.output_dim

    def predict(self, X):
        return self.base.predict(perturb_columns(X, self.perturbation))


def predict(f, X) -> np.ndarray:
    out = np.asarray(f.predict(X), dtype=np.float64)
    return out[:, None] if out.ndim == 1 else out


# --------------------------------------------------------------------------
# data generation and scores
# --------------------------------------------------------------------------

QUADRATIC_FEATURES = ("a", "b", "c")
QUADRATIC_TARGETS = ("re_x1", "im_x1", "re_x2", "im_x2")


def gen_quadratic(n: int, seed: int = 0) -> Dataset:
    """Synthetic quadratic-root task: a ~ U(0.01, 1), b, c ~ U(-1, 1)."""
    if n < 1:
        raise DataError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.01, 1.0, n)
    b = rng.uniform(-1.0, 1.0, n)
    c = rng.uniform(-1.0, 1.0, n)
    X = np.stack([a, b, c], axis=1)
    Y = QuadraticOracle("both").predict(X)
    return Dataset(X, Y, QUADRATIC_FEATURES, QUADRATIC_TARGETS)


def r2_score(Y, P) -> float:
    """Coefficient of determination averaged uniformly over output columns."""
    Y = np.asarray(Y, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    ss_res = ((Y - P) ** 2).sum(axis=0)
    ss_tot = ((Y - Y.mean(axis=0)) ** 2).sum(axis=0)
    safe = np.where(ss_tot > 0, ss_tot, 1.0)
    per = np.where(ss_tot > 0, 1.0 - ss_res / safe, np.where(ss_res == 0, 1.0, 0.0))
    return float(per.mean())


def mean_absolute_error(Y, P) -> float:
    return float(np.mean(np.abs(np.asarray(Y) - np.asarray(P))))


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def train_linear(d: Dataset, l2: float = 0.0) -> LinearModel:
    """Ridge least squares with an unpenalised intercept."""
    if l2 < 0:
        raise ModelError(f"l2 must be >= 0, got {l2}")
    x_mean = d.X.mean(axis=0)
    y_mean = d.Y.mean(axis=0)
    Xc = d.X - x_mean
    Yc = d.Y - y_mean
    A = Xc.T @ Xc + l2 * np.eye(d.p)
    if l2 == 0.0 and np.linalg.matrix_rank(A) < d.p:
        raise ModelError("normal matrix is singular; use l2 > 0")
    W = np.linalg.solve(A, Xc.T @ Yc)
    b = y_mean - x_mean @ W
    return LinearModel(W, b, meta={"l2": float(l2)})


@dataclass
class MlpHyper:
    hidden: tuple = (64, 64, 64)
    epochs: int = 600
    learning_rate: float = 3e-3
    batch_size: int | None = 128
    seed: int = 0
    loss: str = "mse"
    optimizer: str = "adam"
    lr_schedule: str = "cosine"
    standardize: bool = True

    def validate(self) -> "MlpHyper":
        if any(int(h) < 1 for h in self.hidden):
            raise ModelError(f"hidden sizes must be positive: {self.hidden}")
        if self.epochs < 0:
            raise ModelError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ModelError("learning_rate must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ModelError("batch_size must be >= 1 or None for full batch")
        if LossKind.parse(self.loss) not in (LossKind.MSE, LossKind.LOGLOSS):
            raise ModelError("mlp training supports mse and logloss only")
        if self.optimizer not in ("adam", "sgd"):
            raise ModelError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ModelError(f"unknown lr_schedule {self.lr_schedule!r}")
        return self


def init_mlp(sizes: Sequence[int], rng: np.random.Generator) -> tuple:
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def loss_and_gradient(model: MlpModel, Xs: np.ndarray, T: np.ndarray, loss) -> tuple:
    """Training objective and its parameter gradients on standardised data.

    ``Xs`` and ``T`` live in the network's standardised input/output space.
    The objective is the mean over rows of the per-row loss summed over
    output components. Returns ``(loss, [dW...], [db...])``.
    """
    kind = LossKind.parse(loss)
    acts = [Xs]
    pre = []
    h = Xs
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        a = h @ w + b
        pre.append(a)
        h = _relu(a)
        acts.append(h)
    out = h @ model.weights[-1] + model.biases[-1]
    n = Xs.shape[0]
    if kind is LossKind.MSE:
        diff = out - T
        value = float(np.sum(diff * diff) / n)
        g = 2.0 * diff / n
    else:
        prob = _sigmoid(out)
        p = np.clip(prob, 1e-15, 1 - 1e-15)
        value = float(-np.sum(T * np.log(p) + (1 - T) * np.log(1 - p)) / n)
        g = (prob - T) / n
    gW = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    for k in range(len(model.weights) - 1, -1, -1):
        gW[k] = acts[k].T @ g
        gb[k] = g.sum(axis=0)
        if k:
            g = (g @ model.weights[k].T) * (pre[k - 1] > 0)
    return value, gW, gb


def train_mlp(d: Dataset, hyper: MlpHyper | None = None) -> MlpModel:
    """Mini-batch gradient training of a rectifier MLP, seeded and single-threaded."""
    hyper = (hyper or MlpHyper()).validate()
    kind = LossKind.parse(hyper.loss)
    rng = np.random.default_rng(hyper.seed)
    sizes = [d.p] + [int(h) for h in hyper.hidden] + [d.m]
    weights, biases = init_mlp(sizes, rng)

    if hyper.standardize:
        x_shift = d.X.mean(axis=0)
        x_scale = d.X.std(axis=0)
        x_scale = np.where(x_scale > 0, x_scale, 1.0)
    else:
        x_shift, x_scale = np.zeros(d.p), np.ones(d.p)
    if hyper.standardize and kind is LossKind.MSE:
        y_shift = d.Y.mean(axis=0)
        y_scale = d.Y.std(axis=0)
        y_scale = np.where(y_scale > 0, y_scale, 1.0)
    else:
        y_shift, y_scale = np.zeros(d.m), np.ones(d.m)
    if kind is LossKind.LOGLOSS and not np.all((d.Y == 0) | (d.Y == 1)):
        raise ModelError("logloss training requires targets in {0, 1}")

    model = MlpModel(weights, biases, x_shift, x_scale, y_shift, y_scale,
                     "sigmoid" if kind is LossKind.LOGLOSS else "identity")
    Xs = (d.X - x_shift) / x_scale
    T = (d.Y - y_shift) / y_scale
    n = d.n
    bs = n if hyper.batch_size is None else min(hyper.batch_size, n)

    params = model.weights + model.biases
    m1 = [np.zeros_like(q) for q in params]
    m2 = [np.zeros_like(q) for q in params]
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    step = 0
    history = []
    for epoch in range(hyper.epochs):
        lr = hyper.learning_rate
        if hyper.lr_schedule == "cosine":
            lr *= 0.5 * (1.0 + math.cos(math.pi * epoch / hyper.epochs))
        order = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            value, gW, gb = loss_and_gradient(model, Xs[idx], T[idx], kind)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            grads = gW + gb
            step += 1
            if hyper.optimizer == "sgd":
                for q, g in zip(params, grads):
                    q -= lr * g
            else:
                c1 = 1.0 - beta1 ** step
                c2 = 1.0 - beta2 ** step
                for q, g, a, v in zip(params, grads, m1, m2):
                    a *= beta1
                    a += (1.0 - beta1) * g
                    v *= beta2
                    v += (1.0 - beta2) * g * g
                    q -= lr * (a / c1) / (np.sqrt(v / c2) + eps_adam)
        epoch_loss = loss_and_gradient(model, Xs, T, kind)[0]
        if not math.isfinite(epoch_loss):
            raise TrainingError(f"non-finite training loss at epoch {epoch}")
        history.append(epoch_loss)
    model.meta = {
        "loss": kind.value,
        "seed": int(hyper.seed),
        "epochs": int(hyper.epochs),
        "final_loss": float(history[-1]) if history else None,
        "history": [float(h) for h in history],
    }
    logger.debug("trained mlp %s, final objective %s", sizes, model.meta["final_loss"])
    return model


# --------------------------------------------------------------------------
# bundles
# --------------------------------------------------------------------------

def _pack(arrays: dict) -> tuple:
    params = {}
    digest = hashlib.sha256()
    count = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype=np.float64)
        params[name] = {"shape": list(a.shape), "data": a.ravel().tolist()}
        digest.update(a.tobytes())
        count += a.size
    return params, count, digest.hexdigest()


def _bundle_dict(f) -> dict:
    kind = getattr(f, "kind", None)
    if kind == "linear":
        arrays, dims, extra = {"W": f.W, "b": f.b}, {"p": f.input_dim, "m": f.output_dim}, {}
    elif kind == "mlp":
        arrays = {"x_shift": f.x_shift, "x_scale": f.x_scale, "y_shift": f.y_shift, "y_scale": f.y_scale}
        for k, (w, b) in enumerate(zip(f.weights, f.biases)):
            arrays[f"W{k:03d}"] = w
            arrays[f"b{k:03d}"] = b
        dims = {"layer_sizes": f.layer_sizes}
        extra = {"output_activation": f.output_activation}
    elif kind == "quadratic-oracle":
        arrays, dims, extra = {}, {"p": 3, "m": f.output_dim}, {"root_sign": f.root_sign}
    elif kind == "perturbed":
        arrays = {"tau": f.perturbation.tau, "zeta": f.perturbation.zeta}
        dims = {"p": f.input_dim, "m": f.output_dim}
        extra = {"base": _bundle_dict(f.base)}
    else:
        raise BundleError(f"cannot serialise predictor of kind {kind!r}")
    params, count, digest = _pack(arrays)
    meta = {k: v for k, v in getattr(f, "meta", {}).items() if k != "history"}
    return {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "kind": kind,
        "dims": dims,
        "n_values": count,
        "sha256": digest,
        "params": params,
        "meta": meta,
        **extra,
    }


def _unpack(doc: dict) -> dict:
    params = doc.get("params", {})
    out = {}
    count = 0
    digest = hashlib.sha256()
    for name in sorted(params):
        entry = params[name]
        shape = tuple(int(s) for s in entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape, dtype=np.int64)):
            raise BundleError(f"corrupted bundle: array {name!r} length does not match its shape")
        a = data.reshape(shape)
        digest.update(np.ascontiguousarray(a).tobytes())
        count += a.size
        out[name] = a
    if count != doc.get("n_values") or digest.hexdigest() != doc.get("sha256"):
        raise BundleError("corrupted bundle: parameter count or checksum mismatch")
    return out


def _from_dict(doc: dict):
    if not isinstance(doc, dict) or doc.get("format") != BUNDLE_FORMAT:
        raise BundleError("not a model bundle")
    if doc.get("version") != BUNDLE_VERSION:
        raise BundleError(f"unsupported bundle version {doc.get('version')!r} (expected {BUNDLE_VERSION})")
    kind = doc.get("kind")
    if kind not in ("linear", "mlp", "quadratic-oracle", "perturbed"):
        raise BundleError(f"unsupported model kind {kind!r}")
    try:
        arrays = _unpack(doc)
        meta = dict(doc.get("meta", {}))
        if kind == "linear":
            return LinearModel(arrays["W"], arrays["b"], meta=meta)
        if kind == "mlp":
            n_layers = len(doc["dims"]["layer_sizes"]) - 1
            return MlpModel(
                [arrays[f"W{k:03d}"] for k in range(n_layers)],
                [arrays[f"b{k:03d}"] for k in range(n_layers)],
                arrays["x_shift"], arrays["x_scale"], arrays["y_shift"], arrays["y_scale"],
                doc.get("output_activation", "identity"), meta,
            )
        if kind == "quadratic-oracle":
            return QuadraticOracle(doc.get("root_sign", "both"))
        return PerturbedPredictor(_from_dict(doc["base"]), Perturbation(arrays["tau"], arrays["zeta"]))
    except (KeyError, TypeError, ModelError) as exc:
        raise BundleError(f"corrupted bundle: {exc}") from None


def bundle_to_json(f) -> str:
    return json.dumps(_bundle_dict(f), sort_keys=True)


def bundle_from_json(text: str):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BundleError(f"corrupted bundle: {exc}") from None
    return _from_dict(doc)


def save_bundle(f, path) -> None:
    """Write a predictor as a versioned JSON bundle (floats round-trip exactly)."""
    Path(path).write_text(bundle_to_json(f), encoding="utf-8")


def load_bundle(path):
    path = Path(path)
    if not path.is_file():
        raise BundleError(f"no such bundle: {path}")
    return bundle_from_json(path.read_text(encoding="utf-8"))
