import json

import numpy as np
import pytest

from rashomon_grs.data import Dataset, Perturbation
from rashomon_grs.models import (
    BundleError,
    LinearModel,
    MlpHyper,
    MlpModel,
    ModelError,
    PerturbedPredictor,
    QuadraticOracle,
    TrainingError,
    bundle_from_json,
    bundle_to_json,
    gen_quadratic,
    init_mlp,
    load_bundle,
    loss_and_gradient,
    mean_absolute_error,
    predict,
    r2_score,
    save_bundle,
    train_linear,
    train_mlp,
)


def test_quadratic_oracle_real_and_complex_roots():
    # x^2 - 3x + 2 = (x - 1)(x - 2); x^2 + 1 has roots +-i; 2x^2 + 4x + 2 has a double root -1
    X = np.array([[1.0, -3.0, 2.0], [1.0, 0.0, 1.0], [2.0, 4.0, 2.0]])
    out = QuadraticOracle().predict(X)
    np.testing.assert_allclose(out[0], [2.0, 0.0, 1.0, 0.0])
    np.testing.assert_allclose(out[1], [0.0, 1.0, 0.0, -1.0])
    np.testing.assert_allclose(out[2], [-1.0, 0.0, -1.0, 0.0])
    assert QuadraticOracle("+").predict(X).shape == (3, 2)
    with pytest.raises(ModelError):
        QuadraticOracle().predict(np.array([[0.0, 1.0, 1.0]]))


def test_gen_quadratic_ranges_and_determinism():
    d = gen_quadratic(500, seed=3)
    assert d.feature_names == ("a", "b", "c") and d.m == 4
    assert d.X[:, 0].min() >= 0.01 and d.X[:, 0].max() <= 1.0
    assert np.abs(d.X[:, 1:]).max() <= 1.0
    assert np.array_equal(d.X, gen_quadratic(500, seed=3).X)
    # targets satisfy the polynomial: a z^2 + b z + c = 0 for z = re + i im
    z = d.Y[:, 0] + 1j * d.Y[:, 1]
    a, b, c = d.X.T
    assert np.max(np.abs(a * z * z + b * z + c)) < 1e-9


def test_scores_hand_values():
    Y = np.array([[1.0], [2.0], [3.0]])
    assert r2_score(Y, Y) == 1.0
    assert r2_score(Y, np.full_like(Y, 2.0)) == 0.0
    assert mean_absolute_error(Y, Y + 0.5) == 0.5


def test_train_linear_matches_lstsq(rng):
    X = rng.normal(size=(50, 3))
    Y = X @ np.array([[1.0, 0.0], [2.0, 1.0], [-1.0, 3.0]]) + 0.1 * rng.normal(size=(50, 2)) + 2.0
    f = train_linear(Dataset(X, Y))
    A = np.hstack([X, np.ones((50, 1))])
    sol, *_ = np.linalg.lstsq(A, Y, rcond=None)
    np.testing.assert_allclose(f.W, sol[:3], atol=1e-10)
    np.testing.assert_allclose(f.b, sol[3], atol=1e-10)
    with pytest.raises(ModelError, match="singular"):
        train_linear(Dataset(np.ones((5, 2)), np.arange(5.0)))
    assert train_linear(Dataset(np.ones((5, 2)), np.arange(5.0)), l2=0.1).W.shape == (2, 1)


def _tiny_mlp(rng, out_act="identity"):
    w, b = init_mlp([3, 5, 4, 2], rng)
    b = [rng.normal(size=v.shape) * 0.1 for v in b]
    return MlpModel(w, b, np.zeros(3), np.ones(3), np.zeros(2), np.ones(2), out_act)


@pytest.mark.parametrize("loss", ["mse", "logloss"])
def test_gradient_matches_finite_differences(loss, rng):
    f = _tiny_mlp(rng, "sigmoid" if loss == "logloss" else "identity")
    Xs = rng.normal(size=(11, 3))
    T = rng.normal(size=(11, 2)) if loss == "mse" else (rng.uniform(size=(11, 2)) > 0.5).astype(float)
    _, gW, gb = loss_and_gradient(f, Xs, T, loss)
    h = 1e-6
    for params, grads in ((f.weights, gW), (f.biases, gb)):
        for q, g in zip(params, grads):
            it = np.nditer(q, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = q[idx]
                q[idx] = old + h
                up = loss_and_gradient(f, Xs, T, loss)[0]
                q[idx] = old - h
                dn = loss_and_gradient(f, Xs, T, loss)[0]
                q[idx] = old
                fd = (up - dn) / (2 * h)
                assert abs(fd - g[idx]) <= 1e-5 * max(1.0, abs(fd)), (idx, fd, g[idx])


def test_train_mlp_is_deterministic_and_learns(rng):
    X = rng.uniform(-1, 1, size=(300, 2))
    Y = np.sin(2 * X[:, :1]) + X[:, 1:] ** 2
    d = Dataset(X, Y)
    hyper = MlpHyper(hidden=(16, 16), epochs=60, learning_rate=1e-2, batch_size=32, seed=4)
    f1 = train_mlp(d, hyper)
    f2 = train_mlp(d, hyper)
    assert np.array_equal(predict(f1, X), predict(f2, X))
    assert r2_score(Y, predict(f1, X)) > 0.9
    hist = f1.meta["history"]
    assert len(hist) == 60 and hist[-1] < hist[0]


def test_train_mlp_divergence_reports_epoch(rng):
    X = rng.normal(size=(40, 2))
    d = Dataset(X, 1e3 * X[:, :1])
    hyper = MlpHyper(hidden=(8,), epochs=50, learning_rate=1e6, optimizer="sgd", batch_size=None,
                     standardize=False, lr_schedule="constant")
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(TrainingError, match="epoch"):
        train_mlp(d, hyper)


def test_mlp_hyper_validation():
    with pytest.raises(ModelError):
        MlpHyper(learning_rate=0).validate()
    with pytest.raises(ModelError):
        MlpHyper(loss="mae").validate()


def test_mlp_block_prediction_matches_unblocked(rng):
    f = _tiny_mlp(rng)
    X = rng.normal(size=(5000, 3))
    h = X
    for w, b in zip(f.weights[:-1], f.biases[:-1]):
        h = np.maximum(h @ w + b, 0)
    ref = h @ f.weights[-1] + f.biases[-1]
    np.testing.assert_allclose(f.predict(X), ref, rtol=1e-12, atol=1e-12)


def test_weight_noise_copy(rng):
    f = _tiny_mlp(rng)
    same = f.with_weight_noise(np.random.default_rng(0), 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(same.weights, f.weights))
    noisy = f.with_weight_noise(np.random.default_rng(0), 0.1)
    assert not np.array_equal(noisy.weights[0], f.weights[0])


@pytest.mark.parametrize("make", [
    lambda r: LinearModel(r.normal(size=(3, 2)), r.normal(size=2)),
    lambda r: _tiny_mlp(r),
    lambda r: QuadraticOracle("-"),
    lambda r: PerturbedPredictor(LinearModel(r.normal(size=(3, 1)), np.zeros(1)),
                                 Perturbation(np.array([1.1, 0.9, 1.0]))),
])
def test_bundle_round_trip_is_exact(make, rng, tmp_path):
    f = make(rng)
    path = tmp_path / "m.json"
    save_bundle(f, path)
    g = load_bundle(path)
    X = rng.uniform(0.1, 1, size=(20, 3))
    assert np.array_equal(predict(f, X), predict(g, X))
    assert bundle_to_json(g) == bundle_to_json(f)


def test_bundle_integrity_checks(rng):
    doc = json.loads(bundle_to_json(LinearModel(rng.normal(size=(3, 1)), np.zeros(1))))
    bad = json.loads(json.dumps(doc))
    bad["params"]["W"]["data"] = bad["params"]["W"]["data"][:-1]
    with pytest.raises(BundleError, match="length"):
        bundle_from_json(json.dumps(bad))
    bad = json.loads(json.dumps(doc))
    bad["params"]["W"]["data"][0] += 1.0
    with pytest.raises(BundleError, match="checksum"):
        bundle_from_json(json.dumps(bad))
    bad = dict(doc, version=99)
    with pytest.raises(BundleError, match="version"):
        bundle_from_json(json.dumps(bad))
    with pytest.raises(BundleError):
        bundle_from_json("{not json")
    with pytest.raises(BundleError, match="kind"):
        bundle_from_json(json.dumps(dict(doc, kind="forest")))
