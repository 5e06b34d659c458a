import numpy as np
import pytest

from rashomon_grs import _kernels as K


def brute_row_losses(P, Y, kind):
    out = []
    for p_row, y_row in zip(P, Y):
        tot = 0.0
        for p, y in zip(p_row, y_row):
            if kind == K.MSE:
                tot += (p - y) ** 2
            elif kind == K.MAE:
                tot += abs(p - y)
            elif kind == K.LOGLOSS:
                q = min(max(p, 1e-15), 1 - 1e-15)
                tot += -(y * np.log(q) + (1 - y) * np.log(1 - q))
            else:
                tot += float((p >= 0.5) != (y >= 0.5))
        out.append(tot)
    return np.array(out)


@pytest.mark.parametrize("kind", [K.MSE, K.MAE, K.LOGLOSS, K.ZERO_ONE])
def test_row_losses_both_paths_match_loop(kind, rng):
    P = rng.uniform(0, 1, size=(17, 3))
    Y = (rng.uniform(size=(17, 3)) > 0.5).astype(float)
    want = brute_row_losses(P, Y, kind)
    np.testing.assert_allclose(K.row_losses_np(P, Y, kind), want, rtol=0, atol=1e-12)
    if K.HAS_NUMBA:
        np.testing.assert_allclose(K.row_losses_nb(P, Y, kind), want, rtol=0, atol=1e-12)


def test_pair_and_repeat_delta_paths_agree(rng):
    n, m = 9, 2
    y = rng.normal(size=(n, m))
    pred = rng.normal(size=(n, n, m))
    base = K.row_losses_np(pred[np.arange(n), np.arange(n)], y, K.MSE)
    d_np = K.pair_delta_np(pred, base, y, K.MSE)
    # hand double loop over i != j
    tot = sum(((pred[i, j] - y[i]) ** 2).sum() - base[i] for i in range(n) for j in range(n) if i != j)
    assert d_np == pytest.approx(tot / (n * (n - 1)), abs=1e-12)
    reps = rng.normal(size=(4, n, m))
    r_np = K.repeat_delta_np(reps, base, y, K.MAE)
    if K.HAS_NUMBA:
        assert K.pair_delta_nb(pred, base, y, K.MSE) == pytest.approx(d_np, abs=1e-12)
        np.testing.assert_allclose(K.repeat_delta_nb(reps, base, y, K.MAE), r_np, atol=1e-12)


def test_switched_inputs_layout(rng):
    x = rng.normal(size=(4, 3))
    z = K.switched_inputs_np(x, [1])
    # z[i, j] is row i with column 1 from row j
    for i in range(4):
        for j in range(4):
            assert z[i, j, 0] == x[i, 0] and z[i, j, 2] == x[i, 2] and z[i, j, 1] == x[j, 1]
    if K.HAS_NUMBA:
        np.testing.assert_array_equal(K.switched_inputs_nb(x, np.array([1])), z)


def test_env_flag_parsing(monkeypatch):
    for off in ("0", "false", "OFF", "no"):
        monkeypatch.setenv("RASHOMON_GRS_NUMBA", off)
        assert not K._numba_requested()
    monkeypatch.setenv("RASHOMON_GRS_NUMBA", "1")
    assert K._numba_requested()


def test_backend_name():
    assert K.backend() in ("numba", "numpy")


def test_numpy_fallback_selected_by_env_gives_same_estimate(tmp_path):
    import subprocess
    import sys

    code = (
        "import numpy as np\n"
        "from rashomon_grs import _kernels\n"
        "from rashomon_grs.data import Dataset, permuted_loss_full\n"
        "from rashomon_grs.models import LinearModel\n"
        "r = np.random.default_rng(3); X = r.normal(size=(12, 3)); Y = r.normal(size=(12, 1))\n"
        "f = LinearModel(np.array([[1.0], [2.0], [-1.0]]), np.zeros(1))\n"
        "print(_kernels.backend(), repr(permuted_loss_full(f, Dataset(X, Y), (0, 2), 'mse')))\n"
    )
    outs = {}
    for flag in ("0", "1"):
        env = dict(__import__("os").environ, RASHOMON_GRS_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        outs[flag] = res.stdout.split()
    assert outs["0"][0] == "numpy"
    assert abs(float(outs["0"][1]) - float(outs["1"][1])) <= 1e-12
