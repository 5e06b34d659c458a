import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rashomon_grs.data import Perturbation
from rashomon_grs.models import LinearModel, PerturbedPredictor
from rashomon_grs.rashomon import (
    Boundary,
    RashomonConfig,
    RashomonSubset,
    Rejected,
    SampledModel,
    admit,
    is_member,
    rashomon_threshold,
)


def test_thresholds():
    assert rashomon_threshold(RashomonConfig(0.1), 2.0) == pytest.approx(0.2)
    assert rashomon_threshold(RashomonConfig(0.1, Boundary.ADDITIVE), 2.0) == 0.1
    with pytest.raises(ValueError):
        RashomonConfig(-0.1)


def test_membership_is_inclusive():
    cfg = RashomonConfig(0.5)
    assert is_member(1.5, 1.0, cfg)
    assert not is_member(1.5 + 1e-12, 1.0, cfg)
    assert is_member(1.0, 1.0, RashomonConfig(0.0))


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 1), st.floats(0, 1))
def test_membership_monotone_in_epsilon(loss, ref, e1, e2):
    lo, hi = sorted((e1, e2))
    for b in Boundary:
        if is_member(loss, ref, RashomonConfig(lo, b)):
            assert is_member(loss, ref, RashomonConfig(hi, b))


def _cand(loss, k=0):
    return SampledModel(Perturbation(np.array([1.0 + 0.01 * (k + 1), 1.0])), {"method": "test", "k": k}, loss)


def test_admit_boundary_and_redundancy():
    ref = LinearModel(np.ones((2, 1)), np.zeros(1))
    sub = RashomonSubset.start(ref, 1.0, RashomonConfig(0.1, sparsity_tolerance=1e-6), {(0,): 1.0}, 2)
    assert [m.model_id for m in sub.members] == ["ref"]
    res = sub.admit(_cand(1.2), {(0,): 2.0})
    assert not res and res.reason is Rejected.BOUNDARY
    res = admit(sub, _cand(1.05, 1), {(0,): 1.0 + 1e-7})
    assert not res and res.reason is Rejected.REDUNDANT
    assert sub.admit(_cand(1.1, 2), {(0,): 1.5})
    assert sub.members[-1].model_id == "m0001"
    assert sub.rejected_count == 2 and sub.rejections == {"boundary": 1, "redundant": 1}
    assert sub.n_searched == 4
    with pytest.raises(ValueError, match="differ"):
        sub.admit(_cand(1.0, 3), {(1,): 0.0})


def test_predictor_of_member():
    ref = LinearModel(np.ones((2, 1)), np.zeros(1))
    sub = RashomonSubset.start(ref, 1.0, RashomonConfig(0.1), None, 2)
    assert sub.predictor(sub.members[0]) is ref
    c = _cand(1.0)
    assert isinstance(sub.predictor(c), PerturbedPredictor)


def test_sampled_model_rejects_bad_loss():
    with pytest.raises(ValueError):
        _cand(float("nan"))
