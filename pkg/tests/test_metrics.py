import pytest
from hypothesis import given
from hypothesis import strategies as st

from rashomon_grs.attribution import AttributionSet, attribution_space
from rashomon_grs.metrics import (
    chebyshev_distance,
    fer,
    metrics_report,
    min_pairwise_distance,
    redundancy_filter,
    ser,
)

KEYS = [(0,), (1,), (0, 1)]
vec = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=3)


def _set(mid, vals):
    return AttributionSet(mid, dict(zip(KEYS, vals)))


def test_ser():
    assert ser(3, 4) == 0.75
    assert ser(1, 1) == 1.0
    with pytest.raises(ValueError):
        ser(5, 4)
    with pytest.raises(ValueError):
        ser(0, 0)


@given(vec, vec, vec)
def test_chebyshev_metric_axioms(a, b, c):
    A, B, C = _set("a", a), _set("b", b), _set("c", c)
    assert chebyshev_distance(A, A) == 0
    assert chebyshev_distance(A, B) == chebyshev_distance(B, A) >= 0
    assert chebyshev_distance(A, C) <= chebyshev_distance(A, B) + chebyshev_distance(B, C) + 1e-9


def test_chebyshev_hand_value_and_key_check():
    assert chebyshev_distance(_set("a", [1, 2, 3]), _set("b", [1.5, -1, 3])) == 3.0
    with pytest.raises(ValueError):
        chebyshev_distance({(0,): 1.0}, {(1,): 1.0})


def test_fer_hand_value():
    sets = [_set("ref", [1, 2, 0]), _set("m1", [3, 1, -1]), _set("m2", [2, 2, 0.5])]
    space = attribution_space(sets, "ref")
    # widths: (0,) 2, (1,) 1, (0, 1) 1.5
    assert fer(space, 1) == 3.0
    assert fer(space, 2) == 1.5
    assert fer(space) == 4.5
    with pytest.raises(ValueError):
        fer(space, 3)


def test_redundancy_filter_removes_injected_duplicate_only():
    a, b, c = _set("a", [1, 2, 3]), _set("b", [1, 2.5, 3]), _set("c", [0, 0, 0])
    dup = _set("dup", [1, 2, 3])
    kept, removed = redundancy_filter([a, b, dup, c], tol=0.0)
    assert [k.model_id for k in kept] == ["a", "b", "c"] and removed == ["dup"]
    kept, removed = redundancy_filter([a, b, c], tol=0.5)
    assert removed == ["b"]


def test_min_pairwise_and_report():
    assert min_pairwise_distance([_set("a", [0, 0, 0])]) == float("inf")
    sets = [_set("ref", [0, 0, 0]), _set("m", [0, 1, 0.5])]
    rep = metrics_report(attribution_space(sets, "ref"), sets, 2, 4)
    assert rep.as_dict() == {"ser": 0.5, "fer_first_order": 1.0, "fer_second_order": 0.5,
                             "min_pairwise_distance": 1.0, "n_members": 2, "n_searched": 4}
