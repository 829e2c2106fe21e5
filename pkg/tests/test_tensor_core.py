import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from s4mc.tensor_core import (
    IGNORE,
    ProbMap,
    check_label_mask,
    class_max,
    class_sum,
    class_top2,
    neighbor_offsets,
    neighborhood,
    quantile,
    shift_zero_padded,
    shifted_views,
)


def _uniform_map(h, w, c):
    return ProbMap(np.full((h, w, c), 1.0 / c), normalized=True)


def test_probmap_rejects_out_of_range_values():
    with pytest.raises(ValueError):
        ProbMap(np.full((2, 2, 2), 1.5))


def test_probmap_normalized_flag_checks_sums():
    with pytest.raises(ValueError):
        ProbMap(np.full((2, 2, 2), 0.4), normalized=True)
    ProbMap(np.full((2, 2, 2), 0.4), normalized=False)


def test_probmap_shape_properties():
    pm = _uniform_map(3, 4, 5)
    assert (pm.height, pm.width, pm.classes) == (3, 4, 5)


def test_neighborhood_interior_has_eight_in_bounds_entries():
    pm = _uniform_map(5, 5, 3)
    entries = neighborhood(pm, 2, 2, 3)
    assert len(entries) == 8
    assert all(np.allclose(v, 1 / 3) for _, v in entries)


def test_neighborhood_corner_has_five_zero_vectors():
    pm = _uniform_map(5, 5, 3)
    entries = neighborhood(pm, 0, 0, 3)
    assert len(entries) == 8
    assert sum(not np.any(v) for _, v in entries) == 5


def test_neighborhood_window_five_has_24_entries():
    assert len(neighborhood(_uniform_map(7, 7, 2), 3, 3, 5)) == 24


@pytest.mark.parametrize("window", [0, 1, 2, 4, -3])
def test_bad_windows_are_rejected(window):
    with pytest.raises(ValueError):
        neighborhood(_uniform_map(5, 5, 2), 2, 2, window)


def test_neighborhood_out_of_bounds_pixel():
    with pytest.raises(ValueError):
        neighborhood(_uniform_map(3, 3, 2), 3, 0, 3)


@pytest.mark.parametrize("window", [3, 5, 7])
def test_offsets_unique_and_reflection_symmetric(window):
    offs = {(o.drow, o.dcol) for o in neighbor_offsets(window)}
    assert len(offs) == window * window - 1
    assert (0, 0) not in offs
    assert offs == {(-r, -c) for r, c in offs}
    assert max(max(abs(r), abs(c)) for r, c in offs) == window // 2


def test_shifted_views_match_copying_shift():
    rng = np.random.default_rng(0)
    values = rng.random((2, 6, 5, 3))
    for view, off in zip(shifted_views(values, 5), neighbor_offsets(5)):
        np.testing.assert_array_equal(view, shift_zero_padded(values, off.drow, off.dcol))


def test_neighborhood_agrees_with_shifted_views():
    rng = np.random.default_rng(1)
    values = rng.dirichlet(np.ones(4), size=(5, 6))
    pm = ProbMap(values, normalized=True)
    views = shifted_views(values, 3)
    for r in range(5):
        for c in range(6):
            for (off, vec), view in zip(neighborhood(pm, r, c, 3), views):
                np.testing.assert_array_equal(vec, view[r, c])


def test_class_reductions_match_numpy():
    rng = np.random.default_rng(2)
    v = rng.random((4, 5, 7))
    np.testing.assert_array_equal(class_max(v), v.max(-1))
    np.testing.assert_allclose(class_sum(v), v.sum(-1))
    first, second = class_top2(v)
    s = np.sort(v, axis=-1)
    np.testing.assert_array_equal(first, s[..., -1])
    np.testing.assert_array_equal(second, s[..., -2])


def test_class_top2_with_ties():
    first, second = class_top2(np.array([0.4, 0.4, 0.2]))
    assert first == second == 0.4


def test_quantile_tenths():
    vals = [i / 10 for i in range(10)]
    q = quantile(vals, 0.4)
    assert q == pytest.approx(0.3)
    assert sum(v > q for v in vals) == 6


def test_quantile_singleton_and_max():
    assert quantile([5.0], 0.7) == 5.0
    assert quantile([1, 2, 3, 4], 1.0) == 4
    assert quantile([3, 1, 2], 0.0) == 1


def test_quantile_exact_rank_products():
    # 0.7 * 10 is 7.000000000000001 in floating point; the rank must still be 7
    assert quantile(list(range(1, 11)), 0.7) == 7


def test_quantile_errors():
    with pytest.raises(ValueError):
        quantile([], 0.5)
    with pytest.raises(ValueError):
        quantile([1.0], 1.5)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.floats(0, 1), st.floats(0, 1), st.randoms())
def test_quantile_properties(values, q1, q2, rnd):
    lo, hi = sorted((q1, q2))
    assert quantile(values, lo) <= quantile(values, hi)
    assert quantile(values, lo) in values
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert quantile(shuffled, lo) == quantile(values, lo)


def test_check_label_mask():
    check_label_mask(np.array([[0, 1], [IGNORE, 2]]), 3)
    with pytest.raises(ValueError):
        check_label_mask(np.array([[0, 3]]), 3)
