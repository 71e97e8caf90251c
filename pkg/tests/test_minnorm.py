import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rem3dr.autodiff import ShapeError
from rem3dr.minnorm import UNIFORM, minnorm_two, select_weights


def test_orthogonal_unit_vectors():
    w = minnorm_two([1.0, 0.0], [0.0, 1.0])
    assert w.alpha_mm == pytest.approx(0.5, abs=1e-12)
    c = w.combine([1.0, 0.0], [0.0, 1.0])
    assert c @ c == pytest.approx(0.5, abs=1e-12)


def test_hull_contains_origin():
    w = minnorm_two([2.0, 0.0], [-1.0, 0.0])
    assert w.alpha_mm == pytest.approx(1 / 3, abs=1e-12)
    np.testing.assert_allclose(w.combine([2.0, 0.0], [-1.0, 0.0]), [0.0, 0.0], atol=1e-12)


def test_equal_gradients_tie_break():
    assert minnorm_two([1.0, 2.0], [1.0, 2.0]) == UNIFORM


def test_errors():
    with pytest.raises(ShapeError):
        minnorm_two([1.0], [1.0, 2.0])
    with pytest.raises(FloatingPointError):
        minnorm_two([np.nan, 1.0], [1.0, 2.0])


def test_select_weights_branches():
    assert select_weights([1.0, 0.0], [0.0, 1.0]) == UNIFORM
    assert select_weights([1.0, 2.0], [2.0, 4.0]) == UNIFORM
    w = select_weights([1.0, 2.0], [-1.0, -2.0])
    assert w.alpha_mm == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(w.combine([1.0, 2.0], [-1.0, -2.0]), 0.0, atol=1e-12)


vec16 = st.lists(st.floats(-10, 10, allow_nan=False), min_size=16, max_size=16).map(np.array)


@settings(max_examples=200)
@given(vec16, vec16)
def test_minnorm_optimal_on_grid(a, b):
    w = minnorm_two(a, b)
    best = np.linalg.norm(w.combine(a, b))
    grid = np.linspace(0.0, 1.0, 10_001)
    norms = np.linalg.norm(grid[:, None] * a + (1 - grid[:, None]) * b, axis=1)
    assert best <= norms.min() + 1e-9
    assert best <= min(np.linalg.norm(a), np.linalg.norm(b)) + 1e-9
    assert w.alpha_mm + w.alpha_uni == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=200)
@given(vec16, vec16)
def test_min_norm_point_does_not_conflict(a, b):
    c = minnorm_two(a, b).combine(a, b)
    scale = max(1.0, np.linalg.norm(a) * np.linalg.norm(b))
    assert c @ a >= -1e-9 * scale
    assert c @ b >= -1e-9 * scale


@given(vec16, vec16, st.floats(1e-3, 1e3))
def test_branch_is_scale_invariant(a, b, c):
    assert (select_weights(c * a, b) == UNIFORM) == (select_weights(a, b) == UNIFORM)
