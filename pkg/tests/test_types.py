import numpy as np
import pytest
from hypothesis import given, strategies as st

from finmeas.errors import DimensionMismatch
from finmeas.types import Box, CoefficientVector, Measurement, SubspaceBasis


def test_basis_rejects_dependent_fields():
    fields = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0]])
    with pytest.raises(ValueError, match="linearly independent"):
        SubspaceBasis(fields=fields, weights=np.ones(3))


def test_basis_rejects_nonfinite_fields():
    fields = np.array([[1.0, np.nan]])
    with pytest.raises(ValueError, match="finite"):
        SubspaceBasis(fields=fields, weights=np.ones(2))


def test_indicator_sup_norm_is_max_coordinate():
    fields = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    basis = SubspaceBasis(fields=fields, weights=np.full(4, 0.25), disjoint_indicator=True)
    assert basis.sup_norm(np.array([-3.0, 2.0])) == 3.0
    assert np.allclose(basis.l2_norms, np.sqrt(0.5))


def test_coefficient_vector_must_be_finite_1d():
    with pytest.raises(ValueError):
        CoefficientVector(np.array([1.0, np.inf]), "w")
    with pytest.raises(DimensionMismatch):
        CoefficientVector(np.ones((2, 2)), "w")


def test_box_requires_ordered_bounds():
    with pytest.raises(ValueError):
        Box(np.array([1.0]), np.array([0.0]))


def test_box_clamp_hand_examples():
    box = Box(np.zeros(2), np.ones(2))
    dist, clamped = box.clamp(np.array([1.5, 0.5]))
    assert dist == pytest.approx(0.5)
    assert np.allclose(clamped, [1.0, 0.5])
    dist, clamped = box.clamp(np.array([2.0, -1.0]))
    assert dist == pytest.approx(1.0)
    assert np.allclose(clamped, [1.0, 0.0])
    assert box.clamp(np.array([0.25, 0.75])).distance == 0.0


@given(
    st.lists(st.floats(-10, 10), min_size=1, max_size=6),
    st.data(),
)
def test_box_clamp_is_projection(lows, data):
    lows = np.asarray(lows)
    widths = np.asarray(data.draw(
        st.lists(st.floats(0, 5), min_size=len(lows), max_size=len(lows))
    ))
    box = Box(lows, lows + widths)
    x = np.asarray(data.draw(
        st.lists(st.floats(-20, 20), min_size=len(lows), max_size=len(lows))
    ))
    dist, clamped = box.clamp(x)
    assert box.contains(clamped)
    assert dist == pytest.approx(np.max(np.abs(x - clamped)))
    # no point of the box is closer in sup norm than the clamp
    assert dist <= np.max(np.abs(x - box.center)) + 1e-12


def test_measurement_norms():
    v = Measurement(np.array([3.0, 4.0]))
    assert v.norm() == pytest.approx(5.0)
    m = Measurement(np.diag([3.0, 1.0]), norm_kind="spectral")
    assert m.norm() == pytest.approx(3.0)
    f = Measurement(np.diag([3.0, 4.0]), norm_kind="frobenius")
    assert f.norm() == pytest.approx(5.0)


def test_measurement_rejects_nonsquare_matrix():
    with pytest.raises(DimensionMismatch):
        Measurement(np.ones((2, 3)))
