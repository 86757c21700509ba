import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import LinearModel
from finmeas.errors import (
    AdmissibilityError,
    BudgetExceeded,
    InjectivityViolation,
)
from finmeas.stability import (
    ConstantEstimate,
    assemble_derivative_matrix,
    box_lattice,
    defect_curve,
    distance_to_box,
    estimate_stability_constant,
    estimate_tail_defect,
    opnorm_supball,
    projected_forward,
    select_level,
    verify_stability,
)
from finmeas.types import Box, CoefficientVector


# -- opnorm over the sup-norm ball -------------------------------------------


def test_opnorm_hand_examples():
    assert opnorm_supball(np.eye(2)) == pytest.approx(np.sqrt(2.0))
    assert opnorm_supball(np.zeros((3, 2))) == 0.0
    assert opnorm_supball(np.array([[3.0, 0.0], [0.0, 4.0]])) == pytest.approx(5.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_opnorm_diagonal_equals_euclidean_norm(diag):
    a = np.diag(diag)
    assert opnorm_supball(a) == pytest.approx(np.linalg.norm(diag), abs=1e-12)


def test_opnorm_rejects_large_dim_without_flag():
    a = np.ones((2, 21))
    with pytest.raises(BudgetExceeded, match="allow_sampling"):
        opnorm_supball(a)


def test_opnorm_sampling_fallback_matches_exact_on_small_dim():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(7, 5))
    exact = opnorm_supball(a)
    sampled = opnorm_supball(
        np.pad(a, ((0, 0), (0, 16))),  # widen to force the fallback
        allow_sampling=True,
        sample_budget=2000,
        rng=np.random.default_rng(1),
    )
    # padded columns are zero: same optimum; sampling plus polish finds it
    assert sampled == pytest.approx(exact, rel=1e-12)


def test_opnorm_spectral_norm_objective():
    entries = np.column_stack([np.eye(2).reshape(-1), np.array([0.0, 1.0, 1.0, 0.0])])
    spectral = lambda flat: float(np.linalg.norm(flat.reshape(2, 2), 2))
    # vertices (1,1) and (1,-1): matrices [[1,1],[1,1]] and [[1,-1],[-1,1]], both norm 2
    assert opnorm_supball(entries, spectral) == pytest.approx(2.0)


# -- derivative assembly -------------------------------------------------------


def test_assembly_rejects_inadmissible_point(qpat_small):
    with pytest.raises(AdmissibilityError):
        assemble_derivative_matrix(qpat_small, np.zeros(4))


def test_assembly_columns_match_directional_derivatives(qpat_small):
    c = np.array([0.8, 1.4, 1.0, 0.6])
    a = assemble_derivative_matrix(qpat_small, c)
    for j in range(4):
        tau = np.zeros(4)
        tau[j] = 1.0
        col = qpat_small.grid.h * qpat_small.deriv_apply_field(c, tau)
        assert np.max(np.abs(a.entries[:, j] - col)) <= 1e-12


def test_assembly_column_linearity(qpat_small):
    c = np.array([1.0, 1.0, 1.0, 1.0])
    a = assemble_derivative_matrix(qpat_small, c).entries
    t = np.array([0.3, -0.7, 0.1, 0.9])
    direct = qpat_small.grid.h * qpat_small.deriv_apply_field(c, t)
    assert np.linalg.norm(a @ t - direct) <= 1e-12 * np.linalg.norm(direct)


def test_assembly_orthonormal_rescaling(qpat_small):
    c = np.full(4, 1.2)
    a = assemble_derivative_matrix(qpat_small, c, w_coords="basis").entries
    az = assemble_derivative_matrix(qpat_small, c, w_coords="orthonormal").entries
    assert np.allclose(az * qpat_small.basis.l2_norms[None, :], a)


# -- tail defect ----------------------------------------------------------------


def test_full_rank_projection_gives_zero_defect(qpat_small):
    box = qpat_small.box()
    op = qpat_small.make_projection(qpat_small.full_level())
    val = estimate_tail_defect(qpat_small, box, op, lattice_res=2)
    assert val <= 1e-10


def test_defect_curve_monotone_for_nested_family(qpat_small):
    box = qpat_small.box()
    curve = defect_curve(qpat_small, box, [1, 3, 9], lattice_res=2)
    vals = [s for _, s in curve]
    assert vals[0] >= vals[1] >= vals[2]


def test_linear_model_defect_closed_form():
    # F = M c: defect at level k is the opnorm of the trailing rows of M
    m = np.diag([4.0, 2.0, 1.0])
    model = LinearModel(m)
    box = model.box()
    curve = defect_curve(model, box, [1, 2, 3], lattice_res=2)
    # residual rows at level 1: diag(0, 2, 1) -> max over signs = sqrt(5)
    assert curve[0][1] == pytest.approx(np.sqrt(5.0))
    assert curve[1][1] == pytest.approx(1.0)
    assert curve[2][1] == pytest.approx(0.0, abs=1e-14)


# -- stability constant -----------------------------------------------------------


def test_estimate_constant_identity_model_dim1():
    model = LinearModel(np.eye(1))
    est = estimate_stability_constant(
        model, model.box(), 10, rng=np.random.default_rng(0)
    )
    assert est.value == pytest.approx(1.0)
    assert est.lipschitz == 1.0  # floored
    assert est.lipschitz_raw == pytest.approx(1.0)


def test_estimate_constant_degenerate_box_returns_zero_with_flag():
    model = LinearModel(np.eye(2))
    box = Box(np.array([0.5, 0.5]), np.array([0.5, 0.5]), model.basis.label)
    est = estimate_stability_constant(model, box, 10, rng=np.random.default_rng(0))
    assert est.value == 0.0
    assert est.degenerate


def test_estimate_constant_flags_injectivity_violation():
    model = LinearModel(np.zeros((2, 2)))
    with pytest.raises(InjectivityViolation, match="sample scale"):
        estimate_stability_constant(model, model.box(), 10, rng=np.random.default_rng(0))


# -- level selection ----------------------------------------------------------------


def test_select_level_arithmetic_example():
    sel = select_level([(1, 0.4), (2, 0.2), (4, 0.05)], 2.0, safety=1.0)
    assert sel.threshold == pytest.approx(0.25)
    assert sel.level == 2


def test_select_level_not_reached():
    sel = select_level([(1, 0.4), (2, 0.2)], 1e9)
    assert sel.level is None
    assert not sel.reached
    assert sel.gap == pytest.approx(0.2 - sel.threshold)


def test_select_level_boundary_inclusive():
    sel = select_level([(1, 0.5), (2, 0.25)], 2.0, safety=1.0)
    assert sel.level == 2  # 0.25 == threshold counts


def test_select_level_consistency_property():
    rng = np.random.default_rng(3)
    for _ in range(50):
        vals = np.sort(rng.random(6))[::-1]
        curve = list(zip(range(1, 7), vals))
        c = float(rng.uniform(0.5, 20.0))
        sel = select_level(curve, c)
        if sel.reached:
            assert dict(curve)[sel.level] <= sel.threshold
            for lv, s in curve:
                if lv < sel.level:
                    assert s > sel.threshold
        else:
            assert min(vals) > sel.threshold


# -- pairwise verification --------------------------------------------------------


def test_verify_identical_points_trivially_hold(qpat_small):
    box = qpat_small.box()
    op = qpat_small.make_projection(3)
    x = np.full(4, 1.1)
    out = verify_stability(qpat_small, op, [(x, x)], 3.0, box=box)
    assert out.verified
    assert out.records[0].lhs == 0.0


def test_verify_mismodeling_term_vanishes_inside_box(qpat_small):
    box = qpat_small.box()
    op = qpat_small.make_projection(3)
    x1 = np.full(4, 1.0)
    x2 = np.full(4, 1.5)
    out = verify_stability(
        qpat_small, op, [(x1, x2)], 3.0, box=box, include_mismodeling=True,
        lipschitz=2.0, d_bound=1.0,
    )
    assert out.records[0].mismodeling == 0.0


def test_verify_rejects_outside_pairs_without_flag(qpat_small):
    box = qpat_small.box()
    op = qpat_small.make_projection(3)
    x_out = np.full(4, 2.5)
    with pytest.raises(AdmissibilityError):
        verify_stability(qpat_small, op, [(x_out, x_out)], 3.0, box=box)


# -- distance to the box ---------------------------------------------------------


def test_distance_examples():
    box = Box(np.zeros(2), np.ones(2), "w")
    assert distance_to_box(np.array([0.5, 0.5]), box).distance == 0.0
    d, clamped = distance_to_box(np.array([1.5, 0.5]), box)
    assert d == pytest.approx(0.5) and np.allclose(clamped, [1.0, 0.5])
    d, _ = distance_to_box(np.array([2.0, -1.0]), box)
    assert d == pytest.approx(1.0)


def test_distance_checks_basis_match():
    box = Box(np.zeros(2), np.ones(2), "w")
    from finmeas.errors import DimensionMismatch

    with pytest.raises(DimensionMismatch, match="basis"):
        distance_to_box(CoefficientVector(np.zeros(2), "other"), box)


# -- lattice helper ----------------------------------------------------------------


def test_box_lattice_shape_and_membership():
    box = Box(np.array([0.0, 1.0]), np.array([1.0, 1.0]), "w")
    pts = box_lattice(box, 3)
    assert pts.shape == (3, 2)  # degenerate axis collapses to one point
    assert all(box.contains(p) for p in pts)
    with pytest.raises(ValueError):
        box_lattice(box, 1)
