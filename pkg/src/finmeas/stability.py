"""Stability laboratory.

Quantifies, at desk scale, how much of the linearized forward map a
finite-rank projection fails to measure (the tail defect), estimates the
Lipschitz stability constant of the inverse on the a priori box from sampled
pairs, selects the smallest measurement level whose tail defect clears the
half-reciprocal threshold, and verifies the resulting two-constant stability
inequality (with an optional mismodeling term) on held-out pairs.

Norms: the unknown space carries the sup norm (exact for disjoint-support
indicator bases), the measurement space carries the model's stability norm
(euclidean for field measurements, spectral for operator-valued ones).
Operator norms over the unit sup-norm ball are computed exactly by vertex
enumeration: the objective is convex, so its maximum over the coefficient
box is attained at a sign vertex.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AdmissibilityError,
    BudgetExceeded,
    DimensionMismatch,
    InjectivityViolation,
)
from .projections import TwoSidedTruncation
from .types import Box, ClampResult, CoefficientVector

VERTEX_ENUM_MAX_DIM = 20


# ---------------------------------------------------------------------------
# projected forward/derivative dispatch (model fast paths when available)


def projected_forward(model, op, coords: np.ndarray) -> np.ndarray:
    """Measurement coordinates of Q F(x); ambient coordinates when op is None."""
    if op is None:
        return model.forward_full(coords)
    if isinstance(op, TwoSidedTruncation) and hasattr(model, "forward_level"):
        return model.forward_level(coords, op.level)
    return op.coords_flat(model.forward_full(coords))


def projected_deriv_columns(model, op, coords: np.ndarray) -> np.ndarray:
    """Columns of Q F'(x) on the basis fields, as measurement coordinates."""
    if op is None:
        return model.deriv_columns_full(coords)
    if isinstance(op, TwoSidedTruncation) and hasattr(model, "deriv_columns_level"):
        return model.deriv_columns_level(coords, op.level)
    cols = model.deriv_columns_full(coords)
    return np.column_stack([op.coords_flat(cols[:, j]) for j in range(cols.shape[1])])


def projected_gradient(model, op, coords: np.ndarray, r_coords: np.ndarray) -> np.ndarray:
    """(Q F'(x))^T r in basis coordinates, via the cheapest exact route."""
    if op is None:
        return model.deriv_adjoint_full(coords, r_coords)
    if isinstance(op, TwoSidedTruncation) and hasattr(model, "deriv_columns_level"):
        return model.deriv_columns_level(coords, op.level).T @ np.asarray(
            r_coords, dtype=float
        ).reshape(-1)
    return model.deriv_adjoint_full(coords, op.embed_coords(r_coords))


# ---------------------------------------------------------------------------
# derivative matrices


@dataclass(frozen=True)
class DerivativeMatrix:
    """Coordinate realization of (a projection of) F'(xi) restricted to W.

    ``entries[:, j]`` holds the measurement coordinates of the derivative in
    the direction of basis field j; ``mode`` records whether the columns are
    the full map, its projection, or the unmeasured residual.
    """

    entries: np.ndarray
    base_point: np.ndarray
    level: int | None
    mode: str = "full"
    w_coords: str = "basis"


def assemble_derivative_matrix(
    model, point: np.ndarray, op=None, mode: str = "full", w_coords: str = "basis"
) -> DerivativeMatrix:
    """Columnwise assembly of F'(point) on the basis fields.

    ``mode``: "full" keeps ambient coordinates, "projected" post-composes
    with the projection, "residual" keeps the unmeasured part (I - Q) F'.
    ``w_coords="orthonormal"`` rescales columns to the L2-orthonormalized
    realization of W (used by the Landweber step, where the adjoint must be
    an exact transpose).
    """
    point = np.asarray(point, dtype=float)
    if not model.admissible(point):
        raise AdmissibilityError(
            f"base point {point.tolist()} is outside the admissible set of "
            f"model {model.name!r}"
        )
    if mode not in ("full", "projected", "residual"):
        raise ValueError(f"unknown assembly mode {mode!r}")
    if mode == "full" or op is None:
        entries = model.deriv_columns_full(point)
        level = None
    elif mode == "projected":
        entries = projected_deriv_columns(model, op, point)
        level = op.level
    else:
        cols = model.deriv_columns_full(point)
        entries = np.column_stack(
            [op.residual(cols[:, j]) for j in range(cols.shape[1])]
        )
        level = op.level
    if w_coords == "orthonormal":
        entries = entries / model.basis.l2_norms[None, :]
    elif w_coords != "basis":
        raise ValueError(f"unknown W coordinate realization {w_coords!r}")
    return DerivativeMatrix(
        entries=entries, base_point=point, level=level, mode=mode, w_coords=w_coords
    )


def opnorm_supball(
    matrix,
    y_norm=None,
    *,
    allow_sampling: bool = False,
    sample_budget: int = 10_000,
    rng: np.random.Generator | None = None,
) -> float:
    """Norm of a coordinate matrix from the sup-norm unit ball of W to Y.

    The maximum of the convex objective ||A v|| over the box [-1, 1]^d is
    attained at a vertex, so for d <= 20 all sign vertices are enumerated
    (up to the v -> -v symmetry).  For larger d pass ``allow_sampling=True``
    to use seeded random sign vectors plus a greedy one-flip polish; that
    result is a documented lower bound.
    """
    entries = matrix.entries if isinstance(matrix, DerivativeMatrix) else np.asarray(matrix)
    entries = np.atleast_2d(np.asarray(entries, dtype=float))
    d = entries.shape[1]
    if y_norm is None:
        y_norm = lambda v: float(np.linalg.norm(v))
    if d == 0:
        return 0.0

    def norm_of_signs(signs: np.ndarray) -> float:
        return y_norm(entries @ signs)

    if d <= VERTEX_ENUM_MAX_DIM:
        best = 0.0
        for code in range(1 << (d - 1)):
            signs = np.ones(d)
            for j in range(d - 1):
                if (code >> j) & 1:
                    signs[j + 1] = -1.0
            best = max(best, norm_of_signs(signs))
        return best

    if not allow_sampling:
        raise BudgetExceeded(
            f"vertex enumeration supports dim <= {VERTEX_ENUM_MAX_DIM}, got {d}; "
            f"re-run with the sampling fallback flag (allow_sampling=True)"
        )
    if rng is None:
        raise ValueError("the sampling fallback needs an explicit rng")
    best_signs = np.ones(d)
    best = norm_of_signs(best_signs)
    draws = rng.integers(0, 2, size=(sample_budget, d)) * 2.0 - 1.0
    for signs in draws:
        val = norm_of_signs(signs)
        if val > best:
            best, best_signs = val, signs.copy()
    improved = True
    while improved:
        improved = False
        for j in range(d):
            trial = best_signs.copy()
            trial[j] = -trial[j]
            val = norm_of_signs(trial)
            if val > best:
                best, best_signs, improved = val, trial, True
    return best


# ---------------------------------------------------------------------------
# tail defect (the unmeasured part of the linearization)


def box_lattice(box: Box, res: int) -> np.ndarray:
    """Regular coefficient lattice of the box, ``res`` points per axis
    (a single point on zero-width axes), C-ordered."""
    if res < 2:
        raise ValueError("lattice resolution must be >= 2 per axis")
    axes = []
    for lo, hi in zip(box.lower, box.upper):
        axes.append(np.array([lo]) if hi <= lo else np.linspace(lo, hi, res))
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def defect_curve(
    model,
    box: Box,
    levels,
    *,
    lattice_res: int = 3,
    allow_sampling: bool = False,
    rng: np.random.Generator | None = None,
) -> list[tuple[int, float]]:
    """Max over a coefficient lattice of ||(I - Q_N) F'(xi)||_{W -> Y},
    per measurement level.  A lower bound of the sup over the box; the
    lattice resolution is recorded by the caller."""
    levels = [int(lv) for lv in levels]
    ops = {lv: model.make_projection(lv) for lv in levels}
    points = box_lattice(box, lattice_res)
    values = {lv: 0.0 for lv in levels}
    y_norm = lambda v: model.flat_norm(v, "stability")
    for point in points:
        cols = model.deriv_columns_full(point)
        for lv in levels:
            res_cols = np.column_stack(
                [ops[lv].residual(cols[:, j]) for j in range(cols.shape[1])]
            )
            val = opnorm_supball(
                res_cols, y_norm, allow_sampling=allow_sampling, rng=rng
            )
            values[lv] = max(values[lv], val)
    return [(lv, values[lv]) for lv in levels]


def estimate_tail_defect(
    model,
    box: Box,
    op,
    *,
    lattice_res: int = 3,
    allow_sampling: bool = False,
    rng: np.random.Generator | None = None,
) -> float:
    """Tail defect at a single level (see :func:`defect_curve`)."""
    return defect_curve(
        model,
        box,
        [op.level],
        lattice_res=lattice_res,
        allow_sampling=allow_sampling,
        rng=rng,
    )[0][1]


# ---------------------------------------------------------------------------
# empirical stability constant


@dataclass(frozen=True)
class ConstantEstimate:
    """Empirical lower bound of the stability constant on the box.

    ``value`` is the max of ||x1 - x2||_X / ||F(x1) - F(x2)||_Y over all
    sampled pairs (the projected variant divides by the projected
    measurement distance).  Consumers that need a true upper bound must
    inflate by a safety factor.  ``lipschitz`` is the forward Lipschitz
    estimate floored at 1; ``lipschitz_raw`` keeps the unfloored max.
    """

    value: float
    lipschitz: float
    lipschitz_raw: float
    n_pairs: int
    n_points: int
    degenerate: bool
    norm_kind: str
    level: int | None


def estimate_stability_constant(
    model,
    box: Box,
    pair_budget: int,
    op=None,
    *,
    rng: np.random.Generator,
    lattice_res: int = 3,
    norm_kind: str = "stability",
) -> ConstantEstimate:
    """Seeded pairwise sweep: lattice points plus ``pair_budget`` random
    points, ratios over every pair of the union."""
    if pair_budget < 10:
        raise ValueError("pair budget must be at least 10")
    points = np.vstack([box_lattice(box, lattice_res), box.sample(rng, pair_budget)])
    ys = [projected_forward(model, op, p) for p in points]
    n = points.shape[0]
    best_c = 0.0
    best_l = 0.0
    n_pairs = 0
    any_distinct = False
    for i in range(n):
        for j in range(i + 1, n):
            dx = model.norm_X(points[i] - points[j])
            dy = model.flat_norm(ys[i] - ys[j], norm_kind)
            n_pairs += 1
            if dx == 0.0:
                continue
            any_distinct = True
            if dy == 0.0:
                raise InjectivityViolation(
                    f"injectivity violated at sample scale: points "
                    f"{points[i].tolist()} and {points[j].tolist()} give "
                    f"identical measurements"
                )
            best_c = max(best_c, dx / dy)
            best_l = max(best_l, dy / dx)
    return ConstantEstimate(
        value=best_c,
        lipschitz=max(1.0, best_l),
        lipschitz_raw=best_l,
        n_pairs=n_pairs,
        n_points=n,
        degenerate=not any_distinct,
        norm_kind=norm_kind,
        level=None if op is None else op.level,
    )


# ---------------------------------------------------------------------------
# level selection and pairwise verification


@dataclass(frozen=True)
class SelectedLevel:
    """Smallest listed level whose tail defect clears 1/(2 * safety * C)."""

    level: int | None
    threshold: float
    gap: float
    defect: float | None

    @property
    def reached(self) -> bool:
        return self.level is not None


def select_level(curve, c_value: float, safety: float = 1.0) -> SelectedLevel:
    """First (level, defect) entry with defect <= 1/(2 * safety * c_value);
    the comparison is inclusive.  When no level qualifies the marker carries
    the smallest gap above the threshold."""
    if not curve:
        raise ValueError("defect curve is empty")
    if c_value <= 0.0:
        raise ValueError("stability constant must be positive")
    threshold = 1.0 / (2.0 * safety * c_value)
    for level, defect in curve:
        if defect <= threshold:
            return SelectedLevel(
                level=int(level), threshold=threshold, gap=0.0, defect=float(defect)
            )
    smallest = min(d for _, d in curve)
    return SelectedLevel(
        level=None, threshold=threshold, gap=float(smallest - threshold), defect=None
    )


@dataclass(frozen=True)
class PairRecord:
    x1: np.ndarray
    x2: np.ndarray
    lhs: float
    measurement_distance: float
    mismodeling: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


@dataclass(frozen=True)
class StabilityVerification:
    records: list
    verified: bool
    include_mismodeling: bool
    c_value: float
    lipschitz: float
    d_bound: float


def distance_to_box(x, box: Box) -> ClampResult:
    """Sup-norm distance from x to the box, with the clamped point.

    Exact for disjoint-support indicator bases, where the coordinate clamp
    realizes the nearest point of the box in the function sup norm."""
    if isinstance(x, CoefficientVector):
        if x.basis_id != box.basis_id:
            raise DimensionMismatch(
                f"coefficients over basis {x.basis_id!r} measured against a box "
                f"over {box.basis_id!r}"
            )
        x = x.coords
    return box.clamp(np.asarray(x, dtype=float))


def verify_stability(
    model,
    op,
    pairs,
    c_value: float,
    *,
    box: Box,
    include_mismodeling: bool = False,
    lipschitz: float = 1.0,
    d_bound: float = 1.0,
    norm_kind: str = "stability",
) -> StabilityVerification:
    """Check ||x1 - x2||_X <= 2 C ||Q F(x1) - Q F(x2)||_Y (+ mismodeling)
    on explicit pairs.

    With ``include_mismodeling`` the right-hand side gains
    ``3 C D L (d(x1, K) + d(x2, K))`` and the pairs may leave the box (but
    must stay admissible); otherwise every pair must lie in the box.  The
    verdict uses the supplied empirical constants, so "verified" is a
    sample-level statement.
    """
    records = []
    for x1, x2 in pairs:
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if not include_mismodeling:
            if not (box.contains(x1, tol=1e-12) and box.contains(x2, tol=1e-12)):
                raise AdmissibilityError(
                    "pairs must lie in the box unless mismodeling is enabled"
                )
        lhs = model.norm_X(x1 - x2)
        dy = model.flat_norm(
            projected_forward(model, op, x1) - projected_forward(model, op, x2),
            norm_kind,
        )
        mis = 0.0
        if include_mismodeling:
            mis = (
                3.0
                * c_value
                * d_bound
                * lipschitz
                * (distance_to_box(x1, box).distance + distance_to_box(x2, box).distance)
            )
        rhs = 2.0 * c_value * dy + mis
        records.append(
            PairRecord(
                x1=x1, x2=x2, lhs=lhs, measurement_distance=dy, mismodeling=mis, rhs=rhs
            )
        )
    return StabilityVerification(
        records=records,
        verified=all(r.holds for r in records),
        include_mismodeling=include_mismodeling,
        c_value=c_value,
        lipschitz=lipschitz,
        d_bound=d_bound,
    )


# ---------------------------------------------------------------------------
# report container


@dataclass
class StabilityReport:
    """Everything the stability pipeline produces, JSON/CSV-serializable."""

    model: str
    norm_kind: str
    defect_curve: list
    c_value: float
    c_projected: float | None
    safety: float
    lipschitz: float
    lipschitz_raw: float
    d_bound: float
    selected: SelectedLevel
    seed: int
    lattice_res: int
    pair_budget: int
    retries: int = 0
    verification: StabilityVerification | None = None
    notes: dict = field(default_factory=dict)

    @property
    def c_inflated(self) -> float:
        return self.safety * self.c_value

    def to_dict(self) -> dict:
        out = {
            "model": self.model,
            "norm_kind": self.norm_kind,
            "defect_curve": [[int(n), float(s)] for n, s in self.defect_curve],
            "c_value": self.c_value,
            "c_inflated": self.c_inflated,
            "c_projected": self.c_projected,
            "safety": self.safety,
            "lipschitz": self.lipschitz,
            "lipschitz_raw": self.lipschitz_raw,
            "d_bound": self.d_bound,
            "selected_level": self.selected.level,
            "selection_threshold": self.selected.threshold,
            "selection_gap": self.selected.gap,
            "seed": self.seed,
            "lattice_res": self.lattice_res,
            "pair_budget": self.pair_budget,
            "retries": self.retries,
            "notes": self.notes,
        }
        if self.verification is not None:
            out["verified"] = self.verification.verified
            out["pair_records"] = [
                {
                    "x1": r.x1.tolist(),
                    "x2": r.x2.tolist(),
                    "lhs": r.lhs,
                    "measurement_distance": r.measurement_distance,
                    "mismodeling": r.mismodeling,
                    "rhs": r.rhs,
                    "margin": r.margin,
                }
                for r in self.verification.records
            ]
        return out
