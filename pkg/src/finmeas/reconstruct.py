"""Lattice-initialized projected Landweber reconstruction.

Pipeline: cover the a priori box with a finite lattice whose ball radius is
calibrated from the basin radius and the empirical constants, pick the first
lattice point whose projected measurement is close enough to the data (that
point is then guaranteed, at the level of the estimated constants, to lie in
the convergence basin), and iterate

    x_{k+1} = x_k - mu * (Q F)'(x_k)^* (Q F(x_k) - y)

in the L2-orthonormalized coordinates of W, where the adjoint is an exact
transpose.  Iterates that leave the admissible set are clamped back onto the
box; every clamp is logged and clamped runs are excluded from contraction
statistics.

All norms on measurement coordinates here are euclidean (Frobenius for
matrix blocks): the iteration needs an inner product, and any stability
estimate stated with the spectral norm on the right-hand side remains valid
with the Frobenius norm there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityError, BudgetExceeded, NumericalFailure
from .stability import projected_forward, projected_gradient, projected_deriv_columns
from .types import Box


@dataclass(frozen=True)
class LandweberConfig:
    """Step size, basin radius, and stopping parameters of the iteration."""

    step_size: float
    basin_radius: float
    max_iter: int = 20_000
    residual_tol: float = 0.0
    record_every: int = 1

    def __post_init__(self):
        if not 0.0 < self.step_size <= 1.0:
            raise ValueError("step size must lie in (0, 1]")
        if self.basin_radius <= 0.0:
            raise ValueError("basin radius must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be positive")


@dataclass
class IterationTrace:
    """Per-iteration history of a Landweber run."""

    iterates: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    errors: list | None = None
    contraction_ratios: list | None = None
    clamp_iterations: list = field(default_factory=list)
    stop_reason: str = "max_iter"
    step_size: float = 0.0

    @property
    def n_iterations(self) -> int:
        return len(self.residuals) - 1

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def clamped(self) -> bool:
        return bool(self.clamp_iterations)

    def monotone_residual_fraction(self) -> float:
        r = np.asarray(self.residuals)
        if r.size < 2:
            return 1.0
        return float(np.mean(np.diff(r) <= 0.0))

    def geometric_mean_ratio(self) -> float | None:
        if not self.contraction_ratios:
            return None
        ratios = np.asarray(self.contraction_ratios)
        return float(np.exp(np.mean(np.log(np.maximum(ratios, 1e-300)))))


def choose_stepsize(
    model, op, box: Box, samples: int = 16, *, rng: np.random.Generator
) -> float:
    """0.9 over the squared largest singular value of the projected
    derivative (orthonormal W coordinates), maximized over box samples and
    the box center; capped at 1."""
    if samples < 1:
        raise ValueError("need at least one sample point")
    points = np.vstack([box.center[None, :], box.sample(rng, samples)])
    smax = 0.0
    for p in points:
        a = projected_deriv_columns(model, op, p) / model.basis.l2_norms[None, :]
        smax = max(smax, float(np.linalg.norm(a, 2)))
    if smax == 0.0:
        raise NumericalFailure("degenerate model: zero derivative on every sample")
    return min(1.0, 0.9 / (smax * smax))


def landweber_step(model, op, x: np.ndarray, y: np.ndarray, mu: float, box: Box):
    """One iteration; returns (next iterate, clamped flag).

    The update direction is the gradient of 0.5 ||Q F(x) - y||^2 in the
    orthonormal coordinate realization of W, mapped back to basis
    coordinates (division by the squared basis norms).  An iterate leaving
    the admissible set is clamped onto the box.
    """
    x = np.asarray(x, dtype=float)
    r = projected_forward(model, op, x) - np.asarray(y, dtype=float).reshape(-1)
    g = projected_gradient(model, op, x, r)
    x_next = x - mu * g / (model.basis.l2_norms**2)
    clamped = False
    if not model.admissible(x_next):
        x_next = box.clamp(x_next).clamped
        clamped = True
    return x_next, clamped


def landweber_run(
    model,
    op,
    x0: np.ndarray,
    y: np.ndarray,
    config: LandweberConfig,
    box: Box,
    truth: np.ndarray | None = None,
) -> IterationTrace:
    """Iterate until the residual tolerance or the iteration cap.

    With ``truth`` supplied the trace records sup-norm errors and successive
    contraction ratios (skipped once the error reaches the noise floor).
    """
    x = np.asarray(x0, dtype=float)
    if not box.contains(x, tol=1e-12):
        raise AdmissibilityError("initial guess must lie in the a priori box")
    y = np.asarray(y, dtype=float).reshape(-1)

    trace = IterationTrace(step_size=config.step_size)
    if truth is not None:
        trace.errors = []
        trace.contraction_ratios = []
        err_floor = 1e-13 * max(1.0, model.norm_X(np.asarray(truth, dtype=float)))

    def residual_norm(xx):
        return float(np.linalg.norm(projected_forward(model, op, xx) - y))

    res = residual_norm(x)
    trace.iterates.append(x.copy())
    trace.residuals.append(res)
    if truth is not None:
        trace.errors.append(model.norm_X(x - truth))
    if not math.isfinite(res):
        trace.stop_reason = "diverged"
        return trace
    if res <= config.residual_tol:
        trace.stop_reason = "tol"
        return trace

    for k in range(config.max_iter):
        x, clamped = landweber_step(model, op, x, y, config.step_size, box)
        if clamped:
            trace.clamp_iterations.append(k)
        res = residual_norm(x)
        trace.residuals.append(res)
        if truth is not None:
            err = model.norm_X(x - truth)
            prev = trace.errors[-1]
            trace.errors.append(err)
            if prev > err_floor:
                trace.contraction_ratios.append(err / prev)
        if (k + 1) % config.record_every == 0:
            trace.iterates.append(x.copy())
        if not math.isfinite(res):
            trace.stop_reason = "diverged"
            break
        if res <= config.residual_tol:
            trace.stop_reason = "tol"
            break
    else:
        trace.stop_reason = "max_iter"
    if not np.array_equal(trace.iterates[-1], x):
        trace.iterates.append(x.copy())
    return trace


# ---------------------------------------------------------------------------
# lattice cover and initial guess


@dataclass(frozen=True)
class LatticeCover:
    """Finite lattice whose sup-norm balls of the given radius cover the box."""

    points: np.ndarray
    radius: float
    shape: tuple

    @property
    def size(self) -> int:
        return self.points.shape[0]


def build_lattice(
    box: Box,
    lipschitz: float,
    c_value: float,
    rho: float,
    d_bound: float = 1.0,
    *,
    budget: int = 10**6,
) -> LatticeCover:
    """Cell-center lattice with per-axis spacing <= 2 r, where
    r = rho / (2 L C D): then every point of the box is within r of a
    lattice point, which is what the guess criterion needs."""
    if min(lipschitz, c_value, rho, d_bound) <= 0.0:
        raise ValueError("lattice constants must all be positive")
    radius = rho / (2.0 * lipschitz * c_value * d_bound)
    counts = [
        max(1, math.ceil(w / (2.0 * radius))) if w > 0 else 1 for w in box.widths
    ]
    total = math.prod(counts)
    if total > budget:
        raise BudgetExceeded(
            f"lattice needs {total} points (> budget {budget}); enlarge the basin "
            f"radius or shrink the box"
        )
    axes = [
        box.lower[i] + (np.arange(counts[i]) + 0.5) * (box.widths[i] / counts[i])
        if box.widths[i] > 0
        else np.array([box.lower[i]])
        for i in range(box.dim)
    ]
    grids = np.meshgrid(*axes, indexing="ij")
    points = np.stack([g.reshape(-1) for g in grids], axis=1)
    return LatticeCover(points=points, radius=radius, shape=tuple(counts))


@dataclass(frozen=True)
class GuessInfo:
    index: int | None
    distance: float | None
    threshold: float
    min_distance: float
    argmin: int
    n_evaluated: int


def initial_guess(model, op, cover: LatticeCover, y: np.ndarray, rho: float, c_value: float):
    """First lattice point (in C index order) whose projected measurement is
    strictly within rho / (2 C) of the data.

    All candidate measurements are computed (they are independent forward
    solves); the selection is by smallest index among qualifiers, so the
    result does not depend on evaluation order.  Returns (coords | None,
    GuessInfo); a None result reports the smallest observed measurement
    distance, which signals a rho / C miscalibration.
    """
    if cover.size == 0:
        raise ValueError("lattice cover is empty")
    y = np.asarray(y, dtype=float).reshape(-1)
    threshold = rho / (2.0 * c_value)
    distances = np.empty(cover.size)
    for i, p in enumerate(cover.points):
        distances[i] = np.linalg.norm(projected_forward(model, op, p) - y)
    qualifiers = np.nonzero(distances < threshold)[0]
    argmin = int(np.argmin(distances))
    if qualifiers.size == 0:
        return None, GuessInfo(
            index=None,
            distance=None,
            threshold=threshold,
            min_distance=float(distances[argmin]),
            argmin=argmin,
            n_evaluated=cover.size,
        )
    first = int(qualifiers[0])
    return cover.points[first].copy(), GuessInfo(
        index=first,
        distance=float(distances[first]),
        threshold=threshold,
        min_distance=float(distances[argmin]),
        argmin=argmin,
        n_evaluated=cover.size,
    )


# ---------------------------------------------------------------------------
# basin calibration and the global algorithm


@dataclass(frozen=True)
class BasinCalibration:
    """Empirical basin radius and contraction factor.

    ``rho`` is the largest tested radius at which every probe run converged;
    ``contraction`` is the worst contraction ratio observed among the
    unclamped converged runs at that radius.
    """

    rho: float
    contraction: float
    rows: list
    n_truths: int
    fractions: tuple


def calibrate_basin(
    model,
    op,
    box: Box,
    *,
    mu: float,
    rng: np.random.Generator,
    n_truths: int = 10,
    radius_fractions=(0.2, 0.1, 0.05),
    max_iter: int = 5000,
    conv_tol: float = 1e-8,
) -> BasinCalibration:
    """Probe convergence from perturbed starts at decreasing radii.

    For each radius fraction, ``n_truths`` truths are sampled in the box and
    perturbed by a sup-norm offset of that radius (clamped back into the
    box); a probe converges when the run reaches a relative error below
    ``conv_tol``.  Runs that clamped along the way count for convergence but
    are excluded from the contraction statistic.
    """
    diam = box.diameter()
    if diam <= 0.0:
        raise ValueError("cannot calibrate on a degenerate box")
    rows = []
    for frac in sorted(radius_fractions, reverse=True):
        radius = frac * diam
        all_ok = True
        worst_ratio = 0.0
        have_ratio = False
        for t in range(n_truths):
            truth = box.sample(rng, 1)[0]
            offset = rng.uniform(-1.0, 1.0, size=box.dim)
            peak = np.max(np.abs(offset))
            if peak == 0.0:
                offset = np.ones(box.dim)
                peak = 1.0
            x0 = box.clamp(truth + radius * offset / peak).clamped
            y = projected_forward(model, op, truth)
            config = LandweberConfig(
                step_size=mu,
                basin_radius=radius,
                max_iter=max_iter,
                residual_tol=1e-13 * float(np.linalg.norm(y)),
            )
            trace = landweber_run(model, op, x0, y, config, box, truth=truth)
            scale = max(1.0, model.norm_X(truth))
            converged = (
                trace.stop_reason != "diverged"
                and trace.errors[-1] <= conv_tol * scale
            )
            ratio = max(trace.contraction_ratios) if trace.contraction_ratios else 0.0
            rows.append(
                {
                    "fraction": frac,
                    "radius": radius,
                    "truth_index": t,
                    "converged": converged,
                    "clamped": trace.clamped,
                    "max_ratio": ratio,
                    "iterations": trace.n_iterations,
                }
            )
            if not converged:
                all_ok = False
            elif not trace.clamped and trace.contraction_ratios:
                worst_ratio = max(worst_ratio, ratio)
                have_ratio = True
        if all_ok:
            return BasinCalibration(
                rho=radius,
                contraction=worst_ratio if have_ratio else 0.0,
                rows=rows,
                n_truths=n_truths,
                fractions=tuple(sorted(radius_fractions, reverse=True)),
            )
    raise NumericalFailure(
        f"no tested radius gave 100% convergence "
        f"(fractions {tuple(radius_fractions)}, {n_truths} truths)"
    )


@dataclass
class GlobalReconstruction:
    x_final: np.ndarray
    trace: IterationTrace
    cover: LatticeCover
    guess: GuessInfo
    x0: np.ndarray
    rho: float
    c_value: float
    lipschitz: float


def global_reconstruct(
    model,
    op,
    box: Box,
    y: np.ndarray,
    *,
    rho: float,
    c_value: float,
    lipschitz: float,
    config: LandweberConfig,
    d_bound: float = 1.0,
    lattice_budget: int = 10**6,
    truth: np.ndarray | None = None,
) -> GlobalReconstruction:
    """Lattice search followed by the local Landweber iteration.

    ``c_value`` must play the constant of the two-constant stability
    estimate consistently in both the lattice radius and the guess
    threshold; callers pass the safety-inflated empirical estimate.
    Aborts with :class:`NumericalFailure` when no lattice point qualifies
    (carrying the guess diagnostics) or when the iteration diverges
    (carrying the trace).
    """
    cover = build_lattice(
        box, lipschitz, c_value, rho, d_bound, budget=lattice_budget
    )
    x0, info = initial_guess(model, op, cover, y, rho, c_value)
    if x0 is None:
        err = NumericalFailure(
            f"no lattice point within the guess threshold {info.threshold:.6g} "
            f"(smallest distance {info.min_distance:.6g}); the basin radius or "
            f"the stability constant is miscalibrated"
        )
        err.guess_info = info
        err.cover = cover
        raise err
    trace = landweber_run(model, op, x0, y, config, box, truth=truth)
    if trace.stop_reason == "diverged":
        err = NumericalFailure("Landweber iteration diverged")
        err.trace = trace
        raise err
    return GlobalReconstruction(
        x_final=trace.final,
        trace=trace,
        cover=cover,
        guess=info,
        x0=x0,
        rho=rho,
        c_value=c_value,
        lipschitz=lipschitz,
    )
