"""Core value types: subspace bases, coefficient boxes, measurements.

The unknown lives in a finite-dimensional subspace W spanned by fields
sampled on the model's computation grid.  Coefficient vectors are always
understood with respect to such a basis; the admissible set is a coordinate
box, which is compact and convex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch

GRAM_MIN_EIG = 1e-12


@dataclass(frozen=True)
class SubspaceBasis:
    """Basis of the unknown space W evaluated on the model grid.

    Parameters
    ----------
    fields : (d, n_nodes) array
        Basis functions sampled at the grid nodes (or elements).
    weights : (n_nodes,) array
        Quadrature weights of the grid, so the L2 Gram matrix is
        ``fields @ diag(weights) @ fields.T``.
    label : str
        Identifier used to match coefficient vectors and boxes to bases.
    disjoint_indicator : bool
        True when the fields are 0/1 indicators with pairwise disjoint
        support; then the sup norm of ``sum_j c_j b_j`` is exactly
        ``max_j |c_j|`` and coordinate clamping realizes the sup-norm
        projection onto a coefficient box.
    """

    fields: np.ndarray
    weights: np.ndarray
    label: str = "W"
    disjoint_indicator: bool = False

    def __post_init__(self):
        fields = np.atleast_2d(np.asarray(self.fields, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "weights", weights)
        if fields.shape[1] != weights.shape[0]:
            raise DimensionMismatch(
                f"basis fields have {fields.shape[1]} nodes but "
                f"{weights.shape[0]} quadrature weights"
            )
        if not np.all(np.isfinite(fields)):
            raise ValueError("basis fields must be finite at every node")
        gram = (fields * weights) @ fields.T
        min_eig = float(np.linalg.eigvalsh(gram).min())
        if min_eig <= GRAM_MIN_EIG:
            raise ValueError(
                f"basis fields are not linearly independent: "
                f"Gram min eigenvalue {min_eig:.3e} <= {GRAM_MIN_EIG:.0e}"
            )

    @property
    def dim(self) -> int:
        return self.fields.shape[0]

    @cached_property
    def l2_norms(self) -> np.ndarray:
        """L2(grid) norms of the basis fields (the orthonormalization scales)."""
        return np.sqrt(np.einsum("in,n,in->i", self.fields, self.weights, self.fields))

    def sup_norm(self, coords: np.ndarray) -> float:
        """Sup norm over the grid of the function with the given coordinates."""
        coords = self._check_coords(coords)
        if self.disjoint_indicator:
            return float(np.max(np.abs(coords))) if coords.size else 0.0
        return float(np.max(np.abs(coords @ self.fields)))

    def to_field(self, coords: np.ndarray) -> np.ndarray:
        """Nodal values of the represented function."""
        return self._check_coords(coords) @ self.fields

    def _check_coords(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (self.dim,):
            raise DimensionMismatch(
                f"coefficient vector has shape {coords.shape}, basis needs ({self.dim},)"
            )
        return coords


@dataclass(frozen=True)
class CoefficientVector:
    """Coordinates of an unknown with respect to a named basis."""

    coords: np.ndarray
    basis_id: str

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 1:
            raise DimensionMismatch(f"coords must be 1-D, got shape {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coefficient vector has non-finite entries")


class ClampResult(NamedTuple):
    distance: float
    clamped: np.ndarray


@dataclass(frozen=True)
class Box:
    """Coordinate box K = prod_i [lower_i, upper_i]; compact and convex."""

    lower: np.ndarray
    upper: np.ndarray
    basis_id: str = "W"

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise DimensionMismatch(
                f"box bounds have shapes {lower.shape} and {upper.shape}"
            )
        if np.any(lower > upper):
            raise ValueError("box needs lower <= upper in every coordinate")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def diameter(self) -> float:
        """Sup-norm diameter (largest coordinate width)."""
        return float(np.max(self.widths)) if self.dim else 0.0

    def contains(self, coords: np.ndarray, tol: float = 0.0) -> bool:
        coords = np.asarray(coords, dtype=float)
        return bool(
            np.all(coords >= self.lower - tol) and np.all(coords <= self.upper + tol)
        )

    def clamp(self, coords: np.ndarray) -> ClampResult:
        """Sup-norm distance to the box and the nearest point in it.

        For disjoint-support indicator bases the sup-norm distance from the
        represented function to the box equals the largest coordinate-wise
        clamp distance.
        """
        coords = np.asarray(coords, dtype=float)
        if coords.shape != self.lower.shape:
            raise DimensionMismatch(
                f"point has shape {coords.shape}, box has shape {self.lower.shape}"
            )
        clamped = np.clip(coords, self.lower, self.upper)
        distance = float(np.max(np.abs(coords - clamped))) if self.dim else 0.0
        return ClampResult(distance, clamped)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Uniform samples, shape (size, d)."""
        u = rng.random((size, self.dim))
        return self.lower + u * self.widths


@dataclass(frozen=True)
class Measurement:
    """Finite-rank measurement: a flat vector or a square matrix."""

    entries: np.ndarray
    norm_kind: str = "euclidean"

    _KINDS = ("euclidean", "frobenius", "spectral")

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", entries)
        if entries.ndim not in (1, 2):
            raise DimensionMismatch(f"measurement must be 1-D or 2-D, got {entries.ndim}-D")
        if entries.ndim == 2 and entries.shape[0] != entries.shape[1]:
            raise DimensionMismatch(f"matrix measurement must be square, got {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("measurement has non-finite entries")
        if self.norm_kind not in self._KINDS:
            raise ValueError(f"unknown norm kind {self.norm_kind!r}")

    @property
    def shape(self) -> tuple:
        return self.entries.shape

    def flat(self) -> np.ndarray:
        return self.entries.reshape(-1)

    def norm(self) -> float:
        if self.norm_kind == "spectral":
            if self.entries.ndim != 2:
                raise DimensionMismatch("spectral norm needs a matrix measurement")
            return float(np.linalg.norm(self.entries, 2))
        return float(np.linalg.norm(self.entries.reshape(-1)))
