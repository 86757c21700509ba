"""Finite-rank measurement projections.

Three families approximate the identity on the measurement space:

* ``nested-orthogonal`` -- orthogonal projections onto a nested chain of
  subspaces spanned by explicit orthonormal rows (multiresolution block
  averages or tensor cosine modes on a square grid);
* ``two-sided-truncation`` -- ``y -> P y P`` for operator-valued
  measurements, realized as extraction of the leading block of a matrix in
  an orthonormal output basis;
* ``rkhs-sampling`` -- projection onto the span of kernel sections at
  finitely many nodes, recoverable from pointwise samples (see
  :mod:`finmeas.rkhs`).

All projections act as explicit matrices on coordinate vectors, so adjoints
are exact transposes and operator norms are exact SVDs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .types import Measurement


@dataclass(frozen=True)
class ProjectionSpec:
    """Serializable description of a finite-rank measurement projection."""

    kind: str
    level: int
    rank: int
    norm_bound: float
    payload: dict = field(default_factory=dict)

    _KINDS = ("nested-orthogonal", "two-sided-truncation", "rkhs-sampling")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown projection kind {self.kind!r}")
        if self.level < 1:
            raise ValueError("projection level must be a positive integer")
        if self.rank < 1:
            raise ValueError("projection rank must be a positive integer")
        if self.norm_bound < 1.0:
            raise ValueError("projection norm bound must satisfy D >= 1")

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "level": self.level,
                "rank": self.rank,
                "norm_bound": self.norm_bound,
                "payload": self.payload,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ProjectionSpec":
        data = json.loads(text)
        return cls(
            kind=data["kind"],
            level=int(data["level"]),
            rank=int(data["rank"]),
            norm_bound=float(data["norm_bound"]),
            payload=data.get("payload", {}),
        )


class NestedOrthogonalProjection:
    """Orthogonal projection onto the row space of an orthonormal matrix."""

    kind = "nested-orthogonal"

    def __init__(self, rows: np.ndarray, level: int, payload: dict | None = None):
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2:
            raise DimensionMismatch(f"projection rows must be 2-D, got {rows.ndim}-D")
        self.rows = rows
        self.level = int(level)
        self.rank = rows.shape[0]
        self.ambient_size = rows.shape[1]
        self.norm_bound = 1.0
        self.coords_shape = (self.rank,)
        self.payload = dict(payload or {})

    @property
    def spec(self) -> ProjectionSpec:
        return ProjectionSpec(
            kind=self.kind,
            level=self.level,
            rank=self.rank,
            norm_bound=self.norm_bound,
            payload=self.payload,
        )

    def _check(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != self.ambient_size:
            raise DimensionMismatch(
                f"projection expects ambient dimension {self.ambient_size}, "
                f"got input of dimension {y.shape[0]}"
            )
        return y

    def coords_flat(self, y: np.ndarray) -> np.ndarray:
        """Coordinates of Q y in the orthonormal output basis."""
        return self.rows @ self._check(y)

    def coords_shaped(self, y: np.ndarray) -> np.ndarray:
        return self.coords_flat(y)

    def apply_embed(self, y: np.ndarray) -> np.ndarray:
        """Q y, embedded back into the ambient space."""
        y = self._check(y)
        return self.rows.T @ (self.rows @ y)

    def residual(self, y: np.ndarray) -> np.ndarray:
        """(I - Q) y in the ambient space."""
        y = self._check(y)
        return y - self.rows.T @ (self.rows @ y)

    def embed_coords(self, c: np.ndarray) -> np.ndarray:
        """Adjoint embedding of output-basis coordinates (Q* on coordinates)."""
        c = np.asarray(c, dtype=float).reshape(-1)
        if c.shape[0] != self.rank:
            raise DimensionMismatch(
                f"expected {self.rank} projected coordinates, got {c.shape[0]}"
            )
        return self.rows.T @ c


class TwoSidedTruncation:
    """``y -> P y P`` on square matrices: keep the leading block.

    ``level`` counts basis mode pairs; the kept block has side
    ``pair_size * level`` in the ordered output basis.  Flattened inputs of
    length ``ambient_side**2`` are accepted interchangeably with matrices.
    """

    kind = "two-sided-truncation"

    def __init__(self, ambient_side: int, level: int, pair_size: int = 2):
        block = pair_size * level
        if block > ambient_side:
            raise DimensionMismatch(
                f"truncation block {block} exceeds ambient side {ambient_side}"
            )
        self.ambient_side = int(ambient_side)
        self.level = int(level)
        self.pair_size = int(pair_size)
        self.block = block
        self.rank = block * block
        self.ambient_size = ambient_side * ambient_side
        self.norm_bound = 1.0
        self.coords_shape = (block, block)
        self.payload = {"ambient_side": self.ambient_side, "pair_size": self.pair_size}

    @property
    def spec(self) -> ProjectionSpec:
        return ProjectionSpec(
            kind=self.kind,
            level=self.level,
            rank=self.rank,
            norm_bound=self.norm_bound,
            payload=self.payload,
        )

    def _as_matrix(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            side = int(round(np.sqrt(y.shape[0])))
            if side * side != y.shape[0] or side != self.ambient_side:
                raise DimensionMismatch(
                    f"truncation expects a {self.ambient_side}x{self.ambient_side} "
                    f"matrix (flat length {self.ambient_size}), got length {y.shape[0]}"
                )
            return y.reshape(side, side)
        if y.shape != (self.ambient_side, self.ambient_side):
            raise DimensionMismatch(
                f"truncation expects a {self.ambient_side}x{self.ambient_side} "
                f"matrix, got shape {y.shape}"
            )
        return y

    def coords_shaped(self, y: np.ndarray) -> np.ndarray:
        """The leading block, as a matrix."""
        m = self._as_matrix(y)
        return m[: self.block, : self.block].copy()

    def coords_flat(self, y: np.ndarray) -> np.ndarray:
        return self.coords_shaped(y).reshape(-1)

    def apply_embed(self, y: np.ndarray) -> np.ndarray:
        m = self._as_matrix(y)
        out = np.zeros_like(m)
        out[: self.block, : self.block] = m[: self.block, : self.block]
        return out.reshape(-1)

    def residual(self, y: np.ndarray) -> np.ndarray:
        m = self._as_matrix(y).copy()
        m[: self.block, : self.block] = 0.0
        return m.reshape(-1)

    def embed_coords(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if c.ndim == 1:
            if c.shape[0] != self.rank:
                raise DimensionMismatch(
                    f"expected {self.rank} projected coordinates, got {c.shape[0]}"
                )
            c = c.reshape(self.block, self.block)
        elif c.shape != (self.block, self.block):
            raise DimensionMismatch(
                f"expected a {self.block}x{self.block} block, got shape {c.shape}"
            )
        out = np.zeros((self.ambient_side, self.ambient_side))
        out[: self.block, : self.block] = c
        return out.reshape(-1)


def project(op, y) -> Measurement:
    """Apply a finite-rank projection to a measurement or discrete field.

    For nested-orthogonal projections the result is the projected element of
    the ambient space (same shape as the input); for two-sided truncations it
    is the leading block in the ordered output basis.  RKHS sampling
    projections consume the vector of node samples; see
    :func:`finmeas.rkhs.project_from_samples`.
    """
    arr = y.entries if isinstance(y, Measurement) else np.asarray(y, dtype=float)
    if op.kind == "nested-orthogonal":
        return Measurement(op.apply_embed(arr), norm_kind="euclidean")
    if op.kind == "two-sided-truncation":
        kind = y.norm_kind if isinstance(y, Measurement) else "frobenius"
        return Measurement(op.coords_shaped(arr), norm_kind=kind)
    if op.kind == "rkhs-sampling":
        return Measurement(op.coords_flat(arr), norm_kind="euclidean")
    raise ValueError(f"unknown projection kind {op.kind!r}")


def compact_truncation_residual(T: np.ndarray, n_keep: int) -> float:
    """Spectral norm of ``T - P T P`` where P keeps the first ``n_keep`` coords.

    Numerical stand-in for the strong-convergence argument behind two-sided
    truncations of compact operators: for matrices with decaying singular
    values the residual must decay as the kept block grows.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {T.shape}")
    m = T.shape[0]
    if not 0 <= n_keep <= m:
        raise DimensionMismatch(f"truncation level {n_keep} out of range for size {m}")
    R = T.copy()
    R[:n_keep, :n_keep] = 0.0
    return float(np.linalg.norm(R, 2))


def _axis_cuts(n: int, level: int) -> np.ndarray:
    """Partition of range(n) into ``level`` contiguous groups.

    Cut points ``floor(k*n/level)`` nest along divisibility chains of levels
    (1 | 2 | 4 | ...), which makes the block-average ranges nested.
    """
    if not 1 <= level <= n:
        raise DimensionMismatch(f"level {level} outside [1, {n}]")
    return (np.arange(level + 1) * n) // level


def block_average_projection(n: int, level: int) -> NestedOrthogonalProjection:
    """Orthogonal projection onto functions constant on a level x level
    partition of an n x n grid (multiresolution block averages).

    Levels along a divisibility chain (e.g. 1, 2, 4, 8, ...) form a nested
    exhaustive family; at ``level == n`` the projection is the identity.
    """
    cuts = _axis_cuts(n, level)
    rows = np.zeros((level * level, n * n))
    r = 0
    for p in range(level):
        for q in range(level):
            mask = np.zeros((n, n))
            mask[cuts[p] : cuts[p + 1], cuts[q] : cuts[q + 1]] = 1.0
            flat = mask.reshape(-1)
            rows[r] = flat / np.sqrt(flat.sum())
            r += 1
    return NestedOrthogonalProjection(
        rows, level, payload={"scheme": "block-average", "grid_n": n}
    )


def tensor_cosine_projection(n: int, level: int) -> NestedOrthogonalProjection:
    """Orthogonal projection onto tensor cosine modes with both frequencies
    below ``level`` on an n x n grid.  Nested for every consecutive level.
    """
    if not 1 <= level <= n:
        raise DimensionMismatch(f"level {level} outside [1, {n}]")
    i = np.arange(n)
    modes = np.empty((level, n))
    for k in range(level):
        phi = np.cos(np.pi * k * (2 * i + 1) / (2 * n))
        modes[k] = phi / np.linalg.norm(phi)
    rows = np.einsum("ax,by->abxy", modes, modes).reshape(level * level, n * n)
    return NestedOrthogonalProjection(
        rows, level, payload={"scheme": "tensor-cosine", "grid_n": n}
    )
