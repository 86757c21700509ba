"""Quantitative photoacoustic tomography on the unit square, desk scale.

The light intensity u solves the diffusion approximation

    -Lap(u) + mu * u = 0  in (0,1)^2,     u = phi  on the boundary,

discretized with the 5-point stencil on an interior grid of n x n nodes,
and the measured internal energy is ``F(mu) = mu * u``.  The absorption mu
is a nonnegative combination of disjoint block indicators; on the a priori
box it is bounded between 1/Lambda and Lambda.  All derivative formulas are
exact for the discrete system (chain rule through the linear solve), so the
Taylor test must show second order and the adjoint is an exact transpose.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import AdmissibilityError, DimensionMismatch, NumericalFailure
from .projections import (
    block_average_projection,
    tensor_cosine_projection,
    _axis_cuts,
)
from .types import Box, SubspaceBasis


@dataclass(frozen=True)
class QpatGrid:
    """Interior grid of the unit square with a positive boundary profile.

    ``n`` interior nodes per axis, spacing ``h = 1/(n+1)``; the cell
    quadrature weight is h^2.  ``phi`` is either a positive constant or a
    callable (x, y) -> value evaluated on the boundary nodes.
    """

    n: int
    phi: object = 1.0

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("need at least 3 interior nodes per axis")

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def weight(self) -> float:
        return self.h * self.h

    def interior_xy(self):
        """Coordinates of interior nodes, each shaped (n, n)."""
        t = (np.arange(self.n) + 1.0) * self.h
        return np.meshgrid(t, t, indexing="ij")

    def boundary_values(self) -> np.ndarray:
        """phi on the full (n+2) x (n+2) lattice border (interior zeroed)."""
        m = self.n + 2
        t = np.arange(m) * self.h
        if callable(self.phi):
            xx, yy = np.meshgrid(t, t, indexing="ij")
            full = np.asarray(self.phi(xx, yy), dtype=float)
        else:
            full = float(self.phi) * np.ones((m, m))
        border = np.ones((m, m), dtype=bool)
        border[1:-1, 1:-1] = False
        if np.min(full[border]) <= 0.0:
            raise AdmissibilityError("boundary illumination must satisfy min(phi) > 0")
        out = np.zeros((m, m))
        out[border] = full[border]
        return out


def _laplacian(n: int, h: float) -> sp.csc_matrix:
    T = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))
    eye = sp.identity(n)
    return ((sp.kron(eye, T) + sp.kron(T, eye)) / (h * h)).tocsc()


def _boundary_rhs(grid: QpatGrid) -> np.ndarray:
    """Contribution of the Dirichlet boundary to the interior system."""
    n, h = grid.n, grid.h
    phi = grid.boundary_values()
    b = np.zeros((n, n))
    b[0, :] += phi[0, 1:-1]
    b[-1, :] += phi[-1, 1:-1]
    b[:, 0] += phi[1:-1, 0]
    b[:, -1] += phi[1:-1, -1]
    return b.reshape(-1) / (h * h)


class QpatModel:
    """Forward map mu -> mu * u(mu) with block-indicator unknowns."""

    name = "qpat"

    def __init__(
        self,
        n: int = 33,
        blocks: int = 2,
        bound: float = 2.0,
        phi=1.0,
        projection_scheme: str = "block-average",
    ):
        self.grid = QpatGrid(n=n, phi=phi)
        self.blocks = int(blocks)
        self.bound = float(bound)
        if self.bound <= 1.0:
            raise ValueError("admissible bound must exceed 1")
        if projection_scheme not in ("block-average", "tensor-cosine"):
            raise ValueError(f"unknown projection scheme {projection_scheme!r}")
        self.projection_scheme = projection_scheme

        n2 = n * n
        cuts = _axis_cuts(n, self.blocks)
        fields = np.zeros((self.blocks * self.blocks, n2))
        r = 0
        for p in range(self.blocks):
            for q in range(self.blocks):
                mask = np.zeros((n, n))
                mask[cuts[p] : cuts[p + 1], cuts[q] : cuts[q + 1]] = 1.0
                fields[r] = mask.reshape(-1)
                r += 1
        self.basis = SubspaceBasis(
            fields=fields,
            weights=np.full(n2, self.grid.weight),
            label=f"qpat-blocks{self.blocks}-n{n}",
            disjoint_indicator=True,
        )
        self._laplace = _laplacian(n, self.grid.h)
        self._rhs_phi = _boundary_rhs(self.grid)
        self._cache: OrderedDict = OrderedDict()
        self.ambient_shape = (n2,)

    # -- basic geometry -------------------------------------------------

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def ambient_size(self) -> int:
        return self.grid.n * self.grid.n

    def box(self) -> Box:
        d = self.dim
        return Box(
            lower=np.full(d, 1.0 / self.bound),
            upper=np.full(d, self.bound),
            basis_id=self.basis.label,
        )

    def admissible(self, coords: np.ndarray) -> bool:
        coords = np.asarray(coords, dtype=float)
        return bool(coords.shape == (self.dim,) and np.all(np.isfinite(coords)) and np.all(coords > 0.0))

    def norm_X(self, coords: np.ndarray) -> float:
        return self.basis.sup_norm(coords)

    # -- light solve -----------------------------------------------------

    def _check_coords(self, coords: np.ndarray, nonneg_ok: bool = False) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (self.dim,):
            raise DimensionMismatch(
                f"expected {self.dim} block coefficients, got shape {coords.shape}"
            )
        lo = 0.0 if nonneg_ok else np.nextafter(0.0, 1.0)
        if np.any(coords < lo) or not np.all(np.isfinite(coords)):
            kind = "nonnegative" if nonneg_ok else "strictly positive"
            raise AdmissibilityError(
                f"absorption coefficients must be {kind}, got {coords.tolist()}"
            )
        return coords

    def _factorized(self, coords: np.ndarray):
        """Cached (LU, interior light field) for the system -Lap_h + diag(mu)."""
        key = coords.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        mu = coords @ self.basis.fields
        system = (self._laplace + sp.diags(mu)).tocsc()
        lu = splu(system)
        u_int = lu.solve(self._rhs_phi)
        self._cache[key] = (lu, mu, u_int)
        if len(self._cache) > 8:
            self._cache.popitem(last=False)
        return lu, mu, u_int

    def solve_light(self, coords: np.ndarray) -> np.ndarray:
        """Light field on the full (n+2) x (n+2) lattice (boundary = phi)."""
        coords = self._check_coords(coords, nonneg_ok=True)
        _, _, u_int = self._factorized(coords)
        n = self.grid.n
        full = self.grid.boundary_values()
        full[1:-1, 1:-1] = u_int.reshape(n, n)
        return full

    def light_interior(self, coords: np.ndarray) -> np.ndarray:
        coords = self._check_coords(coords, nonneg_ok=True)
        return self._factorized(coords)[2]

    def light_lower_bound_factor(self) -> float:
        """min u over the grid at the worst admissible absorption mu == bound
        and unit illumination; by discrete comparison, u(mu, phi) >=
        min(phi) * factor for every mu in the box."""
        worst = QpatModel(n=self.grid.n, blocks=self.blocks, bound=self.bound, phi=1.0)
        u = worst.solve_light(np.full(self.dim, self.bound))
        return float(u.min())

    # -- forward map and derivatives -------------------------------------

    def forward_field(self, coords: np.ndarray) -> np.ndarray:
        """Internal energy H = mu * u on the interior nodes."""
        coords = self._check_coords(coords, nonneg_ok=True)
        _, mu, u_int = self._factorized(coords)
        return mu * u_int

    def forward_full(self, coords: np.ndarray) -> np.ndarray:
        """Ambient measurement coordinates: h * (mu * u), euclidean = L2(grid)."""
        return self.grid.h * self.forward_field(coords)

    def deriv_apply_field(self, coords: np.ndarray, direction: np.ndarray) -> np.ndarray:
        """Exact discrete derivative tau*u + mu*v, with (-Lap_h + mu) v = -tau*u."""
        coords = self._check_coords(coords)
        direction = np.asarray(direction, dtype=float)
        if direction.shape != (self.dim,):
            raise DimensionMismatch(
                f"direction has shape {direction.shape}, expected ({self.dim},)"
            )
        lu, mu, u_int = self._factorized(coords)
        tau = direction @ self.basis.fields
        v = lu.solve(-tau * u_int)
        return tau * u_int + mu * v

    def deriv_columns_full(self, coords: np.ndarray) -> np.ndarray:
        """(ambient_size, d) matrix of derivative columns in Y coordinates."""
        coords = self._check_coords(coords)
        lu, mu, u_int = self._factorized(coords)
        taus = self.basis.fields.T * u_int[:, None]
        v = lu.solve(-taus)
        return self.grid.h * (taus + mu[:, None] * v)

    def deriv_adjoint_full(self, coords: np.ndarray, r_flat: np.ndarray) -> np.ndarray:
        """A^T r with one extra solve: the self-adjoint trick through w."""
        coords = self._check_coords(coords)
        r_flat = np.asarray(r_flat, dtype=float).reshape(-1)
        if r_flat.shape[0] != self.ambient_size:
            raise DimensionMismatch(
                f"residual has dimension {r_flat.shape[0]}, ambient is {self.ambient_size}"
            )
        lu, mu, u_int = self._factorized(coords)
        field_r = r_flat / self.grid.h
        w = lu.solve(-mu * field_r)
        return self.grid.weight * (self.basis.fields @ (u_int * (field_r + w)))

    # -- norms ------------------------------------------------------------

    def flat_norm(self, y_flat: np.ndarray, kind: str = "stability") -> float:
        return float(np.linalg.norm(np.asarray(y_flat, dtype=float).reshape(-1)))

    # -- projections -------------------------------------------------------

    def make_projection(self, level: int):
        if self.projection_scheme == "tensor-cosine":
            return tensor_cosine_projection(self.grid.n, level)
        return block_average_projection(self.grid.n, level)

    def full_level(self) -> int:
        """Level at which the projection is the identity on the grid."""
        return self.grid.n

    # -- algebraic identity check ------------------------------------------

    def identity_residual(self, coords1: np.ndarray, coords2: np.ndarray) -> float:
        """Sup norm of mu1 - mu2 - [(F1-F2)/u1 + F2 (u2-u1)/(u1 u2)].

        Algebraically zero whenever both light fields are positive, so the
        returned value is pure floating-point noise; large values indicate a
        broken solver."""
        c1 = self._check_coords(coords1)
        c2 = self._check_coords(coords2)
        _, mu1, u1 = self._factorized(c1)
        _, mu2, u2 = self._factorized(c2)
        if min(u1.min(), u2.min()) < 1e-8:
            raise NumericalFailure(
                "light field nearly vanishes; discrete positivity is violated"
            )
        f1, f2 = mu1 * u1, mu2 * u2
        res = (mu1 - mu2) - ((f1 - f2) / u1 + f2 * (u2 - u1) / (u1 * u2))
        return float(np.max(np.abs(res)))
