"""2D electrical impedance tomography on the unit disk, desk scale.

P1 finite elements solve the Neumann problem for the conductivity equation
with the zero-boundary-mean constraint enforced by a single Lagrange
multiplier.  The measurement is the Neumann-to-Dirichlet map truncated to
the first N trigonometric current patterns (orthonormalized with 1/sqrt(pi)
so the continuum basis property transfers): a symmetric 2N x 2N matrix.

For sigma == 1 separation of variables gives u = r^n (cos/sin)(n theta) / n,
so the ND matrix is diagonal with eigenvalue 1/n per frequency; this is the
oracle the FEM solver is validated against.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh
from scipy.sparse.linalg import splu
from scipy.spatial import Delaunay

from .errors import AdmissibilityError, DimensionMismatch, NumericalFailure
from .projections import TwoSidedTruncation
from .types import Box, SubspaceBasis


@dataclass(frozen=True)
class DiskMesh:
    """Triangulation of the unit disk with boundary vertices on the circle."""

    vertices: np.ndarray       # (V, 2)
    triangles: np.ndarray      # (T, 3), counterclockwise
    boundary: np.ndarray       # ordered boundary vertex indices (by angle)
    areas: np.ndarray          # (T,)
    h: float                   # longest edge

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def boundary_angles(self) -> np.ndarray:
        pts = self.vertices[self.boundary]
        return np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2.0 * np.pi)


def _ring_points(h_target: float, min_boundary: int, rng: np.random.Generator):
    # radial spacing tapers smoothly from h at the center to h/2 at the
    # boundary, where the high-frequency solutions r^n live
    n_b = max(math.ceil(4.0 * np.pi / h_target), min_boundary)
    n_b += n_b % 2
    n_rings = max(2, round(2.0 * math.log(2.0) / h_target))
    pts = [np.zeros((1, 2))]
    for j in range(1, n_rings):
        r = 2.0 * (1.0 - math.exp(-0.5 * j * h_target))
        n_j = max(6, round(n_b * r))
        offset = 0.5 * (j % 2)
        theta = 2.0 * np.pi * (np.arange(n_j) + offset) / n_j
        ring = r * np.column_stack([np.cos(theta), np.sin(theta)])
        ring += rng.normal(scale=2e-3 * h_target, size=ring.shape)
        pts.append(ring)
    theta = 2.0 * np.pi * np.arange(n_b) / n_b
    pts.append(np.column_stack([np.cos(theta), np.sin(theta)]))
    return np.vstack(pts), n_b


def mesh_disk(h_target: float, min_boundary: int = 128, seed: int = 0) -> DiskMesh:
    """Boundary-refined quasi-uniform triangulation of the unit disk.

    Boundary vertices are placed exactly on the circle, equispaced and even
    in number (at least ``min_boundary``, so trigonometric quadrature up to
    frequency ``min_boundary / 8`` stays resolved).  Interior rings carry a
    small seeded jitter; degenerate triangulations are retried with a
    perturbed seed up to five times.
    """
    if not 0.01 <= h_target <= 0.3:
        raise ValueError(f"h_target {h_target} outside [0.01, 0.3]")
    for attempt in range(5):
        rng = np.random.default_rng(seed + attempt)
        points, n_b = _ring_points(h_target, min_boundary, rng)
        tri = Delaunay(points)
        simplices = tri.simplices.copy()
        p = points[simplices]
        cross = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
            p[:, 2, 0] - p[:, 0, 0]
        ) * (p[:, 1, 1] - p[:, 0, 1])
        flip = cross < 0
        simplices[flip] = simplices[flip][:, [0, 2, 1]]
        areas = 0.5 * np.abs(cross)
        if np.min(areas) > 1e-10 * h_target * h_target:
            edges = points[simplices] - points[simplices[:, [1, 2, 0]]]
            h = float(np.sqrt((edges**2).sum(-1)).max())
            boundary = np.arange(points.shape[0] - n_b, points.shape[0])
            return DiskMesh(
                vertices=points,
                triangles=simplices,
                boundary=boundary,
                areas=areas,
                h=h,
            )
    raise NumericalFailure(
        f"mesh generation produced degenerate triangles for h={h_target} "
        f"after 5 seed retries"
    )


def trig_tail_bound(level: int) -> float:
    """Continuum norm of the embedding composed with the high-pass filter.

    On the unit disk the squared norm of J (I - P_N) from zero-mean L2 on
    the boundary circle into the H^(-1/2) dual space is
    sup_{n > N} 1/n = 1/(N + 1), attained at the first cut frequency, so the
    bound is exactly 1/sqrt(N + 1).
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    return 1.0 / math.sqrt(level + 1.0)


def _piecewise_linear_fourier(theta: np.ndarray, values: np.ndarray, k_max: int):
    """Cosine/sine coefficients of periodic piecewise-linear functions.

    ``theta`` are ascending breakpoints in [0, 2pi); ``values`` has one
    column per function.  Coefficients use the convention
    a_k = (1/pi) int f cos(k theta), exact per segment.
    Returns (a, b) of shape (k_max, n_functions).
    """
    theta = np.asarray(theta, dtype=float)
    vals = np.atleast_2d(np.asarray(values, dtype=float).T).T
    th1 = np.append(theta, theta[0] + 2.0 * np.pi)
    v1 = np.vstack([vals, vals[:1]])
    dtheta = np.diff(th1)
    slopes = (v1[1:] - v1[:-1]) / dtheta[:, None]
    k = np.arange(1, k_max + 1)
    sin0, cos0 = np.sin(np.outer(th1[:-1], k)), np.cos(np.outer(th1[:-1], k))
    sin1, cos1 = np.sin(np.outer(th1[1:], k)), np.cos(np.outer(th1[1:], k))
    # int_seg cos(k t) dt  and  int_seg (t - t_i) cos(k t) dt, per segment/frequency
    i0c = (sin1 - sin0) / k
    i1c = dtheta[:, None] * sin1 / k + (cos1 - cos0) / (k * k)
    i0s = (cos0 - cos1) / k
    i1s = -dtheta[:, None] * cos1 / k + (sin1 - sin0) / (k * k)
    a = (i0c.T @ vals[: len(theta)] + i1c.T @ slopes) / np.pi
    b = (i0s.T @ vals[: len(theta)] + i1s.T @ slopes) / np.pi
    return a, b


def fem_tail_bound(mesh: DiskMesh, level: int, n_cut: int, k_max: int = 2048) -> float:
    """Boundary-discrete analogue of :func:`trig_tail_bound`.

    The high-frequency trigonometric modes (level, n_cut] are interpolated
    at the mesh boundary vertices; the returned value is the largest ratio
    of the dual-space seminorm ``sum_k (a_k^2 + b_k^2)/k`` to the zero-mean
    norm ``sum_k (a_k^2 + b_k^2)`` over their span, with the Fourier
    coefficients of the piecewise-linear interpolants computed exactly per
    segment and summed to ``k_max``.  For exact trig modes the value equals
    ``trig_tail_bound(level)``; the gap measures boundary interpolation.
    """
    if not 1 <= level < n_cut:
        raise ValueError(f"need 1 <= level < n_cut, got {level}, {n_cut}")
    theta = mesh.boundary_angles()
    order = np.argsort(theta)
    theta = theta[order]
    freqs = np.arange(level + 1, n_cut + 1)
    cols = []
    for n in freqs:
        cols.append(np.cos(n * theta))
        cols.append(np.sin(n * theta))
    vals = np.column_stack(cols)
    a, b = _piecewise_linear_fourier(theta, vals, k_max)
    invk = 1.0 / np.arange(1, k_max + 1)
    gdual = (a * invk[:, None]).T @ a + (b * invk[:, None]).T @ b
    gl2 = a.T @ a + b.T @ b
    lam = eigh(gdual, gl2, eigvals_only=True)
    return float(np.sqrt(lam[-1]))


class EitModel:
    """Forward map sigma -> truncated ND matrix with sector unknowns."""

    name = "eit"

    def __init__(
        self,
        h: float = 0.05,
        n_max: int = 16,
        sectors: int = 4,
        bound: float = 2.0,
        mesh_seed: int = 0,
    ):
        if n_max < 1:
            raise ValueError("need at least one trigonometric frequency")
        self.n_max = int(n_max)
        self.bound = float(bound)
        if self.bound <= 1.0:
            raise ValueError("admissible bound must exceed 1")
        self.mesh = mesh_disk(h, min_boundary=max(128, 8 * self.n_max), seed=mesh_seed)
        self.sectors = int(sectors)

        verts = self.mesh.vertices
        tris = self.mesh.triangles
        centroids = verts[tris].mean(axis=1)
        theta_c = np.mod(np.arctan2(centroids[:, 1], centroids[:, 0]), 2.0 * np.pi)
        self.sector_of_element = np.floor(self.sectors * theta_c / (2.0 * np.pi)).astype(int)
        self.sector_of_element = np.clip(self.sector_of_element, 0, self.sectors - 1)
        fields = np.zeros((self.sectors, tris.shape[0]))
        fields[self.sector_of_element, np.arange(tris.shape[0])] = 1.0
        self.basis = SubspaceBasis(
            fields=fields,
            weights=self.mesh.areas,
            label=f"eit-sectors{self.sectors}-h{self.mesh.h:.3f}",
            disjoint_indicator=True,
        )

        # per-element P1 gradient operators and geometric stiffness blocks
        p = verts[tris]
        b = np.stack(
            [p[:, 1, 1] - p[:, 2, 1], p[:, 2, 1] - p[:, 0, 1], p[:, 0, 1] - p[:, 1, 1]],
            axis=1,
        )
        c = np.stack(
            [p[:, 2, 0] - p[:, 1, 0], p[:, 0, 0] - p[:, 2, 0], p[:, 1, 0] - p[:, 0, 0]],
            axis=1,
        )
        two_a = 2.0 * self.mesh.areas
        self._grad_ops = np.stack([b, c], axis=2) / two_a[:, None, None]  # (T, 3, 2)
        self._k_geo = (
            np.einsum("tie,tje->tij", self._grad_ops, self._grad_ops)
            * self.mesh.areas[:, None, None]
        )
        self._rows = np.repeat(tris, 3, axis=1).reshape(-1)
        self._cols = np.tile(tris, (1, 3)).reshape(-1)

        # boundary loop: consecutive edges, chord lengths, midpoint angles
        bnd = self.mesh.boundary
        theta = self.mesh.boundary_angles()
        order = np.argsort(theta)
        self._bnd = bnd[order]
        self._bnd_theta = theta[order]
        nxt = np.roll(self._bnd, -1)
        pts0 = verts[self._bnd]
        pts1 = verts[nxt]
        self._edge_len = np.sqrt(((pts1 - pts0) ** 2).sum(axis=1))
        dth = np.mod(np.roll(self._bnd_theta, -1) - self._bnd_theta, 2.0 * np.pi)
        self._edge_mid = np.mod(self._bnd_theta + 0.5 * dth, 2.0 * np.pi)
        self._edge_next = nxt

        nv = self.mesh.n_vertices
        bmass = np.zeros(nv)
        np.add.at(bmass, self._bnd, 0.5 * self._edge_len)
        np.add.at(bmass, self._edge_next, 0.5 * self._edge_len)
        self._bmass = bmass

        # the singular stiffness matrix (kernel = constants) is factorized
        # with the center vertex pinned; solutions are shifted afterwards to
        # zero boundary mean, which is the same constrained solution the
        # saddle-point formulation yields
        flat_k = self._k_geo.reshape(-1)
        valid = (self._rows > 0) & (self._cols > 0)
        self._asm_valid = valid
        self._asm_rows = self._rows[valid] - 1
        self._asm_cols = self._cols[valid] - 1
        self._flat_k = flat_k

        # loads of the orthonormalized trig currents, edge-midpoint quadrature
        self._loads = np.column_stack(
            [self.load_vector(g) for g in self._mode_midpoint_values()]
        )
        self._cache: OrderedDict = OrderedDict()
        side = 2 * self.n_max
        self.ambient_shape = (side, side)

    # -- currents ----------------------------------------------------------

    def _mode_midpoint_values(self):
        root_pi = math.sqrt(math.pi)
        for n in range(1, self.n_max + 1):
            yield np.cos(n * self._edge_mid) / root_pi
            yield np.sin(n * self._edge_mid) / root_pi

    def load_vector(self, g_mid: np.ndarray) -> np.ndarray:
        """Boundary load for a current given by its edge-midpoint values."""
        g_mid = np.asarray(g_mid, dtype=float)
        if g_mid.shape != self._edge_mid.shape:
            raise DimensionMismatch(
                f"expected {self._edge_mid.size} edge-midpoint values, got {g_mid.shape}"
            )
        load = np.zeros(self.mesh.n_vertices)
        w = 0.5 * self._edge_len * g_mid
        np.add.at(load, self._bnd, w)
        np.add.at(load, self._edge_next, w)
        return load

    def current_integral(self, g_mid: np.ndarray) -> float:
        """Edge-midpoint quadrature of the current over the boundary."""
        return float(np.dot(self._edge_len, np.asarray(g_mid, dtype=float)))

    # -- geometry / admissibility -------------------------------------------

    @property
    def dim(self) -> int:
        return self.sectors

    @property
    def ambient_size(self) -> int:
        return (2 * self.n_max) ** 2

    def box(self) -> Box:
        return Box(
            lower=np.full(self.dim, 1.0 / self.bound),
            upper=np.full(self.dim, self.bound),
            basis_id=self.basis.label,
        )

    def admissible(self, coords: np.ndarray) -> bool:
        coords = np.asarray(coords, dtype=float)
        return bool(
            coords.shape == (self.dim,)
            and np.all(np.isfinite(coords))
            and np.all(coords > 0.0)
        )

    def norm_X(self, coords: np.ndarray) -> float:
        return self.basis.sup_norm(coords)

    def _check_coords(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (self.dim,):
            raise DimensionMismatch(
                f"expected {self.dim} sector conductivities, got shape {coords.shape}"
            )
        if np.any(coords <= 0.0) or not np.all(np.isfinite(coords)):
            raise AdmissibilityError(
                f"sector conductivities must be strictly positive, got {coords.tolist()}"
            )
        return coords

    # -- FEM solves ----------------------------------------------------------

    def _factorized(self, coords: np.ndarray):
        key = coords.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        sigma_el = coords[self.sector_of_element]
        data = (self._flat_k * np.repeat(sigma_el, 9))[self._asm_valid]
        nv = self.mesh.n_vertices
        stiff = sp.coo_matrix(
            (data, (self._asm_rows, self._asm_cols)), shape=(nv - 1, nv - 1)
        ).tocsc()
        lu = splu(
            stiff,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
        entry = {"lu": lu, "solutions": None}
        self._cache[key] = entry
        if len(self._cache) > 4:
            self._cache.popitem(last=False)
        return entry

    def _solve_loads(self, entry, loads: np.ndarray) -> np.ndarray:
        """Solve for load columns; result has zero boundary mean."""
        nv = self.mesh.n_vertices
        u = np.zeros((nv,) + loads.shape[1:])
        u[1:] = entry["lu"].solve(loads[1:])
        shift = self._bmass @ u / self._bmass.sum()
        return u - shift

    def solve_neumann(self, coords: np.ndarray, g_mid: np.ndarray) -> np.ndarray:
        """FEM solution for one current; returns vertex values with zero
        boundary mean.  The current must be discretely compatible."""
        coords = self._check_coords(coords)
        g_mid = np.asarray(g_mid, dtype=float)
        total = abs(self.current_integral(g_mid))
        scale = float(np.linalg.norm(g_mid))
        if total > 1e-12 * max(scale, 1e-300):
            raise AdmissibilityError(
                f"incompatible Neumann current: boundary integral {total:.3e} "
                f"exceeds 1e-12 * ||g||"
            )
        entry = self._factorized(coords)
        return self._solve_loads(entry, self.load_vector(g_mid).reshape(-1, 1))[:, 0]

    def _solutions(self, coords: np.ndarray, n_currents: int) -> np.ndarray:
        """Vertex solutions for the first ``n_currents`` trig loads, (V, k)."""
        entry = self._factorized(coords)
        have = entry["solutions"]
        if have is None or have.shape[1] < n_currents:
            entry["solutions"] = self._solve_loads(
                entry, self._loads[:, :n_currents]
            )
        return entry["solutions"][:, :n_currents]

    # -- measurements ----------------------------------------------------------

    def nd_matrix(self, coords: np.ndarray, level: int):
        """Truncated ND matrix in the orthonormal trig basis.

        Returns ``(matrix, raw_asymmetry)``: the matrix is symmetrized by
        averaging with its transpose and the relative raw asymmetry is kept
        as a quality metric (it reflects only solver roundoff because both
        factors come from the same self-adjoint augmented system).
        """
        coords = self._check_coords(coords)
        if not 1 <= level <= self.n_max:
            raise DimensionMismatch(
                f"measurement level {level} outside [1, {self.n_max}]"
            )
        k = 2 * level
        u = self._solutions(coords, k)
        m = self._loads[:, :k].T @ u
        asym = float(
            np.linalg.norm(m - m.T) / max(np.linalg.norm(m), np.finfo(float).tiny)
        )
        return 0.5 * (m + m.T), asym

    def forward_level(self, coords: np.ndarray, level: int) -> np.ndarray:
        return self.nd_matrix(coords, level)[0].reshape(-1)

    def forward_full(self, coords: np.ndarray) -> np.ndarray:
        return self.forward_level(coords, self.n_max)

    # -- derivatives ----------------------------------------------------------

    def deriv_tensor(self, coords: np.ndarray, level: int) -> np.ndarray:
        """(d, 2N, 2N) sensitivity of the ND matrix to each sector.

        Entry (j, m, n) is minus the integral over sector j of
        grad(u^m) . grad(u^n): the ND map shrinks when conductivity grows,
        so diagonal entries are nonpositive for nonnegative directions.
        """
        coords = self._check_coords(coords)
        k = 2 * level
        u = self._solutions(coords, k)
        gu = np.einsum("tie,tim->tem", self._grad_ops, u[self.mesh.triangles])
        out = np.empty((self.dim, k, k))
        for j in range(self.dim):
            mask = self.sector_of_element == j
            block = -np.einsum(
                "t,tem,ten->mn", self.mesh.areas[mask], gu[mask], gu[mask]
            )
            out[j] = 0.5 * (block + block.T)
        return out

    def deriv_columns_level(self, coords: np.ndarray, level: int) -> np.ndarray:
        tensor = self.deriv_tensor(coords, level)
        return tensor.reshape(self.dim, -1).T

    def deriv_columns_full(self, coords: np.ndarray) -> np.ndarray:
        return self.deriv_columns_level(coords, self.n_max)

    def deriv_adjoint_full(self, coords: np.ndarray, r_flat: np.ndarray) -> np.ndarray:
        r_flat = np.asarray(r_flat, dtype=float).reshape(-1)
        if r_flat.shape[0] != self.ambient_size:
            raise DimensionMismatch(
                f"residual has dimension {r_flat.shape[0]}, ambient is {self.ambient_size}"
            )
        return self.deriv_columns_full(coords).T @ r_flat

    # -- norms -----------------------------------------------------------------

    def flat_norm(self, y_flat: np.ndarray, kind: str = "stability") -> float:
        y_flat = np.asarray(y_flat, dtype=float).reshape(-1)
        if kind == "stability":
            side = math.isqrt(y_flat.shape[0])
            if side * side != y_flat.shape[0]:
                raise DimensionMismatch(
                    f"flat length {y_flat.shape[0]} is not a square matrix"
                )
            mat = y_flat.reshape(side, side)
            # measurement matrices here are symmetric, where the spectral
            # norm is the largest absolute eigenvalue (cheaper than an SVD)
            if np.array_equal(mat, mat.T):
                if not mat.any():
                    return 0.0
                return float(np.max(np.abs(np.linalg.eigvalsh(mat))))
            return float(np.linalg.norm(mat, 2))
        return float(np.linalg.norm(y_flat))

    # -- projections --------------------------------------------------------------

    def make_projection(self, level: int) -> TwoSidedTruncation:
        return TwoSidedTruncation(2 * self.n_max, level, pair_size=2)

    def full_level(self) -> int:
        return self.n_max
