import numpy as np
import pytest

from finmeas.eit import EitModel
from finmeas.projections import NestedOrthogonalProjection
from finmeas.qpat import QpatModel
from finmeas.types import Box, SubspaceBasis


class LinearModel:
    """F(c) = M c with euclidean measurement norm; identity indicator basis.

    Closed-form reference for the generic stability/reconstruction
    machinery: derivative is constant, projections keep leading output
    coordinates.
    """

    name = "linear"

    def __init__(self, matrix):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.matrix = matrix
        d = matrix.shape[1]
        self.basis = SubspaceBasis(
            fields=np.eye(d),
            weights=np.ones(d),
            label=f"linear-{d}",
            disjoint_indicator=True,
        )
        self.ambient_shape = (matrix.shape[0],)

    @property
    def dim(self):
        return self.matrix.shape[1]

    @property
    def ambient_size(self):
        return self.matrix.shape[0]

    def box(self):
        d = self.dim
        return Box(np.zeros(d), np.ones(d), self.basis.label)

    def admissible(self, coords):
        coords = np.asarray(coords, dtype=float)
        return coords.shape == (self.dim,) and bool(np.all(np.isfinite(coords)))

    def norm_X(self, coords):
        return float(np.max(np.abs(coords)))

    def forward_full(self, coords):
        return self.matrix @ np.asarray(coords, dtype=float)

    def deriv_columns_full(self, coords):
        return self.matrix.copy()

    def deriv_adjoint_full(self, coords, r_flat):
        return self.matrix.T @ np.asarray(r_flat, dtype=float)

    def flat_norm(self, y_flat, kind="stability"):
        return float(np.linalg.norm(np.asarray(y_flat, dtype=float).reshape(-1)))

    def make_projection(self, level):
        rows = np.eye(self.ambient_size)[:level]
        return NestedOrthogonalProjection(rows, level, payload={"scheme": "leading"})

    def full_level(self):
        return self.ambient_size


@pytest.fixture(scope="session")
def qpat_small():
    return QpatModel(n=9, blocks=2)


@pytest.fixture(scope="session")
def qpat_desk():
    return QpatModel(n=33, blocks=2, bound=2.0)


@pytest.fixture(scope="session")
def eit_small():
    return EitModel(h=0.15, n_max=4, sectors=4)


@pytest.fixture(scope="session")
def eit_desk():
    return EitModel(h=0.05, n_max=8, sectors=4, bound=2.0)


@pytest.fixture(scope="session")
def eit_fine():
    return EitModel(h=0.025, n_max=8, sectors=4, bound=2.0)
