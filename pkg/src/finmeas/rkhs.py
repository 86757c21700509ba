"""Pointwise sampling in a reproducing kernel Hilbert space on the circle.

The kernel is a truncated Fourier series

    k(a, b) = sum_{|n| <= cutoff} (1 + n^2)^(-s) exp(i n (a - b)),

real-valued and stationary.  Functions whose Fourier support lies within the
cutoff form the corresponding RKHS with norm
``||f||^2 = sum_n (1 + n^2)^s |fhat_n|^2``; projecting onto the span of
kernel sections at N nodes is equivalent to solving the Gram system against
the pointwise samples, and the solve is stable with constant
``lambda_min(gram)^(-1/2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SingularGramError
from .projections import ProjectionSpec

MIN_GRAM_EIG = 1e-12


@dataclass(frozen=True)
class CircleKernel:
    """Sobolev-type stationary kernel on [0, 2pi)."""

    smoothness: float = 2.0
    cutoff: int = 200

    def __post_init__(self):
        if self.smoothness <= 0.5:
            raise ValueError("kernel smoothness must exceed 1/2 on the circle")
        if self.cutoff < 1:
            raise ValueError("kernel cutoff must be positive")

    @property
    def fourier_weights(self) -> np.ndarray:
        """(cutoff + 1,) weights (1 + n^2)^(-s) for n = 0..cutoff."""
        n = np.arange(self.cutoff + 1)
        return (1.0 + n.astype(float) ** 2) ** (-self.smoothness)

    def __call__(self, a, b) -> np.ndarray:
        """Evaluate k(a, b) elementwise (broadcasting)."""
        diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        w = self.fourier_weights
        n = np.arange(1, self.cutoff + 1)
        out = w[0] + 2.0 * np.tensordot(
            np.cos(np.multiply.outer(diff, n)), w[1:], axes=([-1], [0])
        )
        return out


def gram_matrix(kernel: CircleKernel, nodes: np.ndarray) -> np.ndarray:
    """Kernel Gram matrix K[i, j] = k(a_i, a_j) for pairwise-distinct nodes."""
    nodes = np.asarray(nodes, dtype=float).reshape(-1)
    if nodes.size == 0:
        raise DimensionMismatch("need at least one sampling node")
    wrapped = np.mod(nodes, 2.0 * np.pi)
    diffs = np.abs(wrapped[:, None] - wrapped[None, :])
    diffs = np.minimum(diffs, 2.0 * np.pi - diffs)
    off = ~np.eye(nodes.size, dtype=bool)
    if np.any(diffs[off] < 1e-12):
        raise SingularGramError(
            "sampling nodes must be pairwise distinct modulo 2*pi "
            "(duplicate nodes make the Gram matrix singular)"
        )
    return kernel(nodes[:, None], nodes[None, :])


def project_from_samples(gram: np.ndarray, samples: np.ndarray):
    """Recover the kernel-span projection of f from its node samples.

    Returns ``(coefficients, stable_constant)`` where the coefficients c
    solve ``gram @ c = samples`` (so the projection is sum_j c_j k_{a_j})
    and ``stable_constant = lambda_min(gram)^(-1/2)`` bounds the projection
    norm by the euclidean norm of the samples:
    ``||Q f|| = sqrt(samples . c) <= stable_constant * ||samples||_2``.
    """
    gram = np.asarray(gram, dtype=float)
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise DimensionMismatch(f"Gram matrix must be square, got shape {gram.shape}")
    if samples.shape[0] != gram.shape[0]:
        raise DimensionMismatch(
            f"got {samples.shape[0]} samples for a Gram matrix of size {gram.shape[0]}"
        )
    eigvals, eigvecs = np.linalg.eigh(0.5 * (gram + gram.T))
    lam_min = float(eigvals[0])
    if lam_min <= MIN_GRAM_EIG:
        cond = float(eigvals[-1] / max(lam_min, np.finfo(float).tiny))
        raise SingularGramError(
            f"Gram matrix nearly singular: min eigenvalue {lam_min:.3e}, "
            f"condition number {cond:.3e}"
        )
    coeffs = eigvecs @ ((eigvecs.T @ samples) / eigvals)
    stable_constant = 1.0 / np.sqrt(lam_min)
    return coeffs, float(stable_constant)


def evaluate_section_combination(
    kernel: CircleKernel, nodes: np.ndarray, coeffs: np.ndarray, theta
) -> np.ndarray:
    """Evaluate sum_j c_j k(theta, a_j) at the given angles."""
    nodes = np.asarray(nodes, dtype=float).reshape(-1)
    coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
    if coeffs.shape != nodes.shape:
        raise DimensionMismatch(
            f"{coeffs.shape[0]} coefficients for {nodes.shape[0]} nodes"
        )
    vals = kernel(np.asarray(theta, dtype=float)[..., None], nodes)
    return vals @ coeffs


class RkhsSamplingProjection:
    """Projection onto kernel sections at fixed nodes, fed by node samples.

    ``coords_flat`` maps the sample vector to coordinates in an orthonormal
    basis of the span (via the inverse square root of the Gram matrix), so
    euclidean norms of the coordinates equal RKHS norms of the projection.
    """

    kind = "rkhs-sampling"

    def __init__(self, kernel: CircleKernel, nodes: np.ndarray):
        self.kernel = kernel
        self.nodes = np.asarray(nodes, dtype=float).reshape(-1)
        self.gram = gram_matrix(kernel, self.nodes)
        eigvals, eigvecs = np.linalg.eigh(self.gram)
        lam_min = float(eigvals[0])
        if lam_min <= MIN_GRAM_EIG:
            cond = float(eigvals[-1] / max(lam_min, np.finfo(float).tiny))
            raise SingularGramError(
                f"Gram matrix nearly singular: min eigenvalue {lam_min:.3e}, "
                f"condition number {cond:.3e}"
            )
        self._eigvals = eigvals
        self._eigvecs = eigvecs
        self.stable_constant = float(1.0 / np.sqrt(lam_min))
        self.level = self.nodes.size
        self.rank = self.nodes.size
        self.ambient_size = self.nodes.size
        self.norm_bound = 1.0
        self.coords_shape = (self.rank,)

    @property
    def spec(self) -> ProjectionSpec:
        return ProjectionSpec(
            kind=self.kind,
            level=self.level,
            rank=self.rank,
            norm_bound=self.norm_bound,
            payload={
                "nodes": [float(a) for a in self.nodes],
                "smoothness": self.kernel.smoothness,
                "cutoff": self.kernel.cutoff,
                "stable_constant": self.stable_constant,
            },
        )

    def _check(self, samples: np.ndarray) -> np.ndarray:
        samples = np.asarray(samples, dtype=float).reshape(-1)
        if samples.shape[0] != self.rank:
            raise DimensionMismatch(
                f"projection expects {self.rank} node samples, got {samples.shape[0]}"
            )
        return samples

    def coefficients(self, samples: np.ndarray) -> np.ndarray:
        """Solve gram @ c = samples via the cached eigendecomposition."""
        s = self._check(samples)
        return self._eigvecs @ ((self._eigvecs.T @ s) / self._eigvals)

    def coords_flat(self, samples: np.ndarray) -> np.ndarray:
        """Orthonormal coordinates gram^(-1/2) @ samples of the projection."""
        s = self._check(samples)
        return self._eigvecs @ ((self._eigvecs.T @ s) / np.sqrt(self._eigvals))

    def coords_shaped(self, samples: np.ndarray) -> np.ndarray:
        return self.coords_flat(samples)

    def projection_norm(self, samples: np.ndarray) -> float:
        """RKHS norm of the projected function, sqrt(samples . c)."""
        return float(np.linalg.norm(self.coords_flat(samples)))
