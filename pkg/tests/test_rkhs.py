import numpy as np
import pytest

from finmeas.errors import DimensionMismatch, SingularGramError
from finmeas.rkhs import (
    CircleKernel,
    RkhsSamplingProjection,
    evaluate_section_combination,
    gram_matrix,
    project_from_samples,
)


def series_oracle(s, cutoff, diff):
    # independent direct summation of the kernel series
    total = 1.0
    for n in range(1, cutoff + 1):
        total += 2.0 * np.cos(n * diff) / (1.0 + n * n) ** s
    return total


def test_single_node_gram_matches_series_oracle():
    kernel = CircleKernel(smoothness=2.0, cutoff=200)
    gram = gram_matrix(kernel, np.array([0.0]))
    assert gram.shape == (1, 1)
    assert gram[0, 0] == pytest.approx(series_oracle(2.0, 200, 0.0), rel=1e-14)


def test_antipodal_nodes_translation_invariance():
    kernel = CircleKernel()
    gram = gram_matrix(kernel, np.array([0.0, np.pi]))
    assert gram[0, 0] == pytest.approx(gram[1, 1], rel=1e-14)
    assert gram[0, 1] == pytest.approx(series_oracle(2.0, 200, np.pi), rel=1e-12)


def test_equispaced_gram_is_circulant():
    kernel = CircleKernel()
    nodes = 2.0 * np.pi * np.arange(3) / 3.0
    gram = gram_matrix(kernel, nodes)
    for i in range(3):
        for j in range(3):
            assert gram[i, j] == pytest.approx(gram[(i + 1) % 3, (j + 1) % 3], rel=1e-12)


def test_duplicate_nodes_rejected():
    kernel = CircleKernel()
    with pytest.raises(SingularGramError, match="distinct"):
        gram_matrix(kernel, np.array([0.3, 0.3 + 2.0 * np.pi]))


def test_zero_samples_give_zero_projection():
    kernel = CircleKernel()
    proj = RkhsSamplingProjection(kernel, 2.0 * np.pi * np.arange(4) / 4.0)
    coeffs = proj.coefficients(np.zeros(4))
    assert np.all(coeffs == 0.0)
    assert proj.projection_norm(np.zeros(4)) == 0.0


def test_identity_gram_hand_example():
    coeffs, stable = project_from_samples(np.eye(2), np.array([3.0, 4.0]))
    assert np.allclose(coeffs, [3.0, 4.0])
    assert stable == pytest.approx(1.0)
    assert np.linalg.norm(coeffs) == pytest.approx(5.0)


def test_near_singular_gram_rejected_with_condition_number():
    gram = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-15]])
    with pytest.raises(SingularGramError, match="condition number"):
        project_from_samples(gram, np.array([1.0, 2.0]))


def test_interpolation_consistency_8_nodes():
    # re-evaluate the projected function at the nodes: it interpolates f there
    kernel = CircleKernel(smoothness=2.0, cutoff=200)
    nodes = 2.0 * np.pi * np.arange(8) / 8.0
    samples = np.cos(nodes)
    gram = gram_matrix(kernel, nodes)
    coeffs, _ = project_from_samples(gram, samples)
    values = evaluate_section_combination(kernel, nodes, coeffs, nodes)
    assert np.max(np.abs(values - samples)) < 1e-8


def test_stable_sampling_inequality_100_vectors():
    kernel = CircleKernel(smoothness=2.0, cutoff=200)
    proj = RkhsSamplingProjection(kernel, 2.0 * np.pi * np.arange(8) / 8.0)
    rng = np.random.default_rng(9)
    for _ in range(100):
        v = rng.normal(size=8)
        lhs = proj.projection_norm(v)
        assert lhs <= proj.stable_constant * np.linalg.norm(v) * (1.0 + 1e-10)


def test_projection_contracts_rkhs_norm_of_trig_polynomials():
    # f with Fourier support inside the cutoff lies in the kernel's space;
    # orthogonal projections cannot increase its norm
    kernel = CircleKernel(smoothness=2.0, cutoff=50)
    nodes = 2.0 * np.pi * np.arange(6) / 6.0
    proj = RkhsSamplingProjection(kernel, nodes)
    rng = np.random.default_rng(10)
    freqs = np.arange(1, 6)
    for _ in range(50):
        a = rng.normal(size=freqs.size)
        b = rng.normal(size=freqs.size)
        f = lambda t: a @ np.cos(np.outer(freqs, t)) + b @ np.sin(np.outer(freqs, t))
        # RKHS norm: |fhat_n|^2 weights (1+n^2)^s summed over +-n;
        # real-form coefficients a_n, b_n have |fhat_{+-n}|^2 = (a_n^2+b_n^2)/4
        norm2 = np.sum((1.0 + freqs.astype(float) ** 2) ** 2 * (a**2 + b**2) / 2.0)
        lhs = proj.projection_norm(f(nodes))
        assert lhs <= np.sqrt(norm2) * (1.0 + 1e-10)


def test_coefficient_count_checked():
    kernel = CircleKernel()
    with pytest.raises(DimensionMismatch):
        evaluate_section_combination(kernel, np.array([0.0, 1.0]), np.array([1.0]), 0.5)
