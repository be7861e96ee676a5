import numpy as np
import pytest

from snrgain.tensor import (
    RngState,
    ShapeError,
    column_covariance,
    gaussian_noise,
    matmul,
    norm,
)

import oracles


def test_matmul_identity():
    m = RngState(1).generator.random((4, 4))
    assert np.array_equal(matmul(np.eye(4), m), m)


def test_matmul_1x1():
    assert matmul([[2.0]], [[3.0]])[0, 0] == 6.0


def test_matmul_matches_triple_loop_oracle():
    gen = RngState(2).generator
    a = gen.normal(size=(3, 4))
    b = gen.normal(size=(4, 2))
    got = matmul(a, b)
    want = oracles.matmul_loops(a, b)
    assert np.max(np.abs(got - want)) <= 1e-12 * np.max(np.abs(want))


def test_matmul_shape_mismatch_reports_shapes():
    with pytest.raises(ShapeError, match="3x4.*2x2"):
        matmul(np.zeros((3, 4)), np.zeros((2, 2)))


def test_matmul_associativity():
    gen = RngState(3).generator
    for _ in range(5):
        a = gen.normal(size=(3, 5))
        b = gen.normal(size=(5, 4))
        c = gen.normal(size=(4, 6))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert np.max(np.abs(left - right)) <= 1e-9 * max(1.0, np.max(np.abs(left)))


def test_column_covariance_constant_column_is_zero():
    x = np.column_stack([np.full(5, 3.0), np.arange(5.0)])
    ref = np.array([1.0, 4.0, 2.0, 0.0, 5.0])
    cov = column_covariance(x, ref)
    assert cov[0] == 0.0


def test_column_covariance_self_is_variance():
    ref = np.array([1.0, 4.0, 2.0, 0.0])
    cov = column_covariance(ref.reshape(-1, 1), ref)
    assert cov[0] == pytest.approx(np.var(ref, ddof=1), abs=1e-15)


def test_column_covariance_matches_definitional_oracle():
    gen = RngState(4).generator
    x = gen.normal(size=(4, 3))
    ref = gen.normal(size=4)
    got = column_covariance(x, ref)
    want = oracles.column_covariance_loops(x, ref)
    assert np.max(np.abs(got - want)) <= 1e-12


def test_column_covariance_rejects_single_sample():
    with pytest.raises(ValueError, match="at least 2"):
        column_covariance(np.ones((1, 2)), [1.0])


def test_column_covariance_bilinear():
    gen = RngState(5).generator
    x = gen.normal(size=(6, 2))
    ref = gen.normal(size=6)
    alpha = 2.5
    got = column_covariance(alpha * x, ref)
    want = alpha * column_covariance(x, ref)
    assert np.max(np.abs(got - want)) <= 1e-12 * np.max(np.abs(want))


def test_gaussian_noise_zero_sigma():
    rng = RngState(1)
    out = gaussian_noise((3, 2), 0.0, rng)
    assert np.array_equal(out, np.zeros((3, 2)))


def test_gaussian_noise_statistics():
    rng = RngState(6)
    draws = gaussian_noise((100_000,), 1.0, rng)
    assert abs(draws.mean()) < 0.02
    assert abs(draws.std(ddof=1) - 1.0) < 0.02


def test_gaussian_noise_rejects_negative_sigma():
    with pytest.raises(ValueError, match="non-negative"):
        gaussian_noise((2, 2), -0.1, RngState(0))


def test_rng_determinism_same_seed():
    a = gaussian_noise((4, 4), 1.0, RngState(99))
    b = gaussian_noise((4, 4), 1.0, RngState(99))
    assert np.array_equal(a, b)


def test_rng_derive_streams_differ_and_repeat():
    root = RngState(12)
    a1 = root.derive(0).generator.random(5)
    a2 = RngState(12).derive(0).generator.random(5)
    b = root.derive(1).generator.random(5)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)


def test_reductions_match_sequential_loops():
    gen = RngState(7).generator
    v = gen.normal(size=37)
    assert abs(np.sum(v) - sum(float(t) for t in v)) <= 1e-12 * max(1, abs(np.sum(v)))
    assert abs(np.mean(v) - sum(float(t) for t in v) / 37) <= 1e-12
    assert np.max(v) == max(float(t) for t in v)
    seq_norm = np.sqrt(sum(float(t) ** 2 for t in v))
    assert abs(norm(v) - seq_norm) <= 1e-12 * seq_norm


def test_outputs_finite_on_random_inputs():
    gen = RngState(8).generator
    for _ in range(3):
        a = gen.normal(size=(5, 7))
        b = gen.normal(size=(7, 2))
        assert np.all(np.isfinite(matmul(a, b)))
        assert np.all(np.isfinite(column_covariance(a, gen.normal(size=5))))
