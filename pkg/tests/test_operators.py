import numpy as np
import pytest

import oracles
from s2hsi.operators import (
    BlurKernel,
    SrfMatrix,
    apply_blur,
    apply_blur_adjoint,
    apply_srf,
    apply_srf_adjoint,
    bicubic_resize,
    block_mean,
    build_gaussian_kernel,
    circular_blur_downsample,
    degradation_kernel,
    replicate_upsample,
)

# center weight of the normalized 7x7, sigma 0.7 Gaussian, from oracles.gaussian_kernel
GAUSS_7_07_CENTER = 0.324724217380677


def _inner(a, b):
    return float(np.sum(a * b))


def test_size_one_kernel():
    k = build_gaussian_kernel(1, 3.0)
    np.testing.assert_array_equal(k.weights, [[1.0]])


def test_reference_kernel_matches_oracle():
    k = build_gaussian_kernel(7, 0.7)
    assert k.weights[3, 3] == pytest.approx(GAUSS_7_07_CENTER, abs=1e-15)
    np.testing.assert_allclose(k.weights, oracles.gaussian_kernel(7, 0.7), atol=1e-15)
    assert abs(k.weights.sum() - 1) <= 1e-12
    assert k.is_symmetric
    np.testing.assert_array_equal(k.weights, k.weights[:, ::-1])
    np.testing.assert_array_equal(k.weights, k.weights[::-1, :])


@pytest.mark.parametrize("size,sigma", [(3, 0.5), (5, 2.0), (9, 1.3), (23, 5.0964)])
def test_kernels_unit_sum(size, sigma):
    assert abs(build_gaussian_kernel(size, sigma).weights.sum() - 1.0) <= 1e-12


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        build_gaussian_kernel(6, 1.0)


def test_blur_preserves_constants():
    X = np.full((3, 36), 0.37)
    np.testing.assert_allclose(apply_blur(X, build_gaussian_kernel(7, 0.7), (6, 6)), X, atol=1e-15)


def test_blur_identity_kernel(rng):
    X = rng.random((2, 20))
    np.testing.assert_array_equal(apply_blur(X, build_gaussian_kernel(1, 1.0), (4, 5)), X)


def test_blur_matches_direct_convolution(rng):
    img = rng.random((8, 8))
    k = build_gaussian_kernel(7, 0.7)
    got = apply_blur(img.reshape(1, -1), k, (8, 8)).reshape(8, 8)
    np.testing.assert_allclose(got, oracles.circular_convolve(img, k.weights), atol=1e-12)


def test_asymmetric_blur_and_adjoint(rng):
    w = rng.random((3, 3))
    k = BlurKernel(w / w.sum())
    img = rng.random((5, 4))
    got = apply_blur(img.reshape(1, -1), k, (5, 4)).reshape(5, 4)
    np.testing.assert_allclose(got, oracles.circular_convolve(img, k.weights), atol=1e-12)
    B = oracles.blur_matrix(k.weights, 5, 4)
    Y = rng.random((2, 20))
    np.testing.assert_allclose(apply_blur_adjoint(Y, k, (5, 4)), Y @ B.T, atol=1e-12)


def test_blur_adjoint_identity(rng):
    k = build_gaussian_kernel(7, 0.7)
    X, Y = rng.standard_normal((4, 36)), rng.standard_normal((4, 36))
    lhs = _inner(apply_blur(X, k, (6, 6)), Y)
    rhs = _inner(X, apply_blur_adjoint(Y, k, (6, 6)))
    assert abs(lhs - rhs) / (np.linalg.norm(X) * np.linalg.norm(Y)) <= 1e-10


def test_symmetric_adjoint_equals_forward(rng):
    k = build_gaussian_kernel(7, 0.7)
    Y = rng.random((3, 36))
    np.testing.assert_array_equal(apply_blur_adjoint(Y, k, (6, 6)), apply_blur(Y, k, (6, 6)))


def test_blur_linearity(rng):
    k = build_gaussian_kernel(5, 1.1)
    X, Y = rng.random((2, 30)), rng.random((2, 30))
    a, b = 1.7, -0.3
    np.testing.assert_allclose(
        apply_blur(a * X + b * Y, k, (5, 6)), a * apply_blur(X, k, (5, 6)) + b * apply_blur(Y, k, (5, 6)), atol=1e-12
    )


def test_blur_geometry_mismatch():
    with pytest.raises(ValueError):
        apply_blur(np.zeros((1, 10)), build_gaussian_kernel(3, 1.0), (3, 3))


def test_srf_constant_spectrum():
    D = np.zeros((12, 186))
    for k in range(12):
        D[k, 10 * k:10 * k + 5] = 0.2
    A = np.full((186, 7), 0.42)
    np.testing.assert_allclose(apply_srf(SrfMatrix(D), A), np.full((12, 7), 0.42), atol=1e-15)


def test_srf_averaging_row(rng):
    D = np.zeros((12, 186))
    D[:, 0] = 1.0
    D[2] = 0.0
    D[2, 10:18] = 1 / 8
    A = rng.random((186, 9))
    np.testing.assert_allclose(apply_srf(SrfMatrix(D), A)[2], A[10:18].mean(axis=0), atol=1e-15)


def test_srf_matches_naive_matmul(rng):
    D = rng.random((12, 186))
    A = rng.random((186, 16))
    np.testing.assert_allclose(apply_srf(SrfMatrix(D), A), oracles.matmul(D, A), atol=1e-12)


def test_srf_adjoint(rng):
    D = SrfMatrix(rng.random((12, 40)))
    A, Y = rng.standard_normal((40, 36)), rng.standard_normal((12, 36))
    lhs, rhs = _inner(apply_srf(D, A), Y), _inner(A, apply_srf_adjoint(D, Y))
    assert abs(lhs - rhs) / (np.linalg.norm(A) * np.linalg.norm(Y)) <= 1e-10
    np.testing.assert_array_equal(apply_srf_adjoint(D, np.zeros((12, 5))), np.zeros((40, 5)))


def test_srf_adjoint_one_hot(rng):
    D = np.zeros((1, 10))
    D[0, 4] = 1.0
    Y = rng.random((1, 6))
    out = apply_srf_adjoint(SrfMatrix(D), Y)
    np.testing.assert_array_equal(out[4], Y[0])
    assert np.count_nonzero(np.delete(out, 4, axis=0)) == 0


def test_srf_dimension_mismatch():
    with pytest.raises(ValueError):
        apply_srf(SrfMatrix(np.ones((2, 3))), np.ones((4, 2)))
    with pytest.raises(ValueError):
        apply_srf_adjoint(SrfMatrix(np.ones((2, 3))), np.ones((3, 2)))


def test_downsample_factor_one_is_identity(rng):
    band = rng.random((6, 6))
    assert degradation_kernel(1).size == 1
    np.testing.assert_array_equal(circular_blur_downsample(band, 1), band)


def test_downsample_constant():
    out = circular_blur_downsample(np.full((24, 24), 0.3), 12)
    assert out.shape == (2, 2)
    np.testing.assert_allclose(out, 0.3, atol=1e-14)


def test_downsample_matches_oracle(rng):
    band = rng.random((8, 8))
    sigma = 0.4247 * 2
    size = 2 * int(np.ceil(2 * sigma)) + 1
    ref = oracles.circular_convolve(band, oracles.gaussian_kernel(size, sigma))[::2, ::2]
    np.testing.assert_allclose(circular_blur_downsample(band, 2), ref, atol=1e-12)


def test_downsample_rejects_non_divisible():
    with pytest.raises(ValueError):
        circular_blur_downsample(np.zeros((10, 12)), 4)


def test_replicate():
    np.testing.assert_array_equal(replicate_upsample(np.array([[0.7]]), 6), np.full((6, 6), 0.7))
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(replicate_upsample(x, 1), x)
    np.testing.assert_array_equal(block_mean(replicate_upsample(x, 4), 4), x)


def test_bicubic_identity_and_constant(rng):
    band = rng.random((7, 5))
    np.testing.assert_allclose(bicubic_resize(band, 1), band, atol=1e-12)
    np.testing.assert_allclose(bicubic_resize(np.full((6, 6), 0.25), 2), 0.25, atol=1e-14)


def test_bicubic_reproduces_ramp_interior():
    rows, cols = 10, 12
    ramp = 0.1 * np.arange(cols)[None, :] + 0.03 * np.arange(rows)[:, None]
    up = bicubic_resize(ramp, 2)
    assert up.shape == (20, 24)
    # half-pixel centers: output (i, j) samples input ((i + 0.5)/2 - 0.5, (j + 0.5)/2 - 0.5)
    yi = (np.arange(20) + 0.5) / 2 - 0.5
    xj = (np.arange(24) + 0.5) / 2 - 0.5
    expected = 0.1 * xj[None, :] + 0.03 * yi[:, None]
    np.testing.assert_allclose(up[4:-4, 4:-4], expected[4:-4, 4:-4], atol=1e-12)


def test_bicubic_degenerate_size():
    with pytest.raises(ValueError):
        bicubic_resize(np.zeros((2, 2)), out_shape=(0, 3))
