"""Linear operators of the data-fitting model.

All spatial operators use periodic boundaries, which makes the blur a
circulant matrix ``B``.  Images live in the ``bands x pixels`` matrix layout
(see :func:`s2hsi.cube.as_matrix`) and carry their ``(rows, cols)`` geometry
as a separate argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "BlurKernel",
    "SrfMatrix",
    "build_gaussian_kernel",
    "apply_blur",
    "apply_blur_adjoint",
    "apply_srf",
    "apply_srf_adjoint",
    "degradation_sigma",
    "circular_blur_downsample",
    "replicate_upsample",
    "block_mean",
    "bicubic_resize",
    "SIM_SIGMA_PER_FACTOR",
]

# Gaussian std per unit downsampling factor for the degradation chain.
SIM_SIGMA_PER_FACTOR = 0.4247


@dataclass(frozen=True, eq=False)
class BlurKernel:
    weights: np.ndarray
    sigma: float | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ValueError(f"kernel must be square with odd side, got shape {w.shape}")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def is_symmetric(self) -> bool:
        w = self.weights
        return np.array_equal(w, w[::-1, ::-1])


@dataclass(frozen=True, eq=False)
class SrfMatrix:
    """Spectral response matrix ``D`` (sensor bands x source bands)."""

    values: np.ndarray
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("SRF must be a 2-D matrix")
        if np.any(v < 0):
            raise ValueError("SRF weights must be nonnegative")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def save(self, path) -> None:
        """Text format: first line source-band wavelengths (or nan), then one row per sensor band."""
        m = self.values.shape[1]
        wl = self.wavelengths if self.wavelengths is not None else np.full(m, np.nan)
        np.savetxt(path, np.vstack([np.asarray(wl, dtype=float)[None, :], self.values]), fmt="%.17g")

    @classmethod
    def load(cls, path) -> "SrfMatrix":
        arr = np.loadtxt(path, ndmin=2)
        wl = arr[0]
        return cls(arr[1:], None if np.all(np.isnan(wl)) else wl)


def build_gaussian_kernel(size: int = 7, sigma: float = 0.7) -> BlurKernel:
    """Sampled isotropic Gaussian on a ``size x size`` grid, normalized to unit sum."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return BlurKernel(w / w.sum(), sigma)


def _check_geometry(X, shape):
    X = np.asarray(X, dtype=np.float64)
    rows, cols = shape
    if X.ndim != 2 or X.shape[1] != rows * cols:
        raise ValueError(f"matrix of shape {X.shape} does not match geometry {rows}x{cols}")
    return X.reshape(X.shape[0], rows, cols)


def _circular_convolve(X, weights, shape):
    cube = _check_geometry(X, shape)
    out = np.empty_like(cube)
    for b in range(cube.shape[0]):
        out[b] = ndimage.convolve(cube[b], weights, mode="grid-wrap")
    return out.reshape(cube.shape[0], -1)


def apply_blur(X, kernel: BlurKernel, shape) -> np.ndarray:
    """Right-multiply by ``B``: circularly convolve every band with ``kernel``."""
    if kernel.size == 1:
        return _check_geometry(X, shape).reshape(np.shape(X)) * kernel.weights[0, 0]
    return _circular_convolve(X, kernel.weights, shape)


def apply_blur_adjoint(Y, kernel: BlurKernel, shape) -> np.ndarray:
    """Right-multiply by ``B^T``: convolution with the flipped kernel."""
    if kernel.is_symmetric:
        return apply_blur(Y, kernel, shape)
    if kernel.size == 1:
        return apply_blur(Y, kernel, shape)
    return _circular_convolve(Y, kernel.weights[::-1, ::-1], shape)


def _srf_values(D):
    return D.values if isinstance(D, SrfMatrix) else np.asarray(D, dtype=np.float64)


def apply_srf(D, A) -> np.ndarray:
    Dv = _srf_values(D)
    A = np.asarray(A, dtype=np.float64)
    if Dv.shape[1] != A.shape[0]:
        raise ValueError(f"SRF has {Dv.shape[1]} columns but input has {A.shape[0]} bands")
    return Dv @ A


def apply_srf_adjoint(D, Y) -> np.ndarray:
    Dv = _srf_values(D)
    Y = np.asarray(Y, dtype=np.float64)
    if Dv.shape[0] != Y.shape[0]:
        raise ValueError(f"SRF has {Dv.shape[0]} rows but input has {Y.shape[0]} bands")
    return Dv.T @ Y


def degradation_sigma(factor: int) -> float:
    return SIM_SIGMA_PER_FACTOR * factor


def degradation_kernel(factor: int) -> BlurKernel:
    """Anti-aliasing Gaussian for a ``factor``-fold decimation.

    Side length is ``2 * ceil(2 * sigma) + 1``; factor 1 needs no blur and
    yields the identity kernel.
    """
    if factor == 1:
        return BlurKernel(np.ones((1, 1)))
    sigma = degradation_sigma(factor)
    return build_gaussian_kernel(2 * math.ceil(2 * sigma) + 1, sigma)


def circular_blur_downsample(band, factor: int) -> np.ndarray:
    """Circular Gaussian blur then keep every ``factor``-th sample from offset 0."""
    band = np.asarray(band, dtype=np.float64)
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    rows, cols = band.shape
    if rows % factor or cols % factor:
        raise ValueError(f"{rows}x{cols} band is not divisible by factor {factor}")
    kernel = degradation_kernel(factor)
    if kernel.size == 1:
        blurred = band.copy()
    else:
        blurred = ndimage.convolve(band, kernel.weights, mode="grid-wrap")
    return blurred[::factor, ::factor].copy()


def replicate_upsample(band, factor: int) -> np.ndarray:
    """Expand every pixel into a constant ``factor x factor`` block."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    band = np.asarray(band, dtype=np.float64)
    return np.repeat(np.repeat(band, factor, axis=0), factor, axis=1)


def block_mean(band, factor: int) -> np.ndarray:
    band = np.asarray(band, dtype=np.float64)
    rows, cols = band.shape
    if rows % factor or cols % factor:
        raise ValueError(f"{rows}x{cols} band is not divisible by factor {factor}")
    return band.reshape(rows // factor, factor, cols // factor, factor).mean(axis=(1, 3))


def _cubic_weights(t, a=-0.5):
    """Keys cubic weights for taps at offsets -1, 0, 1, 2 given fractional position ``t``."""
    def k(x):
        x = np.abs(x)
        return np.where(
            x <= 1,
            (a + 2) * x**3 - (a + 3) * x**2 + 1,
            np.where(x < 2, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0),
        )
    return np.stack([k(t + 1), k(t), k(1 - t), k(2 - t)], axis=-1)


def _resize_matrix(n_in, n_out):
    """Dense ``n_out x n_in`` Catmull-Rom interpolation matrix, half-pixel centers, edge replication."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src)
    t = src - base
    w = _cubic_weights(t)
    M = np.zeros((n_out, n_in))
    for tap, off in enumerate((-1, 0, 1, 2)):
        idx = np.clip(base.astype(int) + off, 0, n_in - 1)
        np.add.at(M, (np.arange(n_out), idx), w[:, tap])
    return M


def bicubic_resize(band, scale=None, out_shape=None) -> np.ndarray:
    """Catmull-Rom (a = -0.5) bicubic resize of a single band.

    Give either ``scale`` (output size ``round(n * scale)``) or an explicit
    ``out_shape``.
    """
    band = np.asarray(band, dtype=np.float64)
    rows, cols = band.shape
    if out_shape is None:
        if scale is None or scale <= 0:
            raise ValueError("scale must be positive")
        out_shape = (int(round(rows * scale)), int(round(cols * scale)))
    r_out, c_out = out_shape
    if r_out < 1 or c_out < 1:
        raise ValueError(f"degenerate output size {out_shape}")
    if (r_out, c_out) == (rows, cols):
        return band.copy()
    return _resize_matrix(rows, r_out) @ band @ _resize_matrix(cols, c_out).T
