"""Classical spatial and spectral priors.

``S_u`` is a 2x bicubic upsample of the 10 m product; ``P`` is the pooled
Gram matrix of the training cubes, rescaled to the pixel count of the scene
being reconstructed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cube import DataError, HsiCube, as_matrix
from .operators import bicubic_resize

__all__ = [
    "SpectralPriorMatrix",
    "estimate_spectral_prior",
    "spatial_prior_image",
    "write_prior",
    "read_prior",
]

_SPM_HEADER = struct.Struct("<4sIQ")


@dataclass(frozen=True, eq=False)
class SpectralPriorMatrix:
    values: np.ndarray
    scale_pixels: int

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def rescaled(self, target_pixels: int) -> "SpectralPriorMatrix":
        return SpectralPriorMatrix(self.values * (target_pixels / self.scale_pixels), int(target_pixels))

    def diagnostics(self) -> dict[str, float]:
        P = self.values
        eig = np.linalg.eigvalsh(P)
        trace = float(np.trace(P))
        return {
            "asymmetry_fro": float(np.linalg.norm(P - P.T)),
            "min_eigenvalue": float(eig[0]),
            "psd_tolerance": -1e-8 * trace / P.shape[0] if trace > 0 else 0.0,
            "trace": trace,
        }


def _pairwise_sum(mats):
    # fixed-order tree reduction
    mats = list(mats)
    while len(mats) > 1:
        nxt = [mats[i] + mats[i + 1] for i in range(0, len(mats) - 1, 2)]
        if len(mats) % 2:
            nxt.append(mats[-1])
        mats = nxt
    return mats[0]


def estimate_spectral_prior(cubes, target_pixels: int) -> SpectralPriorMatrix:
    """Pooled Gram ``(L / sum L_i) * sum A_i A_i^T`` over the training cubes."""
    cubes = list(cubes)
    if not cubes:
        raise ValueError("at least one training cube is required")
    bands = cubes[0].bands
    if any(c.bands != bands for c in cubes):
        raise ValueError("training cubes disagree on band count")
    grams = []
    total = 0
    for c in cubes:
        X = as_matrix(c)
        grams.append(X @ X.T)
        total += c.pixels
    G = _pairwise_sum(grams) * (target_pixels / total)
    G = 0.5 * (G + G.T)
    return SpectralPriorMatrix(G, int(target_pixels))


def spatial_prior_image(S) -> HsiCube:
    """Per-band 2x bicubic upsample of a product (``SentinelProduct`` or ``HsiCube``)."""
    cube = getattr(S, "cube", S)
    up = [bicubic_resize(b, out_shape=(2 * cube.rows, 2 * cube.cols)) for b in cube.data]
    return HsiCube(np.stack(up))


def write_prior(P: SpectralPriorMatrix, path) -> None:
    """SPM1: magic, u32 size, u64 scale pixels, then ``size^2`` little-endian f64 row-major."""
    with open(path, "wb") as fh:
        fh.write(_SPM_HEADER.pack(b"SPM1", P.size, P.scale_pixels))
        fh.write(np.ascontiguousarray(P.values, dtype="<f8").tobytes())


def read_prior(path) -> SpectralPriorMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _SPM_HEADER.size:
        raise DataError(f"{path}: too short for an SPM1 header")
    magic, size, scale = _SPM_HEADER.unpack_from(raw)
    if magic != b"SPM1":
        raise DataError(f"{path}: bad magic {magic!r}")
    if len(raw) != _SPM_HEADER.size + 8 * size * size:
        raise DataError(f"{path}: payload does not match a {size}x{size} matrix")
    vals = np.frombuffer(raw, dtype="<f8", offset=_SPM_HEADER.size).astype(np.float64).reshape(size, size)
    return SpectralPriorMatrix(vals, int(scale))
