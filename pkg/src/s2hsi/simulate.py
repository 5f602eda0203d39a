"""Simulation of Sentinel-2 multiresolution products from AVIRIS-NG cubes.

The chain is: drop water-vapour bands (425 -> 372), average adjacent band
pairs (372 -> 186), project onto the 12 Sentinel-2 bands with a box-car SRF,
blur and decimate every band to its native GSD, then replicate the 20 m and
60 m bands back onto the 10 m grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from importlib import resources
from pathlib import Path

import numpy as np

from .cube import HsiCube, SceneManifest, as_matrix, from_matrix, split_manifest, write_manifest
from .operators import SrfMatrix, apply_srf, circular_blur_downsample, replicate_upsample

__all__ = [
    "SentinelBandSpec",
    "SentinelProduct",
    "SENTINEL2_FACTORS",
    "WATER_BANDS",
    "load_band_specs",
    "default_band_specs",
    "aviris_ng_wavelengths",
    "default_hsi_wavelengths",
    "remove_water_bands",
    "spectral_downsample2",
    "build_srf",
    "simulate_sentinel2",
    "make_dataset",
]

SENTINEL2_FACTORS = (12, 2, 2, 2, 4, 4, 4, 2, 4, 12, 4, 4)
# 1-indexed AVIRIS-NG bands dropped for water-vapour absorption.
WATER_BANDS = frozenset([1, *range(195, 212), *range(281, 316)])
HSI_GSD = 5
GRID_GSD = 10


@dataclass(frozen=True)
class SentinelBandSpec:
    index: int
    center_wavelength: float
    bandwidth: float
    native_gsd: int
    downsample_factor: int

    def __post_init__(self):
        if self.native_gsd not in (10, 20, 60):
            raise ValueError(f"band {self.index}: native GSD must be 10, 20 or 60 m")
        if self.downsample_factor * HSI_GSD != self.native_gsd:
            raise ValueError(
                f"band {self.index}: factor {self.downsample_factor} inconsistent with {self.native_gsd} m GSD"
            )
        if self.bandwidth <= 0:
            raise ValueError(f"band {self.index}: bandwidth must be positive")

    @property
    def replication(self) -> int:
        """Block side used to copy the native band onto the 10 m grid."""
        return self.downsample_factor * HSI_GSD // GRID_GSD


@dataclass(frozen=True)
class SentinelProduct:
    """12-band product on the 10 m grid plus its per-band factors."""

    cube: HsiCube
    factors: tuple[int, ...]
    replication: tuple[int, ...]


def load_band_specs(path=None) -> list[SentinelBandSpec]:
    """Parse a ``index center_nm bandwidth_nm gsd_m factor`` table; ``None`` loads the shipped default."""
    if path is None:
        text = resources.files("s2hsi").joinpath("data/sentinel2_bands.txt").read_text()
    else:
        text = Path(path).read_text()
    specs = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 5:
            raise ValueError(f"malformed band-spec line: {line!r}")
        specs.append(
            SentinelBandSpec(int(fields[0]), float(fields[1]), float(fields[2]), int(fields[3]), int(fields[4]))
        )
    if [s.index for s in specs] != list(range(1, len(specs) + 1)):
        raise ValueError("band indices must run 1..n in order")
    return specs


def default_band_specs() -> list[SentinelBandSpec]:
    return load_band_specs(None)


def aviris_ng_wavelengths() -> np.ndarray:
    """Nominal AVIRIS-NG band centers (425 bands, evenly spaced approximation)."""
    return np.linspace(376.86, 2506.81, 425)


def default_hsi_wavelengths() -> np.ndarray:
    """Centers of the 186 bands left after water removal and pairwise averaging."""
    wl = aviris_ng_wavelengths()
    keep = [i for i in range(425) if i + 1 not in WATER_BANDS]
    return wl[keep].reshape(-1, 2).mean(axis=1)


def remove_water_bands(cube: HsiCube) -> HsiCube:
    if cube.bands != 425:
        raise ValueError(f"expected a 425-band AVIRIS-NG cube, got {cube.bands} bands")
    keep = [i for i in range(425) if i + 1 not in WATER_BANDS]
    wl = None if cube.wavelengths is None else cube.wavelengths[keep]
    return HsiCube(cube.data[keep], wl)


def spectral_downsample2(cube: HsiCube) -> HsiCube:
    """Average adjacent band pairs (1,2), (3,4), ..."""
    if cube.bands % 2:
        raise ValueError(f"band count must be even, got {cube.bands}")
    data = 0.5 * (cube.data[0::2] + cube.data[1::2])
    wl = None
    if cube.wavelengths is not None:
        wl = 0.5 * (cube.wavelengths[0::2] + cube.wavelengths[1::2])
    return HsiCube(data, wl)


def build_srf(hsi_wavelengths, band_specs) -> SrfMatrix:
    """Box-car SRF: each sensor band averages the source bands inside its bandwidth.

    A band narrower than the source spacing falls back to the single nearest
    source band.
    """
    wl = np.asarray(hsi_wavelengths, dtype=np.float64)
    if wl.ndim != 1 or (wl.size > 1 and not np.all(np.diff(wl) > 0)):
        raise ValueError("source wavelengths must be a strictly increasing 1-D array")
    D = np.zeros((len(band_specs), wl.size))
    for k, spec in enumerate(band_specs):
        inside = np.flatnonzero(np.abs(wl - spec.center_wavelength) <= spec.bandwidth / 2)
        if inside.size == 0:
            inside = np.array([int(np.argmin(np.abs(wl - spec.center_wavelength)))])
        D[k, inside] = 1.0 / inside.size
    return SrfMatrix(D, wl)


def simulate_sentinel2(A: HsiCube, D: SrfMatrix, band_specs=None) -> tuple[SentinelProduct, HsiCube]:
    """Synthesize the multiresolution product ``S`` and the 5 m image ``S_u = D A``.

    Returns
    -------
    product : SentinelProduct
        12 bands on the 10 m grid (half the input rows and cols).
    su_true : HsiCube
        ``D A`` at the input grid, before any spatial degradation.
    """
    specs = default_band_specs() if band_specs is None else list(band_specs)
    if D.shape[0] != len(specs):
        raise ValueError(f"SRF has {D.shape[0]} rows for {len(specs)} band specs")
    factors = [s.downsample_factor for s in specs]
    align = reduce(math.lcm, factors)
    if A.rows % align or A.cols % align:
        raise ValueError(f"{A.rows}x{A.cols} scene is not divisible by {align}")
    su = apply_srf(D, as_matrix(A))
    su_true = from_matrix(su, A.rows, A.cols)
    bands = []
    for spec, band in zip(specs, su_true.data):
        native = circular_blur_downsample(band, spec.downsample_factor)
        bands.append(replicate_upsample(native, spec.replication))
    product = SentinelProduct(
        HsiCube(np.stack(bands)),
        tuple(factors),
        tuple(s.replication for s in specs),
    )
    return product, su_true


def make_dataset(cubes, sizes, seed: int, path=None, scene_ids=None) -> SceneManifest:
    """Seeded train/test/val split of cube paths, optionally written to ``path``."""
    manifest = split_manifest(cubes, sizes, seed, scene_ids)
    if path is not None:
        write_manifest(manifest, path)
    return manifest
