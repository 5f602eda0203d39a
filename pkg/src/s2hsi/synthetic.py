"""Seeded synthetic scenes: low-rank linear mixtures of smooth spectra."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .cube import HsiCube
from .operators import SrfMatrix

__all__ = ["smooth_endmembers", "smooth_abundances", "mixture_scene", "toy_srf"]


def smooth_endmembers(bands: int, n: int, rng) -> np.ndarray:
    """``bands x n`` positive spectra built from a few Gaussian bumps on a baseline."""
    x = np.linspace(0.0, 1.0, bands)
    E = np.empty((bands, n))
    for j in range(n):
        spec = 0.1 + 0.2 * rng.random()
        for _ in range(3):
            c, w, h = rng.random(), 0.08 + 0.2 * rng.random(), 0.1 + 0.35 * rng.random()
            spec = spec + h * np.exp(-0.5 * ((x - c) / w) ** 2)
        E[:, j] = spec
    return E / max(1.0, E.max() / 0.9)


def smooth_abundances(n: int, rows: int, cols: int, rng, smoothness: float = 3.0) -> np.ndarray:
    """``n x (rows*cols)`` nonnegative, sum-to-one maps from blurred noise through a softmax."""
    fields = np.stack([
        ndimage.gaussian_filter(rng.standard_normal((rows, cols)), smoothness, mode="wrap") for _ in range(n)
    ])
    fields /= fields.std(axis=(1, 2), keepdims=True)
    w = np.exp(1.5 * fields)
    return (w / w.sum(axis=0, keepdims=True)).reshape(n, -1)


def mixture_scene(bands: int, rows: int, cols: int, n_sources: int = 4, seed: int = 0, endmembers=None):
    """Rank-``n_sources`` scene ``E @ S`` as an :class:`HsiCube`, plus ``(E, S)``."""
    rng = np.random.default_rng(seed)
    E = smooth_endmembers(bands, n_sources, rng) if endmembers is None else np.asarray(endmembers)
    S = smooth_abundances(E.shape[1], rows, cols, rng)
    wl = np.linspace(400.0, 2400.0, bands)
    return HsiCube((E @ S).reshape(bands, rows, cols), wl), E, S


def toy_srf(bands: int, n_rows: int = 12, width: int = 2) -> SrfMatrix:
    """Box-car SRF with ``n_rows`` evenly spread, ``width``-band supports."""
    D = np.zeros((n_rows, bands))
    starts = np.round(np.linspace(0, bands - width, n_rows)).astype(int)
    for k, s in enumerate(starts):
        D[k, s:s + width] = 1.0 / width
    return SrfMatrix(D, np.linspace(400.0, 2400.0, bands))
