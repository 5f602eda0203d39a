"""Reconstruction quality metrics, MDL model-order selection and map correlation.

All cube metrics take ``(bands, rows, cols)`` arrays or :class:`HsiCube`
objects.  Reflectance peak is 1.0 throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

__all__ = [
    "MetricReport",
    "psnr",
    "psnr_per_band",
    "sam",
    "ssim",
    "ssim_per_band",
    "rmse",
    "adaptive_l1",
    "pixel_angles",
    "evaluate",
    "mdl_order",
    "MdlResult",
    "cross_correlation",
    "gaussian_window",
    "write_metric_csv",
    "write_mdl_csv",
]

PEAK = 1.0


def _pair(ref, est):
    r = np.asarray(getattr(ref, "data", ref), dtype=np.float64)
    e = np.asarray(getattr(est, "data", est), dtype=np.float64)
    if r.shape != e.shape:
        raise ValueError(f"shape mismatch: {r.shape} vs {e.shape}")
    if r.ndim == 2:
        r, e = r[None], e[None]
    return r, e


def psnr_per_band(ref, est) -> np.ndarray:
    r, e = _pair(ref, est)
    mse = np.mean((r - e) ** 2, axis=(1, 2))
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(PEAK**2 / mse)


def psnr(ref, est) -> float:
    """Mean over bands of ``10 log10(peak^2 / MSE_b)``; ``inf`` when any band matches exactly."""
    return float(np.mean(psnr_per_band(ref, est)))


def rmse(ref, est) -> float:
    r, e = _pair(ref, est)
    return float(np.sqrt(np.mean((r - e) ** 2)))


def pixel_angles(ref, est):
    """Per-pixel spectral angle in radians and a mask of pixels where it is defined."""
    r, e = _pair(ref, est)
    R = r.reshape(r.shape[0], -1)
    E = e.reshape(e.shape[0], -1)
    nr = np.linalg.norm(R, axis=0)
    ne = np.linalg.norm(E, axis=0)
    valid = (nr > 0) & (ne > 0)
    cos = np.zeros(R.shape[1])
    cos[valid] = np.sum(R[:, valid] * E[:, valid], axis=0) / (nr[valid] * ne[valid])
    ang = np.where(valid, np.arccos(np.clip(cos, -1.0, 1.0)), 0.0)
    return ang, valid


def sam(ref, est) -> float:
    """Mean spectral angle in degrees over pixels with nonzero spectra in both inputs."""
    ang, valid = pixel_angles(ref, est)
    if not valid.any():
        raise ValueError("spectral angle undefined: every pixel has a zero spectrum")
    return float(np.degrees(np.mean(ang[valid])))


def adaptive_l1(ref, est) -> float:
    """Absolute error weighted by each pixel's spectral angle (radians), averaged over all entries."""
    r, e = _pair(ref, est)
    ang, _ = pixel_angles(r, e)
    err = np.abs(r - e).reshape(r.shape[0], -1)
    return float(np.sum(err * ang[None, :]) / err.size)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img, win):
    h = win.shape[0] // 2
    out = ndimage.correlate(img, win, mode="constant")
    return out[h:img.shape[0] - h, h:img.shape[1] - h]


def ssim_per_band(ref, est, win_size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Gaussian-window SSIM averaged over the fully contained windows of each band."""
    r, e = _pair(ref, est)
    if r.shape[1] < win_size or r.shape[2] < win_size:
        raise ValueError(f"image {r.shape[1]}x{r.shape[2]} is smaller than the {win_size}x{win_size} window")
    win = gaussian_window(win_size, sigma)
    c1 = (0.01 * PEAK) ** 2
    c2 = (0.03 * PEAK) ** 2
    out = np.empty(r.shape[0])
    for b in range(r.shape[0]):
        x, y = r[b], e[b]
        mx, my = _filter_valid(x, win), _filter_valid(y, win)
        sxx = _filter_valid(x * x, win) - mx * mx
        syy = _filter_valid(y * y, win) - my * my
        sxy = _filter_valid(x * y, win) - mx * my
        smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx**2 + my**2 + c1) * (sxx + syy + c2))
        out[b] = smap.mean()
    return out


def ssim(ref, est) -> float:
    return float(np.mean(ssim_per_band(ref, est)))


@dataclass
class MetricReport:
    psnr: float
    sam: float
    ssim: float
    rmse: float
    l_g: float
    psnr_bands: list[float] = field(default_factory=list)
    ssim_bands: list[float] = field(default_factory=list)
    rmse_bands: list[float] = field(default_factory=list)


def evaluate(ref, est) -> MetricReport:
    r, e = _pair(ref, est)
    pb = psnr_per_band(r, e)
    sb = ssim_per_band(r, e)
    rb = np.sqrt(np.mean((r - e) ** 2, axis=(1, 2)))
    return MetricReport(
        float(np.mean(pb)), sam(r, e), float(np.mean(sb)), rmse(r, e), adaptive_l1(r, e),
        pb.tolist(), sb.tolist(), rb.tolist(),
    )


@dataclass
class MdlResult:
    order: int
    ks: np.ndarray
    code_length: np.ndarray
    eigenvalues: np.ndarray
    floored: bool


def mdl_order(X, max_k: int | None = None) -> MdlResult:
    """Wax-Kailath MDL source count from a ``bands x pixels`` matrix.

    ``MDL(k) = -L (M-k) log(g_k / a_k) + k (2M - k) log(L) / 2`` where
    ``g_k`` and ``a_k`` are the geometric and arithmetic means of the
    ``M - k`` smallest covariance eigenvalues.
    """
    X = np.asarray(getattr(X, "data", X), dtype=np.float64)
    if X.ndim == 3:
        X = X.reshape(X.shape[0], -1)
    M, L = X.shape
    if max_k is None:
        max_k = M - 1
    if L <= M:
        raise ValueError(f"need more pixels than bands, got {L} pixels for {M} bands")
    if not 1 <= max_k < M:
        raise ValueError(f"max_k must lie in [1, {M - 1}], got {max_k}")
    Xc = X - X.mean(axis=1, keepdims=True)
    C = Xc @ Xc.T / L
    lam = np.linalg.eigvalsh(C)[::-1]
    floor = 1e-12 * lam[0] if lam[0] > 0 else 1e-300
    floored = bool(np.any(lam < floor))
    lam = np.maximum(lam, floor)
    ks = np.arange(1, max_k + 1)
    curve = np.empty(ks.size)
    for i, k in enumerate(ks):
        tail = lam[k:]
        log_geo = np.mean(np.log(tail))
        log_arith = math.log(np.mean(tail))
        curve[i] = -L * (M - k) * (log_geo - log_arith) + 0.5 * k * (2 * M - k) * math.log(L)
    return MdlResult(int(ks[np.argmin(curve)]), ks, curve, lam, floored)


def cross_correlation(map_a, map_b) -> float:
    """Pearson correlation of two equally shaped maps."""
    a = np.asarray(map_a, dtype=np.float64).ravel()
    b = np.asarray(map_b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("maps must have the same shape")
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("correlation undefined for a constant map")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _fmt(x: float) -> str:
    return "inf" if x == math.inf else repr(float(x))


def write_metric_csv(rows, path) -> None:
    """``rows`` is an iterable of ``(scene_id, MetricReport)``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("scene_id,psnr_db,sam_deg,ssim,rmse,l_g\n")
        for sid, rep in rows:
            fh.write(f"{sid},{_fmt(rep.psnr)},{_fmt(rep.sam)},{_fmt(rep.ssim)},{_fmt(rep.rmse)},{_fmt(rep.l_g)}\n")


def write_mdl_csv(result: MdlResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("k,code_length\n")
        for k, v in zip(result.ks, result.code_length):
            fh.write(f"{int(k)},{float(v)!r}\n")
