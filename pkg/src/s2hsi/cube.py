"""Hyperspectral cube container, HSC1 file I/O and simple views.

Cubes are stored band-sequential, ``(bands, rows, cols)``.  The matrix view
used by the solver flattens each band row-major, so column ``j`` of the
``bands x (rows * cols)`` matrix is the spectrum of pixel
``(j // cols, j % cols)``.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "CubeFormatError",
    "CubeCorruptError",
    "CubeDataError",
    "HsiCube",
    "SceneManifest",
    "read_cube",
    "write_cube",
    "as_matrix",
    "from_matrix",
    "truecolor_composite",
    "write_ppm",
    "read_manifest",
    "write_manifest",
    "split_manifest",
]

MAGIC = b"HSC1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIB3x")
SPLITS = ("train", "test", "val")


class DataError(Exception):
    """Base class for problems with the content of an input file."""


class CubeFormatError(DataError):
    pass


class CubeCorruptError(DataError):
    pass


class CubeDataError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class HsiCube:
    """A ``(bands, rows, cols)`` reflectance cube with optional band centers (nm).

    The sample array is copied to float64 and made read-only on construction.
    """

    data: np.ndarray
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"cube data must be 3-D (bands, rows, cols), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            idx = int(np.flatnonzero(~np.isfinite(data.ravel()))[0])
            raise CubeDataError(f"non-finite sample at flat index {idx}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        if self.wavelengths is not None:
            wl = np.array(self.wavelengths, dtype=np.float64).ravel()
            if wl.size != data.shape[0]:
                raise ValueError(f"{wl.size} wavelengths for {data.shape[0]} bands")
            if wl.size > 1 and not np.all(np.diff(wl) > 0):
                raise ValueError("wavelengths must be strictly increasing")
            wl.flags.writeable = False
            object.__setattr__(self, "wavelengths", wl)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def rows(self) -> int:
        return self.data.shape[1]

    @property
    def cols(self) -> int:
        return self.data.shape[2]

    @property
    def pixels(self) -> int:
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, HsiCube):
            return NotImplemented
        if (self.wavelengths is None) != (other.wavelengths is None):
            return False
        if self.wavelengths is not None and not np.array_equal(self.wavelengths, other.wavelengths):
            return False
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


def write_cube(cube: HsiCube, path) -> None:
    """Write ``cube`` in the HSC1 layout (samples as little-endian float32)."""
    has_wl = cube.wavelengths is not None
    header = _HEADER.pack(MAGIC, VERSION, cube.bands, cube.rows, cube.cols, int(has_wl))
    with open(path, "wb") as fh:
        fh.write(header)
        if has_wl:
            fh.write(np.asarray(cube.wavelengths, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(cube.data, dtype="<f4").tobytes())


def read_cube(path) -> HsiCube:
    """Read an HSC1 file.

    Raises
    ------
    CubeFormatError
        Bad magic bytes, version or flag.
    CubeCorruptError
        Payload length disagrees with the header dimensions.
    CubeDataError
        A sample is NaN or infinite.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CubeFormatError(f"{path}: file too short for an HSC1 header")
    magic, version, bands, rows, cols, has_wl = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CubeFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CubeFormatError(f"{path}: unsupported version {version}")
    if has_wl not in (0, 1):
        raise CubeFormatError(f"{path}: invalid wavelength flag {has_wl}")
    n = bands * rows * cols
    expected = _HEADER.size + 8 * bands * has_wl + 4 * n
    if len(raw) != expected:
        raise CubeCorruptError(f"{path}: expected {expected} bytes for {bands}x{rows}x{cols}, found {len(raw)}")
    offset = _HEADER.size
    wl = None
    if has_wl:
        wl = np.frombuffer(raw, dtype="<f8", count=bands, offset=offset).astype(np.float64)
        offset += 8 * bands
    data = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).astype(np.float64)
    bad = ~np.isfinite(data)
    if bad.any():
        raise CubeDataError(f"{path}: non-finite sample at flat index {int(np.flatnonzero(bad)[0])}")
    return HsiCube(data.reshape(bands, rows, cols), wl)


def as_matrix(cube: HsiCube) -> np.ndarray:
    """Return the ``bands x pixels`` matrix view (row-major pixel order)."""
    return cube.data.reshape(cube.bands, cube.pixels).copy()


def from_matrix(X, rows: int, cols: int, wavelengths=None) -> HsiCube:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != rows * cols:
        raise ValueError(f"matrix of shape {X.shape} does not match a {rows}x{cols} grid")
    return HsiCube(X.reshape(X.shape[0], rows, cols), wavelengths)


def truecolor_composite(cube: HsiCube, band_indices, gamma: float = 1.0) -> np.ndarray:
    """Build an 8-bit ``(rows, cols, 3)`` RGB image from three 0-based band indices.

    Each channel is min-max normalized, raised to ``1 / gamma`` and scaled to
    [0, 255].  A constant band maps to 0.
    """
    idx = list(band_indices)
    if len(idx) != 3:
        raise ValueError("exactly three band indices are required")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    for b in idx:
        if not 0 <= b < cube.bands:
            raise IndexError(f"band index {b} out of range for {cube.bands} bands")
    out = np.zeros((cube.rows, cube.cols, 3), dtype=np.uint8)
    for ch, b in enumerate(idx):
        band = cube.data[b]
        lo, hi = band.min(), band.max()
        if hi <= lo:
            continue
        scaled = ((band - lo) / (hi - lo)) ** (1.0 / gamma)
        out[..., ch] = np.round(scaled * 255.0).astype(np.uint8)
    return out


def write_ppm(rgb: np.ndarray, path) -> None:
    """Write an 8-bit RGB image as binary PPM (P6)."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    rows, cols, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


@dataclass
class SceneManifest:
    """Scene list with split tags; ``entries`` holds ``(path, split, scene_id)``."""

    entries: list[tuple[str, str, str]] = field(default_factory=list)
    seed: int = 0

    def split(self, tag: str) -> list[tuple[str, str, str]]:
        return [e for e in self.entries if e[1] == tag]

    def __len__(self):
        return len(self.entries)


def split_manifest(paths, sizes, seed: int, scene_ids=None) -> SceneManifest:
    """Shuffle ``paths`` deterministically by ``seed`` and tag them train/test/val.

    Entries beyond ``sum(sizes)`` are dropped.
    """
    paths = [str(p) for p in paths]
    if scene_ids is None:
        scene_ids = [Path(p).stem for p in paths]
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or any(s < 0 for s in sizes):
        raise ValueError(f"sizes must be three non-negative counts, got {sizes}")
    if sum(sizes) > len(paths):
        raise ValueError(f"split sizes {sizes} need {sum(sizes)} cubes, only {len(paths)} given")
    order = list(range(len(paths)))
    random.Random(seed).shuffle(order)
    entries = []
    pos = 0
    for tag, n in zip(SPLITS, sizes):
        for i in order[pos:pos + n]:
            entries.append((paths[i], tag, scene_ids[i]))
        pos += n
    return SceneManifest(entries, seed)


def write_manifest(manifest: SceneManifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p, tag, sid in manifest.entries:
            fh.write(f"{p}\t{tag}\t{sid}\n")


def read_manifest(path, seed: int = 0) -> SceneManifest:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[1] not in SPLITS:
                raise DataError(f"{path}:{lineno}: malformed manifest line {line!r}")
            p = parts[0]
            if not Path(p).is_absolute():
                p = str(Path(path).parent / p)
            entries.append((p, parts[1], parts[2]))
    return SceneManifest(entries, seed)
