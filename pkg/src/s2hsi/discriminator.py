"""Element-wise real/fake discriminator with hand-written backpropagation.

Architecture: 3x3 conv (bands -> width) / leaky ReLU / 3x3 conv (width ->
width) / leaky ReLU / 1x1 conv (width -> bands) / sigmoid.  All convolutions
use circular padding, so the network is exactly equivariant to circular
shifts of its input.  Inputs are ``(bands, rows, cols)`` arrays.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .cube import DataError

__all__ = [
    "DiscriminatorParams",
    "ForwardTape",
    "LossTrace",
    "TrainOptions",
    "init_params",
    "disc_forward",
    "disc_vjp",
    "disc_loss",
    "disc_param_grad",
    "mean_probability",
    "train_discriminator",
    "write_params",
    "read_params",
    "write_loss_csv",
]

LEAK = 0.2
EPS = 1e-12
_OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


@dataclass
class DiscriminatorParams:
    """Weights in ``(out, in, kh, kw)`` layout plus biases."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    slope: float = LEAK

    NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")

    def __post_init__(self):
        for name in self.NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        h, c = self.w1.shape[:2]
        expected = {
            "w1": (h, c, 3, 3), "b1": (h,), "w2": (h, h, 3, 3), "b2": (h,), "w3": (c, h, 1, 1), "b3": (c,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def bands(self) -> int:
        return self.w1.shape[1]

    @property
    def width(self) -> int:
        return self.w1.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.NAMES]

    def copy(self) -> "DiscriminatorParams":
        return DiscriminatorParams(*[a.copy() for a in self.arrays()], slope=self.slope)

    @classmethod
    def zeros(cls, bands: int = 186, width: int = 32) -> "DiscriminatorParams":
        return cls(
            np.zeros((width, bands, 3, 3)), np.zeros(width),
            np.zeros((width, width, 3, 3)), np.zeros(width),
            np.zeros((bands, width, 1, 1)), np.zeros(bands),
        )


def init_params(bands: int = 186, width: int = 32, seed: int = 0) -> DiscriminatorParams:
    """He-normal weights for the leaky layers, small output layer, zero biases."""
    rng = np.random.default_rng(seed)
    gain = np.sqrt(2.0 / (1 + LEAK**2))
    return DiscriminatorParams(
        rng.standard_normal((width, bands, 3, 3)) * gain / np.sqrt(9 * bands), np.zeros(width),
        rng.standard_normal((width, width, 3, 3)) * gain / np.sqrt(9 * width), np.zeros(width),
        rng.standard_normal((bands, width, 1, 1)) / np.sqrt(width), np.zeros(bands),
    )


@dataclass
class ForwardTape:
    """Activations of one forward pass, all flattened to ``(channels, pixels)``."""

    shape: tuple[int, int]
    x: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray
    out: np.ndarray
    param_shapes: tuple = ()


def _shift(X, shape, dy, dx):
    """``Y[:, i, j] = X[:, i + dy, j + dx]`` with periodic wrap."""
    c = X.shape[0]
    img = X.reshape(c, *shape)
    return np.roll(img, (-dy, -dx), axis=(1, 2)).reshape(c, -1)


def _im2col(X, shape):
    """Stack the nine circular shifts of ``X`` into a ``(9 * channels, pixels)`` matrix."""
    c = X.shape[0]
    img = X.reshape(c, *shape)
    return np.concatenate(
        [np.roll(img, (-dy, -dx), axis=(1, 2)).reshape(c, -1) for dy, dx in _OFFSETS], axis=0
    )


def _weight_matrix(W):
    # column block o holds W[:, :, dy+1, dx+1] for the o-th offset
    return W.transpose(0, 2, 3, 1).reshape(W.shape[0], -1)


def _conv3(W, b, X, shape):
    return _weight_matrix(W) @ _im2col(X, shape) + b[:, None]


def _conv3_backward(W, X, G, shape):
    """Gradients of ``sum(G * conv3(W, b, X))`` w.r.t. X, W and b."""
    h, c = W.shape[:2]
    dW = (G @ _im2col(X, shape).T).reshape(h, 3, 3, c).transpose(0, 3, 1, 2)
    dcols = _weight_matrix(W).T @ G
    dX = np.zeros_like(X)
    for o, (dy, dx) in enumerate(_OFFSETS):
        dX += _shift(dcols[o * c:(o + 1) * c], shape, -dy, -dx)
    return dX, dW, G.sum(axis=1)


def _leaky(z, slope):
    return np.where(z > 0, z, slope * z)


def _leaky_grad(z, slope):
    return np.where(z > 0, 1.0, slope)


def _as_image(params, A, shape):
    A = np.asarray(getattr(A, "data", A), dtype=np.float64)
    if A.ndim == 3:
        shape = A.shape[1:]
        A = A.reshape(A.shape[0], -1)
    if shape is None:
        raise ValueError("geometry (rows, cols) required for a matrix input")
    if A.shape[0] != params.bands:
        raise ValueError(f"discriminator expects {params.bands} bands, got {A.shape[0]}")
    if A.shape[1] != shape[0] * shape[1]:
        raise ValueError(f"input with {A.shape[1]} pixels does not match geometry {shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("non-finite discriminator input")
    return A, tuple(shape)


def disc_forward(params: DiscriminatorParams, A, shape=None):
    """Probabilities in ``(0, 1)`` with the input's ``(bands, pixels)`` shape, plus the tape.

    ``A`` is either a ``(bands, rows, cols)`` cube or a ``(bands, pixels)``
    matrix with ``shape=(rows, cols)``.
    """
    X, shape = _as_image(params, A, shape)
    s = params.slope
    z1 = _conv3(params.w1, params.b1, X, shape)
    h1 = _leaky(z1, s)
    z2 = _conv3(params.w2, params.b2, h1, shape)
    h2 = _leaky(z2, s)
    z3 = params.w3[:, :, 0, 0] @ h2 + params.b3[:, None]
    out = expit(z3)
    tape = ForwardTape(shape, X, z1, h1, z2, h2, out, tuple(a.shape for a in params.arrays()))
    return out, tape


def _backward(params, tape, v):
    """Return (dX, [dw1, db1, dw2, db2, dw3, db3]) for cotangent ``v`` on the output."""
    if tape.param_shapes != tuple(a.shape for a in params.arrays()):
        raise ValueError("tape was recorded with differently shaped parameters")
    v = np.asarray(v, dtype=np.float64)
    if v.shape != tape.out.shape:
        raise ValueError(f"cotangent shape {v.shape} != output shape {tape.out.shape}")
    s = params.slope
    g3 = v * tape.out * (1.0 - tape.out)
    dw3 = (g3 @ tape.h2.T)[:, :, None, None]
    db3 = g3.sum(axis=1)
    g2 = (params.w3[:, :, 0, 0].T @ g3) * _leaky_grad(tape.z2, s)
    dh1, dw2, db2 = _conv3_backward(params.w2, tape.h1, g2, tape.shape)
    g1 = dh1 * _leaky_grad(tape.z1, s)
    dX, dw1, db1 = _conv3_backward(params.w1, tape.x, g1, tape.shape)
    return dX, [dw1, db1, dw2, db2, dw3, db3]


def disc_vjp(params: DiscriminatorParams, tape: ForwardTape, cotangent) -> np.ndarray:
    """``J^T v`` of the input-to-probability map, in ``(bands, pixels)`` layout."""
    return _backward(params, tape, cotangent)[0]


def disc_loss(p_r: float, p_f: float) -> float:
    p_r = min(max(p_r, EPS), 1 - EPS)
    p_f = min(max(p_f, EPS), 1 - EPS)
    return -(np.log(p_r) + np.log(1.0 - p_f))


def _batch(batch):
    batch = [np.asarray(x, dtype=np.float64) for x in batch]
    if not batch:
        raise ValueError("empty batch")
    return batch


def mean_probability(params, batch) -> float:
    batch = _batch(batch)
    total = sum(disc_forward(params, x)[0].sum() for x in batch)
    return float(total / sum(x.size for x in batch))


def disc_param_grad(params: DiscriminatorParams, real_batch, fake_batch):
    """Exact gradient of ``L_D`` with batch-mean probabilities.

    Returns
    -------
    grads : list of ndarray
        Same order as :meth:`DiscriminatorParams.arrays`.
    loss, p_r, p_f : float
    """
    real_batch = _batch(real_batch)
    fake_batch = _batch(fake_batch)
    fwd_r = [disc_forward(params, x) for x in real_batch]
    fwd_f = [disc_forward(params, x) for x in fake_batch]
    n_r = sum(x.size for x in real_batch)
    n_f = sum(x.size for x in fake_batch)
    p_r = sum(o.sum() for o, _ in fwd_r) / n_r
    p_f = sum(o.sum() for o, _ in fwd_f) / n_f
    loss = disc_loss(p_r, p_f)
    # derivative is zero where the clamp is active
    dr = -1.0 / p_r if EPS < p_r < 1 - EPS else 0.0
    df = 1.0 / (1.0 - p_f) if EPS < p_f < 1 - EPS else 0.0
    grads = [np.zeros_like(a) for a in params.arrays()]
    for fwd, scale in ((fwd_r, dr / n_r), (fwd_f, df / n_f)):
        for out, tape in fwd:
            _, g = _backward(params, tape, np.full_like(out, scale))
            for acc, gi in zip(grads, g):
                acc += gi
    return grads, float(loss), float(p_r), float(p_f)


@dataclass
class TrainOptions:
    steps: int = 200
    step_size: float = 1e-5
    patch_size: int = 16
    batch_size: int = 4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class LossTrace:
    step: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    p_r: list[float] = field(default_factory=list)
    p_f: list[float] = field(default_factory=list)

    def smoothed(self, alpha: float = 0.1) -> np.ndarray:
        """Exponential moving average of the loss, made non-increasing by a running minimum."""
        out = np.empty(len(self.loss))
        ema = None
        for i, v in enumerate(self.loss):
            ema = v if ema is None else (1 - alpha) * ema + alpha * v
            out[i] = ema
        return np.minimum.accumulate(out) if out.size else out


def _sample_patches(rng, reals, fakes, opts):
    real_b, fake_b = [], []
    for _ in range(opts.batch_size):
        i = int(rng.integers(len(reals)))
        r, f = reals[i], fakes[i]
        ps_r = min(opts.patch_size, r.shape[1])
        ps_c = min(opts.patch_size, r.shape[2])
        y = int(rng.integers(r.shape[1] - ps_r + 1))
        x = int(rng.integers(r.shape[2] - ps_c + 1))
        real_b.append(r[:, y:y + ps_r, x:x + ps_c])
        fake_b.append(f[:, y:y + ps_r, x:x + ps_c])
    return real_b, fake_b


def train_discriminator(params: DiscriminatorParams, reals, fakes, options: TrainOptions | None = None):
    """Adam on ``L_D`` with seeded random patches; real and fake cubes are paired by index.

    Returns the trained copy of ``params`` and a :class:`LossTrace`.
    """
    opts = options or TrainOptions()
    reals = [np.asarray(r, dtype=np.float64) for r in reals]
    fakes = [np.asarray(f, dtype=np.float64) for f in fakes]
    if not reals or not fakes:
        raise ValueError("training needs at least one real and one fake cube")
    if len(reals) != len(fakes):
        raise ValueError("real and fake cube lists must pair up")
    params = params.copy()
    rng = np.random.default_rng(opts.seed)
    m = [np.zeros_like(a) for a in params.arrays()]
    v = [np.zeros_like(a) for a in params.arrays()]
    trace = LossTrace()
    for t in range(1, opts.steps + 1):
        real_b, fake_b = _sample_patches(rng, reals, fakes, opts)
        grads, loss, p_r, p_f = disc_param_grad(params, real_b, fake_b)
        for name, g, mi, vi in zip(params.NAMES, grads, m, v):
            mi *= opts.beta1
            mi += (1 - opts.beta1) * g
            vi *= opts.beta2
            vi += (1 - opts.beta2) * g * g
            m_hat = mi / (1 - opts.beta1**t)
            v_hat = vi / (1 - opts.beta2**t)
            p = getattr(params, name)
            p -= opts.step_size * m_hat / (np.sqrt(v_hat) + opts.adam_eps)
        trace.step.append(t)
        trace.loss.append(loss)
        trace.p_r.append(p_r)
        trace.p_f.append(p_f)
    return params, trace


def write_params(params: DiscriminatorParams, path) -> None:
    """DSC1: magic, u32 layer count, ``(out, in, kh, kw)`` u32 per layer, then f64 weight/bias pairs."""
    layers = [(params.w1, params.b1), (params.w2, params.b2), (params.w3, params.b3)]
    with open(path, "wb") as fh:
        fh.write(b"DSC1")
        fh.write(struct.pack("<I", len(layers)))
        for w, _ in layers:
            fh.write(struct.pack("<4I", *w.shape))
        for w, b in layers:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def read_params(path) -> DiscriminatorParams:
    raw = Path(path).read_bytes()
    if raw[:4] != b"DSC1":
        raise DataError(f"{path}: bad magic {raw[:4]!r}")
    (n,) = struct.unpack_from("<I", raw, 4)
    if n != 3:
        raise DataError(f"{path}: expected 3 layers, found {n}")
    shapes = [struct.unpack_from("<4I", raw, 8 + 16 * i) for i in range(n)]
    offset = 8 + 16 * n
    arrays = []
    for shape in shapes:
        for shp in (shape, (shape[0],)):
            count = int(np.prod(shp))
            if offset + 8 * count > len(raw):
                raise DataError(f"{path}: truncated parameter payload")
            arrays.append(np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shp).astype(np.float64))
            offset += 8 * count
    if offset != len(raw):
        raise DataError(f"{path}: trailing bytes after parameters")
    try:
        return DiscriminatorParams(*arrays)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_loss_csv(trace: LossTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,L_D,p_r,p_f\n")
        for row in zip(trace.step, trace.loss, trace.p_r, trace.p_f):
            fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r}\n")
