"""Quasi-Split-Bregman reconstruction of a hyperspectral image from ``S_u``.

The objective is the augmented Lagrangian

    L(A, T, U) = 1/2 ||S_u - D A B||^2 + lambda1/2 ||1 - T||^2
                 + lambda2/2 ||A A^T - P||^2 + mu/2 ||disc(A) - T - U||^2

with ``A`` in the ``bands x pixels`` layout.  Each outer iteration does a
closed-form T-update, a few gradient steps on A, and a dual update on U.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from .cube import as_matrix, from_matrix
from .discriminator import DiscriminatorParams, disc_forward, disc_vjp
from .operators import BlurKernel, SrfMatrix, apply_blur, apply_blur_adjoint, apply_srf, apply_srf_adjoint, build_gaussian_kernel
from .prior import SpectralPriorMatrix, spatial_prior_image

__all__ = [
    "SolverConfig",
    "SolverState",
    "Problem",
    "TraceRow",
    "init_a",
    "init_u",
    "lagrangian",
    "update_t",
    "grad_g1",
    "grad_g2",
    "grad_g3",
    "update_a",
    "update_u",
    "solve",
    "solve_matrix",
    "write_trace_csv",
]

MAX_HALVINGS = 30


@dataclass
class SolverConfig:
    lambda1: float = 5e-4
    lambda2: float = 5e-1
    mu: float = 5e-2
    gamma: float = 1e-3
    outer_iters: int = 2
    inner_grad_steps: int = 10
    tol: float = 1e-5
    clamp_output: bool = True
    use_backtracking: bool = True
    blur_size: int = 7
    blur_sigma: float = 0.7

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.mu) < 0:
            raise ValueError("lambda1, lambda2 and mu must be nonnegative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.outer_iters < 1 or self.inner_grad_steps < 1:
            raise ValueError("iteration counts must be >= 1")

    @property
    def dmr_active(self) -> bool:
        return self.lambda1 > 0 or self.mu > 0

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Problem:
    """Fixed data of one reconstruction: ``S_u`` (sensor bands x pixels) and the operators."""

    S_u: np.ndarray
    D: SrfMatrix
    shape: tuple[int, int]
    kernel: BlurKernel = field(default_factory=lambda: build_gaussian_kernel(7, 0.7))
    P: np.ndarray | None = None
    disc: DiscriminatorParams | None = None

    def __post_init__(self):
        self.S_u = np.asarray(self.S_u, dtype=np.float64)
        if isinstance(self.P, SpectralPriorMatrix):
            self.P = self.P.values
        if self.S_u.shape != (self.D.shape[0], self.shape[0] * self.shape[1]):
            raise ValueError(f"S_u shape {self.S_u.shape} inconsistent with SRF {self.D.shape} and grid {self.shape}")
        bands = self.D.shape[1]
        if self.P is not None and self.P.shape != (bands, bands):
            raise ValueError(f"prior is {self.P.shape}, expected {(bands, bands)}")
        if self.disc is not None and self.disc.bands != bands:
            raise ValueError(f"discriminator has {self.disc.bands} bands, SRF has {bands}")

    @property
    def bands(self) -> int:
        return self.D.shape[1]


@dataclass
class TraceRow:
    outer_iter: int
    inner_step: int
    total: float
    df: float
    dmr: float
    spm: float
    penalty: float
    step_size: float
    stalled: bool


@dataclass
class SolverState:
    A: np.ndarray
    T: np.ndarray
    U: np.ndarray
    k: int = 0
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def stalled(self) -> bool:
        return any(r.stalled for r in self.trace)


def init_a(S_u, D, clamp: bool = True) -> np.ndarray:
    """Minimum-norm spectral lift ``D^T (D D^T)^{-1} S_u``, optionally clamped at 0.

    Falls back to a ``1e-8`` ridge (with a warning) when ``D D^T`` is singular.
    """
    Dv = D.values if isinstance(D, SrfMatrix) else np.asarray(D, dtype=np.float64)
    S_u = np.asarray(S_u, dtype=np.float64)
    if Dv.shape[0] != S_u.shape[0]:
        raise ValueError(f"SRF has {Dv.shape[0]} rows, S_u has {S_u.shape[0]}")
    G = Dv @ Dv.T
    if np.linalg.matrix_rank(G) < G.shape[0]:
        warnings.warn("D D^T is singular; using a ridge-regularized lift", RuntimeWarning, stacklevel=2)
        G = G + 1e-8 * np.eye(G.shape[0])
    A0 = Dv.T @ np.linalg.solve(G, S_u)
    return np.maximum(A0, 0.0) if clamp else A0


def init_u(shape) -> np.ndarray:
    return np.zeros(shape)


def _disc_out(problem, A):
    return disc_forward(problem.disc, A, problem.shape)


def lagrangian(A, T, U, problem: Problem, config: SolverConfig, disc_out=None):
    """Return ``(total, terms)`` with terms ``df``, ``dmr``, ``spm``, ``penalty``."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (problem.bands, problem.S_u.shape[1]):
        raise ValueError(f"A has shape {A.shape}, expected {(problem.bands, problem.S_u.shape[1])}")
    resid = problem.S_u - apply_blur(apply_srf(problem.D, A), problem.kernel, problem.shape)
    terms = {"df": 0.5 * float(np.sum(resid**2)), "dmr": 0.0, "spm": 0.0, "penalty": 0.0}
    if config.lambda1 > 0:
        terms["dmr"] = 0.5 * config.lambda1 * float(np.sum((1.0 - T) ** 2))
    if config.lambda2 > 0 and problem.P is not None:
        terms["spm"] = 0.5 * config.lambda2 * float(np.sum((A @ A.T - problem.P) ** 2))
    if config.mu > 0:
        if problem.disc is None:
            raise ValueError("mu > 0 requires a discriminator")
        if disc_out is None:
            disc_out = _disc_out(problem, A)[0]
        terms["penalty"] = 0.5 * config.mu * float(np.sum((disc_out - T - U) ** 2))
    return sum(terms.values()), terms


def update_t(disc_out, U, lambda1: float, mu: float) -> np.ndarray:
    """Closed-form minimizer over T: ``(lambda1 * 1 + mu * (disc_out - U)) / (lambda1 + mu)``."""
    if lambda1 + mu <= 0:
        raise ValueError("lambda1 + mu must be positive for the T-update")
    R = np.asarray(disc_out, dtype=np.float64) - U
    return (lambda1 + mu * R) / (lambda1 + mu)


def grad_g1(A, S_u, D, kernel: BlurKernel, shape) -> np.ndarray:
    """``D^T (D A B - S_u) B^T``."""
    resid = apply_blur(apply_srf(D, A), kernel, shape) - S_u
    return apply_srf_adjoint(D, apply_blur_adjoint(resid, kernel, shape))


def grad_g2(A, P, lambda2: float) -> np.ndarray:
    """``2 lambda2 (A A^T - P) A``."""
    A = np.asarray(A, dtype=np.float64)
    if lambda2 == 0 or P is None:
        return np.zeros_like(A)
    P = np.asarray(P, dtype=np.float64)
    if np.max(np.abs(P - P.T), initial=0.0) > 1e-10:
        raise ValueError("spectral prior must be symmetric")
    return 2.0 * lambda2 * ((A @ A.T - P) @ A)


def grad_g3(A, T, U, mu: float, disc: DiscriminatorParams, shape, tape=None) -> np.ndarray:
    """``mu J^T (disc(A) - T - U)`` with ``J`` the Jacobian of the discriminator at A."""
    A = np.asarray(A, dtype=np.float64)
    if mu == 0:
        return np.zeros_like(A)
    if tape is None:
        _, tape = disc_forward(disc, A, shape)
    return mu * disc_vjp(disc, tape, tape.out - T - U)


def _gradient(A, T, U, problem, config):
    g = grad_g1(A, problem.S_u, problem.D, problem.kernel, problem.shape)
    g += grad_g2(A, problem.P, config.lambda2)
    if config.mu > 0:
        g += grad_g3(A, T, U, config.mu, problem.disc, problem.shape)
    return g


def update_a(state: SolverState, problem: Problem, config: SolverConfig, outer_iter: int = 0, callback=None):
    """Run ``inner_grad_steps`` gradient steps on A with T and U held fixed.

    Appends one trace row per step (plus the starting value as step 0) and
    returns the new A.  With backtracking, each step halves gamma until the
    Lagrangian does not increase; after ``MAX_HALVINGS`` failures A is left
    unchanged, the row is flagged as stalled and the inner loop ends.
    """
    A, T, U = state.A, state.T, state.U
    current, terms = lagrangian(A, T, U, problem, config)
    state.trace.append(TraceRow(outer_iter, 0, current, **terms, step_size=0.0, stalled=False))
    for step in range(1, config.inner_grad_steps + 1):
        g = _gradient(A, T, U, problem, config)
        gamma = config.gamma
        if not config.use_backtracking:
            A = A - gamma * g
            current, terms = lagrangian(A, T, U, problem, config)
            state.trace.append(TraceRow(outer_iter, step, current, **terms, step_size=gamma, stalled=False))
        else:
            for _ in range(MAX_HALVINGS + 1):
                cand = A - gamma * g
                value, cand_terms = lagrangian(cand, T, U, problem, config)
                if value <= current:
                    break
                gamma *= 0.5
            else:
                state.trace.append(TraceRow(outer_iter, step, current, **terms, step_size=0.0, stalled=True))
                break
            A, current, terms = cand, value, cand_terms
            state.trace.append(TraceRow(outer_iter, step, current, **terms, step_size=gamma, stalled=False))
        if callback is not None:
            callback(A)
    state.A = A
    return A


def update_u(U, disc_out_new, T_new) -> np.ndarray:
    """``U - (disc(A_new) - T_new)``, the sign convention of the reference algorithm."""
    U = np.asarray(U, dtype=np.float64)
    disc_out_new = np.asarray(disc_out_new, dtype=np.float64)
    if U.shape != disc_out_new.shape or U.shape != np.shape(T_new):
        raise ValueError("U, disc output and T must share one shape")
    return U - (disc_out_new - T_new)


def solve_matrix(problem: Problem, config: SolverConfig | None = None, A0=None, callback=None) -> SolverState:
    """Run the outer loop on a prepared :class:`Problem`; returns the final state (unclamped)."""
    config = config or SolverConfig()
    if config.dmr_active and problem.disc is None:
        raise ValueError("the DMR term is active but no discriminator was given")
    A = init_a(problem.S_u, problem.D) if A0 is None else np.array(A0, dtype=np.float64)
    shape = A.shape
    state = SolverState(A, np.ones(shape), init_u(shape))
    for k in range(config.outer_iters):
        if config.dmr_active:
            state.T = update_t(_disc_out(problem, state.A)[0], state.U, config.lambda1, config.mu)
        A_prev = state.A
        update_a(state, problem, config, outer_iter=k, callback=callback)
        if config.dmr_active:
            state.U = update_u(state.U, _disc_out(problem, state.A)[0], state.T)
        state.k = k + 1
        ref = np.linalg.norm(A_prev)
        change = np.linalg.norm(state.A - A_prev) / ref if ref > 0 else np.inf
        if change < config.tol or (state.trace and state.trace[-1].stalled):
            break
    return state


def solve(S, D: SrfMatrix, P=None, disc=None, config: SolverConfig | None = None, wavelengths=None, callback=None):
    """Reconstruct a hyperspectral cube from a 10 m product ``S``.

    ``S_u`` is the bicubic 2x upsample of ``S``; the result lives on that 5 m
    grid.  ``P`` is rescaled to the output pixel count when its stored scale
    differs.

    Returns
    -------
    cube : HsiCube
    state : SolverState
        Final iterates and the per-step trace.
    """
    config = config or SolverConfig()
    su_cube = spatial_prior_image(S)
    L = su_cube.pixels
    if isinstance(P, SpectralPriorMatrix):
        P = P.rescaled(L) if P.scale_pixels != L else P
    if config.lambda2 == 0:
        P = None
    problem = Problem(
        as_matrix(su_cube), D, (su_cube.rows, su_cube.cols),
        build_gaussian_kernel(config.blur_size, config.blur_sigma),
        P, disc if config.dmr_active else None,
    )
    state = solve_matrix(problem, config, callback=callback)
    A = np.maximum(state.A, 0.0) if config.clamp_output else state.A
    if wavelengths is None:
        wavelengths = D.wavelengths
    return from_matrix(A, su_cube.rows, su_cube.cols, wavelengths), state


def write_trace_csv(trace, path) -> None:
    cols = ["outer_iter", "inner_step", "total", "df", "dmr", "spm", "penalty", "step_size", "stalled"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for r in trace:
            fh.write(
                f"{r.outer_iter},{r.inner_step},{r.total!r},{r.df!r},{r.dmr!r},{r.spm!r},"
                f"{r.penalty!r},{r.step_size!r},{int(r.stalled)}\n"
            )
