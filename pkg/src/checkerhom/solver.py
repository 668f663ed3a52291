"""Mean-projected preconditioned conjugate gradients for the singular stiffness.

The stiffness annihilates constants, so all solves live on the subspace
orthogonal to the constant vector.  The Fourier pseudo-inverse (and its
low-rank surrogate) already kill the zero mode; the explicit re-projection
of the iterate and the preconditioned residual each iteration is only a
roundoff guard.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, SolverBreakdown
from .lowrank import apply_lkr_preconditioner, canonical_reciprocal, dc_correction
from .operators import StiffnessOperator
from .spectral import (
    apply_fourier_preconditioner,
    eigensum_tensor,
    fourier_eigenvalues,
    pseudoinverse_diag,
    regularized_inverse_diag,
)

PRECONDITIONERS = ("fourier", "lkr", "regularized")


@dataclass(frozen=True)
class SolveOptions:
    """Iteration controls.

    ``tol`` is the relative Euclidean residual of the unpreconditioned
    system; a flag switches to preconditioned-residual stopping.
    """

    tol: float = 1e-8
    max_iter: int = 500
    preconditioner: str = "fourier"
    eps_rank: float = 1e-8      # low-rank surrogate accuracy, "lkr" only
    delta: float = 0.0          # shift of the regularized mode, >= 0
    precond_residual_stopping: bool = False

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ConfigurationError(f"tolerance must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigurationError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ConfigurationError(
                f"preconditioner must be one of {PRECONDITIONERS}, "
                f"got {self.preconditioner!r}"
            )
        if self.delta < 0.0:
            raise ConfigurationError(f"delta must be >= 0, got {self.delta}")


@dataclass(frozen=True)
class PcgReport:
    """Iteration trace of one solve."""

    iterations: int
    residuals: tuple
    converged: bool
    final_residual: float
    preconditioner: str
    rhs_projected: bool = False


@dataclass(frozen=True)
class Preconditioner:
    name: str
    apply: object  # callable vector -> vector


@functools.lru_cache(maxsize=8)
def _cached_preconditioner(d: int, n: int, kind: str, eps_rank: float,
                           delta: float) -> Preconditioner:
    spectrum = fourier_eigenvalues(n)
    if kind == "fourier":
        diag = pseudoinverse_diag(eigensum_tensor(d, spectrum))
        return Preconditioner("fourier",
                              lambda x: apply_fourier_preconditioner(diag, x))
    if kind == "regularized":
        diag = regularized_inverse_diag(eigensum_tensor(d, spectrum), delta)
        return Preconditioner(f"regularized(delta={delta})",
                              lambda x: apply_fourier_preconditioner(diag, x))
    tensor = dc_correction(canonical_reciprocal(spectrum, d, eps_rank))
    return Preconditioner(f"lkr(eps={eps_rank},rank={tensor.rank})",
                          lambda x: apply_lkr_preconditioner(tensor, x))


def make_preconditioner(d: int, n: int, opts: SolveOptions) -> Preconditioner:
    """Build (or fetch from a small cache) the preconditioner for a grid size."""
    eps_rank = opts.eps_rank if opts.preconditioner == "lkr" else 0.0
    delta = opts.delta if opts.preconditioner == "regularized" else 0.0
    return _cached_preconditioner(d, n, opts.preconditioner, eps_rank, delta)


def project_mean_zero(x: np.ndarray) -> np.ndarray:
    """x minus its mean; idempotent, annihilates constants."""
    x = np.asarray(x, dtype=float)
    return x - x.mean()


def residual(A: StiffnessOperator, u: np.ndarray, f: np.ndarray) -> float:
    """Relative Euclidean residual; absolute when the right-hand side is zero."""
    norm_f = float(np.linalg.norm(f))
    norm_r = float(np.linalg.norm(f - A.apply(u)))
    if norm_f == 0.0:
        return norm_r
    return norm_r / norm_f


def pcg_solve(A: StiffnessOperator, f: np.ndarray, opts: SolveOptions | None = None,
              precond: Preconditioner | None = None):
    """Solve A u = f on the mean-zero subspace.

    Returns (u, report) with <u, 1> = 0.  A right-hand side with a
    non-negligible mean is projected and flagged in the report.
    Non-convergence is reported, not raised; a non-finite residual raises
    :class:`SolverBreakdown`.
    """
    opts = opts or SolveOptions()
    if precond is None:
        precond = make_preconditioner(A.d, A.n, opts)

    f = np.asarray(f, dtype=float)
    norm_f = float(np.linalg.norm(f))
    if norm_f == 0.0:
        report = PcgReport(iterations=0, residuals=(), converged=True,
                           final_residual=0.0, preconditioner=precond.name)
        return np.zeros_like(f), report

    rhs_projected = False
    if abs(f.sum()) > 1e-10 * norm_f:
        warnings.warn("right-hand side has a nonzero mean; projecting it out")
        f = project_mean_zero(f)
        norm_f = float(np.linalg.norm(f))
        rhs_projected = True
        if norm_f == 0.0:
            report = PcgReport(iterations=0, residuals=(), converged=True,
                               final_residual=0.0, preconditioner=precond.name,
                               rhs_projected=True)
            return np.zeros_like(f), report

    matrix = A.matrix()
    u = np.zeros_like(f)
    r = f.copy()
    z = project_mean_zero(precond.apply(r))
    p = z.copy()
    rz = float(r @ z)
    norm_pf = float(np.sqrt(abs(rz)))  # preconditioned-residual reference

    history = []
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        q = matrix @ p
        pq = float(p @ q)
        if not np.isfinite(pq) or pq <= 0.0:
            raise SolverBreakdown(f"curvature p'Ap = {pq} at iteration {iterations}")
        step = rz / pq
        u += step * p
        r -= step * q
        u = project_mean_zero(u)

        rel = float(np.linalg.norm(r)) / norm_f
        if not np.isfinite(rel):
            raise SolverBreakdown(f"non-finite residual at iteration {iterations}")
        history.append(rel)
        if not opts.precond_residual_stopping and rel <= opts.tol:
            converged = True
            break

        z = project_mean_zero(precond.apply(r))
        rz_next = float(r @ z)
        if opts.precond_residual_stopping and np.sqrt(abs(rz_next)) / norm_pf <= opts.tol:
            converged = True
            break
        p = z + (rz_next / rz) * p
        rz = rz_next

    return u, PcgReport(
        iterations=iterations,
        residuals=tuple(history),
        converged=converged,
        final_residual=history[-1],
        preconditioner=precond.name,
        rhs_projected=rhs_projected,
    )
