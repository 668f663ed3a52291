"""Per-realization homogenized matrices and Monte-Carlo ensemble statistics.

For each realization, d corrector systems A u_i = f_i are solved with the
load f_i given by the directional derivative functional of the nodal
variable coefficient.  The homogenized matrix entries follow from

    abar_ii = lambda + integral(beta*ahat) - <f_i, u_i>
    abar_ij = -<f_j, u_i>                       (i != j)

with all integrals taken as h^d nodal sums on the periodic grid.  The
1D difference factors of the stiffness are kept h-free, so the physical
scaling h^(d-2) is reintroduced here: the load below is the physical
duality-pairing vector, and the corrector solve uses h^(2-d) times it.

Ensembles draw per-realization sub-seeds from a master seed, so results
are reproducible and independent of execution order; the statistics
reduction always runs in realization-index order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData, SolverDidNotConverge
from .lattice import LatticeConfig, Realization, coefficient_grid, derive_seed, sample_realization
from .operators import assemble_stiffness
from .solver import SolveOptions, make_preconditioner, pcg_solve


@dataclass(frozen=True)
class HomogenizedMatrix:
    """Averaged coefficient matrix of one realization plus run metadata."""

    matrix: np.ndarray  # (d, d)
    seed: int
    L: int
    lam: float
    iterations: tuple  # PCG iterations per direction
    num_covered: int

    @property
    def d(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class EnsembleStats:
    """Empirical average and per-entry standard deviation over M realizations."""

    d: int
    L: int
    M: int
    lam: float
    average: np.ndarray    # (d, d)
    std: np.ndarray        # (d, d), 1/(M-1) normalization
    records: tuple         # HomogenizedMatrix per realization, index order
    failed_seeds: tuple = ()


@dataclass(frozen=True)
class DeviationFit:
    """Log-log fit of deviation versus lattice size for one matrix entry."""

    Ls: tuple
    sigmas: tuple
    slope: float
    intercept: float
    slope_stderr: float
    expected_slope: float


def corrector_rhs(r: Realization, i: int) -> np.ndarray:
    """Load vector of the i-th corrector problem (directions are 1-based).

    h^(d-1) times the central periodic half-difference of the nodal variable
    coefficient along axis i; the periodic telescoping makes the sum vanish
    to roundoff.
    """
    d = r.config.d
    if not (1 <= i <= d):
        raise ValueError(f"direction must be in 1..{d}, got {i}")
    c = coefficient_grid(r).values
    axis = i - 1
    h = 1.0 / r.config.n
    diff = 0.5 * (np.roll(c, -1, axis=axis) - np.roll(c, 1, axis=axis))
    return (h ** (d - 1)) * diff.ravel()


def homogenized_matrix(r: Realization, opts: SolveOptions | None = None,
                       precond=None) -> HomogenizedMatrix:
    """Solve the d corrector problems and evaluate the averaged matrix."""
    opts = opts or SolveOptions()
    config = r.config
    d, n = config.d, config.n
    h = 1.0 / n

    A = assemble_stiffness(r)
    if precond is None:
        precond = make_preconditioner(d, n, opts)
    c = coefficient_grid(r).values
    integral = (h**d) * float(c.sum())
    loads = [corrector_rhs(r, i) for i in range(1, d + 1)]

    matrix = np.zeros((d, d))
    iterations = []
    for i in range(d):
        u, report = pcg_solve(A, (h ** (2 - d)) * loads[i], opts, precond=precond)
        if not report.converged:
            raise SolverDidNotConverge(
                f"corrector {i + 1} did not converge in {opts.max_iter} iterations",
                report=report,
                metadata={"seed": r.seed, "L": config.L, "lambda": config.lam,
                          "direction": i + 1},
            )
        iterations.append(report.iterations)
        for j in range(d):
            matrix[i, j] = -float(loads[j] @ u)
        matrix[i, i] += config.lam + integral
    return HomogenizedMatrix(matrix=matrix, seed=r.seed, L=config.L,
                             lam=config.lam, iterations=tuple(iterations),
                             num_covered=r.num_covered)


def _run_single(config: LatticeConfig, master_seed: int, index: int,
                opts: SolveOptions) -> HomogenizedMatrix:
    seed = derive_seed(master_seed, index)
    return homogenized_matrix(sample_realization(config, seed), opts)


def ensemble_run(config: LatticeConfig, M: int, master_seed: int,
                 opts: SolveOptions | None = None, skip_failed: bool = False,
                 workers: int = 1) -> EnsembleStats:
    """M independent realizations with sub-seeds derived from the master seed.

    A failed realization aborts the run unless ``skip_failed`` is set, in
    which case its seed is recorded and the statistics use the survivors.
    """
    if M < 2:
        raise ValueError(f"need at least 2 realizations, got {M}")
    opts = opts or SolveOptions()
    # Warm the preconditioner cache once instead of per realization.
    precond = make_preconditioner(config.d, config.n, opts)

    records: list = [None] * M
    failed = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                m: pool.submit(_run_single, config, master_seed, m, opts)
                for m in range(M)
            }
            for m in range(M):
                try:
                    records[m] = futures[m].result()
                except SolverDidNotConverge as exc:
                    if not skip_failed:
                        raise
                    failed[m] = exc.metadata.get("seed")
    else:
        for m in range(M):
            seed = derive_seed(master_seed, m)
            try:
                records[m] = homogenized_matrix(
                    sample_realization(config, seed), opts, precond=precond)
            except SolverDidNotConverge:
                if not skip_failed:
                    raise
                failed[m] = seed

    kept = [rec for rec in records if rec is not None]
    if len(kept) < 2:
        raise SolverDidNotConverge(
            f"only {len(kept)} of {M} realizations usable", metadata={})
    stack = np.stack([rec.matrix for rec in kept])
    average = stack.mean(axis=0)
    std = np.sqrt(((stack - average) ** 2).sum(axis=0) / (len(kept) - 1))
    return EnsembleStats(d=config.d, L=config.L, M=len(kept), lam=config.lam,
                         average=average, std=std, records=tuple(kept),
                         failed_seeds=tuple(failed[m] for m in sorted(failed)))


def deviation_slope(stats: list, entry: tuple = (0, 0)) -> DeviationFit:
    """Least-squares slope of log sigma versus log L for one matrix entry."""
    pairs = sorted({(s.L, float(s.std[entry])) for s in stats})
    if len({L for L, _ in pairs}) < 3:
        raise InsufficientData(
            f"need at least 3 distinct lattice sizes, got {len(pairs)}")
    logL = np.log([L for L, _ in pairs])
    logS = np.log([sig for _, sig in pairs])
    slope, intercept = np.polyfit(logL, logS, 1)
    fitted = slope * logL + intercept
    dof = max(len(pairs) - 2, 1)
    var = float(((logS - fitted) ** 2).sum()) / dof
    stderr = float(np.sqrt(var / ((logL - logL.mean()) ** 2).sum()))
    d = stats[0].d
    return DeviationFit(
        Ls=tuple(int(L) for L, _ in pairs),
        sigmas=tuple(sig for _, sig in pairs),
        slope=float(slope),
        intercept=float(intercept),
        slope_stderr=stderr,
        expected_slope=-d / 2.0,
    )
