"""Low-rank canonical approximation of the reciprocal eigensum tensor.

The reciprocal 1/g on [a, b] is expanded through the Laplace transform
1/x = integral_0^inf exp(-x t) dt, discretized by a trapezoid rule after
the substitution t = exp(s).  Each quadrature node contributes one
separable term exp(-t_k * (lam_i + lam_j + ...)) = prod_l exp(-t_k lam_il),
so R nodes give a rank-R canonical tensor; a single extra rank-1 term
zeroes the origin entry.  Applying the resulting preconditioner costs one
forward and one inverse d-dimensional FFT plus R rank-1 Hadamard scalings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import QuadratureFailure
from .spectral import EigenSpectrum, PseudoInverseDiag

MAX_RANK = 256
_VALIDATION_POINTS = 4096


@dataclass(frozen=True)
class ExpSumQuadrature:
    """Positive nodes/weights with 1/x ~ sum_k w_k exp(-t_k x) on [a, b].

    ``achieved`` is the measured sup of |1 - x * sum_k w_k exp(-t_k x)| over
    a dense geometric grid of [a, b]; it is at most ``eps`` on success, which
    implies the absolute bound eps * (1/a) everywhere on the interval.
    """

    nodes: np.ndarray
    weights: np.ndarray
    a: float
    b: float
    eps: float
    achieved: float

    @property
    def rank(self) -> int:
        return len(self.nodes)

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        with np.errstate(under="ignore"):
            out = np.exp(-np.outer(x, self.nodes)) @ self.weights
        return out


def _trapezoid_rule(rank: int, eps: float, rho: float):
    """Truncated trapezoid points for 1/y on [1, rho] after t = exp(s).

    The lower limit resolves the integrand peak of the largest argument y = rho
    (relative tails below eps/8), the upper limit kills the exp(-exp(s)) tail.
    """
    s_min = math.log(eps / (8.0 * rho))
    s_max = math.log(math.log(8.0 / eps) + 4.0)
    s = np.linspace(s_min, s_max, rank)
    step = s[1] - s[0]
    nodes = np.exp(s)
    return nodes, step * nodes


def _sup_rel_error(nodes, weights, rho: float) -> float:
    y = np.geomspace(1.0, rho, _VALIDATION_POINTS)
    with np.errstate(under="ignore"):
        approx = np.exp(-np.outer(y, nodes)) @ weights
    return float(np.max(np.abs(approx * y - 1.0)))


def exp_sum_quadrature(a: float, b: float, eps: float,
                       max_rank: int = MAX_RANK) -> ExpSumQuadrature:
    """Minimal-rank exponential sum for 1/x on [a, b] to relative accuracy eps.

    The rank is found by a doubling search refined by bisection, with the sup
    error measured on a dense geometric test grid.  Raises
    :class:`QuadratureFailure` when the cap is hit, reporting the best error.
    """
    if not (0.0 < a < b):
        raise ValueError(f"need 0 < a < b, got a={a}, b={b}")
    if eps <= 0.0:
        raise ValueError(f"tolerance must be positive, got {eps}")
    rho = b / a

    def error_at(rank):
        nodes, weights = _trapezoid_rule(rank, eps, rho)
        return _sup_rel_error(nodes, weights, rho)

    rank, previous = 8, 2
    best = math.inf
    while rank <= max_rank:
        err = error_at(rank)
        best = min(best, err)
        if err <= eps:
            break
        previous, rank = rank, rank * 2
    else:
        raise QuadratureFailure(
            f"no rank <= {max_rank} reaches eps={eps} on [{a}, {b}]; "
            f"best sup relative error {best:.3e}",
            best_error=best, rank=max_rank,
        )

    lo, hi = previous, rank
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if error_at(mid) <= eps:
            hi = mid
        else:
            lo = mid

    nodes, weights = _trapezoid_rule(hi, eps, rho)
    achieved = _sup_rel_error(nodes, weights, rho)
    # rescale [1, rho] -> [a, b]
    return ExpSumQuadrature(nodes=nodes / a, weights=weights / a,
                            a=float(a), b=float(b), eps=float(eps),
                            achieved=achieved)


@dataclass(frozen=True)
class CanonicalTensor:
    """Rank-R canonical tensor: entry(i) = sum_k prod_l factors[l][k, i_l]."""

    d: int
    n: int
    factors: tuple  # d arrays of shape (rank, n)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[0]

    def value(self, idx) -> float:
        prod = self.factors[0][:, idx[0]].copy()
        for axis in range(1, self.d):
            prod *= self.factors[axis][:, idx[axis]]
        return float(prod.sum())

    def diagonal(self) -> np.ndarray:
        """Full n^d entry tensor, contracted over the rank index."""
        subscripts = {2: "ka,kb->ab", 3: "ka,kb,kc->abc"}[self.d]
        return np.einsum(subscripts, *self.factors, optimize=True)


def canonical_reciprocal(spectrum: EigenSpectrum, d: int, eps: float) -> CanonicalTensor:
    """Canonical approximation of 1/(lam_i1 + ... + lam_id) away from the origin.

    The quadrature interval is [a, b] with a the smallest positive eigensum
    (one nonzero index) and b = d * max(lam); relative accuracy eps there
    implies an entrywise error below eps * (1/a) at every nonzero multi-index.
    """
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    lam = spectrum.values
    positive = lam[lam > 0.0]
    a = float(positive.min())
    b = float(d * lam.max())
    quad = exp_sum_quadrature(a, b, eps)
    with np.errstate(under="ignore"):
        base = np.exp(-np.outer(quad.nodes, lam))
    scale = quad.weights ** (1.0 / d)
    factor = scale[:, None] * base
    return CanonicalTensor(d=d, n=spectrum.n, factors=(factor,) * d)


def dc_correction(t: CanonicalTensor) -> CanonicalTensor:
    """Append one rank-1 term supported at the origin so the entry there is 0.

    All other entries are untouched because the new factors vanish away from
    index 0; the rank grows by exactly one.
    """
    origin = t.value((0,) * t.d)
    new_factors = []
    for axis in range(t.d):
        e0 = np.zeros((1, t.n))
        e0[0, 0] = -origin if axis == 0 else 1.0
        new_factors.append(np.vstack([t.factors[axis], e0]))
    return CanonicalTensor(d=t.d, n=t.n, factors=tuple(new_factors))


def apply_lkr_preconditioner(t: CanonicalTensor, x: np.ndarray) -> np.ndarray:
    """y = F^* ( sum_k u1^k o ... o ud^k ) . (F x) on a full grid vector."""
    x = np.asarray(x, dtype=float)
    size = t.n**t.d
    if x.shape != (size,):
        raise ValueError(f"expected vector of length {size}, got shape {x.shape}")
    shape = (t.n,) * t.d
    spectrum = np.fft.fftn(x.reshape(shape))
    spectrum *= t.diagonal()
    return np.fft.ifftn(spectrum).real.ravel()


def max_rel_error(t: CanonicalTensor, g_plus: PseudoInverseDiag, sample: int,
                  seed: int = 0, floor_scale: float = 1e-12) -> float:
    """Max sampled relative entry error of the canonical tensor against g_plus.

    Enumerates every multi-index when the grid is no larger than ``sample``;
    entries with reciprocal below 1e-300 are skipped and the denominator is
    floored at ``floor_scale`` times the largest reciprocal.
    """
    if sample <= 0:
        raise ValueError(f"sample count must be positive, got {sample}")
    size = t.n**t.d
    exact = g_plus.values.ravel()
    approx_diag = t.diagonal().ravel()
    if size <= sample:
        idx = np.arange(size)
    else:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, size, size=sample)
    keep = exact[idx] > 1e-300
    idx = idx[keep]
    floor = floor_scale * float(exact.max())
    denom = np.maximum(exact[idx], floor)
    return float(np.max(np.abs(approx_diag[idx] - exact[idx]) / denom))
