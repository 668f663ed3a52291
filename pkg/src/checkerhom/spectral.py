"""Fourier diagonalization of the periodic Laplacian and the exact preconditioner.

The 1D periodic Laplacian is circulant with first column (2, -1, 0, ..., -1),
so the d-dimensional Kronecker sum diagonalizes in the tensor Fourier basis
with eigenvalue tensor g(i1, ..., id) = lam_{i1} + ... + lam_{id},
lam_j = 2 - 2*cos(2*pi*j/n).  The pseudo-inverse zeroes the single vanishing
entry at the origin, which annihilates the constant mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EigenSpectrum:
    """Eigenvalues of the n x n circulant second-difference matrix."""

    n: int
    values: np.ndarray  # lam_j, real, lam_0 = 0, max 4 iff n even


@dataclass(frozen=True)
class EigensumTensor:
    """d-way tensor of eigenvalue sums, stored in exact rank-d form."""

    d: int
    n: int
    spectrum: EigenSpectrum

    def value(self, idx) -> float:
        return float(sum(self.spectrum.values[i] for i in idx))

    def array(self) -> np.ndarray:
        lam = self.spectrum.values
        out = lam
        for _ in range(self.d - 1):
            out = out[..., None] + lam
        return out


@dataclass(frozen=True)
class PseudoInverseDiag:
    """Entrywise reciprocal of the eigensum tensor with the origin zeroed."""

    d: int
    n: int
    values: np.ndarray  # shape (n,)*d

    def value(self, idx) -> float:
        return float(self.values[tuple(idx)])


def fourier_eigenvalues(n: int) -> EigenSpectrum:
    """FFT of the circulant's first column, verified real nonnegative."""
    if n < 3:
        raise ValueError(f"need n >= 3, got {n}")
    p = np.zeros(n)
    p[0] = 2.0
    p[1] = -1.0
    p[-1] = -1.0
    lam = np.fft.fft(p)
    assert np.max(np.abs(lam.imag)) <= 1e-12
    values = lam.real.copy()
    values[values < 0.0] = 0.0  # clip roundoff residue below zero
    return EigenSpectrum(n=n, values=values)


def eigensum_tensor(d: int, spectrum: EigenSpectrum) -> EigensumTensor:
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    return EigensumTensor(d=d, n=spectrum.n, spectrum=spectrum)


def pseudoinverse_diag(g: EigensumTensor) -> PseudoInverseDiag:
    """Reciprocal with the all-zero multi-index set to 0.

    Only the origin sums to zero (every other multi-index contains at least
    one strictly positive eigenvalue), so the reciprocal is finite elsewhere.
    """
    arr = g.array()
    out = np.zeros_like(arr)
    mask = arr > 0.0
    out[mask] = 1.0 / arr[mask]
    return PseudoInverseDiag(d=g.d, n=g.n, values=out)


def regularized_inverse_diag(g: EigensumTensor, delta: float) -> PseudoInverseDiag:
    """Entrywise 1/(g + delta); with delta = 0 falls back to the pseudo-inverse."""
    if delta <= 0.0:
        return pseudoinverse_diag(g)
    arr = g.array()
    return PseudoInverseDiag(d=g.d, n=g.n, values=1.0 / (arr + delta))


def apply_fourier_preconditioner(g_plus: PseudoInverseDiag, x: np.ndarray) -> np.ndarray:
    """y = F^* diag(g_plus) F x via one forward/inverse d-dimensional FFT.

    The zero-frequency component of y vanishes by construction, and the
    output is real to roundoff for real input since the diagonal is even
    under index negation.
    """
    x = np.asarray(x, dtype=float)
    size = g_plus.n**g_plus.d
    if x.shape != (size,):
        raise ValueError(f"expected vector of length {size}, got shape {x.shape}")
    shape = (g_plus.n,) * g_plus.d
    spectrum = np.fft.fftn(x.reshape(shape))
    spectrum *= g_plus.values
    return np.fft.ifftn(spectrum).real.ravel()
