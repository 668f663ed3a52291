"""Discrete operators as sums of Kronecker products of sparse 1D factors.

The full stiffness matrix of the periodic problem splits additively into
lambda * A_lap + A_stoch where A_lap is the d-term Kronecker sum of 1D
periodic Laplacians and A_stoch collects, per covered cell, d Kronecker
products of a block-embedded local Neumann Laplacian with block-embedded
lumped identities diag{1/2, 1, ..., 1, 1/2}.  Under the circulant node
indexing (n = n0*L nodes, windows wrapped modulo n) no separate
periodization term is needed.

Sign convention: all Laplacian-type factors are positive semidefinite, so
the assembled stiffness is PSD with kernel spanned by the constant vector.

1D factors are plain ``scipy.sparse`` matrices; a Kronecker term is a tuple
of d factors, with the product read left to right in the big-endian index
convention (axis 0 is the slowest index, matching C-order reshapes).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DenseSizeError
from .lattice import Realization, subcell_node_window

DENSE_CAP = 20_000


def laplacian_1d_periodic(n: int) -> sp.csr_matrix:
    """Circulant second-difference matrix with first row (2, -1, 0, ..., -1)."""
    if n < 3:
        raise ValueError(f"periodic Laplacian needs n >= 3, got {n}")
    i = np.arange(n)
    rows = np.concatenate([i, i, i])
    cols = np.concatenate([i, (i + 1) % n, (i - 1) % n])
    vals = np.concatenate([np.full(n, 2.0), np.full(n, -1.0), np.full(n, -1.0)])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def laplacian_1d_neumann(n: int) -> sp.csr_matrix:
    """Tridiagonal (-1, 2, -1) with corner diagonal entries 1 (zero row sums)."""
    if n < 2:
        raise ValueError(f"Neumann Laplacian needs n >= 2, got {n}")
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    off = np.full(n - 1, -1.0)
    return sp.diags([off, main, off], offsets=(-1, 0, 1)).tocsr()


def lumped_identity(n: int) -> sp.csr_matrix:
    """diag{1/2, 1, ..., 1, 1/2}, the lumped 1D mass weights of a window."""
    if n < 2:
        raise ValueError(f"lumped identity needs n >= 2, got {n}")
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return sp.diags(w).tocsr()


def embed_block(block: sp.spmatrix, window: np.ndarray, n: int) -> sp.csr_matrix:
    """Place a small block at (possibly wrapped) window positions of an n x n matrix.

    Coinciding positions accumulate, which is exactly what the periodic wrap
    of touching windows requires.
    """
    coo = sp.coo_matrix(block)
    rows = window[coo.row]
    cols = window[coo.col]
    out = sp.coo_matrix((coo.data, (rows, cols)), shape=(n, n)).tocsr()
    out.sum_duplicates()
    return out


@dataclass(frozen=True)
class KroneckerOperator:
    """Sum of d-factor Kronecker products of n x n sparse matrices.

    ``raw_rank`` records the term count before strip agglomeration when the
    operator was built agglomerated; None means the stored terms are raw.
    """

    d: int
    n: int
    terms: tuple
    raw_rank: int | None = None

    @property
    def shape(self) -> tuple:
        size = self.n**self.d
        return (size, size)


@dataclass
class StiffnessOperator:
    """Action x -> lam * A_lap x + A_stoch x (beta folded into A_stoch).

    Symmetric positive semidefinite with kernel = constants.  ``matrix()``
    materializes the operator once as CSR assembled from the Kronecker
    terms, which is the representation used for the iteration hot path.
    """

    laplacian_part: KroneckerOperator
    stochastic_part: KroneckerOperator
    lam: float
    _csr: sp.csr_matrix | None = None

    @property
    def d(self) -> int:
        return self.laplacian_part.d

    @property
    def n(self) -> int:
        return self.laplacian_part.n

    @property
    def shape(self) -> tuple:
        return self.laplacian_part.shape

    def matrix(self) -> sp.csr_matrix:
        if self._csr is None:
            csr = self.lam * _laplacian_csr(self.d, self.n)
            if self.stochastic_part.terms:
                csr = (csr + to_sparse(self.stochastic_part)).tocsr()
            self._csr = csr
        return self._csr

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix() @ x


def assemble_periodic_laplacian(d: int, n: int) -> KroneckerOperator:
    """d-term Kronecker sum with the 1D periodic Laplacian cycling over slots."""
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    lap = laplacian_1d_periodic(n)
    eye = sp.identity(n, format="csr")
    terms = tuple(
        tuple(lap if slot == axis else eye for slot in range(d)) for axis in range(d)
    )
    return KroneckerOperator(d=d, n=n, terms=terms)


def _raw_stochastic_terms(r: Realization) -> list:
    config = r.config
    d, n = config.d, config.n
    nbar = config.k + 1
    q_hat = laplacian_1d_neumann(nbar)
    i_hat = lumped_identity(nbar)
    terms = []
    for cell in r.sorted_cells():
        beta = r.cell_beta[cell]
        windows = [subcell_node_window(config, c) for c in cell]
        embedded_q = [embed_block(beta * q_hat, w, n) for w in windows]
        embedded_i = [embed_block(i_hat, w, n) for w in windows]
        for axis in range(d):
            terms.append(tuple(
                embedded_q[slot] if slot == axis else embedded_i[slot]
                for slot in range(d)
            ))
    return terms


def _fingerprint(m: sp.spmatrix) -> bytes:
    cached = getattr(m, "_chom_fp", None)
    if cached is not None:
        return cached
    csr = m.tocsr()
    csr.sum_duplicates()
    csr.eliminate_zeros()
    csr.sort_indices()
    fp = csr.indptr.tobytes() + csr.indices.tobytes() + csr.data.tobytes()
    try:
        m._chom_fp = fp
    except AttributeError:
        pass
    return fp


def merge_kron_terms(terms: list, d: int) -> list:
    """Merge terms that differ in a single factor by summing that factor.

    Repeated axis-wise passes implement the strip agglomeration argument:
    per-cell terms sharing an axis-aligned strip collapse into one term, and
    in fully regular configurations the collapse continues across strips.
    """
    terms = list(terms)
    changed = True
    while changed:
        changed = False
        for axis in range(d):
            groups: dict = {}
            for factors in terms:
                key = tuple(
                    _fingerprint(f) for slot, f in enumerate(factors) if slot != axis
                )
                groups.setdefault(key, []).append(factors)
            merged = []
            for bucket in groups.values():
                if len(bucket) == 1:
                    merged.append(bucket[0])
                    continue
                changed = True
                total = bucket[0][axis]
                for factors in bucket[1:]:
                    total = total + factors[axis]
                merged.append(tuple(
                    total if slot == axis else bucket[0][slot] for slot in range(d)
                ))
            terms = merged
    return terms


@functools.lru_cache(maxsize=1024)
def _lumped_embed(config, axis_cell: int) -> sp.csr_matrix:
    block = lumped_identity(config.k + 1)
    return embed_block(block, subcell_node_window(config, axis_cell), config.n)


def _agglomerated_stochastic_terms(r: Realization) -> list:
    """Group per-cell terms sharing their transverse line before merging.

    Cells with equal coordinates in every axis but the Laplacian slot share
    identical lumped factors, so their local Laplacian blocks sum into one
    sparse matrix; a final generic merge pass handles regular patterns.
    """
    config = r.config
    d, n = config.d, config.n
    q_hat = sp.coo_matrix(laplacian_1d_neumann(config.k + 1))

    lines: dict = {}
    for cell in r.sorted_cells():
        beta = r.cell_beta[cell]
        for axis in range(d):
            key = (axis,) + tuple(c for m, c in enumerate(cell) if m != axis)
            lines.setdefault(key, []).append((cell[axis], beta))

    terms = []
    for key, entries in sorted(lines.items()):
        axis, other = key[0], key[1:]
        rows, cols, vals = [], [], []
        for axis_cell, beta in entries:
            window = subcell_node_window(config, axis_cell)
            rows.append(window[q_hat.row])
            cols.append(window[q_hat.col])
            vals.append(beta * q_hat.data)
        q_sum = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        ).tocsr()
        q_sum.sum_duplicates()
        lumped = iter(_lumped_embed(config, c) for c in other)
        terms.append(tuple(
            q_sum if slot == axis else next(lumped) for slot in range(d)
        ))
    return merge_kron_terms(terms, d)


def assemble_stochastic_part(r: Realization, agglomerate: bool = False) -> KroneckerOperator:
    """Kronecker-sum representation of the variable-coefficient stiffness part.

    Raw form holds d terms per covered cell (beta folded into the local
    Laplacian factor).  With ``agglomerate`` the terms are merged by strips;
    the raw term count stays available as ``raw_rank``.
    """
    config = r.config
    raw_count = config.d * r.num_covered
    if agglomerate:
        terms = _agglomerated_stochastic_terms(r)
        return KroneckerOperator(d=config.d, n=config.n, terms=tuple(terms),
                                 raw_rank=raw_count)
    terms = _raw_stochastic_terms(r)
    return KroneckerOperator(d=config.d, n=config.n, terms=tuple(terms))


def assemble_stiffness(r: Realization, agglomerate: bool = True) -> StiffnessOperator:
    """Full stiffness lam * A_lap + A_stoch for one realization."""
    config = r.config
    return StiffnessOperator(
        laplacian_part=assemble_periodic_laplacian(config.d, config.n),
        stochastic_part=assemble_stochastic_part(r, agglomerate=agglomerate),
        lam=float(config.lam),
    )


def _mode_apply(factor: sp.spmatrix, tensor: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(tensor, axis, 0)
    shape = moved.shape
    flat = factor @ moved.reshape(shape[0], -1)
    return np.moveaxis(flat.reshape(shape), 0, axis)


def kron_matvec(op, x: np.ndarray) -> np.ndarray:
    """Exact operator action via mode-wise 1D sparse multiplications."""
    if isinstance(op, StiffnessOperator):
        y = op.lam * kron_matvec(op.laplacian_part, x)
        if op.stochastic_part.terms:
            y += kron_matvec(op.stochastic_part, x)
        return y
    x = np.asarray(x, dtype=float)
    size = op.n**op.d
    if x.shape != (size,):
        raise ValueError(f"expected vector of length {size}, got shape {x.shape}")
    shape = (op.n,) * op.d
    out = np.zeros(size)
    for factors in op.terms:
        tensor = x.reshape(shape)
        for axis, factor in enumerate(factors):
            tensor = _mode_apply(factor, tensor, axis)
        out += tensor.ravel()
    return out


def _term_coo(factors):
    """COO triplets of a single Kronecker product, expanded by outer products."""
    first = sp.coo_matrix(factors[0])
    rows = first.row.astype(np.int64)
    cols = first.col.astype(np.int64)
    vals = first.data
    for factor in factors[1:]:
        coo = sp.coo_matrix(factor)
        m = factor.shape[0]
        rows = (rows[:, None] * m + coo.row[None, :]).ravel()
        cols = (cols[:, None] * m + coo.col[None, :]).ravel()
        vals = (vals[:, None] * coo.data[None, :]).ravel()
    return rows, cols, vals


def to_sparse(op) -> sp.csr_matrix:
    """Materialize the Kronecker sum as one CSR matrix."""
    if isinstance(op, StiffnessOperator):
        return op.matrix()
    size = op.n**op.d
    if not op.terms:
        return sp.csr_matrix((size, size))
    rows, cols, vals = zip(*(_term_coo(factors) for factors in op.terms))
    out = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    ).tocsr()
    out.sum_duplicates()
    return out


@functools.lru_cache(maxsize=4)
def _laplacian_csr(d: int, n: int) -> sp.csr_matrix:
    return to_sparse(assemble_periodic_laplacian(d, n))


def to_dense(op, cap: int = DENSE_CAP) -> np.ndarray:
    """Explicit matrix for oracle tests; refuses above ``cap`` unknowns."""
    if isinstance(op, StiffnessOperator):
        size = op.n**op.d
        if size > cap:
            raise DenseSizeError(f"dense size {size} exceeds cap {cap}")
        dense = op.lam * to_dense(op.laplacian_part, cap)
        if op.stochastic_part.terms:
            dense += to_dense(op.stochastic_part, cap)
        return dense
    size = op.n**op.d
    if size > cap:
        raise DenseSizeError(f"dense size {size} exceeds cap {cap}")
    out = np.zeros((size, size))
    for factors in op.terms:
        term = factors[0].toarray()
        for factor in factors[1:]:
            term = np.kron(term, factor.toarray())
        out += term
    return out


def multi_index(mu, n: int) -> int:
    """Big-endian linear index: (m1, m2, m3) -> m3 + m2*n + m1*n^2 (0-based)."""
    idx = 0
    for m in mu:
        if not (0 <= m < n):
            raise ValueError(f"index component {m} outside [0, {n})")
        idx = idx * n + int(m)
    return idx


def inverse_multi_index(idx: int, d: int, n: int) -> tuple:
    """Inverse of :func:`multi_index`."""
    if not (0 <= idx < n**d):
        raise ValueError(f"linear index {idx} outside [0, {n**d})")
    mu = []
    for _ in range(d):
        mu.append(idx % n)
        idx //= n
    return tuple(reversed(mu))


def kronecker_rank(op: KroneckerOperator, raw: bool = False) -> int:
    """Number of Kronecker terms; ``raw`` reports the pre-agglomeration count."""
    if raw and op.raw_rank is not None:
        return op.raw_rank
    return len(op.terms)


def nnz_stored(op: KroneckerOperator) -> int:
    """Total stored nonzeros across all 1D factors (the Kronecker storage cost)."""
    return int(sum(f.nnz for factors in op.terms for f in factors))


def export_operator(op: KroneckerOperator, path) -> None:
    """Dump the term list to an .npz container (COO triplets per factor)."""
    arrays = {"d": np.array(op.d), "n": np.array(op.n),
              "num_terms": np.array(len(op.terms)),
              "raw_rank": np.array(-1 if op.raw_rank is None else op.raw_rank)}
    for t, factors in enumerate(op.terms):
        for slot, factor in enumerate(factors):
            coo = sp.coo_matrix(factor)
            arrays[f"term{t}_slot{slot}_row"] = coo.row
            arrays[f"term{t}_slot{slot}_col"] = coo.col
            arrays[f"term{t}_slot{slot}_val"] = coo.data
    np.savez_compressed(path, **arrays)


def import_operator(path) -> KroneckerOperator:
    """Inverse of :func:`export_operator`."""
    with np.load(path) as data:
        d, n = int(data["d"]), int(data["n"])
        raw = int(data["raw_rank"])
        terms = []
        for t in range(int(data["num_terms"])):
            factors = []
            for slot in range(d):
                key = f"term{t}_slot{slot}"
                factors.append(sp.coo_matrix(
                    (data[f"{key}_val"], (data[f"{key}_row"], data[f"{key}_col"])),
                    shape=(n, n)).tocsr())
            terms.append(tuple(factors))
    return KroneckerOperator(d=d, n=n, terms=tuple(terms),
                             raw_rank=None if raw < 0 else raw)
