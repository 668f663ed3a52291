"""Random checkerboard coefficient fields on a periodic lattice.

The unit cell Omega = [0,1)^d is partitioned into an L^d lattice of cells.
Each cell independently receives a perturbation sub-cell (side 2*alpha/L,
grid aligned, cell-centered by default) with probability ``coverage_prob``.
A covered sub-cell carries a contrast value beta on top of the background
conductivity lambda, so the scalar coefficient is a(x) = lambda + beta*ahat(x)
with ahat the indicator-like variable part.

Discretization uses the periodic n^d grid with n = n0*L nodes per axis and
mesh size h = 1/n; the node at coordinate 1 is identified with the node at 0,
so all index arithmetic is modulo n.  Nodal values of the variable part are
measure weighted: a node bordering a covered sub-cell receives the fraction
of its 2^d incident grid cells that are covered (1, 1/2, 1/4 at interior,
face and corner nodes in 2D; down to 1/2^d in higher dimension).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError

CONTRAST_KINDS = ("fixed", "two_value", "layered")


@dataclass(frozen=True)
class ContrastModel:
    """How covered cells receive their perturbation amplitude beta.

    kind
        "fixed"     every covered cell gets beta = 1 - lambda.
        "two_value" each covered cell gets betas[0] or betas[1] with equal
                    probability, drawn per cell.
        "layered"   beta is betas[layer % len(betas)] where the layer index
                    is the cell coordinate along the last axis.
    """

    kind: str = "fixed"
    betas: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in CONTRAST_KINDS:
            raise ConfigurationError(f"unknown contrast kind {self.kind!r}")
        if self.kind == "fixed" and self.betas:
            raise ConfigurationError("fixed contrast takes no explicit betas")
        if self.kind == "two_value" and len(self.betas) != 2:
            raise ConfigurationError("two_value contrast needs exactly 2 betas")
        if self.kind == "layered" and len(self.betas) < 1:
            raise ConfigurationError("layered contrast needs at least 1 beta")

    @staticmethod
    def fixed():
        return ContrastModel("fixed", ())

    @staticmethod
    def two_value(beta1, beta2):
        return ContrastModel("two_value", (float(beta1), float(beta2)))

    @staticmethod
    def layered(betas):
        return ContrastModel("layered", tuple(float(b) for b in betas))


def _as_alpha(value):
    """Normalize an overlap factor given as float, Fraction or 'p/q' string."""
    if isinstance(value, str):
        if "/" in value:
            num, den = value.split("/", 1)
            return Fraction(int(num), int(den))
        return Fraction(value)
    if isinstance(value, Fraction):
        return value
    return Fraction(value).limit_denominator(1 << 20)


@dataclass(frozen=True)
class LatticeConfig:
    """Geometry and randomness parameters of the coefficient field.

    Attributes
    ----------
    d : int
        Spatial dimension, 2 or 3.
    L : int
        Cells per axis of the lattice (RVE size).
    n0 : int
        Grid intervals per cell, a power of two >= 4.
    alpha : number
        Overlap factor, 0 < alpha <= 1/2 with k = 2*alpha*n0 an even integer;
        the sub-cell spans k grid intervals per axis.
    lam : float
        Background conductivity lambda in (0, 1].
    contrast : ContrastModel
        Perturbation amplitude scheme; all betas must lie in [0, 1 - lam].
    coverage_prob : float
        Probability that a cell is covered (independent per cell).
    subcell_offset : int or None
        Start of the sub-cell inside its cell, in grid intervals; None means
        cell-centered, i.e. (n0 - k) // 2.
    """

    d: int
    L: int
    n0: int = 4
    alpha: object = Fraction(1, 4)
    lam: float = 0.4
    contrast: ContrastModel = field(default_factory=ContrastModel.fixed)
    coverage_prob: float = 0.5
    subcell_offset: int | None = None

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ConfigurationError(f"d must be 2 or 3, got {self.d}")
        if self.L < 1:
            raise ConfigurationError(f"L must be a positive integer, got {self.L}")
        if self.n0 < 4 or self.n0 & (self.n0 - 1):
            raise ConfigurationError(f"n0 must be a power of two >= 4, got {self.n0}")
        alpha = _as_alpha(self.alpha)
        object.__setattr__(self, "alpha", alpha)
        if not (0 < alpha <= Fraction(1, 2)):
            raise ConfigurationError(f"alpha must be in (0, 1/2], got {alpha}")
        k = alpha * 2 * self.n0
        if k.denominator != 1 or k.numerator % 2:
            raise ConfigurationError(
                f"2*alpha*n0 must be an even integer, got {alpha} * 2 * {self.n0}"
            )
        if not (0.0 < self.lam <= 1.0):
            raise ConfigurationError(f"lambda must be in (0, 1], got {self.lam}")
        beta_max = 1.0 - self.lam
        for b in self.betas:
            if not (0.0 <= b <= beta_max + 1e-12):
                raise ConfigurationError(
                    f"beta {b} outside [0, 1 - lambda] = [0, {beta_max}]"
                )
        if not (0.0 <= self.coverage_prob <= 1.0):
            raise ConfigurationError(
                f"coverage_prob must be in [0, 1], got {self.coverage_prob}"
            )
        off = self.subcell_offset
        if off is not None and not (0 <= off <= self.n0 - self.k):
            raise ConfigurationError(
                f"subcell_offset {off} outside [0, n0 - k] = [0, {self.n0 - self.k}]"
            )

    @cached_property
    def k(self) -> int:
        """Sub-cell width in grid intervals, k = 2*alpha*n0 (even, 2..n0)."""
        return int(self.alpha * 2 * self.n0)

    @cached_property
    def n(self) -> int:
        """Grid nodes per axis under periodic identification, n = n0*L."""
        return self.n0 * self.L

    @cached_property
    def offset(self) -> int:
        """Resolved start of the sub-cell window inside its cell."""
        if self.subcell_offset is not None:
            return self.subcell_offset
        return (self.n0 - self.k) // 2

    @cached_property
    def betas(self) -> tuple[float, ...]:
        if self.contrast.kind == "fixed":
            return (1.0 - self.lam,)
        return self.contrast.betas

    @cached_property
    def num_cells(self) -> int:
        return self.L**self.d

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "L": self.L,
            "n0": self.n0,
            "alpha": str(self.alpha),
            "lambda": float(self.lam),
            "contrast": self.contrast.kind,
            "betas": [float(b) for b in self.contrast.betas],
            "coverage_prob": float(self.coverage_prob),
            "subcell_offset": self.subcell_offset,
        }

    @staticmethod
    def from_dict(doc: dict) -> "LatticeConfig":
        contrast = ContrastModel(doc.get("contrast", "fixed"),
                                 tuple(doc.get("betas", ())))
        return LatticeConfig(
            d=doc["d"],
            L=doc["L"],
            n0=doc.get("n0", 4),
            alpha=_as_alpha(doc.get("alpha", "1/4")),
            lam=doc.get("lambda", 0.4),
            contrast=contrast,
            coverage_prob=doc.get("coverage_prob", 0.5),
            subcell_offset=doc.get("subcell_offset"),
        )


@dataclass(frozen=True)
class Realization:
    """One drawn configuration of the random coefficient field.

    ``covered`` holds the multi-indices of the K covered cells in
    {0..L-1}^d and ``cell_beta`` their perturbation amplitudes.  A
    realization is a pure function of (config, seed) and can be rebuilt
    bit-identically from them.
    """

    config: LatticeConfig
    covered: frozenset
    cell_beta: dict
    seed: int

    @property
    def num_covered(self) -> int:
        return len(self.covered)

    def sorted_cells(self) -> list:
        return sorted(self.covered)

    def to_json(self) -> str:
        cells = self.sorted_cells()
        doc = {
            "config": self.config.to_dict(),
            "seed": int(self.seed),
            "covered": [list(map(int, c)) for c in cells],
            "beta": [float(self.cell_beta[c]) for c in cells],
        }
        return json.dumps(doc, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "Realization":
        doc = json.loads(text)
        config = LatticeConfig.from_dict(doc["config"])
        cells = [tuple(c) for c in doc["covered"]]
        betas = doc["beta"]
        return Realization(
            config=config,
            covered=frozenset(cells),
            cell_beta=dict(zip(cells, betas)),
            seed=int(doc["seed"]),
        )


@dataclass(frozen=True)
class CoefficientGrid:
    """Nodal values of the variable coefficient part beta*ahat on the grid.

    ``values`` has shape (n,)*d; entry 0 marks nodes away from every covered
    sub-cell, and interface nodes carry the measure-weighted fraction of
    their incident grid cells times the local beta.
    """

    values: np.ndarray

    @cached_property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.ndim


def derive_seed(master_seed: int, index: int) -> int:
    """Per-realization sub-seed, stable under reordering of the ensemble."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def _rng(seed: int) -> np.random.Generator:
    # Philox is counter-based, so streams are cheap to fork and replay.
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def sample_realization(config: LatticeConfig, seed: int) -> Realization:
    """Draw a checkerboard realization, deterministic in (config, seed).

    Cells are visited in C order; coverage and the two_value amplitude
    choice consume one uniform each so that the drawn pattern is a pure
    function of the seed regardless of how many cells end up covered.
    """
    rng = _rng(seed)
    num = config.num_cells
    u_cover = rng.random(num)
    u_beta = rng.random(num) if config.contrast.kind == "two_value" else None

    shape = (config.L,) * config.d
    covered = []
    cell_beta = {}
    for flat in np.flatnonzero(u_cover < config.coverage_prob):
        cell = tuple(int(c) for c in np.unravel_index(flat, shape))
        if config.contrast.kind == "fixed":
            beta = 1.0 - config.lam
        elif config.contrast.kind == "two_value":
            beta = config.contrast.betas[0 if u_beta[flat] < 0.5 else 1]
        else:
            layer = cell[-1] % len(config.contrast.betas)
            beta = config.contrast.betas[layer]
        covered.append(cell)
        cell_beta[cell] = float(beta)
    return Realization(config=config, covered=frozenset(covered),
                       cell_beta=cell_beta, seed=int(seed))


def subcell_cell_slices(config: LatticeConfig, cell) -> tuple:
    """Slices of the grid cells (not nodes) occupied by a covered sub-cell."""
    k, n0, off = config.k, config.n0, config.offset
    return tuple(slice(c * n0 + off, c * n0 + off + k) for c in cell)


def subcell_node_window(config: LatticeConfig, axis_cell: int) -> np.ndarray:
    """Node indices of the sub-cell window along one axis, wrapped modulo n."""
    start = axis_cell * config.n0 + config.offset
    return (start + np.arange(config.k + 1)) % config.n


def cell_indicator_field(r: Realization) -> np.ndarray:
    """beta-weighted indicator over the n^d grid cells (1 per covered h-cell)."""
    config = r.config
    field_ = np.zeros((config.n,) * config.d)
    for cell in r.sorted_cells():
        field_[subcell_cell_slices(config, cell)] = r.cell_beta[cell]
    return field_


def coefficient_grid(r: Realization) -> CoefficientGrid:
    """Nodal variable-part values beta*ahat(x_h) on the periodic grid.

    Each node averages the beta weights of its 2^d incident grid cells,
    which reproduces the interface weights 1, 1/2, 1/4 (and 1/8 in 3D)
    relative to beta and respects the periodic wrap.
    """
    vals = cell_indicator_field(r)
    for axis in range(r.config.d):
        vals = 0.5 * (vals + np.roll(vals, 1, axis=axis))
    return CoefficientGrid(vals)


def covered_volume_fraction(r: Realization) -> float:
    """Lebesgue fraction of the domain occupied by covered sub-cells."""
    config = r.config
    side = Fraction(config.k, config.n0)  # = 2*alpha, relative to cell side
    return float(r.num_covered * side**config.d / config.num_cells)
