"""Command line front end: sampling, solves, ensembles and preconditioner audits.

Subcommands
-----------
sample          emit one realization as JSON plus a coefficient-grid slice CSV
solve           assemble one realization, solve one corrector system, report
homogenize      averaged coefficient matrix of one realization
sweep           Monte-Carlo ensembles over a list of lattice sizes
precond-report  accuracy/rank audit table of the exponential-sum surrogate

Every output embeds the resolved scientific configuration (never the output
directory or worker count), so re-running from an emitted config reproduces
the results bit-identically.  Timings are written to a separate file to keep
the scientific outputs stable across runs.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import (
    ConfigurationError,
    QuadratureFailure,
    SolverBreakdown,
    SolverDidNotConverge,
)
from .homogenize import corrector_rhs, deviation_slope, ensemble_run, homogenized_matrix
from .lattice import ContrastModel, LatticeConfig, coefficient_grid, sample_realization
from .lowrank import exp_sum_quadrature
from .operators import assemble_stiffness, kronecker_rank, nnz_stored
from .solver import SolveOptions, pcg_solve
from .spectral import fourier_eigenvalues

_CONFIG_KEYS = (
    "d", "L", "n0", "alpha", "lambda", "contrast", "betas", "coverage_prob",
    "subcell_offset", "eps", "eps_rank", "precond", "max_iter", "delta",
    "M", "seed", "direction", "eps_list",
)
_PRECOND_NAMES = {"fourier": "fourier", "lkr": "lkr", "rp": "regularized"}


@dataclass
class RunConfig:
    """Resolved run parameters; validated before any computation starts."""

    d: int | None = None
    L: list | None = None
    n0: int = 4
    alpha: str = "1/4"
    lam: float = 0.4
    contrast: str = "fixed"
    betas: list = field(default_factory=list)
    coverage_prob: float = 0.5
    subcell_offset: int | None = None
    eps: float | None = None       # None: 1e-8 in 2D, 1e-7 in 3D
    eps_rank: float = 1e-8
    precond: str = "fourier"
    max_iter: int = 500
    delta: float = 1e-3
    M: int = 2
    seed: int = 0
    direction: int = 1
    eps_list: list = field(default_factory=lambda: [1e-2, 1e-4, 1e-6, 1e-8])

    def resolved_eps(self) -> float:
        if self.eps is not None:
            return self.eps
        return 1e-8 if self.d == 2 else 1e-7

    def lattice_config(self, L: int) -> LatticeConfig:
        if self.contrast == "fixed":
            model = ContrastModel.fixed()
        elif self.contrast == "two_value":
            if len(self.betas) != 2:
                raise ConfigurationError("betas: two_value contrast needs 2 values")
            model = ContrastModel.two_value(*self.betas)
        elif self.contrast == "layered":
            model = ContrastModel.layered(self.betas)
        else:
            raise ConfigurationError(f"contrast: unknown model {self.contrast!r}")
        return LatticeConfig(
            d=self.d, L=L, n0=self.n0, alpha=self.alpha, lam=self.lam,
            contrast=model, coverage_prob=self.coverage_prob,
            subcell_offset=self.subcell_offset,
        )

    def solve_options(self) -> SolveOptions:
        return SolveOptions(
            tol=self.resolved_eps(),
            max_iter=self.max_iter,
            preconditioner=_PRECOND_NAMES[self.precond],
            eps_rank=self.eps_rank,
            delta=self.delta,
        )

    def validate(self):
        if self.d is None:
            raise ConfigurationError("d: dimension is required")
        if not self.L:
            raise ConfigurationError("L: at least one lattice size is required")
        unique = sorted(set(self.L))
        if len(unique) != len(self.L):
            warnings.warn("L list contains duplicates; deduplicating")
        self.L = unique
        if self.precond not in _PRECOND_NAMES:
            raise ConfigurationError(f"precond: unknown choice {self.precond!r}")
        if self.M < 1:
            raise ConfigurationError(f"M: must be >= 1, got {self.M}")
        for L in self.L:
            self.lattice_config(L)      # raises on any invalid combination
        self.solve_options()
        if not (1 <= self.direction <= self.d):
            raise ConfigurationError(
                f"direction: must be in 1..{self.d}, got {self.direction}")
        for e in self.eps_list:
            if e <= 0:
                raise ConfigurationError(f"eps_list: tolerances must be > 0, got {e}")

    def to_mapping(self) -> dict:
        config = self.lattice_config(self.L[0])
        return {
            "d": self.d,
            "L": list(self.L),
            "n0": self.n0,
            "alpha": str(config.alpha),
            "lambda": float(self.lam),
            "contrast": self.contrast,
            "betas": [float(b) for b in self.betas],
            "coverage_prob": float(self.coverage_prob),
            "subcell_offset": self.subcell_offset,
            "eps": float(self.resolved_eps()),
            "eps_rank": float(self.eps_rank),
            "precond": self.precond,
            "max_iter": self.max_iter,
            "delta": float(self.delta),
            "M": self.M,
            "seed": self.seed,
            "direction": self.direction,
            "eps_list": [float(e) for e in self.eps_list],
        }


def load_config(path) -> RunConfig:
    """Parse a TOML key/value document; unknown keys are rejected by name."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"config parse error: {exc}") from exc
    for key in doc:
        if key not in _CONFIG_KEYS:
            raise ConfigurationError(f"unknown config key {key!r}")
    cfg = RunConfig()
    _apply_mapping(cfg, doc)
    return cfg


def _apply_mapping(cfg: RunConfig, doc: dict):
    scalars = {
        "d": ("d", int), "n0": ("n0", int), "lambda": ("lam", float),
        "contrast": ("contrast", str), "coverage_prob": ("coverage_prob", float),
        "subcell_offset": ("subcell_offset", int), "eps": ("eps", float),
        "eps_rank": ("eps_rank", float), "precond": ("precond", str),
        "max_iter": ("max_iter", int), "delta": ("delta", float),
        "M": ("M", int), "seed": ("seed", int), "direction": ("direction", int),
    }
    for key, value in doc.items():
        if key == "L":
            cfg.L = [int(v) for v in (value if isinstance(value, list) else [value])]
        elif key == "alpha":
            cfg.alpha = str(value)
        elif key == "betas":
            cfg.betas = [float(v) for v in value]
        elif key == "eps_list":
            cfg.eps_list = [float(v) for v in value]
        elif key in scalars:
            attr, cast = scalars[key]
            setattr(cfg, attr, None if value is None else cast(value))


def _parse_int_list(text: str) -> list:
    return [int(part) for part in str(text).replace(" ", "").split(",") if part]


def _parse_float_list(text: str) -> list:
    return [float(part) for part in str(text).replace(" ", "").split(",") if part]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="checkerhom",
        description="Periodic elliptic solves with random checkerboard coefficients",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("sample", "draw one coefficient realization"),
        ("solve", "solve one corrector system for one realization"),
        ("homogenize", "averaged coefficient matrix of one realization"),
        ("sweep", "Monte-Carlo ensembles over a list of lattice sizes"),
        ("precond-report", "accuracy/rank audit of the low-rank preconditioner"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", type=str, default=None, help="TOML config file")
        p.add_argument("--d", type=int, default=None, choices=(2, 3))
        p.add_argument("--L", type=_parse_int_list, default=None,
                       help="lattice sizes, comma separated")
        p.add_argument("--n0", type=int, default=None)
        p.add_argument("--alpha", type=str, default=None, help="overlap, e.g. 1/4")
        p.add_argument("--lambda", dest="lam", type=float, default=None)
        p.add_argument("--contrast", type=str, default=None,
                       choices=("fixed", "two_value", "layered"))
        p.add_argument("--betas", type=_parse_float_list, default=None)
        p.add_argument("--coverage-prob", type=float, default=None)
        p.add_argument("--subcell-offset", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--M", type=int, default=None)
        p.add_argument("--precond", type=str, default=None,
                       choices=tuple(_PRECOND_NAMES))
        p.add_argument("--eps", type=float, default=None)
        p.add_argument("--eps-rank", type=float, default=None)
        p.add_argument("--eps-list", type=_parse_float_list, default=None)
        p.add_argument("--max-iter", type=int, default=None)
        p.add_argument("--delta", type=float, default=None)
        p.add_argument("--direction", type=int, default=None)
        p.add_argument("--out", type=str, default="out")
        p.add_argument("--trace", action="store_true")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--skip-failed", action="store_true")
        p.add_argument("--dump-eigenvalues", action="store_true")
    return parser


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {
        "d": args.d, "L": args.L, "n0": args.n0, "alpha": args.alpha,
        "lambda": args.lam, "contrast": args.contrast, "betas": args.betas,
        "coverage_prob": args.coverage_prob, "subcell_offset": args.subcell_offset,
        "eps": args.eps, "eps_rank": args.eps_rank, "precond": args.precond,
        "max_iter": args.max_iter, "delta": args.delta, "M": args.M,
        "seed": args.seed, "direction": args.direction, "eps_list": args.eps_list,
    }
    _apply_mapping(cfg, {k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    return cfg


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _header_lines(cfg: RunConfig, command: str) -> list:
    lines = [f"# command = {command}"]
    for key, value in cfg.to_mapping().items():
        if value is None:
            continue
        if isinstance(value, list):
            value = ",".join(_fmt(v) for v in value)
        lines.append(f"# {key} = {_fmt(value)}")
    return lines


def _write_csv(path: Path, cfg: RunConfig, command: str, columns: list, rows: list):
    lines = _header_lines(cfg, command)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, cfg: RunConfig, payload: dict):
    doc = {"config": cfg.to_mapping(), **payload}
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return json.dumps(str(value))


def write_resolved_config(path: Path, cfg: RunConfig):
    lines = []
    for key, value in cfg.to_mapping().items():
        if value is None:
            continue
        if isinstance(value, list):
            lines.append(f"{key} = [{', '.join(_toml_scalar(v) for v in value)}]")
        else:
            lines.append(f"{key} = {_toml_scalar(value)}")
    path.write_text("\n".join(lines) + "\n")


def _cmd_sample(cfg: RunConfig, out: Path, args) -> int:
    config = cfg.lattice_config(cfg.L[0])
    realization = sample_realization(config, cfg.seed)
    (out / "realization.json").write_text(realization.to_json() + "\n")
    grid = coefficient_grid(realization).values
    plane = grid if cfg.d == 2 else grid[grid.shape[0] // 2]
    rows = [(i, j, float(plane[i, j]))
            for i in range(plane.shape[0]) for j in range(plane.shape[1])]
    _write_csv(out / "grid_slice.csv", cfg, "sample", ["i", "j", "value"], rows)
    return 0


def _cmd_solve(cfg: RunConfig, out: Path, args) -> int:
    config = cfg.lattice_config(cfg.L[0])
    opts = cfg.solve_options()
    realization = sample_realization(config, cfg.seed)

    t0 = time.perf_counter()
    A = assemble_stiffness(realization)
    A.matrix()
    t_matrix = time.perf_counter() - t0

    t0 = time.perf_counter()
    h = 1.0 / config.n
    f = (h ** (2 - cfg.d)) * corrector_rhs(realization, cfg.direction)
    t_rhs = time.perf_counter() - t0

    t0 = time.perf_counter()
    u, report = pcg_solve(A, f, opts)
    t_solve = time.perf_counter() - t0

    _write_json(out / "report.json", cfg, {
        "iterations": report.iterations,
        "converged": bool(report.converged),
        "final_residual": report.final_residual,
        "preconditioner": report.preconditioner,
        "num_covered": realization.num_covered,
        "kron_rank_agglomerated": kronecker_rank(A.stochastic_part),
        "kron_rank_raw": kronecker_rank(A.stochastic_part, raw=True),
        "kron_nnz_stored": nnz_stored(A.stochastic_part),
        "solution_mean": float(u.mean()),
    })
    _write_csv(out / "timings.csv", cfg, "solve",
               ["phase", "seconds"],
               [("matrix", t_matrix), ("rhs", t_rhs), ("solve", t_solve)])
    if args.trace:
        _write_csv(out / "trace.csv", cfg, "solve", ["iteration", "rel_residual"],
                   list(enumerate(report.residuals, start=1)))
    if not report.converged:
        raise SolverDidNotConverge("solve did not converge", report=report,
                                   metadata={"seed": cfg.seed, "L": cfg.L[0]})
    return 0


def _cmd_homogenize(cfg: RunConfig, out: Path, args) -> int:
    config = cfg.lattice_config(cfg.L[0])
    realization = sample_realization(config, cfg.seed)
    record = homogenized_matrix(realization, cfg.solve_options())
    _write_json(out / "ahom.json", cfg, {
        "matrix": [[float(v) for v in row] for row in record.matrix],
        "iterations": list(record.iterations),
        "num_covered": record.num_covered,
        "seed": record.seed,
        "L": record.L,
    })
    return 0


def _cmd_sweep(cfg: RunConfig, out: Path, args) -> int:
    opts = cfg.solve_options()
    d = cfg.d
    entry_names = [f"a{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    record_rows, stats_rows, timing_rows, all_stats = [], [], [], []
    for L in cfg.L:
        config = cfg.lattice_config(L)
        t0 = time.perf_counter()
        stats = ensemble_run(config, cfg.M, cfg.seed, opts,
                             skip_failed=args.skip_failed, workers=args.workers)
        timing_rows.append((L, time.perf_counter() - t0))
        all_stats.append(stats)
        for rec in stats.records:
            row = [rec.seed, L, cfg.lam, rec.num_covered]
            row += [float(v) for v in rec.matrix.ravel()]
            row += list(rec.iterations)
            record_rows.append(tuple(row))
        srow = [L, stats.M, cfg.lam]
        srow += [float(v) for v in stats.average.ravel()]
        srow += [float(v) for v in stats.std.ravel()]
        stats_rows.append(tuple(srow))

    it_names = [f"it{i + 1}" for i in range(d)]
    _write_csv(out / "records.csv", cfg, "sweep",
               ["seed", "L", "lambda", "K"] + entry_names + it_names, record_rows)
    _write_csv(out / "stats.csv", cfg, "sweep",
               ["L", "M", "lambda"] + entry_names + [f"sigma_{e}" for e in entry_names],
               stats_rows)
    _write_csv(out / "timings.csv", cfg, "sweep", ["L", "seconds"], timing_rows)

    payload = {"expected_slope": -d / 2.0}
    if len(cfg.L) >= 3:
        fit = deviation_slope(all_stats, entry=(0, 0))
        payload.update({
            "entry": "a11",
            "Ls": list(fit.Ls),
            "sigmas": list(fit.sigmas),
            "slope": fit.slope,
            "intercept": fit.intercept,
            "slope_stderr": fit.slope_stderr,
        })
    else:
        payload["note"] = "slope fit needs at least 3 lattice sizes"
    _write_json(out / "slope.json", cfg, payload)
    write_resolved_config(out / "resolved_config.toml", cfg)
    return 0


def _cmd_precond_report(cfg: RunConfig, out: Path, args) -> int:
    rows = []
    for L in cfg.L:
        config = cfg.lattice_config(L)
        spectrum = fourier_eigenvalues(config.n)
        lam = spectrum.values
        a = float(lam[lam > 0.0].min())
        b = float(cfg.d * lam.max())
        if args.dump_eigenvalues:
            _write_csv(out / f"eigenvalues_n{config.n}.csv", cfg, "precond-report",
                       ["j", "lambda_j"], list(enumerate(lam.tolist())))
        for eps in cfg.eps_list:
            quad = exp_sum_quadrature(a, b, eps)
            rows.append((L, config.n, eps, quad.rank, quad.achieved, a, b))
    _write_csv(out / "precond_report.csv", cfg, "precond-report",
               ["L", "n", "eps", "rank", "achieved", "a", "b"], rows)
    return 0


_COMMANDS = {
    "sample": _cmd_sample,
    "solve": _cmd_solve,
    "homogenize": _cmd_homogenize,
    "sweep": _cmd_sweep,
    "precond-report": _cmd_precond_report,
}


def run(argv=None) -> int:
    """Entry point returning an exit code (0 ok, 2 config, 3 numerical)."""
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out, args)
    except ConfigurationError as exc:
        print(json.dumps({"error": "configuration", "message": str(exc)}),
              file=sys.stderr)
        return 2
    except (QuadratureFailure, SolverBreakdown, SolverDidNotConverge) as exc:
        print(json.dumps({"error": "numerical", "message": str(exc)}),
              file=sys.stderr)
        return 3


def main():
    sys.exit(run())
