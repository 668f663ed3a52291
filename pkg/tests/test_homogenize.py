import numpy as np
import pytest

from checkerhom import (
    InsufficientData,
    LatticeConfig,
    Realization,
    SolveOptions,
    SolverDidNotConverge,
    corrector_rhs,
    deviation_slope,
    ensemble_run,
    homogenized_matrix,
    sample_realization,
)
from checkerhom.homogenize import EnsembleStats


def make_config(**kw):
    base = dict(d=2, L=4, n0=4, alpha="1/4", lam=0.4)
    base.update(kw)
    return LatticeConfig(**base)


class TestCorrectorRhs:
    def test_empty_realization_zero_load(self):
        r = sample_realization(make_config(coverage_prob=0.0), 1)
        assert not corrector_rhs(r, 1).any()

    def test_mean_zero_by_telescoping(self):
        for seed in range(5):
            r = sample_realization(make_config(L=8), seed)
            for i in (1, 2):
                f = corrector_rhs(r, i)
                assert abs(f.sum()) <= 1e-13 * max(np.abs(f).sum(), 1e-300)

    def test_antisymmetry_about_subcell_midline(self):
        cfg = make_config(L=2, n0=8)
        cell = (0, 0)
        r = Realization(config=cfg, covered=frozenset([cell]),
                        cell_beta={cell: 0.6}, seed=0)
        n = cfg.n
        f = corrector_rhs(r, 1).reshape(n, n)
        center = 0 * cfg.n0 + cfg.n0 // 2  # sub-cell midline along axis 1
        reflected = (2 * center - np.arange(n)) % n
        assert np.allclose(f[reflected, :], -f, atol=1e-15)

    def test_direction_out_of_range(self):
        r = sample_realization(make_config(), 1)
        with pytest.raises(ValueError):
            corrector_rhs(r, 0)
        with pytest.raises(ValueError):
            corrector_rhs(r, 3)


class TestHomogenizedMatrix:
    def test_beta_zero_gives_lambda_identity(self):
        cfg = make_config(lam=0.35, coverage_prob=0.0)
        record = homogenized_matrix(sample_realization(cfg, 1))
        assert np.max(np.abs(record.matrix - 0.35 * np.eye(2))) <= 1e-12
        assert record.iterations == (0, 0)

    def test_constant_unit_coefficient_gives_identity(self):
        cfg = make_config(alpha="1/2", coverage_prob=1.0)
        record = homogenized_matrix(sample_realization(cfg, 2),
                                    SolveOptions(tol=1e-9))
        assert np.max(np.abs(record.matrix - np.eye(2))) <= 1e-8

    def test_symmetry_random_2d(self):
        opts = SolveOptions(tol=1e-8)
        cfg = make_config(L=8)
        for seed in range(8):
            record = homogenized_matrix(sample_realization(cfg, seed), opts)
            assert abs(record.matrix[0, 1] - record.matrix[1, 0]) <= 1e-6

    def test_diagonal_bounds(self):
        opts = SolveOptions(tol=1e-8)
        for seed in range(6):
            cfg = make_config(L=4)
            record = homogenized_matrix(sample_realization(cfg, seed), opts)
            diag = np.diag(record.matrix)
            assert np.all(diag >= 0.4 - 1e-9)
            assert np.all(diag <= 1.0 + 1e-6)

    def test_3d_runs_and_is_symmetric(self):
        cfg = make_config(d=3, L=2)
        record = homogenized_matrix(sample_realization(cfg, 3),
                                    SolveOptions(tol=1e-7))
        assert record.matrix.shape == (3, 3)
        assert np.max(np.abs(record.matrix - record.matrix.T)) <= 1e-6

    def test_cyclic_shift_invariance(self):
        cfg = make_config(L=4)
        r = sample_realization(cfg, 9)
        shift = lambda c: ((c[0] + 1) % 4, (c[1] + 3) % 4)
        shifted = Realization(config=cfg,
                              covered=frozenset(shift(c) for c in r.covered),
                              cell_beta={shift(c): b for c, b in r.cell_beta.items()},
                              seed=r.seed)
        opts = SolveOptions(tol=1e-10)
        a = homogenized_matrix(r, opts).matrix
        b = homogenized_matrix(shifted, opts).matrix
        assert np.max(np.abs(a - b)) <= 1e-8

    def test_metadata_recorded(self):
        cfg = make_config(L=4)
        r = sample_realization(cfg, 17)
        record = homogenized_matrix(r, SolveOptions(tol=1e-8))
        assert record.seed == 17
        assert record.L == 4
        assert record.lam == 0.4
        assert record.num_covered == r.num_covered
        assert len(record.iterations) == 2


class TestEnsemble:
    def test_needs_two_realizations(self):
        with pytest.raises(ValueError):
            ensemble_run(make_config(), M=1, master_seed=0)

    def test_beta_zero_average_and_sigma(self):
        cfg = make_config(lam=0.5, coverage_prob=0.0)
        stats = ensemble_run(cfg, M=4, master_seed=1)
        assert np.max(np.abs(stats.average - 0.5 * np.eye(2))) <= 1e-12
        assert np.max(stats.std) <= 1e-12

    def test_identical_records_have_zero_sigma(self):
        record = homogenized_matrix(sample_realization(make_config(), 5),
                                    SolveOptions(tol=1e-8))
        stack = np.stack([record.matrix, record.matrix])
        sigma = np.sqrt(((stack - stack.mean(0)) ** 2).sum(0) / 1.0)
        assert np.max(sigma) == 0.0

    def test_bit_identical_reruns(self):
        cfg = make_config(L=4)
        opts = SolveOptions(tol=1e-8)
        s1 = ensemble_run(cfg, M=6, master_seed=33, opts=opts)
        s2 = ensemble_run(cfg, M=6, master_seed=33, opts=opts)
        for r1, r2 in zip(s1.records, s2.records):
            assert np.array_equal(r1.matrix, r2.matrix)
            assert r1.iterations == r2.iterations
            assert r1.seed == r2.seed

    def test_worker_pool_matches_sequential(self):
        cfg = make_config(L=4)
        opts = SolveOptions(tol=1e-8)
        seq = ensemble_run(cfg, M=4, master_seed=7, opts=opts, workers=1)
        par = ensemble_run(cfg, M=4, master_seed=7, opts=opts, workers=2)
        for r1, r2 in zip(seq.records, par.records):
            assert np.array_equal(r1.matrix, r2.matrix)

    def test_average_is_fixed_order_mean(self):
        cfg = make_config(L=4)
        stats = ensemble_run(cfg, M=5, master_seed=2, opts=SolveOptions(tol=1e-8))
        stack = np.stack([rec.matrix for rec in stats.records])
        assert np.array_equal(stats.average, stack.mean(axis=0))

    def test_abort_on_failure_by_default(self):
        cfg = make_config(L=2, coverage_prob=0.9)
        opts = SolveOptions(tol=1e-30, max_iter=1)
        with pytest.raises(SolverDidNotConverge):
            ensemble_run(cfg, M=6, master_seed=3, opts=opts)

    def test_skip_failed_records_survivors(self):
        # low coverage: empty realizations converge trivially, covered ones
        # cannot reach the unreachable tolerance in one iteration
        cfg = make_config(L=2, coverage_prob=0.2)
        opts = SolveOptions(tol=1e-30, max_iter=1)
        stats = ensemble_run(cfg, M=12, master_seed=4, opts=opts, skip_failed=True)
        assert stats.M >= 2
        assert len(stats.failed_seeds) == 12 - stats.M
        assert len(stats.failed_seeds) > 0

    def test_sigma_halves_when_L_doubles(self):
        # d = 2: sigma ~ L^{-1}, so the L=16 deviation should sit within a
        # factor two of sigma(L=8) / 2
        opts = SolveOptions(tol=1e-7)
        s8 = ensemble_run(make_config(L=8), M=200, master_seed=5, opts=opts)
        s16 = ensemble_run(make_config(L=16), M=200, master_seed=5, opts=opts)
        predicted = s8.std[0, 0] / 2.0
        assert predicted / 2.0 <= s16.std[0, 0] <= predicted * 2.0


class TestDeviationSlope:
    def synthetic_stats(self, Ls, sigma_fn, d=2):
        out = []
        for L in Ls:
            sig = np.full((d, d), sigma_fn(L))
            out.append(EnsembleStats(d=d, L=L, M=10, lam=0.4,
                                     average=np.eye(d), std=sig, records=()))
        return out

    def test_exact_power_law_recovered(self):
        stats = self.synthetic_stats((4, 8, 16, 32), lambda L: 3.0 / L)
        fit = deviation_slope(stats)
        assert fit.slope == pytest.approx(-1.0, abs=1e-12)
        assert fit.expected_slope == -1.0
        assert fit.slope_stderr <= 1e-10

    def test_expected_slope_tracks_dimension(self):
        stats = self.synthetic_stats((4, 8, 16), lambda L: L**-1.5, d=3)
        fit = deviation_slope(stats)
        assert fit.expected_slope == -1.5
        assert fit.slope == pytest.approx(-1.5, abs=1e-12)

    def test_insufficient_levels_rejected(self):
        stats = self.synthetic_stats((4, 8), lambda L: 1.0 / L)
        with pytest.raises(InsufficientData):
            deviation_slope(stats)

    def test_entry_selection(self):
        stats = self.synthetic_stats((4, 8, 16), lambda L: 2.0 / L)
        for s in stats:
            s.std[0, 1] = 1.0  # flat off-diagonal deviations
        fit = deviation_slope(stats, entry=(0, 1))
        assert fit.slope == pytest.approx(0.0, abs=1e-12)
