import csv

import numpy as np
import pytest

from kronsolve.cli import main as cli_main
from kronsolve.errors import InvalidInputError
from kronsolve.experiments import (
    ExperimentSpec,
    generate_synth_regression,
    generate_synth_tucker,
    run_regression_experiment,
    run_tucker_experiment,
)
from kronsolve.tensor_io import write_tensor


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestSynthGeneration:
    def test_sample_variance(self):
        factors, _ = generate_synth_regression(200, 50, 1, seed=0)
        var = float(np.var(factors[0]))
        assert 0.0005 <= var <= 0.0015
        assert abs(float(np.mean(factors[0])) - 1.0) <= 0.01

    def test_target_is_all_ones(self):
        _, b = generate_synth_regression(10, 3, 2, seed=1)
        assert b.shape == (100,)
        assert np.all(b == 1.0)

    def test_seed_determinism(self):
        f1, b1 = generate_synth_regression(16, 4, 2, seed=42)
        f2, b2 = generate_synth_regression(16, 4, 2, seed=42)
        for a, b in zip(f1, f2):
            assert np.array_equal(a, b)
        assert np.array_equal(b1, b2)

    def test_requires_tall_factors(self):
        with pytest.raises(InvalidInputError):
            generate_synth_regression(3, 5, 2, seed=0)

    def test_synth_tucker_noise_level(self):
        x = generate_synth_tucker((12, 12, 12), (3, 3, 3), 0.01, seed=0)
        assert x.shape == (12, 12, 12)
        clean = generate_synth_tucker((12, 12, 12), (3, 3, 3), 0.0, seed=0)
        rel = np.linalg.norm(x - clean) / np.linalg.norm(clean)
        assert 0.003 <= rel <= 0.03


class TestRegressionExperiment:
    def make_spec(self, **kw):
        base = dict(kind="synth-regression", n=32, d=4, order=2, lam=1e-3,
                    eps=0.1, delta=0.01, alpha=1e-3, seeds=(0, 1),
                    solvers=("naive", "kronmatmul", "sketch-solve", "fast"))
        base.update(kw)
        return ExperimentSpec(**base)

    def test_rows_and_ratios(self, tmp_path):
        out = tmp_path / "r.csv"
        rows = run_regression_experiment(self.make_spec(), out_path=out)
        assert len(rows) == 8
        for row in rows:
            assert row.status == "ok"
            if row.solver in ("naive", "kronmatmul"):
                assert abs(row.ratio - 1.0) <= 1e-9
            else:
                assert row.ratio >= 1.0 - 1e-9
        header = read_csv(out)[0]
        assert header[0] == "solver"

    def test_determinism_modulo_walltime(self, tmp_path):
        spec = self.make_spec()
        r1 = run_regression_experiment(spec, out_path=tmp_path / "a.csv")
        r2 = run_regression_experiment(spec, out_path=tmp_path / "b.csv")
        for a, b in zip(r1, r2):
            assert a.solver == b.solver and a.seed == b.seed
            assert a.loss == b.loss
            assert a.rows_sampled == b.rows_sampled

    def test_parallel_matches_serial(self):
        spec = self.make_spec()
        serial = run_regression_experiment(spec)
        par = run_regression_experiment(self.make_spec(parallel=True))
        for a, b in zip(serial, par):
            assert a.solver == b.solver and a.seed == b.seed
            assert a.loss == b.loss

    def test_desk_scale_fast_ratio(self):
        # benchmark-default eps/delta/lambda at theoretical sample counts
        spec = self.make_spec(n=128, d=8, alpha=1.0, seeds=(0,),
                              solvers=("kronmatmul", "fast"))
        rows = run_regression_experiment(spec)
        fast = [r for r in rows if r.solver == "fast"][0]
        assert fast.ratio <= 1.1

    def test_solver_error_recorded(self, tmp_path):
        # naive refuses: (d*d)^2 over the guard, run continues
        spec = self.make_spec(n=128, d=128, order=2, seeds=(0,),
                              solvers=("naive", "fast"), alpha=1e-5)
        rows = run_regression_experiment(spec)
        by = {r.solver: r for r in rows}
        assert by["naive"].status.startswith("error:")
        assert by["fast"].status == "ok"

    def test_spec_validation(self):
        with pytest.raises(InvalidInputError):
            self.make_spec(solvers=("bogus",))
        with pytest.raises(InvalidInputError):
            self.make_spec(n=2, d=4)
        with pytest.raises(InvalidInputError):
            self.make_spec(seeds=())


class TestTuckerExperiment:
    def test_synthetic_low_rank(self, tmp_path):
        spec = ExperimentSpec(kind="tucker", synth_shape=(20, 20, 20),
                              synth_rank=(4, 4, 4), noise=0.01,
                              core_shape=(4, 4, 4), lam=0.0, sweeps=5,
                              solver_mode="exact", seeds=(0,))
        out = tmp_path / "t.csv"
        _, report = run_tucker_experiment(spec, out_path=out)
        assert report.rre <= 0.02
        rows = read_csv(out)
        assert len(rows) == 5 + 1  # header + one row per sweep

    def test_full_rank_interpolation(self):
        spec = ExperimentSpec(kind="tucker", synth_shape=(6, 6, 6),
                              synth_rank=(6, 6, 6), noise=0.0,
                              core_shape=(6, 6, 6), lam=0.0, sweeps=1,
                              solver_mode="exact", seeds=(0,))
        _, report = run_tucker_experiment(spec)
        assert report.rre <= 1e-8

    def test_tensor_file_input(self, rng, tmp_path):
        x = rng.standard_normal((6, 5, 4))
        path = tmp_path / "x.ktn"
        write_tensor(path, x)
        spec = ExperimentSpec(kind="tucker", tensor_path=str(path),
                              core_shape=(2, 2, 2), lam=1e-2, sweeps=2,
                              solver_mode="exact", seeds=(0,))
        _, report = run_tucker_experiment(spec, out_path=tmp_path / "t.csv")
        assert len(report.sweep_losses) == 2

    def test_missing_file_is_io_error(self, tmp_path):
        spec = ExperimentSpec(kind="tucker", tensor_path=str(tmp_path / "nope"),
                              core_shape=(2, 2), sweeps=1, seeds=(0,))
        with pytest.raises(InvalidInputError) as err:
            run_tucker_experiment(spec)
        assert "nope" in str(err.value)


class TestCli:
    def test_synth_regression_command(self, tmp_path):
        out = tmp_path / "reg.csv"
        rc = cli_main(["synth-regression", "--n", "32", "--d", "4",
                       "--seeds", "0,1", "--alpha", "0.001",
                       "--solvers", "kronmatmul,fast", "--out", str(out)])
        assert rc == 0
        rows = read_csv(out)
        assert len(rows) == 1 + 4

    def test_tucker_command(self, tmp_path):
        out = tmp_path / "tuck.csv"
        rc = cli_main(["tucker", "--synthetic", "10,10,10",
                       "--true-rank", "3,3,3", "--core", "3,3,3",
                       "--sweeps", "2", "--out", str(out)])
        assert rc == 0
        rows = read_csv(out)
        assert rows[0] == ["sweep", "loss", "rre", "sweep_seconds"]
        assert len(rows) == 3

    def test_tucker_file_command(self, rng, tmp_path):
        x = rng.standard_normal((5, 4, 3))
        path = tmp_path / "x.ktn"
        write_tensor(path, x)
        out = tmp_path / "t.csv"
        rc = cli_main(["tucker", "--input", str(path), "--core", "2,2,2",
                       "--sweeps", "1", "--out", str(out)])
        assert rc == 0

    def test_check_command(self):
        assert cli_main(["check"]) == 0

    def test_thread_env_is_tolerated(self, tmp_path, monkeypatch):
        monkeypatch.setenv("KRONSOLVE_THREADS", "1")
        out = tmp_path / "reg.csv"
        rc = cli_main(["synth-regression", "--n", "16", "--d", "2",
                       "--solvers", "kronmatmul", "--out", str(out)])
        assert rc == 0


class TestDefaults:
    def test_spec_defaults_match_study_setup(self):
        spec = ExperimentSpec()
        assert spec.eps == 0.1
        assert spec.delta == 0.01
        assert spec.lam == 1e-3
        assert spec.alpha == 1e-5
        assert spec.sweeps == 5


class TestLargeInstance:
    def test_fast_solver_tracks_exact_at_table_scale(self):
        # the n^2 x d^2 regime of the loss tables: d = 64, n = 4096; the
        # sketch keeps ~0.002% of the rows and should stay near the optimum
        from kronsolve.solvers import (RegressionConfig,
                                       fast_kronecker_regression,
                                       kronmatmul_svd_solve)
        factors, b = generate_synth_regression(4096, 64, 2, seed=0)
        cfg = RegressionConfig(eps=0.1, delta=0.01, lam=1e-3, alpha=1e-5,
                               seed=0)
        rep = fast_kronecker_regression(factors, b, cfg)
        opt = kronmatmul_svd_solve(factors, b, 1e-3)
        assert 0 < rep.sample_count < 4096**2
        assert rep.loss <= 1.25 * opt.loss
