import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose

from robustsdr import harness
from robustsdr.harness import (AGGREGATE_COLUMNS, AGGREGATE_POLICY, RECORD_COLUMNS, SweepConfig,
                               aggregate, channel_estimates, generate_instance, read_records,
                               records_csv, run_sweep, run_trial, write_sweep)


def small_config(**kw):
    base = dict(nt=2, k=2, trials=3, gamma_db_grid=[0.0, 4.0, 12.0], seed=7, probe=False,
                workers=1)
    base.update(kw)
    return SweepConfig(**base)


def strip_wall_time(text):
    rows = list(csv.reader(text.splitlines()))
    col = rows[0].index("wall_time_ms")
    return [r[:col] + r[col + 1:] for r in rows]


class TestGenerator:
    def test_deterministic(self):
        a = generate_instance(4, 4, 0.1, 0.1, 4.0, 123)
        b = generate_instance(4, 4, 0.1, 0.1, 4.0, 123)
        assert np.array_equal(a.hbar, b.hbar)
        assert not np.array_equal(a.hbar, generate_instance(4, 4, 0.1, 0.1, 4.0, 124).hbar)

    def test_user_rows_do_not_depend_on_k(self):
        assert np.array_equal(channel_estimates(3, 2, 9), channel_estimates(3, 5, 9)[:2])

    def test_unit_variance(self):
        z = channel_estimates(1000, 100, 2024).ravel()
        assert z.size == 100_000
        assert 0.98 <= np.var(z) <= 1.02
        assert abs(np.var(z.real) - 0.5) <= 0.01 and abs(np.var(z.imag) - 0.5) <= 0.01
        assert abs(z.mean()) <= 0.01

    def test_default_protocol(self):
        cfg = SweepConfig()
        assert (cfg.nt, cfg.k, cfg.sigma2, cfg.radius) == (4, 4, 0.1, 0.1)
        assert cfg.gamma_db_grid == [0.0, 2.0, 4.0, 6.0, 8.0]
        inst = generate_instance(cfg.nt, cfg.k, cfg.sigma2, cfg.radius, 4.0, 0)
        assert_allclose(inst.sinr_target, 10 ** 0.4)
        assert_allclose(inst.noise, 0.1) and inst.hbar.shape == (4, 4)

    def test_invalid(self):
        with pytest.raises(ValueError):
            generate_instance(0, 1, 0.1, 0.1, 0.0, 0)


class TestConfig:
    def test_unknown_field(self):
        with pytest.raises(ValueError, match="unknown config field"):
            SweepConfig.from_dict({"trials": 2, "colour": "red"})

    @pytest.mark.parametrize("kw", [dict(trials=0), dict(gamma_db_grid=[2.0, 1.0]),
                                    dict(gamma_db_grid=[]), dict(sigma2=0.0),
                                    dict(solver={"tolerance": 1})])
    def test_validation(self, kw):
        with pytest.raises((ValueError, TypeError)):
            SweepConfig(**kw)

    def test_json(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text('{"trials": 5, "seed": 3, "gamma_db_grid": [1, 2]}')
        cfg = SweepConfig.from_json(p)
        assert cfg.trials == 5 and cfg.gamma_db_grid == [1.0, 2.0]
        assert cfg.trial_seed(2) == 5

    def test_worker_count(self, monkeypatch):
        monkeypatch.delenv(harness.WORKERS_ENV, raising=False)
        assert SweepConfig(workers=3).worker_count() == 3
        monkeypatch.setenv(harness.WORKERS_ENV, "2")
        assert SweepConfig(workers=3).worker_count() == 2


class TestSweep:
    def test_scalar_closed_form(self):
        cfg = SweepConfig(nt=1, k=1, trials=1, gamma_db_grid=[3.0], seed=5, probe=False)
        records, rows = run_sweep(cfg, workers=1)
        h = abs(generate_instance(1, 1, 0.1, 0.1, 3.0, cfg.trial_seed(0)).hbar[0, 0])
        assert h > 0.1
        gamma = 10 ** 0.3
        assert records[0].status == "Optimal"
        assert_allclose(records[0].power, gamma * 0.1 / (h - 0.1) ** 2, rtol=1e-7)
        assert_allclose(rows[0]["mean_power"], records[0].power)

    def test_records_and_aggregate(self, tmp_path):
        cfg = small_config()
        records, rows = run_sweep(cfg, workers=1)
        assert [(r.gamma_db, r.trial) for r in records] == [
            (g, t) for g in cfg.gamma_db_grid for t in range(cfg.trials)]
        rec_path, agg_path = write_sweep(tmp_path, cfg, records, rows)
        assert rec_path.read_text().splitlines()[0] == ",".join(RECORD_COLUMNS)
        agg_lines = agg_path.read_text().splitlines()
        assert agg_lines[0] == AGGREGATE_POLICY
        assert agg_lines[1] == ",".join(AGGREGATE_COLUMNS)
        assert (tmp_path / "config.json").exists()

        # recompute the aggregate from the CSV alone
        table = read_records(rec_path)
        for row in rows:
            ok = [float(r["power"]) for r in table
                  if float(r["gamma_db"]) == row["gamma_db"] and r["status"] == "Optimal"]
            assert row["optimal"] == len(ok)
            if ok:
                assert_allclose(row["mean_power"], np.mean(ok), rtol=1e-15)
                assert_allclose(row["mean_power_db"], 10 * np.log10(np.mean(ok)), rtol=1e-15)
            else:
                assert np.isnan(row["mean_power"])
        rates = [row["feasibility_rate"] for row in rows]
        assert all(b <= a for a, b in zip(rates, rates[1:]))
        for r in records:
            if r.status == "Optimal":
                assert r.max_rank_ratio <= 1e-6

    def test_csv_deterministic_across_runs_and_workers(self):
        cfg = small_config(gamma_db_grid=[0.0, 6.0], trials=2)
        a = records_csv(run_sweep(cfg, workers=1)[0])
        b = records_csv(run_sweep(cfg, workers=1)[0])
        c = records_csv(run_sweep(cfg, workers=2)[0])
        assert strip_wall_time(a) == strip_wall_time(b) == strip_wall_time(c)

    def test_trial_failure_is_recorded(self, monkeypatch):
        def boom(*a, **k):
            raise RuntimeError("synthetic")
        monkeypatch.setattr(harness, "verify_proposition1", boom)
        rec = run_trial(small_config(), 0, 0)
        assert rec.status == "NumericalFailure" and np.isnan(rec.power)

    def test_aggregate_counts(self):
        cfg = small_config(gamma_db_grid=[1.0], trials=4)
        recs = [harness.SweepRecord(1.0, t, t, s, power=p) for t, (s, p) in enumerate(
            [("Optimal", 1.0), ("Optimal", 3.0), ("PrimalInfeasible", np.nan),
             ("NumericalFailure", np.nan)])]
        row = aggregate(cfg, recs)[0]
        assert (row["optimal"], row["infeasible"], row["failed"]) == (2, 1, 1)
        assert row["mean_power"] == 2.0 and row["feasibility_rate"] == 0.5
