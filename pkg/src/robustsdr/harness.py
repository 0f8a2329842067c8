"""Instance generation and Monte Carlo sweeps of power versus target SINR."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import ProblemInstance, db_to_linear
from .duality import verify_proposition1
from .sdp_solver import SolverOptions, Status

log = logging.getLogger(__name__)

WORKERS_ENV = "ROBUSTSDR_WORKERS"
SEED_MASK = (1 << 64) - 1

RECORD_COLUMNS = ("gamma_db", "trial", "seed", "status", "power", "power_db", "rel_gap",
                  "max_rank_ratio", "min_margin", "condition1", "wall_time_ms")
AGGREGATE_COLUMNS = ("gamma_db", "trials", "optimal", "infeasible", "failed",
                     "feasibility_rate", "mean_power", "mean_power_db")
AGGREGATE_POLICY = ("# mean_power averages the power of Optimal records only; "
                    "infeasible and failed trials are counted but excluded; "
                    "mean_power_db = 10*log10(mean_power)")


def channel_estimates(nt: int, k: int, seed: int) -> np.ndarray:
    """``(k, nt)`` i.i.d. CN(0, 1) entries.

    Each user has its own Philox stream, keyed by the seed with the user index
    in the counter, so a user's row does not depend on ``k``.
    """
    key = int(seed) & SEED_MASK
    out = np.empty((k, nt), dtype=complex)
    for i in range(k):
        gen = np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, i]))
        z = gen.standard_normal((nt, 2)) / np.sqrt(2.0)
        out[i] = z[:, 0] + 1j * z[:, 1]
    return out


def generate_instance(nt: int, k: int, sigma2: float, radius: float, gamma_db: float,
                      seed: int) -> ProblemInstance:
    if nt < 1 or k < 1:
        raise ValueError("nt and k must be positive")
    return ProblemInstance(hbar=channel_estimates(nt, k, seed), radius=radius, noise=sigma2,
                           sinr_target=db_to_linear(gamma_db))


@dataclass
class SweepConfig:
    nt: int = 4
    k: int = 4
    sigma2: float = 0.1
    radius: float = 0.1
    gamma_db_grid: list = field(default_factory=lambda: [0.0, 2.0, 4.0, 6.0, 8.0])
    trials: int = 100
    seed: int = 0
    workers: int | None = None
    probe: bool = True
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gamma_db_grid = [float(g) for g in self.gamma_db_grid]
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.gamma_db_grid:
            raise ValueError("gamma_db_grid must not be empty")
        if any(b <= a for a, b in zip(self.gamma_db_grid, self.gamma_db_grid[1:])):
            raise ValueError("gamma_db_grid must be strictly ascending")
        if self.nt < 1 or self.k < 1 or self.sigma2 <= 0 or self.radius < 0:
            raise ValueError("need nt, k >= 1, sigma2 > 0 and radius >= 0")
        SolverOptions(**self.solver)  # reject unknown solver keys early

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config field(s): {', '.join(sorted(extra))}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValueError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "SweepConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def trial_seed(self, trial: int) -> int:
        # one channel draw per trial, shared across the gamma grid
        return (int(self.seed) + trial) & SEED_MASK

    def worker_count(self) -> int:
        env = os.environ.get(WORKERS_ENV)
        if env:
            return max(1, int(env))
        if self.workers:
            return max(1, int(self.workers))
        return os.cpu_count() or 1


@dataclass
class SweepRecord:
    gamma_db: float
    trial: int
    seed: int
    status: str
    power: float = float("nan")
    power_db: float = float("nan")
    rel_gap: float = float("nan")
    max_rank_ratio: float = float("nan")
    min_margin: float = float("nan")
    condition1: str = ""
    wall_time_ms: float = 0.0

    def row(self) -> list:
        return [_fmt(getattr(self, c)) for c in RECORD_COLUMNS]


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if np.isnan(v) else repr(v)
    return str(v)


def run_trial(cfg: SweepConfig, gamma_index: int, trial: int) -> SweepRecord:
    gamma_db = cfg.gamma_db_grid[gamma_index]
    seed = cfg.trial_seed(trial)
    t0 = time.perf_counter()
    rec = SweepRecord(gamma_db, trial, seed, Status.NUMERICAL_FAILURE.value)
    try:
        inst = generate_instance(cfg.nt, cfg.k, cfg.sigma2, cfg.radius, gamma_db, seed)
        rep = verify_proposition1(inst, SolverOptions(**cfg.solver), probe=cfg.probe,
                                  probe_seed=seed)
        v = rep.values
        rec.status = rep.status
        if rep.status == Status.OPTIMAL.value:
            rec.power = float(v["primal_obj"])
            rec.power_db = float(10 * np.log10(rec.power))
            rec.rel_gap = float(v["rel_gap"])
            rec.max_rank_ratio = float(v["max_rank_ratio"])
            rec.min_margin = float(v.get("min_margin", float("nan")))
            rec.condition1 = v.get("condition1") or ""
    except Exception as exc:  # a trial never aborts the sweep
        log.exception("trial %d at %.3g dB failed: %s", trial, gamma_db, exc)
    rec.wall_time_ms = 1e3 * (time.perf_counter() - t0)
    return rec


def _run_job(args):
    return run_trial(*args)


def aggregate(cfg: SweepConfig, records) -> list[dict]:
    rows = []
    for g in cfg.gamma_db_grid:
        recs = [r for r in records if r.gamma_db == g]
        ok = [r.power for r in recs if r.status == Status.OPTIMAL.value]
        infeasible = sum(r.status == Status.PRIMAL_INFEASIBLE.value for r in recs)
        mean = float(np.mean(ok)) if ok else float("nan")
        rows.append({
            "gamma_db": g,
            "trials": len(recs),
            "optimal": len(ok),
            "infeasible": infeasible,
            "failed": len(recs) - len(ok) - infeasible,
            "feasibility_rate": len(ok) / len(recs) if recs else float("nan"),
            "mean_power": mean,
            "mean_power_db": float(10 * np.log10(mean)) if ok else float("nan"),
        })
    return rows


def run_sweep(cfg: SweepConfig, workers: int | None = None):
    """Run every (gamma, trial) pair; returns ``(records, aggregate_rows)``.

    Records come back sorted by (gamma index, trial) whatever the worker count.
    """
    jobs = [(cfg, gi, t) for gi in range(len(cfg.gamma_db_grid)) for t in range(cfg.trials)]
    n = workers or cfg.worker_count()
    if n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            records = list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * n))))
    else:
        records = [run_trial(*j) for j in jobs]
    index = {g: i for i, g in enumerate(cfg.gamma_db_grid)}
    records.sort(key=lambda r: (index[r.gamma_db], r.trial))
    return records, aggregate(cfg, records)


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def aggregate_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(AGGREGATE_POLICY + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in AGGREGATE_COLUMNS])
    return buf.getvalue()


def write_sweep(out_dir, cfg: SweepConfig, records, rows) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec_path, agg_path = out / "records.csv", out / "aggregate.csv"
    rec_path.write_text(records_csv(records))
    agg_path.write_text(aggregate_csv(rows))
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=2) + "\n")
    return rec_path, agg_path


def read_records(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
