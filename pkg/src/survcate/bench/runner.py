"""Monte-Carlo orchestration with deterministic, worker-count independent output."""
from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from threadpoolctl import threadpool_limits

from survcate.bench.config import BenchConfig
from survcate.dgp import get_dgp, sample
from survcate.forest import reference_forest_params
from survcate.learners import LearnerSettings, fit_cate, parse_estimator
from survcate.metrics import evaluate

CSV_VERSION_LINE = "# survival-cate results v1"
COLUMNS = ("dgp_id", "estimator", "replicate", "seed", "rrmse", "kendall_tau", "error")
TIMING_COLUMN = "fit_seconds"

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & _MASK
    return h


def cell_seed(base_seed: int, dgp_id: str, replicate: int) -> int:
    """64-bit seed of one (dgp, replicate) cell; shared by every estimator in the cell."""
    x = splitmix64((base_seed & _MASK) ^ fnv1a64(dgp_id.encode("utf-8")))
    return splitmix64(x ^ (replicate & _MASK))


def estimator_seed(seed: int, estimator: str) -> int:
    # the censoring suffix is ignored so -KM/-SF variants share their nuisance randomness
    base = estimator.partition("-")[0]
    return splitmix64(seed ^ fnv1a64(base.encode("utf-8")))


def holdout_seed(seed: int) -> int:
    return splitmix64(seed ^ fnv1a64(b"test"))


@dataclass(frozen=True)
class ResultRow:
    dgp_id: str
    estimator: str
    replicate: int
    seed: int
    rrmse: float | None
    kendall_tau: float | None
    error: str = ""
    fit_seconds: float | None = None

    @property
    def key(self):
        return (self.dgp_id, self.estimator, self.replicate)


# estimator failures (positivity, convergence, degenerate fits) become tagged rows
_RECOVERABLE = (ValueError, ArithmeticError, RuntimeError)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _error_tag(exc: BaseException) -> str:
    msg = " ".join(str(exc).split())
    return f"{type(exc).__name__}: {msg}" if msg else type(exc).__name__


def _cell_inputs(config: BenchConfig, dgp_id: str, replicate: int, seed: int | None):
    if seed is None:
        seed = cell_seed(config.base_seed, dgp_id, replicate)
    spec = get_dgp(dgp_id, t0=config.t0_override)
    train = sample(spec, config.n_train, seed=seed)
    test = sample(spec, config.n_test, seed=holdout_seed(seed))
    return seed, spec, train, test


def _fit_predict(config: BenchConfig, spec, estimator: str, seed: int, train, test):
    settings = LearnerSettings(forest=reference_forest_params(config.num_trees),
                               positivity_floor=config.positivity_floor)
    lspec = parse_estimator(estimator, spec.e, spec.t0)
    # only the training dataset reaches the fit
    model = fit_cate(lspec, train.dataset, seed=estimator_seed(seed, estimator) & (2**63 - 1),
                     settings=settings)
    return model.predict(test.dataset.covariates)


def predict_cell(config: BenchConfig, dgp_id: str, estimator: str, replicate: int,
                 seed: int | None = None) -> tuple:
    """Test-set CATE predictions of one cell and the matching true CATEs; errors propagate."""
    seed, spec, train, test = _cell_inputs(config, dgp_id, replicate, seed)
    return _fit_predict(config, spec, estimator, seed, train, test), test.true_cate


def run_cell(config: BenchConfig, dgp_id: str, estimator: str, replicate: int,
             seed: int | None = None) -> ResultRow:
    """Fit one estimator on one replicate and score it on an independent test set."""
    seed, spec, train, test = _cell_inputs(config, dgp_id, replicate, seed)
    started = time.perf_counter()
    try:
        pred = _fit_predict(config, spec, estimator, seed, train, test)
        elapsed = time.perf_counter() - started
        result = evaluate(pred, test.true_cate)
    except _RECOVERABLE as exc:
        elapsed = time.perf_counter() - started
        return ResultRow(dgp_id, estimator, replicate, seed, None, None, _error_tag(exc),
                         elapsed if config.record_timings else None)
    return ResultRow(dgp_id, estimator, replicate, seed, result.rrmse, result.kendall_tau, "",
                     elapsed if config.record_timings else None)


def work_units(config: BenchConfig) -> list:
    """Every (dgp, estimator, replicate) cell in canonical order."""
    return [(d, est, r) for d in sorted(config.dgp_ids) for est in sorted(config.estimators)
            for r in range(config.replicates)]


def _init_worker():
    threadpool_limits(1)


def _run_unit(args):
    config, dgp_id, estimator, replicate = args
    return run_cell(config, dgp_id, estimator, replicate)


def run_rows(config: BenchConfig, progress=None) -> list:
    units = work_units(config)
    jobs = [(config, *u) for u in units]
    rows = []
    if config.workers == 1:
        with threadpool_limits(1):
            for job in jobs:
                rows.append(_run_unit(job))
                if progress:
                    progress(rows[-1])
    else:
        with ProcessPoolExecutor(max_workers=config.workers, initializer=_init_worker) as pool:
            for row in pool.map(_run_unit, jobs):
                rows.append(row)
                if progress:
                    progress(row)
    return sorted(rows, key=lambda r: r.key)


def rows_to_csv(rows, record_timings: bool = False) -> str:
    buf = io.StringIO()
    buf.write(CSV_VERSION_LINE + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS + ((TIMING_COLUMN,) if record_timings else ()))
    for r in sorted(rows, key=lambda r: r.key):
        line = [r.dgp_id, r.estimator, r.replicate, r.seed, _fmt(r.rrmse), _fmt(r.kendall_tau),
                r.error]
        if record_timings:
            line.append(_fmt(r.fit_seconds))
        writer.writerow(line)
    return buf.getvalue()


def run_benchmark(config: BenchConfig, output_path: str | None = None, progress=None) -> list:
    """Run every cell of ``config`` and write the results CSV; returns the rows."""
    rows = run_rows(config, progress)
    path = Path(output_path or config.output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows, config.record_timings))
    return rows


def read_results(path) -> list:
    """Parse a results CSV written by :func:`run_benchmark`."""
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != CSV_VERSION_LINE:
            raise ValueError(f"{path}: not a results file (missing {CSV_VERSION_LINE!r})")
        reader = csv.DictReader(fh)
        missing = set(COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for rec in reader:
            fs = rec.get(TIMING_COLUMN)
            rows.append(ResultRow(
                rec["dgp_id"], rec["estimator"], int(rec["replicate"]), int(rec["seed"]),
                float(rec["rrmse"]) if rec["rrmse"] else None,
                float(rec["kendall_tau"]) if rec["kendall_tau"] else None,
                rec["error"], float(fs) if fs else None))
    return rows
