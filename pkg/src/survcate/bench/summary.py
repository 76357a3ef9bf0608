"""Percentile summaries of a results CSV."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from survcate.bench.runner import read_results
from survcate.metrics import PERCENTILES, percentile_summary

SUMMARY_VERSION_LINE = "# survival-cate summary v1"
METRICS = ("rrmse", "kendall_tau")
_LABELS = tuple(f"p{round(100 * q)}" for q in PERCENTILES)


@dataclass(frozen=True)
class SummaryRow:
    dgp_id: str
    estimator: str
    n_rows: int
    n_errors: int
    n_tau_undefined: int
    rrmse: tuple | None        # percentiles, None when every row errored
    kendall_tau: tuple | None


def _percentiles(values):
    return tuple(float(v) for v in percentile_summary(values)) if values else None


def summarize_rows(rows) -> list:
    groups = {}
    for r in rows:
        groups.setdefault((r.dgp_id, r.estimator), []).append(r)
    out = []
    for (dgp_id, est), members in sorted(groups.items()):
        ok = [r for r in members if not r.error]
        taus = [r.kendall_tau for r in ok if r.kendall_tau is not None]
        out.append(SummaryRow(
            dgp_id, est, len(members), len(members) - len(ok), len(ok) - len(taus),
            _percentiles([r.rrmse for r in ok]), _percentiles(taus)))
    return out


def summarize(csv_path) -> list:
    """Per (dgp, estimator) percentiles of each metric; errored rows are counted, not summarized."""
    return summarize_rows(read_results(csv_path))


def summary_header() -> list:
    cols = ["dgp_id", "estimator", "n_rows", "n_errors", "n_tau_undefined"]
    for m in METRICS:
        cols += [f"{m}_{lab}" for lab in _LABELS]
    return cols


def summary_to_csv(summary) -> str:
    buf = io.StringIO()
    buf.write(SUMMARY_VERSION_LINE + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(summary_header())
    for s in summary:
        line = [s.dgp_id, s.estimator, s.n_rows, s.n_errors, s.n_tau_undefined]
        for m in METRICS:
            vals = getattr(s, m)
            line += [repr(v) for v in vals] if vals is not None else [""] * len(_LABELS)
        writer.writerow(line)
    return buf.getvalue()


def write_summary(summary, path) -> None:
    Path(path).write_text(summary_to_csv(summary), encoding="utf-8")


def read_summary(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        if fh.readline().rstrip("\n") != SUMMARY_VERSION_LINE:
            raise ValueError(f"{path}: not a summary file")
        reader = csv.DictReader(fh)
        out = []
        for rec in reader:
            metrics = {}
            for m in METRICS:
                cells = [rec[f"{m}_{lab}"] for lab in _LABELS]
                metrics[m] = tuple(float(c) for c in cells) if all(cells) else None
            out.append(SummaryRow(rec["dgp_id"], rec["estimator"], int(rec["n_rows"]),
                                  int(rec["n_errors"]), int(rec["n_tau_undefined"]),
                                  metrics["rrmse"], metrics["kendall_tau"]))
    return out


def median_of(rows, dgp_id: str, estimator: str, metric: str = "rrmse") -> float:
    """Median of ``metric`` over the successful rows of one cell; nan if none succeeded."""
    vals = [getattr(r, metric) for r in rows
            if r.dgp_id == dgp_id and r.estimator == estimator and not r.error
            and getattr(r, metric) is not None]
    return float(np.median(vals)) if vals else float("nan")
