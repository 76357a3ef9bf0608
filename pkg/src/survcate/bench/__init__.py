"""Simulation benchmark: configuration, orchestration, summaries and plots."""
from survcate.bench.config import BenchConfig, load_config, parse_config
from survcate.bench.plot import emit_boxplots, render_svg
from survcate.bench.runner import (
    ResultRow, cell_seed, predict_cell, read_results, run_benchmark, run_cell,
)
from survcate.bench.summary import SummaryRow, read_summary, summarize, write_summary

__all__ = [
    "BenchConfig",
    "ResultRow",
    "SummaryRow",
    "cell_seed",
    "emit_boxplots",
    "load_config",
    "predict_cell",
    "parse_config",
    "read_results",
    "read_summary",
    "render_svg",
    "run_benchmark",
    "run_cell",
    "summarize",
    "write_summary",
]
