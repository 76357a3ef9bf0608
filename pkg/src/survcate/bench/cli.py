"""``bench`` command line: run, summarize, plot, list-dgps, calibrate-t0."""
from __future__ import annotations

import argparse
import json
import sys

from survcate.bench.config import load_config
from survcate.bench.plot import emit_boxplots
from survcate.bench.runner import run_benchmark
from survcate.bench.summary import read_summary, summarize, write_summary
from survcate.dgp import CALIBRATION, DgpSpec, calibrate_t0, family, get_dgp, known_dgp_ids


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _csv_list(text: str) -> list:
    return [s.strip() for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bench", description="Survival CATE metalearner simulation benchmark")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the Monte-Carlo study")
    run.add_argument("--config", required=True, help="config file or shipped profile (desk, paper)")
    run.add_argument("--dgp", nargs="+", action="extend", help="DGP ids (replaces the config list)")
    run.add_argument("--estimators", type=_csv_list, help="comma-separated acronyms, e.g. RLL,XFF")
    run.add_argument("--replicates", type=int)
    run.add_argument("--seed", type=int, help="base seed")
    run.add_argument("--workers", type=int)
    run.add_argument("--n-train", type=int)
    run.add_argument("--n-test", type=int)
    run.add_argument("--num-trees", type=int)
    run.add_argument("--t0", type=float, help="override every DGP's horizon")
    run.add_argument("--timings", action="store_true", help="add a fit_seconds column")
    run.add_argument("--out", help="results CSV path")
    run.add_argument("--quiet", action="store_true")

    summ = sub.add_parser("summarize", help="percentile summary of a results CSV")
    summ.add_argument("--in", dest="inp", required=True)
    summ.add_argument("--out", required=True)

    plot = sub.add_parser("plot", help="SVG boxplots of a summary CSV")
    plot.add_argument("--in", dest="inp", required=True)
    plot.add_argument("--out", required=True)
    plot.add_argument("--metric", choices=("rrmse", "kendall_tau"), default="rrmse")

    sub.add_parser("list-dgps", help="list the simulation scenarios")

    cal = sub.add_parser("calibrate-t0", help="horizon matching the family's heterogeneity ratio")
    cal.add_argument("--dgp", required=True)
    cal.add_argument("--target", type=float, help="target sd(tau)/sd(mu0); defaults to the family's")
    cal.add_argument("--mc-n", type=int, default=100_000)
    cal.add_argument("--seed", type=int, default=20240101)
    return parser


def _cmd_run(args) -> None:
    config = load_config(args.config).with_overrides(
        dgp_ids=tuple(args.dgp) if args.dgp else None,
        estimators=tuple(args.estimators) if args.estimators else None,
        replicates=args.replicates, base_seed=args.seed, workers=args.workers,
        n_train=args.n_train, n_test=args.n_test, num_trees=args.num_trees,
        t0_override=args.t0, output_path=args.out,
        record_timings=True if args.timings else None)

    def progress(row):
        status = row.error or f"rrmse={row.rrmse:.4f}"
        print(f"{row.dgp_id} {row.estimator} #{row.replicate}: {status}", file=sys.stderr)

    rows = run_benchmark(config, progress=None if args.quiet else progress)
    n_err = sum(1 for r in rows if r.error)
    print(f"wrote {len(rows)} rows ({n_err} errors) to {config.output_path}")


def _cmd_summarize(args) -> None:
    summary = summarize(args.inp)
    write_summary(summary, args.out)
    print(f"wrote {len(summary)} summary rows to {args.out}")


def _cmd_plot(args) -> None:
    emit_boxplots(read_summary(args.inp), args.out, args.metric)
    print(f"wrote {args.out}")


def _cmd_list(args) -> None:
    for dgp_id in known_dgp_ids():
        spec = get_dgp(dgp_id)
        print(f"{dgp_id}\tt0={spec.t0:g}\te={spec.e:g}\tcensoring={spec.censoring.kind}")


def _cmd_calibrate(args) -> None:
    spec = get_dgp(args.dgp)
    fam = family(spec.risk_kind, spec.tau_kind)
    if args.target is None:
        # the family's horizon is fixed on its calibration process, not on each scenario
        (risk, tau), target = CALIBRATION[fam]
        spec = DgpSpec(risk_kind=risk, tau_kind=tau)
    else:
        target = args.target
    t0 = calibrate_t0(spec, target, mc_n=args.mc_n, seed=args.seed)
    print(json.dumps({"dgp_id": args.dgp, "family": fam, "calibrated_on": [spec.risk_kind, spec.tau_kind],
                      "target_ratio": target, "t0": t0}))


_COMMANDS = {"run": _cmd_run, "summarize": _cmd_summarize, "plot": _cmd_plot,
             "list-dgps": _cmd_list, "calibrate-t0": _cmd_calibrate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _COMMANDS[args.command](args)
    except (CliError, ValueError, KeyError, OSError, RuntimeError) as exc:
        kind = "usage" if isinstance(exc, CliError) else type(exc).__name__
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(json.dumps({"error": kind, "message": msg}), file=sys.stderr)
        return 2 if isinstance(exc, CliError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
