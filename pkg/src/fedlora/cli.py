"""Command-line entry points: run, sweep, check, partition-dump.

Exit codes: 0 ok, 1 I/O failure, 2 diverged run, 3 oracle failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields

from . import check, fed, tasks
from .config import ExperimentConfig, parse_config, serialize_config
from .linalg import ContractViolation
from .metrics import csv_header, csv_row, stability_sweep


def _str2bool(value: str) -> bool:
    if value.lower() in ("true", "1", "yes"):
        return True
    if value.lower() in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {value!r}")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file; flags override its keys")
    types = {"int": int, "float": float, "str": str, "bool": _str2bool}
    for f in fields(ExperimentConfig):
        parser.add_argument(
            f"--{f.name.replace('_', '-')}",
            dest=f.name,
            type=types[f.type],
            default=None,
            help=f"override config key {f.name}",
        )


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(ExperimentConfig)
        if getattr(args, f.name, None) is not None
    }
    return parse_config(args.config, overrides)


def _echo_config(cfg: ExperimentConfig) -> None:
    print("# resolved config", file=sys.stderr)
    for line in serialize_config(cfg).strip().splitlines():
        print(f"#   {line}", file=sys.stderr)
    print(f"#   (resolved gamma = {cfg.gamma():.9g})", file=sys.stderr)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    _echo_config(cfg)
    try:
        out = open(args.out, "w", newline="")
    except OSError as exc:
        print(f"cannot open {args.out}: {exc}", file=sys.stderr)
        return 1
    with out:
        out.write(csv_header(cfg.layers) + "\n")
        out.flush()

        def write(record):
            out.write(csv_row(cfg, record) + "\n")
            out.flush()

        result = fed.run_experiment(cfg, parallel=args.parallel, on_record=write)
    print(f"verdict: {result.verdict}", file=sys.stderr)
    return 2 if result.verdict == "diverged" else 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    _echo_config(cfg)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        print(f"bad --values list: {args.values!r}", file=sys.stderr)
        return 1
    if not values:
        print("empty --values list", file=sys.stderr)
        return 1
    report = stability_sweep(cfg, args.axis, values, parallel=args.parallel)
    try:
        with open(args.out, "w", newline="") as out:
            out.write(csv_header(cfg.layers, swept=True) + "\n")
            for value, records in zip(report.values, report.runs):
                from dataclasses import replace

                run_cfg = replace(cfg, **({"rank": value} if args.axis == "rank" else {"n_clients": value}))
                for record in records:
                    out.write(csv_row(run_cfg, record, swept_value=value) + "\n")
        summary_path = args.summary or (args.out.rsplit(".", 1)[0] + ".summary.csv")
        with open(summary_path, "w", newline="") as out:
            out.write("axis,values,flatness_ratio,loglog_slope,final_losses,verdicts\n")
            out.write(
                ",".join(
                    [
                        report.axis,
                        ";".join(str(v) for v in report.values),
                        "%.9g" % report.flatness_ratio,
                        "%.9g" % report.loglog_slope,
                        ";".join("%.9g" % x for x in report.final_losses),
                        ";".join(report.verdicts),
                    ]
                )
                + "\n"
            )
    except OSError as exc:
        print(f"cannot write sweep output: {exc}", file=sys.stderr)
        return 1
    print(
        f"sweep {report.axis}: flatness ratio {report.flatness_ratio:.4g}, "
        f"log-log slope {report.loglog_slope:.4g}",
        file=sys.stderr,
    )
    if any(v == "diverged" for v in report.verdicts):
        return 2
    return 0


def cmd_check(_args: argparse.Namespace) -> int:
    results = check.run_all()
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name.ljust(width)}  {status}  {r.detail}")
    failing = [r for r in results if not r.passed]
    if failing:
        first = failing[0]
        print(f"first failure in suite {first.name}: {first.failure_inputs}", file=sys.stderr)
        return 3
    return 0


def cmd_partition_dump(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    _server, clients, _val, root = fed.build_experiment(cfg)
    # rebuild the dataset/partition the same way the experiment did
    import numpy as np

    total = cfg.n_samples + cfg.val_samples
    if cfg.task == tasks.CLASSIFICATION:
        full = tasks.make_classification(total, cfg.dim_k, cfg.classes, root.child(0))
    else:
        full = tasks.make_regression(total, cfg.dim_k, cfg.dim_d, cfg.noise_std, root.child(0))
    train = full.subset(np.arange(cfg.n_samples))
    if cfg.partition == "dirichlet":
        part = tasks.partition_dirichlet(train, cfg.n_clients, cfg.dirichlet_beta, root.child(1))
    else:
        part = tasks.partition_iid(train, cfg.n_clients, root.child(1))
    try:
        tasks.dump_dataset(train, part, args.out)
    except OSError as exc:
        print(f"cannot write {args.out}: {exc}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedlora",
        description="Desk-scale federated low-rank adapter simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment and write a metrics CSV")
    _add_config_flags(p_run)
    p_run.add_argument("--out", default="metrics.csv", help="metrics CSV path")
    p_run.add_argument("--parallel", action="store_true", help="train clients in threads")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep rank or client count")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--axis", choices=("rank", "clients"), required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated sweep values")
    p_sweep.add_argument("--out", default="sweep.csv", help="sweep CSV path")
    p_sweep.add_argument("--summary", help="summary CSV path (default <out>.summary.csv)")
    p_sweep.add_argument("--parallel", action="store_true")
    p_sweep.set_defaults(func=cmd_sweep)

    p_check = sub.add_parser("check", help="run the oracle suites")
    p_check.set_defaults(func=cmd_check)

    p_dump = sub.add_parser("partition-dump", help="dump the dataset and client partition")
    _add_config_flags(p_dump)
    p_dump.add_argument("--out", default="partition.csv")
    p_dump.set_defaults(func=cmd_partition_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
