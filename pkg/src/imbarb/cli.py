"""Command-line front door chaining the pipeline stages.

Subcommands: ingest, synth-prices, train, distill, verify, backtest,
heatmap, compare, trace.  All but synth-prices take ``--config``; ``--seed``
overrides the config seed.  Exit codes: 0 success, 1 validation or runtime
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import datetime as dt
import sys
from pathlib import Path

from imbarb import agents
from imbarb.config import RunConfig, dump_config, load_config
from imbarb.controllers import RbcController, controller_from_checkpoint
from imbarb.correction.distill import train_student
from imbarb.correction.verify import GridSpec, verify_properties
from imbarb.market_data import (
    MarketDataError,
    RbcThresholds,
    SynthConfig,
    generate_synthetic_prices,
    load_price_csv,
    quartile_thresholds,
    split_dataset,
    write_price_csv,
)
from imbarb.nn import read_checkpoint, write_checkpoint


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imbarb",
        description="Battery energy arbitrage toolkit for imbalance settlement",
    )
    parser.add_argument(
        "--print-default-config",
        action="store_true",
        help="print the default config JSON and exit",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("ingest", help="validate a price CSV and report statistics")
    p.add_argument("--prices", required=True)
    p.add_argument("--histogram", help="write a settled-price histogram CSV here")
    p.add_argument("--bin-width", type=float, default=25.0)

    p = sub.add_parser("synth-prices", help="generate a synthetic price CSV")
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--level", type=float, default=80.0)
    p.add_argument("--reversion", type=float, default=0.02)
    p.add_argument("--noise", type=float, default=3.0)
    p.add_argument("--spike-prob", type=float, default=0.01)
    p.add_argument("--spike-lo", type=float, default=350.0)
    p.add_argument("--spike-hi", type=float, default=1400.0)
    p.add_argument("--start-date", type=dt.date.fromisoformat, default=dt.date(2023, 1, 1))

    p = sub.add_parser("train", help="train a dqn or ddqn agent")
    p.add_argument("--agent", choices=("dqn", "ddqn"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--prices", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curve", help="learning-curve CSV path (default: curve.csv next to --out)")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("distill", help="distill a trained agent into a constrained student")
    p.add_argument("--teacher", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--prices", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("verify", help="check the three policy properties on the probe grid")
    p.add_argument("--student", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--grid", help="JSON grid-spec file overriding the config grid")
    p.add_argument("--out", help="write the violation reports JSON here")

    p = sub.add_parser("backtest", help="greedy rollout of one controller over a price file")
    p.add_argument("--controller", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--prices", required=True)
    p.add_argument("--out", help="per-day profit CSV")

    p = sub.add_parser("heatmap", help="greedy action over the (price, soc) grid")
    p.add_argument("--controller", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--prices", help="needed only for rbc threshold fitting")
    p.add_argument("--grid", help="JSON grid-spec file overriding the config grid")
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("compare", help="backtest several controllers on one price file")
    p.add_argument("--controllers", required=True, help="comma list: rbc or checkpoint paths; append @layer for the with-layer student path")
    p.add_argument("--config", required=True)
    p.add_argument("--prices", required=True)
    p.add_argument("--out", default="comparison.csv")

    p = sub.add_parser("trace", help="per-step trace of one controller on one day")
    p.add_argument("--controller", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--prices", required=True)
    p.add_argument("--day", type=dt.date.fromisoformat, required=True)
    p.add_argument("--out", help="trace CSV (default trace_<day>.csv)")
    return parser


def _load_series(path):
    series, dropped = load_price_csv(path)
    if dropped:
        print(f"warning: dropped {dropped} incomplete day(s)", file=sys.stderr)
    return series


def _rbc_thresholds(config: RunConfig, series) -> RbcThresholds:
    if config.rbc_thresholds is not None:
        lower, upper = config.rbc_thresholds
        return RbcThresholds(lower=lower, upper=upper)
    if series is None:
        raise ValueError("rbc controller needs --prices or rbc_thresholds in the config")
    train = split_dataset(series).train
    return quartile_thresholds(train if train.n_days else series)


def _controller(spec: str, config: RunConfig, series):
    if spec == "rbc":
        return RbcController(_rbc_thresholds(config, series))
    with_layer = spec.endswith("@layer")
    path = spec[: -len("@layer")] if with_layer else spec
    ckpt = read_checkpoint(path)
    controller = controller_from_checkpoint(ckpt, with_layer=with_layer)
    stem = Path(path).name.split(".")[0]
    controller.name = f"{stem}-layer" if with_layer else stem
    return controller


def _resolved_config(args) -> RunConfig:
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = config.with_seed(args.seed)
    return config


def _grid(args, config: RunConfig) -> GridSpec:
    if getattr(args, "grid", None):
        import json

        with open(args.grid) as fh:
            return GridSpec.from_dict(json.load(fh))
    return config.grid


def _cmd_ingest(args) -> int:
    series, dropped = load_price_csv(args.prices)
    print(f"days: {series.n_days}")
    print(f"dropped_incomplete_days: {dropped}")
    if series.n_days:
        thresholds = quartile_thresholds(series)
        print(f"settled_price_quartiles: {thresholds.lower:.2f} {thresholds.upper:.2f}")
    if args.histogram:
        from imbarb.evaluate import price_histogram

        price_histogram(series, args.bin_width).to_csv(args.histogram)
        print(f"histogram: {args.histogram}")
    return 0


def _cmd_synth(args) -> int:
    config = SynthConfig(
        days=args.days,
        level=args.level,
        reversion_rate=args.reversion,
        noise_scale=args.noise,
        spike_prob=args.spike_prob,
        spike_magnitude=(args.spike_lo, args.spike_hi),
        start_date=args.start_date,
    )
    series = generate_synthetic_prices(config, args.seed)
    write_price_csv(series, args.out)
    print(f"wrote {series.n_days} day(s) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _resolved_config(args)
    series = _load_series(args.prices)
    split = split_dataset(series)
    ckpt, curve = agents.train(args.agent, split, config.battery, config.train)
    write_checkpoint(ckpt, args.out)
    curve_path = args.curve or str(Path(args.out).with_name("curve.csv"))
    curve.to_csv(curve_path)
    print(f"checkpoint: {args.out}")
    print(f"curve: {curve_path}")
    return 0


def _cmd_distill(args) -> int:
    config = _resolved_config(args)
    series = _load_series(args.prices)
    split = split_dataset(series)
    teacher = read_checkpoint(args.teacher)
    student = train_student(
        teacher,
        split,
        config.constraints,
        epochs=config.distill.epochs,
        learning_rate=config.distill.learning_rate,
        seed=config.seed,
        params=config.battery,
        options=config.distill_options,
    )
    write_checkpoint(student, args.out)
    print(f"student checkpoint: {args.out}")
    return 0


def _cmd_verify(args) -> int:
    config = _resolved_config(args)
    grid = _grid(args, config)
    ckpt = read_checkpoint(args.student)
    reports = {}
    for mode, with_layer in (("with_layer", True), ("layer_free", False)):
        controller = controller_from_checkpoint(ckpt, with_layer=with_layer)
        report = verify_properties(controller.act_batch, grid, config.constraints)
        reports[mode] = report
        print(
            f"{mode}: P1={report.p1_count} P2={report.p2_count} P3={report.p3_count} "
            f"of {report.total_states} states"
        )
    if args.out:
        import json

        doc = {mode: json.loads(r.to_json()) for mode, r in reports.items()}
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
        print(f"report: {args.out}")
    return 0 if reports["with_layer"].passed else 1


def _cmd_backtest(args) -> int:
    from imbarb.evaluate import backtest

    config = _resolved_config(args)
    series = _load_series(args.prices)
    controller = _controller(args.controller, config, series)
    report = backtest(controller, series, config.battery, config.initial_soc)
    print(f"controller: {controller.name}")
    print(f"days: {report.day_count}")
    print(f"total_profit_eur: {report.total_profit:.2f}")
    print(f"profit_eur_per_day_per_mwh: {report.profit_per_day_per_mwh:.4f}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("day,profit_eur,final_soc\n")
            for row in report.per_day:
                fh.write(f"{row.day.isoformat()},{row.profit!r},{row.final_soc!r}\n")
        print(f"report: {args.out}")
    return 0


def _cmd_heatmap(args) -> int:
    from imbarb.evaluate import policy_heatmap

    config = _resolved_config(args)
    series = _load_series(args.prices) if args.prices else None
    controller = _controller(args.controller, config, series)
    grid = _grid(args, config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for table in policy_heatmap(controller, grid):
        minute, qh, month = table.context
        path = out_dir / f"heatmap_m{minute}_qh{qh}_mo{month}.csv"
        table.to_csv(path)
        print(f"heatmap: {path}")
    return 0


def _cmd_compare(args) -> int:
    from imbarb.evaluate import compare_controllers

    config = _resolved_config(args)
    series = _load_series(args.prices)
    controllers = {}
    for spec in args.controllers.split(","):
        controller = _controller(spec.strip(), config, series)
        controllers[controller.name] = controller
    table = compare_controllers(controllers, series, config.battery, config.initial_soc)
    table.to_csv(args.out)
    for name, profit in zip(table.names, table.profits):
        print(f"{name}: {profit:.4f} EUR/day/MWh")
    print(f"comparison: {args.out}")
    return 0


def _cmd_trace(args) -> int:
    from imbarb.evaluate import day_trace

    config = _resolved_config(args)
    series = _load_series(args.prices)
    controller = _controller(args.controller, config, series)
    table = day_trace(controller, series, args.day, config.battery, config.initial_soc)
    out = args.out or f"trace_{args.day.isoformat()}.csv"
    table.to_csv(out)
    print(f"steps: {len(table.rows)}")
    print(f"total_reward_eur: {table.total_reward:.4f}")
    print(f"trace: {out}")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "synth-prices": _cmd_synth,
    "train": _cmd_train,
    "distill": _cmd_distill,
    "verify": _cmd_verify,
    "backtest": _cmd_backtest,
    "heatmap": _cmd_heatmap,
    "compare": _cmd_compare,
    "trace": _cmd_trace,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.print_default_config:
        print(dump_config(RunConfig()))
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except (MarketDataError, ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
