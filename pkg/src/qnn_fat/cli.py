"""Command-line front end: ``qnn-fat train | sweep | pareto | report``.

Examples:
  qnn-fat train --config fat2.yaml --out-dir results
  qnn-fat sweep --config fat2.yaml --workers 8 \\
      --checkpoint results/cnv-s_w1a1_fat2_p5_channel.qfat
  qnn-fat pareto --config fat2.yaml \\
      --report results/cnv-s_w1a1_fat2_p5_channel_channel_sweep.json \\
      --checkpoint results/cnv-s_w1a1_fat2_p5_channel.qfat
  qnn-fat report results/*_channel_sweep.json --out-dir results

Exit codes: 0 success, 1 unexpected error, 2 configuration, 3 file format,
4 missing file, 5 training divergence.
"""

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .checkpoint import load_checkpoint
from .config import ExperimentConfig, dump_config, load_config
from .datasets import load_dataset
from .debug_logger import StringLogger
from .errors import ConfigurationError, QnnFatError
from .evaluation import (
    read_report_json,
    summarize,
    sweep,
    write_report_csv,
    write_report_json,
    write_scatter_csv,
    write_summary_csv,
)
from .replication import CostModel, pareto_frontier, write_frontier_csv, write_frontier_json
from .seeding import stream
from .training import train

IO_EXIT_CODE = 4


def cmd_train(
    config: ExperimentConfig, out_dir: Path, progress: bool = False, debug: bool = False,
    logger=None,
) -> List[Path]:
    """Train one network; writes the checkpoint, the epoch log and the config used."""
    data = load_dataset(config.data_path, config.dataset_format, config.dataset)
    train_config = config.to_train_config()
    result = train(train_config, data, checkpoint_dir=out_dir, progress=progress,
                   debug=debug, logger=logger)
    run = train_config.run_name
    return [
        out_dir / f"{run}.qfat",
        result.log.write_csv(out_dir / f"{run}_train_log.csv"),
        dump_config(config, out_dir / f"{run}_config.yaml"),
    ]


def cmd_sweep(
    checkpoint: Path, mode: str, config: ExperimentConfig, out_dir: Path, workers: int = 1,
    progress: bool = False, debug: bool = False, logger=None,
) -> List[Path]:
    """Sweep a checkpoint; writes the per-configuration CSV, the JSON report and a summary."""
    net, _ = load_checkpoint(checkpoint)
    data = load_dataset(config.data_path, config.dataset_format, config.dataset)
    eval_set = data.test.subset(config.eval_subset_size, stream(config.seed, "eval-subset"))
    metadata = {
        "dataset": data.name,
        "checkpoint": checkpoint.name,
        "eval_subset_size": config.eval_subset_size,
        "eval_subset_seed": config.seed,
    }
    report = sweep(net, eval_set, mode, layers=config.sweep_layers, workers=workers,
                   progress=progress, metadata=metadata, debug=debug, logger=logger)
    stem = f"{checkpoint.stem}_{report.mode.value}"
    return [
        write_report_csv(report, out_dir / f"{stem}_sweep.csv"),
        write_report_json(report, out_dir / f"{stem}_sweep.json"),
        write_summary_csv(summarize(report), out_dir / f"{stem}_summary.csv"),
    ]


def cmd_pareto(
    report_path: Path, checkpoint: Path, config: Optional[ExperimentConfig], out_dir: Path
) -> List[Path]:
    """Frontier of worst-case error against replication cost."""
    report = read_report_json(report_path)
    net, _ = load_checkpoint(checkpoint)
    if config is None:
        cost_model = CostModel.from_network(net)
    else:
        cost_model = CostModel.from_network(
            net, config.cost_weight_bits, config.cost_act_bits, config.cost_include_fc,
            config.cost_multiplier,
        )
    frontier = pareto_frontier(net, report, cost_model)
    stem = report_path.stem.replace("_sweep", "")
    metadata = {"report": report_path.name, "checkpoint": checkpoint.name,
                "network": report.metadata.get("network")}
    return [
        write_frontier_csv(frontier, out_dir / f"{stem}_frontier.csv"),
        write_frontier_json(frontier, cost_model, out_dir / f"{stem}_frontier.json", metadata),
    ]


def cmd_report(report_paths: Sequence[Path], out_dir: Path) -> List[Path]:
    """Table-style summary per report plus one scatter file over all of them."""
    written, scatter = [], {}
    for path in report_paths:
        summary = summarize(read_report_json(path))
        name = path.stem.replace("_sweep", "")
        written.append(write_summary_csv(summary, out_dir / f"summary_{name}.csv"))
        scatter[name] = summary.scatter
    written.append(write_scatter_csv(scatter, out_dir / "scatter.csv"))
    return written


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, metavar="FILE", help="YAML experiment config")
    common.add_argument("--seed", type=int, metavar="N", help="Override the global seed")
    common.add_argument("--workers", type=int, metavar="N",
                        help="Sweep worker processes (default: available cores)")
    common.add_argument("--out-dir", type=Path, metavar="DIR", help="Output directory")
    common.add_argument("--subset-size", type=int, metavar="N",
                        help="Evaluation subset size")
    common.add_argument("--debug", action="store_true", help="Enable debug logging")
    common.add_argument("--json", action="store_true",
                        help="Print results and errors as JSON")
    common.add_argument("--no-progress", action="store_true", help="Hide progress bars")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="qnn-fat",
        description="Fault-aware training and stuck-at fault analysis of quantized CNNs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="Train a network (SAT, FAT or Dropout2D)")
    sweep_parser = sub.add_parser("sweep", parents=[common], help="Exhaustive stuck-at sweep")
    sweep_parser.add_argument("--checkpoint", type=Path, required=True)
    sweep_parser.add_argument("--mode", choices=("channel", "pixel"),
                              help="Sweep mode (default: config sweep_mode)")
    pareto_parser = sub.add_parser("pareto", parents=[common],
                                   help="Replication cost vs worst-case error frontier")
    pareto_parser.add_argument("--report", type=Path, required=True,
                               help="Channel sweep JSON report")
    pareto_parser.add_argument("--checkpoint", type=Path, required=True)
    report_parser = sub.add_parser("report", parents=[common],
                                   help="Summaries and scatter data from sweep reports")
    report_parser.add_argument("reports", type=Path, nargs="+", help="Sweep JSON reports")
    return parser


def _load(args) -> Optional[ExperimentConfig]:
    overrides = {"seed": args.seed, "workers": args.workers,
                 "eval_subset_size": args.subset_size,
                 "output_dir": str(args.out_dir) if args.out_dir else None}
    if args.config is None:
        if args.command in ("train", "sweep"):
            raise ConfigurationError(f"'{args.command}' needs an experiment config", ["--config"])
        return None
    return load_config(args.config, overrides)


def run(args) -> List[Path]:
    config = _load(args)
    out_dir = args.out_dir or Path(config.output_dir if config else ".")
    progress = not args.no_progress and not args.json
    logger = StringLogger() if args.json and args.debug else None
    args.captured = logger

    if args.command == "train":
        return cmd_train(config, out_dir, progress, args.debug, logger)
    if args.command == "sweep":
        workers = config.workers or os.cpu_count() or 1
        return cmd_sweep(args.checkpoint, args.mode or config.sweep_mode, config, out_dir,
                         workers, progress, args.debug, logger)
    if args.command == "pareto":
        return cmd_pareto(args.report, args.checkpoint, config, out_dir)
    return cmd_report(args.reports, out_dir)


def _fail(args, category: str, message: str, code: int) -> int:
    if args.json:
        print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    else:
        print(f"error[{category}]: {message}", file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    args.captured = None
    try:
        outputs = run(args)
    except QnnFatError as exc:
        return _fail(args, exc.category, str(exc), exc.exit_code)
    except FileNotFoundError as exc:
        return _fail(args, "io", str(exc), IO_EXIT_CODE)
    except Exception as exc:  # noqa: BLE001
        return _fail(args, "error", f"Unexpected error: {exc}", 1)

    if args.json:
        payload: Dict = {"command": args.command, "outputs": [str(p) for p in outputs]}
        if args.captured is not None:
            payload["debug"] = args.captured.get_logs()
        print(json.dumps(payload, indent=2))
    else:
        for path in outputs:
            print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
