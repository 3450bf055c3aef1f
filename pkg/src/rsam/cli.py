"""Command-line experiment runner.

Subcommands:
  run              train on the configured experiment, writing
                   metrics.csv, summary.json, optional checkpoint, and
                   figures into the output directory
  compare-epsilon  exact vs approximate perturbation-solver comparison
  spectrum         Hessian spectrum at a saved checkpoint
  report           overlay several finished runs in one figure

Exit codes: 0 success, 2 configuration error, 3 numeric error.
"""

import argparse
import json
import logging
import os
import sys

from rsam import report, runner
from rsam.errors import ConfigError, NumericError

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _ensure_out(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def cmd_run(args) -> int:
    cfg = runner.load_run_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    _ensure_out(args.out)
    result = runner.run_experiment(cfg)
    runner.write_metrics(result.records, os.path.join(args.out, "metrics.csv"))
    runner.write_summary(result.summary, os.path.join(args.out, "summary.json"))
    with open(os.path.join(args.out, "config.json"), "w") as f:
        f.write(runner.serialize_config(cfg) + "\n")
    if cfg["save_checkpoint"]:
        runner.save_checkpoint(result.groups, cfg, os.path.join(args.out, "checkpoint.bin"))
    if not args.no_plots:
        report.render_run_figures(args.out)
    s = result.summary
    print(
        f"final loss {s['final_loss']:.6g}, "
        f"final residual {s['final_ortho_residual']:.3g}, "
        f"total wall time {s['total_wall_s']:.2f} s "
        f"({s['step_ms_mean']:.3f} +/- {s['step_ms_std']:.3f} ms/step)"
    )
    return 0


def cmd_compare_epsilon(args) -> int:
    cfg = runner.load_compare_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    _ensure_out(args.out)
    rows = runner.compare_epsilon(cfg)
    csv_path = os.path.join(args.out, "compare_epsilon.csv")
    runner.write_compare_csv(rows, csv_path)
    if not args.no_plots:
        report.render_compare_epsilon_figure(
            csv_path, os.path.join(args.out, "compare_epsilon.png")
        )
    for r in rows:
        if r["status"] == "ok":
            print(
                f"St({r['p']},{r['n']}): exact/approx step time ratio "
                f"{r['time_ratio']:.2f}"
            )
        else:
            print(f"St({r['p']},{r['n']}): exact solver unavailable at this size")
    return 0


def cmd_spectrum(args) -> int:
    cfg = runner.load_run_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    _ensure_out(args.out)
    records, max_eig, truncated = runner.spectrum_from_checkpoint(cfg, args.checkpoint)
    csv_path = os.path.join(args.out, "spectrum.csv")
    runner.write_spectrum_csv(records, csv_path)
    with open(os.path.join(args.out, "spectrum_summary.json"), "w") as f:
        json.dump({"max_eig": max_eig, "truncated": truncated}, f, indent=2)
        f.write("\n")
    if not args.no_plots:
        report.render_spectrum_figure(csv_path, os.path.join(args.out, "spectrum.png"))
    print(f"max eigenvalue estimate {max_eig:.6g}" + (" (truncated)" if truncated else ""))
    return 0


def cmd_report(args) -> int:
    labels = args.labels or [os.path.basename(os.path.normpath(d)) for d in args.runs]
    if len(labels) != len(args.runs):
        raise ConfigError("--labels must match the number of run directories")
    _ensure_out(os.path.dirname(os.path.abspath(args.out)) or ".")
    path = report.render_comparison(args.runs, labels, args.out)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsam", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train and emit metrics")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None, help="override config seed")
    p_run.add_argument("--no-plots", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare-epsilon", help="exact vs approximate solver")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--out", required=True)
    p_cmp.add_argument("--seed", type=int, default=None)
    p_cmp.add_argument("--no-plots", action="store_true")
    p_cmp.set_defaults(func=cmd_compare_epsilon)

    p_sp = sub.add_parser("spectrum", help="Hessian spectrum at a checkpoint")
    p_sp.add_argument("--config", required=True)
    p_sp.add_argument("--checkpoint", required=True)
    p_sp.add_argument("--out", required=True)
    p_sp.add_argument("--seed", type=int, default=None)
    p_sp.add_argument("--no-plots", action="store_true")
    p_sp.set_defaults(func=cmd_spectrum)

    p_rep = sub.add_parser("report", help="overlay finished runs in one figure")
    p_rep.add_argument("--runs", nargs="+", required=True)
    p_rep.add_argument("--labels", nargs="*", default=None)
    p_rep.add_argument("--out", required=True)
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
