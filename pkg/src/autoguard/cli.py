"""Command-line interface.

Subcommands:
  train      train the remediation agent; writes qtable.csv + learning_curve.csv
  evaluate   run the full benchmark; writes metrics.json and per-run logs
  compare    merge metrics reports into a comparison table (text + CSV)
  replay     re-run recorded runs and verify hashes/metrics reproduce

Exit codes: 0 success, 1 run failure or integrity mismatch, 2 usage or
unreadable configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config, load_config_file
from .errors import ConfigError, IntegrityError
from .harness import (
    replay_all,
    replay_run,
    run_experiment,
    train_autoguard,
    write_training_artifacts,
)
from .metrics import compare, reports_from_json

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a JSON config (defaults apply otherwise)")
    p.add_argument("--seed", type=int, help="override: run only this seed")
    p.add_argument("--out", help="override: output directory")
    p.add_argument("--observe-only", action="store_true",
                   help="disable remediation; monitoring and verdicts still run")


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config_file(args.config) if args.config else load_config()
    if args.seed is not None:
        cfg.seeds = (args.seed,)
    if args.out:
        cfg.out_dir = args.out
    if args.observe_only:
        cfg.observe_only = True
    cfg.validate()
    return cfg


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    for seed in cfg.seeds:
        result = train_autoguard(cfg, seed)
        qpath, cpath = write_training_artifacts(cfg.out_dir, seed, result)
        print(f"trained seed {seed}: {len(result.rewards)} episodes -> {qpath}, {cpath}")
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    reports = run_experiment(cfg, quiet=not args.verbose)
    for report in reports:
        mttr = "N/A" if report.mttr_mean is None else f"{report.mttr_mean:.1f}s"
        pct = "N/A" if report.pct_episodes is None else f"{report.pct_episodes:.0f} ep"
        print(f"{report.system:<11} DA {report.da_pct:5.1f}%  FPR {report.fpr_pct:5.2f}%  "
              f"MTTR {mttr:<8} PCT {pct}")
    print(f"artifacts in {cfg.out_dir}/")
    return EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    reports = []
    for path in args.reports:
        text = Path(path).read_text(encoding="utf-8")
        reports.extend(reports_from_json(text))
    comparison = compare(reports, designated=args.designated)
    print(comparison.render_text())
    out_csv = Path(args.csv) if args.csv else Path("comparison.csv")
    out_csv.write_text("\n".join(comparison.to_csv_lines()) + "\n", encoding="utf-8")
    print(f"\nwrote {out_csv}")
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    if args.run:
        out = Path(args.run).parent.parent
        cfg = load_config(json.loads((out / "config.json").read_text(encoding="utf-8")))
        replay_run(args.run, cfg)
        print(f"replay OK: {args.run}")
    else:
        out = args.out or "runs"
        dirs = replay_all(out)
        for rd in dirs:
            print(f"replay OK: {rd}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autoguard",
        description="Self-healing pipeline security benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the remediation agent")
    _add_common(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("evaluate", help="run the benchmark end to end")
    _add_common(p_eval)
    p_eval.add_argument("--verbose", action="store_true", help="per-run progress lines")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_cmp = sub.add_parser("compare", help="merge metrics reports into a table")
    p_cmp.add_argument("reports", nargs="+", help="metrics.json files to merge")
    p_cmp.add_argument("--designated", help="system the improvement column is for")
    p_cmp.add_argument("--csv", help="where to write comparison.csv")
    p_cmp.set_defaults(func=_cmd_compare)

    p_rep = sub.add_parser("replay", help="verify recorded runs reproduce exactly")
    p_rep.add_argument("--run", help="one run directory (…/<system>/seed_<n>)")
    p_rep.add_argument("--out", help="experiment output directory (replays every run)")
    p_rep.set_defaults(func=_cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
