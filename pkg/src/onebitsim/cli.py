"""Command-line front end.

Subcommands: ``generate`` (write a dataset), ``run`` (single pipeline),
``compare`` (the three bit-matched arms), ``ablate`` (schedule ablations),
``report`` (re-aggregate an output directory). Exit codes: 0 success,
2 invalid configuration, 3 bit-budget violation. Failures emit one
machine-readable JSON line on stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (
    ABLATION_PRESETS,
    ARMS,
    BudgetMismatch,
    ConfigError,
    arm_schedule,
    check_equal_bits,
    dataset_sha256,
    format_comparison,
    load_config,
    make_datasets,
    read_summary_csv,
    run_ablation,
    run_compare,
    run_variant,
    write_comparison,
    write_summary_csv,
    aggregate,
)
from .dataset import save_dataset
from .oracle import BudgetExhausted

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3


def _parse_seeds(text: str) -> list[int]:
    """`--seeds 0..4` (inclusive range) or `--seeds 0,1,2`."""
    text = text.strip()
    if ".." in text:
        lo, _, hi = text.partition("..")
        start, stop = int(lo), int(hi)
        if stop < start:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(start, stop + 1))
    return [int(part) for part in text.split(",") if part]


def _fail(kind: str, message: str, code: int, field: str | None = None) -> int:
    line = {"error": kind, "message": message}
    if field is not None:
        line["field"] = field
    print(json.dumps(line, sort_keys=True), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="onebitsim",
        description="Simulate learning under a fixed budget of supervision bits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, seeds=False):
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", default=None, help="output directory")
        if seeds:
            p.add_argument("--seeds", default=None,
                           help="override config seeds: N..M or comma list")

    p = sub.add_parser("generate", help="write the train/test dataset CSVs")
    add_common(p)
    p.add_argument("--seed", type=int, default=None, help="root seed (default: first config seed)")

    p = sub.add_parser("run", help="run one pipeline arm for one seed")
    add_common(p)
    p.add_argument("--seed", type=int, default=None, help="root seed (default: first config seed)")
    p.add_argument("--arm", choices=ARMS, default="onebit-nls")

    p = sub.add_parser("compare", help="run the bit-matched baseline/one-bit arms")
    add_common(p, seeds=True)

    p = sub.add_parser("ablate", help="run a schedule ablation preset")
    add_common(p, seeds=True)
    p.add_argument("--preset", choices=ABLATION_PRESETS, required=True)

    p = sub.add_parser("report", help="re-aggregate an output directory")
    p.add_argument("--out", required=True, help="directory holding summary.csv")
    return parser


def _out_dir(args, cfg, default_leaf: str) -> Path:
    out = Path(args.out) if args.out else Path("results") / cfg.name / default_leaf
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed_list(args, cfg) -> list[int]:
    if getattr(args, "seeds", None):
        seeds = _parse_seeds(args.seeds)
        if not seeds:
            raise ConfigError("seeds", "empty seed list")
        return seeds
    return cfg.seeds


def _cmd_generate(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    out = _out_dir(args, cfg, f"dataset-seed-{seed}")
    train, test = make_datasets(cfg, seed)
    save_dataset(train, out / "train.csv")
    save_dataset(test, out / "test.csv")
    manifest = {
        "seed": seed,
        "dataset": cfg.dataset,
        "sha256": {"train": dataset_sha256(train), "test": dataset_sha256(test)},
    }
    with open(out / "dataset_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out / 'train.csv'} ({len(train)} rows) and "
          f"{out / 'test.csv'} ({len(test)} rows)")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    check_equal_bits(cfg)
    out = _out_dir(args, cfg, f"run-{args.arm}-seed-{seed}")
    n_full, plan, use_nls = arm_schedule(cfg, args.arm)
    record = run_variant(cfg, args.arm, n_full, plan, use_nls, seed, out)
    write_summary_csv([record], out / "summary.csv")
    last = record.reports[-1]
    print(f"{args.arm} seed={seed}: accuracy {last.eval_acc * 100:.2f}% "
          f"after {last.bits_spent:.2f} bits "
          f"({last.n_s} labels, {last.n_o_plus}+{last.n_o_minus} guessed)")
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfg = load_config(args.config)
    seeds = _seed_list(args, cfg)
    out = _out_dir(args, cfg, "compare")
    report = run_compare(cfg, seeds, out)
    print(format_comparison(report))
    print(f"wrote {out / 'summary.csv'} and {out / 'comparison.json'}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    seeds = _seed_list(args, cfg)
    out = _out_dir(args, cfg, f"ablate-{args.preset}")
    report = run_ablation(cfg, args.preset, seeds, out)
    print(format_comparison(report))
    print(f"wrote {out / 'summary.csv'} and {out / 'comparison.json'}")
    return EXIT_OK


def _cmd_report(args) -> int:
    out = Path(args.out)
    summary = out / "summary.csv"
    if not summary.exists():
        raise ConfigError("out", f"{summary} not found")
    records = read_summary_csv(summary)
    report = aggregate(records)
    write_comparison(report, out / "comparison.json")
    print(format_comparison(report))
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "run": _cmd_run,
    "compare": _cmd_compare,
    "ablate": _cmd_ablate,
    "report": _cmd_report,
}


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail("config", exc.message, EXIT_CONFIG, field=exc.field)
    except (ValueError, OSError) as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except (BudgetMismatch, BudgetExhausted) as exc:
        return _fail("budget", str(exc), EXIT_BUDGET)


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
