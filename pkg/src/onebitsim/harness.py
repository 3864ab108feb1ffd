"""Experiment orchestration: config files, bit-matched arms, aggregation.

A config describes one benchmark: the synthetic dataset, the annotation
budget anchored to a full-label baseline, the stage plan, trainer settings,
and the seed list. The harness derives the three standard arms (full-label
baseline, one-bit, one-bit with negative suppression) at equal supervision
bits, runs them across seeds, and reduces the results to medians and ranges.
CSV/JSON outputs carry every number a report uses; aggregation is recomputable
from `summary.csv` alone.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dataset import Dataset, generate_blobs, save_dataset
from .oracle import equivalent_schedules, plan_budget
from .scheduler import (
    STRATEGIES,
    PipelineResult,
    StagePlan,
    StageReport,
    run_pipeline,
    split_quota,
    write_stage_reports,
)
from .seeding import stream_seed
from .trainer import MeanTeacherClassifier, write_history_csv

ARMS = ("baseline", "onebit", "onebit-nls")
QUOTA_MODES = ("balanced", "front_loaded", "back_loaded")
BIT_MATCH_TOLERANCE = 0.015

SUMMARY_FIELDS = (
    "arm", "seed", "stage", "queried", "correct",
    "n_s", "n_o_plus", "n_o_minus", "n_u", "eval_acc", "bits_spent",
)


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        self.message = message
        super().__init__(f"{field_name}: {message}")


class BudgetMismatch(RuntimeError):
    """Arms of a comparison would consume unequal supervision bits."""


@dataclass
class RunConfig:
    name: str
    dataset: dict
    baseline_n_full: int
    onebit_n_full: int
    n_queries: int | None
    n_stages: int
    quota_mode: str
    strategy: str
    warm_start: bool
    trainer: dict
    seeds: list[int]
    oracle_error_rate: float = 0.0
    overrides: dict[int, dict] = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return self.dataset["n_classes"]

    def derived_queries(self) -> int:
        """Query count for the one-bit arms; bit-matched to the baseline
        via equivalent_schedules unless pinned in the config."""
        if self.n_queries is not None:
            return self.n_queries
        return equivalent_schedules(self.baseline_n_full, self.n_classes, self.onebit_n_full)

    def quotas(self, n_stages: int | None = None, mode: str | None = None) -> tuple[int, ...]:
        return tuple(split_quota(self.derived_queries(),
                                 n_stages or self.n_stages,
                                 mode or self.quota_mode))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dataset": dict(self.dataset),
            "budget": {
                "baseline_n_full": self.baseline_n_full,
                "onebit_n_full": self.onebit_n_full,
                "n_queries": self.n_queries,
            },
            "plan": {
                "n_stages": self.n_stages,
                "quota_mode": self.quota_mode,
                "strategy": self.strategy,
                "warm_start": self.warm_start,
                "overrides": {str(k): dict(v) for k, v in self.overrides.items()},
            },
            "oracle": {"error_rate": self.oracle_error_rate},
            "trainer": dict(self.trainer),
            "seeds": list(self.seeds),
        }


def _expect_mapping(value, field_name: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(field_name, f"expected a mapping, got {type(value).__name__}")
    return value


def _get_int(mapping: dict, key: str, path: str, minimum=None, default=None):
    if key not in mapping:
        if default is not None:
            return default
        raise ConfigError(f"{path}.{key}", "required")
    value = mapping[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}.{key}", f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}.{key}", f"must be >= {minimum}, got {value}")
    return value


def _get_float(mapping: dict, key: str, path: str, minimum=None, default=None):
    if key not in mapping:
        if default is not None:
            return default
        raise ConfigError(f"{path}.{key}", "required")
    value = mapping[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {value!r}")
    value = float(value)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}.{key}", f"must be >= {minimum}, got {value}")
    return value


def _trainer_param_names() -> set:
    return set(MeanTeacherClassifier().get_params())


# Controlled by the pipeline itself; configs may not set them.
_RESERVED_TRAINER_KEYS = {"n_classes", "random_state", "warm_start"}


def _validate_trainer(raw: dict, path: str) -> dict:
    valid = _trainer_param_names() - _RESERVED_TRAINER_KEYS
    out = {}
    for key, value in raw.items():
        if key in _RESERVED_TRAINER_KEYS:
            raise ConfigError(f"{path}.{key}", "set by the pipeline, not the config")
        if key not in valid:
            raise ConfigError(f"{path}.{key}", "unknown trainer parameter")
        if key == "hidden_layers":
            if not isinstance(value, (list, tuple)) or not all(
                isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in value
            ):
                raise ConfigError(f"{path}.{key}", "expected a list of positive integers")
            value = tuple(value)
        out[key] = value
    return out


def parse_config(raw: dict, name: str = "run") -> RunConfig:
    """Validate a parsed config mapping; raises ConfigError with field paths."""
    raw = _expect_mapping(raw, "config")
    known = {"name", "dataset", "budget", "plan", "trainer", "seeds", "oracle"}
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown section")

    ds = _expect_mapping(raw.get("dataset"), "dataset")
    dataset = {
        "n_classes": _get_int(ds, "n_classes", "dataset", minimum=2),
        "n_per_class": _get_int(ds, "n_per_class", "dataset", minimum=1),
        "dim": _get_int(ds, "dim", "dataset", minimum=1),
        "class_separation": _get_float(ds, "class_separation", "dataset", minimum=0.0),
        "noise_scale": _get_float(ds, "noise_scale", "dataset", minimum=0.0),
        "test_n_per_class": _get_int(ds, "test_n_per_class", "dataset", minimum=1),
    }
    for key in ds:
        if key not in dataset:
            raise ConfigError(f"dataset.{key}", "unknown dataset parameter")

    budget = _expect_mapping(raw.get("budget"), "budget")
    baseline_n_full = _get_int(budget, "baseline_n_full", "budget", minimum=1)
    onebit_n_full = _get_int(budget, "onebit_n_full", "budget", minimum=0)
    n_queries = None
    if budget.get("n_queries") is not None:
        n_queries = _get_int(budget, "n_queries", "budget", minimum=0)
    for key in budget:
        if key not in ("baseline_n_full", "onebit_n_full", "n_queries"):
            raise ConfigError(f"budget.{key}", "unknown budget parameter")
    if onebit_n_full > baseline_n_full:
        raise ConfigError("budget.onebit_n_full",
                          "cannot exceed baseline_n_full at equal bits")

    plan = _expect_mapping(raw.get("plan"), "plan")
    n_stages = _get_int(plan, "n_stages", "plan", minimum=1, default=2)
    quota_mode = plan.get("quota_mode", "balanced")
    if quota_mode not in QUOTA_MODES:
        raise ConfigError("plan.quota_mode", f"must be one of {QUOTA_MODES}")
    if quota_mode != "balanced" and n_stages != 2:
        raise ConfigError("plan.quota_mode", f"{quota_mode} requires n_stages=2")
    strategy = plan.get("strategy", "random")
    if strategy not in STRATEGIES:
        raise ConfigError("plan.strategy", f"must be one of {STRATEGIES}")
    warm_start = plan.get("warm_start", True)
    if not isinstance(warm_start, bool):
        raise ConfigError("plan.warm_start", "expected a boolean")
    overrides_raw = _expect_mapping(plan.get("overrides"), "plan.overrides")
    overrides = {}
    for key, value in overrides_raw.items():
        try:
            stage = int(key)
        except (TypeError, ValueError):
            raise ConfigError(f"plan.overrides.{key}", "stage index must be an integer")
        if stage < 0 or stage > n_stages:
            raise ConfigError(f"plan.overrides.{key}", f"stage outside [0, {n_stages}]")
        overrides[stage] = _validate_trainer(
            _expect_mapping(value, f"plan.overrides.{key}"), f"plan.overrides.{key}"
        )
    for key in plan:
        if key not in ("n_stages", "quota_mode", "strategy", "warm_start", "overrides"):
            raise ConfigError(f"plan.{key}", "unknown plan parameter")

    oracle = _expect_mapping(raw.get("oracle"), "oracle")
    error_rate = _get_float(oracle, "error_rate", "oracle", minimum=0.0, default=0.0)
    if error_rate >= 0.5:
        raise ConfigError("oracle.error_rate", "must be below 0.5")
    for key in oracle:
        if key != "error_rate":
            raise ConfigError(f"oracle.{key}", "unknown oracle parameter")

    trainer = _validate_trainer(_expect_mapping(raw.get("trainer"), "trainer"), "trainer")

    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds
    ):
        raise ConfigError("seeds", "expected a nonempty list of nonnegative integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "duplicate seeds")

    n_train = dataset["n_classes"] * dataset["n_per_class"]
    cfg = RunConfig(
        name=str(raw.get("name", name)),
        dataset=dataset,
        baseline_n_full=baseline_n_full,
        onebit_n_full=onebit_n_full,
        n_queries=n_queries,
        n_stages=n_stages,
        quota_mode=quota_mode,
        strategy=strategy,
        warm_start=warm_start,
        trainer=trainer,
        seeds=list(seeds),
        oracle_error_rate=error_rate,
        overrides=overrides,
    )
    if baseline_n_full > n_train:
        raise ConfigError("budget.baseline_n_full", f"exceeds the {n_train} training samples")
    try:
        total = cfg.onebit_n_full + cfg.derived_queries()
    except ValueError as exc:
        raise ConfigError("budget", str(exc))
    if total > n_train:
        raise ConfigError("budget.n_queries",
                          f"labels + queries = {total} exceed the {n_train} training samples")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"malformed YAML: {exc}")
    return parse_config(raw, name=path.stem)


def check_equal_bits(cfg: RunConfig) -> float:
    """Planned bits shared by all arms; raises BudgetMismatch beyond 1.5%."""
    base = plan_budget(cfg.baseline_n_full, 0, cfg.n_classes)
    onebit = plan_budget(cfg.onebit_n_full, cfg.derived_queries(), cfg.n_classes)
    if abs(base - onebit) / base > BIT_MATCH_TOLERANCE:
        raise BudgetMismatch(
            f"baseline arm plans {base:.2f} bits but one-bit arms plan {onebit:.2f}; "
            f"difference exceeds {BIT_MATCH_TOLERANCE:.1%}"
        )
    return base


def arm_schedule(cfg: RunConfig, arm: str) -> tuple[int, StagePlan, bool]:
    """(n_full, plan, use_nls) for a standard comparison arm."""
    if arm == "baseline":
        return cfg.baseline_n_full, StagePlan((), cfg.strategy, warm_start=cfg.warm_start), True
    if arm not in ARMS:
        raise ValueError(f"arm must be one of {ARMS}, got {arm!r}")
    plan = StagePlan(cfg.quotas(), cfg.strategy, overrides=cfg.overrides,
                     warm_start=cfg.warm_start)
    return cfg.onebit_n_full, plan, arm == "onebit-nls"


def make_datasets(cfg: RunConfig, seed: int) -> tuple[Dataset, Dataset]:
    """Train/test blob pair for one root seed; both splits share centers."""
    ds = cfg.dataset
    ds_seed = stream_seed(seed, "dataset")
    train = generate_blobs(ds["n_classes"], ds["n_per_class"], ds["dim"],
                           ds["class_separation"], ds["noise_scale"], ds_seed, split="train")
    test = generate_blobs(ds["n_classes"], ds["test_n_per_class"], ds["dim"],
                          ds["class_separation"], ds["noise_scale"], ds_seed, split="test")
    return train, test


def dataset_sha256(dataset: Dataset) -> str:
    """Content hash of the dataset's canonical CSV serialization."""
    buf = io.StringIO(newline="")
    save_dataset(dataset, buf)
    return hashlib.sha256(buf.getvalue().encode()).hexdigest()


@dataclass
class RunRecord:
    """One (arm, seed) pipeline trajectory, the unit of aggregation."""

    arm: str
    seed: int
    reports: list[StageReport]

    @property
    def final_acc(self) -> float:
        return self.reports[-1].eval_acc

    @property
    def total_correct(self) -> int:
        return sum(r.correct for r in self.reports)

    @property
    def total_bits(self) -> float:
        return self.reports[-1].bits_spent


def run_variant(
    cfg: RunConfig,
    arm: str,
    n_full: int,
    plan: StagePlan,
    use_nls: bool,
    seed: int,
    out_dir=None,
    datasets: tuple[Dataset, Dataset] | None = None,
) -> RunRecord:
    """Run one pipeline and (optionally) write its per-run artifact files."""
    train, test = datasets if datasets is not None else make_datasets(cfg, seed)
    result = run_pipeline(
        train, test, n_full, plan, cfg.trainer, seed,
        use_nls=use_nls, oracle_error_rate=cfg.oracle_error_rate,
    )
    if out_dir is not None:
        run_dir = Path(out_dir) / arm / f"seed-{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        write_stage_reports(result.reports, run_dir / "stage_reports.json")
        write_history_csv(result.clf.history_, run_dir / "history.csv")
        result.ledger.dump_jsonl(run_dir / "ledger.jsonl")
        manifest = {
            "arm": arm,
            "seed": seed,
            "n_full": n_full,
            "quotas": list(plan.quotas),
            "strategy": plan.strategy,
            "use_nls": use_nls,
            "planned_bits": result.budget.total_bits,
            "spent_bits": result.budget.spent_bits,
            "final_acc": result.final_acc,
            "dataset_sha256": {"train": dataset_sha256(train), "test": dataset_sha256(test)},
            "config": cfg.to_dict(),
        }
        with open(run_dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return RunRecord(arm, seed, result.reports)


def write_summary_csv(records: list[RunRecord], path) -> None:
    """One row per (arm, seed, stage); the ground truth for aggregation."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_FIELDS)
        for record in records:
            for r in record.reports:
                writer.writerow([
                    record.arm, record.seed, r.stage, r.queried, r.correct,
                    r.n_s, r.n_o_plus, r.n_o_minus, r.n_u,
                    repr(float(r.eval_acc)), repr(float(r.bits_spent)),
                ])


def read_summary_csv(path) -> list[RunRecord]:
    rows_by_run: dict[tuple[str, int], list[StageReport]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(SUMMARY_FIELDS):
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            key = (row["arm"], int(row["seed"]))
            rows_by_run.setdefault(key, []).append(StageReport(
                stage=int(row["stage"]), queried=int(row["queried"]),
                correct=int(row["correct"]), n_s=int(row["n_s"]),
                n_o_plus=int(row["n_o_plus"]), n_o_minus=int(row["n_o_minus"]),
                n_u=int(row["n_u"]), eval_acc=float(row["eval_acc"]),
                bits_spent=float(row["bits_spent"]),
            ))
    records = []
    for (arm, seed), reports in rows_by_run.items():
        records.append(RunRecord(arm, seed, sorted(reports, key=lambda r: r.stage)))
    return records


@dataclass
class ArmSummary:
    arm: str
    seeds: list[int]
    acc_median: float
    acc_min: float
    acc_max: float
    acc_trajectory: list[float]  # median eval accuracy per stage
    correct_per_stage_total: list[int]
    correct_per_stage_mean: list[float]
    total_correct_median: float
    total_bits: float

    def trajectory_str(self) -> str:
        return " -> ".join(format(a * 100, ".2f") for a in self.acc_trajectory)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["trajectory"] = self.trajectory_str()
        return d


@dataclass
class ComparisonReport:
    arms: dict[str, ArmSummary]

    def to_dict(self) -> dict:
        return {arm: s.to_dict() for arm, s in self.arms.items()}


def aggregate(records: list[RunRecord]) -> ComparisonReport:
    """Reduce per-run trajectories to per-arm medians and ranges.

    Every arm must cover the same seed set and stage count; only
    median/min/max/sum/mean are computed here.
    """
    if not records:
        raise ValueError("no runs to aggregate")
    by_arm: dict[str, list[RunRecord]] = {}
    for record in records:
        by_arm.setdefault(record.arm, []).append(record)
    seed_sets = {arm: sorted(r.seed for r in runs) for arm, runs in by_arm.items()}
    reference = next(iter(seed_sets.values()))
    for arm, seeds in seed_sets.items():
        if seeds != reference:
            raise ValueError(
                f"arm mismatch across seeds: {arm} ran {seeds}, expected {reference}"
            )
        if len(set(seeds)) != len(seeds):
            raise ValueError(f"arm {arm} has duplicate seeds")

    arms = {}
    for arm, runs in by_arm.items():
        runs = sorted(runs, key=lambda r: r.seed)
        n_stages = {len(r.reports) for r in runs}
        if len(n_stages) != 1:
            raise ValueError(f"arm {arm} has runs with differing stage counts")
        stages = n_stages.pop()
        finals = [r.final_acc for r in runs]
        bits = {r.total_bits for r in runs}
        if len(bits) != 1:
            raise ValueError(f"arm {arm} spent unequal bits across seeds: {sorted(bits)}")
        arms[arm] = ArmSummary(
            arm=arm,
            seeds=[r.seed for r in runs],
            acc_median=statistics.median(finals),
            acc_min=min(finals),
            acc_max=max(finals),
            acc_trajectory=[
                statistics.median(r.reports[t].eval_acc for r in runs)
                for t in range(stages)
            ],
            correct_per_stage_total=[
                sum(r.reports[t].correct for r in runs) for t in range(stages)
            ],
            correct_per_stage_mean=[
                sum(r.reports[t].correct for r in runs) / len(runs)
                for t in range(stages)
            ],
            total_correct_median=statistics.median(r.total_correct for r in runs),
            total_bits=bits.pop(),
        )
    return ComparisonReport(arms)


def write_comparison(report: ComparisonReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_comparison(report: ComparisonReport) -> str:
    lines = [f"{'arm':<18}{'bits':>12}{'acc median':>12}{'min':>8}{'max':>8}  trajectory"]
    for arm in sorted(report.arms):
        s = report.arms[arm]
        lines.append(
            f"{arm:<18}{s.total_bits:>12.2f}{s.acc_median * 100:>11.2f}%"
            f"{s.acc_min * 100:>7.2f}%{s.acc_max * 100:>7.2f}%  {s.trajectory_str()}"
        )
    return "\n".join(lines)


def run_compare(cfg: RunConfig, seeds: list[int], out_dir) -> ComparisonReport:
    """All three bit-matched arms across seeds; writes per-run files,
    summary.csv, and comparison.json under ``out_dir``."""
    check_equal_bits(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for seed in seeds:
        datasets = make_datasets(cfg, seed)
        for arm in ARMS:
            n_full, plan, use_nls = arm_schedule(cfg, arm)
            records.append(
                run_variant(cfg, arm, n_full, plan, use_nls, seed, out_dir, datasets)
            )
    write_summary_csv(records, out_dir / "summary.csv")
    report = aggregate(records)
    write_comparison(report, out_dir / "comparison.json")
    return report


ABLATION_PRESETS = ("stages", "quota-split", "n-full", "selection")


def ablation_variants(cfg: RunConfig, preset: str) -> list[tuple[str, int, StagePlan, bool]]:
    """(name, n_full, plan, use_nls) per ablation arm. All variants of a
    preset consume identical bits, so differences are attributable to the
    schedule alone."""
    nq = cfg.derived_queries()
    base_kwargs = dict(strategy=cfg.strategy, warm_start=cfg.warm_start)
    if preset == "stages":
        return [
            (f"stages-{t}", cfg.onebit_n_full,
             StagePlan(tuple(split_quota(nq, t, "balanced")), **base_kwargs), True)
            for t in (1, 2, 3)
        ]
    if preset == "quota-split":
        return [
            (f"split-{mode}", cfg.onebit_n_full,
             StagePlan(tuple(split_quota(nq, 2, mode)), **base_kwargs), True)
            for mode in QUOTA_MODES
        ]
    if preset == "n-full":
        variants = []
        for n_full in sorted({max(cfg.n_classes, cfg.onebit_n_full // 3),
                              cfg.onebit_n_full,
                              min(cfg.baseline_n_full, cfg.onebit_n_full * 2)}):
            queries = equivalent_schedules(cfg.baseline_n_full, cfg.n_classes, n_full)
            plan = StagePlan(tuple(split_quota(queries, cfg.n_stages, "balanced")),
                             **base_kwargs)
            variants.append((f"nfull-{n_full}", n_full, plan, True))
        return variants
    if preset == "selection":
        return [
            (f"sel-{strategy}", cfg.onebit_n_full,
             StagePlan(cfg.quotas(), strategy, warm_start=cfg.warm_start), True)
            for strategy in STRATEGIES
        ]
    raise ValueError(f"preset must be one of {ABLATION_PRESETS}, got {preset!r}")


def run_ablation(cfg: RunConfig, preset: str, seeds: list[int], out_dir) -> ComparisonReport:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    variants = ablation_variants(cfg, preset)
    records = []
    for seed in seeds:
        datasets = make_datasets(cfg, seed)
        for name, n_full, plan, use_nls in variants:
            records.append(
                run_variant(cfg, name, n_full, plan, use_nls, seed, out_dir, datasets)
            )
    write_summary_csv(records, out_dir / "summary.csv")
    report = aggregate(records)
    write_comparison(report, out_dir / "comparison.json")
    return report
