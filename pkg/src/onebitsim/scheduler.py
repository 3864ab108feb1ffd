"""Stage-wise query scheduling: select, guess, ask, update, retrain.

A pipeline starts from a semi-supervised model trained on the initial labeled
set, then runs T stages. Each stage draws a query set from the unlabeled pool
(uniformly or by prediction confidence), asks the oracle whether the current
model's guess is right, files the answers into the partition, and continues
training the model on the enriched label state.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .dataset import Dataset, Partition, apply_guess_result, initial_split, standardize
from .oracle import BitBudget, Oracle, QueryLedger, charge_full_label, plan_budget
from .seeding import stream, stream_seed
from .trainer import MeanTeacherClassifier, evaluate, train_stage

STRATEGIES = ("random", "easiest", "hardest")


class InsufficientPool(RuntimeError):
    """Requested more queries than the unlabeled pool holds."""


class PlanError(ValueError):
    """The stage plan is inconsistent with the data or budget."""


@dataclass
class StagePlan:
    """Quota schedule across stages plus the query-sampling rule.

    ``quotas`` has one entry per stage; an empty tuple is the pure
    semi-supervised baseline. ``overrides`` maps a stage index (0 = the
    initial semi-supervised fit) to trainer parameter overrides for that
    stage only. ``warm_start=False`` refits from scratch each stage.
    """

    quotas: tuple[int, ...] = ()
    strategy: str = "random"
    overrides: dict[int, dict] = field(default_factory=dict)
    warm_start: bool = True

    def __post_init__(self):
        self.quotas = tuple(int(q) for q in self.quotas)
        if any(q < 0 for q in self.quotas):
            raise PlanError("stage quotas must be nonnegative")
        if self.strategy not in STRATEGIES:
            raise PlanError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")

    @property
    def n_stages(self) -> int:
        return len(self.quotas)

    @property
    def total_quota(self) -> int:
        return sum(self.quotas)


@dataclass
class StageReport:
    stage: int
    queried: int
    correct: int
    n_s: int
    n_o_plus: int
    n_o_minus: int
    n_u: int
    eval_acc: float
    bits_spent: float

    def to_dict(self) -> dict:
        return asdict(self)


def split_quota(total: int, n_stages: int, mode: str = "balanced") -> list[int]:
    """Assign a total query quota to stages.

    balanced: near-equal split, remainder to the earliest stages;
    front_loaded / back_loaded: the 75/25 and 25/75 two-stage presets.
    """
    if total < 0:
        raise ValueError("total quota must be nonnegative")
    if n_stages < 1:
        raise ValueError("need at least one stage")
    if mode == "balanced":
        base, remainder = divmod(total, n_stages)
        return [base + (1 if t < remainder else 0) for t in range(n_stages)]
    if mode in ("front_loaded", "back_loaded"):
        if n_stages != 2:
            raise ValueError(f"{mode} split is a two-stage preset")
        first = round(0.75 * total) if mode == "front_loaded" else total - round(0.75 * total)
        return [first, total - first]
    raise ValueError(f"unknown quota mode {mode!r}")


def select_query_set(
    clf: MeanTeacherClassifier,
    partition: Partition,
    quota: int,
    strategy: str,
    rng: np.random.Generator | int,
    X: np.ndarray,
) -> np.ndarray:
    """Choose ``quota`` unlabeled sample ids to query this stage.

    random: seeded uniform draw without replacement; easiest/hardest: ranked
    by the evaluation network's max softmax score (descending/ascending),
    ties broken by sample id. The returned order is the selection order.
    """
    pool = np.sort(partition.unlabeled_ids())
    if quota > len(pool):
        raise InsufficientPool(f"quota {quota} exceeds unlabeled pool of {len(pool)}")
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if strategy == "random":
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        return rng.choice(pool, size=quota, replace=False)
    _, scores, _ = clf.predict_full(X[pool])
    if strategy == "easiest":
        order = np.lexsort((pool, -scores))
    else:
        order = np.lexsort((pool, scores))
    return pool[order[:quota]]


def run_stage(
    clf: MeanTeacherClassifier,
    X: np.ndarray,
    partition: Partition,
    oracle: Oracle,
    ledger: QueryLedger,
    budget: BitBudget,
    quota: int,
    strategy: str,
    select_rng,
    stage: int,
    use_nls: bool = True,
    eval_set=None,
    retrain: bool = True,
) -> tuple[MeanTeacherClassifier, StageReport]:
    """One stage: query ``quota`` samples with the current model, then retrain.

    Queries are issued in ascending sample-id order. quota=0 is a pure
    retraining stage. The classifier is updated in place and returned
    alongside the post-stage report.
    """
    queried = correct = 0
    if quota > 0:
        ids = select_query_set(clf, partition, quota, strategy, select_rng, X)
        ids = np.sort(ids)
        guesses, _, _ = clf.predict_full(X[ids])
        for sample_id, guess in zip(ids, guesses):
            answer = oracle.answer_query(ledger, budget, int(sample_id), int(guess), stage)
            apply_guess_result(partition, int(sample_id), int(guess), answer)
            queried += 1
            correct += int(answer)
    if retrain:
        train_stage(clf, X, partition, use_nls=use_nls, eval_set=eval_set)
    counts = partition.counts()
    acc = evaluate(clf, *eval_set) if eval_set is not None else float("nan")
    report = StageReport(
        stage=stage,
        queried=queried,
        correct=correct,
        n_s=counts["S"],
        n_o_plus=counts["O+"],
        n_o_minus=counts["O-"],
        n_u=counts["U"],
        eval_acc=acc,
        bits_spent=budget.spent_bits,
    )
    return clf, report


@dataclass
class PipelineResult:
    reports: list[StageReport]
    clf: MeanTeacherClassifier
    partition: Partition
    ledger: QueryLedger
    budget: BitBudget

    @property
    def final_acc(self) -> float:
        return self.reports[-1].eval_acc


def run_pipeline(
    dataset: Dataset,
    test_set: Dataset,
    n_full: int,
    plan: StagePlan,
    trainer_params: dict,
    seed: int,
    use_nls: bool = True,
    oracle_error_rate: float = 0.0,
) -> PipelineResult:
    """Full multi-stage run against a simulated oracle.

    Stage 0 is the semi-supervised fit on the initial labels; stages 1..T
    follow the plan. The total bits spent equal the planned budget exactly.
    Stages with zero quota are skipped entirely (no retraining), so a plan of
    all-zero quotas reproduces the baseline bit for bit.
    """
    n_classes = dataset.n_classes
    if n_full + plan.total_quota > len(dataset):
        raise PlanError(
            f"{n_full} labels + {plan.total_quota} queries exceed {len(dataset)} samples"
        )
    budget = BitBudget(plan_budget(n_full, plan.total_quota, n_classes), n_classes)
    X, X_test, _ = standardize(dataset.X, test_set.X)
    eval_set = (X_test, test_set.hidden_truth)

    partition = initial_split(dataset, n_full, stream(seed, "split"))
    for _ in range(n_full):  # the initial labels are paid for up front
        charge_full_label(budget, n_classes)

    clf = MeanTeacherClassifier(
        **{
            **trainer_params,
            **plan.overrides.get(0, {}),
            "n_classes": n_classes,
            "random_state": stream_seed(seed, "train-stage-0"),
        }
    )
    train_stage(clf, X, partition, use_nls=use_nls, eval_set=eval_set)
    counts = partition.counts()
    reports = [
        StageReport(0, 0, 0, counts["S"], counts["O+"], counts["O-"], counts["U"],
                    evaluate(clf, *eval_set), budget.spent_bits)
    ]

    oracle = Oracle(dataset, error_rate=oracle_error_rate, seed=stream_seed(seed, "oracle"))
    ledger = QueryLedger()
    select_rng = stream(seed, "selection")
    for t, quota in enumerate(plan.quotas, start=1):
        if quota == 0:
            prev = reports[-1]
            reports.append(
                StageReport(t, 0, 0, prev.n_s, prev.n_o_plus, prev.n_o_minus, prev.n_u,
                            prev.eval_acc, budget.spent_bits)
            )
            continue
        clf.set_params(
            **{
                **trainer_params,
                **plan.overrides.get(t, {}),
                "n_classes": n_classes,
                "warm_start": plan.warm_start,
                "random_state": stream_seed(seed, f"train-stage-{t}"),
            }
        )
        _, report = run_stage(clf, X, partition, oracle, ledger, budget, quota, plan.strategy,
                              select_rng, t, use_nls=use_nls, eval_set=eval_set)
        reports.append(report)

    if abs(budget.spent_bits - budget.total_bits) > 1e-9:
        raise AssertionError(
            f"bits spent {budget.spent_bits} differ from planned {budget.total_bits}"
        )
    return PipelineResult(reports, clf, partition, ledger, budget)


def write_stage_reports(reports: list[StageReport], path) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2, sort_keys=True)
        fh.write("\n")
