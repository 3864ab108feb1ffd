"""Simulated yes/no annotator, supervision-bit budget, and query ledger.

A full label costs log2(C) bits, a yes/no query costs exactly 1 bit, and each
sample may be queried at most once. The budget stores charge *counts* and
derives spent bits by multiplication, so "spent = n_full * log2 C + queries"
holds to the last ulp no matter how charges interleave.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dataset import Dataset

# log2(C) is irrational for most C; comparisons get this much slack.
BUDGET_SLACK = 1e-9


class BudgetExhausted(RuntimeError):
    """A charge would push spent bits past the total budget."""


class OnceOnlyViolation(RuntimeError):
    """A sample that already has a ledger record was queried again."""


def bits_for_full_label(n_classes: int) -> float:
    """Bits of supervision in one accurate label: log2(C)."""
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    return math.log2(n_classes)


def plan_budget(n_full: int, n_queries: int, n_classes: int) -> float:
    """Total bits of a schedule: n_full full labels plus n_queries yes/no bits."""
    if n_full < 0 or n_queries < 0:
        raise ValueError("counts must be nonnegative")
    return n_full * bits_for_full_label(n_classes) + n_queries


def equivalent_schedules(n_full_baseline: int, n_classes: int, n_full_onebit: int) -> int:
    """Most queries affordable from the bits freed by annotating fewer samples.

    floor((n_full_baseline - n_full_onebit) * log2 C): query number q is
    affordable only while q <= freed bits.
    """
    if n_full_baseline < 0 or n_full_onebit < 0:
        raise ValueError("counts must be nonnegative")
    if n_full_onebit > n_full_baseline:
        raise ValueError("one-bit schedule cannot keep more full labels than the baseline")
    return int(math.floor((n_full_baseline - n_full_onebit) * bits_for_full_label(n_classes)))


@dataclass
class BitBudget:
    """Supervision-bit account. Charges are whole full-labels or whole queries."""

    total_bits: float
    n_classes: int
    n_full_charged: int = 0
    n_queries_charged: int = 0

    def __post_init__(self):
        if self.total_bits < 0:
            raise ValueError("total_bits must be nonnegative")

    @property
    def bits_per_full_label(self) -> float:
        return bits_for_full_label(self.n_classes)

    @property
    def spent_bits(self) -> float:
        return self.n_full_charged * self.bits_per_full_label + self.n_queries_charged

    @property
    def remaining_bits(self) -> float:
        return self.total_bits - self.spent_bits

    def can_afford(self, amount: float) -> bool:
        return self.spent_bits + amount <= self.total_bits + BUDGET_SLACK

    def charge_query(self) -> None:
        if not self.can_afford(1.0):
            raise BudgetExhausted(
                f"query costs 1 bit but only {self.remaining_bits:.6g} bits remain"
            )
        self.n_queries_charged += 1


def charge_full_label(budget: BitBudget, n_classes: int) -> BitBudget:
    """Charge one accurate label (log2 C bits) against the budget."""
    if n_classes != budget.n_classes:
        raise ValueError(f"budget is denominated in {budget.n_classes}-class labels")
    cost = budget.bits_per_full_label
    if not budget.can_afford(cost):
        raise BudgetExhausted(
            f"full label costs {cost:.6g} bits but only "
            f"{budget.remaining_bits:.6g} bits remain"
        )
    budget.n_full_charged += 1
    return budget


class QueryRecord(NamedTuple):
    sample_id: int
    stage: int
    guess: int
    answer: bool


class QueryLedger:
    """Append-only record of every query; at most one record per sample."""

    def __init__(self):
        self._records: list[QueryRecord] = []
        self._by_id: dict[int, QueryRecord] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, sample_id: int) -> bool:
        return int(sample_id) in self._by_id

    @property
    def records(self) -> tuple[QueryRecord, ...]:
        return tuple(self._records)

    def record(self, sample_id: int) -> QueryRecord:
        return self._by_id[int(sample_id)]

    def append(self, record: QueryRecord) -> None:
        if record.sample_id in self._by_id:
            raise OnceOnlyViolation(f"sample {record.sample_id} already has a ledger record")
        self._records.append(record)
        self._by_id[record.sample_id] = record

    def dump_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self._records:
                fh.write(json.dumps(
                    {"id": r.sample_id, "stage": r.stage, "guess": r.guess,
                     "answer": bool(r.answer)}) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "QueryLedger":
        ledger = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    ledger.append(QueryRecord(d["id"], d["stage"], d["guess"], d["answer"]))
        return ledger


class Oracle:
    """Answers "does this sample belong to class k?" against hidden truth.

    Infallible by default. ``error_rate`` flips answers i.i.d. and exists for
    robustness experiments only; it models labeler mistakes, not the
    reference protocol.
    """

    def __init__(self, dataset: Dataset, error_rate: float = 0.0, seed: int = 0):
        if not 0.0 <= error_rate <= 1.0:
            raise ValueError("error_rate must be in [0, 1]")
        self._dataset = dataset
        self._error_rate = error_rate
        self._rng = np.random.default_rng(seed)

    def answer_query(
        self,
        ledger: QueryLedger,
        budget: BitBudget,
        sample_id: int,
        guessed_class: int,
        stage: int = 0,
    ) -> bool:
        """True iff the guess matches hidden truth; charges exactly 1 bit.

        Raises OnceOnlyViolation on a repeated sample and BudgetExhausted when
        no bit remains; both leave ledger, budget, and oracle state untouched.
        """
        sample_id = int(sample_id)
        if sample_id in ledger:
            raise OnceOnlyViolation(f"sample {sample_id} was already queried")
        if not budget.can_afford(1.0):
            raise BudgetExhausted(
                f"query costs 1 bit but only {budget.remaining_bits:.6g} bits remain"
            )
        if not 0 <= guessed_class < self._dataset.n_classes:
            raise IndexError(f"guessed class {guessed_class} out of range")
        answer = bool(self._dataset.hidden_truth[sample_id] == guessed_class)
        if self._error_rate > 0.0 and self._rng.random() < self._error_rate:
            answer = not answer
        budget.charge_query()
        ledger.append(QueryRecord(sample_id, int(stage), int(guessed_class), answer))
        return answer

    def replay_matches(self, ledger: QueryLedger) -> bool:
        """Check every recorded answer against hidden truth (infallible oracle)."""
        return all(
            (self._dataset.hidden_truth[r.sample_id] == r.guess) == r.answer
            for r in ledger.records
        )
