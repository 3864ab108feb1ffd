"""Synthetic multi-class datasets and the evolving label-state ledger.

A Dataset holds features plus a hidden ground-truth column that only the
oracle and the final evaluator may consult. A Partition tracks, per sample,
whether its label is hidden, fully known, or known-negative, and which of the
four sets (S, O+, O-, U) it currently belongs to.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .seeding import stream

CENTER_RETRY_BUDGET = 100


class GenerationError(RuntimeError):
    """Raised when no center layout satisfies the separation constraint."""


class ProtocolError(RuntimeError):
    """Raised when the query protocol is violated (e.g. sample not in U)."""


class LabelKind(enum.Enum):
    HIDDEN = "hidden"
    FULL = "full"
    NEGATIVE = "negative"


class LabelState(NamedTuple):
    kind: LabelKind
    label: int  # class index for FULL/NEGATIVE, -1 for HIDDEN


# Set membership codes. Each sample carries exactly one, so disjointness and
# coverage of S/O+/O-/U hold structurally.
SET_S = "S"
SET_O_PLUS = "O+"
SET_O_MINUS = "O-"
SET_U = "U"


@dataclass
class Dataset:
    """Feature matrix plus hidden truth. Sample ids are the row indices 0..N-1.

    ``hidden_truth`` exists for the oracle and the final evaluator; training
    code must not read it.
    """

    X: np.ndarray
    hidden_truth: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.hidden_truth = np.asarray(self.hidden_truth, dtype=np.int64)
        if self.X.shape[0] != self.hidden_truth.shape[0]:
            raise ValueError("feature and truth lengths differ")
        if self.hidden_truth.size and not (
            0 <= self.hidden_truth.min() and self.hidden_truth.max() < self.n_classes
        ):
            raise ValueError("hidden truth outside [0, n_classes)")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def _draw_centers(n_classes, dim, separation, rng):
    for _ in range(CENTER_RETRY_BUDGET):
        directions = rng.standard_normal((n_classes, dim))
        centers = separation * directions / np.linalg.norm(directions, axis=1, keepdims=True)
        diffs = centers[:, None, :] - centers[None, :, :]
        dists = np.linalg.norm(diffs, axis=-1)
        dists[np.diag_indices(n_classes)] = np.inf
        if dists.min() >= separation:
            return centers
    raise GenerationError(
        f"no layout of {n_classes} centers in {dim}d reached pairwise separation "
        f"{separation} within {CENTER_RETRY_BUDGET} attempts"
    )


def generate_blobs(
    n_classes: int,
    n_per_class: int,
    dim: int,
    class_separation: float,
    noise_scale: float,
    seed: int,
    split: str = "train",
) -> Dataset:
    """Gaussian blobs around class centers drawn on a sphere of radius
    ``class_separation`` (redrawn until all pairwise distances reach it).

    The centers depend only on ``seed``; sample noise comes from a stream
    keyed by ``split``, so ``split="test"`` yields fresh points around the
    same geometry.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if n_per_class < 1:
        raise ValueError("need at least 1 sample per class")
    if dim < 2:
        raise ValueError("need dim >= 2")
    centers = _draw_centers(n_classes, dim, class_separation, stream(seed, "centers"))
    noise_rng = stream(seed, f"noise-{split}")
    X = np.repeat(centers, n_per_class, axis=0)
    X = X + noise_scale * noise_rng.standard_normal(X.shape)
    y = np.repeat(np.arange(n_classes), n_per_class)
    return Dataset(X, y, n_classes)


def standardize(train_X: np.ndarray, *other_X: np.ndarray):
    """Zero-mean/unit-variance per dimension, statistics from the train split.

    Returns (train_std, *others_std, (mean, std)). Constant dimensions keep
    scale 1 to avoid division by zero.
    """
    mean = train_X.mean(axis=0)
    std = train_X.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    out = tuple((x - mean) / std for x in (train_X,) + other_X)
    return out + ((mean, std),)


def save_dataset(dataset: Dataset, path_or_file) -> None:
    """CSV with header id,y,x_0..x_{d-1}; floats round-trip exactly.

    Accepts a path or an open text file, so callers can hash the exact bytes
    without touching disk.
    """
    if hasattr(path_or_file, "write"):
        _write_dataset(dataset, path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write_dataset(dataset, fh)


def _write_dataset(dataset: Dataset, fh) -> None:
    writer = csv.writer(fh)
    writer.writerow(["id", "y"] + [f"x_{j}" for j in range(dataset.dim)])
    for i in range(len(dataset)):
        writer.writerow(
            [i, int(dataset.hidden_truth[i])] + [repr(float(v)) for v in dataset.X[i]]
        )


def load_dataset(path, n_classes: int | None = None) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["id", "y"]:
            raise ValueError(f"{path}: unexpected header {header[:2]}")
        rows = sorted(reader, key=lambda r: int(r[0]))
    y = np.array([int(r[1]) for r in rows], dtype=np.int64)
    X = np.array([[float(v) for v in r[2:]] for r in rows], dtype=np.float64)
    if n_classes is None:
        n_classes = int(y.max()) + 1 if y.size else 0
    return Dataset(X, y, n_classes)


@dataclass
class Partition:
    """Per-sample label state and membership among {S, O+, O-, U}.

    S holds the initially provided full labels, O+ full labels won by correct
    guesses, O- negative labels from wrong guesses, U everything still hidden.
    """

    n_classes: int
    membership: np.ndarray  # object array of set codes
    labels: np.ndarray  # class index for S/O+/O-, -1 for U

    def __len__(self) -> int:
        return len(self.membership)

    @classmethod
    def all_hidden(cls, n_samples: int, n_classes: int) -> "Partition":
        membership = np.full(n_samples, SET_U, dtype=object)
        labels = np.full(n_samples, -1, dtype=np.int64)
        return cls(n_classes, membership, labels)

    def label_state(self, sample_id: int) -> LabelState:
        where = self.membership[sample_id]
        if where == SET_U:
            return LabelState(LabelKind.HIDDEN, -1)
        if where == SET_O_MINUS:
            return LabelState(LabelKind.NEGATIVE, int(self.labels[sample_id]))
        return LabelState(LabelKind.FULL, int(self.labels[sample_id]))

    def members(self, set_code: str) -> np.ndarray:
        return np.flatnonzero(self.membership == set_code)

    def counts(self) -> dict[str, int]:
        return {c: int(np.count_nonzero(self.membership == c)) for c in
                (SET_S, SET_O_PLUS, SET_O_MINUS, SET_U)}

    def full_labeled_ids(self) -> np.ndarray:
        """S union O+: samples with an accurate label."""
        return np.flatnonzero((self.membership == SET_S) | (self.membership == SET_O_PLUS))

    def negative_ids(self) -> np.ndarray:
        return self.members(SET_O_MINUS)

    def unlabeled_ids(self) -> np.ndarray:
        return self.members(SET_U)

    def copy(self) -> "Partition":
        return Partition(self.n_classes, self.membership.copy(), self.labels.copy())


def _balanced_counts(ids_by_class: list[np.ndarray], n_full: int, rng: np.random.Generator):
    n_classes = len(ids_by_class)
    counts = np.full(n_classes, n_full // n_classes, dtype=np.int64)
    remainder = n_full - counts.sum()
    if remainder:
        counts[rng.choice(n_classes, size=remainder, replace=False)] += 1
    for c, ids in enumerate(ids_by_class):
        if counts[c] > len(ids):
            raise ValueError(
                f"class {c} has only {len(ids)} samples, cannot label {counts[c]}"
            )
    return counts


def choose_balanced(ids_by_class: list[np.ndarray], n_full: int, rng: np.random.Generator):
    """Class-balanced draw of ``n_full`` ids (floor split, remainder random).

    Candidate lists are canonicalised by sorting, so the outcome depends only
    on the id sets, never on the order they were supplied in.
    """
    counts = _balanced_counts(ids_by_class, n_full, rng)
    chosen = []
    for c, ids in enumerate(ids_by_class):
        candidates = np.sort(np.asarray(ids))
        chosen.append(rng.choice(candidates, size=counts[c], replace=False))
    return np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=np.int64)


def initial_split(dataset: Dataset, n_full: int, rng: np.random.Generator | int) -> Partition:
    """Partition with ``n_full`` class-balanced samples in S, the rest in U."""
    if not 0 <= n_full <= len(dataset):
        raise ValueError(f"n_full={n_full} outside [0, {len(dataset)}]")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    partition = Partition.all_hidden(len(dataset), dataset.n_classes)
    ids_by_class = [np.flatnonzero(dataset.hidden_truth == c) for c in range(dataset.n_classes)]
    labeled = choose_balanced(ids_by_class, n_full, rng)
    partition.membership[labeled] = SET_S
    partition.labels[labeled] = dataset.hidden_truth[labeled]
    return partition


def apply_guess_result(partition: Partition, sample_id: int, guessed_class: int, answer: bool) -> Partition:
    """Move a U sample to O+ (yes) or O- (no) according to the oracle's answer."""
    if partition.membership[sample_id] != SET_U:
        raise ProtocolError(
            f"sample {sample_id} is in {partition.membership[sample_id]}, not U; "
            "each sample may be guessed only once"
        )
    if not 0 <= guessed_class < partition.n_classes:
        raise IndexError(f"guessed class {guessed_class} out of range")
    partition.membership[sample_id] = SET_O_PLUS if answer else SET_O_MINUS
    partition.labels[sample_id] = guessed_class
    return partition
