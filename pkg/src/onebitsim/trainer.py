"""Mean-teacher training with negative label suppression, as an estimator.

The student network trains on a combined objective: cross-entropy on the
fully labeled rows plus a consistency penalty (mean squared difference of the
teacher's and student's class probabilities) on every row. The teacher is an
exponential moving average of the student. A row carrying a negative label
contributes only the consistency term, with the teacher's logit for the
negative class forced to a large negative value so its probability is exactly
zero -- that is the suppression step that keeps wrong guesses from pulling
teacher and student into a shared mistake.

``MeanTeacherClassifier`` follows the scikit-learn estimator contract
(get_params/set_params, fit/predict/predict_proba/score, ``classes_``), with
the semi-supervised convention that ``y == -1`` marks an unlabeled row.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from . import numerics
from .dataset import SET_O_MINUS, SET_O_PLUS, SET_S, Partition
from .numerics import MlpParams, NEG_LARGE
from .seeding import stream


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries a diagnostic snapshot."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainedModel:
    """Student/teacher parameter pair plus the per-epoch training history."""

    student: MlpParams
    teacher: MlpParams
    velocity: MlpParams
    step_count: int = 0
    history: list[dict] = field(default_factory=list)


def loss_roles(partition: Partition, ids: np.ndarray):
    """Per-sample loss roles for ``ids``: (labels, negative_classes).

    labels[i] >= 0 -> cross-entropy on that class plus consistency (S, O+);
    negative[i] >= 0 -> consistency with the teacher's score for that class
    suppressed to zero (O-); both -1 -> plain consistency (U).
    """
    ids = np.asarray(ids, dtype=np.int64)
    labels = np.full(ids.shape, -1, dtype=np.int64)
    negatives = np.full(ids.shape, -1, dtype=np.int64)
    state_full = np.isin(partition.membership[ids], (SET_S, SET_O_PLUS))
    state_neg = partition.membership[ids] == SET_O_MINUS
    labels[state_full] = partition.labels[ids[state_full]]
    negatives[state_neg] = partition.labels[ids[state_neg]]
    return labels, negatives


def _iter_batches(rng, n, batch_size, labeled_idx, rest_idx, labeled_frac):
    """Deterministic batch composition for one epoch.

    When both pools are nonempty each batch carries at least
    round(labeled_frac * batch_size) labeled rows (minimum 1), cycling the
    shuffled labeled pool as often as needed.
    """
    n_batches = max(1, math.ceil(n / batch_size))
    if len(labeled_idx) == 0 or len(rest_idx) == 0:
        pool = labeled_idx if len(rest_idx) == 0 else rest_idx
        order = rng.permutation(pool)
        for b in range(n_batches):
            chunk = order[b * batch_size : (b + 1) * batch_size]
            if len(chunk):
                yield chunk
        return
    k = min(batch_size, max(1, int(round(labeled_frac * batch_size))))
    m = batch_size - k
    lab_order = np.resize(rng.permutation(labeled_idx), n_batches * k)
    rest_order = np.resize(rng.permutation(rest_idx), max(n_batches * m, 1))
    for b in range(n_batches):
        lab = lab_order[b * k : (b + 1) * k]
        rest = rest_order[b * m : (b + 1) * m]
        yield np.concatenate([lab, rest])


class MeanTeacherClassifier(BaseEstimator, ClassifierMixin):
    """Semi-supervised MLP classifier trained with a mean-teacher objective.

    Parameters
    ----------
    hidden_layers : widths of the ReLU hidden layers.
    n_classes : output width; inferred from the labeled rows when None.
    lam : consistency weight after ramp-up.
    ramp_frac : fraction of the epochs over which lam ramps linearly from 0.
    epochs, batch_size, lr, momentum : the SGD loop. ``cosine_lr`` decays the
        learning rate per epoch with a half cosine.
    labeled_frac : minimum fraction of labeled rows per batch when available.
    ema_decay : teacher EMA coefficient alpha. ``ema_warmup`` caps alpha at
        1 - 1/(step+1) early on so the teacher tracks the young student.
    input_noise : sigma of the Gaussian input noise, drawn independently for
        the teacher and student passes (features are assumed standardized).
    suppress_student : also mask the negative class in the student's
        consistency output (the default touches only the teacher).
    eval_network : "teacher" (default) or "student"; the network behind
        predict/predict_proba/score.
    warm_start : continue from the current parameters on the next fit call.
    allow_no_labels : permit fitting with zero labeled rows.
    random_state : root seed for init, batching, and noise streams.
    """

    def __init__(
        self,
        hidden_layers=(64,),
        n_classes=None,
        lam=10.0,
        ramp_frac=0.2,
        epochs=40,
        batch_size=64,
        labeled_frac=0.25,
        lr=0.05,
        cosine_lr=True,
        momentum=0.9,
        ema_decay=0.99,
        ema_warmup=True,
        input_noise=0.1,
        suppress_student=False,
        eval_network="teacher",
        warm_start=False,
        allow_no_labels=False,
        random_state=0,
    ):
        self.hidden_layers = hidden_layers
        self.n_classes = n_classes
        self.lam = lam
        self.ramp_frac = ramp_frac
        self.epochs = epochs
        self.batch_size = batch_size
        self.labeled_frac = labeled_frac
        self.lr = lr
        self.cosine_lr = cosine_lr
        self.momentum = momentum
        self.ema_decay = ema_decay
        self.ema_warmup = ema_warmup
        self.input_noise = input_noise
        self.suppress_student = suppress_student
        self.eval_network = eval_network
        self.warm_start = warm_start
        self.allow_no_labels = allow_no_labels
        self.random_state = random_state

    # ------------------------------------------------------------------ fit

    def _validate_fit_args(self, X, y, negative_y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y lengths differ")
        if negative_y is None:
            negative_y = np.full(y.shape, -1, dtype=np.int64)
        else:
            negative_y = np.asarray(negative_y, dtype=np.int64).reshape(-1)
            if negative_y.shape[0] != X.shape[0]:
                raise ValueError("X and negative_y lengths differ")
        if np.any((y >= 0) & (negative_y >= 0)):
            raise ValueError("a row cannot carry both a full and a negative label")
        n_classes = self.n_classes
        if n_classes is None:
            if not np.any(y >= 0):
                raise ValueError("cannot infer n_classes without labeled rows")
            n_classes = int(y.max()) + 1
        if y.max(initial=-1) >= n_classes or negative_y.max(initial=-1) >= n_classes:
            raise ValueError("label outside [0, n_classes)")
        return X, y, negative_y, int(n_classes)

    def _init_state(self, n_features, n_classes):
        sizes = (n_features, *self.hidden_layers, n_classes)
        student = numerics.init_mlp(sizes, stream(self.random_state, "init"))
        return TrainedModel(
            student=student,
            teacher=student.copy(),
            velocity=student.zeros_like(),
        )

    def fit(self, X, y, negative_y=None, eval_set=None):
        """Run the epoch loop on (X, y) with y == -1 marking unlabeled rows.

        ``negative_y[i] >= 0`` marks a known-wrong class for row i (such rows
        must have y == -1). ``eval_set=(X_eval, y_eval)`` records per-epoch
        accuracy of the evaluation network in the history.
        """
        X, y, negative_y, n_classes = self._validate_fit_args(X, y, negative_y)
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 0.0 < self.ema_decay <= 1.0:
            raise ValueError("ema_decay must be in (0, 1]")

        labeled_idx = np.flatnonzero(y >= 0)
        if len(labeled_idx) == 0 and not self.allow_no_labels:
            raise ValueError(
                "no labeled rows; pass allow_no_labels=True for a label-free warm-up"
            )

        first_fit = not (self.warm_start and hasattr(self, "state_"))
        if first_fit:
            self.state_ = self._init_state(X.shape[1], n_classes)
            self.classes_ = np.arange(n_classes)
            self.n_features_in_ = X.shape[1]
        else:
            if X.shape[1] != self.n_features_in_ or n_classes != len(self.classes_):
                raise ValueError("warm start with mismatched feature or class count")

        self._run_epochs(X, y, negative_y, labeled_idx, eval_set)
        return self

    def _run_epochs(self, X, y, negative_y, labeled_idx, eval_set):
        state = self.state_
        rest_idx = np.flatnonzero(y < 0)
        rng_batch = stream(self.random_state, "batch")
        rng_noise = stream(self.random_state, "noise")
        ramp_epochs = math.ceil(self.ramp_frac * self.epochs)
        epoch_base = len(state.history)
        sigma = float(self.input_noise)

        for epoch in range(self.epochs):
            lam_e = self.lam * (min(1.0, epoch / ramp_epochs) if ramp_epochs else 1.0)
            lr_e = self.lr
            if self.cosine_lr and self.epochs > 1:
                lr_e = self.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / self.epochs))
            ce_sum = cons_sum = total_sum = 0.0
            n_b = 0
            for ids in _iter_batches(
                rng_batch, len(X), self.batch_size, labeled_idx, rest_idx, self.labeled_frac
            ):
                xb = X[ids]
                yb = y[ids]
                negb = negative_y[ids]
                if sigma > 0.0:
                    xt = xb + sigma * rng_noise.standard_normal(xb.shape)
                    xs = xb + sigma * rng_noise.standard_normal(xb.shape)
                else:
                    xt, xs = xb, xb

                teacher_logits = numerics.forward(state.teacher, xt)
                has_neg = negb >= 0
                if np.any(has_neg):
                    teacher_logits[has_neg, negb[has_neg]] = NEG_LARGE
                teacher_probs = numerics.softmax(teacher_logits)

                suppress = negb if self.suppress_student else None
                grads, total, ce, cons = numerics.backward(
                    state.student, xs, yb, teacher_probs, lam_e, suppress
                )
                if not math.isfinite(total):
                    raise TrainingDiverged(
                        "non-finite loss",
                        {
                            "epoch": epoch_base + epoch,
                            "batch": n_b,
                            "lr": lr_e,
                            "lam": lam_e,
                            "ce": ce,
                            "cons": cons,
                            "weight_norms": [
                                float(np.linalg.norm(w)) for w in state.student.weights
                            ],
                        },
                    )
                numerics.sgd_step(state.student, grads, lr_e, state.velocity, self.momentum)
                state.step_count += 1
                alpha = self.ema_decay
                if self.ema_warmup:
                    alpha = min(1.0 - 1.0 / (state.step_count + 1), alpha)
                numerics.ema_update(state.teacher, state.student, alpha)

                ce_sum += ce
                cons_sum += cons
                total_sum += total
                n_b += 1

            row = {
                "epoch": epoch_base + epoch,
                "ce_loss": ce_sum / n_b,
                "cons_loss": cons_sum / n_b,
                "total": total_sum / n_b,
                "eval_acc": float("nan"),
            }
            if eval_set is not None:
                row["eval_acc"] = evaluate(self, eval_set[0], eval_set[1])
            state.history.append(row)

    # -------------------------------------------------------------- predict

    def _params_for(self, use_teacher: bool) -> MlpParams:
        if not hasattr(self, "state_"):
            raise NotFittedError("call fit before predicting")
        return self.state_.teacher if use_teacher else self.state_.student

    def predict_full(self, X, use_teacher: bool | None = None):
        """(classes, max probabilities, full probability rows); noise-free.

        Argmax ties break toward the lower class index.
        """
        if use_teacher is None:
            use_teacher = self.eval_network == "teacher"
        X = check_array(X, dtype=np.float64)
        probs = numerics.softmax(numerics.forward(self._params_for(use_teacher), X))
        classes = np.argmax(probs, axis=1)
        return classes, probs[np.arange(len(probs)), classes], probs

    def predict_proba(self, X):
        return self.predict_full(X)[2]

    def predict(self, X):
        return self.predict_full(X)[0]

    @property
    def history_(self) -> list[dict]:
        return self.state_.history


def train_stage(
    clf: MeanTeacherClassifier,
    X: np.ndarray,
    partition: Partition,
    use_nls: bool = True,
    eval_set=None,
) -> MeanTeacherClassifier:
    """Fit the classifier against the partition's current label state.

    With ``use_nls=False`` the negative labels are withheld and O- rows train
    exactly like unlabeled ones.
    """
    labels, negatives = loss_roles(partition, np.arange(len(X)))
    return clf.fit(X, labels, negative_y=negatives if use_nls else None, eval_set=eval_set)


def evaluate(clf: MeanTeacherClassifier, X: np.ndarray, y_true: np.ndarray) -> float:
    """Top-1 accuracy of the evaluation network on a test set."""
    y_true = np.asarray(y_true)
    if len(y_true) == 0:
        raise ValueError("empty test set")
    return float(np.mean(clf.predict(X) == y_true))


def write_history_csv(history: list[dict], path) -> None:
    """Per-epoch loss components and eval accuracy as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "ce_loss", "cons_loss", "total", "eval_acc"])
        for row in history:
            writer.writerow(
                [row["epoch"]] + [repr(row[k]) for k in ("ce_loss", "cons_loss", "total", "eval_acc")]
            )
