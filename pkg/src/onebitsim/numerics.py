"""Dense numerics for a small multilayer perceptron.

Everything a student/teacher pair needs at desk scale: stable softmax,
cross-entropy, the mean-squared consistency penalty, exact analytic gradients
of the combined batch objective, SGD with momentum, and EMA teacher updates.
Arrays are 64-bit floats throughout; all reductions have a fixed order, so
identical inputs give bit-identical outputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Suppression sentinel: large enough that exp(NEG_LARGE - max) underflows to
# exactly 0.0 after max-subtraction, so a suppressed class really scores zero.
NEG_LARGE = -1e9

# Floor inside cross_entropy so -log never sees an exact zero.
PROB_FLOOR = 1e-12


@dataclass
class MlpParams:
    """Weights and biases of a fully-connected ReLU network.

    ``weights[l]`` has shape (out, in); ``biases[l]`` has shape (out,).
    Hidden layers use ReLU; the final layer emits raw logits of width
    ``n_classes``. Gradients and momentum buffers reuse this container.
    """

    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    def layer_sizes(self) -> tuple[int, ...]:
        return (self.n_inputs,) + tuple(w.shape[0] for w in self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams(
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
        )

    def check_congruent(self, other: "MlpParams") -> None:
        if self.layer_sizes() != other.layer_sizes():
            raise ValueError(
                f"parameter shapes differ: {self.layer_sizes()} vs {other.layer_sizes()}"
            )


# A gradient set is shape-congruent to the params it differentiates.
GradientSet = MlpParams


def init_mlp(layer_sizes: tuple[int, ...] | list[int], rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    if len(layer_sizes) < 2:
        raise ValueError("need at least input and output widths")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis.

    Accepts a vector or a batch of row vectors. Entries equal to NEG_LARGE
    underflow to an exact 0.0 probability.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """-log p[label], with the probability floored at PROB_FLOOR."""
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < p.shape[-1]:
        raise IndexError(f"label {label} out of range for {p.shape[-1]} classes")
    return float(-np.log(max(float(p[label]), PROB_FLOOR)))


def consistency_mse(p_teacher: np.ndarray, p_student: np.ndarray) -> float:
    """Mean over classes of the squared difference of two probability vectors."""
    a = np.asarray(p_teacher, dtype=np.float64)
    b = np.asarray(p_student, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def suppress_logit(logits: np.ndarray, negative_class: int) -> np.ndarray:
    """Copy of ``logits`` with the negative class forced to NEG_LARGE."""
    z = np.array(logits, dtype=np.float64, copy=True)
    if not 0 <= negative_class < z.shape[-1]:
        raise IndexError(f"class {negative_class} out of range for {z.shape[-1]} classes")
    z[..., negative_class] = NEG_LARGE
    return z


def _noise_generator(noise) -> np.random.Generator:
    if isinstance(noise, np.random.Generator):
        return noise
    return np.random.default_rng(noise)


def forward(
    params: MlpParams,
    x: np.ndarray,
    noise_seed=None,
    noise_sigma: float = 0.0,
) -> np.ndarray:
    """Logits for ``x`` (a vector or a batch of rows).

    When ``noise_seed`` is given (an int seed or a Generator) and
    ``noise_sigma > 0``, additive Gaussian input noise is applied before the
    first layer. Deterministic given (params, x, noise_seed).
    """
    a = np.asarray(x, dtype=np.float64)
    squeeze = a.ndim == 1
    if squeeze:
        a = a[None, :]
    if a.shape[1] != params.n_inputs:
        raise ValueError(f"input width {a.shape[1]} != first layer width {params.n_inputs}")
    if noise_seed is not None and noise_sigma > 0.0:
        a = a + noise_sigma * _noise_generator(noise_seed).standard_normal(a.shape)
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ w.T + b
        if l != last:
            a = np.maximum(a, 0.0)
    return a[0] if squeeze else a


def _forward_cached(params: MlpParams, x: np.ndarray):
    """Forward pass keeping the post-activation of every layer (for backprop)."""
    activations = [x]
    a = x
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ w.T + b
        if l != last:
            a = np.maximum(a, 0.0)
        activations.append(a)
    return activations


def _batch_probs(params: MlpParams, x: np.ndarray, student_suppress: np.ndarray | None):
    acts = _forward_cached(params, x)
    logits = acts[-1]
    if student_suppress is not None:
        masked = student_suppress >= 0
        if np.any(masked):
            logits = logits.copy()
            logits[masked, student_suppress[masked]] = NEG_LARGE
            acts[-1] = logits
    return acts, softmax(logits)


def _loss_terms(probs, labels, teacher_probs):
    n, n_classes = probs.shape
    labeled = labels >= 0
    n_labeled = int(np.count_nonzero(labeled))
    if n_labeled:
        picked = probs[labeled, labels[labeled]]
        ce = float(np.sum(-np.log(np.maximum(picked, PROB_FLOOR)))) / n_labeled
    else:
        ce = 0.0
    cons = float(np.sum((probs - teacher_probs) ** 2)) / (n * n_classes)
    return ce, cons, labeled, n_labeled


def batch_loss(
    params: MlpParams,
    x: np.ndarray,
    labels: np.ndarray,
    teacher_probs: np.ndarray,
    lam: float,
    student_suppress: np.ndarray | None = None,
) -> tuple[float, float, float]:
    """(total, ce, cons) of the combined objective on one batch.

    total = mean cross-entropy over labeled rows (labels >= 0)
          + lam * mean consistency MSE against ``teacher_probs`` over all rows.
    ``student_suppress[i] >= 0`` masks that class in the student logits too.
    """
    x, labels, teacher_probs, student_suppress = _check_batch(
        params, x, labels, teacher_probs, student_suppress
    )
    _, probs = _batch_probs(params, x, student_suppress)
    ce, cons, _, _ = _loss_terms(probs, labels, teacher_probs)
    return ce + lam * cons, ce, cons


def backward(
    params: MlpParams,
    x: np.ndarray,
    labels: np.ndarray,
    teacher_probs: np.ndarray,
    lam: float,
    student_suppress: np.ndarray | None = None,
) -> tuple[GradientSet, float, float, float]:
    """Exact gradient of the batch objective w.r.t. the student params.

    Returns (grads, total, ce, cons). ``teacher_probs`` is a constant target
    (no gradient flows to the teacher). Rows with label -1 contribute no
    cross-entropy; rows with ``student_suppress[i] >= 0`` get that class
    suppressed in the student output before the consistency term.
    """
    x, labels, teacher_probs, student_suppress = _check_batch(
        params, x, labels, teacher_probs, student_suppress
    )
    n, n_classes = x.shape[0], params.n_classes

    acts, probs = _batch_probs(params, x, student_suppress)
    ce, cons, labeled, n_labeled = _loss_terms(probs, labels, teacher_probs)
    total = ce + lam * cons

    # d total / d logits. Cross-entropy rows: (p - onehot) / n_labeled.
    dlogits = np.zeros_like(probs)
    if n_labeled:
        dlogits[labeled] = probs[labeled]
        dlogits[labeled, labels[labeled]] -= 1.0
        dlogits[labeled] /= n_labeled
    # Consistency: J_softmax^T (2/C)(p - t) / n, J = diag(p) - p p^T.
    # A suppressed class has p = 0 exactly, so its column vanishes on its own.
    g = (2.0 / n_classes) * (probs - teacher_probs)
    dlogits += (lam / n) * probs * (g - np.sum(probs * g, axis=1, keepdims=True))

    grads = params.zeros_like()
    delta = dlogits
    for l in range(params.n_layers - 1, -1, -1):
        a_prev = acts[l]
        grads.weights[l][...] = delta.T @ a_prev
        grads.biases[l][...] = np.sum(delta, axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * (acts[l] > 0.0)
    return grads, total, ce, cons


def _check_batch(params, x, labels, teacher_probs, student_suppress=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[1] != params.n_inputs:
        raise ValueError(f"input width {x.shape[1]} != first layer width {params.n_inputs}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    teacher_probs = np.asarray(teacher_probs, dtype=np.float64)
    if teacher_probs.ndim == 1:
        teacher_probs = teacher_probs[None, :]
    if labels.shape[0] != x.shape[0] or teacher_probs.shape != (x.shape[0], params.n_classes):
        raise ValueError("batch arrays disagree on length or class count")
    if student_suppress is not None:
        student_suppress = np.asarray(student_suppress, dtype=np.int64).reshape(-1)
        if student_suppress.shape[0] != x.shape[0]:
            raise ValueError("student_suppress length disagrees with the batch")
        if np.any(student_suppress >= params.n_classes):
            raise ValueError("suppressed class out of range")
        # A negative label exists only where no full label does (once-only
        # rule), and a floored -log(0) would have no usable gradient anyway.
        if np.any((student_suppress >= 0) & (labels >= 0)):
            raise ValueError("a row cannot carry both a full label and a suppressed class")
    return x, labels, teacher_probs, student_suppress


def sgd_step(
    params: MlpParams,
    grads: GradientSet,
    lr: float,
    velocity: MlpParams,
    momentum: float,
) -> MlpParams:
    """In-place momentum SGD: v <- mu v + g; theta <- theta - lr v."""
    params.check_congruent(grads)
    params.check_congruent(velocity)
    for arrays in (
        zip(params.weights, grads.weights, velocity.weights),
        zip(params.biases, grads.biases, velocity.biases),
    ):
        for p, g, v in arrays:
            v *= momentum
            v += g
            p -= lr * v
    return params


def ema_update(teacher: MlpParams, student: MlpParams, alpha: float) -> MlpParams:
    """In-place exponential moving average: teacher <- a*teacher + (1-a)*student."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    teacher.check_congruent(student)
    for arrays in (zip(teacher.weights, student.weights), zip(teacher.biases, student.biases)):
        for t, s in arrays:
            t *= alpha
            t += (1.0 - alpha) * s
    return teacher


def save_params(params: MlpParams, path) -> None:
    """Flat text dump: one shape header line, then one value per line."""
    shapes = " ".join(f"{w.shape[0]}x{w.shape[1]}" for w in params.weights)
    with open(path, "w") as fh:
        fh.write(f"mlp {shapes}\n")
        for w, b in zip(params.weights, params.biases):
            for v in w.ravel():
                fh.write(f"{float(v)!r}\n")
            for v in b.ravel():
                fh.write(f"{float(v)!r}\n")


def load_params(path) -> MlpParams:
    with open(path) as fh:
        header = fh.readline().split()
        if not header or header[0] != "mlp":
            raise ValueError(f"{path}: not a parameter dump")
        shapes = [tuple(int(s) for s in tok.split("x")) for tok in header[1:]]
        values = [float(line) for line in fh if line.strip()]
    params = MlpParams()
    pos = 0
    for out, inp in shapes:
        w = np.array(values[pos : pos + out * inp]).reshape(out, inp)
        pos += out * inp
        b = np.array(values[pos : pos + out])
        pos += out
        params.weights.append(w)
        params.biases.append(b)
    if pos != len(values):
        raise ValueError(f"{path}: trailing values beyond declared shapes")
    return params
