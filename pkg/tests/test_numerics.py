"""Numeric core: softmax/CE/consistency values, suppression, gradients.

Reference values are frozen decimals computed independently of the library
(logistic identities and direct exp/log arithmetic).
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onebitsim import numerics as nm

# softmax([1, 0]) via the logistic identity 1/(1+e^-1)
SOFTMAX_10 = (0.7310585786300049, 0.2689414213699951)
# softmax([2, 1, 0.5]) by direct normalization
SOFTMAX_210 = (0.6285317192117625, 0.23122389762214907, 0.1402443831660885)
# same logits with class 1 suppressed: renormalized over {0, 2}
SUPPRESSED_210 = (0.8175744761936438, 0.0, 0.18242552380635635)


def finite_mlp(rng, sizes=(3, 5, 4)):
    return nm.init_mlp(sizes, rng)


# ---------------------------------------------------------------- softmax

def test_softmax_two_class_value():
    p = nm.softmax(np.array([1.0, 0.0]))
    assert p == pytest.approx(SOFTMAX_10, abs=1e-15)


def test_softmax_uniform_logits():
    p = nm.softmax(np.zeros(3))
    assert np.all(p == p[0])
    assert p.sum() == pytest.approx(1.0, abs=1e-15)


def test_softmax_batch_rows_independent():
    logits = np.array([[1.0, 0.0], [2.0, 1.0]])
    p = nm.softmax(logits)
    assert p.shape == (2, 2)
    assert np.allclose(p[0], nm.softmax(logits[0]))
    assert np.allclose(p[1], nm.softmax(logits[1]))


def test_softmax_shift_invariance_exact_on_dyadic_grid():
    # logits and shift on a coarse dyadic grid: x - c is exact in binary
    logits = np.array([1.5, -2.25, 0.0, 3.75])
    for shift in (0.5, -4.0, 128.0):
        assert np.array_equal(nm.softmax(logits), nm.softmax(logits + shift))


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8),
       st.floats(-50, 50))
def test_softmax_shift_invariance_close(logits, shift):
    logits = np.array(logits)
    p, q = nm.softmax(logits), nm.softmax(logits + shift)
    assert np.allclose(p, q, atol=1e-12)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(p >= 0)


def test_softmax_extreme_logits_no_overflow():
    p = nm.softmax(np.array([1000.0, 0.0, -1000.0]))
    assert np.isfinite(p).all()
    assert p[0] == pytest.approx(1.0, abs=1e-12)


def test_softmax_empty_raises():
    with pytest.raises(ValueError):
        nm.softmax(np.array([]))


# ------------------------------------------------------------ suppression

def test_suppress_logit_value():
    out = nm.suppress_logit(np.array([2.0, 1.0, 0.5]), 1)
    assert out[1] == nm.NEG_LARGE
    p = nm.softmax(out)
    assert p == pytest.approx(SUPPRESSED_210, abs=1e-15)
    assert p[1] == 0.0  # exact underflow after max subtraction


def test_suppress_logit_does_not_mutate_input():
    logits = np.array([2.0, 1.0, 0.5])
    nm.suppress_logit(logits, 0)
    assert logits[0] == 2.0


def test_suppress_logit_out_of_range():
    with pytest.raises(IndexError):
        nm.suppress_logit(np.array([1.0, 2.0]), 2)


@given(st.integers(2, 12), st.integers(0, 10_000), st.data())
@settings(max_examples=200, deadline=None)
def test_suppression_invariants(n_classes, seed, data):
    rng = np.random.default_rng(seed)
    logits = rng.uniform(-10, 10, size=n_classes)
    k = data.draw(st.integers(0, n_classes - 1))
    p = nm.softmax(logits)
    q = nm.softmax(nm.suppress_logit(logits, k))
    assert q[k] < 1e-9
    assert abs(q.sum() - 1.0) < 1e-9
    keep = [i for i in range(n_classes) if i != k]
    for i in keep:
        for j in keep:
            ratio_before = p[i] / p[j]
            ratio_after = q[i] / q[j]
            assert ratio_after == pytest.approx(ratio_before, rel=1e-9)


# ---------------------------------------------------------- cross entropy

def test_cross_entropy_values():
    p = np.array(SOFTMAX_10)
    assert nm.cross_entropy(p, 0) == pytest.approx(0.3132616875182228, abs=1e-15)
    assert nm.cross_entropy(p, 1) == pytest.approx(1.3132616875182228, abs=1e-15)


def test_cross_entropy_uniform_hundred_classes():
    p = np.full(100, 0.01)
    assert nm.cross_entropy(p, 42) == pytest.approx(4.605170185988092, abs=1e-12)


def test_cross_entropy_zero_probability_floored():
    # a suppressed class keeps CE finite through the probability floor
    assert nm.cross_entropy(np.array([1.0, 0.0]), 1) == pytest.approx(
        27.631021115928547, abs=1e-12
    )


def test_cross_entropy_bad_label():
    with pytest.raises(IndexError):
        nm.cross_entropy(np.array([0.5, 0.5]), 2)


# ------------------------------------------------------------ consistency

def test_consistency_mse_values():
    assert nm.consistency_mse(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0
    p = np.array(SOFTMAX_210)
    assert nm.consistency_mse(p, p) == 0.0


def test_consistency_mse_shape_mismatch():
    with pytest.raises(ValueError):
        nm.consistency_mse(np.zeros(3), np.zeros(4))


@given(st.integers(2, 8), st.integers(0, 10_000))
def test_consistency_mse_symmetric_nonnegative(n, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    assert nm.consistency_mse(p, q) >= 0.0
    assert nm.consistency_mse(p, q) == pytest.approx(nm.consistency_mse(q, p))


# ----------------------------------------------------------- init/forward

def test_init_mlp_shapes_and_bounds():
    rng = np.random.default_rng(0)
    params = nm.init_mlp((7, 5, 3), rng)
    assert [w.shape for w in params.weights] == [(5, 7), (3, 5)]
    assert [b.shape for b in params.biases] == [(5,), (3,)]
    for w in params.weights:
        limit = math.sqrt(6.0 / (w.shape[1] + w.shape[0]))
        assert np.all(np.abs(w) <= limit)
    for b in params.biases:
        assert np.all(b == 0.0)


def test_init_mlp_deterministic():
    a = nm.init_mlp((4, 3, 2), np.random.default_rng(9))
    b = nm.init_mlp((4, 3, 2), np.random.default_rng(9))
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))


def hand_built_params():
    params = nm.init_mlp((2, 2, 2), np.random.default_rng(0))
    params.weights[0][:] = np.eye(2)
    params.biases[0][:] = 0.0
    params.weights[1][:] = np.array([[1.0, 2.0], [3.0, 4.0]])
    params.biases[1][:] = np.array([0.5, -0.5])
    return params


def test_forward_straight_line_oracle():
    params = hand_built_params()
    # x = [1, -2]: hidden relu([1, -2]) = [1, 0]; logits = W2 @ h + b2
    logits = nm.forward(params, np.array([1.0, -2.0]))
    assert np.array_equal(logits, np.array([1.5, 2.5]))
    # all-negative input: hidden all zero, logits are the output bias
    logits = nm.forward(params, np.array([-1.0, -3.0]))
    assert np.array_equal(logits, np.array([0.5, -0.5]))


def test_forward_batch_matches_vector_calls():
    rng = np.random.default_rng(3)
    params = finite_mlp(rng)
    X = rng.normal(size=(5, 3))
    batch = nm.forward(params, X)
    rows = np.stack([nm.forward(params, x) for x in X])
    assert np.allclose(batch, rows, atol=1e-15)


def test_forward_noise_deterministic_by_seed():
    rng = np.random.default_rng(4)
    params = finite_mlp(rng)
    x = rng.normal(size=(4, 3))
    a = nm.forward(params, x, noise_seed=77, noise_sigma=0.3)
    b = nm.forward(params, x, noise_seed=77, noise_sigma=0.3)
    c = nm.forward(params, x, noise_seed=78, noise_sigma=0.3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, nm.forward(params, x))


# --------------------------------------------------------------- gradients

def flatten(params):
    return np.concatenate([a.ravel() for a in params.weights + params.biases])


def assign_flat(params, vector):
    offset = 0
    for arr in params.weights + params.biases:
        arr[:] = vector[offset:offset + arr.size].reshape(arr.shape)
        offset += arr.size


def fd_gradient(params, loss_fn, h=1e-5):
    theta = flatten(params)
    grad = np.empty_like(theta)
    work = params.copy()
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + h
        assign_flat(work, bumped)
        up = loss_fn(work)
        bumped[i] = theta[i] - h
        assign_flat(work, bumped)
        down = loss_fn(work)
        grad[i] = (up - down) / (2 * h)
    return grad


def random_batch_mix(rng, sizes, n=5, relu_margin=1e-3):
    """A protocol-valid batch (labeled, unlabeled, and negative rows) where
    every hidden pre-activation clears the ReLU kink, so central differences
    stay on one linear piece."""
    for _ in range(200):
        params = nm.init_mlp(sizes, rng)
        X = rng.normal(size=(n, sizes[0]))
        margins = []
        acts = X
        for w, b in zip(params.weights[:-1], params.biases[:-1]):
            z = acts @ w.T + b
            margins.append(np.min(np.abs(z)))
            acts = np.maximum(z, 0.0)
        if min(margins) > relu_margin:
            labels = rng.integers(-1, sizes[-1], size=n)
            if np.all(labels < 0):
                labels[0] = 0
            # negative labels only exist on rows without a full label
            suppress = np.where((labels < 0) & (rng.random(n) < 0.6),
                                rng.integers(0, sizes[-1], size=n), -1)
            teacher = rng.dirichlet(np.ones(sizes[-1]), size=n)
            negative = suppress >= 0
            teacher[negative, suppress[negative]] = 0.0
            teacher /= teacher.sum(axis=1, keepdims=True)
            return params, X, labels, teacher, suppress
    raise AssertionError("could not build a kink-free batch")


def max_rel_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.mark.parametrize("case_seed", range(20))
def test_backward_matches_finite_differences(case_seed):
    rng = np.random.default_rng(1000 + case_seed)
    params, X, labels, teacher, suppress = random_batch_mix(rng, (3, 5, 4))
    lam = float(rng.uniform(0, 20))
    grads, *_ = nm.backward(params, X, labels, teacher, lam,
                            student_suppress=suppress)

    def loss_fn(p):
        total, _, _ = nm.batch_loss(p, X, labels, teacher, lam,
                                    student_suppress=suppress)
        return total

    assert max_rel_error(flatten(grads), fd_gradient(params, loss_fn)) < 1e-4


def test_backward_pure_ce_closed_form():
    # single labeled sample, lam = 0: dlogits = p - onehot
    rng = np.random.default_rng(42)
    params, X, _, teacher, _ = random_batch_mix(rng, (3, 4, 3), n=1)
    labels = np.array([2])
    grads, *_ = nm.backward(params, X, labels, teacher, 0.0)
    probs = nm.softmax(nm.forward(params, X))
    dlogits = probs.copy()
    dlogits[0, 2] -= 1.0
    # last-layer weight gradient is dlogits^T @ hidden activations
    hidden = np.maximum(X @ params.weights[0].T + params.biases[0], 0.0)
    assert np.allclose(grads.weights[1], dlogits.T @ hidden, atol=1e-12)
    assert np.allclose(grads.biases[1], dlogits[0], atol=1e-12)


def test_backward_unlabeled_rows_contribute_no_ce():
    rng = np.random.default_rng(7)
    params, X, _, teacher, _ = random_batch_mix(rng, (3, 5, 4), n=4)
    labels = np.array([-1, -1, 2, -1])
    _, _, ce, _ = nm.backward(params, X, labels, teacher, 1.0)
    probs = nm.softmax(nm.forward(params, X))
    assert ce == pytest.approx(nm.cross_entropy(probs[2], 2))


def test_batch_loss_decomposition():
    rng = np.random.default_rng(8)
    params, X, labels, teacher, suppress = random_batch_mix(rng, (3, 5, 4))
    lam = 3.5
    total, ce, cons = nm.batch_loss(params, X, labels, teacher, lam,
                                    student_suppress=suppress)
    assert total == pytest.approx(ce + lam * cons, rel=1e-12)
    assert cons >= 0.0


def test_batch_loss_consistency_is_mean_over_rows_and_classes():
    rng = np.random.default_rng(9)
    params, X, labels, teacher, _ = random_batch_mix(rng, (3, 5, 4))
    _, _, cons = nm.batch_loss(params, X, labels, teacher, 1.0)
    probs = nm.softmax(nm.forward(params, X))
    expected = np.mean([nm.consistency_mse(p, t) for p, t in zip(probs, teacher)])
    assert cons == pytest.approx(expected, rel=1e-12)


def test_empty_batch_raises():
    rng = np.random.default_rng(10)
    params = finite_mlp(rng)
    with pytest.raises(ValueError):
        nm.batch_loss(params, np.empty((0, 3)), np.empty(0, dtype=int),
                      np.empty((0, 4)), 1.0)


def test_labeled_and_suppressed_row_rejected():
    rng = np.random.default_rng(11)
    params, X, _, teacher, _ = random_batch_mix(rng, (3, 5, 4), n=2)
    labels = np.array([1, -1])
    suppress = np.array([1, -1])  # row 0 both labeled and suppressed
    with pytest.raises(ValueError, match="full label"):
        nm.batch_loss(params, X, labels, teacher, 1.0, student_suppress=suppress)
    with pytest.raises(ValueError, match="full label"):
        nm.backward(params, X, labels, teacher, 1.0, student_suppress=suppress)


# ------------------------------------------------------------ optimization

def test_sgd_step_two_step_unroll():
    params = nm.init_mlp((2, 2), np.random.default_rng(0))
    params.weights[0][:] = 1.0
    params.biases[0][:] = 0.0
    g1 = params.zeros_like()
    g1.weights[0][:] = 0.5
    velocity = params.zeros_like()
    nm.sgd_step(params, g1, lr=0.1, velocity=velocity, momentum=0.9)
    # v1 = 0.5, theta = 1 - 0.05
    assert np.allclose(params.weights[0], 0.95)
    g2 = params.zeros_like()
    g2.weights[0][:] = 1.0
    nm.sgd_step(params, g2, lr=0.1, velocity=velocity, momentum=0.9)
    # v2 = 0.9 * 0.5 + 1.0 = 1.45, theta = 0.95 - 0.145
    assert np.allclose(params.weights[0], 0.805)


def test_sgd_training_decreases_supervised_loss():
    rng = np.random.default_rng(5)
    params = nm.init_mlp((4, 8, 3), rng)
    X = rng.normal(size=(30, 4))
    labels = rng.integers(0, 3, size=30)
    teacher = np.full((30, 3), 1.0 / 3.0)
    velocity = params.zeros_like()
    first = None
    for _ in range(60):
        grads, total, _, _ = nm.backward(params, X, labels, teacher, 0.0)
        if first is None:
            first = total
        nm.sgd_step(params, grads, 0.1, velocity, 0.9)
    _, last, _, _ = nm.backward(params, X, labels, teacher, 0.0)
    assert last < first * 0.5


def test_ema_update_geometric_decay():
    teacher = nm.init_mlp((2, 2), np.random.default_rng(1))
    student = teacher.copy()
    teacher.weights[0][:] = 0.0
    student.weights[0][:] = 1.0
    for _ in range(10):
        nm.ema_update(teacher, student, alpha=0.9)
    # closed form: 1 - 0.9^10
    assert np.allclose(teacher.weights[0], 1.0 - 0.9 ** 10, atol=1e-12)


def test_ema_update_alpha_bounds():
    params = nm.init_mlp((2, 2), np.random.default_rng(1))
    with pytest.raises(ValueError):
        nm.ema_update(params.copy(), params, alpha=1.5)


# ------------------------------------------------------------- persistence

def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    params = nm.init_mlp((5, 4, 3), rng)
    path = tmp_path / "params.txt"
    nm.save_params(params, path)
    loaded = nm.load_params(path)
    assert all(np.array_equal(a, b) for a, b in zip(params.weights, loaded.weights))
    assert all(np.array_equal(a, b) for a, b in zip(params.biases, loaded.biases))
