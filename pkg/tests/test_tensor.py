import numpy as np
import pytest

from dialrl.neural import tensor as t
from dialrl.neural.optim import Adam, NonFiniteGradientError, clip_grad_norm, optimizer_step
from dialrl.neural.tensor import Tape, Tensor


def finite_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f at x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * h)
    return g


def check_grad(build, params: list[Tensor], h: float = 1e-6, tol: float = 1e-7):
    """Compare tape gradients of ``build()`` (scalar Tensor) to central differences."""
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = build()
        tape.backward(loss)
    for p in params:
        analytic = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        numeric = finite_difference(lambda: float(build().data), p.data, h=h)
        err = np.abs(analytic - numeric) / (1e-6 + np.abs(analytic) + np.abs(numeric))
        assert err.max() < tol, err.max()


def randt(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_sum_of_squares_gradient_is_2x(rng):
    x = randt(rng, 4, 3)
    with Tape() as tape:
        loss = t.reduce_sum(t.mul(x, x))
        tape.backward(loss)
    assert np.allclose(x.grad, 2 * x.data)


def test_tape_backward_twice_rejected(rng):
    x = randt(rng, 3)
    with Tape() as tape:
        loss = t.reduce_sum(x)
        tape.backward(loss)
        with pytest.raises(RuntimeError, match="consumed"):
            tape.backward(loss)


def test_backward_requires_scalar(rng):
    x = randt(rng, 3)
    with Tape() as tape:
        y = t.mul(x, 2.0)
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(y)


def test_no_tape_means_no_graph(rng):
    x = randt(rng, 3)
    y = t.mul(x, x)
    assert y.grad is None and not y.requires_grad


def test_add_mul_broadcast_grads(rng):
    a = randt(rng, 2, 3)
    b = randt(rng, 3)
    c = randt(rng, 2, 1)
    check_grad(lambda: t.reduce_sum(t.mul(t.add(a, b), c)), [a, b, c])


def test_matmul_grads(rng):
    a = randt(rng, 4, 3)
    b = randt(rng, 3, 5)
    check_grad(lambda: t.reduce_sum(t.mul(t.matmul(a, b), 0.3)), [a, b])


def test_batched_matmul_grads(rng):
    a = randt(rng, 2, 2, 4, 3)
    b = randt(rng, 2, 2, 3, 2)
    w = Tensor(rng.standard_normal((2, 2, 4, 2)))
    check_grad(lambda: t.reduce_sum(t.mul(t.matmul(a, b), w)), [a, b])


def test_softmax_rows_sum_to_one(rng):
    x = randt(rng, 5, 7)
    y = t.softmax(x, axis=-1)
    assert np.allclose(y.data.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_grads(rng):
    x = randt(rng, 3, 5)
    w = Tensor(rng.standard_normal((3, 5)))
    check_grad(lambda: t.reduce_sum(t.mul(t.softmax(x, axis=-1), w)), [x])


def test_log_softmax_grads(rng):
    x = randt(rng, 4, 6)
    w = Tensor(rng.standard_normal((4, 6)))
    check_grad(lambda: t.reduce_sum(t.mul(t.log_softmax(x, axis=-1), w)), [x])


def test_log_softmax_normalization(rng):
    x = randt(rng, 2, 9)
    y = t.log_softmax(x, axis=-1)
    assert np.allclose(np.exp(y.data).sum(axis=-1), 1.0, atol=1e-9)


def test_layer_norm_grads(rng):
    x = randt(rng, 3, 8)
    g = Tensor(rng.standard_normal(8), requires_grad=True)
    b = Tensor(rng.standard_normal(8), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 8)))
    check_grad(lambda: t.reduce_sum(t.mul(t.layer_norm(x, g, b), w)), [x, g, b], tol=1e-6)


def test_gelu_tanh_exp_log_grads(rng):
    x = randt(rng, 4, 4)
    pos = Tensor(np.abs(rng.standard_normal((4, 4))) + 0.5, requires_grad=True)
    check_grad(lambda: t.reduce_sum(t.gelu(x)), [x])
    check_grad(lambda: t.reduce_sum(t.tanh(x)), [x])
    check_grad(lambda: t.reduce_sum(t.exp(t.mul(x, 0.3))), [x])
    check_grad(lambda: t.reduce_sum(t.log(pos)), [pos])


def test_embedding_grads(rng):
    table = randt(rng, 7, 4)
    ids = np.array([[0, 3, 3], [6, 1, 0]])
    w = Tensor(rng.standard_normal((2, 3, 4)))
    check_grad(lambda: t.reduce_sum(t.mul(t.embedding(table, ids), w)), [table])


def test_select_and_gather_grads(rng):
    x = randt(rng, 3, 5, 4)
    ids = np.array([[1, 0, 3, 2, 1], [0, 0, 1, 2, 3], [3, 3, 3, 0, 0]])
    w = Tensor(rng.standard_normal((3, 4)))
    w2 = Tensor(rng.standard_normal((3, 5)))
    check_grad(lambda: t.reduce_sum(t.mul(t.select(x, axis=1, index=0), w)), [x])
    check_grad(lambda: t.reduce_sum(t.mul(t.gather_last(x, ids), w2)), [x])


def test_reshape_transpose_concat_grads(rng):
    a = randt(rng, 2, 6)
    b = randt(rng, 3, 4)
    w = Tensor(rng.standard_normal((2, 3, 4)))

    def build():
        x = t.reshape(a, (2, 3, 2))
        y = t.transpose(t.reshape(b, (3, 2, 2)), (1, 0, 2))
        return t.reduce_sum(t.mul(t.concat([x, y], axis=2), w))

    check_grad(build, [a, b])


def test_minimum_tie_routes_to_first(rng):
    a = Tensor(np.array([1.0, 2.0, 5.0]), requires_grad=True)
    b = Tensor(np.array([1.0, 3.0, 4.0]), requires_grad=True)
    with Tape() as tape:
        tape.backward(t.reduce_sum(t.minimum(a, b)))
    assert np.allclose(a.grad, [1.0, 1.0, 0.0])
    assert np.allclose(b.grad, [0.0, 0.0, 1.0])


def test_clip_gradient_gate(rng):
    x = Tensor(np.array([-2.0, 0.5, 2.0]), requires_grad=True)
    with Tape() as tape:
        tape.backward(t.reduce_sum(t.clip(x, 0.0, 1.0)))
    assert np.allclose(x.grad, [0.0, 1.0, 0.0])


def test_mean_grads(rng):
    x = randt(rng, 4, 5)
    w = Tensor(rng.standard_normal(4))
    check_grad(lambda: t.reduce_sum(t.mul(t.reduce_mean(x, axis=1), w)), [x])


def test_grad_accumulates_across_tapes(rng):
    x = randt(rng, 3)
    for _ in range(2):
        with Tape() as tape:
            tape.backward(t.reduce_sum(x))
    assert np.allclose(x.grad, 2.0)


def test_adam_moves_toward_minimum():
    x = Tensor(np.array([5.0]), requires_grad=True)
    opt = Adam({"x": x}, lr=0.1)
    for _ in range(400):
        with Tape() as tape:
            tape.backward(t.reduce_sum(t.mul(x, x)))
        optimizer_step(opt)
    assert abs(float(x.data[0])) < 1e-2


def test_adam_rejects_non_finite():
    x = Tensor(np.array([1.0]), requires_grad=True)
    x.grad = np.array([np.nan])
    opt = Adam({"bad_param": x}, lr=0.1)
    with pytest.raises(NonFiniteGradientError, match="bad_param"):
        opt.step()


def test_clip_grad_norm_scales():
    x = Tensor(np.zeros(4), requires_grad=True)
    x.grad = np.full(4, 3.0)
    norm = clip_grad_norm({"x": x}, 1.0)
    assert norm == pytest.approx(6.0)
    assert np.linalg.norm(x.grad) == pytest.approx(1.0)
