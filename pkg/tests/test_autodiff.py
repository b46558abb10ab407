import zlib

import numpy as np
import pytest

from noctr import autodiff as ad
from noctr.autodiff import Tape, backward, grad_check


def test_square_gradient():
    tape = Tape()
    x = tape.param(np.array(3.0))
    g = backward(tape, ad.square(x))
    assert g[x] == pytest.approx(6.0)


def test_sin_forward_and_adjoint():
    tape = Tape()
    x = tape.param(np.zeros(3))
    y = ad.sin(x)
    np.testing.assert_array_equal(y.value, 0.0)
    np.testing.assert_array_equal(backward(tape, ad.sum(y))[x], 1.0)


def test_sum_sin_gradient_is_cos():
    x0 = np.linspace(-2, 2, 7)
    tape = Tape()
    x = tape.param(x0)
    np.testing.assert_allclose(backward(tape, ad.sum(ad.sin(x)))[x], np.cos(x0), rtol=0, atol=1e-15)


def test_mean_of_constant():
    tape = Tape()
    x = tape.param(np.full((2, 5), 4.0))
    m = ad.mean(x)
    assert float(m.value) == 4.0
    np.testing.assert_allclose(backward(tape, m)[x], 0.1)


def test_matmul_adjoints():
    rng = np.random.default_rng(0)
    A, B = rng.standard_normal((2, 3)), rng.standard_normal((3, 4))
    G = rng.standard_normal((2, 4))
    tape = Tape()
    a, b = tape.param(A), tape.param(B)
    g = backward(tape, ad.sum(ad.mul(ad.matmul(a, b), G)))
    np.testing.assert_allclose(g[a], G @ B.T, atol=1e-14)
    np.testing.assert_allclose(g[b], A.T @ G, atol=1e-14)
    rep = grad_check(lambda t, v: ad.sum(ad.mul(ad.matmul(v[0], v[1]), G)), [A, B], h=1e-6)
    assert rep.max_rel_error < 1e-5


def test_non_scalar_loss_rejected():
    tape = Tape()
    x = tape.param(np.ones(3))
    with pytest.raises(ValueError):
        backward(tape, x)


def test_shape_mismatch():
    tape = Tape()
    with pytest.raises(ValueError):
        ad.matmul(tape.param(np.ones((2, 3))), tape.param(np.ones((2, 3))))
    with pytest.raises(ValueError):
        ad.add(tape.param(np.ones(3)), tape.param(np.ones(4)))
    with pytest.raises(ValueError):
        ad.add_bias(tape.param(np.ones((2, 3))), tape.param(np.ones(2)))


def test_inputs_precede_nodes():
    tape = Tape()
    x = tape.param(np.ones((2, 2)))
    ad.sum(ad.tanh(ad.matmul(x, x)))
    for node, inputs in enumerate(tape.inputs):
        assert all(i < node for i in inputs)


def test_grad_check_exact_cases():
    assert grad_check(lambda t, v: ad.square(v[0]), [np.array(3.0)], h=1e-5).max_rel_error < 1e-7
    rep = grad_check(lambda t, v: ad.scale(ad.sum(ad.sub(v[0], v[0])), 1.0), [np.ones(3)])
    assert rep.max_rel_error == 0.0


def _composite(t, v):
    x, w, b, c = v
    h = ad.add_bias(ad.matmul(x, w), b)
    h = ad.concat([ad.sin(h), ad.tanh(h), ad.relu(h)], axis=1)
    h = ad.gather_rows(h, [0, 2, 2, 1])
    h = ad.reshape(ad.transpose(h), (-1,))
    s = ad.sub(ad.scale(ad.sum(ad.square(h)), 0.5), ad.mean(ad.mul(c, c)))
    return ad.add(s, ad.scale(ad.sum(h), 0.3))


def test_grad_check_all_primitives():
    rng = np.random.default_rng(1)
    point = [rng.uniform(0.2, 1.0, (3, 2)), rng.uniform(0.2, 1.0, (2, 4)),
             rng.uniform(0.1, 0.5, 4), rng.standard_normal(5)]
    assert grad_check(_composite, point).max_rel_error < 1e-5


PRIMS = {
    "add": lambda t, v: ad.sum(ad.square(ad.add(v[0], v[1]))),
    "sub": lambda t, v: ad.sum(ad.square(ad.sub(v[0], v[1]))),
    "mul": lambda t, v: ad.sum(ad.mul(v[0], v[1])),
    "matmul": lambda t, v: ad.sum(ad.sin(ad.matmul(v[0], ad.transpose(v[1])))),
    "sin": lambda t, v: ad.sum(ad.mul(ad.sin(v[0]), v[1])),
    "relu": lambda t, v: ad.sum(ad.mul(ad.relu(v[0]), v[1])),
    "tanh": lambda t, v: ad.sum(ad.mul(ad.tanh(v[0]), v[1])),
    "square": lambda t, v: ad.sum(ad.mul(ad.square(v[0]), v[1])),
    "scale": lambda t, v: ad.sum(ad.mul(ad.scale(v[0], -2.5), v[1])),
    "sum": lambda t, v: ad.square(ad.sum(ad.mul(v[0], v[1]))),
    "sum_axis": lambda t, v: ad.sum(ad.square(ad.sum(ad.mul(v[0], v[1]), axis=1))),
    "mean": lambda t, v: ad.square(ad.mean(ad.mul(v[0], v[1]))),
    "concat": lambda t, v: ad.sum(ad.square(ad.concat([v[0], ad.scale(v[1], 3.0)], axis=0))),
    "gather_rows": lambda t, v: ad.sum(ad.square(ad.gather_rows(ad.mul(v[0], v[1]), [1, 0, 1]))),
    "add_bias": lambda t, v: ad.sum(ad.square(ad.add_bias(v[0], ad.sum(v[1], axis=0)))),
}


@pytest.mark.parametrize("name", sorted(PRIMS))
def test_primitive_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(50):
        shape = (int(rng.integers(2, 4)), int(rng.integers(1, 4)))
        a = rng.uniform(0.1, 1.5, shape) * rng.choice([-1, 1], shape)
        b = rng.uniform(0.5, 1.5, shape)
        rep = grad_check(PRIMS[name], [a, b], h=1e-5, tol=1e-5)
        assert rep.passed, (name, shape, rep)


def test_backward_deterministic():
    rng = np.random.default_rng(3)
    W = rng.standard_normal((4, 4))

    def grads():
        tape = Tape()
        w = tape.param(W)
        loss = ad.mean(ad.sin(ad.matmul(w, ad.tanh(w))))
        return backward(tape, loss)[w]

    assert np.array_equal(grads(), grads())


def test_gradient_linearity():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((3, 3))

    def g(which):
        tape = Tape()
        x = tape.param(X)
        f1 = ad.sum(ad.sin(x))
        f2 = ad.mean(ad.square(ad.matmul(x, x)))
        loss = {"1": f1, "2": f2, "both": ad.add(f1, f2)}[which]
        return backward(tape, loss)[x]

    assert np.max(np.abs(g("both") - (g("1") + g("2")))) <= 1e-12


def test_shared_param_accumulates():
    arr = np.array([2.0])
    tape = Tape()
    a1, a2 = tape.param(arr), tape.param(arr)
    assert a1 is a2
    g = backward(tape, ad.sum(ad.mul(a1, a2)))
    assert g.of(tape, arr)[0] == pytest.approx(4.0)


def test_float32_tape():
    tape = Tape(np.float32)
    x = tape.param(np.ones(3))
    y = ad.sum(ad.sin(ad.scale(x, 2.0)))
    assert y.value.dtype == np.float32
    assert backward(tape, y)[x].dtype == np.float32
