import numpy as np
import pytest
import scipy.sparse as sp

import ecgi.autodiff as ad
from ecgi.autodiff import Tape, backward


def finite_diff_grad(f, x, eps=1e-6):
    """Central-difference gradient oracle for scalar-valued f."""
    g = np.zeros_like(x, dtype=float)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy(); xp[idx] += eps
        xm = x.copy(); xm[idx] -= eps
        g[idx] = (f(xp) - f(xm)) / (2 * eps)
    return g


def check_gradient(build, x0, atol=1e-5):
    """build(tape, var) -> scalar Var; compares tape gradient to FD."""
    tape = Tape()
    x = tape.param(x0)
    loss = build(tape, x)
    grads = backward(loss)
    analytic = grads[x]

    def f(arr):
        t2 = Tape()
        v = t2.param(arr)
        return float(build(t2, v).value)

    numeric = finite_diff_grad(f, x0)
    assert np.allclose(analytic, numeric, atol=atol), \
        f"max err {np.abs(analytic - numeric).max()}"


def test_gradients_elementwise_ops():
    rng = np.random.default_rng(0)
    for _ in range(5):
        x0 = rng.normal(size=(3, 4))

        def build(t, x):
            a = ad.tanh(ad.mul(x, x))
            b = ad.sigmoid(ad.add(a, x))
            c = ad.sub(b, ad.scale(a, 0.5))
            return ad.vsum(ad.square(c))

        check_gradient(build, x0)


def test_gradients_div_neg_affc():
    rng = np.random.default_rng(1)
    x0 = rng.uniform(0.5, 2.0, size=(2, 3))

    def build(t, x):
        a = ad.div(ad.neg(x), ad.add(x, x))
        b = ad.affc(x, 2.0, -1.0)
        return ad.vmean(ad.square(ad.add(a, b)))

    check_gradient(build, x0)


def test_gradients_cmul():
    rng = np.random.default_rng(13)
    w = rng.normal(size=(2, 3))
    x0 = rng.normal(size=(2, 3))

    def build(t, x):
        return ad.vsum(ad.square(ad.cmul(x, w)))

    check_gradient(build, x0)


def test_gradients_matmul():
    rng = np.random.default_rng(2)
    W0 = rng.normal(size=(4, 3))
    x_const = rng.normal(size=(3, 5))

    def build(t, W):
        y = ad.matmul(W, t.constant(x_const))
        return ad.vsum(ad.square(y))

    check_gradient(build, W0)


def test_gradients_through_sparse_right_matmul():
    rng = np.random.default_rng(3)
    B = sp.random(6, 6, density=0.4, random_state=5, format="csr")
    x0 = rng.normal(size=(2, 6))

    def build(t, x):
        return ad.vsum(ad.square(ad.rmatmul_const(x, B)))

    check_gradient(build, x0)


def test_gradients_matmul_const_left():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(3, 5))
    x0 = rng.normal(size=(5, 2))

    def build(t, x):
        return ad.vsum(ad.square(ad.matmul_const(A, x)))

    check_gradient(build, x0)


def test_gradients_affine_with_bias_broadcast():
    rng = np.random.default_rng(5)
    x_const = rng.normal(size=(3, 7))
    W0 = rng.normal(size=(2, 3))
    b0 = rng.normal(size=(2, 1))

    tape = Tape()
    W = tape.param(W0)
    b = tape.param(b0)
    y = ad.affine(W, b, tape.constant(x_const))
    grads = backward(ad.vsum(ad.square(y)))

    def f_w(arr):
        t = Tape()
        y = ad.affine(t.param(arr), t.constant(b0), t.constant(x_const))
        return float(ad.vsum(ad.square(y)).value)

    def f_b(arr):
        t = Tape()
        y = ad.affine(t.constant(W0), t.param(arr), t.constant(x_const))
        return float(ad.vsum(ad.square(y)).value)

    assert np.allclose(grads[W], finite_diff_grad(f_w, W0), atol=1e-5)
    assert np.allclose(grads[b], finite_diff_grad(f_b, b0), atol=1e-5)


def test_gradients_gather_and_take():
    rng = np.random.default_rng(6)
    x0 = rng.normal(size=(4, 6))
    cols = np.array([0, 2, 2, 5])
    rows = np.array([1, 3])
    er = np.array([0, 1, 3])
    ec = np.array([5, 0, 2])

    def build(t, x):
        a = ad.vsum(ad.square(ad.gather_cols(x, cols)))
        b = ad.vsum(ad.square(ad.take_rows(x, rows)))
        c = ad.vsum(ad.square(ad.take_entries(x, er, ec)))
        return ad.add(ad.add(a, b), c)

    check_gradient(build, x0)


def test_gradients_reshape():
    rng = np.random.default_rng(7)
    x0 = rng.normal(size=(2, 6))

    def build(t, x):
        return ad.vsum(ad.square(ad.reshape(x, (3, 4))))

    check_gradient(build, x0)


def test_unreached_leaf_gets_zero_gradient():
    tape = Tape()
    x = tape.param(np.ones((2, 2)))
    y = tape.param(np.ones((2, 2)))
    grads = backward(ad.vsum(ad.square(x)))
    assert np.array_equal(grads[y], np.zeros((2, 2)))


def test_constant_blocks_gradient_flow():
    tape = Tape()
    x = tape.constant(np.ones(3))
    y = tape.param(np.ones(3))
    grads = backward(ad.vsum(ad.mul(x, y)))
    assert np.allclose(grads[y], 1.0)


def test_backward_requires_scalar():
    tape = Tape()
    x = tape.param(np.ones((2, 2)))
    with pytest.raises(ValueError):
        backward(ad.square(x))


def test_sigmoid_numerically_stable():
    tape = Tape()
    x = tape.param(np.array([[-800.0, 0.0, 800.0]]))
    s = ad.sigmoid(x)
    assert np.all(np.isfinite(s.value))
    assert np.allclose(s.value, [[0.0, 0.5, 1.0]])
    g = backward(ad.vsum(s))
    assert np.all(np.isfinite(g[x]))


# --------------------------------------------------- directional derivatives

def quadratic_field(tape):
    """f maps a (2, K) input to a (1, K) output:
      f(x) = 3*x0^2 + x0*x1 - 2*x1^2 + x0
    """

    def f(x):
        x0 = ad.take_rows(x, np.array([0]))
        x1 = ad.take_rows(x, np.array([1]))
        out = ad.add(ad.scale(ad.square(x0), 3.0), ad.mul(x0, x1))
        out = ad.sub(out, ad.scale(ad.square(x1), 2.0))
        return ad.add(out, x0)

    return f


def test_first_directional_derivative_quadratic():
    rng = np.random.default_rng(8)
    tape = Tape()
    f = quadratic_field(tape)
    x0 = rng.normal(size=(2, 5))
    d = rng.normal(size=2)
    got = ad.input_directional_derivative(f, tape.constant(x0), d).value
    # grad f = [6 x0 + x1 + 1, x0 - 4 x1]; directional = grad . d
    expect = ((6 * x0[0] + x0[1] + 1) * d[0]
              + (x0[0] - 4 * x0[1]) * d[1])
    assert np.allclose(got, expect)


def test_second_directional_derivative_quadratic():
    rng = np.random.default_rng(9)
    tape = Tape()
    f = quadratic_field(tape)
    x0 = rng.normal(size=(2, 5))
    d = rng.normal(size=2)
    got = ad.second_directional_derivative(f, tape.constant(x0), d).value
    # Hessian of f is [[6, 1], [1, -4]] everywhere
    H = np.array([[6.0, 1.0], [1.0, -4.0]])
    expect = float(d @ H @ d) * np.ones((1, 5))
    assert np.allclose(got, expect)


def test_second_directional_matches_finite_difference():
    # oracle: central second difference along the direction
    rng = np.random.default_rng(10)
    W = rng.normal(size=(3, 2))
    c = rng.normal(size=(1, 3))
    tape = Tape()
    Wv, cv = tape.constant(W), tape.constant(c)

    def net(x):
        return ad.matmul(cv, ad.tanh(ad.matmul(Wv, x)))

    x0 = rng.normal(size=(2, 4))
    d = rng.normal(size=2)
    got = ad.second_directional_derivative(net, tape.constant(x0), d).value

    def eval_net(arr):
        return c @ np.tanh(W @ arr)

    eps = 1e-4
    dc = d.reshape(2, 1)
    expect = (eval_net(x0 + eps * dc) - 2 * eval_net(x0)
              + eval_net(x0 - eps * dc)) / eps ** 2
    assert np.allclose(got, expect, atol=1e-5)


def test_directional_derivatives_keep_parameter_gradients():
    # derivatives built with forward-mode jets must remain differentiable
    # with respect to tape parameters
    rng = np.random.default_rng(11)
    W0 = rng.normal(size=(1, 2))
    x0 = rng.normal(size=(2, 3))
    d = np.array([1.0, 0.5])

    tape = Tape()
    W = tape.param(W0)
    dd = ad.input_directional_derivative(
        lambda z: ad.tanh(ad.matmul(W, z)), tape.constant(x0), d)
    grads = backward(ad.vsum(ad.square(dd)))

    def f(arr):
        t = Tape()
        w = t.param(arr)
        g = ad.input_directional_derivative(
            lambda z: ad.tanh(ad.matmul(w, z)), t.constant(x0), d)
        return float(ad.vsum(ad.square(g)).value)

    numeric = finite_diff_grad(f, W0)
    assert np.allclose(grads[W], numeric, atol=1e-5)


def test_second_directional_keeps_parameter_gradients():
    rng = np.random.default_rng(12)
    W0 = rng.normal(size=(1, 2))
    x0 = rng.normal(size=(2, 3))
    d = np.array([0.7, -0.3])

    tape = Tape()
    W = tape.param(W0)
    dd = ad.second_directional_derivative(
        lambda z: ad.tanh(ad.matmul(W, z)), tape.constant(x0), d)
    grads = backward(ad.vsum(ad.square(dd)))

    def f(arr):
        t = Tape()
        w = t.param(arr)
        g = ad.second_directional_derivative(
            lambda z: ad.tanh(ad.matmul(w, z)), t.constant(x0), d)
        return float(ad.vsum(ad.square(g)).value)

    numeric = finite_diff_grad(f, W0)
    assert np.allclose(grads[W], numeric, atol=1e-4)
