"""Tape autodiff against central differences (the only trusted reference)."""

import numpy as np
import pytest

from dsse_kit import autodiff as ad

from oracles import fd_gradient, max_rel_error


def grad_of(build, x0):
    """Analytic gradient of build(tape, Var) at x0 via the tape."""
    tape = ad.Tape()
    x = tape.var(x0)
    out = build(tape, x)
    return np.asarray(ad.backward(out).wrt(x))


def fd_of(build, x0, step=1e-6):
    def f(x):
        t = ad.Tape()
        return float(build(t, t.var(x)).value)
    return fd_gradient(f, x0, step)


def check(build, x0, tol=1e-6):
    a = grad_of(build, np.asarray(x0, float))
    n = fd_of(build, np.asarray(x0, float))
    assert max_rel_error(a, n, abs_guard=1e-8) <= tol, (a, n)


rng = np.random.default_rng(42)


def test_scalar_primitives_match_fd():
    x0 = rng.uniform(0.2, 1.5, size=6)
    check(lambda t, x: ad.vsum(ad.sin(x) * ad.cos(x)), x0)
    check(lambda t, x: ad.vsum(ad.sqrt(x)), x0)
    check(lambda t, x: ad.vsum(ad.exp(x) / (x + 2.0)), x0)
    check(lambda t, x: ad.vsum(ad.tanh(x) - x * 0.3), x0)
    check(lambda t, x: ad.vsum(ad.softplus(x * 3.0 - 2.0)), x0)
    check(lambda t, x: ad.vsum(ad.abs_smooth(x - 0.7, eps=1e-3)), x0)
    check(lambda t, x: ad.vsum(ad.relu_plus(x - 0.7)), x0 + 0.013)
    check(lambda t, x: ad.vsum(-x * x), x0)


def test_hypot_matches_fd_and_settles_origin():
    p0 = rng.normal(size=5)
    q0 = rng.normal(size=5)
    check(lambda t, x: ad.vsum(ad.hypot(x, t.const(q0))), p0)
    check(lambda t, x: ad.vsum(ad.hypot(t.const(p0), x * 2.0)), q0)

    tape = ad.Tape()
    p = tape.var(np.array([0.0, 3.0]))
    q = tape.var(np.array([0.0, 4.0]))
    h = ad.hypot(p, q)
    assert np.array_equal(h.value, np.hypot(p.value, q.value))
    grads = ad.backward(ad.vsum(h))
    assert grads.wrt(p)[0] == 0.0 and grads.wrt(q)[0] == 0.0
    assert np.isclose(grads.wrt(p)[1], 0.6) and np.isclose(grads.wrt(q)[1], 0.8)


def test_division_and_repeated_operands():
    x0 = rng.uniform(0.5, 2.0, size=5)
    check(lambda t, x: ad.vsum(x * x + ad.sin(x) * x), x0)
    check(lambda t, x: ad.vsum(1.0 / x), x0)
    check(lambda t, x: ad.dot(x, x), x0)


def test_broadcasting_gradients():
    # (3,1) against (1,4): gradients must fold back to the operand shapes
    a0 = rng.normal(size=(3, 1))
    b0 = rng.normal(size=(1, 4))

    def build_a(t, x):
        b = t.const(b0)
        return ad.vsum(ad.tanh(x * b + x))

    def build_b(t, x):
        a = t.const(a0)
        return ad.vsum(ad.tanh(a * x + a))

    def fd_mat(build, x0):
        def f(flat):
            t = ad.Tape()
            return float(build(t, t.var(flat.reshape(x0.shape))).value)
        return fd_gradient(f, x0.ravel()).reshape(x0.shape)

    ga = grad_of(build_a, a0)
    assert ga.shape == a0.shape
    assert max_rel_error(ga, fd_mat(build_a, a0)) <= 1e-6
    gb = grad_of(build_b, b0)
    assert gb.shape == b0.shape
    assert max_rel_error(gb, fd_mat(build_b, b0)) <= 1e-6


def matrix_check(build, x0, tol=1e-6):
    shape = x0.shape

    def f(flat):
        t = ad.Tape()
        return float(build(t, ad.reshape(t.var(flat), shape)).value)

    t = ad.Tape()
    flat = t.var(x0.ravel())
    out = build(t, ad.reshape(flat, shape))
    a = ad.backward(out).wrt(flat)
    n = fd_gradient(f, x0.ravel())
    assert max_rel_error(a, n, abs_guard=1e-8) <= tol


def test_matmul_matches_fd():
    x0 = rng.normal(size=(3, 4))
    w0 = rng.normal(size=(4, 2))
    left = rng.normal(size=(5, 3))
    v0 = rng.normal(size=4)
    matrix_check(lambda t, x: ad.vsum(ad.tanh(ad.matmul(x, t.const(w0)))), x0)
    matrix_check(lambda t, x: ad.vsum(ad.matmul(t.const(left), x)), x0)
    matrix_check(lambda t, x: ad.vsum(ad.matmul(x, t.const(v0))), x0)


def test_gather_segment_concat_column_match_fd():
    x0 = rng.normal(size=(2, 5))
    ridx = np.array([0, 1, 1, 0])
    cidx = np.array([4, 0, 0, 2])
    matrix_check(lambda t, x: ad.vsum(ad.gather_rows(x, ridx) * 1.5), x0)
    matrix_check(lambda t, x: ad.vsum(ad.tanh(ad.gather_cols(x, cidx))), x0)
    matrix_check(
        lambda t, x: ad.vsum(ad.segment_sum_rows(x, np.array([1, 0]), 2) * 2.0),
        x0,
    )
    matrix_check(
        lambda t, x: ad.vsum(ad.segment_sum_cols(x, np.array([0, 1, 0, 1, 0]), 2) * 0.7),
        x0,
    )
    matrix_check(
        lambda t, x: ad.vsum(ad.concat([x, x * 2.0], axis=1) * 1.1)
        + ad.vsum(ad.column(x, 3)),
        x0,
    )


def test_sum_axis_and_select():
    x0 = rng.normal(size=(3, 4))
    cond = np.array([[True, False, True, False]] * 3)
    matrix_check(lambda t, x: ad.vsum(ad.vsum(x * x, axis=1) * 2.0), x0)
    matrix_check(lambda t, x: ad.vsum(ad.select(cond, x * 3.0, x * x)), x0)
    matrix_check(lambda t, x: ad.vsum(ad.maximum(x, x * 0.5 + 0.1)), x0 + 3.0)


def test_composite_expression_matches_fd():
    # one expression threading through most of the primitive set
    x0 = rng.uniform(0.3, 1.2, size=8)

    def build(t, x):
        a = ad.sin(x) + ad.cos(x * 2.0)
        b = ad.sqrt(x + 0.5) * ad.tanh(x)
        c = ad.softplus(a - b)
        d = ad.abs_smooth(a * b - 0.2, eps=1e-4)
        e = ad.select(x0 > 0.7, c, d)
        return ad.dot(e, e) / (ad.vsum(ad.exp(-x)) + 1.0)

    check(build, x0)


def test_untouched_variable_gets_zero_gradient():
    t = ad.Tape()
    x = t.var(np.ones(3))
    y = t.var(np.ones(3))
    out = ad.vsum(x * 2.0)
    g = ad.backward(out)
    assert np.array_equal(g.wrt(y), np.zeros(3))
    assert np.array_equal(g.wrt(x), np.full(3, 2.0))


def test_errors():
    t1, t2 = ad.Tape(), ad.Tape()
    a = t1.var(np.ones(2))
    b = t2.var(np.ones(2))
    with pytest.raises(ValueError, match="different tapes"):
        ad.add(a, b)
    with pytest.raises(ZeroDivisionError):
        ad.div(a, t1.const(np.array([1.0, 0.0])))
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(a)
    with pytest.raises(ValueError, match="negative"):
        ad.sqrt(t1.const(np.array([-1.0])))


def test_gradient_check_smooth_function():
    rep = ad.gradient_check(
        lambda t, x: ad.vsum(ad.tanh(x) * ad.sin(x)), rng.normal(size=5)
    )
    assert rep.max_rel_error <= 1e-6
    assert rep.suspect_coords == []


def test_gradient_check_flags_kink_without_failing():
    # relu corner sits exactly under the probe at coordinate 1
    x0 = np.array([0.5, 0.0, -0.5])
    rep = ad.gradient_check(lambda t, x: ad.vsum(ad.relu_plus(x)), x0)
    assert 1 in rep.suspect_coords
    assert rep.max_rel_error <= 1e-6  # the smooth coordinates still agree
