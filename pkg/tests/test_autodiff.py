import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netude import autodiff as ad
from netude.errors import NonFiniteError, ShapeMismatchError


def grad_of(fn, *values):
    """Gradient of scalar fn(vars...) w.r.t. each leaf value."""
    tape = ad.Tape()
    leaves = [tape.leaf(v, trainable=True) for v in values]
    out = fn(*leaves)
    g = tape.backward(out)
    return out.value, [g[leaf] for leaf in leaves]


def central_fd(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_leaf_identity_gradient():
    tape = ad.Tape()
    x = tape.leaf([1.0], trainable=True)
    s = ad.sum(x)
    assert tape.backward(s)[x].tolist() == [1.0]


def test_leaf_shape_and_identity():
    tape = ad.Tape()
    a = tape.leaf(np.ones((2, 3)))
    b = tape.leaf(np.ones((2, 3)))
    assert a.value.size == 6
    assert a != b


def test_leaf_rejects_nonfinite():
    with pytest.raises(NonFiniteError):
        ad.Tape().leaf([1.0, np.nan])


def test_sigmoid_value_and_slope_at_zero():
    val, (g,) = grad_of(lambda z: ad.sum(ad.sigmoid(z)), np.array([0.0]))
    assert val == 0.5
    assert g[0] == 0.25


def test_sigmoid_saturates_without_overflow():
    tape = ad.Tape()
    z = tape.leaf([-1000.0, 1000.0])
    out = ad.sigmoid(z).value
    assert out[0] == 0.0 and out[1] == 1.0


def test_leaky_relu_negative_branch():
    val, (g,) = grad_of(lambda z: ad.sum(ad.leaky_relu(z, 0.01)), np.array([-2.0]))
    assert val == pytest.approx(-0.02)
    assert g[0] == pytest.approx(0.01)


def test_mul_product_rule():
    val, (ga, gb) = grad_of(lambda a, b: ad.sum(ad.mul(a, b)), np.array([2.0]), np.array([3.0]))
    assert val == 6.0
    assert ga[0] == 3.0 and gb[0] == 2.0


def test_binary_shape_mismatch_reports_shapes():
    tape = ad.Tape()
    a, b = tape.leaf(np.zeros(2)), tape.leaf(np.zeros(3))
    with pytest.raises(ShapeMismatchError, match=r"\(2,\).*\(3,\)"):
        ad.add(a, b)


def test_matvec_values_and_gradient():
    tape = ad.Tape()
    W = tape.leaf([[1.0, 2.0], [3.0, 4.0]], trainable=True)
    x = tape.leaf([1.0, 1.0], trainable=True)
    y = ad.matvec(W, x)
    assert y.value.tolist() == [3.0, 7.0]
    g = tape.backward(ad.sum(y))
    assert np.array_equal(g[W], np.outer(np.ones(2), [1.0, 1.0]))
    assert np.array_equal(g[x], [4.0, 6.0])

    tape = ad.Tape()
    I = tape.leaf(np.eye(2))
    assert ad.matvec(I, tape.leaf([3.0, 4.0])).value.tolist() == [3.0, 4.0]


def test_matvec_dimension_mismatch():
    tape = ad.Tape()
    with pytest.raises(ShapeMismatchError):
        ad.matvec(tape.leaf(np.zeros((2, 3))), tape.leaf(np.zeros(2)))


def test_reductions():
    tape = ad.Tape()
    x = tape.leaf([-1.0, 2.0, -3.0], trainable=True)
    assert float(ad.l1_sum(x).value) == 6.0
    m = ad.mean_sq_err(x, x)
    assert float(m.value) == 0.0
    assert np.array_equal(tape.backward(m)[x], np.zeros(3))
    s = ad.sum(x)
    assert np.array_equal(tape.backward(s)[x], np.ones(3))


def test_l1_subgradient_at_zero_is_zero():
    _, (g,) = grad_of(ad.l1_sum, np.array([0.0, 2.0, -1.0]))
    assert g.tolist() == [0.0, 1.0, -1.0]


def test_backward_rejects_vector_root():
    tape = ad.Tape()
    x = tape.leaf([1.0, 2.0], trainable=True)
    with pytest.raises(ShapeMismatchError):
        tape.backward(ad.scale(x, 2.0))


def test_scale_gradient():
    _, (g,) = grad_of(lambda x: ad.sum(ad.scale(x, 3.0)), np.ones((2, 2)))
    assert np.array_equal(g, 3 * np.ones((2, 2)))


def test_untouched_leaf_gets_exact_zero():
    tape = ad.Tape()
    x = tape.leaf([1.0, 2.0], trainable=True)
    unused = tape.leaf([[5.0]], trainable=True)
    g = tape.backward(ad.sum(ad.square(x)))
    assert np.array_equal(g[unused], np.zeros((1, 1)))
    assert np.array_equal(g[x], [2.0, 4.0])


def test_root_adjoint_is_one():
    tape = ad.Tape()
    x = tape.leaf([1.0], trainable=True)
    root = ad.sum(x)
    tape.backward(root)
    assert tape.nodes[root.id].adjoint == 1.0


def test_parents_precede_children():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3), trainable=True)
    ad.sum(ad.sigmoid(ad.mul(x, x)))
    for node in tape.nodes:
        assert all(p < node.id for p in node.parents)


def test_replay_is_bit_exact():
    rng = np.random.default_rng(3)
    tape = ad.Tape()
    W = tape.leaf(rng.normal(size=(4, 3)), trainable=True)
    b = tape.leaf(rng.normal(size=4), trainable=True)
    x = tape.leaf(rng.normal(size=(5, 3)))
    ad.sum(ad.square(ad.leaky_relu(ad.linear(x, W, b))))
    replayed = tape.replay()
    for node, val in zip(tape.nodes, replayed):
        assert np.array_equal(node.value, val)


# -- batched helpers, each against its own finite-difference check ---------------------

def _fd_check(build, arrays, rtol=1e-6, atol=1e-8):
    _, grads = grad_of(build, *arrays)
    for k, a in enumerate(arrays):
        def f(v, k=k):
            vals = list(arrays)
            vals[k] = v
            tape = ad.Tape()
            return float(build(*[tape.leaf(u) for u in vals]).value)
        np.testing.assert_allclose(grads[k], central_fd(f, a), rtol=rtol, atol=atol)


def test_linear_batched_gradients():
    rng = np.random.default_rng(0)
    arrays = [rng.normal(size=(3, 2, 4)), rng.normal(size=(5, 4)), rng.normal(size=5)]
    _fd_check(lambda x, W, b: ad.sum(ad.square(ad.linear(x, W, b))), arrays)


def test_pair_concat_and_neighbor_sum_gradients():
    rng = np.random.default_rng(1)
    s = rng.normal(size=(2, 3, 2))
    A = rng.uniform(size=(3, 3))
    W = rng.normal(size=(1, 4))
    b = rng.normal(size=1)

    def build(s, A, W, b):
        g = ad.take(ad.linear(ad.pair_concat(s), W, b), 0, axis=-1)
        return ad.sum(ad.square(ad.neighbor_sum(g, A)))

    _fd_check(build, [s, A, W, b])


def test_pair_concat_layout():
    tape = ad.Tape()
    s = tape.leaf(np.arange(6.0).reshape(3, 2))
    P = ad.pair_concat(s).value
    assert P.shape == (3, 3, 4)
    assert P[0, 2].tolist() == [0.0, 1.0, 4.0, 5.0]


def test_stack_take_reshape_gradients():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))

    def build(a, b):
        st_ = ad.stack([a, b], axis=-1)
        r = ad.reshape(st_, (12,))
        return ad.sum(ad.mul(r, r)) + ad.sum(ad.sigmoid(ad.take(st_, 1, axis=-1)))

    _fd_check(build, [a, b])


# -- properties -------------------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_backward_is_linear_in_the_root(seed, a, b):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3))
    W = rng.normal(size=(2, 3))

    def grads(ca, cb):
        tape = ad.Tape()
        Wv = tape.leaf(W, trainable=True)
        xv = tape.leaf(x)
        y = ad.linear(xv, Wv, tape.leaf(np.zeros(2)))
        L1 = ad.sum(ad.sigmoid(y))
        L2 = ad.sum(ad.square(y))
        return tape.backward(ad.add(ad.scale(L1, ca), ad.scale(L2, cb)))[Wv]

    combined = grads(a, b)
    np.testing.assert_allclose(combined, a * grads(1.0, 0.0) + b * grads(0.0, 1.0), rtol=0, atol=1e-12 * max(1, np.abs(combined).max()))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_determinism(seed):
    def run():
        rng = np.random.default_rng(seed)
        tape = ad.Tape()
        W = tape.leaf(rng.normal(size=(3, 2)), trainable=True)
        x = tape.leaf(rng.normal(size=(5, 2)))
        out = ad.sum(ad.leaky_relu(ad.linear(x, W, tape.leaf(np.zeros(3)))))
        return float(out.value), tape.backward(out)[W]

    (v1, g1), (v2, g2) = run(), run()
    assert v1 == v2 and np.array_equal(g1, g2)
