"""Unit tests for the reverse-mode autodiff engine."""

import numpy as np
import pytest

from pagen import autodiff as ad
from pagen.autodiff import ContractError, ShapeError, Tensor, backward, grad_check
from pagen.selfcheck import check_primitives, primitive_cases


def test_forward_values():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert float(ad.reduce_sum(ad.mul(x, x)).data) == 30.0
    assert float(ad.sigmoid(Tensor(np.zeros(1))).data[0]) == 0.5
    sm = ad.softmax(Tensor(np.zeros((1, 3)))).data
    assert np.allclose(sm, 1.0 / 3.0)
    assert np.allclose(ad.log_softmax(Tensor(np.zeros((1, 3)))).data, -np.log(3.0))


def test_simple_gradient():
    x = Tensor(np.array([3.0]), requires_grad=True)
    backward(ad.reduce_sum(ad.mul(x, x)))
    assert np.allclose(x.grad, 6.0)


def test_fanout_accumulates():
    # f(x) = x*x + 3x uses x through two paths; grad is 2x + 3
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    backward(ad.reduce_sum(ad.add(ad.mul(x, x), ad.scale(x, 3.0))))
    assert np.allclose(x.grad, 2.0 * x.data + 3.0)


def test_bias_broadcast_gradient():
    x = Tensor(np.ones((3, 2)), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    backward(ad.reduce_sum(ad.add(x, b)))
    assert np.allclose(b.grad, [3.0, 3.0])
    assert np.allclose(x.grad, 1.0)


def test_backward_requires_scalar_root():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        backward(ad.mul(x, x))


def test_shape_errors_name_the_op():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((3, 2)))
    for op, msg in ((ad.add, "add"), (ad.sub, "sub"), (ad.mul, "mul")):
        with pytest.raises(ShapeError, match=msg):
            op(a, b)
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(a, Tensor(np.ones((2, 2))))
    with pytest.raises(ShapeError, match="pick"):
        ad.pick(a, np.array([0, 1, 2]))
    with pytest.raises(ShapeError, match="tile_cols"):
        ad.tile_cols(a, 4)


def test_embedding_index_contract():
    table = Tensor(np.ones((4, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        ad.embedding(table, np.array([0, 4]))


def test_no_grad_suppresses_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        out = ad.reduce_sum(ad.tanh(x))
        assert not out.requires_grad
        assert out._backward is None
    assert ad.grad_enabled()


def test_gradients_map():
    params = {"x": Tensor(np.array([2.0]), requires_grad=True),
              "y": Tensor(np.array([5.0]), requires_grad=True)}
    loss = ad.reduce_sum(ad.mul(params["x"], params["y"]))
    grads = ad.gradients(loss, params)
    assert np.allclose(grads["x"], 5.0)
    assert np.allclose(grads["y"], 2.0)


def test_hinge_floor_values_and_subgradient():
    x = Tensor(np.array([-2.0, 0.0, 2.0]), requires_grad=True)
    out = ad.hinge_floor(x, 0.0)
    assert np.allclose(out.data, [0.0, 0.0, 2.0])
    backward(ad.reduce_sum(out))
    # subgradient is zero at and below the kink
    assert np.allclose(x.grad, [0.0, 0.0, 1.0])


def test_primitive_gradients_many_seeds():
    # finite differences against every primitive across 100 random draws
    for seed in range(100):
        for name, fn, params in primitive_cases(seed):
            report = grad_check(fn, params, h=1e-4, tol=1e-4)
            assert report.passed, f"seed {seed} primitive {name}: {report.summary()}"


def test_check_primitives_summary_lines():
    ok, lines = check_primitives(seed=0)
    assert ok
    assert len(lines) == len(primitive_cases(0))
    assert all(line.startswith("ok") for line in lines)


def test_grad_check_flags_wrong_derivative():
    # an op whose recorded backward rule is deliberately off by 10%
    x = Tensor(np.random.default_rng(0).standard_normal(4), requires_grad=True)

    def bad_tanh(t):
        out = Tensor(np.tanh(t.data), requires_grad=True)
        out._parents = (t,)

        def bwd(g):
            t.grad = (t.grad if t.grad is not None else 0) + g * (1.1 - out.data ** 2)
        out._backward = bwd
        return out

    report = grad_check(lambda: ad.reduce_sum(bad_tanh(x)), {"x": x})
    assert not report.passed
    assert report.failures() == ["x"]


def test_backward_determinism():
    def run():
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        w = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        backward(ad.reduce_sum(ad.softmax(ad.matmul(ad.tanh(x), w))))
        return x.grad.copy(), w.grad.copy()

    g1, g2 = run(), run()
    assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])


def test_concat_slice_roundtrip_gradient():
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    b = Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
    cat = ad.concat([a, b], axis=1)
    backward(ad.reduce_sum(ad.mul(ad.slice_cols(cat, 2, 4), ad.slice_cols(cat, 2, 4))))
    # only column 2 of `a` and column 0 of `b` take gradient
    expect_a = np.zeros((2, 3))
    expect_a[:, 2] = 2.0 * a.data[:, 2]
    expect_b = np.zeros((2, 2))
    expect_b[:, 0] = 2.0 * b.data[:, 0]
    assert np.allclose(a.grad, expect_a)
    assert np.allclose(b.grad, expect_b)
