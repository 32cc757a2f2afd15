import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rsnet import autodiff as ad
from rsnet.autodiff import ShapeError, Tensor, no_grad
from rsnet.gradcheck import check, numeric_grad, relative_error

SEEDS = range(5)
N_NODES = 3


def rnd(rng, *shape):
    return rng.standard_normal(shape)


# name -> (builder, input factory); inputs drawn from N(0, 1)
PRIMITIVES = {
    "add": (lambda a, b: ad.add(a, b), lambda r: dict(a=rnd(r, 4, 3), b=rnd(r, 4, 3))),
    "add_row": (lambda a, b: ad.add(a, b), lambda r: dict(a=rnd(r, 4, 3), b=rnd(r, 1, 3))),
    "sub": (lambda a, b: ad.sub(a, b), lambda r: dict(a=rnd(r, 4, 3), b=rnd(r, 4, 3))),
    "mul": (lambda a, b: ad.mul(a, b), lambda r: dict(a=rnd(r, 4, 3), b=rnd(r, 4, 3))),
    "mul_row": (lambda a, b: ad.mul(a, b), lambda r: dict(a=rnd(r, 4, 3), b=rnd(r, 1, 3))),
    "scale": (lambda a: ad.scale(a, -2.5), lambda r: dict(a=rnd(r, 4, 3))),
    "matmul": (lambda a, b: ad.matmul(a, b), lambda r: dict(a=rnd(r, 4, 3), b=rnd(r, 3, 5))),
    "transpose": (lambda a: ad.transpose(a), lambda r: dict(a=rnd(r, 4, 3))),
    "concat_cols": (lambda a, b: ad.concat_cols([a, b, a]), lambda r: dict(a=rnd(r, 4, 3), b=rnd(r, 4, 2))),
    "slice_cols": (lambda a: ad.slice_cols(a, 1, 3), lambda r: dict(a=rnd(r, 4, 5))),
    "reshape": (lambda a: ad.reshape(a, 2, 6), lambda r: dict(a=rnd(r, 4, 3))),
    "tile_rows": (lambda a: ad.tile_rows(a, 3), lambda r: dict(a=rnd(r, 2, 3))),
    "sum": (lambda a: ad.sum(a), lambda r: dict(a=rnd(r, 4, 3))),
    "mean": (lambda a: ad.mean(a), lambda r: dict(a=rnd(r, 4, 3))),
    "abs": (lambda a: ad.abs(a), lambda r: dict(a=rnd(r, 4, 3))),
    "square": (lambda a: ad.square(a), lambda r: dict(a=rnd(r, 4, 3))),
    "gelu": (lambda a: ad.gelu(a), lambda r: dict(a=rnd(r, 4, 3))),
    "relu": (lambda a: ad.relu(a), lambda r: dict(a=rnd(r, 4, 3))),
    "softmax_rows": (lambda a: ad.softmax_rows(a), lambda r: dict(a=rnd(r, 4, 5))),
    "layer_norm": (lambda x, g, b: ad.layer_norm(x, g, b),
                   lambda r: dict(x=rnd(r, 4, 8), g=rnd(r, 1, 8), b=rnd(r, 1, 8))),
    "batch_norm": (lambda x, g, b: ad.batch_norm(x, g, b, training=True)[0],
                   lambda r: dict(x=rnd(r, 6, 4), g=rnd(r, 1, 4), b=rnd(r, 1, 4))),
    "batch_norm_eval": (lambda x, g, b: ad.batch_norm(x, g, b, training=False,
                                                      running=(np.full((1, 4), 0.3), np.full((1, 4), 2.0)))[0],
                        lambda r: dict(x=rnd(r, 6, 4), g=rnd(r, 1, 4), b=rnd(r, 1, 4))),
    "graph_matmul": (lambda A, H: ad.graph_matmul(A, H),
                     lambda r: dict(A=rnd(r, N_NODES, N_NODES), H=rnd(r, 2 * N_NODES, 4))),
    "block_matmul": (lambda P, V: ad.block_matmul(P, V, N_NODES),
                     lambda r: dict(P=rnd(r, 2 * N_NODES, N_NODES), V=rnd(r, 2 * N_NODES, 4))),
    "block_matmul_nt": (lambda X, Y: ad.block_matmul_nt(X, Y, N_NODES),
                        lambda r: dict(X=rnd(r, 2 * N_NODES, 4), Y=rnd(r, 2 * N_NODES, 4))),
}


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name, seed):
    build, make = PRIMITIVES[name]
    errors = check(build, make(np.random.default_rng(seed)), seed=seed)
    assert max(errors.values()) < 1e-5, errors


def test_matmul_vjp_closed_form():
    rng = np.random.default_rng(0)
    A, B, G = rnd(rng, 3, 4), rnd(rng, 4, 2), rnd(rng, 3, 2)
    a, b = Tensor(A, requires_grad=True), Tensor(B, requires_grad=True)
    (a @ b).backward(G)
    np.testing.assert_allclose(a.grad, G @ B.T, atol=1e-15)
    np.testing.assert_allclose(b.grad, A.T @ G, atol=1e-15)


def test_mul_by_constant_gradient():
    c = np.arange(6.0).reshape(2, 3)
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    ad.mul(x, Tensor(c)).backward(np.full((2, 3), 2.0))
    np.testing.assert_array_equal(x.grad, 2.0 * c)


def test_concat_slice_roundtrip():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    y = ad.concat_cols([ad.slice_cols(x, 0, 1), ad.slice_cols(x, 1, 4)])
    np.testing.assert_array_equal(y.data, x.data)
    G = np.random.default_rng(1).standard_normal((3, 4))
    y.backward(G)
    np.testing.assert_array_equal(x.grad, G)


def test_gradient_accumulates_over_two_paths():
    x = Tensor(np.array([[1.0, -2.0]]), requires_grad=True)
    y = ad.sum(ad.mul(x, x) + ad.scale(x, 3.0))
    y.backward()
    np.testing.assert_array_equal(x.grad, 2 * x.data + 3.0)
    # a second backward accumulates into the same buffer
    ad.sum(x).backward()
    np.testing.assert_array_equal(x.grad, 2 * x.data + 4.0)


def test_shared_subexpression_visited_once():
    x = Tensor(np.array([[2.0]]), requires_grad=True)
    h = ad.square(x)          # used by two consumers
    y = ad.sum(h + h)
    y.backward()
    assert x.grad[0, 0] == pytest.approx(8.0)


def test_shape_errors_name_primitive():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(ShapeError, match="graph_matmul"):
        ad.graph_matmul(Tensor(np.ones((3, 3))), Tensor(np.ones((4, 2))))


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with no_grad():
        y = ad.square(x)
    assert not y.requires_grad


def test_gelu_values():
    x = Tensor(np.array([[0.0, 1.0, -1.0, 10.0]]))
    out = ad.gelu(x).data[0]
    assert out[0] == 0.0
    # x * Phi(x) with Phi from the error function
    assert out[1] == pytest.approx(0.8413447460685429, abs=1e-15)
    assert out[2] == pytest.approx(-0.15865525393145707, abs=1e-15)
    assert 9.99999 < out[3] <= 10.0


def test_gelu_derivative_at_half():
    x = Tensor(np.array([[0.5]]), requires_grad=True)
    ad.gelu(x).backward()
    h = 1e-5
    f = lambda v: v * 0.5 * (1 + math.erf(v / math.sqrt(2)))
    num = (f(0.5 + h) - f(0.5 - h)) / (2 * h)
    assert abs(x.grad[0, 0] - num) < 1e-7


def test_layer_norm_examples():
    one, zero = Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 2)))
    np.testing.assert_allclose(ad.layer_norm(Tensor([[1.0, 3.0]]), one, zero, eps=0.0).data,
                               [[-1.0, 1.0]], atol=1e-15)
    one4, zero4 = Tensor(np.ones((1, 4))), Tensor(np.zeros((1, 4)))
    np.testing.assert_array_equal(ad.layer_norm(Tensor(np.full((2, 4), 7.0)), one4, zero4).data, 0.0)


def test_softmax_examples():
    np.testing.assert_allclose(ad.softmax_rows(Tensor([[0.0, math.log(3.0)]])).data, [[0.25, 0.75]],
                               atol=1e-15)
    np.testing.assert_allclose(ad.softmax_rows(Tensor(np.full((1, 4), 3.3))).data, 0.25, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_rows_properties(x, c):
    p = ad.softmax_rows(Tensor(x)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(ad.softmax_rows(Tensor(x + c)).data, p, atol=1e-12)


def test_dropout_modes():
    x = Tensor(np.random.default_rng(0).standard_normal((100, 100)))
    assert ad.dropout(x, 0.2, training=False) is x
    assert ad.dropout(x, 0.0, training=True, rng=np.random.default_rng(0)) is x
    out = ad.dropout(x, 0.2, training=True, rng=np.random.default_rng(42)).data
    zero_frac = np.mean(out == 0.0)
    assert abs(zero_frac - 0.2) < 0.02
    kept = out != 0
    np.testing.assert_allclose(out[kept], x.data[kept] / 0.8, rtol=1e-15)
    with pytest.raises(ValueError):
        ad.dropout(x, 1.0, training=True, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        ad.dropout(x, 0.5, training=True)


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(11)
        w = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        x = Tensor(rng.standard_normal((5, 4)))
        loss = ad.sum(ad.gelu(x @ w))
        loss.backward()
        return loss.item(), w.grad.copy()
    (l1, g1), (l2, g2) = run(), run()
    assert l1 == l2
    assert np.array_equal(g1, g2)


def test_numeric_grad_and_relative_error_helpers():
    x = np.array([[1.0, 2.0]])
    g = numeric_grad(lambda: float(np.sum(x ** 3)), x)
    np.testing.assert_allclose(g, [[3.0, 12.0]], rtol=1e-9)
    assert relative_error(np.array([1.0]), np.array([1.0])) == 0.0
    assert relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)
