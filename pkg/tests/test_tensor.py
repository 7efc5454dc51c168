import numpy as np
import pytest

from splitlab import tensor as T
from splitlab.tensor import Tape, TapeError, ShapeError, Tensor, backward

from gradcheck import OP_NAMES, check, numerical_grad, op_case_error, rel_error


def test_matmul_identity_and_zero():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(np.eye(2), m).data, m)
    np.testing.assert_array_equal(T.matmul(np.zeros((2, 2)), np.random.rand(2, 5)).data, np.zeros((2, 5)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_gradient_against_finite_differences():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    ta = Tensor(a, requires_grad=True)
    backward(T.sum(T.matmul(ta, Tensor(b))))
    np.testing.assert_allclose(ta.grad, np.ones((3, 2)) @ b.T, rtol=0, atol=1e-14)
    (num,) = numerical_grad(lambda x: float(np.sum(x @ b)), [a.copy()])
    assert rel_error(ta.grad, num) < 1e-6


def test_conv2d_ones():
    out = T.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 2, 2)))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 4.0))


def test_conv2d_unit_kernel_is_identity():
    x = np.random.default_rng(1).normal(size=(2, 1, 5, 4))
    np.testing.assert_array_equal(T.conv2d(x, np.ones((1, 1, 1, 1))).data, x)


def brute_conv(x, k, stride, pad):
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for a in range(n):
        for b in range(f):
            for i in range(ho):
                for j in range(wo):
                    s = 0.0
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                s += xp[a, ch, i * stride + u, j * stride + v] * k[b, ch, u, v]
                    out[a, b, i, j] = s
    return out


@pytest.mark.parametrize("shape,kshape,stride,pad", [
    ((1, 1, 5, 5), (1, 1, 3, 3), 2, 0),
    ((2, 3, 6, 5), (4, 3, 3, 2), 1, 1),
    ((1, 2, 7, 7), (3, 2, 4, 4), 2, 1),
])
def test_conv2d_matches_loop_definition(shape, kshape, stride, pad):
    rng = np.random.default_rng(2)
    x = rng.normal(size=shape)
    k = rng.normal(size=kshape)
    got = T.conv2d(x, k, stride, pad).data
    assert np.max(np.abs(got - brute_conv(x, k, stride, pad))) < 1e-12


def test_conv2d_kernel_too_large():
    with pytest.raises(ShapeError, match="larger than padded input"):
        T.conv2d(np.ones((1, 1, 2, 2)), np.ones((1, 1, 3, 3)))
    T.conv2d(np.ones((1, 1, 2, 2)), np.ones((1, 1, 3, 3)), padding=1)


def test_transposed_conv_scalar_input():
    out = T.transposed_conv2d(np.full((1, 1, 1, 1), 2.5), np.ones((1, 1, 2, 2)))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 2.5))


def test_transposed_conv_zero_and_size():
    k = np.random.default_rng(3).normal(size=(3, 2, 4, 4))
    out = T.transposed_conv2d(np.zeros((2, 3, 7, 7)), k, stride=2, padding=1)
    assert out.shape == (2, 2, 14, 14)
    assert not out.data.any()


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (2, 0)])
def test_transposed_conv_is_conv_input_gradient(stride, pad):
    rng = np.random.default_rng(4)
    k = rng.normal(size=(3, 2, 3, 3))
    x = Tensor(rng.normal(size=(2, 2, 7, 7)), requires_grad=True)
    y = T.conv2d(x, Tensor(k), stride, pad)
    backward(T.sum(y))
    # a sum loss feeds all-ones into the conv output
    ones = np.ones(y.shape)
    tc = T.transposed_conv2d(ones, k, stride, pad).data
    assert tc.shape == x.shape
    assert np.max(np.abs(tc - x.grad)) < 1e-12


def test_activations():
    assert T.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    assert T.leaky_relu(Tensor([-1.0]), 0.1).data.tolist() == [-0.1]
    with pytest.raises(ValueError, match="unknown activation"):
        T.activation("swish", Tensor([1.0]))


def test_tanh_derivative():
    x = Tensor(0.3, requires_grad=True)
    backward(T.tanh(x))
    (num,) = numerical_grad(lambda a: float(np.tanh(a)), [np.array(0.3)])
    assert abs(x.grad - num) / abs(num) < 1e-6


def test_backward_simple_cases():
    x = Tensor(np.random.rand(2, 3, 4), requires_grad=True)
    backward(T.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))
    y = Tensor(np.random.rand(5), requires_grad=True)
    backward(T.sum(T.scale(y, 0.0)))
    np.testing.assert_array_equal(y.grad, np.zeros(5))


def test_backward_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        backward(T.scale(x, 2.0))
    with pytest.raises(TapeError):
        backward(Tensor(1.0))
    loss = T.sum(x)
    backward(loss)
    with pytest.raises(TapeError, match="consumed"):
        backward(loss)


def test_empty_tape_and_topological_order():
    tape = Tape()
    assert len(tape) == 0
    with tape:
        a = Tensor(np.ones(2), requires_grad=True)
        b = T.relu(T.scale(a, 3.0))
        c = T.sum(T.mul(b, b))
    assert [n.op for n in tape.nodes][-1] == "sum"
    produced = set()
    for node in tape.nodes:
        for inp in node.inputs:
            if not inp.is_leaf:
                assert id(inp) in produced
        produced.add(id(node.output))
    backward(c)
    assert len(tape) == 0


def test_two_layer_net_gradients():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 4))
    y = rng.normal(size=(6, 3))

    def build(w1, b1, w2, b2):
        h = T.tanh(T.add(T.matmul(Tensor(x), w1), b1))
        return T.mse(T.add(T.matmul(h, w2), b2), Tensor(y))

    arrays = [rng.normal(size=(4, 5)), rng.normal(size=5), rng.normal(size=(5, 3)), rng.normal(size=3)]
    assert check(build, arrays) < 1e-4


def test_fan_out_gradients_sum():
    a = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    b = T.add(T.scale(a, 2.0), T.mul(a, a))
    backward(T.sum(b))
    np.testing.assert_allclose(a.grad, 2.0 + 2 * a.data)


def test_second_order_gradient():
    x = Tensor(np.array([0.2, -0.7, 1.1]), requires_grad=True)
    w = Tensor(np.array([0.5, 1.5, -0.3]), requires_grad=True)
    y = T.sum(T.tanh(T.mul(x, w)))
    (gx,) = T.grad(y, [x], create_graph=True)
    penalty = T.sum_squares(gx)
    backward(penalty)

    def pen(wv):
        t = np.tanh(x.data * wv)
        return float(np.sum((wv * (1 - t * t)) ** 2))

    (num,) = numerical_grad(pen, [w.data.copy()])
    assert rel_error(w.grad, num) < 1e-6


def test_determinism():
    def run():
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(2, 1, 6, 6)), requires_grad=True)
        k = Tensor(rng.normal(size=(3, 1, 3, 3)), requires_grad=True)
        out = T.sum(T.sigmoid(T.conv2d(x, k, 2, 1)))
        backward(out)
        return out.data.tobytes(), x.grad.tobytes(), k.grad.tobytes()

    assert run() == run()


def test_no_grad_does_not_record():
    x = Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = T.scale(x, 2.0)
    assert not y.requires_grad


@pytest.mark.parametrize("name", OP_NAMES)
def test_op_gradients_against_finite_differences(name):
    assert max(op_case_error(name, seed) for seed in range(2)) < 1e-4
