import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from efs_depth.autodiff import (
    Adam,
    OptimizerState,
    ShapeError,
    Tensor,
    adam_update,
    grad_check,
    inject_fault,
    ops,
)
from efs_depth.autodiff.nn import Conv2d, LayerNorm
from efs_depth.selfcheck import GRAD_TOL, primitive_cases


def _t(rng, *shape, grad=True):
    return Tensor(rng.standard_normal(shape), requires_grad=grad)


@pytest.mark.parametrize("name,fn,inputs", primitive_cases(), ids=[c[0] for c in primitive_cases()])
def test_primitive_gradients(name, fn, inputs):
    assert grad_check(fn, inputs) < GRAD_TOL


def test_gradcheck_examples(rng):
    assert grad_check(lambda a, b: a @ b, [_t(rng, 3, 4), _t(rng, 4, 2)]) < 1e-4
    x, w = _t(rng, 1, 1, 5, 5), _t(rng, 1, 1, 3, 3)
    assert grad_check(lambda a, k: ops.conv2d(a, k, padding=1), [x, w]) < 1e-4
    assert grad_check(lambda a, b: ops.softmax(a @ b, axis=1), [_t(rng, 3, 4), _t(rng, 4, 5)]) < 1e-4


def test_fault_hook_breaks_conv_gradient(rng):
    x, w = _t(rng, 1, 2, 5, 5), _t(rng, 3, 2, 3, 3)
    with inject_fault("conv2d"):
        assert grad_check(lambda a, k: ops.conv2d(a, k, padding=1), [x, w]) > 1e-3
    assert grad_check(lambda a, k: ops.conv2d(a, k, padding=1), [x, w]) < 1e-4


def test_conv_delta_kernel_is_identity(rng):
    x = rng.standard_normal((2, 3, 6, 5))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    out = ops.conv2d(Tensor(x), Tensor(w), padding=1)
    np.testing.assert_array_equal(out.data, x)


def test_conv_matches_direct_loop(rng):
    x = rng.standard_normal((1, 2, 5, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho, wo = got.shape[2:]
    ref = np.zeros_like(got)
    for o in range(3):
        for i in range(ho):
            for j in range(wo):
                ref[0, o, i, j] = np.sum(xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(got, ref, atol=1e-12)


@given(st.integers(1, 20), st.floats(-50, 50))
def test_softmax_of_constant_is_uniform(n, value):
    out = ops.softmax(Tensor(np.full((1, n), value)), axis=1).data
    np.testing.assert_allclose(out, 1.0 / n, rtol=1e-12)


def test_softmax_rows_sum_to_one(rng):
    out = ops.softmax(Tensor(rng.standard_normal((5, 7)) * 30), axis=1).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)


def test_layer_norm_moments(rng):
    x = Tensor(rng.standard_normal((2, 8, 4, 3)) * 5 + 2)
    out = ops.layer_norm(x).data
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-4)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_pixel_shuffle_inverts_unshuffle(b, c, h, w):
    x = Tensor(np.arange(b * c * 4 * h * w, dtype=np.float64).reshape(b, c, 2 * h, 2 * w))
    np.testing.assert_array_equal(ops.pixel_shuffle(ops.pixel_unshuffle(x, 2), 2).data, x.data)


def test_pixel_unshuffle_channel_order():
    x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
    out = ops.pixel_unshuffle(x, 2).data[0]
    # channel k = (row offset) * 2 + (column offset)
    np.testing.assert_array_equal(out[:, 0, 0], [0, 1, 4, 5])
    np.testing.assert_array_equal(out[1], [[1, 3], [9, 11]])


def test_upsample_nearest():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    np.testing.assert_array_equal(ops.upsample_nearest(x, 2).data[0, 0],
                                  [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])


def test_l1_l2_values():
    x = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    assert ops.l1(x).item() == 7.0
    y = ops.l2(x)
    assert y.item() == 5.0
    y.backward()
    np.testing.assert_allclose(x.grad, [0.6, -0.8])
    z = Tensor(np.zeros(3), requires_grad=True)
    ops.l2(z).backward()
    np.testing.assert_array_equal(z.grad, 0.0)


def test_backward_is_linear_in_losses(rng):
    a, b = _t(rng, 3, 4), _t(rng, 4, 2)

    def loss1():
        return ops.relu(a @ b).sum()

    def loss2():
        return ops.mul(a @ b, a @ b).mean()

    loss1().backward()
    g1 = (a.grad.copy(), b.grad.copy())
    a.grad = b.grad = None
    loss2().backward()
    g2 = (a.grad.copy(), b.grad.copy())
    a.grad = b.grad = None
    (loss1() + loss2()).backward()
    np.testing.assert_allclose(a.grad, g1[0] + g2[0], atol=1e-12)
    np.testing.assert_allclose(b.grad, g1[1] + g2[1], atol=1e-12)


def test_shared_subgraph_accumulates(rng):
    x = _t(rng, 2, 2)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_graph_is_released_after_backward(rng):
    x = _t(rng, 2, 3)
    y = (x * 2.0).sum()
    y.backward()
    assert y._parents == () and y._backward is None


def test_shape_errors_name_both_shapes(rng):
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(3, 2\)"):
        ops.add(_t(rng, 2, 3), _t(rng, 3, 2))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ops.matmul(_t(rng, 2, 3), _t(rng, 2, 3))
    with pytest.raises(ShapeError):
        ops.mul(_t(rng, 2, 3), _t(rng, 3))


def test_scalar_broadcast_only(rng):
    x = _t(rng, 2, 3)
    np.testing.assert_allclose((x * 3.0).data, x.data * 3)
    np.testing.assert_allclose((2.0 - x).data, 2 - x.data)


def test_adam_zero_gradient_keeps_parameters(rng):
    p = [rng.standard_normal((3, 2))]
    new = adam_update(OptimizerState(), p, [np.zeros((3, 2))])
    np.testing.assert_array_equal(new[0], p[0])


def test_adam_constant_gradient_step_approaches_lr():
    state = OptimizerState(lr=1e-3)
    p = [np.zeros(4)]
    g = [np.full(4, 0.3)]
    for _ in range(2000):
        prev = p[0]
        p = adam_update(state, p, g)
    np.testing.assert_allclose(prev - p[0], 1e-3, rtol=1e-4)


def test_adam_first_step_moves_by_lr(rng):
    p = [rng.standard_normal(5)]
    g = [rng.standard_normal(5)]
    new = adam_update(OptimizerState(lr=0.01), p, g)
    np.testing.assert_allclose(p[0] - new[0], 0.01 * np.sign(g[0]), rtol=1e-5)


def test_adam_deterministic_and_shape_checked(rng):
    p = [rng.standard_normal((2, 2))]
    g = [rng.standard_normal((2, 2))]
    a = adam_update(OptimizerState(), p, g)
    b = adam_update(OptimizerState(), p, g)
    np.testing.assert_array_equal(a[0], b[0])
    with pytest.raises(ShapeError):
        adam_update(OptimizerState(), p, [np.zeros(3)])


def test_adam_optimizer_minimizes_quadratic(rng):
    w = Tensor(rng.standard_normal(3), requires_grad=True)
    opt = Adam([w], lr=0.05)
    for _ in range(500):
        opt.zero_grad()
        (w * w).sum().backward()
        opt.step()
    assert np.abs(w.data).max() < 0.05


def test_modules_collect_named_parameters(rng):
    conv = Conv2d(rng, 2, 3)
    ln = LayerNorm(3)
    assert [n for n, _ in conv.named_parameters()] == ["weight", "bias"]
    assert conv.num_parameters() == 3 * 2 * 9 + 3
    assert ln.num_parameters() == 6
    state = conv.state_dict()
    conv2 = Conv2d(np.random.default_rng(99), 2, 3)
    conv2.load_state_dict(state)
    np.testing.assert_array_equal(conv2.weight.data, conv.weight.data)
    with pytest.raises(KeyError):
        conv2.load_state_dict({"weight": state["weight"]})
