import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from avsv import autodiff as ad
from avsv.autodiff import Tape, Tensor
from avsv.errors import ConfigError, DimensionError, TapeError


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def away_from_zero(rng, shape, margin=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)


# linear


def test_linear_identity():
    out = ad.linear(Tensor([[1.0, 0.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(out.data, [[1, 0]])


def test_linear_hand_value():
    out = ad.linear(Tensor([[1.0, 2.0]]), Tensor([[1.0], [1.0]]), Tensor([3.0]))
    assert out.data.tolist() == [[6.0]]


def test_linear_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(1, 3\).*\(2, 2\)"):
        ad.linear(Tensor(np.ones((1, 3))), Tensor(np.ones((2, 2))), Tensor(np.zeros(2)))


def test_linear_weight_gradient(rng):
    x = t64(rng.normal(size=(3, 4)))
    b = t64(rng.normal(size=2))
    err = ad.grad_check(lambda W: ad.sum_all(ad.linear(x, W, b)), t64(rng.normal(size=(4, 2))))
    assert err < 1e-4


# conv2d


def test_conv_all_ones():
    out = ad.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 2))))
    assert out.data.tolist() == [[[[4.0]]]]


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(2, 1, 4, 5)).astype(np.float32)
    out = ad.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x)


def test_conv_output_size_and_stride():
    out = ad.conv2d(Tensor(np.ones((1, 1, 7, 6))), Tensor(np.ones((3, 1, 3, 3))), stride=2)
    assert out.shape == (1, 3, 3, 2)


def test_conv_kernel_too_large():
    with pytest.raises(DimensionError):
        ad.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


def test_conv_gradients(rng):
    k = t64(rng.normal(size=(3, 2, 2, 2)))
    x = t64(rng.normal(size=(1, 2, 4, 4)))
    assert ad.grad_check(lambda v: ad.sum_all(ad.tanh(ad.conv2d(v, k, stride=1))), x) < 1e-4
    assert ad.grad_check(lambda w: ad.sum_all(ad.tanh(ad.conv2d(x, w, stride=2))), k) < 1e-4


def test_pad2d_gradient(rng):
    k = t64(rng.normal(size=(1, 1, 3, 3)))
    x = t64(rng.normal(size=(1, 1, 3, 3)))
    assert ad.pad2d(x, 1).shape == (1, 1, 5, 5)
    assert ad.grad_check(lambda v: ad.sum_all(ad.tanh(ad.conv2d(ad.pad2d(v, 1), k))), x) < 1e-4


# elementwise


def test_relu_values_and_kink():
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ad.relu(x)
        loss = ad.sum_all(y)
    tape.backward(loss)
    assert y.data.tolist() == [0, 0, 2]
    assert x.grad.tolist() == [0, 0, 1]


def test_tanh_origin():
    assert ad.tanh(Tensor([0.0])).data.tolist() == [0.0]


def test_add_gradient_is_ones():
    a, b = Tensor(np.ones(3), requires_grad=True), Tensor(np.arange(3.0), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(ad.elementwise(a, "add", b))
    tape.backward(loss)
    np.testing.assert_array_equal(a.grad, np.ones(3))


def test_binary_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.elementwise(Tensor(np.ones(3)), "mul", Tensor(np.ones(2)))


@pytest.mark.parametrize("kind", ["relu", "tanh", "scale", "add", "mul"])
def test_elementwise_gradients_at_random_points(kind):
    rng = np.random.default_rng(5)
    for _ in range(10):
        # keep the weights away from zero so no gradient entry drowns in rounding noise
        other = t64(away_from_zero(rng, (3, 4), 0.3))
        x = t64(away_from_zero(rng, (3, 4)))
        f = lambda v: ad.sum_all(ad.mul(ad.elementwise(v, kind, other, c=1.7), other))  # noqa: E731
        assert ad.grad_check(f, x) < 1e-4


# softmax


def test_softmax_uniform():
    np.testing.assert_allclose(ad.softmax(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], atol=1e-7)


def test_softmax_hand_value():
    np.testing.assert_allclose(ad.softmax(t64([[0.0, math.log(2)]])).data, [[1 / 3, 2 / 3]], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_rows_and_shift(x, c):
    p = ad.softmax(t64(x)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(ad.softmax(t64(x + c)).data, p, atol=1e-6)


def test_softmax_and_cross_entropy_gradients(rng):
    w = t64(rng.normal(size=(2, 4)))
    assert ad.grad_check(lambda v: ad.sum_all(ad.mul(ad.softmax(v), w)), t64(rng.normal(size=(2, 4)))) < 1e-4
    labels = np.array([1, 3])
    assert ad.grad_check(lambda v: ad.cross_entropy(v, labels), t64(rng.normal(size=(2, 4)))) < 1e-4


# batchnorm


def test_batchnorm_keeps_normalised_column():
    col = np.array([-1.5, -0.5, 0.5, 1.5])
    col = col / col.std()
    x = Tensor(col[:, None], dtype=np.float64)
    out = ad.batchnorm(x, t64([1.0]), t64([0.0]))
    np.testing.assert_allclose(out.data, x.data, atol=1e-4)


@pytest.mark.parametrize("n", [8, 20])
def test_batchnorm_train_statistics(rng, n):
    out = ad.batchnorm(t64(rng.normal(3, 5, size=(n, 4))), t64(np.ones(4)), t64(np.zeros(4))).data
    assert np.abs(out.mean(axis=0)).max() < 1e-4
    assert np.abs(out.var(axis=0) - 1).max() < 1e-3


def test_batchnorm_gradient(rng):
    g, b = t64(rng.normal(size=3)), t64(rng.normal(size=3))
    w = t64(rng.normal(size=(4, 3)))
    f = lambda v: ad.sum_all(ad.mul(ad.batchnorm(v, g, b), w))  # noqa: E731
    assert ad.grad_check(f, t64(rng.normal(size=(4, 3)))) < 1e-4


def test_batchnorm_running_stats_and_infer():
    running = ad.RunningStats(2, np.float64)
    x = t64([[1.0, 2.0], [3.0, 6.0]])
    ad.batchnorm(x, t64([1.0, 1.0]), t64([0.0, 0.0]), running=running)
    np.testing.assert_allclose(running.mean, [0.2, 0.4])
    np.testing.assert_allclose(running.var, [0.9 + 0.1 * 2.0, 0.9 + 0.1 * 8.0])
    out = ad.batchnorm(x, t64([1.0, 1.0]), t64([0.0, 0.0]), mode="infer", running=running)
    np.testing.assert_allclose(out.data, (x.data - running.mean) / np.sqrt(running.var + 1e-5))


def test_batchnorm_update_deferred_under_tape():
    running = ad.RunningStats(1, np.float64)
    with Tape() as tape:
        ad.batchnorm(t64([[1.0], [3.0]]), t64([1.0]), t64([0.0]), running=running)
    assert running.mean[0] == 0.0
    tape.commit()
    assert running.mean[0] == pytest.approx(0.2)


def test_batchnorm_needs_two_rows():
    with pytest.raises(DimensionError):
        ad.batchnorm(t64([[1.0, 2.0]]), t64([1.0, 1.0]), t64([0.0, 0.0]))


# dropout


def test_dropout_identities(rng):
    x = Tensor(rng.normal(size=(3, 3)))
    assert ad.dropout(x, 0.0, rng=rng) is x
    assert ad.dropout(x, 0.9, mode="infer") is x


def test_dropout_rejects_p_one():
    with pytest.raises(ConfigError):
        ad.dropout(Tensor(np.ones(3)), 1.0, rng=np.random.default_rng(0))


def test_dropout_monte_carlo_mean():
    x = Tensor(np.full(10_000, 2.0), dtype=np.float64)
    out = ad.dropout(x, 0.3, rng=np.random.default_rng(0)).data
    assert abs(out.mean() / 2.0 - 1) < 0.02
    assert set(np.unique(out)) <= {0.0, 2.0 / 0.7}


def test_dropout_is_seeded():
    x = Tensor(np.ones(50))
    a = ad.dropout(x, 0.5, rng=np.random.default_rng(9)).data
    b = ad.dropout(x, 0.5, rng=np.random.default_rng(9)).data
    np.testing.assert_array_equal(a, b)


# l2_normalize


def test_l2_normalize_cases():
    np.testing.assert_allclose(ad.l2_normalize(t64([[3.0, 4.0]])).data, [[0.6, 0.8]])
    np.testing.assert_allclose(ad.l2_normalize(t64([[0.6, 0.8]])).data, [[0.6, 0.8]])
    np.testing.assert_array_equal(ad.l2_normalize(t64([[0.0, 0.0]])).data, [[0.0, 0.0]])


def test_l2_normalize_gradient(rng):
    w = t64(rng.normal(size=(3, 4)))
    assert ad.grad_check(lambda v: ad.sum_all(ad.mul(ad.l2_normalize(v), w)), t64(rng.normal(size=(3, 4)))) < 1e-4


# concat


def test_concat_cases():
    assert ad.concat([Tensor([[1.0]]), Tensor([[2.0]])]).data.tolist() == [[1.0, 2.0]]
    a = Tensor([[1.0, 2.0]])
    np.testing.assert_array_equal(ad.concat([a]).data, a.data)
    with pytest.raises(DimensionError):
        ad.concat([Tensor(np.ones((1, 2))), Tensor(np.ones((2, 2)))])


def test_concat_backward_ones():
    a, b = Tensor(np.ones((2, 2)), requires_grad=True), Tensor(np.ones((2, 3)), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(ad.concat([a, b]))
    tape.backward(loss)
    np.testing.assert_array_equal(a.grad, np.ones((2, 2)))
    np.testing.assert_array_equal(b.grad, np.ones((2, 3)))


# tape and backward


def test_backward_of_sum_and_square(rng):
    x = Tensor(rng.normal(size=5), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(x)
    ad.backward(loss, tape)
    np.testing.assert_array_equal(x.grad, np.ones(5))
    x.zero_grad()
    with Tape() as tape:
        loss = ad.sum_all(ad.mul(x, x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_fan_out_accumulates(rng):
    xv = rng.normal(size=4)
    x = t64(xv, grad=True)
    with Tape() as tape:
        loss = ad.sum_all(ad.add(ad.tanh(x), ad.mul(x, x)))
    tape.backward(loss)
    single = t64(xv, grad=True)
    with Tape() as tape:
        loss = ad.sum_all(ad.tanh(single))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, single.grad + 2 * xv)


def test_leaf_gradients_accumulate_until_reset():
    x = Tensor(np.ones(2), requires_grad=True)
    for _ in range(2):
        with Tape() as tape:
            loss = ad.sum_all(x)
        tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_backward_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ad.tanh(x)
    with pytest.raises(TapeError):
        tape.backward(y)
    with Tape() as tape:
        loss = ad.sum_all(x)
    tape.backward(loss)
    assert tape.frozen
    with pytest.raises(TapeError):
        tape.backward(loss)
    tape.reset()
    assert not tape.frozen


def test_ops_are_deterministic(rng):
    x = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
    k = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    a = ad.conv2d(Tensor(x), Tensor(k), 2).data
    b = ad.conv2d(Tensor(x), Tensor(k), 2).data
    assert a.tobytes() == b.tobytes()


def test_float32_default():
    assert Tensor([1, 2]).dtype == np.float32
    assert ad.linear(Tensor([[1.0]]), Tensor([[2.0]]), Tensor([0.0])).dtype == np.float32


# grad_check itself


def test_grad_check_linear_is_exact(rng):
    assert ad.grad_check(ad.sum_all, t64(rng.normal(size=6))) < 1e-8


def test_grad_check_relu_region(rng):
    assert ad.grad_check(lambda v: ad.sum_all(ad.relu(v)), t64(away_from_zero(rng, 8, 0.1))) < 1e-6


def test_grad_check_ladder_rescues_kinks_only():
    x = t64([5e-5, -0.7, 1.3])
    f = lambda v: ad.sum_all(ad.relu(v))  # noqa: E731
    # a 1e-4 step straddles the kink at 0 for the first entry; a smaller step in the ladder does not
    assert ad.grad_check(f, x, h=1e-4) > 0.1
    assert ad.grad_check(f, x, h=(1e-4, 1e-6)) < 1e-8

    def wrong_square(v):
        return ad.sum_all(ad.record((v,), v.data ** 2, lambda g: (g * 2.1 * v.data,)))

    assert ad.grad_check(wrong_square, x, h=(1e-3, 1e-4, 1e-5, 1e-6)) > 0.04


def test_grad_check_floor_bounds_zero_gradients():
    # batchnorm columns always sum to N * beta, so the true gradient is zero and differences only see rounding
    g, b = t64(np.ones(3)), t64(np.full(3, 0.5))
    f = lambda v: ad.sum_all(ad.batchnorm(v, g, b))  # noqa: E731
    x = t64(np.random.default_rng(3).normal(size=(4, 3)) * 50)
    loose, floored = ad.grad_check(f, x, h=1e-6), ad.grad_check(f, x, h=1e-6, floor=1e-6)
    assert loose > 1e-2
    # the floor turns the error on zero entries into absolute error over the floor
    assert floored == pytest.approx(loose / 100, rel=1e-6)
    assert floored < 1e-3


def test_composite_network_gradients():
    from avsv.models.config import ArcConfig
    from avsv.models.losses import arc_margin_loss

    rng = np.random.default_rng(0)

    def param(a, name):
        return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True, name=name, dtype=np.float64)

    x = t64(rng.normal(size=(4, 5)))
    W = param(rng.normal(size=(5, 6)) * 0.5, "W")
    b = param(rng.normal(size=6) * 0.1, "b")
    gamma = param(1 + 0.1 * rng.normal(size=6), "gamma")
    beta = param(0.1 * rng.normal(size=6), "beta")
    classes = param(rng.normal(size=(3, 6)), "classes")
    labels = np.array([0, 1, 2, 1])

    def loss():
        h = ad.batchnorm(ad.tanh(ad.linear(x, W, b)), gamma, beta)
        return arc_margin_loss(h, classes, labels, ArcConfig(4.0, 0.2))

    errors = ad.grad_check_params(loss, [W, b, gamma, beta, classes], h=1e-3)
    assert max(errors.values()) < 1e-4, errors
