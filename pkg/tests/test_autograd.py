import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phonodec import autograd as ag
from phonodec.autograd import Adam, Tape, Tensor, parameter
from phonodec.exceptions import NumericError, ShapeError, ValidationError

from conftest import numerical_grad, relative_error


def _scalar_through(op, *params, reduce="sum"):
    """Forward op(*params) reduced to a scalar; returns (value_fn, backward_fn)."""

    def forward():
        out = op(*params)
        return float(ag.tsum(out).data)

    def backward():
        with Tape() as tape:
            out = op(*params)
            s = ag.tsum(out)
            tape.backward(s)
        grads = [p.grad.copy() for p in params if p.requires_grad]
        for p in params:
            p.grad = None
        return grads

    return forward, backward


def check_gradients(op, params, tol=1e-4):
    forward, backward = _scalar_through(op, *params)
    analytic = backward()
    arrays = [p.data for p in params if p.requires_grad]
    numeric = numerical_grad(forward, arrays)
    for a, n in zip(analytic, numeric):
        assert relative_error(a, n) < tol


# ---------------------------------------------------------------------------
# forward behavior


def test_conv2d_identity_kernel():
    x = np.arange(25, dtype=np.float64).reshape(5, 5, 1)
    k = np.ones((1, 1, 1, 1))
    out = ag.conv2d(Tensor(x), Tensor(k), padding="valid")
    np.testing.assert_allclose(out.data, x)


def test_conv2d_sum_kernel():
    x = np.ones((3, 3, 1))
    k = np.ones((3, 3, 1, 1))
    out = ag.conv2d(Tensor(x), Tensor(k), padding="valid")
    assert out.data.shape == (1, 1, 1)
    assert out.data[0, 0, 0] == pytest.approx(9.0)


def _conv2d_loops(x, k, stride=1):
    h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    out = np.zeros((ho, wo, cout))
    for oh in range(ho):
        for ow in range(wo):
            for oc in range(cout):
                acc = 0.0
                for i in range(kh):
                    for j in range(kw):
                        for c in range(cin):
                            acc += x[oh * stride + i, ow * stride + j, c] * k[i, j, c, oc]
                out[oh, ow, oc] = acc
    return out


@pytest.mark.parametrize("seed", range(5))
def test_conv2d_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(8, 8, 2))
    k = rng.normal(size=(3, 3, 2, 4))
    out = ag.conv2d(Tensor(x), Tensor(k), padding="valid")
    np.testing.assert_allclose(out.data, _conv2d_loops(x, k), atol=1e-6)


def test_conv2d_stride_two_matches_oracle(rng):
    x = rng.normal(size=(9, 9, 2))
    k = rng.normal(size=(3, 3, 2, 3))
    out = ag.conv2d(Tensor(x), Tensor(k), stride=2, padding="valid")
    np.testing.assert_allclose(out.data, _conv2d_loops(x, k, stride=2), atol=1e-6)


def test_conv2d_channel_mismatch_rejected():
    with pytest.raises(ShapeError, match="channels"):
        ag.conv2d(Tensor(np.zeros((4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))))


def _dilated_loops(x, k, dilation):
    length, cin = x.shape
    kt, _, cout = k.shape
    out = np.zeros((length, cout))
    for t in range(length):
        for j in range(kt):
            src = t - j * dilation
            if src < 0:
                continue
            for c in range(cin):
                for o in range(cout):
                    out[t, o] += x[src, c] * k[j, c, o]
    return out


@pytest.mark.parametrize("seed", range(5))
def test_dilated_conv1d_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(20, 2))
    k = rng.normal(size=(5, 2, 3))
    for dilation in (1, 2, 4):
        out = ag.dilated_conv1d(Tensor(x), Tensor(k), dilation=dilation)
        np.testing.assert_allclose(out.data, _dilated_loops(x, k, dilation), atol=1e-6)


def test_dilated_conv1d_impulse_response():
    x = np.zeros((30, 1))
    x[5, 0] = 1.0
    k = np.ones((5, 1, 1))
    out = ag.dilated_conv1d(Tensor(x), Tensor(k), dilation=2).data[:, 0]
    hits = np.nonzero(out)[0]
    np.testing.assert_array_equal(hits, [5, 7, 9, 11, 13])
    np.testing.assert_allclose(out[hits], 1.0)


def test_dilated_conv1d_receptive_field_recurrence():
    # six layers, kernel 5, dilations 1..32: 1 + 4*(1+2+4+8+16+32) = 253
    kernel, dilations = 5, (1, 2, 4, 8, 16, 32)
    field = 1
    for d in dilations:
        field += (kernel - 1) * d
    assert field == 253

    length = 300
    x = np.zeros((length, 1))
    pos = 10
    x[pos, 0] = 1.0
    z = Tensor(x)
    k = Tensor(np.ones((kernel, 1, 1)))
    for d in dilations:
        z = ag.dilated_conv1d(z, k, dilation=d)
    support = np.nonzero(z.data[:, 0])[0]
    assert support.min() == pos
    assert support.max() == pos + field - 1


def test_dilated_conv1d_rejects_oversized_receptive_span():
    with pytest.raises(ValidationError, match="exceeds"):
        ag.dilated_conv1d(Tensor(np.zeros((10, 1))), Tensor(np.zeros((5, 1, 1))),
                          dilation=3)


def test_dense_identity_and_bias():
    x = np.array([1.0, -2.0, 3.0])
    out = ag.dense(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, x)
    b = np.array([5.0, 6.0])
    out = ag.dense(Tensor(x), Tensor(np.zeros((3, 2))), Tensor(b))
    np.testing.assert_allclose(out.data, b)


def test_dense_matches_dot_oracle(rng):
    x = rng.normal(size=4)
    w = rng.normal(size=(4, 3))
    b = rng.normal(size=3)
    out = ag.dense(Tensor(x), Tensor(w), Tensor(b))
    expected = np.array([sum(x[i] * w[i, j] for i in range(4)) + b[j] for j in range(3)])
    np.testing.assert_allclose(out.data, expected, atol=1e-6)


def test_dense_rejects_nonfinite_weights():
    w = np.eye(2)
    w[0, 0] = np.nan
    with pytest.raises(NumericError, match="non-finite"):
        ag.dense(Tensor(np.ones(2)), Tensor(w), Tensor(np.zeros(2)))


def test_activation_examples():
    np.testing.assert_allclose(ag.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(ag.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])
    assert ag.relu(Tensor([-3.0])).data[0] == 0.0
    assert ag.relu(Tensor([3.0])).data[0] == 3.0
    with pytest.raises(ValidationError):
        ag.activation(Tensor([0.0]), "softplus")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-1e300, max_value=1e300,
                          allow_nan=False, allow_infinity=False),
                min_size=2, max_size=8))
def test_softmax_rows_sum_to_one(logits):
    out = ag.softmax(Tensor(np.array(logits, dtype=np.float64))).data
    assert abs(out.sum() - 1.0) < 1e-6
    assert (out >= 0).all()


def test_dropout_modes(rng):
    x = Tensor(rng.normal(size=(50,)))
    assert ag.dropout(x, 0.0, "train", rng) is x
    assert ag.dropout(x, 0.7, "eval") is x
    with pytest.raises(ValidationError):
        ag.dropout(x, 1.0, "train", rng)


def test_dropout_monte_carlo():
    rng = np.random.default_rng(7)
    x = np.ones(100_000)
    out = ag.dropout(Tensor(x), 0.5, "train", rng).data
    surviving = (out != 0).mean()
    assert 0.49 <= surviving <= 0.51
    assert abs(out.mean() - 1.0) < 0.02


def test_loss_examples():
    one_hot = np.zeros(11)
    one_hot[3] = 1.0
    perfect = one_hot.copy()
    assert ag.cross_entropy(Tensor(perfect), one_hot).item() <= 1e-10
    uniform = np.full(11, 1.0 / 11.0)
    assert ag.cross_entropy(Tensor(uniform), one_hot).item() == pytest.approx(
        np.log(11.0), abs=1e-9)
    v = np.arange(6, dtype=np.float64)
    assert ag.mse(Tensor(v), Tensor(v.copy())).item() == 0.0
    with pytest.raises(ShapeError):
        ag.loss(Tensor(np.zeros(3)), np.zeros(4), "mean-squared-error")
    with pytest.raises(ValidationError):
        ag.loss(Tensor(np.zeros(3)), np.zeros(3), "hinge")


def test_cross_entropy_requires_one_hot():
    with pytest.raises(ValidationError, match="one-hot"):
        ag.cross_entropy(Tensor(np.full(4, 0.25)), np.full(4, 0.25))


# ---------------------------------------------------------------------------
# tape and gradients


def test_backward_before_forward_rejected():
    x = parameter(np.ones(3))
    tape = Tape()
    loss = ag.tsum(x)  # recorded on no tape
    with pytest.raises(ValidationError, match="backward before forward"):
        tape.backward(loss)


def test_backward_requires_scalar_loss():
    x = parameter(np.ones(3))
    with Tape() as tape:
        y = ag.relu(x)
        with pytest.raises(ShapeError):
            tape.backward(y)


def test_gradient_of_sum_is_ones():
    x = parameter(np.arange(6, dtype=np.float64).reshape(2, 3))
    with Tape() as tape:
        tape.backward(ag.tsum(x))
    np.testing.assert_allclose(x.grad, np.ones((2, 3)))


def test_gradient_of_square():
    x = parameter(np.array(3.0))
    with Tape() as tape:
        tape.backward(ag.tsum(ag.multiply(x, x)))
    assert x.grad == pytest.approx(6.0)


def test_reused_tensor_accumulates_gradient():
    x = parameter(np.array([2.0]))
    with Tape() as tape:
        y = ag.add(ag.multiply(x, x), x)  # x^2 + x -> dy/dx = 2x + 1
        tape.backward(ag.tsum(y))
    assert x.grad[0] == pytest.approx(5.0)


@pytest.mark.parametrize("seed", range(3))
def test_primitive_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = parameter(rng.normal(size=(6, 6, 2)))
    k = parameter(rng.normal(size=(3, 3, 2, 3)) * 0.5)
    check_gradients(lambda a, b: ag.conv2d(a, b, padding="valid"), [x, k])
    check_gradients(lambda a, b: ag.conv2d(a, b, padding="same"), [x, k])

    xs = parameter(rng.normal(size=(12, 2)))
    ks = parameter(rng.normal(size=(5, 2, 2)) * 0.5)
    check_gradients(lambda a, b: ag.dilated_conv1d(a, b, dilation=2), [xs, ks])

    xv = parameter(rng.normal(size=(4, 5)))
    w = parameter(rng.normal(size=(5, 3)))
    b = parameter(rng.normal(size=3))
    check_gradients(ag.dense, [xv, w, b])

    # pool/relu inputs nudged off ties and kinks (finite differences step 1e-3)
    pool_data = rng.normal(size=(2, 4, 6, 2)) * 5.0
    xp = parameter(pool_data)
    check_gradients(lambda a: ag.max_pool2d(a, 2), [xp])

    act_data = rng.normal(size=(3, 4))
    act_data += 0.05 * np.sign(act_data)
    xa = parameter(act_data)
    for fn in (ag.relu, ag.sigmoid, ag.tanh, ag.softmax):
        check_gradients(fn, [xa])
    check_gradients(lambda a: ag.mean(a, axis=1), [xa])
    check_gradients(ag.mean, [xa])


@pytest.mark.parametrize("seed", range(3))
def test_loss_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    logits = parameter(rng.normal(size=(4, 3)))
    onehot = np.eye(3)[rng.integers(0, 3, size=4)]

    def forward():
        return float(ag.cross_entropy(ag.softmax(logits), onehot).data)

    with Tape() as tape:
        tape.backward(ag.cross_entropy(ag.softmax(logits), onehot))
    analytic = logits.grad.copy()
    logits.grad = None
    numeric = numerical_grad(forward, [logits.data])[0]
    assert relative_error(analytic, numeric) < 1e-4

    pred = parameter(rng.normal(size=(5, 4)))
    target = rng.normal(size=(5, 4))

    def forward_mse():
        return float(ag.mse(pred, target).data)

    with Tape() as tape:
        tape.backward(ag.mse(pred, target))
    analytic = pred.grad.copy()
    pred.grad = None
    numeric = numerical_grad(forward_mse, [pred.data])[0]
    assert relative_error(analytic, numeric) < 1e-4


def test_composed_network_gradient(rng):
    # two conv blocks and a dense softmax head, checked end to end
    x = rng.normal(size=(1, 6, 6, 1))
    k1 = parameter(rng.normal(size=(3, 3, 1, 2)) * 0.5)
    b1 = parameter(np.zeros(2))
    k2 = parameter(rng.normal(size=(2, 2, 2, 2)) * 0.5)
    b2 = parameter(np.zeros(2))
    flat_w = parameter(rng.normal(size=(2, 2)) * 0.3)
    b = parameter(np.zeros(2))
    target = np.array([[1.0, 0.0]])
    params = [k1, b1, k2, b2, flat_w, b]

    def forward():
        z = ag.relu(ag.conv2d(Tensor(x), k1, padding="valid", bias=b1))
        z = ag.max_pool2d(z, 2)
        z = ag.relu(ag.conv2d(z, k2, padding="valid", bias=b2))
        z = ag.flatten(z)
        probs = ag.softmax(ag.dense(z, flat_w, b))
        return ag.cross_entropy(probs, target)

    with Tape() as tape:
        tape.backward(forward())
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.grad = None
    numeric = numerical_grad(lambda: float(forward().data), [p.data for p in params])
    for a, n in zip(analytic, numeric):
        assert relative_error(a, n) < 1e-4


def test_forward_determinism(rng):
    x = rng.normal(size=(4, 7, 7, 1)).astype(np.float32)
    k = rng.normal(size=(3, 3, 1, 4)).astype(np.float32)
    a = ag.conv2d(Tensor(x), Tensor(k)).data
    b = ag.conv2d(Tensor(x), Tensor(k)).data
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_leaves_params():
    p = parameter(np.array([1.0, -2.0]))
    opt = Adam([p], learning_rate=0.1)
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_allclose(p.data, [1.0, -2.0])


def test_adam_first_step_magnitude_is_learning_rate():
    p = parameter(np.array([0.0]))
    opt = Adam([p], learning_rate=0.05)
    p.grad = np.array([3.7])
    opt.step()
    assert abs(p.data[0]) == pytest.approx(0.05, rel=1e-6)


def test_adam_descends_quadratic():
    p = parameter(np.array([1.0]))
    opt = Adam([p], learning_rate=0.1)
    for _ in range(100):
        p.grad = 2.0 * p.data
        opt.step()
    assert abs(p.data[0]) < 0.1


def test_adam_rejects_nonfinite_gradient():
    p = parameter(np.array([1.0]), name="theta")
    opt = Adam([p])
    p.grad = np.array([np.inf])
    with pytest.raises(NumericError, match="theta"):
        opt.step()
