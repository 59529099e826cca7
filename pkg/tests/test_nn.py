import numpy as np
import pytest
from helpers_grad import ScaledBackward, layer_fd_error

from aqpcal.nn import (
    Adam,
    Conv2d,
    Dense,
    Flatten,
    MaxPool2,
    ReLU,
    gradient_check,
    mape_loss,
    read_tensors,
    write_tensor,
)
from aqpcal.predictor import build_network


# ---------------------------------------------------------------------------
# layer forward contracts
# ---------------------------------------------------------------------------


def test_dense_identity():
    layer = Dense(3, 3)
    layer.w = np.eye(3)
    x = np.array([[1.0, -2.0, 0.5]])
    y, _ = layer.forward(x)
    assert np.array_equal(y, x)


def test_conv_single_receptive_field(rnd):
    layer = Conv2d(1, 1)
    layer.w = rnd.normal(size=(1, 1, 3, 3))
    x = rnd.normal(size=(1, 1, 3, 3))
    y, _ = layer.forward(x)
    assert y.shape == (1, 1, 1, 1)
    assert y[0, 0, 0, 0] == pytest.approx(float((x * layer.w).sum()), rel=1e-12)


def test_conv_output_side_shrinks_by_two(rnd):
    layer = Conv2d(2, 5)
    layer.init_params(3)
    y, _ = layer.forward(rnd.normal(size=(4, 2, 10, 10)))
    assert y.shape == (4, 5, 8, 8)


def test_maxpool_basic():
    layer = MaxPool2()
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    y, _ = layer.forward(x)
    assert y.tolist() == [[[[4.0]]]]


def test_maxpool_odd_sides_floor():
    layer = MaxPool2()
    x = np.arange(25, dtype=float).reshape(1, 1, 5, 5)
    y, _ = layer.forward(x)
    assert y.shape == (1, 1, 2, 2)


def test_relu_and_flatten(rnd):
    relu = ReLU()
    x = rnd.normal(size=(2, 4))
    y, cache = relu.forward(x)
    assert (y >= 0).all()
    gx, _ = relu.backward(cache, np.ones_like(y))
    assert np.array_equal(gx, (x > 0).astype(float))
    xs = rnd.normal(size=(2, 3, 4, 4))
    flat = Flatten()
    y, cache = flat.forward(xs)
    assert y.shape == (2, 48)
    gx, _ = flat.backward(cache, y)
    assert np.array_equal(gx, xs)


def test_relu_backward_positive_input_passes_grad(rnd):
    relu = ReLU()
    x = np.abs(rnd.normal(size=(3, 3))) + 0.1
    _, cache = relu.forward(x)
    g = rnd.normal(size=(3, 3))
    gx, _ = relu.backward(cache, g)
    assert np.array_equal(gx, g)


def test_dense_zero_grad_out():
    layer = Dense(4, 2)
    layer.init_params(1)
    x = np.ones((3, 4))
    _, cache = layer.forward(x)
    gx, (gw, gb) = layer.backward(cache, np.zeros((3, 2)))
    assert not gx.any() and not gw.any() and not gb.any()


# ---------------------------------------------------------------------------
# per-layer finite differences
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "make",
    [
        lambda r: (Dense(6, 4), r.normal(size=(3, 6))),
        lambda r: (Conv2d(2, 3), r.normal(size=(2, 2, 6, 6))),
        lambda r: (MaxPool2(), r.normal(size=(2, 3, 6, 6))),
        lambda r: (ReLU(), r.normal(size=(2, 8)) + 0.05),
        lambda r: (Flatten(), r.normal(size=(2, 2, 4, 4))),
    ],
    ids=["dense", "conv2d", "maxpool", "relu", "flatten"],
)
def test_layer_gradients_fd(make, rnd):
    layer, x = make(rnd)
    if layer.params():
        layer.init_params(7)
    assert layer_fd_error(layer, x) < 1e-6


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def test_mape_values():
    loss, _ = mape_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    assert loss == 0.0
    loss, _ = mape_loss(np.array([90.0]), np.array([100.0]))
    assert loss == pytest.approx(0.1)
    loss, _ = mape_loss(np.array([2.0, 2.0]), np.array([1.0, 4.0]))
    assert loss == pytest.approx(0.75)


def test_mape_gradient_formula():
    pred = np.array([90.0, 110.0, 50.0])
    target = np.array([100.0, 100.0, 50.0])
    _, grad = mape_loss(pred, target)
    assert grad[0] == pytest.approx(-1.0 / 300.0)
    assert grad[1] == pytest.approx(+1.0 / 300.0)
    assert grad[2] == 0.0  # subgradient at the kink


def test_mape_gradient_fd(rnd):
    pred = rnd.uniform(0.5, 2.0, 16)
    target = rnd.uniform(0.5, 2.0, 16)
    loss, grad = mape_loss(pred, target)
    eps = 1e-7
    for i in range(16):
        p = pred.copy()
        p[i] += eps
        lp, _ = mape_loss(p, target)
        p[i] -= 2 * eps
        lm, _ = mape_loss(p, target)
        assert (lp - lm) / (2 * eps) == pytest.approx(grad[i], rel=1e-5, abs=1e-9)


def test_mape_zero_target_rejected():
    with pytest.raises(ValueError, match="zero target"):
        mape_loss(np.array([1.0]), np.array([0.0]))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def test_adam_zero_grads_fresh_state():
    p = [np.array([1.0, -2.0])]
    before = p[0].copy()
    Adam(p).step(p, [np.zeros(2)])
    assert np.array_equal(p[0], before)


def test_adam_first_step_close_to_lr():
    p = [np.array([0.0])]
    Adam(p, lr=0.001).step(p, [np.array([1.0])])
    assert p[0][0] == pytest.approx(-0.001, rel=1e-6)


def test_adam_converges_scalar_quadratic():
    """The optimizer run on f(w) = (w - 3)^2 is its own oracle."""
    p = [np.array([0.0])]
    opt = Adam(p, lr=0.1)
    for _ in range(200):
        opt.step(p, [np.array([2.0 * (p[0][0] - 3.0)])])
    assert abs(p[0][0] - 3.0) < 0.1


# ---------------------------------------------------------------------------
# full-network gradient check
# ---------------------------------------------------------------------------


def _net_inputs(h, rnd):
    tab = rnd.normal(size=(1, 2))
    hist = np.abs(rnd.normal(size=(1, 1, h, h))) * 0.3
    return tab, hist


def test_full_network_check(rnd):
    model = build_network("accuracy", 16, 123)
    tab, hist = _net_inputs(16, rnd)
    assert gradient_check(model.net, tab, hist, 0.7, 1e-5) < 1e-4


def test_corrupted_backward_fails(rnd):
    model = build_network("accuracy", 16, 123)
    tab, hist = _net_inputs(16, rnd)
    assert gradient_check(ScaledBackward(model.net), tab, hist, 0.7, 1e-5) > 0.3


def test_zero_everything_stays_finite():
    model = build_network("accuracy", 16, 1)
    for p in model.param_arrays():
        p[...] = 0.0
    err = gradient_check(model.net, np.zeros((1, 2)), np.zeros((1, 1, 16, 16)), 0.5, 1e-5)
    assert np.isfinite(err)


def test_gradient_check_eps_validation(rnd):
    model = build_network("accuracy", 4, 1)
    tab, hist = _net_inputs(4, rnd)
    with pytest.raises(ValueError, match="eps"):
        gradient_check(model.net, tab, hist, 0.5, 1e-2)


def test_forward_determinism(rnd):
    model = build_network("accuracy", 8, 9)
    tab, hist = _net_inputs(8, rnd)
    a, _ = model.net.forward(tab, hist)
    b, _ = model.net.forward(tab, hist)
    assert np.array_equal(a, b)


def test_piecewise_linear_scaling():
    """With strictly positive activations the network is affine in its input
    scale: output = w . (c * features) + bias-terms scale predictably."""
    model = build_network("accuracy", 4, 3)
    for _, arr in model.net.named_params():
        if arr.ndim >= 2:
            arr[...] = np.abs(arr)  # positive weights keep relus active
    tab = np.full((1, 2), 0.5)
    hist = np.full((1, 1, 4, 4), 0.3)
    y1, _ = model.net.forward(tab, hist)
    y2, _ = model.net.forward(2 * tab, 2 * hist)
    y3, _ = model.net.forward(3 * tab, 3 * hist)
    # affine in scale: y(3) - y(2) == y(2) - y(1)
    assert y3[0] - y2[0] == pytest.approx(y2[0] - y1[0], rel=1e-9)


def test_shape_error_names_layer():
    model = build_network("accuracy", 16, 1)
    with pytest.raises(ValueError, match=r"layer tab\[0\]"):
        model.net.forward(np.zeros((1, 3)), np.zeros((1, 1, 16, 16)))
    with pytest.raises(ValueError, match="does not match model h"):
        model.net.forward(np.zeros((1, 2)), np.zeros((1, 1, 8, 8)))


# ---------------------------------------------------------------------------
# tensor text blocks
# ---------------------------------------------------------------------------


def test_tensor_text_roundtrip(rnd):
    arrs = {
        "a.w": rnd.normal(size=(4, 3)),
        "b.b": rnd.normal(size=7),
        "c.w": rnd.normal(size=(2, 3, 3, 3)),
    }
    lines = []
    for name, arr in arrs.items():
        write_tensor(lines, name, arr)
    back = read_tensors(lines)
    assert set(back) == set(arrs)
    for name in arrs:
        assert np.array_equal(back[name], arrs[name])
