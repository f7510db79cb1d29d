import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from fedmeter.nn import (
    MLPShape, forward, grad_ditto, grad_mse, init_params, mse_loss, predict, sgd_epochs,
)

SHAPE = MLPShape(5, 40)


def finite_diff(f, p, coords, h=1e-5):
    out = []
    for k in coords:
        e = np.zeros_like(p)
        e[k] = h
        out.append((f(p + e) - f(p - e)) / (2 * h))
    return np.array(out)


def rel_err(a, b, floor=1e-8):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def test_param_count_matches_hand_count():
    assert SHAPE.param_count == (5 + 1) * 40 + (40 + 1) * 1 == 281
    assert init_params(SHAPE, np.random.default_rng(0)).shape == (281,)


@pytest.mark.parametrize("kw", [dict(input_dim=0), dict(hidden_dim=0), dict(output_dim=2), dict(activation="tanh")])
def test_shape_rejects_invalid(kw):
    with pytest.raises(ValueError):
        MLPShape(**kw)


def test_init_is_seeded_with_zero_biases():
    a = init_params(SHAPE, np.random.default_rng(0))
    b = init_params(SHAPE, np.random.default_rng(0))
    assert np.array_equal(a, b)
    W1, b1, W2, b2 = SHAPE.split(a)
    assert np.all(b1 == 0) and np.all(b2 == 0)
    assert np.all(np.abs(W1) <= 1 / np.sqrt(5)) and np.all(np.abs(W2) <= 1 / np.sqrt(40))


def test_zero_weights_give_output_bias():
    p = np.zeros(SHAPE.param_count)
    p[-1] = 1.75
    assert forward(p, SHAPE, [3.0, -1.0, 2.0, 0.0, 9.0]) == 1.75


def test_passthrough_network_sums_positive_inputs():
    shape = MLPShape(3, 3)
    p = np.zeros(shape.param_count)
    W1, _, W2, _ = shape.split(p)
    W1[:] = np.eye(3)
    W2[:] = 1.0
    assert forward(p, shape, [1.0, 2.0, 4.0]) == 7.0


def test_relu_clamps_negative_preactivations():
    shape = MLPShape(1, 2)
    p = np.zeros(shape.param_count)
    W1, _, W2, _ = shape.split(p)
    W1[:, 0] = [1.0, -1.0]
    W2[:] = [1.0, 1.0]
    assert forward(p, shape, [2.0]) == 2.0
    assert forward(p, shape, [-3.0]) == 3.0


def test_dimension_mismatch_raises(rng):
    p = init_params(SHAPE, rng)
    with pytest.raises(ValueError):
        forward(p, SHAPE, np.ones(4))
    with pytest.raises(ValueError):
        predict(p[:-1], SHAPE, np.ones((2, 5)))
    with pytest.raises(ValueError):
        mse_loss(p, SHAPE, np.ones((3, 5)), np.ones(2))


def test_empty_batch_raises(rng):
    p = init_params(SHAPE, rng)
    with pytest.raises(ValueError):
        grad_mse(p, SHAPE, np.zeros((0, 5)), np.zeros(0))


def test_forward_is_pure(rng):
    p = init_params(SHAPE, rng)
    x = rng.normal(size=(10, 5))
    assert predict(p, SHAPE, x).tobytes() == predict(p, SHAPE, x).tobytes()


def test_loss_zero_iff_exact(rng):
    p = init_params(SHAPE, rng)
    x = rng.normal(size=(8, 5))
    y = predict(p, SHAPE, x)
    assert mse_loss(p, SHAPE, x, y) == 0.0
    assert np.all(grad_mse(p, SHAPE, x, y) == 0.0)
    y2 = y.copy()
    y2[3] += 0.1
    assert mse_loss(p, SHAPE, x, y2) > 0


def test_duplicated_batch_same_gradient(rng):
    p = init_params(SHAPE, rng)
    x = rng.normal(size=(6, 5))
    y = rng.normal(size=6)
    g1 = grad_mse(p, SHAPE, x, y)
    g2 = grad_mse(p, SHAPE, np.vstack([x, x]), np.concatenate([y, y]))
    assert np.allclose(g1, g2, rtol=1e-13, atol=1e-15)


def test_grad_mse_matches_finite_differences(rng):
    p = init_params(SHAPE, rng)
    p[-1] = 0.3
    x = rng.normal(size=(32, 5))
    y = rng.normal(size=32)
    coords = rng.choice(SHAPE.param_count, 60, replace=False)
    fd = finite_diff(lambda q: mse_loss(q, SHAPE, x, y), p, coords)
    assert rel_err(grad_mse(p, SHAPE, x, y)[coords], fd).max() <= 1e-6


def test_grad_ditto_reductions(rng):
    v = init_params(SHAPE, rng)
    w = init_params(SHAPE, rng)
    x = rng.normal(size=(7, 5))
    y = rng.normal(size=7)
    g = grad_mse(v, SHAPE, x, y)
    assert np.array_equal(grad_ditto(v, w, SHAPE, x, y, 0.0), g)
    assert np.array_equal(grad_ditto(v, v.copy(), SHAPE, x, y, 3.0), g)
    assert np.allclose(grad_ditto(v, w, SHAPE, x, y, 0.7) - g, 0.7 * (v - w), rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        grad_ditto(v, w[:-1], SHAPE, x, y, 0.1)
    with pytest.raises(ValueError):
        grad_ditto(v, w, SHAPE, x, y, -1.0)


@given(
    n_in=st.integers(1, 6),
    n_hid=st.integers(1, 40),
    n=st.integers(1, 32),
    mu=st.floats(0.0, 2.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_gradients_match_finite_differences_property(n_in, n_hid, n, mu, seed):
    shape = MLPShape(n_in, n_hid)
    r = np.random.default_rng(seed)
    v = init_params(shape, r) + r.normal(0, 0.1, shape.param_count)
    w = v + r.normal(0, 0.5, shape.param_count)
    x = r.normal(size=(n, n_in))
    y = r.normal(size=n)
    coords = r.choice(shape.param_count, min(50, shape.param_count), replace=False)

    def objective(q):
        return mse_loss(q, shape, x, y) + 0.5 * mu * float((q - w) @ (q - w))

    # skip coordinates sitting on a ReLU kink, where the derivative is undefined
    W1, b1, _, _ = shape.split(v)
    assume(np.min(np.abs(x @ W1.T + b1)) > 1e-4)
    # a step-1e-5 central difference carries about eps * |f| / h of rounding noise,
    # so components smaller than 1e-4 * |f| are measured against that floor
    mse = lambda q: mse_loss(q, shape, x, y)
    assert rel_err(grad_mse(v, shape, x, y)[coords], finite_diff(mse, v, coords),
                   1e-4 * max(1.0, mse(v))).max() <= 1e-6
    assert rel_err(grad_ditto(v, w, shape, x, y, mu)[coords], finite_diff(objective, v, coords),
                   1e-4 * max(1.0, objective(v))).max() <= 1e-6


def test_sgd_zero_epochs_is_identity(rng):
    p = init_params(SHAPE, rng)
    out = sgd_epochs(p, SHAPE, rng.normal(size=(5, 5)), rng.normal(size=5), 0, 2, 0.1, rng)
    assert np.array_equal(out, p) and out is not p


def test_sgd_single_sample_single_step(rng):
    p = init_params(SHAPE, rng)
    x = rng.normal(size=(1, 5))
    y = np.array([0.4])
    out = sgd_epochs(p, SHAPE, x, y, 1, 1, 0.05, np.random.default_rng(0))
    assert np.allclose(out, p - 0.05 * grad_mse(p, SHAPE, x, y), rtol=0, atol=1e-15)


def test_sgd_matches_python_reference(rng):
    """The kernel path equals a plain loop over grad_ditto with the same shuffles."""
    p = init_params(SHAPE, rng)
    anchor = init_params(SHAPE, rng)
    x = rng.normal(size=(23, 5))
    y = rng.normal(size=23)
    fast = sgd_epochs(p, SHAPE, x, y, 3, 4, 0.02, np.random.default_rng(9), mu=0.3, anchor=anchor)
    slow = sgd_epochs(p, SHAPE, x, y, 3, 4, 0.02, np.random.default_rng(9),
                      grad_fn=lambda q, xb, yb: grad_ditto(q, anchor, SHAPE, xb, yb, 0.3))
    assert np.allclose(fast, slow, rtol=1e-12, atol=1e-14)


def test_sgd_is_deterministic(rng):
    p = init_params(SHAPE, rng)
    x = rng.normal(size=(50, 5))
    y = rng.normal(size=50)
    a = sgd_epochs(p, SHAPE, x, y, 2, 8, 0.01, np.random.default_rng(3))
    b = sgd_epochs(p, SHAPE, x, y, 2, 8, 0.01, np.random.default_rng(3))
    assert a.tobytes() == b.tobytes()


def test_sgd_rejects_bad_settings(rng):
    p = init_params(SHAPE, rng)
    x, y = np.ones((2, 5)), np.ones(2)
    for kw in (dict(epochs=-1, batch_size=1, lr=0.1), dict(epochs=1, batch_size=0, lr=0.1)):
        with pytest.raises(ValueError):
            sgd_epochs(p, SHAPE, x, y, rng=rng, **kw)
    with pytest.raises(ValueError):
        sgd_epochs(p, SHAPE, x, y, 1, 1, 0.1, rng, mu=0.5)


def test_sgd_reduces_loss_on_learnable_target(rng):
    x = rng.uniform(size=(200, 5))
    y = x @ np.array([1.0, -2.0, 0.5, 0.0, 3.0])
    p = init_params(SHAPE, rng)
    before = mse_loss(p, SHAPE, x, y)
    after = mse_loss(sgd_epochs(p, SHAPE, x, y, 30, 8, 0.05, rng), SHAPE, x, y)
    assert after < 0.1 * before
