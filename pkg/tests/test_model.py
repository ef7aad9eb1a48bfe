import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopforecast.errors import InputError, ShapeMismatch
from coopforecast.forecaster import forward, init_params, nll_loss
from coopforecast.forecaster.model import VAR_FLOOR, ModelParams, param_shapes
from coopforecast.forecaster.synthetic import synthetic_dataset

from _gradcheck import worst_relative_error


@pytest.fixture(scope="module")
def batch():
    return synthetic_dataset(n_walks=6, seed=3)


def test_param_shapes_and_validation():
    p = init_params(hidden=8)
    assert p.weights["enc0.Wx"].shape == (4, 32) and p.weights["head.W"].shape == (8, 4)
    assert p.n_parameters == sum(np.prod(s) for s in param_shapes(8, 4).values())
    bad = dict(p.weights)
    bad["dec1.Wh"] = np.zeros((3, 3))
    with pytest.raises(ShapeMismatch):
        ModelParams(bad, 8)
    nan = dict(p.weights)
    nan["head.b"] = np.array([np.nan, 0, 0, 0])
    with pytest.raises(InputError):
        ModelParams(nan, 8)
    with pytest.raises(InputError):
        init_params(hidden=4, dropout=1.0)


def test_forward_shapes(batch):
    p = init_params(hidden=8)
    mu, lv = forward(p, batch.past_states[0])
    assert mu.shape == (12, 2) and lv.shape == (12, 2)
    mu, lv = forward(p, batch.past_states)
    assert mu.shape == (len(batch), 12, 2)
    with pytest.raises(ShapeMismatch):
        forward(p, batch.past_states[0, :7])


def test_no_dropout_seed_is_inert(batch):
    p = init_params(hidden=8, dropout=0.0)
    a = forward(p, batch.past_states)
    b = forward(p, batch.past_states, seed=123)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_zero_weights_give_head_bias(batch):
    p = init_params(hidden=6)
    w = {k: np.zeros_like(v) for k, v in p.weights.items()}
    w["head.b"] = np.array([0.3, -1.2, 0.1, -0.4])
    p = p.with_weights(w)
    past = batch.past_states[0].copy()
    past[:, :2] -= past[-1, :2]  # last observed position at the origin
    mu, lv = forward(p, past, seed=7)
    assert np.array_equal(mu, np.tile([0.3, -1.2], (12, 1)))
    assert np.array_equal(lv, np.tile([0.1, -0.4], (12, 1)))


def test_seeded_forward_is_deterministic(batch):
    p = init_params(hidden=8, dropout=0.3, seed=1)
    a = forward(p, batch.past_states, seed=5)
    b = forward(p, batch.past_states, seed=5)
    c = forward(p, batch.past_states, seed=6)
    assert a[0].tobytes() == b[0].tobytes()
    assert not np.array_equal(a[0], c[0])


@given(st.floats(-20, 20), st.floats(-5, 5))
def test_forward_translation_equivariant(dx, dy):
    ds = synthetic_dataset(n_walks=1, seed=9)
    p = init_params(hidden=4, seed=2)
    past = ds.past_states[0]
    moved = past.copy()
    moved[:, :2] += [dx, dy]
    np.testing.assert_allclose(forward(p, moved)[0], forward(p, past)[0] + [dx, dy], atol=1e-9)


def test_nll_examples():
    z = np.zeros((12, 2))
    assert nll_loss(z, z, z) == 0.0
    assert nll_loss(z, z, z + 1.0) == 1.0
    lv = np.full((12, 2), -100.0)
    loss = nll_loss(z, lv, z + 1e-3)
    assert loss == pytest.approx(1e-6 / VAR_FLOOR + 0.5 * np.log(VAR_FLOOR))
    with pytest.raises(ShapeMismatch):
        nll_loss(z, z, z[:5])


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_nll_grad_matches_numeric(seed):
    rng = np.random.default_rng(seed)
    mu, lv, y = rng.normal(size=(3, 4, 2))
    _, dmu, dlv = nll_loss(mu, lv, y, with_grad=True)
    h = 1e-6
    for arr, grad, which in ((mu, dmu, 0), (lv, dlv, 1)):
        for idx in np.ndindex(arr.shape):
            a, b = arr.copy(), arr.copy()
            a[idx] += h
            b[idx] -= h
            args_a = (a, lv, y) if which == 0 else (mu, a, y)
            args_b = (b, lv, y) if which == 0 else (mu, b, y)
            num = (nll_loss(*args_a) - nll_loss(*args_b)) / (2 * h)
            assert num == pytest.approx(grad[idx], rel=1e-5, abs=1e-8)


@pytest.mark.parametrize("teacher", [True, False])
def test_gradient_check_small(teacher):
    assert worst_relative_error(2, teacher) < 1e-4
