import numpy as np
import pytest

from avatarsplat.optim import Adam, AdamState, adam_step


def test_first_step_moves_by_learning_rate():
    p = {"x": np.array([1.0, -2.0])}
    adam_step(p, {"x": np.array([2.0, -0.5])}, AdamState(lr=0.1))
    np.testing.assert_allclose(p["x"], [1.0 - 0.1 * 2 / (2 + 1e-8), -2.0 + 0.1 * 0.5 / (0.5 + 1e-8)], rtol=1e-15)


def test_second_step_by_hand():
    p = {"x": np.array([0.0])}
    st = AdamState(lr=0.01)
    adam_step(p, {"x": np.array([1.0])}, st)
    adam_step(p, {"x": np.array([3.0])}, st)
    m = 0.9 * 0.1 * 1.0 + 0.1 * 3.0
    v = 0.999 * 0.001 * 1.0 + 0.001 * 9.0
    step2 = 0.01 * (m / (1 - 0.9 ** 2)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    np.testing.assert_allclose(p["x"], [-0.01 * 1 / (1 + 1e-8) - step2], rtol=1e-14)
    assert st.step == 2


def test_per_key_learning_rates_and_zero_rate():
    p = {"a": np.ones(2), "b": np.ones(2)}
    opt = Adam(p, {"a": 0.1, "b": 0.0})
    opt.step({"a": np.ones(2), "b": np.ones(2)})
    np.testing.assert_array_equal(p["b"], np.ones(2))
    assert np.all(p["a"] < 1)
    assert np.all(opt.state.m["b"] != 0)


def test_missing_keys_untouched():
    p = {"a": np.ones(2), "b": np.ones(2)}
    st = AdamState(lr=0.1)
    adam_step(p, {"a": np.ones(2)}, st)
    np.testing.assert_array_equal(p["b"], np.ones(2))
    assert "b" not in st.m


def test_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"a": np.ones(2)}, {"a": np.ones(3)}, AdamState())


def test_updates_in_place():
    arr = np.ones(3)
    adam_step({"a": arr}, {"a": np.ones(3)}, AdamState(lr=0.5))
    assert np.all(arr < 1)


def test_minimizes_a_quadratic():
    target = np.array([3.0, -1.0, 0.5])
    p = {"x": np.zeros(3)}
    opt = Adam(p, 0.05)
    for _ in range(2000):
        opt.step({"x": 2 * (p["x"] - target)})
    np.testing.assert_allclose(p["x"], target, atol=1e-3)
