"""Fixed-step RK4: accuracy, convergence order, error handling."""

import numpy as np
import pytest

from oncode.errors import NumericalError
from oncode.integrate import rk4_integrate
from oncode.tensor import Tensor


def test_zero_field_constant_trajectory():
    y0 = np.array([1.5, -2.0])
    states = rk4_integrate(lambda t, y: 0.0 * y, y0, [0.0, 1.0, 3.0])
    for s in states:
        assert np.array_equal(s, y0)


def test_exponential_decay_accuracy():
    # dy/dt = -y, y(1) = exp(-1) = 0.3678794411714423216 (mpmath, 50 digits)
    states = rk4_integrate(lambda t, y: -y, np.array([1.0]), [0.0, 1.0], h=0.01)
    assert abs(states[-1][0] - 0.3678794411714423216) <= 1e-8


def test_fourth_order_convergence_on_rotation_field():
    # dy1/dt = -y2, dy2/dt = y1 with y0 = (1, 0): closed form (cos t, sin t)
    def field(t, y):
        return np.array([-y[1], y[0]])

    grid = np.linspace(0.0, 2.0, 5)
    exact = np.stack([np.cos(grid), np.sin(grid)], axis=1)

    def max_err(h):
        states = np.stack(rk4_integrate(field, np.array([1.0, 0.0]), grid, h=h))
        return np.max(np.abs(states - exact))

    e_coarse = max_err(0.1)
    e_fine = max_err(0.05)
    ratio = e_coarse / e_fine
    order = np.log2(ratio)
    assert 3.8 <= order <= 4.2, f"empirical order {order:.3f}"


def test_states_returned_at_every_grid_point():
    grid = [0.0, 0.7, 1.1, 5.0]
    states = rk4_integrate(lambda t, y: -y, np.array([2.0]), grid, h=0.05)
    assert len(states) == len(grid)
    # spot-check against the closed form
    for t, s in zip(grid, states):
        assert s[0] == pytest.approx(2.0 * np.exp(-t), rel=1e-6)


def test_grid_validation():
    y0 = np.array([1.0])
    with pytest.raises(ValueError, match="start at 0"):
        rk4_integrate(lambda t, y: y, y0, [1.0, 2.0])
    with pytest.raises(ValueError, match="increasing"):
        rk4_integrate(lambda t, y: y, y0, [0.0, 2.0, 1.0])
    with pytest.raises(ValueError, match="positive"):
        rk4_integrate(lambda t, y: y, y0, [0.0, 1.0], h=0.0)


def test_nonfinite_state_aborts_with_timestamp():
    # explosive field overflows quickly
    with np.errstate(over="ignore", invalid="ignore"), \
            pytest.raises(NumericalError, match="t=4"):
        rk4_integrate(lambda t, y: y * y, np.array([10.0]), [0.0, 4.0], h=0.25)


def test_tensor_states_supported_and_differentiable():
    # d/dy0 of y(T) for dy/dt = -y is exp(-T)
    from oncode.tensor import autodiff_eval

    def f(y0):
        states = rk4_integrate(lambda t, y: -y, y0, [0.0, 1.0], h=0.05)
        return states[-1].sum()

    out, grads = autodiff_eval(f, {"y0": np.array([1.0])})
    assert out.item() == pytest.approx(np.exp(-1.0), abs=1e-6)
    assert grads["y0"][0] == pytest.approx(np.exp(-1.0), abs=1e-6)
