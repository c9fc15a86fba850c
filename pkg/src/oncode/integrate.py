"""Classical fixed-step 4th-order Runge-Kutta integration.

The stepper is written against plain arithmetic (+, *) so the state may
be a numpy array or an autodiff ``Tensor``; in the latter case gradients
flow through the unrolled integration (discretize-then-optimize).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericalError
from .tensor import Tensor

DEFAULT_STEP = 0.25  # days


def _is_finite(y) -> bool:
    data = y.data if isinstance(y, Tensor) else np.asarray(y)
    return bool(np.all(np.isfinite(data)))


def rk4_integrate(f, y0, t_grid, h: float = DEFAULT_STEP, check_finite: bool = True):
    """Integrate dy/dt = f(t, y) and return the states at every grid time.

    `t_grid` must be strictly increasing and start at 0. Each grid
    interval is subdivided into equal substeps no longer than `h`.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if t_grid.ndim != 1 or len(t_grid) == 0:
        raise ValueError("t_grid must be a nonempty 1-D array")
    if t_grid[0] != 0.0:
        raise ValueError(f"t_grid must start at 0, got {t_grid[0]}")
    if len(t_grid) > 1 and not np.all(np.diff(t_grid) > 0):
        raise ValueError("t_grid must be strictly increasing")
    if h <= 0:
        raise ValueError("step h must be positive")

    states = [y0]
    y = y0
    for t_a, t_b in zip(t_grid[:-1], t_grid[1:]):
        n_sub = max(1, math.ceil((t_b - t_a) / h - 1e-12))
        dt = (t_b - t_a) / n_sub
        t = t_a
        for _ in range(n_sub):
            k1 = f(t, y)
            k2 = f(t + 0.5 * dt, y + (0.5 * dt) * k1)
            k3 = f(t + 0.5 * dt, y + (0.5 * dt) * k2)
            k4 = f(t + dt, y + dt * k3)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += dt
        if check_finite and not _is_finite(y):
            raise NumericalError(f"non-finite state at t={t_b:g} during integration")
        states.append(y)
    return states
