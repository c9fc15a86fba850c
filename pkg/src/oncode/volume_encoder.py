"""Recurrent encoder of early tumor-volume observation windows.

A gated recurrent cell scans (time delta, log relative volume) pairs,
so irregular sampling enters explicitly through the deltas; the final
hidden state is projected to the window embedding. Volumes are
normalized to v(t)/v(0) and log-transformed, anchoring day 0 at 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import VolumeSeries
from .tensor import Tensor, as_tensor, parameter

INPUT_DIM = 2  # (delta t, log relative volume)


@dataclass
class ObservationWindow:
    """The measurements available up to a cutoff day, normalized."""

    cutoff_days: float
    times: np.ndarray
    values: np.ndarray         # log(v(t) / v(0))
    v_initial: float

    def __post_init__(self):
        if len(self.times) == 0:
            raise ValueError("observation window is empty")
        if self.times[0] != 0.0:
            raise ValueError("window must contain the day-0 measurement")
        if not np.all(np.diff(self.times) > 0):
            raise ValueError("window times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def step_inputs(self) -> np.ndarray:
        """(len, 2) array of (delta t, value) scan inputs."""
        deltas = np.diff(self.times, prepend=self.times[0])
        return np.stack([deltas, self.values], axis=1)


def make_window(series: VolumeSeries, cutoff_days: float) -> ObservationWindow:
    """Restrict a series to t <= cutoff and normalize volumes."""
    if cutoff_days < 0:
        raise ValueError("cutoff must be nonnegative (the day-0 point is always kept)")
    mask = series.times <= cutoff_days
    times = series.times[mask]
    vols = series.volumes[mask]
    return ObservationWindow(
        cutoff_days=float(cutoff_days),
        times=times.copy(),
        values=np.log(vols / series.v_initial),
        v_initial=series.v_initial,
    )


@dataclass
class RNNParams:
    """Gated recurrent cell (update/reset gates + candidate) and output map."""

    wz: Tensor
    uz: Tensor
    bz: Tensor
    wr: Tensor
    ur: Tensor
    br: Tensor
    wh: Tensor
    uh: Tensor
    bh: Tensor
    wo: Tensor
    bo: Tensor

    @property
    def hidden_dim(self) -> int:
        return self.wz.shape[1]

    def named(self, prefix: str = "vol") -> dict[str, Tensor]:
        return {f"{prefix}.{k}": getattr(self, k)
                for k in ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh",
                          "wo", "bo")}


def init_rnn(hidden_dim: int, rng: np.random.Generator) -> RNNParams:
    def mat(n_in, n_out):
        bound = 1.0 / np.sqrt(n_in)
        return parameter(rng.uniform(-bound, bound, size=(n_in, n_out)))

    return RNNParams(
        wz=mat(INPUT_DIM, hidden_dim), uz=mat(hidden_dim, hidden_dim),
        bz=parameter(np.zeros(hidden_dim)),
        wr=mat(INPUT_DIM, hidden_dim), ur=mat(hidden_dim, hidden_dim),
        br=parameter(np.zeros(hidden_dim)),
        wh=mat(INPUT_DIM, hidden_dim), uh=mat(hidden_dim, hidden_dim),
        bh=parameter(np.zeros(hidden_dim)),
        wo=mat(hidden_dim, hidden_dim), bo=parameter(np.zeros(hidden_dim)),
    )


def gru_cell(params: RNNParams, x: Tensor, h: Tensor) -> Tensor:
    """One gated step: h' = (1 - z) * h + z * candidate."""
    z = (x @ params.wz + h @ params.uz + params.bz).sigmoid()
    r = (x @ params.wr + h @ params.ur + params.br).sigmoid()
    cand = (x @ params.wh + (r * h) @ params.uh + params.bh).tanh()
    return (1.0 - z) * h + z * cand


def encode_window(params: RNNParams, window: ObservationWindow) -> Tensor:
    """Scan one window and project the final hidden state (length D_v)."""
    d = params.hidden_dim
    h = Tensor(np.zeros(d))
    for x in window.step_inputs():
        h = gru_cell(params, as_tensor(x), h)
    return h @ params.wo + params.bo


def encode_windows_batch(params: RNNParams, windows: list[ObservationWindow]) -> Tensor:
    """Encode equal-length windows together; returns a (B, D_v) matrix.

    All windows must share their time grid (the trainer groups by grid),
    so step t of every window lines up.
    """
    if not windows:
        raise ValueError("no windows to encode")
    lengths = {len(w) for w in windows}
    if len(lengths) != 1:
        raise ValueError(f"windows differ in length: {sorted(lengths)}")
    steps = np.stack([w.step_inputs() for w in windows], axis=1)  # (T, B, 2)
    b = len(windows)
    h = Tensor(np.zeros((b, params.hidden_dim)))
    for x in steps:
        h = gru_cell(params, Tensor(x), h)
    return h @ params.wo + params.bo
