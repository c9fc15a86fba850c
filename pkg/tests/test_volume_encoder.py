"""Observation windows and the gated recurrent encoder."""

import numpy as np
import pytest

from oncode.data import VolumeSeries
from oncode.tensor import Tensor, autodiff_eval, gradient_check, parameter
from oncode.volume_encoder import (
    RNNParams,
    encode_window,
    encode_windows_batch,
    gru_cell,
    init_rnn,
    make_window,
)


def series(times, volumes):
    return VolumeSeries(times=np.asarray(times, float), volumes=np.asarray(volumes, float))


def zero_rnn(d=4):
    def z(a, b):
        return parameter(np.zeros((a, b)))

    return RNNParams(wz=z(2, d), uz=z(d, d), bz=parameter(np.zeros(d)),
                     wr=z(2, d), ur=z(d, d), br=parameter(np.zeros(d)),
                     wh=z(2, d), uh=z(d, d), bh=parameter(np.zeros(d)),
                     wo=z(d, d), bo=parameter(np.zeros(d)))


# -- make_window ---------------------------------------------------------------------


def test_window_filters_by_cutoff():
    s = series([0, 3, 6, 9], [100, 110, 120, 130])
    w = make_window(s, 7.0)
    assert np.array_equal(w.times, [0, 3, 6])


def test_window_cutoff_zero_single_anchor_point():
    s = series([0, 3, 6], [100, 110, 120])
    w = make_window(s, 0.0)
    assert len(w) == 1
    assert w.values[0] == 0.0  # log(v0/v0)


def test_window_cutoff_beyond_series_keeps_all():
    s = series([0, 3, 6], [100, 110, 120])
    w = make_window(s, 100.0)
    assert len(w) == 3


def test_window_values_are_log_relative():
    s = series([0, 3], [100, 150])
    w = make_window(s, 5.0)
    assert w.values[1] == pytest.approx(np.log(1.5))


def test_window_negative_cutoff_rejected():
    s = series([0, 3], [100, 150])
    with pytest.raises(ValueError, match="nonnegative"):
        make_window(s, -1.0)


def test_window_step_inputs_deltas():
    s = series([0, 3, 7], [100, 110, 120])
    w = make_window(s, 10.0)
    steps = w.step_inputs()
    assert np.allclose(steps[:, 0], [0.0, 3.0, 4.0])


# -- encode_window ---------------------------------------------------------------------


def test_zero_weights_give_zero_embedding():
    s = series([0, 2, 5, 7], [100, 90, 85, 80])
    w = make_window(s, 7.0)
    out = encode_window(zero_rnn(), w)
    assert np.array_equal(out.data, np.zeros(4))


def test_output_dimension_independent_of_length():
    rng = np.random.default_rng(0)
    params = init_rnn(8, rng)
    grid = np.arange(0.0, 30.0, 3.0)
    s = series(grid, 100 * np.exp(0.02 * grid))
    short = encode_window(params, make_window(s, 6.0))     # 3 points
    long = encode_window(params, make_window(s, 27.0))     # 10 points
    assert short.shape == long.shape == (8,)


def test_manual_unroll_oracle():
    # independent numpy unroll of the gate equations for a 4-step window
    rng = np.random.default_rng(3)
    params = init_rnn(5, rng)
    s = series([0, 2, 5, 7], [100, 90, 110, 120])
    w = make_window(s, 7.0)
    got = encode_window(params, w).data

    def sig(x):
        return 1.0 / (1.0 + np.exp(-x))

    h = np.zeros(5)
    for x in w.step_inputs():
        z = sig(x @ params.wz.data + h @ params.uz.data + params.bz.data)
        r = sig(x @ params.wr.data + h @ params.ur.data + params.br.data)
        cand = np.tanh(x @ params.wh.data + (r * h) @ params.uh.data + params.bh.data)
        h = (1.0 - z) * h + z * cand
    expected = h @ params.wo.data + params.bo.data
    assert np.allclose(got, expected, atol=1e-12)


def test_determinism():
    rng = np.random.default_rng(1)
    params = init_rnn(6, rng)
    s = series([0, 2, 4], [100, 105, 112])
    w = make_window(s, 4.0)
    a = encode_window(params, w).data
    b = encode_window(params, w).data
    assert np.array_equal(a, b)


def test_sensitivity_to_final_volume():
    rng = np.random.default_rng(2)
    params = init_rnn(6, rng)
    w1 = make_window(series([0, 2, 4], [100, 105, 112]), 4.0)
    w2 = make_window(series([0, 2, 4], [100, 105, 160]), 4.0)
    a = encode_window(params, w1).data
    b = encode_window(params, w2).data
    assert not np.allclose(a, b)


def test_batch_matches_single():
    rng = np.random.default_rng(4)
    params = init_rnn(6, rng)
    windows = [make_window(series([0, 2, 5], [100, 95, 88]), 5.0),
               make_window(series([0, 2, 5], [100, 130, 150]), 5.0)]
    batched = encode_windows_batch(params, windows).data
    singles = np.stack([encode_window(params, w).data for w in windows])
    assert np.allclose(batched, singles, atol=1e-12)


def test_batch_rejects_ragged_lengths():
    rng = np.random.default_rng(4)
    params = init_rnn(4, rng)
    windows = [make_window(series([0, 2], [100, 95]), 2.0),
               make_window(series([0, 2, 5], [100, 95, 88]), 5.0)]
    with pytest.raises(ValueError, match="length"):
        encode_windows_batch(params, windows)


def test_gradient_check_through_encoder():
    rng = np.random.default_rng(5)
    params = init_rnn(3, rng)
    w = make_window(series([0, 2, 5, 7], [100, 92, 85, 90]), 7.0)
    names = ["wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh", "wo", "bo"]

    def f(**kw):
        p = RNNParams(**{n: kw[n] for n in names})
        out = encode_window(p, w)
        return (out * out).sum()

    inputs = {n: getattr(params, n).data for n in names}
    report = gradient_check(f, inputs, h=1e-5, tol=1e-4)
    assert report.ok, str(report)
