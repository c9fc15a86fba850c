"""Conditioned neural ODE: dy/dt = f(y, beta) with beta = [beta1 || beta2].

The embedding supplies the initial state through a linear projection and
conditions the derivative network at every step; a two-layer decoder
maps the state to the log relative tumor volume. Training backpropagates
through the unrolled fixed-step integrator (discretize-then-optimize),
through both encoders, and into the embedding tables.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import HeteroInstance, VolumeSeries
from .errors import NumericalError
from .graph_encoder import encode_beta1, gene_hidden_states
from .integrate import rk4_integrate
from .model import HEAD_DYNAMICS, ModelBundle, NODEParams
from .nn import AdamState, adam_step, mlp_forward, zero_grads
from .tensor import Tensor, as_tensor, concat, stack_rows
from .volume_encoder import encode_window, encode_windows_batch, make_window

log = logging.getLogger(__name__)


@dataclass
class Trajectory:
    """ODE states and decoded volumes on a time grid.

    `values` are on the normalized scale (log of volume over baseline);
    `volumes_mm3` is filled once a baseline volume is known.
    """

    times: np.ndarray
    states: np.ndarray                 # (T, y_dim)
    values: np.ndarray                 # (T,)
    volumes_mm3: np.ndarray | None = None

    def __post_init__(self):
        if not (len(self.times) == len(self.states) == len(self.values)):
            raise ValueError("trajectory arrays must have equal length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trajectory times must be strictly increasing")


def init_state(node: NODEParams, beta: Tensor | np.ndarray) -> Tensor:
    """Linear projection of the embedding to the initial ODE state."""
    beta = as_tensor(beta)
    if beta.shape[-1] != node.init_w.shape[0]:
        raise ValueError(f"embedding width {beta.shape[-1]} != projection input "
                         f"{node.init_w.shape[0]}")
    return beta @ node.init_w + node.init_b


def ode_field(node: NODEParams, beta: Tensor):
    """Derivative closure: the embedding rides along every evaluation.

    The first layer is split as [y || beta] @ W1 = y @ W1[:y_dim] +
    beta @ W1[y_dim:], so the beta half is computed once per trajectory
    instead of at every integrator stage; gradients still reach the full
    W1 through the slices.
    """
    from .nn import MLPParams, _apply_activation

    f = node.f
    y_dim = node.y_dim
    w1_y = f.weights[0][:y_dim]
    w1_beta = f.weights[0][y_dim:]
    act1 = f.activations[0]
    conditioning = beta @ w1_beta + f.biases[0]
    tail = MLPParams(f.weights[1:], f.biases[1:], f.activations[1:]) \
        if len(f.weights) > 1 else None

    def field(_t, y):
        h = _apply_activation(y @ w1_y + conditioning, act1)
        return mlp_forward(tail, h) if tail is not None else h

    return field


def decode_state(node: NODEParams, y: Tensor) -> Tensor:
    """Decoded log relative volume: (y_dim,) -> scalar or (B, y_dim) -> (B,)."""
    out = mlp_forward(node.decoder, y)
    return out.reshape(-1)


def simulate(node: NODEParams, beta: Tensor | np.ndarray, t_grid,
             h: float = 0.25) -> Trajectory:
    """Integrate from init_state(beta) and decode every grid point."""
    beta = as_tensor(beta)
    if beta.data.ndim != 1:
        raise ValueError("simulate takes a single embedding; batching is "
                         "handled by the trainer")
    y0 = init_state(node, beta)
    states = rk4_integrate(ode_field(node, beta), y0, t_grid, h=h)
    values = np.array([decode_state(node, y).data.item() for y in states])
    return Trajectory(
        times=np.asarray(t_grid, dtype=np.float64),
        states=np.stack([y.data for y in states]),
        values=values,
    )


def compute_beta(bundle: ModelBundle, instance: HeteroInstance | None,
                 series: VolumeSeries, window_days: float | None,
                 gene_hidden: Tensor | None = None) -> Tensor:
    """Assemble [beta1 || beta2] (or beta2 alone when the graph encoder
    is ablated) for one experiment."""
    window = make_window(series, window_days if window_days is not None
                         else float(series.times[-1]))
    beta2 = encode_window(bundle.volume, window)
    if not bundle.hp.use_graph_encoder:
        return beta2
    if instance is None:
        raise ValueError("graph encoder enabled but no instance provided")
    norm_adj = bundle.norm_adjacency(instance.gene_graph)
    beta1 = encode_beta1(bundle.encoder, bundle.hp.encoder_config(), instance,
                         norm_adj=norm_adj, gene_hidden=gene_hidden)
    return concat([beta1, beta2])


def predict_trajectory(bundle: ModelBundle, instance: HeteroInstance | None,
                       series: VolumeSeries, window_days: float | None,
                       horizon_grid=None) -> Trajectory:
    """Window -> embedding -> simulate -> un-normalize to mm^3."""
    if bundle.hp.head != HEAD_DYNAMICS or bundle.node is None:
        raise ValueError("bundle has no dynamics head")
    beta = compute_beta(bundle, instance, series, window_days)
    grid = series.times if horizon_grid is None else np.asarray(horizon_grid, float)
    traj = simulate(bundle.node, beta, grid, h=bundle.hp.solver_step)
    traj.volumes_mm3 = np.exp(traj.values) * series.v_initial
    return traj


# -- training -----------------------------------------------------------------------------


@dataclass
class TrainingExample:
    key: tuple[str, str]
    series: VolumeSeries
    instance: HeteroInstance | None = None

    @property
    def model_id(self) -> str:
        return self.key[0]

    @property
    def volumes(self) -> VolumeSeries:
        return self.series


@dataclass
class _GridGroup:
    """A batch sharing one time grid; masks allow shorter (prefix) series."""

    times: np.ndarray
    examples: list[TrainingExample]
    observed: np.ndarray               # (B, T) log relative volumes, 0 where masked
    mask: np.ndarray                   # (B, T) 1.0 where a measurement exists
    windows: list


def _is_prefix(short: np.ndarray, long: np.ndarray) -> bool:
    return len(short) <= len(long) and np.array_equal(short, long[:len(short)])


def _group_by_grid(examples, window_days) -> list[_GridGroup]:
    """One masked group when every series is a prefix of the longest grid
    (the synthetic cohorts' truncation pattern); per-grid groups otherwise."""
    longest = max((ex.series.times for ex in examples), key=len)
    if all(_is_prefix(ex.series.times, longest) for ex in examples):
        buckets = {None: examples}
        grids = {None: longest}
    else:
        buckets, grids = {}, {}
        for ex in examples:
            key = tuple(ex.series.times)
            buckets.setdefault(key, []).append(ex)
            grids[key] = ex.series.times
    out = []
    for key, members in buckets.items():
        grid = np.asarray(grids[key], dtype=np.float64)
        t = len(grid)
        obs = np.zeros((len(members), t))
        mask = np.zeros((len(members), t))
        for b, ex in enumerate(members):
            k = len(ex.series.times)
            obs[b, :k] = np.log(ex.series.volumes / ex.series.v_initial)
            mask[b, :k] = 1.0
        windows = [make_window(ex.series,
                               window_days if window_days is not None
                               else float(ex.series.times[-1]))
                   for ex in members]
        out.append(_GridGroup(times=grid, examples=members, observed=obs,
                              mask=mask, windows=windows))
    return out


def _gene_hidden_cache(bundle: ModelBundle, examples) -> dict[str, Tensor]:
    """One GCN pass per distinct tumor; experiments of a tumor share it."""
    cache: dict[str, Tensor] = {}
    for ex in examples:
        inst = ex.instance
        if inst.model_id not in cache:
            adj = bundle.norm_adjacency(inst.gene_graph)
            cache[inst.model_id] = gene_hidden_states(bundle.encoder, adj,
                                                      inst.gene_features)
    return cache


def _encode_windows_mixed(bundle: ModelBundle, windows) -> Tensor:
    """Batch-encode windows that may differ in length: sub-batch per time
    grid and gather the rows back into the original order."""
    subgroups: dict[tuple, list[int]] = {}
    for i, w in enumerate(windows):
        subgroups.setdefault(tuple(w.times), []).append(i)
    if len(subgroups) == 1:
        return encode_windows_batch(bundle.volume, windows)
    blocks = []
    order = []
    for idx in subgroups.values():
        blocks.append(encode_windows_batch(bundle.volume, [windows[i] for i in idx]))
        order.extend(idx)
    inverse = np.argsort(order)
    return concat(blocks, axis=0)[inverse]


def _group_beta(bundle: ModelBundle, group: _GridGroup,
                hidden: dict[str, Tensor] | None) -> Tensor:
    beta2 = _encode_windows_mixed(bundle, group.windows)
    if not bundle.hp.use_graph_encoder:
        return beta2
    cfg = bundle.hp.encoder_config()
    rows = []
    for ex in group.examples:
        adj = bundle.norm_adjacency(ex.instance.gene_graph)
        rows.append(encode_beta1(bundle.encoder, cfg, ex.instance, norm_adj=adj,
                                 gene_hidden=hidden[ex.instance.model_id]))
    return concat([stack_rows(rows), beta2], axis=1)


def _scan_for_bad_rows(states, group: _GridGroup, epoch: int) -> None:
    for y in states:
        bad = ~np.all(np.isfinite(y.data), axis=1)
        if bad.any():
            key = group.examples[int(np.argmax(bad))].key
            raise NumericalError(
                f"non-finite state at epoch {epoch} for experiment {key}")


def train_dynamics(bundle: ModelBundle, examples, *, epochs: int, lr: float = 3e-3,
                   window_days: float | None = None) -> list[float]:
    """Full-batch training of the dynamics head; returns the loss curve.

    The loss is the mean squared error between decoded and observed log
    relative volumes over every observed timepoint of every experiment;
    the volume encoder sees only the observation window. Deterministic
    given the bundle's initialization.
    """
    if bundle.hp.head != HEAD_DYNAMICS:
        raise ValueError("bundle is not configured with the dynamics head")
    if not examples:
        raise ValueError("training cohort is empty")
    groups = _group_by_grid(examples, window_days)
    named = bundle.named_params()
    opt = AdamState(lr=lr)
    h = bundle.hp.solver_step
    curve: list[float] = []
    n_points = sum(int(g.mask.sum()) for g in groups)
    for epoch in range(epochs):
        zero_grads(named)
        hidden = _gene_hidden_cache(bundle, examples) if bundle.hp.use_graph_encoder \
            else None
        total = None
        for group in groups:
            beta = _group_beta(bundle, group, hidden)
            y0 = init_state(bundle.node, beta)
            states = rk4_integrate(ode_field(bundle.node, beta), y0, group.times,
                                   h=h, check_finite=False)
            for i, y in enumerate(states):
                pred = decode_state(bundle.node, y)
                diff = (pred - group.observed[:, i]) * group.mask[:, i]
                sq = (diff * diff).sum()
                total = sq if total is None else total + sq
            if not np.isfinite(total.data.item()):
                _scan_for_bad_rows(states, group, epoch)
                raise NumericalError(f"non-finite loss at epoch {epoch}")
        loss = total * (1.0 / n_points)
        loss.backward()
        adam_step(opt, named)
        curve.append(loss.data.item())
    return curve
