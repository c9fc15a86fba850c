"""Conditioned NODE: initial state, simulation oracles, training."""

import numpy as np
import pytest
from scipy.linalg import expm

from oncode.data import (
    PDXExperiment,
    VolumeSeries,
    assemble_hetero_instance,
    load_bipartite_edges,
    load_expression,
    load_gene_graph,
)
from oncode.dynamics import (
    TrainingExample,
    Trajectory,
    init_state,
    predict_trajectory,
    simulate,
    train_dynamics,
)
from oncode.errors import NumericalError
from oncode.model import (
    ModelHyperparams,
    NODEParams,
    Vocab,
    build_bundle,
    build_vocab,
    bundle_from_tensors,
)
from oncode.nn import MLPParams
from oncode.tensor import Tensor, gradient_check, parameter


def make_node(beta_dim, y_dim=2, seed=0):
    rng = np.random.default_rng(seed)
    from oncode.model import init_node

    hp = ModelHyperparams(hidden_dim=4, volume_hidden=beta_dim, f_hidden=(8, 8),
                          decoder_hidden=4, use_graph_encoder=False, y_dim=y_dim)
    return init_node(hp, rng)


def linear_node(a_matrix, beta_dim):
    """f(y, beta) = A y, ignoring beta: single identity layer."""
    y_dim = a_matrix.shape[0]
    w = np.zeros((y_dim + beta_dim, y_dim))
    w[:y_dim, :] = a_matrix.T
    return NODEParams(
        f=MLPParams([parameter(w)], [parameter(np.zeros(y_dim))], ["identity"]),
        init_w=parameter(np.vstack([np.eye(y_dim),
                                    np.zeros((beta_dim - y_dim, y_dim))])),
        init_b=parameter(np.zeros(y_dim)),
        decoder=MLPParams([parameter(np.zeros((y_dim, 3))),
                           parameter(np.zeros((3, 1)))],
                          [parameter(np.zeros(3)), parameter(np.zeros(1))],
                          ["tanh", "identity"]),
    )


# -- init_state ------------------------------------------------------------------------


def test_init_state_zero_case():
    node = make_node(beta_dim=5)
    node.init_b.data[:] = 0.0
    y0 = init_state(node, Tensor(np.zeros(5)))
    assert np.array_equal(y0.data, np.zeros(2))


def test_init_state_identity_projection():
    node = linear_node(np.zeros((2, 2)), beta_dim=5)
    beta = np.array([0.3, -0.7, 9.0, 9.0, 9.0])
    y0 = init_state(node, Tensor(beta))
    assert np.allclose(y0.data, beta[:2])


def test_init_state_matches_matvec_oracle():
    node = make_node(beta_dim=6)
    rng = np.random.default_rng(1)
    beta = rng.normal(size=6)
    y0 = init_state(node, Tensor(beta))
    assert np.allclose(y0.data, beta @ node.init_w.data + node.init_b.data,
                       atol=1e-12)


def test_init_state_dimension_mismatch():
    node = make_node(beta_dim=6)
    with pytest.raises(ValueError, match="width"):
        init_state(node, Tensor(np.zeros(4)))


# -- simulate ---------------------------------------------------------------------------


def test_simulate_zero_field_constant():
    node = make_node(beta_dim=4)
    for w in node.f.weights:
        w.data[:] = 0.0
    for b in node.f.biases:
        b.data[:] = 0.0
    grid = np.array([0.0, 1.0, 5.0, 9.0])
    traj = simulate(node, Tensor(np.ones(4)), grid)
    assert np.allclose(traj.states, traj.states[0])
    assert np.allclose(traj.values, traj.values[0])


def test_simulate_linear_field_matches_matrix_exponential():
    a = np.array([[-0.3, 0.7], [-0.7, -0.3]])
    node = linear_node(a, beta_dim=4)
    beta = np.array([1.0, -0.5, 0.0, 0.0])  # y0 = (1, -0.5)
    grid = np.array([0.0, 0.5, 1.0, 2.0, 4.0])
    traj = simulate(node, Tensor(beta), grid, h=0.01)
    y0 = beta[:2]
    for t, y in zip(grid, traj.states):
        assert np.allclose(y, expm(a * t) @ y0, atol=1e-8), t


def test_simulate_distinct_betas_distinct_trajectories():
    node = make_node(beta_dim=4, seed=3)
    grid = np.array([0.0, 2.0, 4.0])
    t1 = simulate(node, Tensor(np.array([1.0, 0, 0, 0])), grid)
    t2 = simulate(node, Tensor(np.array([0.0, 1.0, 0, 0])), grid)
    assert not np.allclose(t1.states[-1], t2.states[-1])


def test_conditioning_beta_enters_every_step():
    # zero the init projection: y0 identical, trajectories still differ
    node = make_node(beta_dim=4, seed=4)
    node.init_w.data[:] = 0.0
    node.init_b.data[:] = 0.0
    grid = np.array([0.0, 2.0, 4.0])
    t1 = simulate(node, Tensor(np.array([1.0, 0, 0, 0])), grid)
    t2 = simulate(node, Tensor(np.array([0.0, 1.0, 0, 0])), grid)
    assert np.allclose(t1.states[0], t2.states[0])
    assert not np.allclose(t1.states[-1], t2.states[-1])


def test_trajectory_validation():
    with pytest.raises(ValueError, match="equal length"):
        Trajectory(times=np.array([0.0, 1.0]), states=np.zeros((3, 2)),
                   values=np.zeros(3))


# -- tiny world fixtures for end-to-end training -------------------------------------------


@pytest.fixture
def tiny_world(tmp_path):
    (tmp_path / "gg.tsv").write_text("g1\tg2\t0.9\ng2\tg3\t0.8\n")
    (tmp_path / "dg.tsv").write_text("dA\tg1\ndB\tg3\n")
    (tmp_path / "sg.tsv").write_text("X\tg2\nX\tg3\n")
    (tmp_path / "e.csv").write_text("model_id,g1,g2,g3\nM1,1,4,2\nM2,3,1,5\n")
    gg = load_gene_graph(tmp_path / "gg.tsv")
    dg = load_bipartite_edges(tmp_path / "dg.tsv", "drug-gene")
    sg = load_bipartite_edges(tmp_path / "sg.tsv", "disease-gene")
    expr = load_expression(tmp_path / "e.csv", gg.genes)
    return gg, dg, sg, expr


def example_from(world, model="M1", treatment=("dA",), times=None, volumes=None):
    gg, dg, sg, expr = world
    times = [0.0, 2.0, 5.0, 7.0, 10.0] if times is None else times
    volumes = [100.0, 120.0, 150.0, 170.0, 200.0] if volumes is None else volumes
    exp = PDXExperiment(model_id=model, disease_id="X", treatment=treatment,
                        volumes=VolumeSeries(times=times, volumes=volumes))
    inst = assemble_hetero_instance(exp, gg, dg, sg, expr)
    return TrainingExample(key=exp.key, series=exp.volumes, instance=inst)


def tiny_bundle(world, seed=0, use_graph=True):
    gg, dg, sg, _ = world
    hp = ModelHyperparams(hidden_dim=3, gcn_layers=2, mp_steps=1, volume_hidden=3,
                          f_hidden=(4,), decoder_hidden=3, solver_step=0.5,
                          use_graph_encoder=use_graph)
    vocab = Vocab(genes=gg.genes, drugs=dg.left_ids, diseases=sg.left_ids)
    return build_bundle(hp, vocab, seed=seed)


# -- predict_trajectory ----------------------------------------------------------------------


def test_predict_constant_decoder_returns_baseline(tiny_world):
    bundle = tiny_bundle(tiny_world)
    for w in bundle.node.decoder.weights:
        w.data[:] = 0.0
    for b in bundle.node.decoder.biases:
        b.data[:] = 0.0
    ex = example_from(tiny_world)
    traj = predict_trajectory(bundle, ex.instance, ex.series, window_days=7.0)
    assert np.allclose(traj.volumes_mm3, ex.series.v_initial)


def test_predict_window_length_invariance_of_shape(tiny_world):
    bundle = tiny_bundle(tiny_world)
    ex = example_from(tiny_world)
    t_short = predict_trajectory(bundle, ex.instance, ex.series, window_days=2.0)
    t_long = predict_trajectory(bundle, ex.instance, ex.series, window_days=10.0)
    assert t_short.values.shape == t_long.values.shape
    assert np.array_equal(t_short.times, ex.series.times)


# -- training ------------------------------------------------------------------------------


def test_train_zero_epochs_noop(tiny_world):
    bundle = tiny_bundle(tiny_world)
    before = {n: t.data.copy() for n, t in bundle.named_params().items()}
    curve = train_dynamics(bundle, [example_from(tiny_world)], epochs=0)
    assert curve == []
    for n, t in bundle.named_params().items():
        assert np.array_equal(t.data, before[n])


def test_train_overfits_single_instance(tiny_world):
    bundle = tiny_bundle(tiny_world, seed=2, use_graph=False)
    times = np.array([0.0, 2.0, 5.0, 7.0, 10.0, 12.0])
    vols = 120.0 * np.exp(0.08 * times) * np.exp(-0.03 * times ** 0.5)
    ex = example_from(tiny_world, times=times, volumes=vols)
    curve = train_dynamics(bundle, [ex], epochs=500, lr=1e-2, window_days=None)
    assert curve[-1] < 1e-3
    traj = predict_trajectory(bundle, ex.instance, ex.series, window_days=None)
    assert abs(traj.volumes_mm3[0] - ex.series.v_initial) / ex.series.v_initial < 0.01


def test_train_deterministic(tiny_world):
    def run():
        bundle = tiny_bundle(tiny_world, seed=5)
        examples = [example_from(tiny_world),
                    example_from(tiny_world, model="M2", treatment=("dB",))]
        curve = train_dynamics(bundle, examples, epochs=8, lr=5e-3, window_days=5.0)
        return curve, {n: t.data.copy() for n, t in bundle.named_params().items()}

    c1, w1 = run()
    c2, w2 = run()
    assert c1 == c2
    for n in w1:
        assert np.array_equal(w1[n], w2[n])


def test_train_descends(tiny_world):
    bundle = tiny_bundle(tiny_world, seed=1)
    examples = [example_from(tiny_world),
                example_from(tiny_world, model="M2", treatment=("dB",),
                             volumes=[100.0, 90.0, 80.0, 75.0, 70.0])]
    curve = train_dynamics(bundle, examples, epochs=60, lr=5e-3, window_days=None)
    assert curve[-1] < curve[0]


def test_train_empty_cohort_rejected(tiny_world):
    bundle = tiny_bundle(tiny_world)
    with pytest.raises(ValueError, match="empty"):
        train_dynamics(bundle, [], epochs=1)


def test_train_nan_reports_epoch_and_instance(tiny_world):
    bundle = tiny_bundle(tiny_world, use_graph=False)
    ex = example_from(tiny_world)
    # poison the decoder so the loss is immediately non-finite
    bundle.node.decoder.weights[1].data[:] = np.inf
    with np.errstate(invalid="ignore"), pytest.raises(NumericalError, match=r"epoch 0"):
        train_dynamics(bundle, [ex], epochs=1)


def test_train_mixed_grids_masking(tiny_world):
    """Truncated (prefix) series batch together with masked loss."""
    long_t = [0.0, 2.0, 5.0, 7.0, 10.0]
    short_t = [0.0, 2.0, 5.0]
    bundle = tiny_bundle(tiny_world, seed=3)
    examples = [
        example_from(tiny_world, times=long_t,
                     volumes=[100.0, 110, 130, 150, 180]),
        example_from(tiny_world, model="M2", treatment=("dB",), times=short_t,
                     volumes=[200.0, 190, 185]),
    ]
    curve = train_dynamics(bundle, examples, epochs=5, lr=5e-3, window_days=None)
    assert len(curve) == 5
    assert np.isfinite(curve).all()


def test_grid_refinement_stability(tiny_world):
    """Doubling internal substeps barely changes a trained model's output."""
    bundle = tiny_bundle(tiny_world, seed=4, use_graph=False)
    ex = example_from(tiny_world)
    train_dynamics(bundle, [ex], epochs=40, lr=5e-3, window_days=None)
    from oncode.dynamics import compute_beta

    beta = compute_beta(bundle, ex.instance, ex.series, None)
    coarse = simulate(bundle.node, beta, ex.series.times, h=0.5)
    fine = simulate(bundle.node, beta, ex.series.times, h=0.25)
    rel = np.max(np.abs(coarse.values - fine.values)
                 / np.maximum(1e-9, np.abs(fine.values)))
    assert rel < 1e-3


def test_integrator_convergence_order_through_node():
    """Richardson step-halving on the learned field stays ~4th order."""
    node = make_node(beta_dim=3, seed=6)
    beta = Tensor(np.array([0.4, -0.2, 0.1]))
    grid = np.array([0.0, 4.0])
    ref = simulate(node, beta, grid, h=0.01).states[-1]
    e1 = np.max(np.abs(simulate(node, beta, grid, h=0.4).states[-1] - ref))
    e2 = np.max(np.abs(simulate(node, beta, grid, h=0.2).states[-1] - ref))
    order = np.log2(e1 / e2)
    assert 3.5 <= order <= 4.5, f"empirical order {order:.2f}"


# -- full composite gradient check -------------------------------------------------------------


def test_full_model_gradient_check(tiny_world):
    """Encoder + volume encoder + NODE training loss vs finite differences."""
    bundle = tiny_bundle(tiny_world, seed=8)
    ex = example_from(tiny_world, treatment=("dA", "dB"),
                      times=[0.0, 2.0, 5.0], volumes=[100.0, 95.0, 115.0])
    hp, vocab = bundle.hp, bundle.vocab
    inputs = {n: t.data.copy() for n, t in bundle.named_params().items()}

    def loss_fn(**leaves):
        b = bundle_from_tensors(hp, vocab, leaves)
        from oncode.dynamics import compute_beta, decode_state, init_state, ode_field
        from oncode.integrate import rk4_integrate

        beta = compute_beta(b, ex.instance, ex.series, window_days=None)
        y0 = init_state(b.node, beta)
        states = rk4_integrate(ode_field(b.node, beta), y0, ex.series.times, h=0.5)
        obs = np.log(ex.series.volumes / ex.series.v_initial)
        total = None
        for y, target in zip(states, obs):
            diff = decode_state(b.node, y) - target
            sq = (diff * diff).sum()
            total = sq if total is None else total + sq
        return total * (1.0 / len(obs))

    report = gradient_check(loss_fn, inputs, h=1e-5, tol=1e-4)
    assert report.ok, str(report)
