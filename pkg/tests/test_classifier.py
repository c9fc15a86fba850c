"""Responder classifier head on the graph embedding."""

import numpy as np
import pytest

from oncode.classifier import classifier_cross_entropy, classifier_probs, train_classifier
from oncode.data import (
    PDXExperiment,
    VolumeSeries,
    assemble_hetero_instance,
    load_bipartite_edges,
    load_expression,
    load_gene_graph,
)
from oncode.dynamics import TrainingExample
from oncode.model import ModelHyperparams, Vocab, build_bundle


@pytest.fixture
def world(tmp_path):
    (tmp_path / "gg.tsv").write_text("g1\tg2\t0.9\ng2\tg3\t0.8\n")
    (tmp_path / "dg.tsv").write_text("dA\tg1\ndB\tg3\n")
    (tmp_path / "sg.tsv").write_text("X\tg2\nX\tg3\n")
    (tmp_path / "e.csv").write_text(
        "model_id,g1,g2,g3\nM1,1,4,2\nM2,3,1,5\nM3,0.2,2,9\n")
    gg = load_gene_graph(tmp_path / "gg.tsv")
    dg = load_bipartite_edges(tmp_path / "dg.tsv", "drug-gene")
    sg = load_bipartite_edges(tmp_path / "sg.tsv", "disease-gene")
    expr = load_expression(tmp_path / "e.csv", gg.genes)
    return gg, dg, sg, expr


def examples_and_labels(world):
    gg, dg, sg, expr = world
    combos = [("M1", ("dA",)), ("M2", ("dB",)), ("M3", ("dA", "dB")), ("M1", ("dB",))]
    examples = []
    for model, treatment in combos:
        exp = PDXExperiment(model_id=model, disease_id="X", treatment=treatment,
                            volumes=VolumeSeries(times=[0.0, 2.0],
                                                 volumes=[100.0, 120.0]))
        inst = assemble_hetero_instance(exp, gg, dg, sg, expr)
        examples.append(TrainingExample(key=exp.key, series=exp.volumes,
                                        instance=inst))
    labels = [True, False, True, False]
    return examples, labels


def clf_bundle(world, seed=0):
    gg, dg, sg, _ = world
    hp = ModelHyperparams(hidden_dim=3, gcn_layers=2, head="classifier")
    vocab = Vocab(genes=gg.genes, drugs=dg.left_ids, diseases=sg.left_ids)
    return build_bundle(hp, vocab, seed=seed)


def test_training_reduces_cross_entropy(world):
    bundle = clf_bundle(world)
    examples, labels = examples_and_labels(world)
    curve = train_classifier(bundle, examples, labels, epochs=120, lr=1e-2)
    assert curve[-1] < curve[0]
    assert classifier_cross_entropy(bundle, examples, labels) == \
        pytest.approx(curve[-1], rel=0.2)


def test_probabilities_in_unit_interval(world):
    bundle = clf_bundle(world, seed=1)
    examples, labels = examples_and_labels(world)
    probs = classifier_probs(bundle, examples)
    assert probs.shape == (4,)
    assert np.all((probs > 0) & (probs < 1))


def test_training_deterministic(world):
    examples, labels = examples_and_labels(world)

    def run():
        bundle = clf_bundle(world, seed=2)
        curve = train_classifier(bundle, examples, labels, epochs=10, lr=5e-3)
        return curve, {n: t.data.copy() for n, t in bundle.named_params().items()}

    c1, w1 = run()
    c2, w2 = run()
    assert c1 == c2
    for n in w1:
        assert np.array_equal(w1[n], w2[n])


def test_label_count_validated(world):
    bundle = clf_bundle(world)
    examples, labels = examples_and_labels(world)
    with pytest.raises(ValueError, match="label"):
        train_classifier(bundle, examples, labels[:-1], epochs=1)


def test_wrong_head_rejected(world):
    gg, dg, sg, _ = world
    hp = ModelHyperparams(hidden_dim=3, volume_hidden=3, f_hidden=(4,),
                          decoder_hidden=3)
    vocab = Vocab(genes=gg.genes, drugs=dg.left_ids, diseases=sg.left_ids)
    bundle = build_bundle(hp, vocab, seed=0)
    examples, labels = examples_and_labels(world)
    with pytest.raises(ValueError, match="classifier"):
        train_classifier(bundle, examples, labels, epochs=1)
    with pytest.raises(ValueError, match="classifier"):
        classifier_probs(bundle, examples)


def test_classifier_head_requires_graph_encoder():
    from oncode.errors import ConfigError

    with pytest.raises(ConfigError, match="graph"):
        ModelHyperparams(head="classifier", use_graph_encoder=False)
