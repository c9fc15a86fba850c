"""Config plumbing, cohort IO, command orchestration, fold isolation."""

import json
import os

import numpy as np
import pytest

from oncode import harness
from oncode.checkpoint import load_model
from oncode.errors import ConfigError, DataError
from oncode.harness import (
    cmd_evaluate,
    cmd_fit_tgi,
    cmd_pretrain,
    cmd_simulate,
    cmd_train,
    config_hash,
    load_cohort_dir,
    load_config,
    parallel_map,
)

TINY = {
    "seed": 5,
    "synth": {"genes": 15, "tumors": 10, "drugs": 4, "diseases": 2,
              "experiments": 24},
    "model": {"hidden_dim": 4, "volume_hidden": 4, "f_hidden": [8],
              "decoder_hidden": 4, "solver_step": 0.5},
    "train": {"epochs": 4, "lr": 0.01, "folds": 3, "fold": 0,
              "window_days": 7.0},
    "evaluate": {"windows": [7.0], "write_trajectories": True},
    "pretrain": {"epochs": 2, "lr": 0.01},
}


def tiny_config(tmp_path, **extra):
    cfg = json.loads(json.dumps(TINY))
    cfg["out_dir"] = str(tmp_path / "out")
    for key, value in extra.items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    return load_config(None, cfg)


# -- config ------------------------------------------------------------------------------


def test_seed_is_mandatory():
    with pytest.raises(ConfigError, match="seed"):
        load_config(None, {"out_dir": "x"})


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"seed": 3, "train": {"epochs": 77}}))
    cfg = load_config(p, {"train": {"lr": 0.5}})
    assert cfg["seed"] == 3
    assert cfg["train"]["epochs"] == 77
    assert cfg["train"]["lr"] == 0.5
    assert cfg["train"]["folds"] == 5  # default survives the merge


def test_bad_config_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(p)
    with pytest.raises(ConfigError, match="window"):
        load_config(None, {"seed": 1, "train": {"window_days": -3}})


def test_config_hash_stable_and_sensitive():
    a = load_config(None, {"seed": 1})
    b = load_config(None, {"seed": 1})
    c = load_config(None, {"seed": 2})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)


def test_parallel_map_respects_order(monkeypatch):
    monkeypatch.setenv(harness.THREADS_ENV, "4")
    out = parallel_map(lambda x: x * x, range(20))
    assert out == [x * x for x in range(20)]
    monkeypatch.setenv(harness.THREADS_ENV, "not-a-number")
    assert harness.thread_count() == 1


# -- cohort io ------------------------------------------------------------------------------


def test_simulate_then_load_cohort(tmp_path):
    cfg = tiny_config(tmp_path)
    paths = cmd_simulate(cfg)
    cohort = load_cohort_dir(os.path.dirname(paths["volumes"]))
    assert len(cohort.experiments) == 24
    assert cohort.expression.genes == cohort.gene_graph.genes
    for exp in cohort.experiments:
        assert exp.disease_id in cohort.disease_gene.left_ids


def test_load_cohort_missing_file(tmp_path):
    cfg = tiny_config(tmp_path)
    paths = cmd_simulate(cfg)
    os.remove(paths["models"])
    with pytest.raises(DataError, match="models.csv"):
        load_cohort_dir(os.path.dirname(paths["volumes"]))


def test_simulate_deterministic(tmp_path):
    cfg = tiny_config(tmp_path)
    paths1 = cmd_simulate(cfg, out_dir=str(tmp_path / "a"))
    paths2 = cmd_simulate(cfg, out_dir=str(tmp_path / "b"))
    for key in paths1:
        assert open(paths1[key], "rb").read() == open(paths2[key], "rb").read()


# -- training commands ------------------------------------------------------------------------


def test_train_writes_checkpoint_and_curve(tmp_path):
    cfg = tiny_config(tmp_path)
    ckpt = cmd_train(cfg)
    assert os.path.exists(ckpt)
    bundle, extra = load_model(ckpt)
    assert extra["seed"] == 5
    curve = open(os.path.join(cfg["out_dir"], "train_loss.csv")).read().splitlines()
    assert curve[0] == "epoch,loss"
    assert len(curve) == 1 + cfg["train"]["epochs"]


def test_train_requires_pretrained_checkpoint_when_requested(tmp_path):
    cfg = tiny_config(tmp_path, model={"use_pretraining": True})
    with pytest.raises(ConfigError, match="pretrained_checkpoint"):
        cmd_train(cfg)


def test_pretrain_then_train(tmp_path):
    cfg = tiny_config(tmp_path)
    trunk = cmd_pretrain(cfg)
    cfg2 = tiny_config(tmp_path, model={"use_pretraining": True},
                       train={"pretrained_checkpoint": trunk})
    ckpt = cmd_train(cfg2)
    bundle, _ = load_model(ckpt)
    # trunk weights must differ from the seeded initialization
    from oncode.model import build_bundle, build_vocab

    cohort = harness.resolve_cohort(cfg2)
    vocab = build_vocab(cohort.gene_graph, cohort.drug_gene, cohort.disease_gene,
                        cohort.experiments)
    fresh = build_bundle(bundle.hp, vocab, seed=cfg2["seed"])
    same = np.array_equal(fresh.encoder.gcn[0].weight.data,
                          bundle.encoder.gcn[0].weight.data)
    assert not same


def test_pretrain_zero_epochs_equals_initialization(tmp_path):
    cfg = tiny_config(tmp_path, pretrain={"epochs": 0})
    trunk_path = cmd_pretrain(cfg)
    from oncode.checkpoint import load_vgae_tensors
    from oncode.graph_encoder import init_vgae

    _, tensors = load_vgae_tensors(trunk_path)
    rng = np.random.default_rng(cfg["seed"])
    fresh = init_vgae(cfg["model"]["hidden_dim"], rng,
                      n_trunk_layers=cfg["model"].get("gcn_layers", 2))
    for name, t in fresh.named().items():
        assert np.array_equal(tensors[name], t.data), name


def test_classifier_head_training(tmp_path):
    cfg = tiny_config(tmp_path, model={"head": "classifier"},
                      train={"epochs": 6})
    ckpt = cmd_train(cfg)
    bundle, _ = load_model(ckpt)
    assert bundle.classifier is not None
    assert bundle.node is None


def test_ablation_checkpoint_has_no_encoder_params(tmp_path):
    cfg = tiny_config(tmp_path, model={"use_graph_encoder": False})
    ckpt = cmd_train(cfg)
    bundle, _ = load_model(ckpt)
    names = bundle.named_params()
    assert not any(n.startswith("enc.") for n in names)


def test_train_determinism_byte_identical_checkpoints(tmp_path):
    cfg1 = tiny_config(tmp_path, out_dir=str(tmp_path / "r1"))
    cfg2 = tiny_config(tmp_path, out_dir=str(tmp_path / "r2"))
    cfg1["out_dir"] = str(tmp_path / "r1")
    cfg2["out_dir"] = str(tmp_path / "r2")
    p1 = cmd_train(cfg1)
    p2 = cmd_train(cfg2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


# -- evaluation ------------------------------------------------------------------------------


def test_evaluate_report_schema(tmp_path):
    cfg = tiny_config(tmp_path)
    ckpt = cmd_train(cfg)
    report = cmd_evaluate(cfg, ckpt)
    on_disk = json.load(open(os.path.join(cfg["out_dir"], "report.json")))
    assert on_disk == report
    assert report["schema_version"] == 1
    assert report["split"] == "test"
    prov = report["provenance"]
    assert prov["code_version"] and prov["config_hash"] and prov["seed"] == 5
    window = report["windows"][0]
    assert set(window["metrics"]) == {"r2", "spearman", "bal_acc", "auroc",
                                      "f1", "counts"}
    # trajectory CSVs are plot-ready with the four documented columns
    traj_dir = os.path.join(cfg["out_dir"], "trajectories_w7")
    files = os.listdir(traj_dir)
    assert files
    header = open(os.path.join(traj_dir, files[0])).readline().strip()
    assert header == "time,observed,predicted,tgi-predicted"


def test_evaluate_ablation_report_omits_graph_provenance(tmp_path):
    cfg = tiny_config(tmp_path, model={"use_graph_encoder": False})
    ckpt = cmd_train(cfg)
    report = cmd_evaluate(cfg, ckpt)
    assert "graph_encoder" not in report["provenance"]


def test_evaluate_byte_identical_reports(tmp_path):
    cfg = tiny_config(tmp_path)
    ckpt = cmd_train(cfg)
    cmd_evaluate(cfg, ckpt, out_dir=str(tmp_path / "e1"))
    cmd_evaluate(cfg, ckpt, out_dir=str(tmp_path / "e2"))
    a = open(tmp_path / "e1" / "report.json", "rb").read()
    b = open(tmp_path / "e2" / "report.json", "rb").read()
    assert a == b


def test_fit_tgi_outputs(tmp_path):
    cfg = tiny_config(tmp_path, train={"window_days": None})
    payload = cmd_fit_tgi(cfg)
    fits_csv = open(os.path.join(cfg["out_dir"], "tgi_fits.csv")).read().splitlines()
    assert fits_csv[0] == "model_id,treatment,k_g,k_d,lambda,rss,converged"
    assert len(fits_csv) == 1 + payload["n_fit"]
    assert payload["metrics"]["r2"] is not None


def test_fold_isolation_poisoned_test_fold(tmp_path):
    """Training must never read test-fold volumes."""
    cfg = tiny_config(tmp_path)
    cohort = harness.resolve_cohort(cfg)
    examples = harness.build_examples(cohort)
    train_ex, test_ex = harness.split_examples(examples, cfg)
    assert test_ex, "fixture must have a nonempty test fold"

    from oncode.model import build_bundle, build_vocab
    from oncode.dynamics import train_dynamics

    def run(poison):
        vocab = build_vocab(cohort.gene_graph, cohort.drug_gene,
                            cohort.disease_gene, cohort.experiments)
        bundle = build_bundle(harness.hyperparams_from_config(cfg), vocab,
                              seed=cfg["seed"])
        if poison:
            for ex in test_ex:
                ex.series.volumes = ex.series.volumes * 1000.0
        curve = train_dynamics(bundle, train_ex, epochs=3,
                               lr=cfg["train"]["lr"],
                               window_days=cfg["train"]["window_days"])
        if poison:
            for ex in test_ex:
                ex.series.volumes = ex.series.volumes / 1000.0
        return curve

    assert run(poison=False) == run(poison=True)
