"""Run orchestration shared by the CLI and the acceptance suite.

One JSON config drives everything; command-line flags override config
keys. Every artifact (checkpoints, reports, CSVs) is a deterministic
function of (config, seed).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .checkpoint import load_model, load_vgae_tensors, save_model, save_vgae
from .classifier import classifier_cross_entropy, classifier_probs, train_classifier
from .data import (
    BipartiteEdges,
    ExpressionMatrix,
    GeneGraph,
    PDXExperiment,
    assemble_hetero_instance,
    load_bipartite_edges,
    load_expression,
    load_gene_graph,
    load_volumes,
)
from .dynamics import TrainingExample, predict_trajectory, train_dynamics
from .errors import ConfigError, DataError
from .graph_encoder import gene_input_features, init_encoder, init_vgae, pretrain_vgae
from .model import (
    HEAD_CLASSIFIER,
    HEAD_DYNAMICS,
    ModelBundle,
    ModelHyperparams,
    build_bundle,
    build_vocab,
    load_pretrained_trunk,
)
from .response import (
    MetricsReport,
    best_response,
    binarize,
    categorize,
    classification_metrics,
    grouped_kfold,
    regression_metrics,
    response_label,
)
from .synth import COHORT_FILES, SynthConfig, export_cohort, generate_cohort, load_models
from .tgi import save_fits_csv, tgi_evaluate

log = logging.getLogger(__name__)

THREADS_ENV = "ONCODE_THREADS"

DEFAULT_CONFIG = {
    "seed": None,
    "out_dir": "out",
    "data": {"dir": None},
    "synth": {
        "genes": 60, "tumors": 40, "drugs": 8, "diseases": 3,
        "experiments": 200, "noise_sigma": 0.1, "signal_strength": 1.0,
        "cadence_days": [2, 3], "horizon_days": 65.0,
    },
    "model": {
        "hidden_dim": 32, "gcn_layers": 2, "mp_steps": 1, "volume_hidden": 16,
        "y_dim": 2, "f_hidden": [32, 32], "decoder_hidden": 16,
        "solver_step": 0.25, "use_graph_encoder": True, "use_pretraining": False,
        "head": "dynamics",
    },
    "train": {
        "epochs": 300, "lr": 3e-3, "folds": 5, "fold": 0,
        "window_days": 14.0, "pretrained_checkpoint": None,
    },
    "pretrain": {"epochs": 50, "lr": 1e-2},
    "evaluate": {"windows": [7.0, 14.0, 21.0, 28.0], "split": "test",
                 "with_tgi": True, "write_trajectories": True},
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults <- config file <- overrides; the seed is mandatory."""
    config = dict(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        config = _deep_merge(config, file_cfg)
    if overrides:
        config = _deep_merge(config, overrides)
    if config.get("seed") is None:
        raise ConfigError("a seed is mandatory (config key 'seed' or --seed)")
    config["seed"] = int(config["seed"])
    window = config["train"].get("window_days")
    if window is not None and window <= 0:
        raise ConfigError("train.window_days must be positive (or null for the "
                          "full series)")
    return config


def config_hash(config: dict) -> str:
    """Hash of everything that shapes results; output location excluded."""
    stripped = {k: v for k, v in config.items() if k != "out_dir"}
    canonical = json.dumps(stripped, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring invalid %s=%r", THREADS_ENV, raw)
        return 1


def parallel_map(fn, items):
    """Order-preserving map over a worker pool of ONCODE_THREADS threads."""
    n = thread_count()
    items = list(items)
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# -- cohort assembly -------------------------------------------------------------------


@dataclass
class Cohort:
    gene_graph: GeneGraph
    drug_gene: BipartiteEdges
    disease_gene: BipartiteEdges
    expression: ExpressionMatrix
    experiments: list[PDXExperiment]


def load_cohort_dir(directory) -> Cohort:
    """Load the six cohort files from one directory."""
    paths = {k: os.path.join(directory, v) for k, v in COHORT_FILES.items()}
    for key, p in paths.items():
        if not os.path.exists(p):
            raise DataError(f"missing cohort file '{os.path.basename(p)}'", path=p)
    with open(paths["expression"], "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
    panel_genes = [g for g in header.split(",")[1:] if g]
    gene_graph = load_gene_graph(paths["gene_graph"], vocabulary=panel_genes)
    drug_gene = load_bipartite_edges(paths["drug_gene"], "drug-gene")
    disease_gene = load_bipartite_edges(paths["disease_gene"], "disease-gene")
    expression = load_expression(paths["expression"], gene_graph.genes)
    volumes = load_volumes(paths["volumes"])
    disease_of = load_models(paths["models"])
    experiments = []
    for (model_id, treatment) in sorted(volumes):
        if model_id not in disease_of:
            raise DataError(f"model '{model_id}' missing from models.csv",
                            path=paths["models"])
        experiments.append(PDXExperiment(
            model_id=model_id, disease_id=disease_of[model_id],
            treatment=tuple(treatment.split("+")), volumes=volumes[(model_id, treatment)]))
    return Cohort(gene_graph=gene_graph, drug_gene=drug_gene,
                  disease_gene=disease_gene, expression=expression,
                  experiments=experiments)


def resolve_cohort(config: dict) -> Cohort:
    """Cohort from data.dir when set, else generated from the synth section."""
    data_dir = config.get("data", {}).get("dir")
    if data_dir:
        return load_cohort_dir(data_dir)
    synth_cfg = SynthConfig(seed=config["seed"], **config["synth"])
    sc = generate_cohort(synth_cfg)
    return Cohort(gene_graph=sc.gene_graph, drug_gene=sc.drug_gene,
                  disease_gene=sc.disease_gene, expression=sc.expression,
                  experiments=sc.experiments)


def build_examples(cohort: Cohort, with_instances: bool = True
                   ) -> list[TrainingExample]:
    out = []
    for exp in cohort.experiments:
        instance = None
        if with_instances:
            instance = assemble_hetero_instance(
                exp, cohort.gene_graph, cohort.drug_gene, cohort.disease_gene,
                cohort.expression)
        out.append(TrainingExample(key=exp.key, series=exp.volumes,
                                   instance=instance))
    return out


def hyperparams_from_config(config: dict) -> ModelHyperparams:
    m = dict(config["model"])
    m.pop("use_pretraining", None)
    return ModelHyperparams(**m)


def split_examples(examples, config: dict):
    """(train, test) examples per the fold settings; fold=None trains on all."""
    fold = config["train"].get("fold")
    if fold is None:
        return list(examples), []
    split = grouped_kfold(examples, k=int(config["train"]["folds"]),
                          seed=config["seed"])
    train_keys, test_keys = split.train_test(int(fold))
    train_set = set(train_keys)
    test_set = set(test_keys)
    return ([ex for ex in examples if ex.key in train_set],
            [ex for ex in examples if ex.key in test_set])


def provenance_block(config: dict, command: str) -> dict:
    block = {
        "code_version": __version__,
        "config_hash": config_hash(config),
        "seed": config["seed"],
        "command": command,
        "use_pretraining": bool(config["model"].get("use_pretraining", False)),
    }
    if config["model"].get("use_graph_encoder", True):
        block["graph_encoder"] = {
            "hidden_dim": config["model"]["hidden_dim"],
            "gcn_layers": config["model"]["gcn_layers"],
            "mp_steps": config["model"]["mp_steps"],
        }
    return block


def write_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_loss_curve(curve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, value in enumerate(curve):
            writer.writerow([i, repr(float(value))])


# -- commands ---------------------------------------------------------------------------


def cmd_simulate(config: dict, out_dir=None) -> dict:
    out = out_dir or config["out_dir"]
    synth_cfg = SynthConfig(seed=config["seed"], **config["synth"])
    cohort = generate_cohort(synth_cfg)
    paths = export_cohort(cohort, out)
    log.info("wrote %d experiments to %s", len(cohort.experiments), out)
    return paths


def vgae_feature_fn(config: dict, cohort: Cohort):
    """Input features for pretraining: the encoder's input map at its
    seeded initialization (the trunk is what transfers)."""
    hp = hyperparams_from_config(config)
    vocab = build_vocab(cohort.gene_graph, cohort.drug_gene, cohort.disease_gene,
                        cohort.experiments)
    rng = np.random.default_rng(config["seed"])
    enc = init_encoder(hp.encoder_config(), vocab.genes, vocab.drugs,
                       vocab.diseases, rng)

    def features(expr_row):
        return gene_input_features(enc, expr_row).data

    return features


def cmd_pretrain(config: dict, out_dir=None) -> str:
    out = out_dir or config["out_dir"]
    os.makedirs(out, exist_ok=True)
    cohort = resolve_cohort(config)
    hp = hyperparams_from_config(config)
    rng = np.random.default_rng(config["seed"])
    vgae = init_vgae(hp.hidden_dim, rng, n_trunk_layers=hp.gcn_layers)
    curve = pretrain_vgae(
        vgae, cohort.gene_graph, vgae_feature_fn(config, cohort),
        cohort.expression.values,
        epochs=int(config["pretrain"]["epochs"]),
        seed=config["seed"], lr=float(config["pretrain"]["lr"]),
        adjacency_threshold=hp.adjacency_threshold)
    ckpt_path = os.path.join(out, "vgae.ckpt")
    save_vgae(vgae, ckpt_path, extra={"seed": config["seed"],
                                      "epochs": int(config["pretrain"]["epochs"])})
    write_loss_curve(curve, os.path.join(out, "pretrain_loss.csv"))
    return ckpt_path


def cmd_train(config: dict, out_dir=None) -> str:
    out = out_dir or config["out_dir"]
    os.makedirs(out, exist_ok=True)
    cohort = resolve_cohort(config)
    hp = hyperparams_from_config(config)
    vocab = build_vocab(cohort.gene_graph, cohort.drug_gene, cohort.disease_gene,
                        cohort.experiments)
    bundle = build_bundle(hp, vocab, seed=config["seed"])
    if config["model"].get("use_pretraining", False):
        trunk_path = config["train"].get("pretrained_checkpoint")
        if not trunk_path or not os.path.exists(trunk_path):
            raise ConfigError("use_pretraining requires train.pretrained_checkpoint "
                              "to name an existing VGAE checkpoint")
        _, tensors = load_vgae_tensors(trunk_path)
        load_pretrained_trunk(bundle, tensors)
    examples = build_examples(cohort, with_instances=hp.use_graph_encoder)
    train_examples, _ = split_examples(examples, config)
    epochs = int(config["train"]["epochs"])
    lr = float(config["train"]["lr"])
    if hp.head == HEAD_DYNAMICS:
        window = config["train"].get("window_days")
        curve = train_dynamics(bundle, train_examples, epochs=epochs, lr=lr,
                               window_days=window)
    else:
        labels = [response_label(ex.series) for ex in train_examples]
        curve = train_classifier(bundle, train_examples, labels,
                                 epochs=epochs, lr=lr)
    ckpt_path = os.path.join(out, "model.ckpt")
    save_model(bundle, ckpt_path, extra={"seed": config["seed"],
                                         "config_hash": config_hash(config)})
    write_loss_curve(curve, os.path.join(out, "train_loss.csv"))
    return ckpt_path


def _classification_from_predictions(examples, predicted_best):
    """Observed binarized labels vs predicted-best-response scores."""
    labels, scores, counts = [], [], {}
    for ex, pred_br in zip(examples, predicted_best):
        if pred_br is None:
            continue
        cat = categorize(best_response(ex.series))
        labels.append(binarize(cat))
        counts[cat.value] = counts.get(cat.value, 0) + 1
        scores.append(-pred_br)
    if not labels:
        return None, None, None, counts
    bal, auroc, f1 = classification_metrics(
        np.array(labels, bool), np.array(scores), threshold=-35.0)
    return bal, auroc, f1, counts


def evaluate_window(bundle: ModelBundle, examples, window_days: float,
                    with_tgi: bool = False):
    """Predict every experiment from its window; pool unseen-timepoint
    regression metrics (log scale) and mRECIST classification metrics."""
    def predict_one(ex):
        return predict_trajectory(bundle, ex.instance, ex.series, window_days)

    trajectories = parallel_map(predict_one, examples)
    tgi_eval = tgi_evaluate(examples, window_days=window_days) if with_tgi else None

    y_true, y_pred = [], []
    n_unseen = 0
    predicted_best = []
    for ex, traj in zip(examples, trajectories):
        unseen = ex.series.times > window_days
        if unseen.any():
            y_true.extend(np.log(ex.series.volumes[unseen]))
            y_pred.extend(np.log(traj.volumes_mm3[unseen]))
            n_unseen += int(unseen.sum())
        try:
            predicted_best.append(best_response(traj))
        except ValueError:
            predicted_best.append(None)
    r2 = spearman = None
    if y_true:
        r2, spearman = regression_metrics(np.array(y_true), np.array(y_pred))
    bal, auroc, f1, counts = _classification_from_predictions(examples, predicted_best)
    report = MetricsReport(r2=r2, spearman=spearman, balanced_accuracy=bal,
                           auroc=auroc, f1=f1, counts=counts)
    return report, trajectories, tgi_eval, n_unseen


def write_trajectory_csvs(examples, trajectories, tgi_eval, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    for ex, traj in zip(examples, trajectories):
        name = f"{ex.key[0]}__{ex.key[1]}.csv".replace("/", "_")
        tgi_pred = tgi_eval.predictions.get(ex.key) if tgi_eval else None
        with open(os.path.join(directory, name), "w", encoding="utf-8",
                  newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "observed", "predicted", "tgi-predicted"])
            for i, t in enumerate(ex.series.times):
                row = [f"{t:g}", repr(float(ex.series.volumes[i])),
                       repr(float(traj.volumes_mm3[i]))]
                row.append(repr(float(tgi_pred[i])) if tgi_pred is not None else "")
                writer.writerow(row)


def cmd_evaluate(config: dict, checkpoint_path: str, out_dir=None) -> dict:
    out = out_dir or config["out_dir"]
    os.makedirs(out, exist_ok=True)
    bundle, _ = load_model(checkpoint_path)
    if bundle.hp.head != HEAD_DYNAMICS:
        raise ConfigError("evaluate requires a dynamics checkpoint")
    cohort = resolve_cohort(config)
    examples = build_examples(cohort, with_instances=bundle.hp.use_graph_encoder)
    train_examples, test_examples = split_examples(examples, config)
    split_name = config["evaluate"].get("split", "test")
    subset = {"test": test_examples, "train": train_examples,
              "all": examples}.get(split_name)
    if subset is None:
        raise ConfigError(f"unknown evaluate.split '{split_name}'")
    if not subset:
        raise ConfigError(f"evaluate.split '{split_name}' selected no experiments "
                          f"(fold={config['train'].get('fold')})")

    report = {
        "schema_version": 1,
        "provenance": provenance_block(config, "evaluate"),
        "split": split_name,
        "fold": config["train"].get("fold"),
        "n_experiments": len(subset),
        "windows": [],
    }
    with_tgi = bool(config["evaluate"].get("with_tgi", True))
    for window in config["evaluate"]["windows"]:
        window = float(window)
        metrics, trajectories, tgi_eval, n_unseen = evaluate_window(
            bundle, subset, window, with_tgi=with_tgi)
        entry = {
            "window_days": window,
            "n_unseen_points": n_unseen,
            "metrics": metrics.to_dict(),
        }
        if tgi_eval is not None:
            entry["tgi"] = {"r2": tgi_eval.r2, "spearman": tgi_eval.spearman,
                            "skipped": [list(k) for k in tgi_eval.skipped]}
        report["windows"].append(entry)
        if config["evaluate"].get("write_trajectories", True):
            write_trajectory_csvs(subset, trajectories, tgi_eval,
                                  os.path.join(out, f"trajectories_w{window:g}"))
        metrics.write_csv(os.path.join(out, f"metrics_w{window:g}.csv"))
    write_json(report, os.path.join(out, "report.json"))
    return report


def cmd_predict(config: dict, checkpoint_path: str, window_days: float,
                out_dir=None, model_id=None, treatment=None) -> list:
    out = out_dir or config["out_dir"]
    os.makedirs(out, exist_ok=True)
    bundle, _ = load_model(checkpoint_path)
    cohort = resolve_cohort(config)
    examples = build_examples(cohort, with_instances=bundle.hp.use_graph_encoder)
    if model_id is not None:
        examples = [ex for ex in examples if ex.key[0] == model_id]
    if treatment is not None:
        examples = [ex for ex in examples if ex.key[1] == treatment]
    if not examples:
        raise ConfigError("no experiments match the predict filters")
    trajectories = parallel_map(
        lambda ex: predict_trajectory(bundle, ex.instance, ex.series, window_days),
        examples)
    write_trajectory_csvs(examples, trajectories, None,
                          os.path.join(out, f"predictions_w{window_days:g}"))
    return [ex.key for ex in examples]


def cmd_fit_tgi(config: dict, out_dir=None) -> dict:
    out = out_dir or config["out_dir"]
    os.makedirs(out, exist_ok=True)
    cohort = resolve_cohort(config)
    window = config["train"].get("window_days")
    ev = tgi_evaluate(cohort.experiments, window_days=window)
    save_fits_csv(ev.fits, os.path.join(out, "tgi_fits.csv"))
    payload = {
        "schema_version": 1,
        "provenance": provenance_block(config, "fit-tgi"),
        "window_days": window,
        "metrics": {"r2": ev.r2, "spearman": ev.spearman},
        "n_fit": len(ev.fits),
        "skipped": [list(k) for k in ev.skipped],
    }
    write_json(payload, os.path.join(out, "tgi_report.json"))
    return payload
