"""Deterministic synthetic cohorts with a plantable drug-gene response signal.

Ground-truth dynamics are TGI-form: each experiment draws (k_g, k_d,
lambda) from log-uniform ranges, and the treatment efficacy k_d is
shifted upward by `signal_strength` times the mean raw expression of the
treatment drugs' target genes in that tumor. Volumes are simulated on an
alternating 2/3-day grid and corrupted with multiplicative log-normal
measurement noise. All randomness flows from one seeded generator, so a
seed pins the cohort byte for byte.

Default rate ranges are tuned so the observed mRECIST category mix lands
near CR 2.7% / PR 7.1% / SD 30.3% / PD 59.9%.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .data import (
    BipartiteEdges,
    ExpressionMatrix,
    GeneGraph,
    PDXExperiment,
    VolumeSeries,
    normalize_expression,
    save_bipartite_edges,
    save_expression,
    save_gene_graph,
    save_volumes,
)
from .errors import DataError
from .tgi import TGIParams, tgi_simulate

log = logging.getLogger(__name__)

MEAN_DEGREE = 4
DRUG_TARGETS_RANGE = (2, 6)          # inclusive
DISEASE_GENES_RANGE = (5, 20)        # inclusive
V0_RANGE = (100.0, 300.0)

# Expression is sparse log-normal: most genes low, a heavy upper tail.
EXPRESSION_LOG_MU = -1.2
EXPRESSION_LOG_SIGMA = 1.3

# TGI parameter ranges (log-uniform) and the expression->efficacy coupling,
# tuned against the target mRECIST category mix at the default config
KG_RANGE = (0.06, 0.22)
KD_BASE_RANGE = (0.002, 0.2)
LAMBDA_RANGE = (0.015, 0.25)
SIGNAL_SCALE = 0.10                  # k_d shift per unit mean target expression

# Series are truncated at the first measurement past this burden multiple,
# while always keeping the points through day 12.
VOLUME_CAP_FACTOR = 20.0
TRUNCATION_MIN_DAY = 12.0


@dataclass
class SynthConfig:
    seed: int = 0
    genes: int = 60
    tumors: int = 40
    drugs: int = 8
    diseases: int = 3
    experiments: int = 200
    noise_sigma: float = 0.1
    signal_strength: float = 1.0
    cadence_days: tuple = (2, 3)
    horizon_days: float = 65.0

    def __post_init__(self):
        for name in ("genes", "tumors", "drugs", "diseases", "experiments"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must lie in [0, 1]")
        self.cadence_days = tuple(self.cadence_days)
        if not all(2 <= c <= 3 for c in self.cadence_days):
            raise ValueError("measurement cadence must stay within 2-3 days")
        if self.horizon_days < 64:
            log.warning("horizon %.0f days is below the 64-day response window",
                        self.horizon_days)


@dataclass
class SynthCohort:
    config: SynthConfig
    gene_graph: GeneGraph
    drug_gene: BipartiteEdges
    disease_gene: BipartiteEdges
    expression: ExpressionMatrix
    experiments: list[PDXExperiment]
    true_params: dict = field(default_factory=dict)    # key -> TGIParams
    signal_means: dict = field(default_factory=dict)   # key -> mean target expression


def measurement_grid(config: SynthConfig) -> np.ndarray:
    """Days 0, 2, 5, 7, ... alternating the cadence up to the horizon."""
    days = [0.0]
    i = 0
    while True:
        nxt = days[-1] + config.cadence_days[i % len(config.cadence_days)]
        if nxt > config.horizon_days:
            break
        days.append(float(nxt))
        i += 1
    return np.array(days)


def generate_cohort(config: SynthConfig) -> SynthCohort:
    rng = np.random.default_rng(config.seed)
    genes = tuple(f"G{i:04d}" for i in range(1, config.genes + 1))
    tumors = tuple(f"PDX{i:03d}" for i in range(1, config.tumors + 1))
    drugs = tuple(f"DRG{i:02d}" for i in range(1, config.drugs + 1))
    diseases = tuple(f"DIS{i}" for i in range(1, config.diseases + 1))

    # sparse gene graph with mean degree MEAN_DEGREE
    n = config.genes
    all_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    n_edges = min(len(all_pairs), (MEAN_DEGREE * n) // 2)
    chosen = rng.choice(len(all_pairs), size=n_edges, replace=False)
    weights = rng.uniform(0.05, 1.0, size=n_edges)
    edges = tuple(sorted((genes[all_pairs[k][0]], genes[all_pairs[k][1]], float(w))
                         for k, w in zip(chosen, weights)))
    gene_graph = GeneGraph(genes=genes, edges=edges, tissue="synthetic")

    # drug targets and disease gene associations
    dg_edges = []
    targets_of: dict[str, list[str]] = {}
    for drug in drugs:
        k = int(rng.integers(DRUG_TARGETS_RANGE[0], DRUG_TARGETS_RANGE[1] + 1))
        k = min(k, n)
        tg = sorted(genes[i] for i in rng.choice(n, size=k, replace=False))
        targets_of[drug] = tg
        dg_edges.extend((drug, g) for g in tg)
    drug_gene = BipartiteEdges(domain="drug-gene", left_ids=drugs,
                               gene_ids=tuple(sorted({g for _, g in dg_edges})),
                               edges=tuple(sorted(dg_edges)))
    sg_edges = []
    for disease in diseases:
        k = int(rng.integers(DISEASE_GENES_RANGE[0], DISEASE_GENES_RANGE[1] + 1))
        k = min(k, n)
        ag = sorted(genes[i] for i in rng.choice(n, size=k, replace=False))
        sg_edges.extend((disease, g) for g in ag)
    disease_gene = BipartiteEdges(domain="disease-gene", left_ids=diseases,
                                  gene_ids=tuple(sorted({g for _, g in sg_edges})),
                                  edges=tuple(sorted(sg_edges)))

    # expression: sparse log-normal raw values, tumors x genes
    raw = rng.lognormal(mean=EXPRESSION_LOG_MU, sigma=EXPRESSION_LOG_SIGMA,
                        size=(config.tumors, config.genes))
    expression = ExpressionMatrix(
        model_ids=tumors, genes=genes, raw=raw,
        values=normalize_expression(raw), normalization="log1p-zscored")
    disease_of = {t: diseases[int(rng.integers(config.diseases))] for t in tumors}

    # treatment catalogue: every single drug plus random unordered pairs
    treatments: list[tuple[str, ...]] = [(d,) for d in drugs]
    if config.drugs >= 2:
        want_pairs = max(1, (3 * config.drugs) // 2)
        pairs = {tuple(sorted(rng.choice(config.drugs, size=2, replace=False)))
                 for _ in range(4 * want_pairs)}
        pair_list = sorted(pairs)[:want_pairs]
        treatments.extend(tuple(drugs[i] for i in p) for p in pair_list)

    combos = [(t, tr) for t in tumors for tr in treatments]
    if config.experiments > len(combos):
        raise ValueError(
            f"cannot draw {config.experiments} unique experiments from "
            f"{len(combos)} (tumor, treatment) combinations")
    picked = sorted(rng.choice(len(combos), size=config.experiments, replace=False))

    grid = measurement_grid(config)
    tumor_row = {t: i for i, t in enumerate(tumors)}
    experiments: list[PDXExperiment] = []
    true_params: dict = {}
    signal_means: dict = {}

    def log_uniform(lo, hi):
        return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))

    for idx in picked:
        tumor, treatment = combos[idx]
        target_genes = sorted({g for d in treatment for g in targets_of[d]})
        gi = [gene_graph.gene_index(g) for g in target_genes]
        m = float(raw[tumor_row[tumor], gi].mean()) if gi else 0.0
        k_g = log_uniform(*KG_RANGE)
        k_d = log_uniform(*KD_BASE_RANGE) + config.signal_strength * SIGNAL_SCALE * m
        lam = log_uniform(*LAMBDA_RANGE)
        params = TGIParams(k_g=k_g, k_d=k_d, lam=lam)
        v0 = float(rng.uniform(*V0_RANGE))
        clean = tgi_simulate(params, v0, grid)
        noise = np.exp(rng.normal(0.0, config.noise_sigma, size=len(grid))) \
            if config.noise_sigma > 0 else np.ones(len(grid))
        observed = clean * noise
        # humane-endpoint truncation: stop after the burden cap is crossed,
        # but never before TRUNCATION_MIN_DAY so mRECIST stays computable
        keep = len(grid)
        cap = VOLUME_CAP_FACTOR * observed[0]
        for j in range(len(grid)):
            if grid[j] > TRUNCATION_MIN_DAY and observed[j] > cap:
                keep = j + 1
                break
        exp = PDXExperiment(
            model_id=tumor, disease_id=disease_of[tumor], treatment=treatment,
            volumes=VolumeSeries(times=grid[:keep].copy(),
                                 volumes=observed[:keep].copy()))
        experiments.append(exp)
        true_params[exp.key] = params
        signal_means[exp.key] = m

    return SynthCohort(config=config, gene_graph=gene_graph, drug_gene=drug_gene,
                       disease_gene=disease_gene, expression=expression,
                       experiments=experiments, true_params=true_params,
                       signal_means=signal_means)


# -- cohort files -------------------------------------------------------------------

COHORT_FILES = {
    "gene_graph": "gene_gene.tsv",
    "drug_gene": "drug_gene.tsv",
    "disease_gene": "disease_gene.tsv",
    "expression": "expression.csv",
    "volumes": "volumes.csv",
    "models": "models.csv",
}

MODELS_HEADER = ["model_id", "disease_id"]


def save_models(experiments, path) -> None:
    """model_id -> disease_id mapping (one row per distinct model)."""
    seen: dict[str, str] = {}
    for exp in experiments:
        prev = seen.get(exp.model_id)
        if prev is not None and prev != exp.disease_id:
            raise DataError(f"model '{exp.model_id}' mapped to two diseases")
        seen[exp.model_id] = exp.disease_id
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MODELS_HEADER)
        for model in sorted(seen):
            writer.writerow([model, seen[model]])


def load_models(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError("missing header row", path=path, line=1)
    reader = csv.reader(lines)
    header = [c.strip() for c in next(reader)]
    if header != MODELS_HEADER:
        raise DataError(f"expected header {','.join(MODELS_HEADER)}", path=path, line=1)
    out: dict[str, str] = {}
    for lineno, cols in enumerate(reader, start=2):
        if not cols or (len(cols) == 1 and not cols[0].strip()):
            continue
        if len(cols) != 2:
            raise DataError(f"expected 2 columns, got {len(cols)}", path=path, line=lineno)
        model, disease = cols[0].strip(), cols[1].strip()
        if model in out and out[model] != disease:
            raise DataError(f"conflicting disease for model '{model}'",
                            path=path, line=lineno)
        out[model] = disease
    return out


def export_cohort(cohort: SynthCohort, directory) -> dict[str, str]:
    """Write the cohort in the ingestion formats; returns the file paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {k: os.path.join(directory, v) for k, v in COHORT_FILES.items()}
    try:
        save_gene_graph(cohort.gene_graph, paths["gene_graph"])
        save_bipartite_edges(cohort.drug_gene, paths["drug_gene"])
        save_bipartite_edges(cohort.disease_gene, paths["disease_gene"])
        save_expression(cohort.expression, paths["expression"])
        save_volumes(cohort.experiments, paths["volumes"])
        save_models(cohort.experiments, paths["models"])
    except OSError as exc:
        raise DataError(f"cannot write cohort file: {exc}") from exc
    return paths
