"""Data model and file ingestion for the knowledge graphs, expression
matrices, and longitudinal tumor-volume records.

File formats (all plain text, UTF-8):
  gene-gene TSV     geneA<TAB>geneB<TAB>weight          (no header)
  drug-gene TSV     drug_id<TAB>gene_id                 (no header)
  disease-gene TSV  disease_id<TAB>gene_id              (no header)
  expression CSV    header: model_id,<gene ids...>
  volumes CSV       header: model_id,treatment,day,volume_mm3

Loaded structures are canonical (sorted vocabularies and edge lists) and
immutable by convention: loading shuffled lines yields equal objects.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

TREATMENT_SEP = "+"


def treatment_key(drugs) -> str:
    """Canonical key for a treatment: sorted drug ids joined by '+'."""
    if isinstance(drugs, str):
        drugs = drugs.split(TREATMENT_SEP)
    parts = sorted(d.strip() for d in drugs if d.strip())
    if not parts:
        raise ValueError("empty treatment")
    return TREATMENT_SEP.join(parts)


# -- domain types ------------------------------------------------------------------


@dataclass(frozen=True)
class GeneGraph:
    """Undirected weighted gene-gene graph with a lexicographic vocabulary."""

    genes: tuple[str, ...]
    edges: tuple[tuple[str, str, float], ...]  # (a, b, w) with a < b, sorted
    tissue: str = "unspecified"

    def __post_init__(self):
        index = {g: i for i, g in enumerate(self.genes)}
        object.__setattr__(self, "_index", index)

    @property
    def n_genes(self) -> int:
        return len(self.genes)

    def gene_index(self, gene: str) -> int:
        return self._index[gene]

    def edge_index_pairs(self) -> list[tuple[int, int]]:
        return [(self._index[a], self._index[b]) for a, b, _ in self.edges]

    def adjacency(self, weight_threshold: float = 0.0) -> np.ndarray:
        """Binary symmetric adjacency keeping edges with weight >= threshold."""
        a = np.zeros((self.n_genes, self.n_genes))
        for ga, gb, w in self.edges:
            if w >= weight_threshold:
                i, j = self._index[ga], self._index[gb]
                a[i, j] = a[j, i] = 1.0
        return a


@dataclass(frozen=True)
class BipartiteEdges:
    """Inter-domain edge set (drug-gene or disease-gene)."""

    domain: str
    left_ids: tuple[str, ...]
    gene_ids: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]  # (left_id, gene_id), sorted

    def genes_of(self, left_id: str) -> list[str]:
        return [g for l, g in self.edges if l == left_id]


@dataclass(eq=False)
class ExpressionMatrix:
    """Per-tumor gene expression, aligned to a gene vocabulary.

    `raw` holds values as ingested; `values` holds the per-gene
    log1p + z-score transform declared by `normalization`.
    """

    model_ids: tuple[str, ...]
    genes: tuple[str, ...]
    raw: np.ndarray
    values: np.ndarray
    normalization: str = "log1p-zscored"
    missing_genes: tuple[str, ...] = ()   # in vocabulary, absent from file (filled 0)
    extra_genes: tuple[str, ...] = ()     # in file, absent from vocabulary (dropped)

    def __eq__(self, other):
        if not isinstance(other, ExpressionMatrix):
            return NotImplemented
        return (self.model_ids == other.model_ids and self.genes == other.genes
                and self.normalization == other.normalization
                and np.array_equal(self.raw, other.raw)
                and np.array_equal(self.values, other.values))

    def row(self, model_id: str) -> np.ndarray:
        try:
            return self.values[self.model_ids.index(model_id)]
        except ValueError:
            raise KeyError(f"unknown tumor-model id '{model_id}'") from None


@dataclass(eq=False)
class VolumeSeries:
    """Irregularly sampled (day, mm^3) measurements, starting at day 0."""

    times: np.ndarray
    volumes: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.volumes = np.asarray(self.volumes, dtype=np.float64)
        if self.times.shape != self.volumes.shape or self.times.ndim != 1:
            raise ValueError("times and volumes must be equal-length 1-D arrays")
        if len(self.times) < 2:
            raise ValueError("a volume series needs at least 2 measurements")
        if self.times[0] != 0.0:
            raise ValueError(f"series must start at day 0, got {self.times[0]}")
        if not np.all(np.diff(self.times) > 0):
            raise ValueError("measurement days must be strictly increasing")
        if not np.all(self.volumes > 0):
            raise ValueError("volumes must be positive")

    def __eq__(self, other):
        if not isinstance(other, VolumeSeries):
            return NotImplemented
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.volumes, other.volumes))

    @property
    def v_initial(self) -> float:
        return float(self.volumes[0])

    def __len__(self):
        return len(self.times)


@dataclass(eq=False)
class PDXExperiment:
    """One tumor model under one treatment, with its volume series."""

    model_id: str
    disease_id: str
    treatment: tuple[str, ...]
    volumes: VolumeSeries

    def __post_init__(self):
        if not self.treatment:
            raise ValueError("treatment must name at least one drug")
        self.treatment = tuple(sorted(self.treatment))

    def __eq__(self, other):
        if not isinstance(other, PDXExperiment):
            return NotImplemented
        return (self.model_id == other.model_id and self.disease_id == other.disease_id
                and self.treatment == other.treatment and self.volumes == other.volumes)

    @property
    def treatment_id(self) -> str:
        return TREATMENT_SEP.join(self.treatment)

    @property
    def key(self) -> tuple[str, str]:
        return (self.model_id, self.treatment_id)


@dataclass
class HeteroInstance:
    """One experiment's heterogeneous graph, restricted to present nodes.

    Gene features are this tumor's normalized expression over the full
    gene vocabulary; drug-gene edges cover only the treatment drugs;
    there is exactly one disease node.
    """

    model_id: str
    treatment: tuple[str, ...]
    disease_id: str
    gene_features: np.ndarray                    # (n_genes,)
    gene_graph: GeneGraph
    drug_gene_edges: tuple[tuple[str, int], ...]  # (drug_id, gene index)
    disease_gene_idx: tuple[int, ...]             # gene indices tied to the disease
    untargeted_drugs: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.gene_features) != self.gene_graph.n_genes:
            raise ValueError("gene features must cover the full vocabulary")

    def drug_targets(self, drug_id: str) -> list[int]:
        return [g for d, g in self.drug_gene_edges if d == drug_id]


# -- line-oriented parsing helpers -----------------------------------------------


def _read_lines(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read file: {exc}", path=path) from exc


def load_gene_graph(path, vocabulary=None, tissue: str = "unspecified") -> GeneGraph:
    """Load a gene-gene TSV; dedup undirected edges, sort everything.

    `vocabulary` optionally adds gene ids beyond the edge endpoints
    (e.g. isolated genes known from the expression panel).
    """
    seen: dict[frozenset, tuple[str, str, float]] = {}
    nodes = set(vocabulary or ())
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise DataError(f"expected 3 tab-separated columns, got {len(cols)}",
                            path=path, line=lineno)
        ga, gb, w_raw = (c.strip() for c in cols)
        try:
            w = float(w_raw)
        except ValueError:
            raise DataError(f"unparsable edge weight '{w_raw}'",
                            path=path, line=lineno) from None
        if not (0.0 < w <= 1.0):
            raise DataError(f"edge weight {w} outside (0, 1]", path=path, line=lineno)
        if ga == gb:
            raise DataError(f"self-loop on gene '{ga}'", path=path, line=lineno)
        nodes.update((ga, gb))
        key = frozenset((ga, gb))
        if key not in seen:
            a, b = sorted((ga, gb))
            seen[key] = (a, b, w)
    return GeneGraph(genes=tuple(sorted(nodes)),
                     edges=tuple(sorted(seen.values())),
                     tissue=tissue)


def load_bipartite_edges(path, domain: str) -> BipartiteEdges:
    """Load a two-column TSV of (left_id, gene_id) associations."""
    if domain not in ("drug-gene", "disease-gene"):
        raise ValueError(f"unknown domain tag '{domain}'")
    edges: set[tuple[str, str]] = set()
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 2:
            raise DataError(f"expected 2 tab-separated columns, got {len(cols)}",
                            path=path, line=lineno)
        left, gene = (c.strip() for c in cols)
        if not left or not gene:
            raise DataError("empty identifier", path=path, line=lineno)
        edges.add((left, gene))
    return BipartiteEdges(
        domain=domain,
        left_ids=tuple(sorted({l for l, _ in edges})),
        gene_ids=tuple(sorted({g for _, g in edges})),
        edges=tuple(sorted(edges)),
    )


def normalize_expression(raw: np.ndarray) -> np.ndarray:
    """Per-gene z-score of log(1+x) across tumors; constant genes map to 0."""
    if raw.shape[0] == 0:
        return np.zeros_like(raw)
    x = np.log1p(raw)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    out = np.zeros_like(x)
    ok = sd > 1e-12
    out[:, ok] = (x[:, ok] - mu[ok]) / sd[ok]
    return out


def load_expression(path, gene_vocabulary) -> ExpressionMatrix:
    """Load an expression CSV and align its columns to `gene_vocabulary`.

    Vocabulary genes missing from the file are filled with raw 0 and
    reported; file genes outside the vocabulary are dropped and reported.
    """
    vocab = tuple(gene_vocabulary)
    lines = _read_lines(path)
    if not lines or not lines[0].strip():
        raise DataError("missing header row", path=path, line=1)
    reader = csv.reader(lines)
    header = next(reader)
    if header[0].strip() != "model_id":
        raise DataError(f"first header column must be 'model_id', got '{header[0]}'",
                        path=path, line=1)
    file_genes = [g.strip() for g in header[1:]]
    model_ids: list[str] = []
    rows: list[np.ndarray] = []
    seen_models: set[str] = set()
    for lineno, cols in enumerate(reader, start=2):
        if not cols or (len(cols) == 1 and not cols[0].strip()):
            continue
        if len(cols) != len(header):
            raise DataError(f"expected {len(header)} columns, got {len(cols)}",
                            path=path, line=lineno)
        model = cols[0].strip()
        if model in seen_models:
            raise DataError(f"duplicate tumor-model id '{model}'", path=path, line=lineno)
        seen_models.add(model)
        try:
            vals = np.array([float(c) for c in cols[1:]], dtype=np.float64)
        except ValueError:
            bad = next(c for c in cols[1:] if not _is_float(c))
            raise DataError(f"unparsable expression value '{bad}'",
                            path=path, line=lineno) from None
        if np.any(vals < 0):
            raise DataError("negative expression value", path=path, line=lineno)
        model_ids.append(model)
        rows.append(vals)

    order = np.argsort(model_ids)
    model_ids = [model_ids[i] for i in order]
    data = np.array([rows[i] for i in order]) if rows else np.zeros((0, len(file_genes)))

    col_of = {g: j for j, g in enumerate(file_genes)}
    aligned = np.zeros((len(model_ids), len(vocab)))
    missing = []
    for j, g in enumerate(vocab):
        if g in col_of:
            aligned[:, j] = data[:, col_of[g]]
        else:
            missing.append(g)
    extra = [g for g in file_genes if g not in set(vocab)]
    if missing:
        log.warning("expression file %s: %d vocabulary gene(s) absent, filled with 0",
                    path, len(missing))
    if extra:
        log.warning("expression file %s: %d gene column(s) outside vocabulary dropped",
                    path, len(extra))
    return ExpressionMatrix(
        model_ids=tuple(model_ids),
        genes=vocab,
        raw=aligned,
        values=normalize_expression(aligned),
        normalization="log1p-zscored",
        missing_genes=tuple(missing),
        extra_genes=tuple(extra),
    )


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


VOLUMES_HEADER = ["model_id", "treatment", "day", "volume_mm3"]


def load_volumes(path) -> dict[tuple[str, str], VolumeSeries]:
    """Load a long-format volumes CSV into per-(model, treatment) series."""
    lines = _read_lines(path)
    if not lines or not lines[0].strip():
        raise DataError("missing header row", path=path, line=1)
    reader = csv.reader(lines)
    header = [c.strip() for c in next(reader)]
    if header != VOLUMES_HEADER:
        raise DataError(f"expected header {','.join(VOLUMES_HEADER)}", path=path, line=1)
    groups: dict[tuple[str, str], dict[float, float]] = {}
    for lineno, cols in enumerate(reader, start=2):
        if not cols or (len(cols) == 1 and not cols[0].strip()):
            continue
        if len(cols) != 4:
            raise DataError(f"expected 4 columns, got {len(cols)}", path=path, line=lineno)
        model, treatment_raw, day_raw, vol_raw = (c.strip() for c in cols)
        try:
            day = float(day_raw)
        except ValueError:
            raise DataError(f"unparsable day '{day_raw}'", path=path, line=lineno) from None
        try:
            vol = float(vol_raw)
        except ValueError:
            raise DataError(f"unparsable volume '{vol_raw}'",
                            path=path, line=lineno) from None
        if day < 0:
            raise DataError(f"negative day {day}", path=path, line=lineno)
        if vol <= 0:
            raise DataError(f"nonpositive volume {vol}", path=path, line=lineno)
        key = (model, treatment_key(treatment_raw))
        series = groups.setdefault(key, {})
        if day in series:
            raise DataError(
                f"duplicate measurement for ({model}, {key[1]}) at day {day:g}",
                path=path, line=lineno)
        series[day] = vol

    out: dict[tuple[str, str], VolumeSeries] = {}
    for key in sorted(groups):
        days = sorted(groups[key])
        try:
            out[key] = VolumeSeries(times=np.array(days),
                                    volumes=np.array([groups[key][d] for d in days]))
        except ValueError as exc:
            raise DataError(f"invalid series for ({key[0]}, {key[1]}): {exc}",
                            path=path) from exc
    return out


# -- serialization (mirrors the load formats exactly) -------------------------------


def save_gene_graph(graph: GeneGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, w in graph.edges:
            fh.write(f"{a}\t{b}\t{w!r}\n")


def save_bipartite_edges(bip: BipartiteEdges, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for left, gene in bip.edges:
            fh.write(f"{left}\t{gene}\n")


def save_expression(matrix: ExpressionMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_id", *matrix.genes])
        for i, model in enumerate(matrix.model_ids):
            writer.writerow([model, *[repr(float(v)) for v in matrix.raw[i]]])


def save_volumes(experiments, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(VOLUMES_HEADER)
        for exp in experiments:
            for t, v in zip(exp.volumes.times, exp.volumes.volumes):
                writer.writerow([exp.model_id, exp.treatment_id, f"{t:g}", repr(float(v))])


# -- instance assembly ----------------------------------------------------------------


def assemble_hetero_instance(experiment: PDXExperiment,
                             gene_graph: GeneGraph,
                             drug_gene: BipartiteEdges,
                             disease_gene: BipartiteEdges,
                             expression: ExpressionMatrix) -> HeteroInstance:
    """Build the per-experiment heterogeneous graph.

    Unknown drugs become isolated nodes (warned); unknown disease or
    tumor-model ids are errors.
    """
    try:
        features = expression.row(experiment.model_id)
    except KeyError:
        raise DataError(f"unknown tumor-model id '{experiment.model_id}'") from None
    if experiment.disease_id not in disease_gene.left_ids:
        raise DataError(f"unknown disease id '{experiment.disease_id}'")

    gene_set = set(gene_graph.genes)
    dg_edges: list[tuple[str, int]] = []
    untargeted: list[str] = []
    known_drugs = set(drug_gene.left_ids)
    for drug in experiment.treatment:
        if drug not in known_drugs:
            log.warning("drug '%s' has no known targets; kept as isolated node", drug)
            untargeted.append(drug)
            continue
        targets = [g for g in drug_gene.genes_of(drug) if g in gene_set]
        if not targets:
            untargeted.append(drug)
        dg_edges.extend((drug, gene_graph.gene_index(g)) for g in sorted(targets))

    disease_idx = tuple(gene_graph.gene_index(g)
                        for g in sorted(disease_gene.genes_of(experiment.disease_id))
                        if g in gene_set)
    return HeteroInstance(
        model_id=experiment.model_id,
        treatment=experiment.treatment,
        disease_id=experiment.disease_id,
        gene_features=features,
        gene_graph=gene_graph,
        drug_gene_edges=tuple(dg_edges),
        disease_gene_idx=disease_idx,
        untargeted_drugs=tuple(untargeted),
    )


def negative_sample_edges(graph: GeneGraph, count: int, seed: int) -> list[tuple[str, str]]:
    """Sample `count` distinct non-edges uniformly, deterministic under seed."""
    n = graph.n_genes
    present = {frozenset((a, b)) for a, b, _ in graph.edges}
    candidates = [(graph.genes[i], graph.genes[j])
                  for i in range(n) for j in range(i + 1, n)
                  if frozenset((graph.genes[i], graph.genes[j])) not in present]
    if count > len(candidates):
        raise ValueError(
            f"requested {count} negative edges, only {len(candidates)} non-edges exist")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(candidates), size=count, replace=False)
    return [candidates[i] for i in idx]
