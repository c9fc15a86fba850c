"""Heterogeneous graph encoder.

Pipeline per experiment: gene input features (shared 1->D affine on
expression plus a learned per-gene embedding) run through a stack of
GCN layers over the gene-gene graph; a bipartite graph attention layer
propagates treatment-drug embeddings into their target genes (with a
residual); a second attention layer pools the disease's associated
genes into the disease embedding (again residual). The graph embedding
is the concatenation of the mean treatment-drug input embedding and the
updated disease embedding.

The gene GCN trunk can be initialized from a variational graph
autoencoder pretrained on per-tumor (graph, expression) pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import GeneGraph, HeteroInstance
from .errors import NumericalError
from .nn import AdamState, adam_step, bce_loss, gaussian_kl_loss, mse_loss, zero_grads
from .tensor import Tensor, as_tensor, concat, parameter, softmax, stack_rows

log = logging.getLogger(__name__)

ADJACENCY_THRESHOLD = 0.5  # gene-gene edges at/above this weight enter the GCN
LEAKY_SLOPE = 0.2


@dataclass
class EncoderConfig:
    hidden_dim: int = 32          # D: shared width of all node embeddings
    gcn_layers: int = 2
    mp_steps: int = 1             # K: drug->gene / gene->disease alternations
    adjacency_threshold: float = ADJACENCY_THRESHOLD
    leaky_slope: float = LEAKY_SLOPE


@dataclass
class GCNLayerParams:
    weight: Tensor
    bias: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.weight, f"{prefix}.b": self.bias}


@dataclass
class BGALayerParams:
    """Bipartite graph attention: W^u and W^v map both domains into a
    common width; the attention vector scores [W^u x_u || W^v x_v]."""

    wu: Tensor
    wv: Tensor
    a: Tensor
    leaky_slope: float = LEAKY_SLOPE

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.wu": self.wu, f"{prefix}.wv": self.wv, f"{prefix}.a": self.a}


def init_gcn_layer(d_in: int, d_out: int, rng: np.random.Generator) -> GCNLayerParams:
    bound = 1.0 / np.sqrt(d_in)
    return GCNLayerParams(weight=parameter(rng.uniform(-bound, bound, (d_in, d_out))),
                          bias=parameter(np.zeros(d_out)))


def init_bga_layer(d_u: int, d_v: int, d_out: int, rng: np.random.Generator,
                   leaky_slope: float = LEAKY_SLOPE) -> BGALayerParams:
    bu = 1.0 / np.sqrt(d_u)
    bv = 1.0 / np.sqrt(d_v)
    ba = 1.0 / np.sqrt(2 * d_out)
    return BGALayerParams(
        wu=parameter(rng.uniform(-bu, bu, (d_u, d_out))),
        wv=parameter(rng.uniform(-bv, bv, (d_v, d_out))),
        a=parameter(rng.uniform(-ba, ba, 2 * d_out)),
        leaky_slope=leaky_slope,
    )


# -- gene-gene GCN ------------------------------------------------------------------


def gcn_norm_adjacency(graph: GeneGraph, threshold: float = ADJACENCY_THRESHOLD
                       ) -> np.ndarray:
    """Symmetric normalization D^-1/2 (A + I) D^-1/2 of the binarized graph."""
    a = graph.adjacency(weight_threshold=threshold)
    a += np.eye(graph.n_genes)
    deg = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def gcn_forward(layer: GCNLayerParams, norm_adj: np.ndarray | Tensor,
                h: Tensor, activation: str = "relu") -> Tensor:
    """One convolution: act(norm_adj @ H @ W + b)."""
    if h.shape[0] != np.shape(norm_adj)[0]:
        raise ValueError(f"feature rows {h.shape[0]} != node count "
                         f"{np.shape(norm_adj)[0]}")
    out = as_tensor(norm_adj) @ h @ layer.weight + layer.bias
    if activation == "relu":
        return out.relu()
    if activation == "identity":
        return out
    raise ValueError(f"unknown activation '{activation}'")


# -- bipartite convolution and attention ------------------------------------------------


def bg_conv(neighbor_feats: Tensor | np.ndarray, weight: Tensor) -> Tensor:
    """Plain bipartite convolution: ReLU of the mean of transformed
    neighbor features; an empty neighborhood yields the zero vector."""
    w = as_tensor(weight)
    feats = as_tensor(neighbor_feats)
    if feats.shape[0] == 0:
        return Tensor(np.zeros(w.shape[1]))
    return (feats @ w).mean(axis=0).relu()


def attention_weights(layer: BGALayerParams, u_feat: Tensor,
                      neighbor_feats: Tensor) -> Tensor:
    """Softmax over LeakyReLU(a . [W^u x_u || W^v x_v]) per neighbor."""
    if neighbor_feats.shape[0] == 0:
        raise ValueError("attention requires at least one neighbor")
    s = layer.wu.shape[1]
    u_proj = u_feat @ layer.wu                      # (S,)
    v_proj = neighbor_feats @ layer.wv              # (k, S)
    score_u = (u_proj * layer.a[:s]).sum()          # scalar
    scores = (score_u + v_proj @ layer.a[s:]).leaky_relu(layer.leaky_slope)
    return softmax(scores)


def bga_forward(layer: BGALayerParams, u_feat: Tensor,
                neighbor_feats: Tensor | np.ndarray) -> Tensor:
    """Attention-weighted aggregation of transformed neighbor features."""
    feats = as_tensor(neighbor_feats)
    if feats.shape[0] == 0:
        return Tensor(np.zeros(layer.wv.shape[1]))
    alpha = attention_weights(layer, u_feat, feats)
    return (alpha @ (feats @ layer.wv)).relu()


# -- encoder parameter bundle ----------------------------------------------------------


@dataclass
class EncoderParams:
    expr_w: Tensor                       # shared 1 -> D affine on expression
    expr_b: Tensor
    gene_emb: Tensor                     # (n_genes, D)
    drug_emb: Tensor                     # (n_drugs, D)
    disease_emb: Tensor                  # (n_diseases, D)
    gcn: list[GCNLayerParams]
    bga_drug_gene: BGALayerParams
    bga_gene_disease: BGALayerParams
    drug_index: dict[str, int]
    disease_index: dict[str, int]

    def named(self, prefix: str = "enc") -> dict[str, Tensor]:
        out = {
            f"{prefix}.expr_w": self.expr_w,
            f"{prefix}.expr_b": self.expr_b,
            f"{prefix}.gene_emb": self.gene_emb,
            f"{prefix}.drug_emb": self.drug_emb,
            f"{prefix}.disease_emb": self.disease_emb,
        }
        for i, layer in enumerate(self.gcn):
            out.update(layer.named(f"{prefix}.gcn{i}"))
        out.update(self.bga_drug_gene.named(f"{prefix}.bga_dg"))
        out.update(self.bga_gene_disease.named(f"{prefix}.bga_gd"))
        return out


def init_encoder(config: EncoderConfig, genes, drugs, diseases,
                 rng: np.random.Generator) -> EncoderParams:
    d = config.hidden_dim
    bound = 1.0 / np.sqrt(d)
    return EncoderParams(
        expr_w=parameter(rng.uniform(-1.0, 1.0, size=d)),
        expr_b=parameter(np.zeros(d)),
        gene_emb=parameter(rng.uniform(-bound, bound, (len(genes), d))),
        drug_emb=parameter(rng.uniform(-bound, bound, (len(drugs), d))),
        disease_emb=parameter(rng.uniform(-bound, bound, (len(diseases), d))),
        gcn=[init_gcn_layer(d, d, rng) for _ in range(config.gcn_layers)],
        bga_drug_gene=init_bga_layer(d, d, d, rng, config.leaky_slope),
        bga_gene_disease=init_bga_layer(d, d, d, rng, config.leaky_slope),
        drug_index={drug: i for i, drug in enumerate(drugs)},
        disease_index={dis: i for i, dis in enumerate(diseases)},
    )


# -- per-instance pipeline ----------------------------------------------------------------


def gene_input_features(params: EncoderParams, expression: np.ndarray) -> Tensor:
    """h^(0) per gene: affine(expression scalar) + learned gene embedding."""
    expr_col = Tensor(np.asarray(expression, dtype=np.float64).reshape(-1, 1))
    return expr_col @ params.expr_w.reshape(1, -1) + params.expr_b + params.gene_emb


def gene_hidden_states(params: EncoderParams, norm_adj: np.ndarray,
                       expression: np.ndarray) -> Tensor:
    """Input features run through the GCN stack (per-tumor, treatment-free)."""
    h = gene_input_features(params, expression)
    for layer in params.gcn:
        h = gcn_forward(layer, norm_adj, h)
    return h


def mp_drug_to_gene(params: EncoderParams, instance: HeteroInstance,
                    h_gene: Tensor) -> Tensor:
    """Residual attention messages from treatment drugs into target genes.

    Genes hit by a single drug take the attention shortcut: one neighbor
    means alpha = 1 exactly, so the message is ReLU(W^v x_drug), shared
    by every gene that drug targets.
    """
    edges = instance.drug_gene_edges
    if not edges:
        return h_gene
    by_gene: dict[int, list[int]] = {}
    for drug, g in edges:
        by_gene.setdefault(g, []).append(params.drug_index[drug])
    single_message: dict[int, Tensor] = {}
    gene_idx = sorted(by_gene)
    messages = []
    for g in gene_idx:
        rows = by_gene[g]
        if len(rows) == 1:
            drug_row = rows[0]
            if drug_row not in single_message:
                single_message[drug_row] = \
                    (params.drug_emb[drug_row] @ params.bga_drug_gene.wv).relu()
            messages.append(single_message[drug_row])
        else:
            drug_feats = params.drug_emb[np.array(rows)]
            messages.append(bga_forward(params.bga_drug_gene, h_gene[g], drug_feats))
    return h_gene.add_rows(gene_idx, stack_rows(messages))


def mp_gene_to_disease(params: EncoderParams, instance: HeteroInstance,
                       h_disease: Tensor, h_gene: Tensor) -> Tensor:
    """Residual attentional pooling of the disease's gene subgraph."""
    idx = instance.disease_gene_idx
    if not idx:
        log.warning("disease '%s' has no associated genes in the vocabulary",
                    instance.disease_id)
        return h_disease
    gene_feats = h_gene[np.array(idx)]
    return bga_forward(params.bga_gene_disease, h_disease, gene_feats) + h_disease


def encode_beta1(params: EncoderParams, config: EncoderConfig,
                 instance: HeteroInstance, norm_adj: np.ndarray | None = None,
                 gene_hidden: Tensor | None = None) -> Tensor:
    """Graph embedding (length 2D): [mean drug embedding || updated disease].

    `gene_hidden` lets callers share the per-tumor GCN pass across the
    experiments of one tumor; it must come from `gene_hidden_states` on
    the same instance expression.
    """
    if gene_hidden is None:
        if norm_adj is None:
            norm_adj = gcn_norm_adjacency(instance.gene_graph, config.adjacency_threshold)
        gene_hidden = gene_hidden_states(params, norm_adj, instance.gene_features)
    h_gene = gene_hidden
    h_disease = params.disease_emb[params.disease_index[instance.disease_id]]
    for _ in range(config.mp_steps):
        h_gene = mp_drug_to_gene(params, instance, h_gene)
        h_disease = mp_gene_to_disease(params, instance, h_disease, h_gene)
    drug_rows = np.array([params.drug_index[d] for d in instance.treatment])
    drug_part = params.drug_emb[drug_rows].mean(axis=0)
    return concat([drug_part, h_disease])


# -- VGAE pretraining of the gene GCN trunk ---------------------------------------------------


@dataclass
class VGAEParams:
    """Two shared trunk GCN layers, Gaussian heads, and a node decoder."""

    trunk: list[GCNLayerParams]
    mu_head: GCNLayerParams
    logvar_head: GCNLayerParams
    dec_w: Tensor
    dec_b: Tensor

    def named(self, prefix: str = "vgae") -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.trunk):
            out.update(layer.named(f"{prefix}.trunk{i}"))
        out.update(self.mu_head.named(f"{prefix}.mu"))
        out.update(self.logvar_head.named(f"{prefix}.logvar"))
        out[f"{prefix}.dec_w"] = self.dec_w
        out[f"{prefix}.dec_b"] = self.dec_b
        return out


def init_vgae(hidden_dim: int, rng: np.random.Generator,
              n_trunk_layers: int = 2) -> VGAEParams:
    d = hidden_dim
    bound = 1.0 / np.sqrt(d)
    return VGAEParams(
        trunk=[init_gcn_layer(d, d, rng) for _ in range(n_trunk_layers)],
        mu_head=init_gcn_layer(d, d, rng),
        logvar_head=init_gcn_layer(d, d, rng),
        dec_w=parameter(rng.uniform(-bound, bound, (d, 1))),
        dec_b=parameter(np.zeros(1)),
    )


def vgae_encode(params: VGAEParams, norm_adj: np.ndarray, features: Tensor
                ) -> tuple[Tensor, Tensor]:
    h = features
    for layer in params.trunk:
        h = gcn_forward(layer, norm_adj, h)
    mu = gcn_forward(params.mu_head, norm_adj, h, activation="identity")
    logvar = gcn_forward(params.logvar_head, norm_adj, h, activation="identity")
    return mu, logvar


def vgae_loss(params: VGAEParams, norm_adj: np.ndarray, features: Tensor | np.ndarray,
              expr_target: np.ndarray, pos_edges, neg_edges,
              noise: np.ndarray | None = None):
    """(total, node_recon, edge_recon, kl) on one tumor graph.

    `pos_edges`/`neg_edges` are (i, j) gene-index pairs; the KL term is
    weighted by 1/node_count. With `noise=None` the latent is the mean
    (deterministic evaluation); otherwise z = mu + sigma * noise.
    """
    features = as_tensor(features)
    n_nodes = features.shape[0]
    mu, logvar = vgae_encode(params, norm_adj, features)
    if noise is None:
        z = mu
    else:
        z = mu + (0.5 * logvar).exp() * Tensor(noise)

    decoded = (z @ params.dec_w + params.dec_b).reshape(-1)
    node_recon = mse_loss(decoded, np.asarray(expr_target, dtype=np.float64))

    pos = list(pos_edges)
    neg = list(neg_edges)
    pairs = pos + neg
    if not pairs:
        raise ValueError("edge reconstruction needs at least one edge")
    ii = np.array([p[0] for p in pairs])
    jj = np.array([p[1] for p in pairs])
    dots = (z[ii] * z[jj]).sum(axis=1)
    probs = dots.sigmoid()
    targets = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    edge_recon = bce_loss(probs, targets)

    kl = gaussian_kl_loss(mu, logvar)
    total = node_recon + edge_recon + (1.0 / n_nodes) * kl
    return total, node_recon, edge_recon, kl


def pretrain_vgae(params: VGAEParams, graph: GeneGraph, feature_fn, expr_rows,
                  epochs: int, seed: int, lr: float = 1e-2,
                  adjacency_threshold: float = ADJACENCY_THRESHOLD):
    """Train the VGAE over per-tumor feature matrices; returns the loss curve.

    `feature_fn(expr_row) -> (n_genes, D)` builds input features for one
    tumor (typically the encoder's input map, held fixed); `expr_rows`
    is the matrix of normalized expression rows, one per tumor. The
    trunk weights are mutated in place; reparameterization noise and
    negative sampling derive from `seed`.
    """
    from .data import negative_sample_edges

    norm_adj = gcn_norm_adjacency(graph, adjacency_threshold)
    pos_pairs = [(i, j) for (i, j), (a, b, w) in
                 zip(graph.edge_index_pairs(), graph.edges)
                 if w >= adjacency_threshold]
    if not pos_pairs:
        raise ValueError("gene graph has no edges at the GCN threshold")
    named = params.named()
    opt = AdamState(lr=lr)
    rng = np.random.default_rng(seed)
    n = graph.n_genes
    d = params.dec_w.shape[0]
    curve: list[float] = []
    for epoch in range(epochs):
        losses = []
        for row in expr_rows:
            neg = negative_sample_edges(graph, len(pos_pairs),
                                        seed=int(rng.integers(2 ** 31)))
            neg_pairs = [(graph.gene_index(a), graph.gene_index(b)) for a, b in neg]
            noise = rng.normal(size=(n, d))
            features = feature_fn(row)
            zero_grads(named)
            total, *_ = vgae_loss(params, norm_adj, features, row,
                                  pos_pairs, neg_pairs, noise=noise)
            if not np.isfinite(total.data.item()):
                raise NumericalError(f"VGAE loss diverged at epoch {epoch}")
            total.backward()
            adam_step(opt, named)
            losses.append(total.data.item())
        curve.append(float(np.mean(losses)))
    return curve
