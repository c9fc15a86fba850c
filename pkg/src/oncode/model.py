"""Model bundle: hyperparameters, vocabularies, and parameter groups.

A bundle holds every trainable tensor of one configured model —
graph encoder (optional), volume encoder, and either the neural-ODE
head or the responder-classifier head — addressable through one ordered
name -> Tensor mapping used by the optimizer and checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .data import BipartiteEdges, GeneGraph
from .errors import ConfigError
from .graph_encoder import EncoderConfig, EncoderParams, init_encoder
from .nn import MLPParams, init_mlp
from .tensor import Tensor, parameter
from .volume_encoder import RNNParams, init_rnn

HEAD_DYNAMICS = "dynamics"
HEAD_CLASSIFIER = "classifier"


@dataclass
class ModelHyperparams:
    hidden_dim: int = 32            # D: graph-encoder width
    gcn_layers: int = 2
    mp_steps: int = 1
    volume_hidden: int = 16         # D_v: window-embedding width
    y_dim: int = 2                  # ODE state size, capped by the TGI model
    f_hidden: tuple = (32, 32)
    decoder_hidden: int = 16
    solver_step: float = 0.25       # days per internal RK4 substep
    use_graph_encoder: bool = True
    head: str = HEAD_DYNAMICS
    adjacency_threshold: float = 0.5
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.f_hidden = tuple(self.f_hidden)
        if self.y_dim > 2:
            raise ConfigError("y_dim is capped at 2 (the TGI model's state size)")
        if self.y_dim < 1:
            raise ConfigError("y_dim must be at least 1")
        if self.head not in (HEAD_DYNAMICS, HEAD_CLASSIFIER):
            raise ConfigError(f"unknown head '{self.head}'")
        if self.head == HEAD_CLASSIFIER and not self.use_graph_encoder:
            raise ConfigError("the classifier head consumes the graph embedding; "
                              "use_graph_encoder must stay enabled")

    @property
    def beta_dim(self) -> int:
        graph_part = 2 * self.hidden_dim if self.use_graph_encoder else 0
        return graph_part + self.volume_hidden

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(hidden_dim=self.hidden_dim, gcn_layers=self.gcn_layers,
                             mp_steps=self.mp_steps,
                             adjacency_threshold=self.adjacency_threshold,
                             leaky_slope=self.leaky_slope)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["f_hidden"] = list(self.f_hidden)
        return d


@dataclass(frozen=True)
class Vocab:
    genes: tuple[str, ...]
    drugs: tuple[str, ...]
    diseases: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"genes": list(self.genes), "drugs": list(self.drugs),
                "diseases": list(self.diseases)}


def build_vocab(gene_graph: GeneGraph, drug_gene: BipartiteEdges,
                disease_gene: BipartiteEdges, experiments=()) -> Vocab:
    """Vocabularies over everything the embedding tables must cover,
    including treatment drugs that have no known targets."""
    drugs = set(drug_gene.left_ids)
    diseases = set(disease_gene.left_ids)
    for exp in experiments:
        drugs.update(exp.treatment)
        diseases.add(exp.disease_id)
    return Vocab(genes=gene_graph.genes,
                 drugs=tuple(sorted(drugs)),
                 diseases=tuple(sorted(diseases)))


@dataclass
class NODEParams:
    """State derivative network, initial-state projection, and decoder."""

    f: MLPParams
    init_w: Tensor
    init_b: Tensor
    decoder: MLPParams

    def __post_init__(self):
        if len(self.decoder.weights) != 2:
            raise ConfigError("decoder must have exactly two layers")

    @property
    def y_dim(self) -> int:
        return self.init_w.shape[1]

    def named(self, prefix: str = "node") -> dict[str, Tensor]:
        out = self.f.named(f"{prefix}.f")
        out[f"{prefix}.init_w"] = self.init_w
        out[f"{prefix}.init_b"] = self.init_b
        out.update(self.decoder.named(f"{prefix}.dec"))
        return out


def init_node(hp: ModelHyperparams, rng: np.random.Generator) -> NODEParams:
    beta_dim = hp.beta_dim
    dims = [hp.y_dim + beta_dim, *hp.f_hidden, hp.y_dim]
    acts = ["tanh"] * len(hp.f_hidden) + ["identity"]
    bound = 1.0 / np.sqrt(beta_dim)
    return NODEParams(
        f=init_mlp(dims, acts, rng),
        init_w=parameter(rng.uniform(-bound, bound, (beta_dim, hp.y_dim))),
        init_b=parameter(np.zeros(hp.y_dim)),
        decoder=init_mlp([hp.y_dim, hp.decoder_hidden, 1], ["tanh", "identity"], rng),
    )


def init_classifier(hp: ModelHyperparams, rng: np.random.Generator) -> MLPParams:
    # three-layer MLP on the graph embedding, one logit out
    return init_mlp([2 * hp.hidden_dim, 32, 16, 1],
                    ["relu", "relu", "identity"], rng)


@dataclass
class ModelBundle:
    hp: ModelHyperparams
    vocab: Vocab
    encoder: EncoderParams | None = None
    volume: RNNParams | None = None
    node: NODEParams | None = None
    classifier: MLPParams | None = None
    norm_adj_cache: dict = field(default_factory=dict, repr=False)

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.encoder is not None:
            out.update(self.encoder.named("enc"))
        if self.volume is not None:
            out.update(self.volume.named("vol"))
        if self.node is not None:
            out.update(self.node.named("node"))
        if self.classifier is not None:
            out.update(self.classifier.named("clf"))
        return out

    def norm_adjacency(self, graph: GeneGraph) -> np.ndarray:
        from .graph_encoder import gcn_norm_adjacency

        key = id(graph)
        if key not in self.norm_adj_cache:
            self.norm_adj_cache[key] = gcn_norm_adjacency(
                graph, self.hp.adjacency_threshold)
        return self.norm_adj_cache[key]


def build_bundle(hp: ModelHyperparams, vocab: Vocab, seed: int) -> ModelBundle:
    """Deterministic parameter initialization for the configured head.

    Creation order is fixed (encoder, volume, head) so identical seeds
    give identical parameters.
    """
    rng = np.random.default_rng(seed)
    encoder = None
    if hp.use_graph_encoder:
        encoder = init_encoder(hp.encoder_config(), vocab.genes, vocab.drugs,
                               vocab.diseases, rng)
    volume = node = classifier = None
    if hp.head == HEAD_DYNAMICS:
        volume = init_rnn(hp.volume_hidden, rng)
        node = init_node(hp, rng)
    else:
        classifier = init_classifier(hp, rng)
    return ModelBundle(hp=hp, vocab=vocab, encoder=encoder, volume=volume,
                       node=node, classifier=classifier)


def bundle_from_tensors(hp: ModelHyperparams, vocab: Vocab,
                        tensors: dict[str, Tensor]) -> ModelBundle:
    """Wire existing tensors (e.g. gradient-check leaves) into a bundle.

    The mapping must use the exact names `named_params` produces for this
    configuration.
    """
    from .graph_encoder import BGALayerParams, GCNLayerParams, EncoderParams

    encoder = None
    if hp.use_graph_encoder:
        encoder = EncoderParams(
            expr_w=tensors["enc.expr_w"], expr_b=tensors["enc.expr_b"],
            gene_emb=tensors["enc.gene_emb"], drug_emb=tensors["enc.drug_emb"],
            disease_emb=tensors["enc.disease_emb"],
            gcn=[GCNLayerParams(weight=tensors[f"enc.gcn{i}.w"],
                                bias=tensors[f"enc.gcn{i}.b"])
                 for i in range(hp.gcn_layers)],
            bga_drug_gene=BGALayerParams(
                wu=tensors["enc.bga_dg.wu"], wv=tensors["enc.bga_dg.wv"],
                a=tensors["enc.bga_dg.a"], leaky_slope=hp.leaky_slope),
            bga_gene_disease=BGALayerParams(
                wu=tensors["enc.bga_gd.wu"], wv=tensors["enc.bga_gd.wv"],
                a=tensors["enc.bga_gd.a"], leaky_slope=hp.leaky_slope),
            drug_index={d: i for i, d in enumerate(vocab.drugs)},
            disease_index={d: i for i, d in enumerate(vocab.diseases)},
        )
    volume = node = classifier = None
    if hp.head == HEAD_DYNAMICS:
        from .volume_encoder import RNNParams

        volume = RNNParams(**{k: tensors[f"vol.{k}"]
                              for k in ("wz", "uz", "bz", "wr", "ur", "br",
                                        "wh", "uh", "bh", "wo", "bo")})
        n_f = len(hp.f_hidden) + 1
        node = NODEParams(
            f=MLPParams([tensors[f"node.f.w{i}"] for i in range(n_f)],
                        [tensors[f"node.f.b{i}"] for i in range(n_f)],
                        ["tanh"] * len(hp.f_hidden) + ["identity"]),
            init_w=tensors["node.init_w"], init_b=tensors["node.init_b"],
            decoder=MLPParams([tensors["node.dec.w0"], tensors["node.dec.w1"]],
                              [tensors["node.dec.b0"], tensors["node.dec.b1"]],
                              ["tanh", "identity"]),
        )
    else:
        classifier = MLPParams([tensors[f"clf.w{i}"] for i in range(3)],
                               [tensors[f"clf.b{i}"] for i in range(3)],
                               ["relu", "relu", "identity"])
    return ModelBundle(hp=hp, vocab=vocab, encoder=encoder, volume=volume,
                       node=node, classifier=classifier)


def load_pretrained_trunk(bundle: ModelBundle, trunk_weights: dict[str, np.ndarray]
                          ) -> None:
    """Copy VGAE trunk GCN weights into the encoder's gene-GCN layers.

    Only the trunk transfers; bipartite attention layers and embedding
    tables keep their seeded initialization.
    """
    if bundle.encoder is None:
        raise ConfigError("cannot load a pretrained trunk without the graph encoder")
    for i, layer in enumerate(bundle.encoder.gcn):
        try:
            w = trunk_weights[f"vgae.trunk{i}.w"]
            b = trunk_weights[f"vgae.trunk{i}.b"]
        except KeyError:
            raise ConfigError(
                f"pretrained checkpoint lacks trunk layer {i} "
                f"(encoder has {len(bundle.encoder.gcn)} GCN layers)") from None
        if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
            raise ConfigError(f"trunk layer {i} shape mismatch: checkpoint "
                              f"{w.shape}, encoder {layer.weight.shape}")
        layer.weight.data = np.array(w, dtype=np.float64)
        layer.bias.data = np.array(b, dtype=np.float64)
