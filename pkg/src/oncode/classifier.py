"""Responder classification from the graph embedding alone.

A three-layer MLP maps beta1 to a logit for the binary consolidated
mRECIST outcome (responder = CR/PR/SD). Used to compare pretrained vs
randomly initialized gene-GCN trunks.
"""

from __future__ import annotations

import numpy as np

from .dynamics import _gene_hidden_cache
from .errors import NumericalError
from .graph_encoder import encode_beta1
from .model import HEAD_CLASSIFIER, ModelBundle
from .nn import AdamState, adam_step, bce_loss, mlp_forward, zero_grads
from .tensor import Tensor, stack_rows


def _beta1_matrix(bundle: ModelBundle, examples) -> Tensor:
    cfg = bundle.hp.encoder_config()
    hidden = _gene_hidden_cache(bundle, examples)
    rows = []
    for ex in examples:
        adj = bundle.norm_adjacency(ex.instance.gene_graph)
        rows.append(encode_beta1(bundle.encoder, cfg, ex.instance, norm_adj=adj,
                                 gene_hidden=hidden[ex.instance.model_id]))
    return stack_rows(rows)


def classifier_probs(bundle: ModelBundle, examples) -> np.ndarray:
    """Responder probabilities for a list of examples."""
    if bundle.hp.head != HEAD_CLASSIFIER or bundle.classifier is None:
        raise ValueError("bundle has no classifier head")
    logits = mlp_forward(bundle.classifier, _beta1_matrix(bundle, examples))
    return logits.sigmoid().reshape(-1).data.copy()


def classifier_cross_entropy(bundle: ModelBundle, examples, labels) -> float:
    """Mean binary cross-entropy of predicted probabilities vs labels."""
    probs = classifier_probs(bundle, examples)
    return bce_loss(Tensor(probs), np.asarray(labels, float)).data.item()


def train_classifier(bundle: ModelBundle, examples, labels, *, epochs: int,
                     lr: float = 3e-3) -> list[float]:
    """Full-batch cross-entropy training of encoder + classifier head."""
    if bundle.hp.head != HEAD_CLASSIFIER:
        raise ValueError("bundle is not configured with the classifier head")
    if len(examples) != len(labels) or not examples:
        raise ValueError("need one label per example")
    targets = np.asarray(labels, dtype=np.float64)
    named = bundle.named_params()
    opt = AdamState(lr=lr)
    curve: list[float] = []
    for epoch in range(epochs):
        zero_grads(named)
        logits = mlp_forward(bundle.classifier, _beta1_matrix(bundle, examples))
        loss = bce_loss(logits.sigmoid().reshape(-1), targets)
        if not np.isfinite(loss.data.item()):
            raise NumericalError(f"classifier loss diverged at epoch {epoch}")
        loss.backward()
        adam_step(opt, named)
        curve.append(loss.data.item())
    return curve
