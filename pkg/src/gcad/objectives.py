"""Training objectives: context contrastive loss, link constraint, CE baseline."""

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from gcad.diffmath import ops
from gcad.diffmath.tensor import Node, const
from gcad.errors import OneClassGraphError
from gcad.graphdata.graph import ABNORMAL, NORMAL

CLAMP = 1e-6
OBJECTIVES = ("contrastive", "cross-entropy")
SIMILARITIES = ("dot", "cosine")


@dataclass
class LossConfig:
    temperature: float = 0.1
    link_loss_weight: float = 0.2
    objective: str = "contrastive"
    similarity: str = "cosine"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.link_loss_weight < 0:
            raise ValueError("link_loss_weight must be nonnegative")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"similarity must be one of {SIMILARITIES}")

    def to_dict(self):
        return asdict(self)


@dataclass
class LossValues:
    contrastive: Node
    link: Node
    combined: Node
    link_empty: bool = False

    def floats(self):
        return {
            "contrastive": self.contrastive.item(),
            "link": self.link.item(),
            "combined": self.combined.item(),
        }


def _context_scores(H, q, temperature, similarity):
    if similarity == "cosine":
        return ops.scale(ops.row_cosine(H, q), 1.0 / temperature)
    return ops.scale(ops.matmul(H, ops.transpose(q)), 1.0 / temperature)


def contrastive_loss(H, q, labels, temperature, extra_negatives=None, similarity="dot"):
    """Mean over normal nodes of ``-log softmax`` of the positive score.

    Scores are ``q . h / temperature`` (``similarity="dot"``) or
    ``cosine(q, h) / temperature``. Each normal node's denominator holds its
    own score plus the score of every abnormal node. ``extra_negatives`` adds
    rows (e.g. nodes of other graphs in a batch) to every denominator without
    them being positives.
    """
    labels = np.asarray(labels)
    pos = np.nonzero(labels == NORMAL)[0]
    neg = np.nonzero(labels == ABNORMAL)[0]
    n_extra = 0 if extra_negatives is None else extra_negatives.shape[0]
    if pos.size == 0 or neg.size + n_extra == 0:
        raise OneClassGraphError(
            f"contrastive loss needs normal and abnormal nodes (got {pos.size} normal, {neg.size} abnormal); skip this graph"
        )
    scores = _context_scores(H, q, temperature, similarity)
    s_pos = ops.gather_rows(scores, pos)
    negs = []
    if neg.size:
        negs.append(ops.gather_rows(scores, neg))
    if n_extra:
        negs.append(_context_scores(extra_negatives, q, temperature, similarity))
    s_neg = negs[0] if len(negs) == 1 else ops.concat_rows(negs)
    # every positive row sees the same negative row vector
    ones = const(np.ones((pos.size, 1)))
    logits = ops.concat_cols([s_pos, ops.matmul(ones, ops.transpose(s_neg))])
    per_node = ops.sub(ops.logsumexp(logits, axis=1), s_pos)
    return ops.mean(per_node)


def _edge_classes(src, dst, labels):
    ys, yd = labels[src], labels[dst]
    normal = (ys == NORMAL) & (yd == NORMAL)
    suspicious = ((ys == NORMAL) & (yd == ABNORMAL)) | ((ys == ABNORMAL) & (yd == NORMAL))
    return np.nonzero(normal)[0], np.nonzero(suspicious)[0]


def link_loss(likelihoods, labels, return_empty=False):
    """Link-predictor constraint averaged over layers.

    ``likelihoods`` is a list of ``(src, dst, p)`` per layer. Per layer the loss
    is ``mean(-log p)`` over normal-normal edges plus ``mean(-log(1 - p))`` over
    normal-abnormal edges; edges touching an unlabeled node, and abnormal-abnormal
    edges, are ignored. With no labeled edges anywhere the loss is 0.
    """
    labels = np.asarray(labels)
    per_layer = []
    for src, dst, p in likelihoods:
        normal, suspicious = _edge_classes(np.asarray(src), np.asarray(dst), labels)
        terms = []
        pc = ops.clip(p, CLAMP, 1.0 - CLAMP)
        if normal.size:
            terms.append(ops.mean(ops.scale(ops.log(ops.gather_rows(pc, normal)), -1.0)))
        if suspicious.size:
            terms.append(ops.mean(ops.scale(ops.log(ops.sub(1.0, ops.gather_rows(pc, suspicious))), -1.0)))
        if terms:
            per_layer.append(terms[0] if len(terms) == 1 else ops.add(terms[0], terms[1]))
    if not per_layer:
        out = const(np.zeros((1, 1)))
        return (out, True) if return_empty else out
    total = per_layer[0]
    for t in per_layer[1:]:
        total = ops.add(total, t)
    out = ops.scale(total, 1.0 / len(likelihoods))
    return (out, False) if return_empty else out


def combined_loss(primary, link, link_loss_weight, link_empty=False):
    """``primary + link_loss_weight * link`` bundled as ``LossValues``."""
    return LossValues(primary, link, ops.add(primary, ops.scale(link, link_loss_weight)), link_empty)


def classifier_probability(H, params):
    return ops.sigmoid(ops.add(ops.matmul(H, params["cls.w"]), params["cls.b"]))


def cross_entropy_baseline(H, labels, params):
    """Mean binary cross-entropy of a linear-sigmoid node classifier."""
    labels = np.asarray(labels)
    idx = np.nonzero((labels == NORMAL) | (labels == ABNORMAL))[0]
    if idx.size == 0:
        raise OneClassGraphError("cross-entropy baseline needs labeled nodes")
    prob = ops.clip(ops.gather_rows(classifier_probability(H, params), idx), CLAMP, 1.0 - CLAMP)
    y = const(labels[idx].astype(np.float64).reshape(-1, 1))
    pos_term = ops.mul(y, ops.log(prob))
    neg_term = ops.mul(ops.sub(1.0, y), ops.log(ops.sub(1.0, prob)))
    return ops.scale(ops.mean(ops.add(pos_term, neg_term)), -1.0)


def compute_losses(result, params, labels, loss_config, extra_negatives=None):
    """All loss terms for one encoder ``ForwardResult``."""
    if loss_config.objective == "contrastive":
        primary = contrastive_loss(result.H, result.q, labels, loss_config.temperature, extra_negatives,
                                   loss_config.similarity)
    else:
        primary = cross_entropy_baseline(result.H, labels, params)
    if result.likelihoods:
        link, empty = link_loss(result.likelihoods, labels, return_empty=True)
    else:
        link, empty = const(np.zeros((1, 1))), True
    if empty and loss_config.link_loss_weight > 0 and result.likelihoods:
        warnings.warn("no labeled edges; link loss contributes 0", RuntimeWarning, stacklevel=2)
    return combined_loss(primary, link, loss_config.link_loss_weight, empty)
