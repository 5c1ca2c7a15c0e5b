"""Scoring, ranking metrics and similarity-distribution analysis."""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from gcad.diffmath import ops
from gcad.encoder import forward
from gcad.errors import OneClassGraphError
from gcad.graphdata.graph import ABNORMAL, NORMAL, UNLABELED
from gcad.objectives import classifier_probability

HIST_BINS = np.linspace(-1.0, 1.0, 21)
PAIR_GROUPS = ("N-N", "AB-AB", "N-AB")
CONTEXT_GROUPS = ("N-GL", "AB-GL")


# ----------------------------------------------------------------------------
# metrics


def auc(scores, labels):
    """ROC AUC via the Mann-Whitney rank sum; ties count one half.

    Higher scores mean more anomalous. Raises ``OneClassGraphError`` if either
    class is missing.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == ABNORMAL
    neg = labels == NORMAL
    m, n = int(pos.sum()), int(neg.sum())
    if m == 0 or n == 0:
        raise OneClassGraphError(f"AUC needs both classes (got {m} abnormal, {n} normal)")
    keep = pos | neg
    ranks = rankdata(scores[keep])
    rank_sum = float(ranks[pos[keep]].sum())
    return (rank_sum - m * (m + 1) / 2.0) / (m * n)


def average_precision(scores, labels, node_ids=None):
    """Average precision of the abnormal class over the descending-score ranking.

    Ties are broken by ascending ``node_ids`` (defaults to position).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    keep = (labels == ABNORMAL) | (labels == NORMAL)
    ids = np.arange(scores.size) if node_ids is None else np.asarray(node_ids)
    scores, labels, ids = scores[keep], labels[keep], ids[keep]
    total = int((labels == ABNORMAL).sum())
    if total == 0:
        raise OneClassGraphError("average precision needs at least one abnormal node")
    order = np.lexsort((ids, -scores))
    hits = (labels[order] == ABNORMAL)
    ranks = np.nonzero(hits)[0] + 1
    found = np.arange(1, total + 1)
    return math.fsum((found / ranks).tolist()) / total


map_score = average_precision


# ----------------------------------------------------------------------------
# scoring


@dataclass
class ScoreTable:
    graph_ids: list
    node_ids: np.ndarray
    scores: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.node_ids)

    def by_graph(self):
        gids = np.asarray(self.graph_ids)
        for gid in dict.fromkeys(self.graph_ids):
            sel = gids == gid
            yield gid, self.node_ids[sel], self.scores[sel], self.labels[sel]

    @staticmethod
    def concat(tables):
        return ScoreTable(
            [g for t in tables for g in t.graph_ids],
            np.concatenate([t.node_ids for t in tables]) if tables else np.zeros(0, dtype=np.int64),
            np.concatenate([t.scores for t in tables]) if tables else np.zeros(0),
            np.concatenate([t.labels for t in tables]) if tables else np.zeros(0, dtype=np.int64),
        )

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["graph_id", "node_id", "score", "label"])
            for gid, nid, s, y in zip(self.graph_ids, self.node_ids, self.scores, self.labels):
                w.writerow([gid, int(nid), repr(float(s)), int(y)])

    @staticmethod
    def read_csv(path):
        gids, nids, scores, labels = [], [], [], []
        with open(path, newline="", encoding="utf-8") as fh:
            rows = csv.DictReader(fh)
            for row in rows:
                gids.append(row["graph_id"])
                nids.append(int(row["node_id"]))
                scores.append(float(row["score"]))
                labels.append(int(row["label"]))
        return ScoreTable(gids, np.array(nids, dtype=np.int64), np.array(scores), np.array(labels, dtype=np.int64))


def embed(g, ckpt, params=None):
    """Evaluation-mode forward pass returning the ``ForwardResult``."""
    params = ckpt.params if params is None else params
    return forward(g, params, ckpt.model, training=False)


def node_scores(g, ckpt, params=None):
    """Anomaly score per node of ``g``; higher is more anomalous.

    Contrastive models score ``1 - cosine(h_i, q)``; cross-entropy models score the
    predicted abnormal probability.
    """
    params = ckpt.params if params is None else params
    result = embed(g, ckpt, params)
    if ckpt.loss.objective == "cross-entropy":
        return classifier_probability(result.H, params).value[:, 0]
    return 1.0 - ops.row_cosine(result.H, result.q).value[:, 0]


def score(g, ckpt, params=None, nodes=None):
    """``ScoreTable`` over the labeled nodes of ``g`` (optionally restricted to ``nodes``)."""
    s = node_scores(g, ckpt, params)
    mask = g.labels != UNLABELED
    if nodes is not None:
        sub = np.zeros_like(mask)
        sub[np.asarray(nodes, dtype=np.int64)] = True
        mask &= sub
    idx = np.nonzero(mask)[0]
    return ScoreTable([g.id] * idx.size, idx, s[idx], g.labels[idx].copy())


@dataclass
class MetricReport:
    per_graph: dict = field(default_factory=dict)
    auc: float = float("nan")
    map: float = float("nan")
    skipped: int = 0
    evaluated: int = 0

    def to_dict(self):
        return {
            "auc": self.auc,
            "map": self.map,
            "evaluated_graphs": self.evaluated,
            "skipped_graphs": self.skipped,
            "tie_rule": "descending score, ties by ascending node id",
            "per_graph": self.per_graph,
        }

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def evaluate(table):
    """Per-graph AUC/MAP and their unweighted mean; one-class graphs are skipped."""
    report = MetricReport()
    aucs, maps = [], []
    for gid, nids, s, y in table.by_graph():
        try:
            a = auc(s, y)
            ap = average_precision(s, y, nids)
        except OneClassGraphError:
            report.skipped += 1
            continue
        report.per_graph[gid] = {"auc": a, "map": ap}
        aucs.append(a)
        maps.append(ap)
    report.evaluated = len(aucs)
    if aucs:
        report.auc = math.fsum(aucs) / len(aucs)
        report.map = math.fsum(maps) / len(maps)
    return report


# ----------------------------------------------------------------------------
# similarity analysis


def _cosine_matrix(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    ok = norms[:, 0] >= 1e-12
    unit = np.where(norms >= 1e-12, x / np.where(norms >= 1e-12, norms, 1.0), 0.0)
    sim = unit @ unit.T
    sim[~ok, :] = 0.0
    sim[:, ~ok] = 0.0
    return np.clip(sim, -1.0, 1.0)


def similarity_groups(x, labels, context=None):
    """Cosine similarities per group for one graph.

    Pair groups use unordered node pairs; context groups compare each node with
    ``context`` (defaults to the feature mean).
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if context is None:
        context = x.mean(axis=0)
    context = np.asarray(context, dtype=np.float64).reshape(1, -1)
    sim = _cosine_matrix(x)
    iu, ju = np.triu_indices(x.shape[0], k=1)
    yi, yj = labels[iu], labels[ju]
    vals = sim[iu, ju]
    groups = {
        "N-N": vals[(yi == NORMAL) & (yj == NORMAL)],
        "AB-AB": vals[(yi == ABNORMAL) & (yj == ABNORMAL)],
        "N-AB": vals[((yi == NORMAL) & (yj == ABNORMAL)) | ((yi == ABNORMAL) & (yj == NORMAL))],
    }
    ctx = _cosine_matrix(np.vstack([context, x]))[0, 1:]
    groups["N-GL"] = ctx[labels == NORMAL]
    groups["AB-GL"] = ctx[labels == ABNORMAL]
    return groups


@dataclass
class SimilarityReport:
    groups: dict
    bins: np.ndarray = field(default_factory=lambda: HIST_BINS.copy())

    def histogram(self, name):
        counts, _ = np.histogram(self.groups[name], bins=self.bins)
        return counts

    def mean(self, name):
        v = self.groups[name]
        return float(v.mean()) if v.size else float("nan")

    def empty(self, name):
        return self.groups[name].size == 0

    @property
    def context_gap(self):
        """mean(N-GL) - mean(AB-GL)."""
        return self.mean("N-GL") - self.mean("AB-GL")

    def write_csv(self, path):
        names = PAIR_GROUPS + CONTEXT_GROUPS
        hists = {k: self.histogram(k) for k in names}
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", *names])
            for b in range(len(self.bins) - 1):
                w.writerow([f"{self.bins[b]:.2f}", f"{self.bins[b + 1]:.2f}", *[int(hists[k][b]) for k in names]])

    def summary(self):
        names = PAIR_GROUPS + CONTEXT_GROUPS
        return {k: {"count": int(self.groups[k].size), "mean": self.mean(k), "empty": self.empty(k)} for k in names}


def similarity_analysis(items):
    """Pool ``similarity_groups`` over ``(x, labels, context)`` triples."""
    items = list(items)
    if not items:
        raise ValueError("similarity_analysis needs at least one graph")
    pooled = {k: [] for k in PAIR_GROUPS + CONTEXT_GROUPS}
    for x, labels, context in items:
        for k, v in similarity_groups(x, labels, context).items():
            pooled[k].append(v)
    return SimilarityReport({k: np.concatenate(v) for k, v in pooled.items()})


def raw_similarity(graphs):
    return similarity_analysis((g.features, g.labels, None) for g in graphs)


def embedding_similarity(graphs, ckpt):
    out = []
    for g in graphs:
        r = embed(g, ckpt)
        out.append((r.H.value, g.labels, r.q.value))
    return similarity_analysis(out)
