"""Corrupt graphs with pseudo-labels for label-free pre-training.

A graph is broken into parts (the graphs themselves in multi-graph mode,
feature-space k-means clusters in single-graph mode). Each part receives
nodes sampled from the other parts; the injected nodes are labeled abnormal,
the part's own nodes normal, and the adjacency is sliced from the pool of all
parts so any pre-existing links between them survive.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from gcad.graphdata.graph import ABNORMAL, NORMAL, Dataset, Graph
from gcad.graphdata.split import make_split


@dataclass
class CorruptionConfig:
    corrupt_ratio: float = 0.15
    max_nodes_per_graph: int = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.corrupt_ratio < 1.0:
            raise ValueError(f"corrupt_ratio must lie in (0, 1), got {self.corrupt_ratio}")
        if self.max_nodes_per_graph is not None and self.max_nodes_per_graph < 2:
            raise ValueError("max_nodes_per_graph must be at least 2")


@dataclass
class ClusteringResult:
    k: int
    assignment: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list = field(default_factory=list)
    curve: dict = None


@dataclass(eq=False)
class CorruptGraph:
    graph: Graph
    provenance: list
    source_part: int
    pool_ids: np.ndarray
    truncated: bool = False

    @property
    def injected(self):
        return np.nonzero(self.graph.labels == ABNORMAL)[0]


@dataclass(eq=False)
class NodePool:
    """All nodes of all parts, with a sparse union adjacency."""

    features: np.ndarray
    adjacency: sparse.csr_matrix
    origin_graph: list
    origin_node: np.ndarray


# ----------------------------------------------------------------------------
# k-means


def _sq_dists(x, c):
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _seed_centroids(x, k, rng):
    """Farthest-point seeding from a random first point."""
    first = int(rng.integers(0, x.shape[0]))
    chosen = [first]
    dmin = _sq_dists(x, x[[first]])[:, 0]
    for _ in range(1, k):
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, _sq_dists(x, x[[nxt]])[:, 0])
    return x[chosen].copy()


def inertia_of(x, assignment, centroids):
    diff = x - centroids[assignment]
    return float((diff * diff).sum())


def kmeans(x, k, seed=0, max_iters=100):
    """Lloyd's algorithm from farthest-point seeding.

    An emptied cluster is re-seeded at the point lying farthest from its own
    centroid. ``history`` records inertia after every assignment step.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(x, k, rng)
    assignment = None
    history = []
    for _ in range(max_iters):
        new = np.argmin(_sq_dists(x, centroids), axis=1)
        history.append(inertia_of(x, new, centroids))
        if assignment is not None and np.array_equal(new, assignment):
            break
        assignment = new
        for j in range(k):
            members = assignment == j
            if members.any():
                centroids[j] = x[members].mean(axis=0)
        # re-seed empty clusters deterministically
        for j in range(k):
            if not (assignment == j).any():
                own = ((x - centroids[assignment]) ** 2).sum(1)
                far = int(np.argmax(own))
                assignment[far] = j
                centroids[j] = x[far]
                for jj in range(k):
                    members = assignment == jj
                    if members.any():
                        centroids[jj] = x[members].mean(axis=0)
    final = inertia_of(x, assignment, centroids)
    history.append(final)
    return ClusteringResult(k, assignment, centroids, final, history)


def inertia_curve(x, k_values, seed=0, max_iters=100):
    """k-means inertia for each K, forced nonincreasing with K.

    A run that lands above the previous K's inertia is replaced by that
    previous value (extra clusters can always reproduce the smaller solution).
    """
    curve = {}
    prev = math.inf
    for k in k_values:
        val = kmeans(x, k, seed=seed, max_iters=max_iters).inertia
        prev = min(prev, val)
        curve[k] = prev
    return curve


def elbow_select(curve, k_min=None):
    """Pick K where the inertia drop collapses.

    ``curve`` is a sequence of inertias for consecutive K starting at ``k_min``
    (default 1), or a dict K -> inertia. With gaps ``g(K) = I(K) - I(K+1)``,
    returns the interior K maximizing ``g(K-1) - g(K)``; ties go to the smaller
    K, and a curve with no positive second difference returns ``k_min``.
    """
    if isinstance(curve, dict):
        ks = sorted(curve)
        values = np.array([curve[k] for k in ks], dtype=np.float64)
        k_min = ks[0]
        if ks != list(range(k_min, k_min + len(ks))):
            raise ValueError("curve keys must be consecutive integers")
    else:
        values = np.asarray(curve, dtype=np.float64)
        k_min = 1 if k_min is None else k_min
    if values.size < 3:
        raise ValueError("elbow_select needs at least 3 points")
    if np.any(np.diff(values) > 1e-9 * max(1.0, abs(values[0]))):
        raise ValueError("inertia curve must be nonincreasing")
    gaps = values[:-1] - values[1:]
    tol = 1e-12 * max(1.0, abs(values[0]))
    if np.all(gaps < tol):
        return k_min
    second = gaps[:-1] - gaps[1:]
    if np.max(second) <= tol:
        return k_min
    return k_min + 1 + int(np.argmax(second))


# ----------------------------------------------------------------------------
# partitioning


def partition_single_graph(g, k, seed=0, max_iters=100, min_size=3):
    """Split ``g`` into induced subgraphs by k-means on its features.

    Clusters under ``min_size`` nodes merge into the cluster whose centroid is
    nearest to theirs. Labels of ``g`` are not used. Node indices of each part
    in ``g`` are returned alongside the parts.
    """
    if k == 1:
        idx = np.arange(g.num_nodes)
        return [g.subgraph(idx, f"{g.id}-p0")], [idx]
    res = kmeans(g.features, k, seed=seed, max_iters=max_iters)
    assign = res.assignment.copy()
    centroids = res.centroids
    while True:
        labels, counts = np.unique(assign, return_counts=True)
        small = labels[counts < min_size]
        if small.size == 0 or labels.size == 1:
            break
        j = small[np.argmin(counts[counts < min_size])]
        others = labels[labels != j]
        d = ((centroids[others] - centroids[j]) ** 2).sum(1)
        assign[assign == j] = others[int(np.argmin(d))]
    parts, index = [], []
    for new_id, lab in enumerate(np.unique(assign)):
        idx = np.nonzero(assign == lab)[0]
        parts.append(g.subgraph(idx, f"{g.id}-p{new_id}"))
        index.append(idx)
    return parts, index


def pool_from_graphs(graphs):
    """Pool disjoint graphs; returns the pool and per-part global indices."""
    feats, blocks, origin_graph, origin_node, parts = [], [], [], [], []
    offset = 0
    for g in graphs:
        feats.append(g.features)
        blocks.append(sparse.csr_matrix(g.adjacency))
        origin_graph.extend([g.id] * g.num_nodes)
        origin_node.append(np.arange(g.num_nodes))
        parts.append(np.arange(offset, offset + g.num_nodes))
        offset += g.num_nodes
    pool = NodePool(np.vstack(feats), sparse.block_diag(blocks, format="csr"), origin_graph,
                    np.concatenate(origin_node))
    return pool, parts


def pool_from_partition(g, part_index):
    pool = NodePool(g.features, sparse.csr_matrix(g.adjacency), [g.id] * g.num_nodes, np.arange(g.num_nodes))
    return pool, [np.asarray(p, dtype=np.int64) for p in part_index]


def injected_count(n, ratio):
    return max(1, math.floor(ratio * n + 0.5))


def _capped_size(n, ratio, cap):
    if cap is None:
        return n
    keep = n
    while keep > 1 and keep + injected_count(keep, ratio) > cap:
        keep -= 1
    return keep


def corrupt(parts, pool, config, part_names=None):
    """Build one ``CorruptGraph`` per part.

    ``parts`` holds global node indices into ``pool``. For each part,
    ``round(ratio * |part|)`` donors (at least one) are drawn uniformly without
    replacement from the other parts. Output order: part nodes, then injected.
    """
    if len(parts) < 2:
        raise ValueError("corrupt needs at least 2 parts")
    rng = np.random.default_rng(config.seed)
    all_ids = np.arange(pool.features.shape[0])
    owner = np.full(all_ids.size, -1)
    for pi, p in enumerate(parts):
        owner[p] = pi
    out = []
    for pi, part in enumerate(parts):
        part = np.asarray(part, dtype=np.int64)
        keep = _capped_size(part.size, config.corrupt_ratio, config.max_nodes_per_graph)
        if keep < part.size:
            part = np.sort(rng.choice(part, size=keep, replace=False))
        want = injected_count(part.size, config.corrupt_ratio)
        donors = all_ids[(owner != pi) & (owner >= 0)]
        truncated = False
        if donors.size < want:
            warnings.warn(f"part {pi}: donor pool has {donors.size} nodes, wanted {want}", RuntimeWarning,
                          stacklevel=2)
            want, truncated = donors.size, True
        chosen = np.sort(rng.choice(donors, size=want, replace=False))
        nodes = np.concatenate([part, chosen])
        a = pool.adjacency[nodes][:, nodes].toarray()
        labels = np.concatenate([np.full(part.size, NORMAL), np.full(chosen.size, ABNORMAL)])
        name = part_names[pi] if part_names is not None else f"part{pi:04d}"
        g = Graph(f"{name}-c", pool.features[nodes], a, labels)
        prov = [(part.size + i, pool.origin_graph[c], int(pool.origin_node[c])) for i, c in enumerate(chosen)]
        out.append(CorruptGraph(g, prov, pi, nodes, truncated))
    return out


def corrupt_dataset(ds, config, k=None, k_range=(2, 10), graphs=None):
    """Corrupt a dataset into a multi-graph pre-training dataset.

    Multi-graph datasets use their graphs (by default only the training split)
    as parts. Single-graph datasets are partitioned by k-means with K from
    ``k`` or elbow selection over ``k_range``. Returns the new ``Dataset``, the
    provenance map, and the chosen K (None in multi mode).
    """
    chosen_k = None
    if ds.mode == "multi":
        if graphs is None:
            graphs = ds.split_graphs("train") if ds.split is not None else ds.graphs
        pool, parts = pool_from_graphs(graphs)
        names = [g.id for g in graphs]
    else:
        g = ds.graphs[0]
        if k is None:
            lo, hi = k_range
            curve = inertia_curve(g.features, range(lo, hi + 1), seed=config.seed)
            k = elbow_select(curve)
        chosen_k = k
        _, index = partition_single_graph(g, k, seed=config.seed)
        pool, parts = pool_from_partition(g, index)
        names = [f"{g.id}-p{i}" for i in range(len(index))]
    cgs = corrupt(parts, pool, config, names)
    graphs_out = [c.graph for c in cgs]
    provenance = {c.graph.id: c.provenance for c in cgs}
    out = Dataset("multi", graphs_out)
    if len(graphs_out) >= 3:
        out = make_split(out, (0.8, 0.1, 0.1), seed=config.seed)
    return out, provenance, chosen_k
