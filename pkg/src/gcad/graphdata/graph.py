"""In-memory graph and dataset types with invariant checks."""

from dataclasses import dataclass, field

import numpy as np

from gcad.errors import DataError

UNLABELED = -1
NORMAL = 0
ABNORMAL = 1

SYMMETRY_TOL = 1e-12


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """A node-attributed undirected graph.

    ``labels`` holds 0 (normal), 1 (abnormal) or -1 (unlabeled) per node.
    Arrays are made read-only on construction.
    """

    id: str
    features: np.ndarray
    adjacency: np.ndarray
    labels: np.ndarray = None

    def __post_init__(self):
        x = _frozen(self.features, np.float64)
        if x.ndim == 1:
            x = _frozen(x.reshape(-1, 1), np.float64)
        a = _frozen(self.adjacency, np.float64)
        n = x.shape[0]
        labels = self.labels
        if labels is None:
            labels = np.full(n, UNLABELED)
        y = _frozen(labels, np.int64)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "labels", y)
        validate_graph(self)

    @property
    def num_nodes(self):
        return self.features.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def edges(self):
        """Upper-triangle edge list ``(src, dst, weight)`` with src < dst."""
        src, dst = np.nonzero(np.triu(self.adjacency, k=1))
        return src, dst, self.adjacency[src, dst]

    @property
    def num_edges(self):
        return int(np.count_nonzero(np.triu(self.adjacency, k=1)))

    def with_labels(self, labels):
        return Graph(self.id, self.features, self.adjacency, labels)

    def with_features(self, features):
        return Graph(self.id, features, self.adjacency, self.labels)

    def subgraph(self, nodes, new_id=None):
        """Induced subgraph on ``nodes`` (in the given order)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        return Graph(
            new_id or self.id,
            self.features[nodes],
            self.adjacency[np.ix_(nodes, nodes)],
            self.labels[nodes],
        )


def validate_graph(g):
    x, a, y = g.features, g.adjacency, g.labels
    n = x.shape[0]
    if x.ndim != 2:
        raise DataError(f"graph {g.id}: features must be 2-D, got shape {x.shape}")
    if a.shape != (n, n):
        raise DataError(f"graph {g.id}: adjacency shape {a.shape} does not match {n} nodes")
    if y.shape != (n,):
        raise DataError(f"graph {g.id}: {y.shape[0]} labels for {n} nodes")
    if not np.all(np.isfinite(x)):
        raise DataError(f"graph {g.id}: non-finite feature values")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise DataError(f"graph {g.id}: adjacency must be finite and nonnegative")
    if n and np.any(np.diag(a) != 0):
        raise DataError(f"graph {g.id}: adjacency has nonzero diagonal")
    if n and np.max(np.abs(a - a.T)) > SYMMETRY_TOL:
        raise DataError(f"graph {g.id}: adjacency is not symmetric")
    bad = ~np.isin(y, (UNLABELED, NORMAL, ABNORMAL))
    if np.any(bad):
        raise DataError(f"graph {g.id}: label {y[bad][0]} outside {{-1, 0, 1}}")


@dataclass(eq=False)
class Dataset:
    """A collection of graphs plus a train/valid/test split.

    In ``multi`` mode the split lists graph ids; in ``single`` mode it lists
    node ids of the one graph.
    """

    mode: str
    graphs: list
    split: dict = field(default=None)

    def __post_init__(self):
        if self.mode not in ("multi", "single"):
            raise DataError(f"unknown dataset mode {self.mode!r}")
        if self.mode == "multi" and len(self.graphs) < 2:
            raise DataError("multi-graph dataset needs at least 2 graphs")
        if self.mode == "single" and len(self.graphs) != 1:
            raise DataError(f"single-graph dataset needs exactly 1 graph, got {len(self.graphs)}")
        ids = [g.id for g in self.graphs]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate graph ids")
        dims = {g.feature_dim for g in self.graphs}
        if len(dims) > 1:
            raise DataError(f"graphs disagree on feature dim: {sorted(dims)}")
        if self.split is not None:
            self.split = validate_split(self, self.split)

    @property
    def feature_dim(self):
        return self.graphs[0].feature_dim

    def graph(self, gid):
        for g in self.graphs:
            if g.id == gid:
                return g
        raise KeyError(gid)

    def units(self):
        """All splittable units: graph ids (multi) or labeled node ids (single)."""
        if self.mode == "multi":
            return [g.id for g in self.graphs]
        g = self.graphs[0]
        return [int(i) for i in np.nonzero(g.labels != UNLABELED)[0]]

    def split_graphs(self, part):
        """Graphs in ``part`` (multi mode)."""
        if self.mode != "multi":
            raise ValueError("split_graphs is only defined for multi-graph datasets")
        wanted = set(self.split[part])
        return [g for g in self.graphs if g.id in wanted]

    def split_mask(self, part):
        """Boolean node mask of ``part`` (single mode)."""
        if self.mode != "single":
            raise ValueError("split_mask is only defined for single-graph datasets")
        mask = np.zeros(self.graphs[0].num_nodes, dtype=bool)
        mask[np.asarray(self.split[part], dtype=np.int64)] = True
        return mask


def validate_split(ds, split):
    parts = ("train", "valid", "test")
    missing = [p for p in parts if p not in split]
    if missing:
        raise DataError(f"split is missing {missing}")
    if ds.mode == "multi":
        split = {p: [str(u) for u in split[p]] for p in parts}
        known = {g.id for g in ds.graphs}
    else:
        split = {p: [int(u) for u in split[p]] for p in parts}
        known = set(range(ds.graphs[0].num_nodes))
    seen = set()
    for p in parts:
        for u in split[p]:
            if u not in known:
                raise DataError(f"split {p!r} references unknown unit {u!r}")
            if u in seen:
                raise DataError(f"unit {u!r} appears in more than one split")
            seen.add(u)
    uncovered = set(ds.units()) - seen
    if uncovered:
        raise DataError(f"split does not cover unit {sorted(uncovered)[0]!r}")
    if ds.mode == "single":
        y = ds.graphs[0].labels
        unlabeled = [u for u in seen if y[u] == UNLABELED]
        if unlabeled:
            raise DataError(f"split references unlabeled node {unlabeled[0]}")
    return split
