"""Dataset directory format.

Layout::

    manifest.json            {"mode": "multi"|"single", "graphs": [ids], "feature_dim": d}
    splits.json              {"train": [...], "valid": [...], "test": [...]}   (optional)
    <graph-id>/nodes.csv     node_id,label        (label in {0, 1, -1})
    <graph-id>/edges.csv     src,dst,weight       (each undirected edge once)
    <graph-id>/features.f64  uint64 N, uint64 d, then N*d float64, little-endian
    <graph-id>/provenance.csv  injected_node_id,source_graph,source_node  (corrupt graphs only)
"""

import csv
import json
import struct
from pathlib import Path

import numpy as np

from gcad.errors import DataError
from gcad.graphdata.graph import Dataset, Graph

_HEADER = struct.Struct("<QQ")


def write_features(path, x):
    x = np.ascontiguousarray(x, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*x.shape))
        fh.write(x.tobytes())


def read_features(path):
    path = Path(path)
    if not path.exists():
        raise DataError("missing file", path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError("truncated header", path)
    n, d = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size:]
    if len(body) != n * d * 8:
        raise DataError(f"expected {n}x{d} float64 values, found {len(body)} bytes", path)
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(n, d)


def _read_csv(path, header):
    path = Path(path)
    if not path.exists():
        raise DataError("missing file", path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != header:
        raise DataError(f"expected header {','.join(header)}", path, 1)
    return [(lineno, row) for lineno, row in enumerate(rows[1:], start=2) if row]


def read_nodes(path):
    labels = []
    for lineno, row in _read_csv(path, ["node_id", "label"]):
        if len(row) != 2:
            raise DataError(f"expected 2 fields, got {len(row)}", path, lineno)
        try:
            nid, lab = int(row[0]), int(row[1])
        except ValueError:
            raise DataError(f"non-integer field in {row}", path, lineno) from None
        if nid != len(labels):
            raise DataError(f"node ids must be dense 0..N-1, got {nid} at position {len(labels)}", path, lineno)
        if lab not in (-1, 0, 1):
            raise DataError(f"label {lab} outside {{0, 1, -1}}", path, lineno)
        labels.append(lab)
    return np.array(labels, dtype=np.int64)


def read_edges(path, n):
    """Read an edge list into a dense symmetric matrix.

    Repeated rows for the same direction are separate relations and their
    weights add up. A pair listed in both directions must carry equal weight.
    """
    directed = {}
    first_line = {}
    for lineno, row in _read_csv(path, ["src", "dst", "weight"]):
        if len(row) != 3:
            raise DataError(f"expected 3 fields, got {len(row)}", path, lineno)
        try:
            s, d, w = int(row[0]), int(row[1]), float(row[2])
        except ValueError:
            raise DataError(f"malformed row {row}", path, lineno) from None
        if not (0 <= s < n and 0 <= d < n):
            raise DataError(f"edge ({s}, {d}) references a node outside 0..{n - 1}", path, lineno)
        if s == d:
            raise DataError(f"self-loop on node {s}", path, lineno)
        if not (w > 0 and np.isfinite(w)):
            raise DataError(f"edge weight must be positive, got {w}", path, lineno)
        directed[(s, d)] = directed.get((s, d), 0.0) + w
        first_line.setdefault((s, d), lineno)
    a = np.zeros((n, n))
    for (s, d), w in directed.items():
        back = directed.get((d, s))
        if back is not None and back != w:
            line = max(first_line[(s, d)], first_line[(d, s)])
            raise DataError(f"asymmetric adjacency: ({s},{d})={w} but ({d},{s})={back}", path, line)
        a[s, d] = a[d, s] = w
    return a


def read_provenance(path):
    rows = []
    for lineno, row in _read_csv(path, ["injected_node_id", "source_graph", "source_node"]):
        if len(row) != 3:
            raise DataError(f"expected 3 fields, got {len(row)}", path, lineno)
        rows.append((int(row[0]), row[1], int(row[2])))
    return rows


def load_graph(root, gid):
    gdir = Path(root) / gid
    labels = read_nodes(gdir / "nodes.csv")
    x = read_features(gdir / "features.f64")
    if x.shape[0] != labels.shape[0]:
        raise DataError(f"{x.shape[0]} feature rows for {labels.shape[0]} nodes", gdir / "features.f64")
    a = read_edges(gdir / "edges.csv", labels.shape[0])
    return Graph(gid, x, a, labels)


def load_dataset(path):
    """Load and validate a dataset directory; raises ``DataError`` on any defect."""
    root = Path(path)
    if not root.is_dir():
        raise DataError("dataset directory does not exist", root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataError("missing file", manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        mode, ids, dim = manifest["mode"], manifest["graphs"], int(manifest["feature_dim"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed manifest: {exc}", manifest_path) from None
    graphs = []
    for gid in ids:
        g = load_graph(root, str(gid))
        if g.feature_dim != dim:
            raise DataError(f"feature dim {g.feature_dim} != manifest {dim}", root / str(gid) / "features.f64")
        graphs.append(g)
    split = None
    split_path = root / "splits.json"
    if split_path.exists():
        try:
            split = json.loads(split_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed splits: {exc}", split_path) from None
    try:
        return Dataset(mode, graphs, split)
    except DataError as exc:
        raise DataError(str(exc), root) from None


def save_graph(root, g, provenance=None):
    gdir = Path(root) / g.id
    gdir.mkdir(parents=True, exist_ok=True)
    with open(gdir / "nodes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "label"])
        for i, lab in enumerate(g.labels):
            w.writerow([i, int(lab)])
    src, dst, wt = g.edges()
    with open(gdir / "edges.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "weight"])
        for s, d, x in zip(src, dst, wt):
            w.writerow([int(s), int(d), repr(float(x))])
    write_features(gdir / "features.f64", g.features)
    if provenance is not None:
        with open(gdir / "provenance.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["injected_node_id", "source_graph", "source_node"])
            for row in provenance:
                w.writerow([int(row[0]), row[1], int(row[2])])


def save_dataset(ds, path, provenance=None):
    """Write ``ds`` to ``path``. ``provenance`` maps graph id to injected-node rows."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"mode": ds.mode, "graphs": [g.id for g in ds.graphs], "feature_dim": ds.feature_dim}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    for g in ds.graphs:
        save_graph(root, g, None if provenance is None else provenance.get(g.id))
    if ds.split is not None:
        (root / "splits.json").write_text(json.dumps(ds.split, indent=2) + "\n", encoding="utf-8")
    return root
