"""Planted-anomaly synthetic benchmarks.

Normal nodes of a graph come from that graph's own Gaussian mixture. In
multi-graph mode an abnormal node is drawn from another graph's mixture; in
single-graph mode from a shifted foreign mixture. Normal nodes link within
their cluster (``p_in``) and sparsely across clusters (``p_between``);
suspicious links join normal and abnormal nodes with probability ``p_sus``.
"""

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from gcad.graphdata.graph import Dataset, Graph
from gcad.graphdata.io import save_dataset
from gcad.graphdata.split import make_split


@dataclass
class SynthConfig:
    mode: str = "multi"
    graphs: int = 55
    nodes_min: int = 90
    nodes_max: int = 110
    feature_dim: int = 16
    normal_clusters: int = 3
    anomaly_fraction: float = 0.1
    p_in: float = 0.15
    p_between: float = 0.01
    p_sus: float = 0.0077
    shared_scale: float = 1.0
    graph_spread: float = 0.7
    cluster_spread: float = 0.6
    noise: float = 1.0
    foreign_shift: float = 1.5
    split: list = field(default_factory=lambda: [40 / 55, 5 / 55, 10 / 55])
    seed: int = 0

    def __post_init__(self):
        for name in ("p_in", "p_between", "p_sus"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.anomaly_fraction < 0.5:
            raise ValueError(f"anomaly_fraction must lie in (0, 0.5), got {self.anomaly_fraction}")
        if self.mode not in ("multi", "single"):
            raise ValueError(f"mode must be 'multi' or 'single', got {self.mode!r}")
        if self.mode == "multi" and self.graphs < 2:
            raise ValueError("multi mode needs at least 2 graphs")
        if not 1 <= self.nodes_min <= self.nodes_max:
            raise ValueError("need 1 <= nodes_min <= nodes_max")
        if self.normal_clusters < 1 or self.feature_dim < 1:
            raise ValueError("normal_clusters and feature_dim must be positive")

    def to_dict(self):
        return asdict(self)


# Suspicious-link probabilities give ~3% (easy) and ~20% (hard) suspicious
# edges for the default graph sizes; see ``expected_suspicious_fraction``.
PRESETS = {
    "easy": {},
    "hard": {"p_sus": 0.062},
    "single": {"mode": "single", "graphs": 1, "nodes_min": 600, "nodes_max": 600, "split": [0.7, 0.1, 0.2]},
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(SynthConfig(**PRESETS[name]), **overrides)


def anomaly_count(n, fraction):
    k = math.floor(n * fraction + 0.5)
    if k < 1:
        raise ValueError(f"{n} nodes at anomaly fraction {fraction} gives no anomalies")
    if k >= n:
        raise ValueError(f"{n} nodes at anomaly fraction {fraction} leaves no normal nodes")
    return k


def expected_suspicious_fraction(config, n=None):
    """Expected share of suspicious edges for a graph of ``n`` nodes."""
    n = n if n is not None else (config.nodes_min + config.nodes_max) // 2
    k = anomaly_count(n, config.anomaly_fraction)
    normal = n - k
    size = normal / config.normal_clusters
    within = config.normal_clusters * size * (size - 1) / 2 * config.p_in
    across = (normal * (normal - 1) / 2 - config.normal_clusters * size * (size - 1) / 2) * config.p_between
    sus = normal * k * config.p_sus
    return sus / (sus + within + across) if sus + within + across > 0 else 0.0


@dataclass
class _Mixture:
    means: np.ndarray

    def sample(self, rng, count, noise):
        comp = rng.integers(0, self.means.shape[0], size=count)
        return comp, self.means[comp] + rng.normal(0.0, noise, size=(count, self.means.shape[1]))


def _mixture(rng, base, config):
    center = base + rng.normal(0.0, config.graph_spread, size=config.feature_dim)
    offsets = rng.normal(0.0, config.cluster_spread, size=(config.normal_clusters, config.feature_dim))
    return _Mixture(center + offsets)


def _build_graph(gid, rng, config, normal_mix, foreign_mixes, n):
    k = anomaly_count(n, config.anomaly_fraction)
    n_norm = n - k
    comp, x_norm = normal_mix.sample(rng, n_norm, config.noise)
    x_ab = np.empty((k, config.feature_dim))
    ab_source = rng.integers(0, len(foreign_mixes), size=k)
    for i, src in enumerate(ab_source):
        _, x_ab[i] = foreign_mixes[src].sample(rng, 1, config.noise)
    x = np.vstack([x_norm, x_ab])
    labels = np.concatenate([np.zeros(n_norm, dtype=np.int64), np.ones(k, dtype=np.int64)])
    cluster = np.concatenate([comp, np.full(k, -1)])

    u = rng.random((n, n))
    iu, ju = np.triu_indices(n, k=1)
    ci, cj = cluster[iu], cluster[ju]
    norm_i, norm_j = labels[iu] == 0, labels[ju] == 0
    prob = np.zeros(iu.size)
    both = norm_i & norm_j
    prob[both & (ci == cj)] = config.p_in
    prob[both & (ci != cj)] = config.p_between
    prob[norm_i != norm_j] = config.p_sus
    on = u[iu, ju] < prob
    a = np.zeros((n, n))
    a[iu[on], ju[on]] = 1.0
    a = a + a.T

    perm = rng.permutation(n)
    return Graph(gid, x[perm], a[np.ix_(perm, perm)], labels[perm])


def generate(config):
    """Build the synthetic ``Dataset`` described by ``config`` (split included)."""
    rng = np.random.default_rng(config.seed)
    base = rng.normal(0.0, config.shared_scale, size=config.feature_dim)
    graphs = []
    if config.mode == "multi":
        mixes = [_mixture(rng, base, config) for _ in range(config.graphs)]
        for gi in range(config.graphs):
            n = int(rng.integers(config.nodes_min, config.nodes_max + 1))
            foreign = [m for j, m in enumerate(mixes) if j != gi]
            graphs.append(_build_graph(f"g{gi:04d}", rng, config, mixes[gi], foreign, n))
    else:
        home = _mixture(rng, base, config)
        shift = rng.normal(0.0, 1.0, size=config.feature_dim)
        shift *= config.foreign_shift / max(np.linalg.norm(shift) / math.sqrt(config.feature_dim), 1e-12)
        foreign = _Mixture(home.means + shift[None, :])
        n = int(rng.integers(config.nodes_min, config.nodes_max + 1))
        graphs.append(_build_graph("g0000", rng, config, home, [foreign], n))
    ds = Dataset(config.mode, graphs)
    ds = make_split(ds, tuple(config.split), seed=config.seed)
    check_separation(ds)
    return ds


def check_separation(ds):
    """Raw features must place normal nodes closer to the context than anomalies."""
    from gcad.evalkit import raw_similarity

    rep = raw_similarity(ds.graphs)
    if not rep.mean("N-GL") > rep.mean("AB-GL"):
        raise ValueError(
            f"synthetic data is not separable: mean N-GL {rep.mean('N-GL'):.4f} <= AB-GL {rep.mean('AB-GL'):.4f}"
        )
    return rep


def write_synthetic(config, out):
    ds = generate(config)
    root = save_dataset(ds, out)
    (Path(root) / "gen-config.snapshot.json").write_text(
        json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    return ds
