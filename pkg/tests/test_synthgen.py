import numpy as np
import pytest
from numpy.testing import assert_array_equal

from gcad.graphdata import load_dataset
from gcad.synthgen import (
    PRESETS, SynthConfig, anomaly_count, expected_suspicious_fraction, generate, preset, write_synthetic,
)


def _suspicious_edges(g):
    src, dst, _ = g.edges()
    return int(np.sum(g.labels[src] != g.labels[dst]))


def test_exact_anomaly_count():
    ds = generate(preset("easy", graphs=4, nodes_min=100, nodes_max=100, split=[0.5, 0.25, 0.25]))
    assert all(int(np.sum(g.labels == 1)) == 10 for g in ds.graphs)
    assert anomaly_count(100, 0.1) == 10


def test_infeasible_counts():
    with pytest.raises(ValueError):
        anomaly_count(3, 0.1)
    with pytest.raises(ValueError):
        generate(SynthConfig(graphs=3, nodes_min=3, nodes_max=3))


def test_zero_suspicious_probability():
    ds = generate(preset("easy", p_sus=0.0, graphs=5, split=[0.6, 0.2, 0.2]))
    assert sum(_suspicious_edges(g) for g in ds.graphs) == 0


def test_config_validation():
    for kw in ({"p_in": 1.5}, {"anomaly_fraction": 0.5}, {"mode": "many"}, {"graphs": 1}, {"nodes_min": 0}):
        with pytest.raises(ValueError):
            SynthConfig(**kw)
    with pytest.raises(ValueError):
        preset("nope")


def test_default_benchmark_shape():
    ds = generate(preset("easy"))
    assert len(ds.graphs) == 55
    assert [len(ds.split[p]) for p in ("train", "valid", "test")] == [40, 5, 10]
    assert all(90 <= g.num_nodes <= 110 for g in ds.graphs)


def test_preset_suspicious_fractions():
    assert 0.02 <= expected_suspicious_fraction(preset("easy")) <= 0.04
    assert 0.17 <= expected_suspicious_fraction(preset("hard")) <= 0.23
    ds = generate(preset("hard"))
    src_total = sum(g.num_edges for g in ds.graphs)
    frac = sum(_suspicious_edges(g) for g in ds.graphs) / src_total
    assert 0.15 <= frac <= 0.25


def test_written_dataset_loads(tmp_path):
    for name in PRESETS:
        cfg = preset(name, seed=4)
        ds = write_synthetic(cfg, tmp_path / name)
        back = load_dataset(tmp_path / name)
        assert back.mode == cfg.mode and len(back.graphs) == len(ds.graphs)
        for a, b in zip(ds.graphs, back.graphs):
            assert_array_equal(a.features, b.features)
            assert_array_equal(a.adjacency, b.adjacency)
            assert_array_equal(a.labels, b.labels)
        assert (tmp_path / name / "gen-config.snapshot.json").exists()


def test_seed_determinism():
    a = generate(preset("easy", graphs=6, split=[0.5, 0.25, 0.25], seed=8))
    b = generate(preset("easy", graphs=6, split=[0.5, 0.25, 0.25], seed=8))
    for x, y in zip(a.graphs, b.graphs):
        assert x.features.tobytes() == y.features.tobytes()
        assert x.adjacency.tobytes() == y.adjacency.tobytes()
    assert a.split == b.split
    c = generate(preset("easy", graphs=6, split=[0.5, 0.25, 0.25], seed=9))
    assert a.graphs[0].features.tobytes() != c.graphs[0].features.tobytes()


def test_raw_separation_holds():
    from gcad.evalkit import raw_similarity

    for name in PRESETS:
        rep = raw_similarity(generate(preset(name)).graphs)
        assert rep.mean("N-GL") > rep.mean("AB-GL")
