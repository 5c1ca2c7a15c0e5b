import csv
import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from gcad.checkpoint import load_checkpoint
from gcad.corruption import CorruptionConfig, corrupt_dataset
from gcad.encoder import ModelConfig
from gcad.errors import GcadError
from gcad.graphdata import Dataset, Graph, make_split
from gcad.objectives import LossConfig
from gcad.synthgen import generate, preset
from gcad.trainer import TrainConfig, evaluate_split, finetune, learning_rate, pretrain, train, training_units


@pytest.fixture(scope="module")
def small():
    return generate(preset("easy", graphs=12, nodes_min=20, nodes_max=30, split=[0.6, 0.2, 0.2], seed=3))


def test_regime_defaults():
    assert (TrainConfig().epochs, TrainConfig().lr) == (100, 1e-3)
    assert (TrainConfig("pretrain").epochs, TrainConfig("pretrain").lr) == (300, 1e-3)
    assert (TrainConfig("finetune").epochs, TrainConfig("finetune").lr) == (100, 1e-4)


def test_config_validation():
    for kw in ({"epochs": 0}, {"label_fraction": 0.0}, {"label_fraction": 1.5}, {"schedule": "cosine"},
               {"regime": "rl"}, {"lr": -1.0}, {"batch_size": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_linear_schedule_boundaries():
    cfg = TrainConfig(lr=1.0)
    total = 100
    assert learning_rate(0, total, cfg) == 1.0
    assert learning_rate(9, total, cfg) == 1.0
    assert learning_rate(10, total, cfg) == 1.0
    assert learning_rate(99, total, cfg) == pytest.approx(0.1)
    assert learning_rate(10 + 89 // 2, total, cfg) == pytest.approx(1.0 - 0.9 * (44 / 89))
    lrs = [learning_rate(s, total, cfg) for s in range(total)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_exponential_schedule():
    cfg = TrainConfig(lr=1.0, schedule="exponential")
    assert learning_rate(0, 50, cfg, steps_per_epoch=5) == 1.0
    assert learning_rate(4, 50, cfg, steps_per_epoch=5) == 1.0
    assert learning_rate(5, 50, cfg, steps_per_epoch=5) == pytest.approx(0.96)
    assert learning_rate(12, 50, cfg, steps_per_epoch=5) == pytest.approx(0.96 ** 2)


def test_zero_lr_leaves_params(small, tmp_path):
    mc = ModelConfig(small.feature_dim)
    from gcad.encoder import init_params

    init = init_params(mc, 0)
    report, ckpt = train(small, mc, LossConfig(), TrainConfig(epochs=1, lr=0.0), run_dir=tmp_path)
    for k, v in init.items():
        assert_array_equal(ckpt.params[k], v)
    assert len(report.history) == 1 and (tmp_path / "metrics.csv").exists()
    assert report.chosen_epoch == 1


def test_same_seed_identical(small, tmp_path):
    mc = ModelConfig(small.feature_dim)
    tc = TrainConfig(epochs=3, seed=5)
    a, ca = train(small, mc, LossConfig(), tc, run_dir=tmp_path / "a")
    b, cb = train(small, mc, LossConfig(), tc, run_dir=tmp_path / "b")
    assert a.losses("combined") == b.losses("combined")
    assert (tmp_path / "a" / "checkpoint.gcad").read_bytes() == (tmp_path / "b" / "checkpoint.gcad").read_bytes()
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_chosen_epoch_is_first_best(small, tmp_path):
    report, _ = train(small, ModelConfig(small.feature_dim), LossConfig(), TrainConfig(epochs=6, early_stop=False))
    aucs = [r["valid_auc"] for r in report.history]
    assert report.chosen_epoch == int(np.argmax(aucs)) + 1
    assert report.best_valid_auc == max(aucs)


def test_loss_halves_on_benchmark():
    ds = generate(preset("easy"))
    report, _ = train(ds, ModelConfig(ds.feature_dim), LossConfig(), TrainConfig(epochs=50, early_stop=False))
    c = report.losses("contrastive")
    assert c[-1] <= 0.5 * c[0]


def test_early_stop(small):
    report, _ = train(small, ModelConfig(small.feature_dim), LossConfig(), TrainConfig(epochs=200, patience=2, lr=0.0))
    assert report.stopped_early and len(report.history) == 3


def test_metrics_csv_columns(small, tmp_path):
    train(small, ModelConfig(small.feature_dim), LossConfig(), TrainConfig(epochs=2), run_dir=tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert len(rows) == 2 and {"epoch", "combined", "valid_auc", "lr"} <= set(rows[0])
    assert math.isfinite(float(rows[-1]["valid_auc"]))


def test_label_fraction(small):
    full = training_units(small, TrainConfig(label_fraction=1.0))
    assert len(full) == len(small.split["train"])
    half = training_units(small, TrainConfig(label_fraction=0.5, seed=1))
    assert len(half) == round(0.5 * len(full))
    again = training_units(small, TrainConfig(label_fraction=0.5, seed=1))
    assert [u.graph.id for u in half] == [u.graph.id for u in again]


def test_label_fraction_single_graph():
    ds = generate(preset("single", nodes_min=60, nodes_max=60, seed=2))
    units = training_units(ds, TrainConfig(label_fraction=0.5))
    n_train = len(ds.split["train"])
    assert np.count_nonzero(units[0].labels >= 0) == round(0.5 * n_train)
    labeled = np.nonzero(units[0].labels >= 0)[0]
    assert set(labeled) <= set(ds.split["train"])


def test_in_batch_negatives_batch_one_identical(small):
    mc = ModelConfig(small.feature_dim)
    a, _ = train(small, mc, LossConfig(), TrainConfig(epochs=2, in_batch_negatives=False))
    b, _ = train(small, mc, LossConfig(), TrainConfig(epochs=2, in_batch_negatives=True))
    assert a.losses("combined") == b.losses("combined")


def test_cross_entropy_objective_requires_classifier(small):
    with pytest.raises(ValueError):
        train(small, ModelConfig(small.feature_dim), LossConfig(objective="cross-entropy"), TrainConfig(epochs=1))
    report, _ = train(small, ModelConfig(small.feature_dim, classifier=True), LossConfig(objective="cross-entropy"),
                      TrainConfig(epochs=1))
    assert len(report.history) == 1


def _one_class(g):
    return g.with_labels(np.zeros(g.num_nodes, dtype=np.int64))


def test_skip_warning_and_all_skipped(small):
    graphs = list(small.graphs)
    pos = {g.id: i for i, g in enumerate(graphs)}
    train_ids = [pos[gid] for gid in small.split["train"]]
    for i in train_ids[: len(train_ids) // 2 + 1]:
        graphs[i] = _one_class(graphs[i])
    ds = Dataset("multi", graphs, small.split)
    with pytest.warns(RuntimeWarning, match="skipped"):
        report, _ = train(ds, ModelConfig(ds.feature_dim), LossConfig(), TrainConfig(epochs=1))
    assert report.skip_warning and report.skipped_graphs == len(train_ids) // 2 + 1
    for i in train_ids:
        graphs[i] = _one_class(graphs[i])
    with pytest.raises(GcadError, match="skipped"):
        train(Dataset("multi", graphs, small.split), ModelConfig(ds.feature_dim), LossConfig(), TrainConfig(epochs=1))


def test_pretrain_finetune_roundtrip(small, tmp_path):
    cds, _, _ = corrupt_dataset(small, CorruptionConfig(0.15))
    for g in cds.graphs:
        n_inj = int(np.sum(g.labels == 1))
        assert n_inj == max(1, math.floor(0.15 * (g.num_nodes - n_inj) + 0.5))
    mc = ModelConfig(small.feature_dim)
    _, ckpt = pretrain(cds, mc, LossConfig(), TrainConfig("pretrain", epochs=2), run_dir=tmp_path / "pre")
    loaded = load_checkpoint(tmp_path / "pre" / "checkpoint.gcad")
    report, tuned = finetune(loaded, small, LossConfig(), TrainConfig("finetune", epochs=2))
    assert len(report.history) == 2
    assert 0.0 <= evaluate_split(small, tuned).auc <= 1.0


def test_finetune_shape_mismatch(small):
    _, ckpt = train(small, ModelConfig(small.feature_dim), LossConfig(), TrainConfig(epochs=1))
    other = generate(preset("easy", graphs=6, nodes_min=20, nodes_max=25, feature_dim=8, split=[0.5, 0.25, 0.25]))
    with pytest.raises(ValueError, match="feature dim"):
        finetune(ckpt, other, LossConfig(), TrainConfig("finetune", epochs=1))


def test_finetune_switches_to_cross_entropy(small):
    _, ckpt = train(small, ModelConfig(small.feature_dim), LossConfig(), TrainConfig(epochs=1))
    report, tuned = finetune(ckpt, small, LossConfig(objective="cross-entropy"), TrainConfig("finetune", epochs=1))
    assert tuned.model.classifier and "cls.w" in tuned.params


def test_no_split_rejected():
    g = Graph("a", np.eye(3), np.zeros((3, 3)), np.array([0, 1, 0]))
    with pytest.raises(GcadError):
        train(Dataset("multi", [g, g.with_labels([0, 0, 1])]), ModelConfig(3), LossConfig(), TrainConfig(epochs=1))


def test_single_graph_training():
    ds = generate(preset("single", nodes_min=80, nodes_max=80, seed=1))
    report, _ = train(ds, ModelConfig(ds.feature_dim), LossConfig(), TrainConfig(epochs=3))
    assert len(report.history) == 3 and report.total_graphs == 1
