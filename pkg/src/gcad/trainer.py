"""Training loops: supervised, corrupt-graph pre-training, and fine-tuning.

One optimizer step per graph (or per batch of graphs when ``batch_size > 1``),
graphs visited in a freshly shuffled order every epoch. Model selection keeps
the parameters of the epoch with the best validation AUC.
"""

import csv
import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from gcad.checkpoint import Checkpoint, save_checkpoint
from gcad.diffmath import AdamState, adam_step, backward, ops, param
from gcad.encoder import ModelConfig, forward, init_params, param_shapes
from gcad.errors import DivergenceError, GcadError, OneClassGraphError
from gcad.evalkit import ScoreTable, evaluate, score
from gcad.graphdata.graph import ABNORMAL, NORMAL, UNLABELED
from gcad.objectives import LossConfig, compute_losses

log = logging.getLogger(__name__)

REGIME_DEFAULTS = {
    "supervised": {"epochs": 100, "lr": 1e-3},
    "pretrain": {"epochs": 300, "lr": 1e-3},
    "finetune": {"epochs": 100, "lr": 1e-4},
}
SCHEDULES = ("linear", "exponential")
METRIC_FIELDS = ["epoch", "combined", "contrastive", "link", "lr", "valid_auc", "valid_map", "trained_graphs"]


@dataclass
class TrainConfig:
    regime: str = "supervised"
    epochs: int = None
    lr: float = None
    schedule: str = "linear"
    warmup_fraction: float = 0.1
    final_lr_factor: float = 0.1
    exp_decay: float = 0.96
    label_fraction: float = 1.0
    seed: int = 0
    early_stop: bool = True
    patience: int = 20
    batch_size: int = 1
    in_batch_negatives: bool = False

    def __post_init__(self):
        if self.regime not in REGIME_DEFAULTS:
            raise ValueError(f"regime must be one of {sorted(REGIME_DEFAULTS)}")
        if self.epochs is None:
            self.epochs = REGIME_DEFAULTS[self.regime]["epochs"]
        if self.lr is None:
            self.lr = REGIME_DEFAULTS[self.regime]["lr"]
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ValueError(f"label_fraction must lie in (0, 1], got {self.label_fraction}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    history: list = field(default_factory=list)
    chosen_epoch: int = None
    best_valid_auc: float = float("nan")
    wall_clock: float = 0.0
    checkpoint_path: str = None
    skipped_graphs: int = 0
    total_graphs: int = 0
    skip_warning: bool = False
    stopped_early: bool = False

    def losses(self, key="contrastive"):
        return [row[key] for row in self.history]

    def to_dict(self):
        return asdict(self)


def learning_rate(step, total_steps, config, steps_per_epoch=1):
    """Learning rate at 0-based ``step``.

    ``linear``: flat for the first ``warmup_fraction`` of steps, then linear
    down to ``final_lr_factor * lr`` at the last step. ``exponential``:
    ``lr * exp_decay ** epoch``.
    """
    base = config.lr
    if config.schedule == "exponential":
        return base * config.exp_decay ** (step // max(1, steps_per_epoch))
    flat = math.floor(config.warmup_fraction * total_steps)
    last = total_steps - 1
    if step < flat or last <= flat:
        return base
    frac = (step - flat) / (last - flat)
    return base * (1.0 - (1.0 - config.final_lr_factor) * frac)


# ----------------------------------------------------------------------------
# training units


@dataclass
class Unit:
    graph: object
    labels: np.ndarray


def _has_both(labels):
    return bool(np.any(labels == NORMAL) and np.any(labels == ABNORMAL))


def _subsample_labels(labels, fraction, rng):
    """Keep ``fraction`` of the labeled entries (at least one), others unlabeled."""
    if fraction >= 1.0:
        return labels.copy()
    idx = np.nonzero(labels != UNLABELED)[0]
    keep = max(1, math.floor(fraction * idx.size + 0.5))
    chosen = np.sort(rng.choice(idx, size=keep, replace=False))
    out = np.full_like(labels, UNLABELED)
    out[chosen] = labels[chosen]
    return out


def training_units(ds, config):
    """Graphs and the labels the loss may see, after label-fraction subsampling.

    Multi-graph: whole training graphs, subsampled by graph. Single-graph: the
    one graph with labels restricted to (a fraction of) the training nodes.
    """
    rng = np.random.default_rng([config.seed, 1])
    if ds.split is None:
        raise GcadError("dataset has no split; run make_split first")
    if ds.mode == "multi":
        graphs = ds.split_graphs("train")
        if config.label_fraction < 1.0:
            keep = max(1, math.floor(config.label_fraction * len(graphs) + 0.5))
            pick = np.sort(rng.choice(len(graphs), size=keep, replace=False))
            graphs = [graphs[i] for i in pick]
        return [Unit(g, g.labels.copy()) for g in graphs]
    g = ds.graphs[0]
    labels = np.where(ds.split_mask("train"), g.labels, UNLABELED)
    return [Unit(g, _subsample_labels(labels, config.label_fraction, rng))]


def validation_table(ds, ckpt, params, part="valid"):
    if ds.mode == "multi":
        return ScoreTable.concat([score(g, ckpt, params) for g in ds.split_graphs(part)])
    return score(ds.graphs[0], ckpt, params, nodes=ds.split[part])


def _usable(unit, loss_config):
    if loss_config.objective == "contrastive":
        return _has_both(unit.labels)
    return bool(np.any(unit.labels != UNLABELED))


# ----------------------------------------------------------------------------
# main loop


def _write_metrics(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in METRIC_FIELDS})


def train(ds, model_config, loss_config, train_config, run_dir=None, initial_params=None):
    """Train on ``ds`` and return ``(TrainReport, Checkpoint)`` of the best epoch.

    Raises ``GcadError`` when no training graph is usable and
    ``DivergenceError`` when a loss or gradient turns non-finite.
    """
    start = time.perf_counter()
    if model_config.classifier != (loss_config.objective == "cross-entropy"):
        raise ValueError("model_config.classifier must be set exactly for the cross-entropy objective")
    if ds.feature_dim != model_config.input_dim:
        raise ValueError(f"dataset feature dim {ds.feature_dim} != model input dim {model_config.input_dim}")
    params = init_params(model_config, train_config.seed) if initial_params is None else {
        k: np.array(v, dtype=np.float64) for k, v in initial_params.items()
    }
    expected = param_shapes(model_config)
    for name, shape in expected.items():
        if name not in params or params[name].shape != tuple(shape):
            raise ValueError(f"initial parameter {name!r} missing or misshaped for this model config")

    units = training_units(ds, train_config)
    usable = [u for u in units if _usable(u, loss_config)]
    report = TrainReport(total_graphs=len(units), skipped_graphs=len(units) - len(usable))
    if not usable:
        raise GcadError(f"all {len(units)} training graphs were skipped (need both label classes)")
    if report.skipped_graphs:
        log.info("skipping %d of %d training graphs lacking a label class", report.skipped_graphs, len(units))
    if report.skipped_graphs * 2 > len(units):
        report.skip_warning = True
        warnings.warn(f"{report.skipped_graphs} of {len(units)} training graphs skipped", RuntimeWarning,
                      stacklevel=2)

    rng = np.random.default_rng(train_config.seed)
    state = AdamState(lr=train_config.lr)
    bs = train_config.batch_size
    steps_per_epoch = math.ceil(len(usable) / bs)
    total_steps = train_config.epochs * steps_per_epoch
    ckpt = Checkpoint(model_config, loss_config, params)
    best_auc, best_params, best_epoch, since_best = -math.inf, None, None, 0
    step = 0

    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(len(usable))
        sums = {"combined": [], "contrastive": [], "link": []}
        for b0 in range(0, len(order), bs):
            batch = [usable[i] for i in order[b0:b0 + bs]]
            nodes = {k: param(v) for k, v in params.items()}
            results = [forward(u.graph, nodes, model_config, rng=rng, training=True) for u in batch]
            total = None
            for bi, (u, res) in enumerate(zip(batch, results)):
                extra = None
                if train_config.in_batch_negatives and len(batch) > 1:
                    extra = ops.concat_rows([r.H for j, r in enumerate(results) if j != bi])
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    losses = compute_losses(res, nodes, u.labels, loss_config, extra)
                vals = losses.floats()
                if not all(math.isfinite(v) for v in vals.values()):
                    raise DivergenceError(f"non-finite loss on graph {u.graph.id!r} at step {step}")
                for k in sums:
                    sums[k].append(vals[k])
                total = losses.combined if total is None else ops.add(total, losses.combined)
            loss = ops.scale(total, 1.0 / len(batch))
            backward(loss)
            grads = {k: n.grad for k, n in nodes.items()}
            lr = learning_rate(step, total_steps, train_config, steps_per_epoch)
            try:
                adam_step(state, params, grads, lr=lr)
            except FloatingPointError as exc:
                raise DivergenceError(f"{exc} on batch starting with graph {batch[0].graph.id!r} at step {step}") from None
            step += 1

        row = {
            "epoch": epoch,
            "combined": math.fsum(sums["combined"]) / len(sums["combined"]),
            "contrastive": math.fsum(sums["contrastive"]) / len(sums["contrastive"]),
            "link": math.fsum(sums["link"]) / len(sums["link"]),
            "lr": lr,
            "trained_graphs": len(usable),
        }
        val = evaluate(validation_table(ds, ckpt, params)) if ds.split["valid"] else None
        row["valid_auc"] = val.auc if val is not None else float("nan")
        row["valid_map"] = val.map if val is not None else float("nan")
        report.history.append(row)
        log.debug("epoch %d loss %.5f valid auc %.4f", epoch, row["combined"], row["valid_auc"])

        current = row["valid_auc"]
        if math.isfinite(current) and current > best_auc:
            best_auc, best_epoch, since_best = current, epoch, 0
            best_params = {k: v.copy() for k, v in params.items()}
        else:
            since_best += 1
        if train_config.early_stop and best_epoch is not None and since_best >= train_config.patience:
            report.stopped_early = True
            break

    if best_params is None:
        best_params = {k: v.copy() for k, v in params.items()}
        best_epoch = report.history[-1]["epoch"]
    report.chosen_epoch = best_epoch
    report.best_valid_auc = best_auc if math.isfinite(best_auc) else float("nan")
    final = Checkpoint(model_config, loss_config, best_params, {"regime": train_config.regime,
                                                                  "chosen_epoch": best_epoch})
    report.wall_clock = time.perf_counter() - start
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        report.checkpoint_path = str(save_checkpoint(run_dir / "checkpoint.gcad", final))
        _write_metrics(run_dir / "metrics.csv", report.history)
        (run_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return report, final


def pretrain(corrupt_ds, model_config, loss_config, train_config, run_dir=None):
    """Train on pseudo-labeled corrupt graphs; same loop as ``train``."""
    for g in corrupt_ds.graphs:
        if not _has_both(g.labels):
            raise OneClassGraphError(f"corrupt graph {g.id!r} lacks pseudo-labels of both classes")
    return train(corrupt_ds, model_config, loss_config, train_config, run_dir)


def finetune(ckpt, ds, loss_config, train_config, run_dir=None):
    """Resume from ``ckpt`` on labeled data (``train_config.label_fraction`` of it)."""
    if ds.feature_dim != ckpt.model.input_dim:
        raise ValueError(f"checkpoint expects feature dim {ckpt.model.input_dim}, dataset has {ds.feature_dim}")
    model_config = ckpt.model
    params = ckpt.copy_params()
    if loss_config.objective == "cross-entropy" and not model_config.classifier:
        model_config = ModelConfig(**{**model_config.to_dict(), "classifier": True})
        fresh = init_params(model_config, train_config.seed)
        params["cls.w"], params["cls.b"] = fresh["cls.w"], fresh["cls.b"]
    elif loss_config.objective == "contrastive" and model_config.classifier:
        model_config = ModelConfig(**{**model_config.to_dict(), "classifier": False})
        params = {k: v for k, v in params.items() if not k.startswith("cls.")}
    return train(ds, model_config, loss_config, train_config, run_dir, initial_params=params)


def evaluate_split(ds, ckpt, part="test"):
    """``MetricReport`` of ``ckpt`` on a split part."""
    return evaluate(validation_table(ds, ckpt, ckpt.params, part))
