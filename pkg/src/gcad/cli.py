"""Command-line entry point: ``gcad <subcommand> ...``.

Every subcommand that takes a configuration resolves it in this order:
built-in defaults < ``--config file.json`` < ``--set dot.path=value`` < ``--seed``
(with ``GCAD_SEED`` as fallback when no seed is given anywhere), and writes the
effective configuration to ``config.snapshot.json`` in its output directory.
Passing that snapshot back through ``--config`` reproduces the run.
"""

import argparse
import copy
import csv
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import MISSING, fields
from pathlib import Path

import numpy as np

from gcad import __version__
from gcad.checkpoint import CheckpointError, load_checkpoint
from gcad.corruption import CorruptionConfig, corrupt_dataset
from gcad.encoder import ModelConfig
from gcad.errors import DataError, DivergenceError, GcadError
from gcad.evalkit import ScoreTable, embedding_similarity, evaluate, raw_similarity, score
from gcad.graphdata import Dataset, load_dataset, save_dataset
from gcad.graphdata.spectral import eigen_features
from gcad.objectives import LossConfig
from gcad.synthgen import PRESETS, SynthConfig, preset, write_synthetic
from gcad.trainer import REGIME_DEFAULTS, TrainConfig, evaluate_split, finetune, pretrain, train

log = logging.getLogger("gcad")

EXIT_OK = 0
EXIT_DIVERGENCE = 2
EXIT_DATA = 3
EXIT_SKIP_WARNING = 4
EXIT_USAGE = 64

SNAPSHOT = "config.snapshot.json"

# Values used by the reference experiments, shown next to our defaults in --help.
REFERENCE_DEFAULTS = {
    "model.num_layers": 2,
    "model.aggregator": "sum",
    "model.gumbel_temperature": "0.6 (0.4 in the hyperparameter table)",
    "loss.temperature": "0.1 (0.5 in the hyperparameter table)",
    "loss.link_loss_weight": 0.2,
    "loss.similarity": "dot",
    "train.epochs": "supervised 100, pretrain 300, finetune 100",
    "train.lr": "1e-3 (finetune 1e-4)",
    "train.schedule": "linear (exponential 0.96 in the hyperparameter table)",
    "train.batch_size": "1 (8 for pre-training in the hyperparameter table)",
    "corrupt.corrupt_ratio": 0.15,
    "synth.anomaly_fraction": 0.1,
    "synth.split": "0.7/0.1/0.2",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------------------
# configuration


def _section_defaults(cls, drop=()):
    out = {}
    for f in fields(cls):
        if f.name in drop:
            continue
        if f.default is not MISSING:
            out[f.name] = f.default
        elif f.default_factory is not MISSING:
            out[f.name] = f.default_factory()
    return out


def _training_defaults(regime):
    train_d = _section_defaults(TrainConfig, drop=("seed",))
    train_d["regime"] = regime
    train_d.update(REGIME_DEFAULTS[regime])
    return {
        "model": _section_defaults(ModelConfig, drop=("input_dim", "classifier")),
        "loss": _section_defaults(LossConfig),
        "train": train_d,
    }


def default_config(command):
    """Default configuration tree for a subcommand (without paths or seed)."""
    if command == "synth":
        return {"preset": "easy", "synth": _section_defaults(SynthConfig, drop=("seed",))}
    if command == "eigenfeat":
        return {"eigenfeat": {"k": 8, "order": "smallest"}}
    if command == "corrupt":
        c = _section_defaults(CorruptionConfig, drop=("seed",))
        c.update({"k": None, "k_min": 2, "k_max": 10})
        return {"corrupt": c}
    if command in ("train", "pretrain", "finetune"):
        regime = {"train": "supervised"}.get(command, command)
        return _training_defaults(regime)
    if command == "ablate":
        cfg = _training_defaults("supervised")
        cfg["ablate"] = {"grid": "one-factor", "seeds": [0], "jobs": 1}
        return cfg
    return {}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, assignment):
    """Set ``a.b.c=value`` in ``cfg``; the key path must already exist."""
    if "=" not in assignment:
        raise UsageError(f"override {assignment!r} is not of the form key=value")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise UsageError(f"unknown config key {path!r}")
        node = node[k]
    if keys[-1] not in node:
        raise UsageError(f"unknown config key {path!r}")
    node[keys[-1]] = _parse_value(raw)


def _merge(base, extra, prefix=""):
    for k, v in extra.items():
        if k not in base:
            raise UsageError(f"unknown config key {prefix + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _merge(base[k], v, prefix + k + ".")
        else:
            base[k] = copy.deepcopy(v)


PATH_KEYS = ("data", "checkpoint")


def resolve_config(command, args):
    """Effective config: defaults, then file, then ``--set``, then ``--seed``."""
    cfg = default_config(command)
    paths, seed = {}, None
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError("config file does not exist", args.config) from None
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed config: {exc}", args.config) from None
        snap_cmd = loaded.pop("command", command)
        if snap_cmd != command:
            raise UsageError(f"config was written by {snap_cmd!r}, not {command!r}")
        for k in PATH_KEYS:
            if k in loaded:
                paths[k] = loaded.pop(k)
        seed = loaded.pop("seed", None)
        loaded.pop("version", None)
        _merge(cfg, loaded)
    for assignment in getattr(args, "set", None) or []:
        apply_override(cfg, assignment)
    for k in PATH_KEYS:
        if getattr(args, k, None) is not None:
            paths[k] = getattr(args, k)
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    if seed is None:
        seed = int(os.environ.get("GCAD_SEED", "0"))
    return cfg, paths, int(seed)


def write_snapshot(out, command, cfg, paths, seed):
    snap = {"command": command, "version": __version__, "seed": seed}
    for k in PATH_KEYS:
        if k in paths:
            snap[k] = str(Path(paths[k]).resolve())
    snap.update(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / SNAPSHOT).write_text(json.dumps(snap, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return snap


def _require(paths, key):
    if key not in paths or paths[key] is None:
        raise UsageError(f"--{key} is required (or a config snapshot that records it)")
    return paths[key]


def _build(cls, section, what, **extra):
    try:
        return cls(**section, **extra)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {what} config: {exc}") from None


def _setup_logging(out, verbose):
    root = logging.getLogger("gcad")
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    stream.setLevel(logging.DEBUG if verbose else logging.WARNING)
    root.addHandler(stream)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(Path(out) / "run.log", mode="w", encoding="utf-8")
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        root.addHandler(fh)


# ----------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg, paths, seed):
    synth = dict(cfg["synth"])
    name = cfg["preset"]
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    # preset values apply unless the user explicitly changed a key
    base = _section_defaults(SynthConfig, drop=("seed",))
    changed = {k: v for k, v in synth.items() if v != base[k]}
    try:
        config = preset(name, seed=seed, **changed)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid synth config: {exc}") from None
    cfg["synth"] = {k: v for k, v in config.to_dict().items() if k != "seed"}
    write_snapshot(args.out, "synth", cfg, paths, seed)
    ds = write_synthetic(config, args.out)
    log.info("wrote %d graphs to %s", len(ds.graphs), args.out)
    return EXIT_OK


def cmd_eigenfeat(args, cfg, paths, seed):
    ds = load_dataset(_require(paths, "data"))
    k, order = cfg["eigenfeat"]["k"], cfg["eigenfeat"]["order"]
    smallest = min(g.num_nodes for g in ds.graphs)
    if not 1 <= k <= smallest:
        raise UsageError(f"eigenfeat.k must lie in [1, {smallest}] (smallest graph size), got {k}")
    write_snapshot(args.out, "eigenfeat", cfg, paths, seed)
    graphs = [g.with_features(eigen_features(g, k, order=order).eigenvectors) for g in ds.graphs]
    save_dataset(Dataset(ds.mode, graphs, ds.split), args.out)
    return EXIT_OK


def cmd_corrupt(args, cfg, paths, seed):
    ds = load_dataset(_require(paths, "data"))
    c = dict(cfg["corrupt"])
    k, k_range = c.pop("k"), (c.pop("k_min"), c.pop("k_max"))
    config = _build(CorruptionConfig, c, "corrupt", seed=seed)
    write_snapshot(args.out, "corrupt", cfg, paths, seed)
    out, provenance, chosen_k = corrupt_dataset(ds, config, k=k, k_range=k_range)
    save_dataset(out, args.out, provenance)
    summary = {"graphs": len(out.graphs), "chosen_k": chosen_k,
               "injected": {g.id: int((g.labels == 1).sum()) for g in out.graphs}}
    (Path(args.out) / "corrupt-report.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def _configs(cfg, ds, seed, classifier=None):
    loss = _build(LossConfig, cfg["loss"], "loss")
    if classifier is None:
        classifier = loss.objective == "cross-entropy"
    model = _build(ModelConfig, cfg["model"], "model", input_dim=ds.feature_dim, classifier=classifier)
    tc = _build(TrainConfig, cfg["train"], "train", seed=seed)
    return model, loss, tc


def _finish_training(out, report, ckpt, ds):
    result = {"chosen_epoch": report.chosen_epoch, "best_valid_auc": report.best_valid_auc,
              "skipped_graphs": report.skipped_graphs, "total_graphs": report.total_graphs}
    if ds.split is not None and ds.split.get("test"):
        m = evaluate_split(ds, ckpt, "test")
        result.update({"test_auc": m.auc, "test_map": m.map})
        m.write_json(Path(out) / "test-metrics.json")
    log.info("done: %s", result)
    print(json.dumps(result))
    return EXIT_SKIP_WARNING if report.skip_warning else EXIT_OK


def cmd_train(args, cfg, paths, seed):
    ds = load_dataset(_require(paths, "data"))
    model, loss, tc = _configs(cfg, ds, seed)
    write_snapshot(args.out, "train", cfg, paths, seed)
    report, ckpt = train(ds, model, loss, tc, run_dir=args.out)
    return _finish_training(args.out, report, ckpt, ds)


def cmd_pretrain(args, cfg, paths, seed):
    ds = load_dataset(_require(paths, "data"))
    model, loss, tc = _configs(cfg, ds, seed)
    write_snapshot(args.out, "pretrain", cfg, paths, seed)
    report, ckpt = pretrain(ds, model, loss, tc, run_dir=args.out)
    return _finish_training(args.out, report, ckpt, ds)


def cmd_finetune(args, cfg, paths, seed):
    ds = load_dataset(_require(paths, "data"))
    ckpt = load_checkpoint(_require(paths, "checkpoint"))
    loss = _build(LossConfig, cfg["loss"], "loss")
    tc = _build(TrainConfig, cfg["train"], "train", seed=seed)
    write_snapshot(args.out, "finetune", cfg, paths, seed)
    report, final = finetune(ckpt, ds, loss, tc, run_dir=args.out)
    return _finish_training(args.out, report, final, ds)


def _graphs_for(ds, part):
    if part == "all" or ds.split is None:
        return [(g, None) for g in ds.graphs]
    if ds.mode == "multi":
        return [(g, None) for g in ds.split_graphs(part)]
    return [(ds.graphs[0], np.asarray(ds.split[part], dtype=np.int64))]


def cmd_score(args, cfg, paths, seed):
    ds = load_dataset(_require(paths, "data"))
    ckpt = load_checkpoint(_require(paths, "checkpoint"))
    if ckpt.model.input_dim != ds.feature_dim:
        raise DataError(f"checkpoint expects feature dim {ckpt.model.input_dim}, dataset has {ds.feature_dim}",
                        paths["data"])
    write_snapshot(args.out, "score", cfg, paths, seed)
    table = ScoreTable.concat([score(g, ckpt, nodes=nodes) for g, nodes in _graphs_for(ds, args.part)])
    table.write_csv(Path(args.out) / "scores.csv")
    return EXIT_OK


def cmd_eval(args, cfg, paths, seed):
    src = Path(args.scores)
    if not src.exists():
        raise DataError("scores file does not exist", src)
    try:
        table = ScoreTable.read_csv(src)
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed scores file: {exc}", src) from None
    out = Path(args.out) if args.out else src.parent
    out.mkdir(parents=True, exist_ok=True)
    report = evaluate(table)
    report.write_json(out / "metrics.json")
    print(json.dumps({"auc": report.auc, "map": report.map, "skipped_graphs": report.skipped}))
    return EXIT_OK


def cmd_analyze(args, cfg, paths, seed):
    ds = load_dataset(_require(paths, "data"))
    graphs = [g for g, _ in _graphs_for(ds, args.part)]
    write_snapshot(args.out, "analyze", cfg, paths, seed)
    out = Path(args.out)
    raw = raw_similarity(graphs)
    raw.write_csv(out / "similarity-raw.csv")
    summary = {"raw": {"groups": raw.summary(), "context_gap": raw.context_gap}}
    if paths.get("checkpoint"):
        emb = embedding_similarity(graphs, load_checkpoint(paths["checkpoint"]))
        emb.write_csv(out / "similarity-embedding.csv")
        summary["embedding"] = {"groups": emb.summary(), "context_gap": emb.context_gap}
    (out / "similarity.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


ABLATION_FACTORS = {
    "objective": ["contrastive", "cross-entropy"],
    "edge": ["full", "no-constraint", "no-global-info", "none"],
    "readout": ["memory", "mean", "sum", "max"],
}


def ablation_variants(grid="one-factor"):
    """Variant dicts; ``one-factor`` changes a single factor of the full model at a time."""
    base = {k: v[0] for k, v in ABLATION_FACTORS.items()}
    if grid == "product":
        import itertools

        keys = list(ABLATION_FACTORS)
        return [dict(zip(keys, combo)) for combo in itertools.product(*ABLATION_FACTORS.values())]
    if grid != "one-factor":
        raise UsageError(f"ablate.grid must be 'one-factor' or 'product', got {grid!r}")
    out = [base]
    for k, values in ABLATION_FACTORS.items():
        for v in values[1:]:
            out.append({**base, k: v})
    return out


def variant_name(v):
    return f"{v['objective']}__{v['edge']}__{v['readout']}"


def variant_config(cfg, v):
    c = copy.deepcopy({k: cfg[k] for k in ("model", "loss", "train")})
    c["loss"]["objective"] = v["objective"]
    c["model"]["readout"] = v["readout"]
    if v["edge"] == "no-constraint":
        c["model"]["edge_update"] = "full"
        c["loss"]["link_loss_weight"] = 0.0
    else:
        c["model"]["edge_update"] = v["edge"]
    return c


def _run_variant(job):
    data, out, cfg, seed = job
    ds = load_dataset(data)
    model, loss, tc = _configs(cfg, ds, seed)
    write_snapshot(out, "train", cfg, {"data": data}, seed)
    report, ckpt = train(ds, model, loss, tc, run_dir=out)
    m = evaluate_split(ds, ckpt, "test")
    return {"valid_auc": report.best_valid_auc, "test_auc": m.auc, "test_map": m.map,
            "chosen_epoch": report.chosen_epoch}


def cmd_ablate(args, cfg, paths, seed):
    data = _require(paths, "data")
    load_dataset(data)  # fail fast on a bad path
    ab = cfg["ablate"]
    variants = ablation_variants(ab["grid"])
    seeds = ab["seeds"] if ab["seeds"] else [seed]
    write_snapshot(args.out, "ablate", cfg, paths, seed)
    jobs, rows = [], []
    for v in variants:
        vc = variant_config(cfg, v)
        for s in seeds:
            jobs.append((str(Path(data).resolve()), str(Path(args.out) / variant_name(v) / f"seed{s}"), vc, int(s)))
            rows.append({"variant": variant_name(v), **v, "seed": int(s)})
    n_jobs = max(1, int(ab["jobs"]))
    if n_jobs == 1:
        results = [_run_variant(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_variant, jobs))
    cols = ["variant", "objective", "edge", "readout", "seed", "valid_auc", "test_auc", "test_map", "chosen_epoch"]
    with open(Path(args.out) / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row, res in zip(rows, results):
            row.update(res)
            w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in cols})
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def _flatten(cfg, prefix=""):
    for k, v in cfg.items():
        if isinstance(v, dict):
            yield from _flatten(v, prefix + k + ".")
        else:
            yield prefix + k, v


def config_help(command):
    lines = ["config keys (override with --set key=value):"]
    for key, val in _flatten(default_config(command)):
        ref = REFERENCE_DEFAULTS.get(key)
        extra = f"   [reference: {ref}]" if ref is not None else ""
        lines.append(f"  {key} = {json.dumps(val)}{extra}")
    lines.append("  seed: --seed, else the config file, else $GCAD_SEED, else 0")
    return "\n".join(lines)


COMMANDS = {
    "synth": (cmd_synth, "generate a planted-anomaly synthetic dataset"),
    "eigenfeat": (cmd_eigenfeat, "replace node features with normalized-Laplacian eigenvectors"),
    "corrupt": (cmd_corrupt, "build pseudo-labeled corrupt graphs for pre-training"),
    "train": (cmd_train, "supervised training"),
    "pretrain": (cmd_pretrain, "label-free pre-training on a corrupt dataset"),
    "finetune": (cmd_finetune, "fine-tune a checkpoint on labeled data"),
    "score": (cmd_score, "write per-node anomaly scores"),
    "eval": (cmd_eval, "AUC/MAP of a scores file"),
    "analyze": (cmd_analyze, "cosine-similarity distributions of raw features and embeddings"),
    "ablate": (cmd_ablate, "train a grid of model variants and compare them"),
}


def build_parser():
    parser = _Parser(prog="gcad", description="Context-aware graph contrastive anomaly detection.")
    parser.add_argument("--version", action="version", version=f"gcad {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, (_, summary) in COMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary, epilog=config_help(name),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "eval":
            p.add_argument("--scores", required=True, help="scores CSV (graph_id,node_id,score,label)")
            p.add_argument("--out", help="output directory (default: next to the scores file)")
        else:
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("--config", help="JSON config file or a previous config.snapshot.json")
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dot-path config override")
            p.add_argument("--seed", type=int, help="random seed")
        if name not in ("synth", "eval"):
            p.add_argument("--data", help="dataset directory")
        if name in ("finetune", "score", "analyze"):
            p.add_argument("--checkpoint", help="checkpoint file")
        if name in ("score", "analyze"):
            p.add_argument("--part", default="test", choices=["train", "valid", "test", "all"])
        if name == "synth":
            p.add_argument("--preset", help=f"one of {sorted(PRESETS)}")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = COMMANDS[args.command][0]
    try:
        cfg, paths, seed = resolve_config(args.command, args)
        if args.command == "synth" and args.preset is not None:
            cfg["preset"] = args.preset
        _setup_logging(getattr(args, "out", None), args.verbose)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            logging.captureWarnings(True)
            try:
                return handler(args, cfg, paths, seed)
            finally:
                logging.captureWarnings(False)
    except UsageError as exc:
        print(f"gcad {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"gcad {args.command}: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, CheckpointError) as exc:
        print(f"gcad {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GcadError as exc:
        print(f"gcad {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
