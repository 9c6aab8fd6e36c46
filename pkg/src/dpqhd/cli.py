"""Command-line front end: ``dpqhd train|compress|eval|bench``.

Configuration is a YAML tree (see ``DEFAULTS`` for every key); ``--set
section.key=value`` overrides single keys and the dedicated flags
(``--seed``, ``--data-dir``, ...) override those. Values given with ``--set``
are parsed as YAML scalars, so ``--set compression.bits=4`` is an integer.

Every random draw comes from the root seed through ``derive_seed``:

    projection matrix      derive_seed(seed, "projection")
    fresh-random factors   derive_seed(seed, "compression")
    calibration subsets    derive_seed(seed, "calibration")
    synthetic data         derive_seed(seed, "data")

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing or malformed files), 3 numeric error.
"""

import argparse
import copy
import json
import math
import os
import sys
import tempfile

import numpy as np
import yaml

from . import calibration as cal
from . import container, cost_model, datasets
from .adaptive_inference import AdaptiveConfig, measure_ops_reduction
from .compression import CompressionConfig, run_pipeline
from .errors import ConfigError, DataError, DpqhdError, UsageError
from .hdc_core import FullEncoder, Normalizer, accuracy, train_adaptive, train_centroid
from .tensor_core import derive_seed, gen_gaussian_matrix

DEFAULTS = {
    "seed": 0,
    "dim": 10000,
    "task": {
        "kind": "mnist",
        "path": None,
        "num_classes": 3,
        "num_features": 16,
        "separation": 5.0,
        "samples_per_class": 100,
    },
    "training": {"mode": "centroid", "lr": 0.035, "epochs": 5},
    "compression": {
        "rank": 256,
        "prune_ratio": 0.7,
        "bits": 3,
        "mode": "svd",
        "quantize_p1": True,
        "quantize_p2": True,
        "quantize_model": True,
        "activation_bits": 8,
    },
    # grids are optional; without them the compression rank/ratio are used
    "calibration": {
        "rank_grid": None,
        "prune_grid": None,
        "subset_size": 128,
        "num_subsets": 5,
        "accuracy_tolerance": 1.0,
    },
    # tau: "calibrated" reads the threshold stored in the artifact
    "adaptive": {
        "tau": "calibrated",
        "elimination": True,
        "early_exit": True,
        "complete_survivors": True,
    },
}

MODEL_FILE = "model.dpqh"
COMPRESSED_FILE = "compressed.dpqh"
CALIBRATION_FILE = "calibration.json"
REPORT_FILE = "report.json"


# ---------------------------------------------------------------- config

def _merge(base, over, where=""):
    for key, value in over.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a mapping")
            _merge(base[key], value, path + ".")
        else:
            base[key] = value
    return base


def _set(cfg, assignment):
    if "=" not in assignment:
        raise UsageError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"--set {key}: {exc}") from None
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[part]
    if parts[-1] not in node or isinstance(node[parts[-1]], dict):
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def load_config(args):
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                doc = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
        if doc is not None:
            if not isinstance(doc, dict):
                raise ConfigError(f"{args.config}: top level must be a mapping")
            _merge(cfg, doc)
    for assignment in args.set or ():
        _set(cfg, assignment)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.data_dir is not None:
        cfg["task"]["path"] = args.data_dir
    if args.dataset is not None:
        cfg["task"]["kind"] = args.dataset
    _validate(cfg)
    return cfg


def _validate(cfg):
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {cfg['seed']!r}")
    if not isinstance(cfg["dim"], int) or cfg["dim"] < 1:
        raise ConfigError(f"dim must be an integer >= 1, got {cfg['dim']!r}")
    if cfg["task"]["kind"] not in datasets.KINDS:
        raise ConfigError(f"task.kind must be one of {datasets.KINDS}")
    if cfg["training"]["mode"] not in ("centroid", "adaptive"):
        raise ConfigError("training.mode must be 'centroid' or 'adaptive'")
    tau = cfg["adaptive"]["tau"]
    if tau != "calibrated" and not isinstance(tau, (int, float)):
        raise ConfigError("adaptive.tau must be a number or 'calibrated'")


def _source(cfg, split):
    t = cfg["task"]
    return datasets.DataSource(
        kind=t["kind"], path=t["path"], split=split, num_classes=t["num_classes"],
        num_features=t["num_features"], separation=t["separation"],
        samples_per_class=t["samples_per_class"], seed=derive_seed(cfg["seed"], "data"))


def load_split(cfg, split):
    try:
        return datasets.load(_source(cfg, split))
    except OSError as exc:
        raise DataError(f"cannot read {exc.filename}: {exc.strerror}") from None


def _resolve_rank(value, encoder):
    if value == "full":
        return min(encoder.input_dim, encoder.output_dim)
    if not isinstance(value, int):
        raise ConfigError(f"rank must be an integer or 'full', got {value!r}")
    return value


def compression_config(cfg, encoder, rank=None, prune_ratio=None):
    c = cfg["compression"]
    return CompressionConfig(
        rank=_resolve_rank(c["rank"] if rank is None else rank, encoder),
        prune_ratio=float(c["prune_ratio"] if prune_ratio is None else prune_ratio),
        bits=c["bits"], mode=c["mode"], quantize_p1=bool(c["quantize_p1"]),
        quantize_p2=bool(c["quantize_p2"]), quantize_model=bool(c["quantize_model"]),
        activation_bits=c["activation_bits"], seed=derive_seed(cfg["seed"], "compression"))


def calibration_plan(cfg, encoder):
    c = cfg["calibration"]
    ranks = c["rank_grid"] or [cfg["compression"]["rank"]]
    ratios = c["prune_grid"] or [cfg["compression"]["prune_ratio"]]
    return cal.CalibrationPlan(
        rank_grid=sorted(_resolve_rank(r, encoder) for r in ranks),
        prune_grid=[float(p) for p in ratios], subset_size=c["subset_size"],
        num_subsets=c["num_subsets"], accuracy_tolerance=c["accuracy_tolerance"],
        mode=cfg["compression"]["mode"], seed=derive_seed(cfg["seed"], "calibration"))


def adaptive_config(cfg, threshold):
    a = cfg["adaptive"]
    tau = a["tau"]
    if tau == "calibrated":
        tau = math.inf if threshold is None else threshold
    return AdaptiveConfig(float(tau), bool(a["elimination"]), bool(a["early_exit"]),
                          bool(a["complete_survivors"]))


# ---------------------------------------------------------------- output

def _clean(value):
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Metrics:
    """Collects line-delimited JSON records; written once, atomically."""

    def __init__(self, path):
        self.path = path
        self.records = []

    def emit(self, record):
        self.records.append(_clean(record))

    def flush(self):
        if self.path:
            lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)
            _atomic_write(self.path, lines)


def _table(header, rows):
    cells = [header] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*cells[0]), fmt.format(*("-" * w for w in widths))]
    lines.extend(fmt.format(*row) for row in cells[1:])
    return "\n".join(lines)


def _save(path, artifact):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    container.save(path, artifact)


def _load_artifact(path):
    try:
        return container.load(path)
    except OSError as exc:
        raise DataError(f"cannot read artifact {path}: {exc.strerror}") from None


# ---------------------------------------------------------------- commands

def train(cfg, out, metrics):
    """Fit the normalizer, draw the projection, train; returns the artifact."""
    tr = load_split(cfg, "train")
    te = load_split(cfg, "test")
    norm = Normalizer.fit(tr.features)
    tr, te = tr.normalized(norm), te.normalized(norm)
    P = gen_gaussian_matrix(tr.num_features, cfg["dim"], derive_seed(cfg["seed"], "projection"))
    encoder = FullEncoder(P)
    t = cfg["training"]
    if t["mode"] == "centroid":
        model = train_centroid(encoder, tr)
    else:
        model = train_adaptive(encoder, tr, float(t["lr"]), int(t["epochs"]))
    art = container.Artifact(encoder, model, norm, cfg["dim"])
    path = os.path.join(out, MODEL_FILE)
    _save(path, art)
    # report on the stored (float32) artifact so reloading gives the same numbers
    art = container.load(path)
    acc = accuracy(art.encoder, art.model, te)
    report = cost_model.account(art.encoder, art.model)
    print(f"baseline accuracy: {acc:.2f}%  ({len(te)} test samples)")
    print(report.table())
    metrics.emit({"record": "train", "accuracy": acc, "artifact": MODEL_FILE,
                  **report.as_dict()})
    return art, acc, report


def compress(cfg, out, metrics, model_path=None):
    model_path = model_path or os.path.join(out, MODEL_FILE)
    base = _load_artifact(model_path)
    if not isinstance(base.encoder, FullEncoder):
        raise UsageError(f"{model_path} already holds a decomposed encoder")
    tr, te = load_split(cfg, "train"), load_split(cfg, "test")
    if base.encoder.input_dim != tr.num_features:
        raise DataError(f"{model_path} expects {base.encoder.input_dim} features, "
                        f"data has {tr.num_features}")
    tr, te = tr.normalized(base.normalizer), te.normalized(base.normalizer)
    encoder, model = base.encoder, base.model
    plan = calibration_plan(cfg, encoder)
    subsets = cal.calibration_subsets(tr.labels, tr.num_classes, plan.subset_size,
                                      plan.num_subsets, plan.seed)
    calib = tr.subset(np.concatenate(subsets))
    train_set = tr if cfg["compression"]["mode"] == "random" else None

    factors = None
    rank = prune_ratio = None
    rows = []
    if cfg["calibration"]["rank_grid"] or cfg["calibration"]["prune_grid"]:
        report, factors = cal.calibrate(encoder, model, tr, plan, train_set)
        rank, prune_ratio, rows = report.chosen_rank, report.chosen_prune_ratio, report.table
    ccfg = compression_config(cfg, encoder, rank, prune_ratio)
    arts = run_pipeline(encoder, model, ccfg, calib, train_set, factors)
    threshold = cal.threshold_on_subsets(arts.encoder, arts.model, tr, plan)
    report = cal.CalibrationReport(ccfg.rank, ccfg.prune_ratio, threshold, list(rows))
    out_art = container.Artifact(arts.encoder, arts.model, base.normalizer, base.baseline_dim,
                                 threshold)
    path = os.path.join(out, COMPRESSED_FILE)
    _save(path, out_art)
    _atomic_write(os.path.join(out, CALIBRATION_FILE),
                  json.dumps(_clean(report.records()), indent=1, sort_keys=True) + "\n")

    base_cost = cost_model.account(encoder, model)
    base_calib = accuracy(encoder, model, calib)
    names = {"D": "D", "P": "D+P", "Q": "D+P+Q"}
    stage_rows = [("baseline", f"{base_calib:.2f}", f"{base_cost.total_bytes:,}", "1.00x",
                   f"{base_cost.encode_macs + base_cost.similarity_macs_full:,}")]
    for rec in arts.provenance:
        stage_rows.append((names[rec.stage], f"{rec.accuracy:.2f}", f"{rec.total_bytes:,}",
                           f"{base_cost.baseline_bytes / rec.total_bytes:.2f}x",
                           f"{rec.macs:,}"))
    loaded = container.load(path)
    final = cost_model.account(loaded.encoder, loaded.model, base.baseline_dim)
    acc_base = accuracy(encoder, model, te)
    acc_final = accuracy(loaded.encoder, loaded.model, te)

    if rows:
        print("calibration candidates")
        print(_table(["kind", "value", "mean acc", "std"],
                     [(r.kind, r.value, f"{r.mean_accuracy:.2f}", f"{r.std_accuracy:.2f}")
                      for r in rows]))
        print()
    print(f"rank {ccfg.rank}, prune ratio {ccfg.prune_ratio}, bits {ccfg.bits}, "
          f"threshold {threshold:.6f}")
    print(_table(["stage", "calib acc", "bytes", "reduction", "MACs"], stage_rows))
    print(f"test accuracy: baseline {acc_base:.2f}%, compressed {acc_final:.2f}%")
    print(final.table())

    for r in report.records():
        metrics.emit({"record": "calibration", **r} if r["record"] == "candidate"
                     else {**r, "record": "calibration_choice"})
    metrics.emit({"record": "stage", "stage": "baseline", "accuracy": base_calib,
                  "total_bytes": base_cost.total_bytes,
                  "macs": base_cost.encode_macs + base_cost.similarity_macs_full})
    for rec in arts.provenance:
        metrics.emit({"record": "stage", **rec.as_dict(), "stage": names[rec.stage]})
    metrics.emit({"record": "compress", "accuracy_baseline": acc_base,
                  "accuracy": acc_final, "artifact": COMPRESSED_FILE, "rank": ccfg.rank,
                  "prune_ratio": ccfg.prune_ratio, "bits": ccfg.bits,
                  "threshold": threshold, **final.as_dict()})
    return loaded, acc_base, acc_final, final


def evaluate(cfg, out, metrics, artifact_path=None, mode="adaptive"):
    artifact_path = artifact_path or os.path.join(out, COMPRESSED_FILE)
    art = _load_artifact(artifact_path)
    te = load_split(cfg, "test")
    if art.encoder.input_dim != te.num_features:
        raise DataError(f"{artifact_path} expects {art.encoder.input_dim} features, "
                        f"data has {te.num_features}")
    te = te.normalized(art.normalizer)
    acfg = AdaptiveConfig.disabled() if mode == "full" else adaptive_config(cfg, art.threshold)
    ops = measure_ops_reduction(art.encoder, art.model, te, acfg)
    rec = {"record": "eval", "mode": mode, "artifact": os.path.basename(artifact_path),
           "tau": acfg.tau, "accuracy": ops.accuracy_adaptive,
           "accuracy_full": ops.accuracy_full,
           "accuracy_gap": ops.accuracy_full - ops.accuracy_adaptive,
           **{k: v for k, v in ops.as_dict().items()
              if k not in ("accuracy_adaptive", "accuracy_full")}}
    print(_table(["metric", "value"], [(k, _fmt(v)) for k, v in rec.items() if k != "record"]))
    metrics.emit(rec)
    return rec


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.4f}"
    return str(v)


def bench(cfg, out, metrics):
    _, acc_base, base_cost = train(cfg, out, metrics)
    print()
    _, _, acc_comp, comp_cost = compress(cfg, out, metrics)
    print()
    ev = evaluate(cfg, out, metrics)
    report = {
        "record": "bench",
        "accuracy_baseline": acc_base,
        "accuracy_compressed": acc_comp,
        "accuracy_adaptive": ev["accuracy"],
        "memory_reduction": comp_cost.reduction_vs_baseline,
        "ops_reduction_percent": ev["reduction_percent"],
        "early_exit_rate": ev["early_exit_rate"],
        "speedup_proxy": cost_model.speedup_proxy(base_cost, comp_cost),
        "speedup_proxy_adaptive": cost_model.speedup_proxy(base_cost, comp_cost,
                                                           ev["macs_mean"]),
        "baseline": base_cost.as_dict(),
        "compressed": comp_cost.as_dict(),
    }
    _atomic_write(os.path.join(out, REPORT_FILE),
                  json.dumps(_clean(report), indent=1, sort_keys=True) + "\n")
    print()
    flat = [(k, _fmt(v)) for k, v in report.items() if not isinstance(v, dict) and k != "record"]
    print(_table(["bench", "value"], flat))
    metrics.emit(report)
    return report


# ---------------------------------------------------------------- entry

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, help="root seed (overrides config)")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--data-dir", help="dataset directory (overrides task.path)")
    common.add_argument("--dataset", help="dataset kind (overrides task.kind)")
    common.add_argument("--metrics", help="write line-delimited JSON records here")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key, e.g. compression.bits=4")

    parser = _Parser(prog="dpqhd", description="Compress and evaluate HDC classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train an uncompressed model")
    p = sub.add_parser("compress", parents=[common], help="calibrate and compress a model")
    p.add_argument("--model", help=f"input artifact (default: OUT/{MODEL_FILE})")
    p = sub.add_parser("eval", parents=[common], help="evaluate an artifact")
    p.add_argument("--artifact", help=f"artifact to evaluate (default: OUT/{COMPRESSED_FILE})")
    p.add_argument("--mode", choices=("full", "adaptive"), default="adaptive")
    sub.add_parser("bench", parents=[common], help="train, compress and evaluate")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args)
        metrics = Metrics(args.metrics)
        if args.command == "train":
            train(cfg, args.out, metrics)
        elif args.command == "compress":
            compress(cfg, args.out, metrics, args.model)
        elif args.command == "eval":
            evaluate(cfg, args.out, metrics, args.artifact, args.mode)
        else:
            bench(cfg, args.out, metrics)
        metrics.flush()
    except DpqhdError as exc:
        print(f"dpqhd: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
