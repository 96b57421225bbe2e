"""Command-line entry point wiring the pipeline stages:
ingest -> augment -> featurize (or synthgen) -> split -> train/cv -> report.

Every subcommand is pipe-composable via file artifacts only; a run manifest
with input hashes is dropped next to each command's outputs.
"""

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time

from . import annotations, augment, evalcv, manifest, model_mil, model_mlp, synthgen, training
from .bags import FeatureSource

MAX_EPOCHS = {"mil": 120, "mlp": 200}


class CliError(Exception):
    pass


def _hash_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out_dir, argv, inputs, outputs):
    os.makedirs(out_dir, exist_ok=True)
    doc = {
        "run_id": hashlib.sha256((" ".join(argv) + str(time.time())).encode()).hexdigest()[:16],
        "argv": list(argv),
        "inputs": {p: _hash_file(p) for p in inputs if os.path.isfile(p)},
        "outputs": sorted(outputs),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def parse_config_file(path):
    """Flat key=value config file mirroring TrainConfig fields."""
    values = {}
    field_types = {f.name: f.type for f in dataclasses.fields(training.TrainConfig)}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError("%s:%d: expected key=value" % (path, ln))
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in field_types:
                raise CliError("%s:%d: unknown config key %r" % (path, ln, key))
            ftype = field_types[key]
            if ftype in (bool, "bool"):
                values[key] = value.lower() in ("1", "true", "yes")
            elif ftype in (int, "int"):
                values[key] = int(value)
            else:
                values[key] = float(value)
    return values


def make_train_config(model, seed, config_path=None, **overrides):
    values = {"max_epochs": MAX_EPOCHS[model], "seed": seed}
    if config_path:
        values.update(parse_config_file(config_path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return training.TrainConfig(**values)


def _split_items(model, man, root, ids):
    by_id = manifest.entries_by_id(man)
    missing = [sid for sid in ids if sid not in by_id]
    if missing:
        raise CliError("slide_ids in split but not in manifest: %s" % ", ".join(missing[:5]))
    if model == "mil":
        return [manifest.load_bag(by_id[sid], root) for sid in ids]
    return [manifest.baseline_features(by_id[sid], root) for sid in ids]


def run_fold(model, man, root, split, cfg, out_dir, tag=None):
    """Train one (seed, fold) run; write its epoch log + checkpoint; return a
    MetricsRow."""
    os.makedirs(out_dir, exist_ok=True)
    tag = tag or "%s_seed%d_fold%d" % (model, cfg.seed, split.fold)
    train_items = _split_items(model, man, root, split.train)
    val_items = _split_items(model, man, root, split.val)
    test_items = _split_items(model, man, root, split.test)
    params, logs = training.train_model(model, train_items, val_items, cfg)

    log_path = os.path.join(out_dir, tag + "_log.csv")
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_mae", "val_mse", "elapsed_s"])
        for l in logs:
            w.writerow([l.epoch, "%.8f" % l.train_loss, "%.8f" % l.val_mae, "%.8f" % l.val_mse, "%.3f" % l.elapsed_s])
    ckpt_path = os.path.join(out_dir, tag + ".ckpt")
    (model_mil if model == "mil" else model_mlp).save_checkpoint(params, ckpt_path)

    def metrics(items):
        if model == "mil":
            preds = [(model_mil.mil_forward(params, it.features).y, it.label) for it in items]
        else:
            preds = [(model_mlp.mlp_forward(params, x).y, y) for x, y in items]
        return evalcv.dataset_metrics(preds)

    val_mae, val_mse = metrics(val_items)
    test_mae, test_mse = metrics(test_items)
    return evalcv.MetricsRow(
        seed=cfg.seed, fold=split.fold, val_mae=val_mae, test_mae=test_mae,
        val_mse=val_mse, test_mse=test_mse,
    )


def run_cv(model, manifest_path, splits_dir, seeds, out_dir, config_path=None, k=5):
    man, root = manifest.load_manifest(manifest_path)
    splits = evalcv.read_split_csvs(splits_dir, k=k)
    rows = []
    for seed in seeds:
        cfg = make_train_config(model, seed, config_path)
        for split in splits:
            rows.append(run_fold(model, man, root, split, cfg, os.path.join(out_dir, "runs")))
    report_path = os.path.join(out_dir, "report.csv")
    evalcv.write_report(rows, report_path)
    with open(os.path.join(out_dir, "rows.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "fold", "val_mae", "test_mae", "val_mse", "test_mse"])
        for r in sorted(rows, key=lambda r: (r.seed, r.fold)):
            w.writerow([r.seed, r.fold] + ["%.6f" % getattr(r, m) for m in evalcv.METRIC_NAMES])
    return rows, report_path


def _cmd_ingest(args, argv):
    parsed = [annotations.load_dataset(p) for p in args.inputs]
    merged = annotations.merge_annotations(parsed)
    annotations.save_dataset(merged, args.out)
    write_run_manifest(os.path.dirname(args.out) or ".", argv, args.inputs, [args.out])


def _cmd_stats(args, argv):
    records = annotations.load_dataset(args.inputs[0])
    stats, total = annotations.dataset_stats(records)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", "cell_count"])
        for k in range(annotations.NUM_CLASSES):
            w.writerow([k + 1, int(stats[k])])
        w.writerow(["TOTAL", total])


def _cmd_augment(args, argv):
    slides = annotations.load_dataset(args.inputs[0])
    specs = []
    for name in args.specs.split(","):
        if name not in augment.STANDARD_SPECS:
            raise CliError("unknown augmentation spec %r" % name)
        specs.append(augment.STANDARD_SPECS[name])
    per_spec = augment.augment_dataset(slides, specs, args.images, args.out)
    outputs = []
    for spec, records in zip(specs, per_spec):
        path = os.path.join(args.out, "annotations%s.json" % spec.suffix)
        annotations.save_dataset(records, path)
        outputs.append(path)
    merged = annotations.merge_annotations([slides] + per_spec)
    merged_path = os.path.join(args.out, "annotations_merged.json")
    annotations.save_dataset(merged, merged_path)
    write_run_manifest(args.out, argv, args.inputs, outputs + [merged_path])


def _cmd_featurize(args, argv):
    slides = annotations.load_dataset(args.inputs[0])
    if args.mode == "blob":
        source = FeatureSource(
            mode="blob_featurizer", threshold=args.threshold, ref_area=args.ref_area
        )
    else:
        if not args.emb:
            raise CliError("--mode embed requires --emb <dir>")
        source = FeatureSource(mode="embedding_file", emb_dir=args.emb)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    man = manifest.build_manifest(slides, source, args.images, out_dir)
    manifest.save_manifest(man, args.out)
    write_run_manifest(out_dir, argv, args.inputs, [args.out])


def _cmd_synthgen(args, argv):
    cfg = synthgen.SynthConfig(n_slides=args.n, seed=args.seed, grid_safe=args.grid_safe)
    synthgen.generate(cfg, args.out)
    write_run_manifest(args.out, argv, [], [os.path.join(args.out, "annotations.json")])


def _cmd_split(args, argv):
    man, _ = manifest.load_manifest(args.inputs[0])
    splits = evalcv.make_splits(manifest.labeled_ids(man), k=args.k, seed=args.seed)
    evalcv.write_split_csvs(splits, args.out)
    write_run_manifest(args.out, argv, args.inputs, [])


def _cmd_train(args, argv):
    man, root = manifest.load_manifest(args.manifest)
    splits = evalcv.read_split_csvs(args.splits, k=args.k)
    cfg = make_train_config(args.model, args.seed, args.config)
    row = run_fold(args.model, man, root, splits[args.fold], cfg, args.out)
    with open(os.path.join(args.out, "row.json"), "w") as fh:
        json.dump(dataclasses.asdict(row), fh, indent=2)
        fh.write("\n")


def _cmd_cv(args, argv):
    seeds = [int(s) for s in args.seeds.split(",")]
    run_cv(
        args.model, args.manifest, args.splits, seeds, args.out,
        config_path=args.config, k=args.k,
    )
    write_run_manifest(args.out, argv, [args.manifest], [os.path.join(args.out, "report.csv")])


def _cmd_report(args, argv):
    rows = []
    if args.runs:
        for name in sorted(os.listdir(args.runs)):
            if name.endswith(".csv") and "log" not in name:
                rows.extend(evalcv.read_rows(os.path.join(args.runs, name)))
    for path in args.inputs:
        rows.extend(evalcv.read_rows(path))
    if not rows:
        raise CliError("no metric rows found")
    evalcv.write_report(rows, args.out)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="milcount",
        description="Bag-level droplet count regression pipeline (MIL head vs MLP baseline).",
    )
    parser.add_argument("--threads", type=int, default=1, help="worker hint; results are thread-count independent")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(func=func)
        return p

    p = add("ingest", _cmd_ingest, help="merge annotation files in order")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)

    p = add("stats", _cmd_stats, help="per-class cell totals")
    p.add_argument("--in", dest="inputs", nargs=1, required=True)
    p.add_argument("--out", required=True)

    p = add("augment", _cmd_augment, help="write augmented images + annotations")
    p.add_argument("--in", dest="inputs", nargs=1, required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--specs", default="b12,b08,blur3")

    p = add("featurize", _cmd_featurize, help="build bags and the manifest")
    p.add_argument("--mode", choices=("blob", "embed"), required=True)
    p.add_argument("--in", dest="inputs", nargs=1, required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--emb")
    p.add_argument("--threshold", type=int, default=200)
    p.add_argument("--ref-area", type=float, default=80.0)
    p.add_argument("--out", required=True)

    p = add("synthgen", _cmd_synthgen, help="generate an oracle-labeled synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--grid-safe", action="store_true")
    p.add_argument("--out", required=True)

    p = add("split", _cmd_split, help="stratified k-fold split CSVs")
    p.add_argument("--in", dest="inputs", nargs=1, required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("train", _cmd_train, help="train one (seed, fold) run")
    p.add_argument("--model", choices=("mil", "mlp"), required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = add("cv", _cmd_cv, help="cross-validate over seeds and folds")
    p.add_argument("--model", choices=("mil", "mlp"), required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--seeds", default="1")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = add("report", _cmd_report, help="aggregate metric rows into a report CSV")
    p.add_argument("--runs")
    p.add_argument("--in", dest="inputs", nargs="*", default=[])
    p.add_argument("--out", required=True)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else 2
    try:
        args.func(args, argv)
    except (CliError, ValueError, OSError, FloatingPointError, RuntimeError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
