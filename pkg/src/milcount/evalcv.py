"""Slide-level metrics in original count space, stratified five-fold split
generation, and mean +- sample-std report aggregation."""

import csv
import os
from dataclasses import dataclass

import numpy as np

from .augment import strip_suffix

METRIC_NAMES = ("val_mae", "test_mae", "val_mse", "test_mse")


@dataclass(frozen=True)
class MetricsRow:
    seed: int
    fold: int
    val_mae: float
    test_mae: float
    val_mse: float = float("nan")
    test_mse: float = float("nan")


@dataclass(frozen=True)
class FoldSummary:
    group: str
    n: int
    mean: dict  # metric name -> mean
    std: dict  # metric name -> sample std (None when n == 1)


@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train: tuple
    val: tuple
    test: tuple


def slide_metrics(y_pred_log, y_true_counts):
    """MAE/MSE for one slide, mapped back to count space.

    Predictions are expm1-inverted and clamped at 0 (counts are non-negative),
    then compared bin-wise against the ground-truth CountVector.
    """
    c = np.maximum(np.expm1(np.asarray(y_pred_log, dtype=np.float64)), 0.0)
    y = np.asarray(y_true_counts, dtype=np.float64)
    diff = c - y
    return float(np.abs(diff).mean()), float((diff * diff).mean())


def dataset_metrics(pred_label_pairs):
    """Unweighted mean of slide_metrics over a split, in manifest order."""
    pairs = list(pred_label_pairs)
    if not pairs:
        raise ValueError("cannot evaluate an empty split")
    maes, mses = zip(*(slide_metrics(p, y) for p, y in pairs))
    return float(np.mean(maes)), float(np.mean(mses))


def make_splits(labeled_ids, k=5, seed=0, rng_stream=None):
    """Stratified k-fold splits over source slides.

    `labeled_ids` is an ordered list of (slide_id, 14-bin label).  Source
    slides (ids without a known augmentation suffix) are stratified by their
    dominant label class (argmax, ties to the lowest class), shuffled within
    each stratum by the seeded "split" stream, and dealt round-robin to folds.
    Fold i uses fold i as test, fold (i+1) mod k as val, the rest as train.
    Augmented slides always inherit their source's assignment.
    """
    from .rngstreams import stream

    ids = [sid for sid, _ in labeled_ids]
    labels = dict(labeled_ids)
    sources = [sid for sid in ids if strip_suffix(sid) == sid]
    for sid in ids:
        src = strip_suffix(sid)
        if src != sid and src not in labels:
            raise ValueError("augmented slide %r has no source slide %r" % (sid, src))
    if len(sources) < k:
        raise ValueError("need at least %d source slides, have %d" % (k, len(sources)))

    strata = {}
    for sid in sources:
        strata.setdefault(int(np.argmax(labels[sid])), []).append(sid)

    rng = rng_stream if rng_stream is not None else stream(seed, "split")
    fold_of = {}
    next_fold = 0
    for key in sorted(strata):
        members = sorted(strata[key])
        order = [members[i] for i in rng.permutation(len(members))]
        for i, sid in enumerate(order):
            fold_of[sid] = (next_fold + i) % k
        next_fold = (next_fold + len(order)) % k

    splits = []
    for i in range(k):
        test_f, val_f = i, (i + 1) % k
        roles = {"train": [], "val": [], "test": []}
        for sid in ids:  # manifest order, augmented co-located with sources
            f = fold_of[strip_suffix(sid)]
            role = "test" if f == test_f else "val" if f == val_f else "train"
            roles[role].append(sid)
        splits.append(
            FoldSplit(fold=i, train=tuple(roles["train"]), val=tuple(roles["val"]), test=tuple(roles["test"]))
        )
    return splits


def write_split_csvs(splits, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for s in splits:
        for role in ("train", "val", "test"):
            path = os.path.join(out_dir, "fold%d_%s.csv" % (s.fold, role))
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["slide_id"])
                for sid in getattr(s, role):
                    w.writerow([sid])


def read_split_csvs(in_dir, k=5):
    splits = []
    for i in range(k):
        roles = {}
        for role in ("train", "val", "test"):
            path = os.path.join(in_dir, "fold%d_%s.csv" % (i, role))
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
            if not rows or rows[0] != ["slide_id"]:
                raise ValueError("%s: expected a slide_id header" % path)
            roles[role] = tuple(r[0] for r in rows[1:])
        splits.append(FoldSplit(fold=i, **roles))
    return splits


def _summary(group, rows):
    vals = {m: np.array([getattr(r, m) for r in rows], dtype=np.float64) for m in METRIC_NAMES}
    mean = {m: float(v.mean()) for m, v in vals.items()}
    std = {m: (float(v.std(ddof=1)) if len(rows) > 1 else None) for m, v in vals.items()}
    return FoldSummary(group=group, n=len(rows), mean=mean, std=std)


def aggregate_rows(rows, group_by="overall"):
    """Mean and sample standard deviation (n-1) of each metric.

    group_by="seed" gives one summary per seed.  group_by="overall" gives one
    summary row: when every seed covers the same fold set, it is the mean of
    the per-seed means (the baseline table's rule); otherwise it aggregates
    only the lowest seed's rows across folds (the MIL table's rule, which
    excludes extra partial-seed reruns).
    """
    if not rows:
        raise ValueError("no metric rows to aggregate")
    seeds = sorted({r.seed for r in rows})
    if group_by == "seed":
        return [_summary("seed%d" % s, [r for r in rows if r.seed == s]) for s in seeds]
    if group_by != "overall":
        raise ValueError("group_by must be 'seed' or 'overall'")
    fold_sets = {s: frozenset(r.fold for r in rows if r.seed == s) for s in seeds}
    if len(set(fold_sets.values())) == 1 and len(seeds) > 1:
        per_seed = aggregate_rows(rows, group_by="seed")
        vals = {m: np.array([g.mean[m] for g in per_seed]) for m in METRIC_NAMES}
        return [
            FoldSummary(
                group="overall",
                n=len(per_seed),
                mean={m: float(v.mean()) for m, v in vals.items()},
                std={m: (float(v.std(ddof=1)) if len(per_seed) > 1 else None) for m, v in vals.items()},
            )
        ]
    primary = [r for r in rows if r.seed == seeds[0]]
    s = _summary("overall", primary)
    return [s]


def _fmt(v):
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return ""
    return "%.6f" % v


def write_report(rows, path):
    """Report CSV: per-(seed,fold) rows, then mean/std summary rows per seed
    and overall."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "fold", "val_mae", "test_mae", "val_mse", "test_mse"])
        for r in sorted(rows, key=lambda r: (r.seed, r.fold)):
            w.writerow([r.seed, r.fold] + [_fmt(getattr(r, m)) for m in METRIC_NAMES])
        groups = aggregate_rows(rows, "seed") + aggregate_rows(rows, "overall")
        for g in groups:
            w.writerow(["mean", g.group] + [_fmt(g.mean[m]) for m in METRIC_NAMES])
            w.writerow(["std", g.group] + [_fmt(g.std[m]) for m in METRIC_NAMES])


def read_rows(path):
    """Read the per-(seed,fold) rows of a metrics or report CSV; summary rows
    (non-integer seed column) are skipped.  Missing MSE columns become NaN."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            try:
                seed = int(rec["seed"])
            except (KeyError, TypeError, ValueError):
                continue
            def num(key):
                v = rec.get(key)
                return float(v) if v not in (None, "") else float("nan")
            rows.append(
                MetricsRow(
                    seed=seed,
                    fold=int(rec["fold"]),
                    val_mae=num("val_mae"),
                    test_mae=num("test_mae"),
                    val_mse=num("val_mse"),
                    test_mse=num("test_mse"),
                )
            )
    return rows
