"""Bags manifest: the file-level contract between featurize and the trainers.

A manifest JSON records, per slide, the path of its MILF feature file, its
14-bin label, and (in blob mode) the per-patch estimated droplet counts used
to build the baseline's aggregated features.
"""

import json
import os

from . import bags
from .annotations import count_vector


def build_manifest(slides, source, image_root, out_dir):
    """Assemble bags for every slide, write per-slide MILF feature files under
    out_dir/features, and return the manifest dict."""
    feat_dir = os.path.join(out_dir, "features")
    os.makedirs(feat_dir, exist_ok=True)
    entries = []
    feature_dim = None
    for slide in slides:
        bag = bags.assemble_bag(slide, source, image_root=image_root)
        feature_dim = bag.features.shape[1]
        rel = os.path.join("features", bag.slide_id + ".milf")
        bags.write_embeddings(os.path.join(out_dir, rel), bag.features)
        entry = {
            "slide_id": bag.slide_id,
            "features": rel,
            "label": [int(v) for v in bag.label],
        }
        if source.mode == "blob_featurizer":
            entry["patch_counts"] = [int(c) for c in bag.features[:, 0]]
        entries.append(entry)
    return {
        "mode": source.mode,
        "feature_dim": feature_dim,
        "slides": entries,
    }


def save_manifest(manifest, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_manifest(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh), os.path.dirname(os.path.abspath(path))


def load_bag(entry, root):
    feats = bags.read_embeddings(os.path.join(root, entry["features"]))
    return bags.Bag(
        slide_id=entry["slide_id"],
        features=feats,
        label=count_vector(entry["label"]),
    )


def baseline_features(entry, root):
    """(features, label) pair for the baseline MLP: log1p class histogram of
    patch counts in blob mode, pooled embedding rows otherwise."""
    label = count_vector(entry["label"])
    if entry.get("patch_counts") is not None:
        return bags.baseline_aggregate(entry["patch_counts"]), label
    feats = bags.read_embeddings(os.path.join(root, entry["features"]))
    return bags.pooled_embeddings(feats), label


def labeled_ids(manifest):
    return [(e["slide_id"], count_vector(e["label"])) for e in manifest["slides"]]


def entries_by_id(manifest):
    return {e["slide_id"]: e for e in manifest["slides"]}
