"""End-to-end walkthrough on a small synthetic dataset.

Generates oracle-labeled slides, builds blob-feature bags, makes stratified
5-fold splits, then trains the MLP baseline and the attention MIL head on one
fold each and prints count-space MAE next to a predict-the-training-mean
reference.

Run:  python demos/synthetic_pipeline.py [out_dir]
"""

import os
import sys
import tempfile

import numpy as np

from milcount import evalcv, manifest, synthgen, training
from milcount.bags import FeatureSource
from milcount.model_mil import mil_forward
from milcount.model_mlp import mlp_forward

out_root = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="milcount_demo_")
data_dir = os.path.join(out_root, "data")

print("== 1. synthetic slides ==")
cfg = synthgen.SynthConfig(n_slides=30, grid_safe=True, seed=7)
records = synthgen.generate(cfg, data_dir)
print("wrote %d slides to %s" % (len(records), data_dir))
print("first slide: %d cells, label bins %s" % (len(records[0].cells), records[0].label.tolist()))

print("\n== 2. bags and manifest ==")
source = FeatureSource(mode="blob_featurizer")
man = manifest.build_manifest(records, source, data_dir, out_root)
manifest.save_manifest(man, os.path.join(out_root, "manifest.json"))
entry = man["slides"][0]
print("feature dim %d, %d patches/slide" % (man["feature_dim"], len(entry["patch_counts"])))
print("patch counts of %s: %s" % (entry["slide_id"], entry["patch_counts"]))

print("\n== 3. splits ==")
splits = evalcv.make_splits(manifest.labeled_ids(man), k=5, seed=0)
fold = splits[0]
print("fold 0: %d train / %d val / %d test" % (len(fold.train), len(fold.val), len(fold.test)))

by_id = manifest.entries_by_id(man)


def items(ids, kind):
    if kind == "mil":
        return [manifest.load_bag(by_id[s], out_root) for s in ids]
    return [manifest.baseline_features(by_id[s], out_root) for s in ids]


labels = {sid: lab for sid, lab in manifest.labeled_ids(man)}
const = np.mean([np.log1p(labels[s].astype(float)) for s in fold.train], axis=0)
const_mae, _ = evalcv.dataset_metrics([(const, labels[s]) for s in fold.test])
print("constant-predictor test MAE: %.4f" % const_mae)

print("\n== 4. MLP baseline (fold 0) ==")
# Smaller accumulation window than the full-size runs: with only 18 training
# bags the default of 8 leaves too few updates per epoch for patience 5.
cfg_mlp = training.TrainConfig(max_epochs=200, accum_steps=2, seed=1)
params, logs = training.train_model(
    "mlp", items(fold.train, "mlp"), items(fold.val, "mlp"), cfg_mlp
)
test_pairs = [(mlp_forward(params, x).y, y) for x, y in items(fold.test, "mlp")]
mae, mse = evalcv.dataset_metrics(test_pairs)
print("stopped after %d epochs, test MAE %.4f (MSE %.4f)" % (len(logs), mae, mse))

print("\n== 5. attention MIL head (fold 0) ==")
cfg_mil = training.TrainConfig(max_epochs=30, accum_steps=2, seed=1)
params, logs = training.train_model(
    "mil", items(fold.train, "mil"), items(fold.val, "mil"), cfg_mil
)
test_pairs = [(mil_forward(params, b.features).y, b.label) for b in items(fold.test, "mil")]
mae, mse = evalcv.dataset_metrics(test_pairs)
print("stopped after %d epochs, test MAE %.4f (MSE %.4f)" % (len(logs), mae, mse))
print("\nartifacts kept in %s" % out_root)
