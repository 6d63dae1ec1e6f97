"""Accuracy assessment on a prediction with known, controlled errors.

Instead of a trained model we perturb the reference fractions, which makes
each report easy to reason about.
"""

import numpy as np

from subpixel.evaluation import (
    aggregate_blocks,
    bias_histogram,
    boxplot_summary,
    compute_metrics,
    paired_samples,
    roc_analysis,
)
from subpixel.raster import synth_scene
from subpixel.reference import FractionMap, aggregate_fractions, confusion, kappa, reference_labels

pair = synth_scene(seed=2, coarse_rows=30, coarse_cols=30, factor=6)
ref = aggregate_fractions(pair.fine, 6)

rng = np.random.default_rng(0)
noisy = np.clip(ref.stack() + rng.normal(0, 0.08, ref.stack().shape), 0, 1)
pred = FractionMap(noisy[0], noisy[1], ref.valid_mask)

r1, p1 = paired_samples(ref, pred)
print("per-cell:", compute_metrics(r1, p1).to_dict()["classes"]["built-up"])

# averaging 3x3 blocks cancels much of the independent per-cell error
r3, p3 = paired_samples(aggregate_blocks(ref, 3), aggregate_blocks(pred, 3))
print("3x3 blocks:", compute_metrics(r3, p3, scale="3x3").to_dict()["classes"]["built-up"])

roc = roc_analysis(p1[:, 0], r1[:, 0], threshold=0.5)
print(f"ROC: AUC {roc.auc:.3f}, sensitivity {roc.sensitivity:.3f}, "
      f"specificity {roc.specificity:.3f}, kappa {roc.kappa:.3f}")

hist = bias_histogram(r1[:, 0], p1[:, 0])
print(f"within +/-0.15: {hist.within_15:.1%}, within +/-0.25: {hist.within_25:.1%}")

for g in boxplot_summary(r1[:, 0], p1[:, 0], 6)[::6]:
    print(f"  ref {g.label}/36  n={g.count:3d}  median {g.median:.3f}")

# the reference map itself is checked against truth at random fine cells
labels = reference_labels(pair.fine_bands, seed=0)
pick = rng.choice(labels.labels.size, 400, replace=False)
m = confusion(labels.labels.ravel()[pick], pair.fine.labels.ravel()[pick], labels=(1, 2, 0))
print(m.to_csv())
print("kappa:", round(kappa(m), 4))
