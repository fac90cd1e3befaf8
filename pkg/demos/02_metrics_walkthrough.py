"""Walkthrough: score an edited object against ground truth, including a
missing object that receives the data-driven penalty.

Run with ``python demos/02_metrics_walkthrough.py``.
"""

import numpy as np

from manip3d import (BoundingBox, NormalizationSpec, ObjectEvalInput, PenaltyPolicy, PointCloud,
                     RelocationPair, aggregate, chamfer, diou, evaluate_batch, missing_penalty,
                     ra_dino, silog)

rng = np.random.default_rng(0)

# Box overlap: DIoU subtracts the squared centre distance over the enclosing diagonal.
print("DIoU identical :", diou(BoundingBox(0, 0, 10, 10), BoundingBox(0, 0, 10, 10)))
print("DIoU shifted   :", round(diou(BoundingBox(2, 0, 12, 10), BoundingBox(0, 0, 10, 10)), 4))

# SILog ignores a global scale of the prediction.
gt = rng.uniform(1, 10, (32, 32))
print("SILog(3*gt, gt):", silog(3 * gt, gt, np.ones_like(gt, bool)))

# Chamfer distance, normalised by a scene diagonal.
a = rng.normal(size=(500, 3))
print("Chamfer(a, a+0.1):", round(chamfer(PointCloud(a), PointCloud(a + [0.1, 0, 0]), 10.0), 5))

# RA-DINO: appearance similarity damped by relocation errors.
print("RA-DINO exact move     :", ra_dino(0.9, RelocationPair([1, 0, 0], [1, 0, 0])))
print("RA-DINO orthogonal move:", round(ra_dino(0.9, RelocationPair([0, 1, 0], [1, 0, 0])), 4))


def item(k, noise):
    h, w = 24, 24
    mask = np.zeros((h, w), bool)
    mask[6:16, 6:16] = True
    gt_depth = rng.uniform(2, 4, (h, w))
    pts = rng.normal(size=(300, 3))
    v = rng.normal(size=3)
    shift = int(noise * 3)
    return ObjectEvalInput(
        f"img{k}", "mug", True,
        BoundingBox(6 + shift, 6, 16 + shift, 16), BoundingBox(6, 6, 16, 16),
        np.roll(mask, shift, axis=1), mask, gt_depth * (1 + noise * 0.1), gt_depth,
        PointCloud(pts + noise * 0.2), PointCloud(pts), PointCloud(rng.normal(scale=4, size=(800, 3))),
        dino_similarity=0.95 - 0.3 * noise, relocation=RelocationPair(v + noise, v))


inputs = [item(k, noise) for k, noise in enumerate(rng.uniform(0, 1, 8))]
inputs.append(ObjectEvalInput("img8", "mug", localized=False))   # the editor lost the object

policy = PenaltyPolicy()   # max(q99, 1.2 * q95) over the localized objects
reports, penalties = evaluate_batch(inputs, policy, NormalizationSpec())
print("\nper-metric penalties for the missing object:")
for metric, value in penalties.items():
    print(f"  {metric:>9}: {value:.4f}")
print("check chamfer penalty:",
      penalties["chamfer"] == missing_penalty([r.raw["chamfer"] for r in reports if r.item_id != "img8"], policy))

summary = aggregate(reports)
print("\nbatch means on the 0-100 scale:")
for metric, value in summary.normalized.items():
    print(f"  {metric:>10}: {value:6.2f}")
