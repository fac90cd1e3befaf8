"""Walkthrough: from per-frame camera tokens to filtered training pairs.

Run with ``python demos/03_curation_walkthrough.py``.
"""

import numpy as np

from manip3d import (CameraIntrinsics, CameraModel, DBSCANParams, FrameRecord, dbscan,
                     depth_filter, select_pair, static_clips)

rng = np.random.default_rng(1)

# 1. Camera tokens: three static shots with a camera move in between.
shots = [rng.normal(0, 1, 16), rng.normal(0, 1, 16), rng.normal(0, 1, 16)]
tokens = np.concatenate([
    shots[0] + rng.normal(0, 0.02, (40, 16)),
    np.linspace(shots[0], shots[1], 6) + rng.normal(0, 0.3, (6, 16)),   # camera pan: noise
    shots[1] + rng.normal(0, 0.02, (25, 16)),
    shots[2] + rng.normal(0, 0.02, (10, 16)),
])
labels = dbscan(tokens, DBSCANParams(eps=0.3, min_samples=4))
print("labels:", "".join("." if l < 0 else str(l) for l in labels))

# 2. Contiguous runs of one label are camera-static clips.
clips = static_clips(labels, min_run=8)
for c in clips:
    print(f"clip label={c.label} frames {c.start}..{c.end} ({len(c)} frames)")

# 3. Inside a clip, lift the object mask of each frame to 3D and pick the pair of
#    frames whose median object coordinates are farthest apart.
H, W = 48, 64
cam = CameraModel(CameraIntrinsics.default(W, H))


def frame(k, col, z):
    depth = np.full((H, W), 9.0)
    mask = np.zeros((H, W), bool)
    mask[20:28, col:col + 8] = True
    depth[mask] = z
    return FrameRecord(k, depth, mask, cam)


for clip in clips:
    n = len(clip)
    # the object rolls to the right and slightly away from the camera
    frames = [frame(clip.start + k, 5 + 40 * k // n, 4.0 + 0.05 * k) for k in range(n)]
    sel = select_pair(frames, short_clip_threshold=16)
    keep = depth_filter(sel, min_total=0.05, min_depth_axis=0.02)
    rule = "first/last" if sel.short_clip_rule_used else "farthest pair"
    print(f"clip {clip.start}-{clip.end}: frames ({sel.i}, {sel.j}) by {rule}; "
          f"move {sel.normalized_displacement:.3f} diag, depth {sel.normalized_delta[2]:+.3f} diag -> "
          f"{'keep' if keep else 'drop'}")
