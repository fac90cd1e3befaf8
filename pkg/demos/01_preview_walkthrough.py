"""Walkthrough: lift an object out of a depth map, move it in 3D and render
a preview image.

Run with ``python demos/01_preview_walkthrough.py [outdir]``.
"""

import sys
from pathlib import Path

import numpy as np

from manip3d import (CameraIntrinsics, CameraPose, ManipulationRequest, PreviewConfig, formats,
                     project_point, render_preview, unproject_masked)

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

# A tiny synthetic scene: a grey floor far away, a red cube-ish object in front.
H, W = 96, 128
image = np.zeros((H, W, 3), np.uint8)
image[:] = np.linspace(40, 160, W, dtype=np.uint8)[None, :, None]   # horizontal gradient
depth = np.full((H, W), 8.0)                                         # background plane at 8 m
mask = np.zeros((H, W), bool)
mask[30:60, 20:50] = True
image[mask] = (200, 30, 30)
depth[mask] = 4.0                                                    # object at 4 m

# Default pinhole: focal length max(W, H), principal point in the image centre.
intr = CameraIntrinsics.default(W, H)
pose = CameraPose.identity()
print("intrinsics:", intr)

# Unprojection turns masked pixels into a coloured point cloud in world space.
cloud = unproject_masked(image, mask, depth, intr, pose)
print("object cloud:", len(cloud), "points, centroid", cloud.points.mean(axis=0).round(3))

# Where does the cloud centre land if we push it 2 m further away and 1 m right?
delta = np.array([1.0, 0.0, 2.0])
uv, z = project_point(intr, pose, cloud.points.mean(axis=0) + delta)
print("moved centroid projects to pixel", np.round(uv, 2), "at depth", z)

# render_preview does erase -> translate -> splat with a z-buffer.
for policy in ("fill_flat_color", "fill_background_estimate", "leave"):
    cfg = PreviewConfig(splat_radius=1, erase_policy=policy)
    preview = render_preview(image, depth, intr, pose, [ManipulationRequest("cube", mask, delta)], cfg)
    formats.write_image(preview, out / f"preview_{policy}.png")
    print(f"{policy:>26}: wrote {out / f'preview_{policy}.png'}")

# Farther away means smaller on screen: count painted object pixels.
painted = np.all(preview == (200, 30, 30), axis=-1) & ~mask
print("object footprint before:", mask.sum(), "px; after moving away:", painted.sum(), "px")

# A zero move with no erase and no footprint reproduces the source exactly.
same = render_preview(image, depth, intr, pose, [ManipulationRequest("cube", mask, (0, 0, 0))],
                      PreviewConfig(splat_radius=0, erase_policy="leave"))
print("null edit is identity:", np.array_equal(same, image))
