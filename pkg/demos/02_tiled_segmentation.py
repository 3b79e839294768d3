"""Segment a large synthetic image patch by patch.

Random weights stand in for a trained model, so the mask itself is
meaningless; what matters is the tiling and that stitching is seamless.
"""
import time

import numpy as np

from vineseg import raster
from vineseg.network import build_network, fcn_spec, random_weights
from vineseg.synthetic import disk_scene
from vineseg.tiler import plan_tiles, render_heatmap, segment_full_image

# a full camera frame needs 20 patches of 1216 px with a 60 px margin
print(plan_tiles(5472, 3648, 1216, 60))

img, _ = disk_scene(0, n=40, width=900, height=700)
rgb = np.repeat(np.rint(img).astype(np.uint8)[..., None], 3, axis=2)

spec = fcn_spec(512, width_scale=0.125)
net = build_network(spec, random_weights(spec, seed=0))
plan = plan_tiles(900, 700, 512, 120)
print(f"\n{len(plan)} tiles in a {plan.shape[0]} x {plan.shape[1]} grid")

t0 = time.perf_counter()
result = segment_full_image(net, rgb, plan)
print(f"segmented in {time.perf_counter() - t0:.2f} s")
print("probabilities sum to 1:", np.allclose(result.prob_map.sum(axis=0), 1, atol=1e-6))
print("inflorescence fraction:", result.class_mask.mean().round(3))

raster.save_mask("demo_mask.png", result.class_mask)
raster.save_image("demo_heatmap.png", render_heatmap(result))
print("wrote demo_mask.png and demo_heatmap.png")
