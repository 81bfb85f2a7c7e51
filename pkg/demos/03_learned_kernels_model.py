"""
Learned resampling kernels and the full upscaler
================================================

A small multilayer perceptron maps each pixel's rescaled window offsets
to its own 3x3 resampling kernel. The full model extracts x1/x2/x4
features, warps each with learned kernels, blends them per pixel, and
adds a residual on top of a plain bicubic warp. With freshly initialized
weights the residual is exactly zero, so the model starts as bicubic.
"""

import numpy as np

from warpcore import model as wm
from warpcore.data import random_texture
from warpcore.warp import resample_geometry, spline_weights, warp_bicubic
from warpcore.xform import backward_map, scale_matrix

rng = np.random.default_rng(1)
cfg = wm.ModelConfig(trunk_blocks=2, channels=8, estimator_hidden=16)
store = wm.init_model(cfg, seed=0)
print("parameters:", sum(t.data.size for t in store.tensors()))

# per-pixel kernels for a x1.5 warp
bmap = backward_map(scale_matrix(1.5, 1.5))
geo = resample_geometry(bmap, (16, 16), (24, 24))
kern = wm.kernel_estimator(geo.offsets, store, cfg)
print("kernel field:", kern.shape, "(pixels, channels, taps)")

# the pre-scaled final estimator layer keeps initial kernels near zero;
# the fixed spline weights show what the adaptive baseline would use
w = spline_weights(geo.offsets)
print(f"initial kernel magnitude {np.abs(kern.data).mean():.4f} vs spline weights {np.abs(w).mean():.4f}")

# zero-initialized reconstruction head: model output == bicubic warp
img = random_texture(32, 32, rng)
out, mask = wm.forward_image(img, scale_matrix(1.5, 1.5), store, cfg)
ref, _ = warp_bicubic(img, bmap, (48, 48))
print("untrained model equals bicubic exactly:", bool(np.array_equal(out, ref)))

# the blender weighs the three scale branches per pixel using content
# features and the local scale cue -ln|det J|
s_map = wm.scale_feature_map(bmap, (48, 48), mask)
print(f"scale cue on a x1.5 warp: {s_map[mask == 1].mean():.4f} (expected {2 * np.log(1.5):.4f})")
