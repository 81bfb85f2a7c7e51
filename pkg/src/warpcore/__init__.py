"""Generalized super-resolution under geometric warping.

Subpackages and modules:
  xform    projective/functional transforms and backward maps
  grid     adaptive elliptical resampling basis
  warp     bicubic and adaptive resampling engines
  diffnet  minimal reverse-mode autodiff on numpy
  model    multiscale warping network, training step, persistence
  data     synthetic pair generation and image I/O
  metrics  masked PSNR and L1
  cli      command-line surface
"""

from . import data, diffnet, errors, grid, metrics, model, warp, xform

__all__ = ["data", "diffnet", "errors", "grid", "metrics", "model", "warp", "xform"]
__version__ = "0.1.0"
