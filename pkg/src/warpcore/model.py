"""Toy end-to-end warping upscaler.

Pipeline: shared multiscale feature extractor (x1/x2/x4) -> per-scale
adaptive warping with learned per-pixel resampling kernels -> multiscale
blending driven by content and local-scale cues -> residual reconstruction
on top of a plain bicubic warp of the input.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import diffnet as dn
from .diffnet import ParamStore, Tensor, adam_step
from .errors import EmptyMask, InvalidParams, ShapeMismatch
from .warp import compute_mask, default_threads, resample_geometry, warp_bicubic
from .xform import (
    BackwardMap,
    Homography,
    backward_map,
    compose,
    compose_scale,
    fold_offset,
    translation,
    jacobian_field,
    output_bounds,
)

BLEND_MODES = ("learned", "average", "concat", "no_content", "no_scale")


@dataclass
class ModelConfig:
    trunk_blocks: int = 4
    channels: int = 16
    kernel: int = 3
    estimator_hidden: int = 64
    depthwise: bool = True
    blend_mode: str = "learned"
    shared_estimator: bool = False

    scales = (1, 2, 4)

    def __post_init__(self):
        if self.kernel != 3:
            raise InvalidParams("only 3x3 resampling kernels are supported")
        if self.blend_mode not in BLEND_MODES:
            raise InvalidParams(f"blend_mode must be one of {BLEND_MODES}")

    def kernel_channels(self) -> int:
        return self.channels if self.depthwise else 1


def _add_conv(store: ParamStore, name: str, cout: int, cin: int, k: int, rng, gain: float = 1.0):
    if gain == 0.0:
        w = np.zeros((cout, cin, k, k))
    else:
        bound = gain * math.sqrt(6.0 / (cin * k * k))
        w = rng.uniform(-bound, bound, size=(cout, cin, k, k))
    store.add(f"{name}.w", w)
    store.add(f"{name}.b", np.zeros(cout))


def _add_fc(store: ParamStore, name: str, nout: int, nin: int, rng, gain: float = 1.0):
    bound = gain * math.sqrt(6.0 / nin)
    store.add(f"{name}.w", rng.uniform(-bound, bound, size=(nout, nin)))
    store.add(f"{name}.b", np.zeros(nout))


def _estimator_names(config: ModelConfig, s: int) -> str:
    return "est" if config.shared_estimator else f"est_x{s}"


def init_model(config: ModelConfig, seed: int = 0) -> ParamStore:
    """Kaiming-uniform initialization; pre-output layers of each head are
    scaled by 0.1 and the reconstruction output conv starts at zero, so an
    untrained model reproduces the bicubic-warp baseline exactly."""
    rng = np.random.Generator(np.random.PCG64(seed))
    c = config.channels
    store = ParamStore()
    _add_conv(store, "stem", c, 3, 3, rng)
    for i in range(config.trunk_blocks):
        _add_conv(store, f"trunk{i}.c1", c, c, 3, rng)
        _add_conv(store, f"trunk{i}.c2", c, c, 3, rng, gain=0.1)
    _add_conv(store, "head_x1", c, c, 3, rng)
    _add_conv(store, "head_x2.0", 4 * c, c, 3, rng)
    _add_conv(store, "head_x4.0", 4 * c, c, 3, rng)
    _add_conv(store, "head_x4.1", 4 * c, c, 3, rng)

    kc = config.kernel_channels()
    tags = ["est"] if config.shared_estimator else [f"est_x{s}" for s in config.scales]
    for tag in tags:
        _add_fc(store, f"{tag}.fc0", config.estimator_hidden, 18, rng)
        _add_fc(store, f"{tag}.fc1", config.estimator_hidden, config.estimator_hidden, rng)
        _add_fc(store, f"{tag}.fc2", kc * 9, config.estimator_hidden, rng, gain=0.1)

    if config.blend_mode in ("learned", "no_scale"):
        for s in config.scales:
            _add_conv(store, f"blend.c{s}", c, c, 3, rng)
        _add_conv(store, "blend.glob", c, 3 * c, 3, rng)
    if config.blend_mode == "learned":
        _add_conv(store, "blend.p0", c, c + 1, 1, rng)
    elif config.blend_mode == "no_scale":
        _add_conv(store, "blend.p0", c, c, 1, rng)
    elif config.blend_mode == "no_content":
        _add_conv(store, "blend.p0", c, 1, 1, rng)
    if config.blend_mode in ("learned", "no_content", "no_scale"):
        _add_conv(store, "blend.p1", len(config.scales), c, 1, rng, gain=0.1)
    elif config.blend_mode == "concat":
        _add_conv(store, "blend.cat", c, 3 * c, 1, rng)

    for i in range(5):
        _add_conv(store, f"recon{i}.c1", c, c, 3, rng)
        _add_conv(store, f"recon{i}.c2", c, c, 3, rng, gain=0.1)
    _add_conv(store, "recon.out", 3, c, 3, rng, gain=0.0)
    return store


def extract_multiscale(img_t: Tensor, store: ParamStore, config: ModelConfig):
    """Shared trunk of residual blocks with x1 / x2 / x4 heads."""
    if img_t.data.shape[0] != 3:
        raise ShapeMismatch(f"expected a 3-channel image, got {img_t.shape}")
    x = dn.conv2d(img_t, store["stem.w"], store["stem.b"])
    for i in range(config.trunk_blocks):
        x = dn.residual_block(
            x, store[f"trunk{i}.c1.w"], store[f"trunk{i}.c1.b"], store[f"trunk{i}.c2.w"], store[f"trunk{i}.c2.b"]
        )
    f1 = dn.conv2d(x, store["head_x1.w"], store["head_x1.b"])
    f2 = dn.depth_to_space(dn.conv2d(x, store["head_x2.0.w"], store["head_x2.0.b"]), 2)
    f4 = dn.depth_to_space(dn.conv2d(x, store["head_x4.0.w"], store["head_x4.0.b"]), 2)
    f4 = dn.depth_to_space(dn.conv2d(f4, store["head_x4.1.w"], store["head_x4.1.b"]), 2)
    return f1, f2, f4


def _estimate(offsets: np.ndarray, store: ParamStore, config: ModelConfig, tag: str) -> Tensor:
    x = dn.constant(offsets)
    x = dn.leaky_relu(dn.fc(x, store[f"{tag}.fc0.w"], store[f"{tag}.fc0.b"]), 0.2)
    x = dn.leaky_relu(dn.fc(x, store[f"{tag}.fc1.w"], store[f"{tag}.fc1.b"]), 0.2)
    x = dn.fc(x, store[f"{tag}.fc2.w"], store[f"{tag}.fc2.b"])
    return dn.reshape(x, (offsets.shape[0], config.kernel_channels(), 9))


def kernel_estimator(offsets, store: ParamStore, config: ModelConfig, scale: int = 1) -> Tensor:
    """Resampling kernel(s) from rescaled window offsets.

    A single 18-vector yields a (C, 3, 3) (depthwise) or (3, 3) kernel;
    an (N, 18) batch yields (N, C_or_1, 9).
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    tag = _estimator_names(config, scale)
    if offsets.ndim == 1:
        if offsets.shape != (18,):
            raise ShapeMismatch(f"expected 18 offsets, got {offsets.shape}")
        out = _estimate(offsets[None], store, config, tag)
        shape = (config.channels, 3, 3) if config.depthwise else (3, 3)
        return dn.reshape(out, shape)
    return _estimate(offsets, store, config, tag)


def _filtered_geometry(bmap: BackwardMap, src_wh, dst_wh, shared_mask):
    geo = resample_geometry(bmap, src_wh, dst_wh)
    if shared_mask is not None:
        keep = shared_mask.ravel()[geo.valid_idx] == 1
        geo.valid_idx = geo.valid_idx[keep]
        geo.tap_idx = geo.tap_idx[keep]
        geo.offsets = geo.offsets[keep]
    return geo


def awl(feat: Tensor, bmap: BackwardMap, store: ParamStore, config: ModelConfig, dst_wh, scale: int = 1, shared_mask=None):
    """Adaptive warping: per-pixel learned kernels on the elliptical grid."""
    c, src_h, src_w = feat.data.shape
    geo = _filtered_geometry(bmap, (src_w, src_h), dst_wh, shared_mask)
    kern = _estimate(geo.offsets, store, config, _estimator_names(config, scale))
    out = dn.kernel_warp(feat, kern, geo.tap_idx, geo.valid_idx, (dst_wh[1], dst_wh[0]))
    return out, (shared_mask if shared_mask is not None else geo.mask)


def scale_feature_map(bmap: BackwardMap, dst_wh, mask) -> np.ndarray:
    """-log |det J| per target pixel; void pixels are 0."""
    dst_w, dst_h = dst_wh
    ys, xs = np.mgrid[0:dst_h, 0:dst_w].astype(np.float64)
    ux, uy, vx, vy = jacobian_field(bmap, xs, ys)
    det = np.abs(ux * vy - vx * uy)
    ok = (mask != 0) & np.isfinite(det) & (det > 1e-12)
    return np.where(ok, -np.log(np.where(ok, det, 1.0)), 0.0)


def blend(warped: list, s_map: np.ndarray, mask: np.ndarray, store: ParamStore, config: ModelConfig) -> Tensor:
    """Per-pixel weighted combination of the warped multiscale features."""
    if len(warped) != len(config.scales):
        raise ShapeMismatch(f"expected {len(config.scales)} warped planes")
    mode = config.blend_mode
    if mode == "average":
        acc = warped[0]
        for w in warped[1:]:
            acc = dn.add(acc, w)
        return dn.scale(acc, 1.0 / len(warped))
    if mode == "concat":
        return dn.conv2d(dn.concat(warped, axis=0), store["blend.cat.w"], store["blend.cat.b"])

    if mode in ("learned", "no_scale"):
        parts = []
        for s, w in zip(config.scales, warped):
            y, _ = dn.pconv2d(w, mask, store[f"blend.c{s}.w"], store[f"blend.c{s}.b"])
            parts.append(dn.relu(y))
        glob, _ = dn.pconv2d(dn.concat(parts, axis=0), mask, store["blend.glob.w"], store["blend.glob.b"])
        content = dn.relu(glob)
        if mode == "learned":
            head_in = dn.concat([content, dn.constant(s_map[None])], axis=0)
        else:
            head_in = content
    else:  # no_content
        head_in = dn.constant(s_map[None])

    h = dn.relu(dn.conv2d(head_in, store["blend.p0.w"], store["blend.p0.b"]))
    weights = dn.conv2d(h, store["blend.p1.w"], store["blend.p1.b"])
    acc = None
    for i, w in enumerate(warped):
        term = dn.mul(w, dn.slice_ch(weights, i, i + 1))
        acc = term if acc is None else dn.add(acc, term)
    return acc


def reconstruct(w_blend: Tensor, i_bic: np.ndarray, mask: np.ndarray, store: ParamStore, config: ModelConfig) -> Tensor:
    """Residual refinement on top of the bicubic warp; void pixels stay 0."""
    x = w_blend
    m = mask
    for i in range(5):
        x, m = dn.pconv_residual_block(
            x, m, store[f"recon{i}.c1.w"], store[f"recon{i}.c1.b"], store[f"recon{i}.c2.w"], store[f"recon{i}.c2.b"]
        )
    y = dn.conv2d(x, store["recon.out.w"], store["recon.out.b"])
    out = dn.add(y, dn.constant(i_bic))
    return dn.scale(out, mask[None].astype(np.float64))


def _resolve_map(transform, img_shape, dst_wh):
    src_h, src_w = img_shape[:2]
    if isinstance(transform, Homography):
        if dst_wh is None:
            dw, dh, off = output_bounds(transform, src_w, src_h)
            return backward_map(fold_offset(transform, off)), (dw, dh)
        return backward_map(transform), dst_wh
    if not isinstance(transform, BackwardMap):
        raise InvalidParams(f"unsupported transform type {type(transform)}")
    if dst_wh is None:
        s = float(transform.params.get("scale", 1.0))
        dst_wh = (int(round(src_w * s)), int(round(src_h * s)))
    return transform, dst_wh


def forward(img: np.ndarray, transform, store: ParamStore, config: ModelConfig, dst_wh=None, threads=None):
    """Full pipeline; returns (output Tensor (3, H', W'), shared mask)."""
    img = np.asarray(img, dtype=np.float64)
    base, dst_wh = _resolve_map(transform, img.shape, dst_wh)
    src_h, src_w = img.shape[:2]
    mask = compute_mask(base, (src_w, src_h), dst_wh, threads)

    img_t = dn.constant(img.transpose(2, 0, 1))
    feats = extract_multiscale(img_t, store, config)
    warped = []
    for s, f in zip(config.scales, feats):
        bmap_s = compose_scale(base, float(s))
        w_s, _ = awl(f, bmap_s, store, config, dst_wh, scale=s, shared_mask=mask)
        warped.append(w_s)
    s_map = scale_feature_map(base, dst_wh, mask)
    w_blend = blend(warped, s_map, mask, store, config)
    i_bic, _ = warp_bicubic(img, base, dst_wh, threads)
    sr = reconstruct(w_blend, i_bic.transpose(2, 0, 1), mask, store, config)
    return sr, mask


def forward_image(img, transform, store, config, dst_wh=None, threads=None):
    """forward() returning an (H', W', 3) array instead of a graph node."""
    sr, mask = forward(img, transform, store, config, dst_wh, threads)
    return sr.data.transpose(1, 2, 0), mask


def masked_l1_loss(sr: Tensor, hr: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean absolute error over valid pixels x channels, as a graph node."""
    valid = int(np.count_nonzero(mask))
    if valid == 0:
        raise EmptyMask("no valid pixels in training mask")
    hr_chw = np.asarray(hr, dtype=np.float64).transpose(2, 0, 1)
    diff = dn.add(sr, dn.constant(-hr_chw))
    masked = dn.scale(diff, mask[None].astype(np.float64))
    return dn.scale(dn.abs_sum(masked), 1.0 / (valid * hr_chw.shape[0]))


def crop_to_valid(lr_img, transform, hr_img, margin: int = 8, threads=None):
    """Restrict a training pair to the bounding box of its valid footprint.

    The loss is masked, so target pixels outside the warped source footprint
    never contribute; shrinking the frame cuts the cost of the full-frame
    convolutions. The margin keeps boundary context for the mask-dilating
    partial convolutions. Returns (transform', hr'); functional transforms
    are returned unchanged since they cannot absorb the frame shift.
    """
    if not isinstance(transform, Homography):
        return transform, np.asarray(hr_img, dtype=np.float64)
    hr_img = np.asarray(hr_img, dtype=np.float64)
    h, w = hr_img.shape[:2]
    src_h, src_w = np.asarray(lr_img).shape[:2]
    mask = compute_mask(backward_map(transform), (src_w, src_h), (w, h), threads)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyMask("transform footprint misses the target frame")
    y0 = max(int(ys.min()) - margin, 0)
    y1 = min(int(ys.max()) + 1 + margin, h)
    x0 = max(int(xs.min()) - margin, 0)
    x1 = min(int(xs.max()) + 1 + margin, w)
    shifted = compose(translation(-float(x0), -float(y0)), transform)
    return shifted, hr_img[y0:y1, x0:x1]


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from the initial rate to zero over the run.

    Late-stage optimizer steps otherwise keep jittering the weights around
    the optimum, which costs a few hundredths of a dB at evaluation time.
    """
    if total_steps <= 1:
        return base_lr
    frac = (step - 1) / (total_steps - 1)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def train_step(batch, store: ParamStore, config: ModelConfig, adam) -> float:
    """One optimizer step on a mini-batch of (lr_img, transform, hr_img)."""
    store.zero_grad()

    def sample_grads(item):
        lr_img, transform, hr_img = item
        hr_img = np.asarray(hr_img, dtype=np.float64)
        dst_wh = (hr_img.shape[1], hr_img.shape[0])
        sr, mask = forward(lr_img, transform, store, config, dst_wh=dst_wh, threads=1)
        term = dn.scale(masked_l1_loss(sr, hr_img, mask), 1.0 / len(batch))
        sink: dict = {}
        dn.backward(term, sink)
        return float(term.data), sink

    # samples are independent graphs; each runs sequentially on its worker,
    # and gradients merge in batch order, so the result is bit-identical
    # for any worker count
    workers = min(len(batch), default_threads())
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(sample_grads, batch))
    else:
        results = [sample_grads(item) for item in batch]

    total = 0.0
    for term_val, sink in results:
        total += term_val
        for leaf, g in sink.items():
            leaf.grad += g
    adam_step(store, adam)
    return total


def save_model(store: ParamStore, config: ModelConfig, path) -> None:
    dn.save_weights(store, path)
    with open(str(path) + ".json", "w", encoding="utf-8") as f:
        json.dump({"config": asdict(config)}, f, indent=1)


def load_model(path, config: ModelConfig | None = None):
    if config is None:
        with open(str(path) + ".json", encoding="utf-8") as f:
            config = ModelConfig(**json.load(f)["config"])
    store = init_model(config)
    store.load_state_dict(dn.load_weights(path))
    return store, config
