"""End-to-end acceptance checks.

Each test prints a "criterion N pass" line on success. The training-gain
check (criterion 8) trains two full models for 2000 steps and dominates the
suite's runtime; its wall-clock budget is stated for a 4-core CPU and is
scaled proportionally when fewer cores are available.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from warpcore import cli, data as wd, diffnet as dn, model as wm
from warpcore.grid import principal_axes
from warpcore.metrics import mpsnr
from warpcore.warp import compute_mask, warp_adaptive_fixed, warp_bicubic
from warpcore.xform import (
    Homography,
    Jacobian2,
    backward_map,
    identity,
    jacobian,
    load_transform,
    make_functional,
    sample_transform,
    save_transform,
    scale_matrix,
)

from test_warp import reference_separable_resize


def _announce(n):
    print(f"criterion {n} pass")


def _core_scale() -> float:
    # stated budgets assume 4 cores; stretch them on smaller machines
    return 4.0 / min(4, os.cpu_count() or 1)


def test_criterion_01_ellipse_oracle():
    rng = np.random.default_rng(100)
    t0 = time.monotonic()
    n = 10_000
    js = rng.standard_normal((n, 4))
    checked = 0
    for ux, uy, vx, vy in js:
        jm = np.array([[ux, vx], [uy, vy]])
        sv = np.linalg.svd(jm, compute_uv=False)
        if sv[1] < 1e-3:  # effectively singular; no closed form holds 1e-9
            continue
        checked += 1
        basis = principal_axes(Jacobian2(jm[:, 0].copy(), jm[:, 1].copy()))
        assert abs(basis.A - sv[0]) <= 1e-9 * max(1.0, sv[0])
        assert abs(basis.B - sv[1]) <= 1e-9 * max(1.0, sv[1])
        det = abs(np.linalg.det(jm))
        assert abs(basis.A * basis.B - det) <= 1e-9 * max(1.0, det)
        # major axis parallel to the leading left singular vector, up to
        # sign: its unit direction is an eigenvector of J J^T
        if sv[0] - sv[1] > 1e-6 * sv[0]:
            e = basis.e_x / basis.A
            resid = jm @ jm.T @ e - (basis.A ** 2) * e
            assert np.linalg.norm(resid) <= 1e-6 * basis.A ** 2
    assert checked > 9000
    elapsed = time.monotonic() - t0
    assert elapsed < 5.0 * _core_scale(), f"ellipse oracle took {elapsed:.1f}s"
    _announce(1)


def test_criterion_02_affine_jacobian_exact():
    rng = np.random.default_rng(101)
    for _ in range(1000):
        lin = rng.uniform(-2, 2, (2, 2))
        while abs(np.linalg.det(lin)) < 1e-3:
            lin = rng.uniform(-2, 2, (2, 2))
        m = np.eye(3)
        m[:2, :2] = lin
        m[:2, 2] = rng.uniform(-5, 5, 2)
        bmap = backward_map(Homography(np.linalg.inv(m)))
        x, y = rng.uniform(0, 32, 2)
        # Homography(inv(m)) has forward matrix inv(m), so its backward
        # map evaluates m itself; the analytic linear part is lin
        j = jacobian(bmap, (x, y))
        assert np.abs(j.matrix() - lin).max() < 1e-12
    _announce(2)


def test_criterion_03_identity_warp_exact(rng):
    img = rng.random((24, 17, 3))
    bmap = backward_map(identity())
    for fn in (warp_bicubic, warp_adaptive_fixed):
        out, mask = fn(img, bmap, (17, 24))
        assert np.abs(out - img).max() <= 1e-12
        assert mask.all()
        assert mpsnr(out, img, mask) == math.inf
    _announce(3)


def test_criterion_04_scale_consistency(rng):
    bmap = backward_map(scale_matrix(2, 2))
    for _ in range(20):
        img = rng.random((32, 32, 3))
        out, _ = warp_bicubic(img, bmap, (64, 64))
        ref = reference_separable_resize(img, 2.0)
        assert np.abs(out[4:-4, 4:-4] - ref[4:-4, 4:-4]).max() < 1e-6
    _announce(4)


def test_criterion_05_gradient_suite():
    t0 = time.monotonic()
    results = cli.gradcheck_suite()
    elapsed = time.monotonic() - t0
    for name, err in results:
        assert err <= 1e-5, f"{name}: rel err {err:.3e}"
    assert {n for n, _ in results} >= {"fc", "conv2d", "pconv2d", "kernel_warp", "pipeline"}
    assert elapsed < 120.0 * _core_scale(), f"gradient suite took {elapsed:.1f}s"
    _announce(5)


def test_criterion_06_mask_gradient_isolation(rng):
    config = wm.ModelConfig(trunk_blocks=1, channels=4, estimator_hidden=8)
    store = wm.init_model(config, seed=2)
    for _, p in store.items():
        p.data += 0.01 * rng.standard_normal(p.data.shape)
    lr_img = rng.random((12, 12, 3))
    transform = Homography(scale_matrix(1.6, 1.6).m @ np.array([[1, 0.1, 0], [0, 1, 0], [0, 0, 1.0]]))
    hr = rng.random((20, 20, 3))

    def loss_and_grads(target):
        store.zero_grad()
        sr, mask = wm.forward(lr_img, transform, store, config, dst_wh=(20, 20), threads=1)
        assert not mask.all() and mask.any()
        loss = wm.masked_l1_loss(sr, target, mask)
        dn.backward(loss)
        return mask, float(loss.data), {k: p.grad.copy() for k, p in store.items()}

    mask, l0, g0 = loss_and_grads(hr)
    hr2 = hr.copy()
    hr2[mask == 0] = rng.random((int((mask == 0).sum()), 3)) * 100 - 50
    _, l1, g1 = loss_and_grads(hr2)
    assert l0 == l1
    for k in g0:
        assert np.array_equal(g0[k], g1[k]), k
    _announce(6)


def test_criterion_07_zero_init_residual_identity(rng):
    config = wm.ModelConfig(trunk_blocks=2, channels=8, estimator_hidden=16)
    store = wm.init_model(config, seed=0)
    vals = []
    for _ in range(4):
        img = rng.random((16, 16, 3))
        h = sample_transform(int(rng.integers(1 << 30)), 16, 16)[1].inverse()
        dw = max(8, int(16 * 0.6))
        out, mask = wm.forward_image(img, h, store, config, dst_wh=(dw, dw))
        bic, bmask = warp_bicubic(img, backward_map(h), (dw, dw))
        if not mask.any():
            continue
        assert np.array_equal(out, bic)
        assert np.array_equal(mask, bmask)
        target = rng.random((dw, dw, 3))
        vals.append(
            mpsnr(np.clip(out, 0, 1), target, mask) == mpsnr(np.clip(bic, 0, 1), target, bmask)
        )
    assert vals and all(vals)
    _announce(7)


def test_criterion_09_mpsnr_unit_values(rng):
    sr = np.full((8, 8, 3), 0.75)
    hr = np.full((8, 8, 3), 0.25)
    assert mpsnr(sr, hr, np.ones((8, 8))) == pytest.approx(6.0206, abs=1e-4)
    hr = rng.random((10, 10, 3))
    sr = hr + 0.1 * rng.standard_normal((10, 10, 3))
    mask = (rng.random((10, 10)) > 0.5).astype(np.uint8)
    mask[0, 0] = 1
    sr2 = sr.copy()
    sr2[mask == 0] = 1e9
    assert mpsnr(sr, hr, mask) == mpsnr(sr2, hr, mask)
    _announce(9)


def _tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in sorted(files):
            p = os.path.join(dirpath, f)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


def test_criterion_10_dataset_determinism(tmp_path, capsys):
    hr_dir = tmp_path / "hr"
    os.makedirs(hr_dir)
    rng = np.random.default_rng(55)
    for i in range(2):
        wd.save_image(wd.random_texture(112, 112, rng), hr_dir / f"{i}.png", 16)
    trees = []
    for name, threads in (("a", "1"), ("b", "1"), ("c", "8")):
        out = tmp_path / name
        code = cli.main(
            ["synth", "--hr-dir", str(hr_dir), "--out-dir", str(out), "--count", "6", "--seed", "4",
             "--threads", threads]
        )
        capsys.readouterr()
        assert code == 0
        trees.append(_tree_bytes(out))
    assert trees[0] == trees[1] == trees[2]

    # sampled parameter ranges
    sigma = math.radians(15.0)
    for seed in range(200):
        p, _ = sample_transform(seed, 96, 96)
        assert -0.25 <= p.h_x <= 0.25 and -0.25 <= p.h_y <= 0.25
        assert 0.35 <= p.s_x <= 0.5 and 0.35 <= p.s_y <= 0.5
        assert -0.75 * 96 <= p.t_x <= 0.125 * 96
        assert -0.75 * 96 <= p.t_y <= 0.125 * 96
        assert -0.6 / 96 <= p.p_x <= 0.6 / 96 and -0.6 / 96 <= p.p_y <= 0.6 / 96
        assert abs(p.theta) < 6 * sigma
    _announce(10)


def test_criterion_11_functional_transform_smoke(rng, tmp_path):
    img = rng.random((24, 24, 3))
    sine = make_functional("sine", {"amplitude": 1.5, "wavelength": 10.0, "scale": 1.5})
    barrel = make_functional(
        "barrel",
        {"k1": 0.08, "k2": 0.01, "center_x": 12.0, "center_y": 12.0, "rho_scale": 12.0, "scale": 1.5},
    )
    # a briefly trained model must accept them unchanged
    config = wm.ModelConfig(trunk_blocks=1, channels=4, estimator_hidden=8)
    store = wm.init_model(config, seed=1)
    adam = dn.AdamState(store, lr=1e-3)
    hr_t = rng.random((36, 36, 3))
    for _ in range(3):
        wm.train_step([(img, scale_matrix(1.5, 1.5), hr_t)], store, config, adam)

    for tf in (sine, barrel):
        out, mask = warp_bicubic(img, tf, (36, 36))
        assert np.isfinite(out).all() and mask.any()
        # brute-force domain check per target pixel
        for y in range(36):
            for x in range(36):
                sx, sy = tf.evaluate(float(x), float(y))
                inside = bool(
                    np.isfinite(sx) and np.isfinite(sy) and 0 <= sx <= 23 and 0 <= sy <= 23
                )
                assert mask[y, x] == int(inside), (tf.kind, x, y)
        m_out, m_mask = wm.forward_image(img, tf, store, config, dst_wh=(36, 36))
        assert np.isfinite(m_out).all()
        assert np.array_equal(m_mask, mask)
    _announce(11)


def test_criterion_12_thread_invariance(rng, tmp_path, capsys):
    wd.save_image(rng.random((20, 20, 3)), tmp_path / "in.png", 16)
    save_transform(tmp_path / "tf.json", Homography(sample_transform(9, 20, 20)[1].m))
    outs = []
    for t in ("1", "8"):
        out = tmp_path / f"out{t}.png"
        code = cli.main(
            ["warp", "--input", str(tmp_path / "in.png"), "--transform", str(tmp_path / "tf.json"),
             "--output", str(out), "--threads", t, "--depth", "16"]
        )
        capsys.readouterr()
        assert code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    _announce(12)


@pytest.fixture(scope="module")
def toy_benchmark(tmp_path_factory):
    """Shared 200-train / 40-val synthetic benchmark (96-px HR patches)."""
    root = tmp_path_factory.mktemp("bench")
    hr_dir = root / "hr"
    os.makedirs(hr_dir)
    rng = np.random.default_rng(7)
    for i in range(16):
        wd.save_image(wd.random_texture(192, 192, rng), hr_dir / f"{i}.png", 16)
    train_man = wd.build_split(hr_dir, root / "train", 200, seed=1)
    val_man = wd.build_split(hr_dir, root / "val", 40, seed=2)

    def load(man):
        out = []
        for r in wd.load_split(man):
            out.append((wd.load_image(r["lr"]), load_transform(r["tf"]), wd.load_image(r["hr"])))
        return out

    train = []
    for lr_img, tf, hr_img in load(train_man):
        tf2, hr2 = wm.crop_to_valid(lr_img, tf, hr_img)
        train.append((lr_img, tf2, hr2))
    return train, load(val_man)


def _val_mpsnr(val, fn):
    vals = []
    for lr_img, tf, hr_img in val:
        out, mask = fn(lr_img, tf, (hr_img.shape[1], hr_img.shape[0]))
        vals.append(mpsnr(np.clip(out, 0.0, 1.0), hr_img, mask))
    return float(np.mean(vals))


def _train_2000(train, config):
    store = wm.init_model(config, seed=0)
    adam = dn.AdamState(store, lr=1e-4)
    order = np.random.default_rng(3).permutation(len(train))
    n_batches = len(train) // 4
    for step in range(2000):
        idx = order[(step % n_batches) * 4 : (step % n_batches) * 4 + 4]
        adam.lr = wm.cosine_lr(step + 1, 2000, 1e-4)
        wm.train_step([train[i] for i in idx], store, config, adam)
    return store


def test_criterion_08_toy_training_gain(toy_benchmark):
    train, val = toy_benchmark
    assert len(train) == 200 and len(val) == 40
    baseline = _val_mpsnr(val, lambda im, tf, wh: warp_bicubic(im, backward_map(tf), wh))

    t0 = time.monotonic()
    full_cfg = wm.ModelConfig()  # depthwise kernels, learned blending
    full_store = _train_2000(train, full_cfg)
    avg_cfg = wm.ModelConfig(blend_mode="average")
    avg_store = _train_2000(train, avg_cfg)
    elapsed = time.monotonic() - t0

    full = _val_mpsnr(val, lambda im, tf, wh: wm.forward_image(im, tf, full_store, full_cfg, dst_wh=wh))
    avg = _val_mpsnr(val, lambda im, tf, wh: wm.forward_image(im, tf, avg_store, avg_cfg, dst_wh=wh))
    print(f"baseline {baseline:.3f} dB, full {full:.3f} dB, average-blend {avg:.3f} dB, {elapsed:.0f}s")
    assert full >= baseline + 0.2, f"full model {full:.3f} vs baseline {baseline:.3f}"
    assert full >= avg, f"full model {full:.3f} vs average blending {avg:.3f}"
    budget = 45 * 60 * _core_scale()
    assert elapsed < budget, f"training took {elapsed:.0f}s (budget {budget:.0f}s)"
    _announce(8)
