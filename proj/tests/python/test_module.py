import itertools

import numpy as np
import pytest

import vita


def toy_model(seed=7):
    cfg = vita.VitConfig(image_size=9, patch_size=3, embed_dim=8, num_heads=2, num_blocks=2, mlp_ratio=2.0, num_classes=5)
    return vita.VitModel.random(cfg, seed=seed, scale=0.3)


def test_astro_identity_and_hand_trace():
    rng = np.random.default_rng(0)
    x, w, b = rng.normal(size=(5, 4)), rng.normal(size=(3, 4)), rng.normal(size=3)
    y, trace = vita.astro_linear_forward(x, w, b, vita.AstroParams(0, 2, 0.0, 1.5, 0.05))
    np.testing.assert_allclose(y, x @ w.T + b, rtol=0, atol=1e-14)
    assert len(trace["steps"]) == 1

    y, trace = vita.astro_linear_forward(np.ones((1, 1)), np.ones((1, 1)), np.zeros(1), vita.AstroParams(2, 1, 0.0, 2.0, 0.5))
    assert [s["A"][0] for s in trace["steps"]] == [0, 1, 1]
    assert [s["M_diag"][0] for s in trace["steps"]] == [1.0, 2.0, 4.0]
    assert y[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_norm_conservation():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(7, 6)), rng.normal(size=(6, 6)), rng.normal(size=6)
    y, _ = vita.astro_linear_forward(x, w, b, vita.parse_astro_params("6,3,-0.5,1.5,0.05"))
    y0 = x @ w.T + b
    assert np.linalg.norm(y, axis=1).mean() == pytest.approx(np.linalg.norm(y0, axis=1).mean(), rel=1e-9)


def test_invalid_params_raise():
    with pytest.raises(ValueError):
        vita.AstroParams(2, 0, 0.0, 1.5, 0.5)
    with pytest.raises(ValueError):
        vita.parse_astro_params("1,2,3")


def test_metrics_against_scipy():
    stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(2)
    x = rng.integers(0, 6, 80).astype(float)
    y = x + rng.integers(0, 6, 80)
    assert vita.spearman(x, y) == pytest.approx(stats.spearmanr(x, y).statistic, abs=1e-12)

    a, b = np.array([4.0, 5.0, 6.0]), np.array([1.0, 2.0, 3.0])
    r = vita.wilcoxon_rank_sum(a, b)
    assert r["exact"] and r["p_value"] == pytest.approx(0.05)
    ref = stats.mannwhitneyu(a, b, alternative="greater", method="exact").pvalue
    assert r["p_value"] == pytest.approx(ref)

    m = rng.random((32, 32))
    assert vita.ssim(m, m) == 1.0
    assert vita.dsc(m, m) == 1.0


def test_ssim_against_skimage():
    metrics = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(3)
    a, b = rng.random((40, 40)), rng.random((40, 40))
    ref = metrics.structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False)
    # skimage crops (win - 1) / 2 = 5 pixels at each border after a same-size filter: valid windows.
    assert vita.ssim(a, b) == pytest.approx(ref, abs=1e-6)


def test_cam_and_upsample():
    up = vita.upsample_bilinear(np.array([[1.0, 0.0], [0.0, 1.0]]), 4, 4)
    np.testing.assert_allclose(up[0], [1, 0.75, 0.25, 0])
    assert up[1, 1] == pytest.approx(0.625)

    rng = np.random.default_rng(4)
    act, grad = rng.random((3, 3, 4)), rng.normal(size=(3, 3, 4))
    for method in ("gradcam", "gradcampp"):
        m = vita.grad_cam(act, grad, method)
        assert m.shape == (3, 3)
        assert m.min() >= 0.0 and m.max() <= 1.0


def test_model_explain_deterministic():
    model = toy_model()
    img = np.random.default_rng(5).uniform(-2, 2, (3, 9, 9))
    logits = model.logits(img)
    assert logits.shape == (5,)
    assert model.predict(img) == int(np.argmax(logits))
    a = model.explain(img, "gradcampp", astro=vita.AstroParams(6, 3, -0.5, 1.5, 0.05))
    b = model.explain(img, "gradcampp", astro=vita.AstroParams(6, 3, -0.5, 1.5, 0.05))
    assert a["astro"].shape == (224, 224)
    np.testing.assert_array_equal(a["astro"], b["astro"])
    assert 0.0 <= a["baseline"].min() and a["baseline"].max() <= 1.0
    assert len(a["trace"]["steps"]) == 7


def test_container_round_trip(tmp_path):
    model = toy_model()
    path = tmp_path / "toy.vita"
    model.save(path)
    tensors = vita.read_container(path)
    assert list(tensors) == vita.expected_tensor_names(model.config)
    tensors["extra"] = np.arange(6, dtype=np.float64).reshape(2, 3)
    vita.write_container(tmp_path / "b.vita", tensors)
    back = vita.read_container(tmp_path / "b.vita")
    np.testing.assert_array_equal(back["extra"], tensors["extra"])
    (tmp_path / "bad.vita").write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(OSError):
        vita.read_container(tmp_path / "bad.vita")


def test_vit_b16_inventory_and_grid():
    assert len(vita.expected_tensor_names(vita.VitConfig.resolve("vit_base_patch16_224"))) == 152
    grid = vita.default_grid()
    assert len(grid) == 405
    keys = {(p.k, p.tau, p.phi, p.alpha, p.beta) for p in grid}
    expected = set(itertools.product([4, 6, 8], [1, 2, 3], [-0.5, -0.2, 0.0, 0.2, 0.5], [1.05, 1.2, 1.5], [0.005, 0.05, 0.25]))
    assert keys == expected
