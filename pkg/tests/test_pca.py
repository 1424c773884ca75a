import numpy as np
import pytest

from freqmoa.adapters import build_moa
from freqmoa.backbone import TokenDecoder, ViTBackbone, ViTConfig
from freqmoa.errors import ConfigError
from freqmoa.model import SegModel
from freqmoa.pca import export_pca, power_iteration_pca, render_projection
from freqmoa.ppm import read_ppm


def random_rows(seed=0, n=40, d=8, spread=(5.0, 2.0, 1.0, 0.5)):
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(rng.normal(size=(d, d)))[0]
    coords = rng.normal(size=(n, len(spread))) * np.asarray(spread)
    return coords @ basis[:, :len(spread)].T + rng.normal(0, 0.01, size=(n, d))


def test_matches_dense_eigensolver():
    rows = random_rows()
    comps, eigs = power_iteration_pca(rows, k=3)
    centered = rows - rows.mean(axis=0)
    cov = centered.T @ centered / rows.shape[0]
    ref_vals, ref_vecs = np.linalg.eigh(cov)
    ref_vals = ref_vals[::-1]
    ref_vecs = ref_vecs[:, ::-1]
    assert np.allclose(eigs, ref_vals[:3], rtol=1e-8, atol=1e-10)
    for j in range(3):
        assert abs(float(comps[j] @ ref_vecs[:, j])) > 1.0 - 1e-6


def test_components_orthonormal():
    comps, _ = power_iteration_pca(random_rows(seed=1), k=3)
    gram = comps @ comps.T
    assert np.abs(gram - np.eye(3)).max() < 1e-6


def test_eigenvalues_descending():
    _, eigs = power_iteration_pca(random_rows(seed=2), k=3)
    assert eigs[0] >= eigs[1] >= eigs[2] >= -1e-12


def test_deterministic():
    rows = random_rows(seed=3)
    a = power_iteration_pca(rows)
    b = power_iteration_pca(rows)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_sign_convention():
    comps, _ = power_iteration_pca(random_rows(seed=4), k=3)
    for v in comps:
        assert v[np.argmax(np.abs(v))] > 0


def test_rejects_too_many_components():
    with pytest.raises(ValueError, match="components"):
        power_iteration_pca(np.zeros((5, 2)), k=3)


def test_zero_variance_renders_mid_gray():
    rows = np.ones((16, 8))
    comps, eigs = power_iteration_pca(rows)
    assert np.allclose(eigs, 0.0, atol=1e-12)
    img = render_projection(rows, comps, eigs, grid=4)
    assert np.array_equal(img, np.full((3, 4, 4), 0.5))


def test_rank_one_data_flattens_trailing_channels():
    rng = np.random.default_rng(5)
    direction = rng.normal(size=8)
    direction /= np.linalg.norm(direction)
    rows = np.outer(rng.normal(size=16), direction)
    comps, eigs = power_iteration_pca(rows)
    assert abs(float(comps[0] @ direction)) > 1.0 - 1e-8
    assert eigs[1] < 1e-10 and eigs[2] < 1e-10
    img = render_projection(rows, comps, eigs, grid=4)
    assert img[0].min() == 0.0 and img[0].max() == 1.0
    assert np.array_equal(img[1], np.full((4, 4), 0.5))
    assert np.array_equal(img[2], np.full((4, 4), 0.5))


def test_render_range():
    rows = random_rows(seed=6, n=16)
    comps, eigs = power_iteration_pca(rows)
    img = render_projection(rows, comps, eigs, grid=4)
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_export_writes_four_images(tmp_path):
    cfg = ViTConfig(image_size=8, patch_size=4, depth=2, dim=8, heads=2,
                    num_classes=3)
    rng = np.random.default_rng(7)
    backbone = ViTBackbone(cfg, rng)
    decoder = TokenDecoder(cfg.dim, 3, cfg.grid, cfg.patch_size, rng)
    moa = build_moa(cfg.depth, cfg.dim, cfg.grid, rng, rank=4, freq_layers=(1,))
    # give the experts some signal so projections are nontrivial
    for layer in moa.layers:
        for ex in layer.experts.values():
            ex.w_up.data = 0.1 * rng.normal(size=ex.w_up.data.shape)
    model = SegModel(backbone, decoder, moa)
    img = np.random.default_rng(8).uniform(size=(3, 8, 8))
    written = export_pca(model, img, layer=1, out_dir=tmp_path)
    names = sorted(p.split("/")[-1] for p in written)
    assert names == ["pca_high.ppm", "pca_low.ppm", "pca_mixed.ppm",
                     "pca_spatial.ppm"]
    for p in written:
        out = read_ppm(p)
        assert out.shape == (3, 8, 8)
    # capture mode is torn down afterwards
    assert model.moa.capture is None


def test_export_validates_layer(tmp_path):
    cfg = ViTConfig(image_size=8, patch_size=4, depth=2, dim=8, heads=2,
                    num_classes=3)
    rng = np.random.default_rng(9)
    model = SegModel(ViTBackbone(cfg, rng),
                     TokenDecoder(cfg.dim, 3, cfg.grid, cfg.patch_size, rng),
                     None)
    img = np.zeros((3, 8, 8))
    with pytest.raises(ConfigError, match="adapter"):
        export_pca(model, img, layer=0, out_dir=tmp_path)
