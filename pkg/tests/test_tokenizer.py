import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simtrack import numerics as nm
from simtrack.config import ConfigError, ModelConfig
from simtrack.model import init_params
from simtrack.oracle import finite_diff_grad, relative_errors
from simtrack.tokenizer import (
    check_foveal_alignment, deserialize, embed_all, exemplar_pos_embed, foveal_crop, grid_coords,
    serialize, target_ratio, target_ratios,
)


@pytest.mark.parametrize("size,patch,n", [(224, 16, 196), (112, 16, 49), (128, 32, 16), (320, 32, 100)])
def test_serialize_counts(size, patch, n):
    out = serialize(np.zeros((size, size, 3)), patch)
    assert out.shape == (n, patch * patch * 3)


def test_serialize_patch_layout():
    img = np.arange(8 * 8 * 3, dtype=float).reshape(8, 8, 3)
    p = serialize(img, 4)
    # patch 1 is row 0, col 1: pixels rows 0..3, cols 4..7, flattened (row, col, channel)
    assert np.array_equal(p[1], img[0:4, 4:8].ravel())
    assert np.array_equal(p[2], img[4:8, 0:4].ravel())


def test_serialize_rejects_indivisible():
    with pytest.raises(ConfigError):
        serialize(np.zeros((30, 32, 3)), 8)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.sampled_from([1, 2, 4, 8]), st.integers(1, 3))
def test_serialize_is_bijective(gh, gw, patch, batch):
    img = np.random.default_rng(gh * 31 + gw).random((batch, gh * patch, gw * patch, 3))
    back = deserialize(serialize(img, patch), patch, gh * patch, gw * patch)
    assert np.array_equal(back, img)


def test_foveal_crop_paper_geometry():
    crop, off = foveal_crop(np.zeros((112, 112, 3)), 64, 16)
    assert off == (24, 24) and 24 % 16 == 8
    assert serialize(crop, 16).shape[0] == 16


@pytest.mark.parametrize("ex,crop,patch", [(32, 16, 8), (32, 20, 8)])
def test_foveal_misaligned_rejected(ex, crop, patch):
    with pytest.raises(ConfigError, match="misaligned"):
        check_foveal_alignment(ex, crop, patch)


def test_foveal_demo_config_valid():
    assert check_foveal_alignment(32, 12, 4) == 10


def test_foveal_alignment_in_model_config():
    with pytest.raises(ConfigError):
        ModelConfig(patch=8, exemplar_size=32, foveal_size=16)


def test_target_ratio_cases():
    cell = (0.0, 0.0, 8.0, 8.0)
    assert target_ratio((-1, -1, 9, 9), cell) == 1.0
    assert target_ratio((10, 10, 12, 12), cell) == 0.0
    assert target_ratio((0, 0, 4, 8), cell) == 0.5


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 40), st.floats(-10, 40), st.floats(0.5, 30), st.floats(0.5, 30))
def test_target_ratio_partition(x1, y1, w, h):
    """Sum of R * cell area over the grid equals the box area inside the image."""
    size, patch = 32, 8
    g = size // patch
    origins = grid_coords(g, g) * patch
    box = np.array([x1, y1, x1 + w, y1 + h])
    r = target_ratios(box, origins, patch)[0]
    inside_w = max(0.0, min(box[2], size) - max(box[0], 0))
    inside_h = max(0.0, min(box[3], size) - max(box[1], 0))
    assert abs(r.sum() * patch * patch - inside_w * inside_h) < 1e-9
    for k, (oy, ox) in enumerate(origins):
        assert r[k] == pytest.approx(target_ratio(box, (ox, oy, ox + patch, oy + patch)), abs=1e-12)


def small_cfg(**kw):
    base = dict(patch=8, dim=16, layers=1, heads=2, ffn_dim=32, search_size=32, exemplar_size=16)
    base.update(kw)
    return ModelConfig(**base)


def test_pos_embed_zero_final_layer():
    params = init_params(small_cfg())
    params["embed.exemplar_pos.fc2.weight"].data[:] = 0
    out = exemplar_pos_embed(params, np.random.default_rng(0).random((5, 3)))
    assert np.array_equal(out.data, np.zeros((5, 16)))


def test_pos_embed_deterministic_and_bounded():
    params = init_params(small_cfg())
    x = np.array([[0.25, 0.5, 0.75]])
    assert np.array_equal(exemplar_pos_embed(params, x).data, exemplar_pos_embed(params, x).data)
    with pytest.raises(ValueError):
        exemplar_pos_embed(params, np.array([[1.5, 0.0, 0.0]]))


def test_pos_embed_gradient_matches_finite_differences():
    params = init_params(small_cfg())
    rng = np.random.default_rng(3)
    x = rng.random((4, 3))
    target = rng.normal(size=(4, 16))

    def f():
        return nm.sum_(exemplar_pos_embed(params, x) * target)

    f().backward()
    keys = ["embed.exemplar_pos.fc1.weight", "embed.exemplar_pos.fc1.bias",
            "embed.exemplar_pos.fc2.weight", "embed.exemplar_pos.fc2.bias"]
    idx = [(k, tuple(int(rng.integers(s)) for s in params[k].shape)) for k in keys for _ in range(5)]
    with nm.no_grad():
        num = finite_diff_grad(lambda: f().item(), params, idx)
    assert max(relative_errors([params[k].grad[i] for k, i in idx], num)) < 1e-4


def _embed(cfg, batch=1, seed=0):
    rng = np.random.default_rng(seed)
    ex = rng.random((batch, cfg.exemplar_size, cfg.exemplar_size, 3))
    se = rng.random((batch, cfg.search_size, cfg.search_size, 3))
    box = np.array([cfg.exemplar_size / 4, cfg.exemplar_size / 4,
                    3 * cfg.exemplar_size / 4, 3 * cfg.exemplar_size / 4])
    return embed_all(init_params(cfg), cfg, ex, se, np.tile(box, (batch, 1)))


def test_embed_all_toy_counts():
    cfg = ModelConfig(patch=8, dim=64, search_size=64, exemplar_size=32)
    s, e, f = _embed(cfg)
    assert (len(s), len(e), len(f)) == (64, 16, 0)
    assert s.tokens.shape == (1, 64, 64) and f.tokens.shape == (1, 0, 64)


def test_embed_all_paper_geometry_counts():
    cfg = ModelConfig(patch=16, dim=8, heads=2, ffn_dim=8, layers=1,
                      search_size=224, exemplar_size=112, foveal_size=64)
    s, e, f = _embed(cfg)
    assert (len(s), len(e), len(f)) == (196, 49, 16)
    assert f.provenance == "foveal"


def test_foveal_origins_offset_by_half_patch():
    cfg = ModelConfig(patch=4, dim=8, heads=2, ffn_dim=8, layers=1, search_size=32,
                      exemplar_size=32, foveal_size=12)
    _, e, f = _embed(cfg)
    assert np.all(f.pixel_origin % cfg.patch == cfg.patch // 2)
    main = {tuple(o) for o in e.pixel_origin}
    assert not any(tuple(o) in main for o in f.pixel_origin)
    assert len({tuple(g) for g in f.grid}) == len(f)


def test_shared_projection_across_exemplar_and_foveal():
    """A foveal patch with the same pixels as an exemplar patch differs only by position embedding."""
    cfg = ModelConfig(patch=4, dim=8, heads=2, ffn_dim=8, layers=1, search_size=32,
                      exemplar_size=32, foveal_size=12)
    params = init_params(cfg)
    ex = np.zeros((1, 32, 32, 3))
    ex[0, 10:14, 10:14] = np.random.default_rng(1).random((4, 4, 3))  # foveal patch 0
    ex[0, 0:4, 0:4] = ex[0, 10:14, 10:14]  # exemplar patch 0
    box = np.array([[8.0, 8.0, 24.0, 24.0]])
    _, e, f = embed_all(params, cfg, ex, np.zeros((1, 32, 32, 3)), box)
    from simtrack.tokenizer import exemplar_pos_inputs
    pe = exemplar_pos_embed(params, exemplar_pos_inputs(e.grid, 8, target_ratios(box, e.pixel_origin, 4))).data
    pf = exemplar_pos_embed(params, exemplar_pos_inputs(f.grid, 3, target_ratios(box, f.pixel_origin, 4))).data
    np.testing.assert_allclose(e.tokens.data[0, 0] - pe[0, 0], f.tokens.data[0, 0] - pf[0, 0], atol=1e-14)
