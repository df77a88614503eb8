import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from restoregan import models as M
from restoregan import tensor as T
from restoregan.errors import StructuralError
from restoregan.tensor import Tensor


@pytest.fixture(scope="module")
def gen():
    spec = M.generator_spec(64, 5)
    params = M.init_params(spec.layers, np.random.default_rng(0))
    return spec, params


def _substrate(rng, B=1, S=64):
    return Tensor(rng.uniform(-1, 1, (B, 3, S, S)).astype(np.float32))


def _zeroed(params, keep_bias: dict | None = None):
    """Effective weights zero (g = 0) and biases zero, except the given biases."""
    out = {}
    for k, p in params.items():
        arr = p.data.copy()
        if k.endswith(".g") or k.endswith(".b") or k.endswith(".w"):
            arr[...] = 0
        out[k] = Tensor(arr)
    for k, v in (keep_bias or {}).items():
        out[k] = Tensor(np.asarray(v, np.float32))
    return out


# ---------------------------------------------------------------- samplers

def test_sample_target_one_hot_uniform():
    rng = np.random.default_rng(0)
    counts = np.zeros(5)
    for _ in range(10_000):
        t = M.sample_target(5, 0.0, 1, rng)
        assert t.sum() == 1
        counts += t
    np.testing.assert_allclose(counts / 10_000, 0.2, atol=0.02)


def test_sample_target_always_null():
    rng = np.random.default_rng(1)
    assert all(M.sample_target(5, 1.0, 1, rng).sum() == 0 for _ in range(100))


def test_sample_target_null_frequency():
    rng = np.random.default_rng(2)
    nulls = sum(M.sample_target(5, 1 / 6, 1, rng).sum() == 0 for _ in range(10_000))
    assert abs(nulls / 10_000 - 1 / 6) <= 0.02


def test_sample_target_max_mixed_too_large():
    with pytest.raises(StructuralError):
        M.sample_target(5, 0.1, 6, np.random.default_rng(0))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 31), st.floats(0, 1))
def test_sample_target_popcount_bounds(n, seed, p_null):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n + 1))
    t = M.sample_target(n, p_null, k, rng)
    assert set(np.unique(t)) <= {0.0, 1.0}
    assert 0 <= t.sum() <= k


def test_tile_zero_target():
    tile = M.sample_class_tile(np.zeros(5), 8, np.random.default_rng(0))
    assert tile.shape == (5, 8, 8)
    assert np.all(tile.data == 0)


def test_tile_full_scale_geometry():
    assert M.tile_side(512) == 8
    t = np.array([0, 1, 0, 0, 0])
    assert M.sample_class_tile(t, M.tile_side(512), np.random.default_rng(0)).shape == (5, 8, 8)


def test_tile_mixture_moments():
    rng = np.random.default_rng(3)
    t = np.array([0, 0, 1, 0, 0])
    vals = M.sample_class_tile(t, 100, rng).data[2].ravel()  # 10,000 elements
    assert abs(vals.mean()) <= 0.05
    assert abs(vals.var() - 3.0) <= 0.15


def test_tile_planes_zero_iff_inactive():
    rng = np.random.default_rng(4)
    t = np.array([1, 0, 1, 0, 0])
    tile = M.sample_class_tile(t, 4, rng).data
    for i in range(5):
        assert np.all(tile[i] == 0) == (t[i] == 0)


def test_tile_mixture_components_by_oracle():
    """Samples come from an even mix of N(+1, 2) and N(-1, 2), checked through the fourth moment."""
    rng = np.random.default_rng(5)
    x = M.sample_class_tile(np.array([1]), 300, rng).data.ravel().astype(np.float64)
    # mixture of N(+-1, 2): E[x^4] = mu^4 + 6 mu^2 s2 + 3 s2^2 = 1 + 12 + 12
    assert abs(np.mean(x ** 4) - 25.0) < 1.0


# ---------------------------------------------------------------- specs

def test_generator_resolution_chain():
    spec = M.generator_spec(64, 5)
    assert spec.tile_size == 1
    assert len(spec.encoder) == 5
    assert len(spec.decoder) == 6
    assert spec.decoder[-1].activation == "tanh"
    assert spec.decoder[-1].skip is None
    assert all(L.skip is not None for L in spec.decoder[:-1])


def test_generator_full_scale_tile():
    spec = M.generator_spec(512, 5)
    assert spec.tile_size == 8
    assert spec.decoder[0].cin == 5


def test_substrate_size_must_be_multiple_of_64():
    with pytest.raises(StructuralError):
        M.generator_spec(96, 5)


def test_discriminator_patch_size():
    assert M.discriminator_spec(64, 4).patch_size == 4


def test_channel_cap():
    spec = M.generator_spec(512, 5, base_channels=16, channel_cap=64)
    assert max(L.cout for L in spec.encoder) == 64


# ---------------------------------------------------------------- generator

def test_generator_output_shape_and_range(gen):
    spec, params = gen
    rng = np.random.default_rng(0)
    tile = M.batch_tiles(np.array([1, 0, 0, 0, 0]), 1, 2, rng)
    out = M.generator_forward(spec, params, _substrate(rng, 2), tile)
    assert out.shape == (2, 3, 64, 64)
    assert np.all(np.abs(out.data) < 1)


def test_generator_encoder_feature_resolutions(gen):
    spec, params = gen
    h = _substrate(np.random.default_rng(0))
    sizes = []
    for L in spec.encoder:
        h = M._apply(L, params, h)
        sizes.append(h.shape[2])
    assert sizes == [32, 16, 8, 4, 2]


def test_generator_zero_params_gives_tanh_bias(gen):
    spec, params = gen
    last = spec.decoder[-1].name
    b = np.array([0.3, -0.5, 1.2], np.float32)
    p = _zeroed(params, {f"{last}.b": b})
    rng = np.random.default_rng(1)
    out = M.generator_forward(spec, p, _substrate(rng), M.batch_tiles(np.ones(5), 1, 1, rng))
    np.testing.assert_allclose(out.data, np.broadcast_to(np.tanh(b)[None, :, None, None], out.shape), rtol=1e-6)


def test_generator_deterministic(gen):
    spec, params = gen
    outs = []
    for _ in range(2):
        rng = np.random.default_rng(7)
        x = _substrate(rng)
        outs.append(M.generator_forward(spec, params, x, M.batch_tiles(np.array([0, 1, 0, 0, 0]), 1, 1, rng)).data)
    assert outs[0].tobytes() == outs[1].tobytes()


def test_generator_ignores_inactive_plane_values(gen):
    spec, params = gen
    rng = np.random.default_rng(2)
    x = _substrate(rng)
    tile = M.batch_tiles(np.array([0, 1, 0, 0, 0]), 1, 1, rng).data
    other = tile.copy()
    other[:, [0, 2, 3, 4]] = -0.0  # a different zero
    a = M.generator_forward(spec, params, x, Tensor(tile)).data
    b = M.generator_forward(spec, params, x, Tensor(other)).data
    assert a.tobytes() == b.tobytes()


def test_generator_shape_errors(gen):
    spec, params = gen
    rng = np.random.default_rng(0)
    with pytest.raises(StructuralError):
        M.generator_forward(spec, params, _substrate(rng, 1, 32), M.batch_tiles(np.ones(5), 1, 1, rng))
    with pytest.raises(StructuralError):
        M.generator_forward(spec, params, _substrate(rng), M.batch_tiles(np.ones(4), 1, 1, rng))


@pytest.mark.parametrize("skip", [0, 2, 4])
def test_unet_skip_carries_encoder_features(gen, skip):
    """With only one skip path's weights live, the output tracks that encoder map alone."""
    spec, params = gen
    p = {k: Tensor(v.data.copy()) for k, v in params.items()}
    # decoder layer j receives skip (depth-1-j) after its own output; keep the last layer's
    # weights only for those input channels, and zero every other decoder path
    depth = len(spec.encoder)
    j = depth - 1 - skip
    for L in spec.decoder:
        p[f"{L.name}.g"] = Tensor(np.zeros_like(p[f"{L.name}.g"].data))
    # route the chosen skip straight to the output: all decoder layers after j pass it along
    consumer = spec.decoder[j + 1]
    own = spec.decoder[j].cout
    v = p[f"{consumer.name}.v"].data.copy()
    v[:own] = 0  # drop the channels coming from the decoder path
    p[f"{consumer.name}.v"] = Tensor(v)
    p[f"{consumer.name}.g"] = Tensor(np.ones_like(params[f"{consumer.name}.g"].data))
    rng = np.random.default_rng(3)
    x = _substrate(rng)
    tile = M.batch_tiles(np.array([1, 0, 0, 0, 0]), 1, 1, rng)

    def consumer_out(sub, tl):
        h, feats = sub, []
        for L in spec.encoder:
            h = M._apply(L, p, h)
            feats.append(h)
        d = tl
        for L in spec.decoder[: j + 2]:
            d = M._apply(L, p, d)
            if L.skip is not None:
                d = T.concat_channels(d, feats[L.skip])
        return d.data

    base = consumer_out(x, tile)
    # changing the tile alone leaves it unchanged: the decoder path is cut
    other_tile = M.batch_tiles(np.array([0, 0, 0, 1, 0]), 1, 1, rng)
    np.testing.assert_allclose(consumer_out(x, other_tile)[:, :consumer.cout], base[:, :consumer.cout], atol=1e-7)
    # perturbing the substrate changes it through the skip
    x2 = Tensor(x.data + 0.5 * rng.standard_normal(x.shape).astype(np.float32))
    assert not np.allclose(consumer_out(x2, tile)[:, :consumer.cout], base[:, :consumer.cout])


# ---------------------------------------------------------------- discriminator

def test_discriminator_output_shape():
    spec = M.discriminator_spec(64, 4)
    params = M.init_params(spec.layers, np.random.default_rng(0))
    rng = np.random.default_rng(0)
    out = M.discriminator_forward(spec, params, _substrate(rng, 2), _substrate(rng, 2))
    assert out.shape == (2, 1, 4, 4)
    assert np.all((out.data > 0) & (out.data < 1))


def test_discriminator_zero_params_half():
    spec = M.discriminator_spec(64, 4)
    params = _zeroed(M.init_params(spec.layers, np.random.default_rng(0)))
    rng = np.random.default_rng(0)
    out = M.discriminator_forward(spec, params, _substrate(rng), _substrate(rng))
    np.testing.assert_allclose(out.data, 0.5)


def test_discriminator_not_symmetric():
    spec = M.discriminator_spec(64, 4)
    params = M.init_params(spec.layers, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    a, b = _substrate(rng), _substrate(rng)
    assert not np.allclose(M.discriminator_forward(spec, params, a, b).data,
                           M.discriminator_forward(spec, params, b, a).data)


def test_discriminator_shape_mismatch():
    spec = M.discriminator_spec(64, 4)
    params = M.init_params(spec.layers, np.random.default_rng(0))
    rng = np.random.default_rng(0)
    with pytest.raises(StructuralError):
        M.discriminator_forward(spec, params, _substrate(rng, 1), _substrate(rng, 2))


# ---------------------------------------------------------------- classifier

@pytest.fixture(scope="module")
def clf():
    spec = M.classifier_spec(32, 8)
    return spec, M.init_params(spec.layers, np.random.default_rng(0))


def test_classifier_rows_sum_to_one(clf):
    spec, params = clf
    x = Tensor(np.random.default_rng(0).uniform(-1, 1, (4, 3, 32, 32)).astype(np.float32))
    probs = M.classifier_forward(spec, params, x).data
    assert probs.shape == (4, 8)
    np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-5)


def test_classifier_target_subvector(clf):
    spec, params = clf
    x = Tensor(np.zeros((1, 3, 32, 32), np.float32))
    v = T.take(M.classifier_forward(spec, params, x), (slice(None), np.arange(5)))
    assert v.shape == (1, 5)


def test_classifier_uniform_logits(clf):
    spec, params = clf
    p = _zeroed(params)
    probs = M.classifier_forward(spec, p, Tensor(np.ones((2, 3, 32, 32), np.float32))).data
    np.testing.assert_allclose(probs, 1 / 8, atol=1e-7)


def test_classifier_wrong_size(clf):
    spec, params = clf
    with pytest.raises(StructuralError):
        M.classifier_forward(spec, params, Tensor(np.zeros((1, 3, 64, 64), np.float32)))


def test_classifier_logit_shift_invariance(clf):
    spec, params = clf
    x = Tensor(np.random.default_rng(1).uniform(-1, 1, (3, 3, 32, 32)).astype(np.float32))
    p2 = dict(params)
    p2["c.fc.b"] = Tensor(params["c.fc.b"].data + 3.7)
    np.testing.assert_allclose(M.classifier_forward(spec, params, x).data,
                               M.classifier_forward(spec, p2, x).data, atol=1e-5)


# ---------------------------------------------------------------- init

def test_init_norm_mode_matches_direction_norm():
    spec = M.generator_spec(64, 5)
    params = M.init_params(spec.layers, np.random.default_rng(0), g_init="norm")
    L = spec.encoder[0]
    v = params[f"{L.name}.v"].data.astype(np.float64)
    np.testing.assert_allclose(params[f"{L.name}.g"].data, np.sqrt((v ** 2).sum(axis=(1, 2, 3))), rtol=1e-6)


def test_init_conventions():
    spec = M.generator_spec(64, 5)
    params = M.init_params(spec.layers, np.random.default_rng(0))
    vs = np.concatenate([params[f"{L.name}.v"].data.ravel() for L in spec.layers])
    assert abs(vs.std() - M.INIT_STD) < 0.001
    assert all(np.all(params[f"{L.name}.b"].data == 0) for L in spec.layers)
    slopes = [params[f"{L.name}.a"].data[0] for L in spec.layers if L.activation == "prelu"]
    assert slopes and all(math.isclose(a, 0.2, rel_tol=1e-6) for a in slopes)


def test_init_unknown_mode():
    with pytest.raises(StructuralError):
        M.init_params(M.generator_spec(64, 5).layers, np.random.default_rng(0), g_init="xavier")
