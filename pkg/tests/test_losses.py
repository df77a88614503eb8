import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from restoregan import losses as L
from restoregan import tensor as T
from restoregan.errors import StructuralError
from restoregan.tensor import Tensor
from restoregan.tensor.gradcheck import grad_check

probs5 = arrays(np.float64, 5, elements=st.floats(0, 1, width=64))
binary5 = arrays(np.float64, 5, elements=st.sampled_from([0.0, 1.0]))


def full(shape, value):
    return Tensor(np.full(shape, value, np.float64))


# ---------------------------------------------------------------- adversarial terms

def test_cgan_d_perfect_discrimination():
    out = L.loss_cgan_d(full((1, 1, 4, 4), 1 - 1e-6), full((1, 1, 4, 4), 1e-6)).item()
    assert out == pytest.approx(2e-6, rel=1e-3)


def test_cgan_d_at_half():
    assert L.loss_cgan_d(full((2, 1, 4, 4), 0.5), full((2, 1, 4, 4), 0.5)).item() == pytest.approx(2 * math.log(2))


def test_cgan_d_clamped_at_zero():
    out = L.loss_cgan_d(full((1, 1, 2, 2), 0.0), full((1, 1, 2, 2), 1.0)).item()
    assert math.isfinite(out)
    assert out == pytest.approx(-2 * math.log(1e-6))


def test_cgan_g_values():
    assert L.loss_cgan_g(full((1, 1, 4, 4), 0.5)).item() == pytest.approx(math.log(2))
    assert L.loss_cgan_g(full((1, 1, 4, 4), 1.0)).item() == pytest.approx(0.0, abs=1e-12)


def test_cgan_g_gradient_negative():
    d = Tensor(np.random.default_rng(0).uniform(0.05, 0.95, (2, 1, 4, 4)), requires_grad=True)
    T.backward(L.loss_cgan_g(d))
    assert np.all(d.grad < 0)


# ---------------------------------------------------------------- mask

def test_mask_white_on_white():
    assert L.loss_mask(full((1, 3, 8, 8), 1.0), np.ones((1, 3, 8, 8))).item() == 0


def test_mask_black_on_white():
    assert L.loss_mask(full((1, 3, 8, 8), -1.0), np.ones((1, 3, 8, 8))).item() == pytest.approx(1.0)


def test_mask_empty():
    g = Tensor(np.random.default_rng(0).uniform(-1, 1, (1, 3, 8, 8)))
    assert L.loss_mask(g, np.zeros((1, 3, 8, 8))).item() == 0


def test_mask_needs_every_channel_white():
    sub = np.ones((1, 3, 2, 2))
    sub[0, 1, 0, 0] = 0.5  # one pixel with a non-white channel
    gen = np.ones((1, 3, 2, 2))
    gen[0, :, 0, 0] = -1  # dark only where the substrate is not white
    assert L.loss_mask(Tensor(gen), sub).item() == 0


def test_mask_oracle_partial():
    rng = np.random.default_rng(1)
    sub = np.where(rng.random((2, 1, 6, 6)) < 0.5, 1.0, -0.2).repeat(3, axis=1)
    gen = rng.uniform(-1, 1, (2, 3, 6, 6))
    m = sub >= 0.9
    expected = np.mean(((1 - gen) / 2)[m])
    assert L.loss_mask(Tensor(gen), sub).item() == pytest.approx(expected)


# ---------------------------------------------------------------- P, N, L

def test_positive_negative_examples():
    t = np.array([1, 0, 0, 0, 0])
    v = np.array([0.9, 0.8, 0, 0, 0])
    np.testing.assert_allclose(L.positive_diff(v, t).data, [0.1, 0, 0, 0, 0], atol=1e-7)
    np.testing.assert_allclose(L.negative_diff(v, t).data, [0, 0.8, 0, 0, 0], atol=1e-7)


def test_diff_degenerate_targets():
    v = np.array([0.3, 0.1, 0.7, 0.2, 0.5])
    np.testing.assert_array_equal(L.positive_diff(v, np.zeros(5)).data, 0)
    np.testing.assert_array_equal(L.negative_diff(v, np.ones(5)).data, 0)
    np.testing.assert_allclose(L.negative_diff(v, np.zeros(5)).data, v, rtol=1e-6)
    t = np.array([1, 0, 1, 0, 0])
    np.testing.assert_array_equal(L.positive_diff(t, t).data, 0)


def test_diff_length_mismatch():
    with pytest.raises(StructuralError):
        L.positive_diff(np.zeros(4), np.zeros(5))
    with pytest.raises(StructuralError):
        L.negative_diff(np.zeros(5), np.zeros(3))


def test_p_plus_n_is_abs_gap_10k():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        t = rng.integers(0, 2, 5).astype(np.float64)
        v = rng.random(5)
        got = L.positive_diff(Tensor(v), t).data + L.negative_diff(Tensor(v), t).data
        np.testing.assert_allclose(got, np.abs(t - v), rtol=0, atol=1e-15)


def test_linear_log_penalty_values():
    assert L.linear_log_penalty(np.zeros(5)).item() == 0
    assert L.linear_log_penalty(np.array([0.5])).item() == pytest.approx(1.1931, abs=1e-4)
    assert L.linear_log_penalty(np.array([1.0])).item() == pytest.approx(1 - math.log(1e-6), abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(0, 0.999, width=64)))
def test_linear_log_penalty_at_least_mean(x):
    assert L.linear_log_penalty(Tensor(x)).item() >= x.mean() - 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(0, 0.99, width=64)), st.integers(0, 4), st.floats(1e-3, 0.009))
def test_linear_log_penalty_increasing(x, i, d):
    y = x.copy()
    y[i] += d
    assert L.linear_log_penalty(Tensor(y)).item() > L.linear_log_penalty(Tensor(x)).item()


# ---------------------------------------------------------------- L_VGG

def test_vgg_perfect_attack():
    t = np.array([1, 0, 0, 0, 0])
    c = np.array([1.0, 0, 0, 0, 0])
    l_p, l_n, l_vgg = L.loss_vgg(c, [c, c, c], t)
    assert (l_p.item(), l_n.item(), l_vgg.item()) == (0, 0, 0)


def test_vgg_null_category_penalised():
    t = np.zeros(5)
    crops = [np.array([0.0, 0.2, 0, 0, 0]), np.zeros(5), np.zeros(5)]
    _, l_n, _ = L.loss_vgg(np.zeros(5), crops, t)
    assert l_n.item() > 0


def test_vgg_max_rule():
    # single-class crops whose penalty x - log(1 - x) hits the given values after the 1/n mean
    t = np.zeros(1)

    # solve x - log(1 - x) = target by bisection
    def inv(target):
        lo, hi = 0.0, 1 - 1e-9
        for _ in range(200):
            mid = (lo + hi) / 2
            if mid - math.log(1 - mid) < target:
                lo = mid
            else:
                hi = mid
        return lo

    crops = [Tensor(np.array([inv(p)])) for p in (0.2, 0.7, 0.4)]
    _, l_n, _ = L.loss_vgg(Tensor(np.zeros(1)), crops, t)
    assert l_n.item() == pytest.approx(0.7, abs=1e-9)


def test_vgg_max_gradient_goes_to_worst_crop():
    t = np.array([1.0, 0, 0])
    crops = [Tensor(np.array([0.2, 0.1, 0.1]), requires_grad=True),
             Tensor(np.array([0.2, 0.5, 0.3]), requires_grad=True),
             Tensor(np.array([0.2, 0.2, 0.1]), requires_grad=True)]
    _, l_n, _ = L.loss_vgg(np.array([0.5, 0, 0]), crops, t)
    T.backward(l_n)
    assert np.all(crops[0].grad == 0) and np.all(crops[2].grad == 0)
    assert np.any(crops[1].grad != 0)


def test_vgg_empty_crops():
    with pytest.raises(StructuralError):
        L.loss_vgg(np.zeros(5), [], np.zeros(5))


@settings(max_examples=60, deadline=None)
@given(probs5, probs5, probs5, probs5, binary5, st.permutations([0, 1, 2]))
def test_vgg_crop_order_invariant(c_r, a, b, c, t, perm):
    crops = [a, b, c]
    base = [v.item() for v in L.loss_vgg(c_r, crops, t)]
    shuffled = [v.item() for v in L.loss_vgg(c_r, [crops[i] for i in perm], t)]
    assert base == shuffled


@settings(max_examples=60, deadline=None)
@given(probs5, probs5, probs5, st.integers(0, 4), st.floats(0, 1))
def test_vgg_one_hot_dependencies(c_r, crop, other, i, new):
    t = np.zeros(5)
    t[i] = 1
    l_p, l_n, _ = L.loss_vgg(c_r, [crop], t)
    c_r2 = other.copy()
    c_r2[i] = c_r[i]
    assert L.loss_vgg(c_r2, [crop], t)[0].item() == l_p.item()
    crop2 = crop.copy()
    crop2[i] = new
    assert L.loss_vgg(c_r, [crop2], t)[1].item() == l_n.item()


def test_vgg_batched_matches_per_item():
    rng = np.random.default_rng(3)
    t = np.array([0, 1, 0, 0, 0])
    c_r = rng.random((2, 5)) * 0.9
    crops = [rng.random((2, 5)) * 0.9 for _ in range(3)]
    l_p, l_n, l_vgg = L.loss_vgg(Tensor(c_r), [Tensor(c) for c in crops], t)
    per = [L.loss_vgg(c_r[b], [c[b] for c in crops], t) for b in range(2)]
    assert l_p.item() == pytest.approx(np.mean([p[0].item() for p in per]))
    assert l_n.item() == pytest.approx(np.mean([p[1].item() for p in per]))
    assert l_vgg.item() == pytest.approx(l_p.item() + l_n.item())


# ---------------------------------------------------------------- crops

def test_crops_pigeonhole():
    with pytest.raises(StructuralError):
        L.sample_crops(Tensor(np.zeros((1, 3, 32, 32))), 32, 3, np.random.default_rng(0))


def test_crops_too_large():
    with pytest.raises(StructuralError):
        L.sample_crops(Tensor(np.zeros((1, 3, 16, 16))), 32, 1, np.random.default_rng(0))


def test_crops_distinct_offsets_on_grid():
    img = np.arange(64 * 64, dtype=np.float64).reshape(1, 1, 64, 64).repeat(3, axis=1)
    rng = np.random.default_rng(0)
    for _ in range(200):
        crops = L.sample_crops(Tensor(img), 32, 3, rng)
        corners = {int(c.data[0, 0, 0, 0]) for c in crops}
        assert len(corners) == 3
        for k in corners:
            i, j = divmod(k, 64)
            assert 0 <= i <= 32 and 0 <= j <= 32
        assert all(c.shape == (1, 3, 32, 32) for c in crops)


def test_crops_full_scale_geometry():
    crops = L.sample_crops(Tensor(np.zeros((1, 3, 512, 512), np.float32)), 224, 3, np.random.default_rng(0))
    assert [c.shape for c in crops] == [(1, 3, 224, 224)] * 3


# ---------------------------------------------------------------- substrate loss

def test_substrate_values():
    assert L.loss_substrate(full((1, 3, 4, 4), 0.2), full((1, 3, 4, 4), 0.2)).item() == 0
    assert L.loss_substrate(Tensor(np.array([1.0])), Tensor(np.array([0.0]))).item() == pytest.approx(1.2877, abs=1e-4)
    assert L.loss_substrate(Tensor(np.array([1.0])), Tensor(np.array([-1.0]))).item() == pytest.approx(
        2 - math.log(1e-6), abs=1e-4)


def test_substrate_shape_mismatch():
    with pytest.raises(StructuralError):
        L.loss_substrate(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 3, 4, 5))))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-1, 1, width=64)),
       arrays(np.float64, 6, elements=st.floats(-1, 1, width=64)))
def test_substrate_at_least_mean_gap(a, b):
    ls = L.loss_substrate(Tensor(a), Tensor(b)).item()
    gap = np.mean(np.abs(a - b))
    assert ls >= gap - 1e-12
    if not np.array_equal(a, b):
        assume(np.max(np.abs(a - b)) > 1e-6)
        assert ls > gap


# ---------------------------------------------------------------- total and report

def test_total_default_weights():
    assert L.loss_total(1.0, 1.0, 1.0, 1.0) == pytest.approx(213, abs=1e-5)
    assert L.loss_total(0.0, 0.0, 0.0, 0.0) == 0
    w = L.LossWeights(1, 0, 0, 0)
    assert L.loss_total(0.7, 5.0, 9.0, 2.0, w) == pytest.approx(0.7)


def test_total_tensor_path():
    one = Tensor(np.array([1.0]))
    assert L.loss_total(one, one, one, one).item() == pytest.approx(213, abs=1e-5)


def test_negative_weight_rejected():
    with pytest.raises(StructuralError):
        L.LossWeights(3, -1, 50, 150)


@settings(max_examples=100, deadline=None)
@given(*[st.floats(0, 20, width=64) for _ in range(6)])
def test_report_arithmetic(d, g, m, p, n, s):
    w = L.LossWeights()
    r = L.LossReport.build(w, l_cgan_d=d, l_cgan_g=g, l_mask=m, l_p=p, l_n=n, l_sub=s)
    assert r.l_vgg == p + n
    assert abs(r.total - (3 * g + 10 * m + 50 * r.l_vgg + 150 * s)) <= 1e-5 * max(1.0, abs(r.total))


def test_report_csv_roundtrip():
    r = L.LossReport.build(L.LossWeights(), l_cgan_d=1.25, l_cgan_g=0.1, l_mask=0.3, l_p=0.7, l_n=1e-7, l_sub=0.2)
    step, back = L.LossReport.from_csv_row(r.csv_row(40))
    assert step == 40 and back == r
    assert len(L.CSV_HEADER.split(",")) == len(r.csv_row(40).split(","))


# ---------------------------------------------------------------- gradients

def test_loss_gradients_away_from_clamps():
    rng = np.random.default_rng(9)
    t = np.array([0.0, 0, 1, 0, 0])
    p = rng.uniform(0.2, 0.8, (1, 1, 4, 4))
    assert grad_check(lambda x: L.loss_cgan_g(x), p) < 1e-3
    assert grad_check(lambda x: L.loss_cgan_d(x, Tensor(p)), rng.uniform(0.2, 0.8, p.shape)) < 1e-3
    assert grad_check(lambda x: L.linear_log_penalty(x), rng.uniform(0, 0.8, 5)) < 1e-3
    v = np.array([0.1, 0.3, 0.6, 0.2, 0.45])
    assert grad_check(lambda x: L.loss_vgg(x, [Tensor(v * 0.5)], t)[2], v) < 1e-3
    T_ = rng.uniform(-1, 1, (1, 3, 3, 3))
    gap = rng.uniform(0.1, 0.7, T_.shape) * rng.choice([-1, 1], T_.shape)
    assert grad_check(lambda x: L.loss_substrate(Tensor(T_), x), T_ + gap) < 1e-3
