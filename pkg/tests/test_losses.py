"""Loss kernels against brute-force oracles, plus their contracts."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from g2gan.errors import ConfigError, LabelError, NumericsError, ShapeError
from g2gan.losses import (
    ObjectiveWeights,
    SsimParams,
    classification_loss,
    color_cycle,
    cycle_l1,
    full_objective,
    identity_loss,
    lsgan_discriminator_loss,
    lsgan_generator_loss,
    ms_ssim,
    ms_ssim_loss,
    ssim,
    ssim_loss,
)

T = torch.float64


def _pair(rng, shape, lo=-1.0, hi=1.0):
    a = rng.uniform(lo, hi, size=shape)
    b = rng.uniform(lo, hi, size=shape)
    return torch.as_tensor(a, dtype=T), torch.as_tensor(b, dtype=T)


# ---------------------------------------------------------------------------
# cycle / color cycle

def test_cycle_l1_matches_loop_oracle(rng):
    for _ in range(30):
        a, b = _pair(rng, (2, 3, 7, 5))
        ref = oracles.l1_mean(a.numpy(), b.numpy())
        assert abs(float(cycle_l1(a, b)) - ref) < 1e-10


def test_color_cycle_matches_loop_oracle(rng):
    for _ in range(10):
        a, b = _pair(rng, (2, 3, 6, 6))
        ref = oracles.color_cycle_mean(a.numpy(), b.numpy())
        assert abs(float(color_cycle(a, b)) - ref) < 1e-10


def test_color_cycle_is_three_times_cycle(rng):
    # the per-channel decomposition collapses to 3x the plain mean on RGB
    for _ in range(200):
        a, b = _pair(rng, (1, 3, 8, 8))
        assert math.isclose(
            float(color_cycle(a, b)), 3.0 * float(cycle_l1(a, b)),
            rel_tol=0, abs_tol=1e-12,
        )


def test_cycle_identity_is_zero(rng):
    a, _ = _pair(rng, (2, 3, 8, 8))
    assert float(cycle_l1(a, a)) == 0.0
    assert float(color_cycle(a, a)) == 0.0


def test_cycle_batch_size_invariance(rng):
    a, b = _pair(rng, (1, 3, 8, 8))
    a4 = a.repeat(4, 1, 1, 1)
    b4 = b.repeat(4, 1, 1, 1)
    assert math.isclose(float(cycle_l1(a, b)), float(cycle_l1(a4, b4)),
                        rel_tol=1e-12)


def test_cycle_shape_and_finite_checks(rng):
    a, b = _pair(rng, (1, 3, 8, 8))
    with pytest.raises(ShapeError):
        cycle_l1(a, b[:, :, :4])
    bad = a.clone()
    bad[0, 0, 0, 0] = float("nan")
    with pytest.raises(NumericsError):
        cycle_l1(bad, b)
    with pytest.raises(ShapeError):
        color_cycle(a[:, :2], b[:, :2])


# ---------------------------------------------------------------------------
# ssim

def test_ssim_matches_window_oracle(rng):
    p = SsimParams(window_size=5)
    for _ in range(40):
        a, b = _pair(rng, (1, 2, 9, 8))
        ref = oracles.ssim_ref(a.numpy(), b.numpy(), window_size=5)
        assert abs(float(ssim(a, b, p)) - ref) < 1e-9


def test_ssim_default_window_matches_oracle(rng):
    p = SsimParams()
    for _ in range(5):
        a, b = _pair(rng, (1, 1, 13, 12))
        ref = oracles.ssim_ref(a.numpy(), b.numpy(), window_size=11)
        assert abs(float(ssim(a, b, p)) - ref) < 1e-9


def test_ssim_self_is_one(rng):
    p = SsimParams(window_size=5)
    for _ in range(20):
        a, _ = _pair(rng, (1, 3, 10, 10))
        assert abs(float(ssim(a, a, p)) - 1.0) < 1e-6


def test_ssim_constant_images_closed_form():
    # means 0.5 and 0.25 with c1 = 1e-4 on inputs already in [0, 1]:
    # zero variances leave only the luminance ratio
    a = torch.full((1, 1, 16, 16), 0.5, dtype=T)
    b = torch.full((1, 1, 16, 16), 0.25, dtype=T)
    p = SsimParams(window_size=11, input_range=(0.0, 1.0))
    expected = (2 * 0.5 * 0.25 + 1e-4) / (0.5 ** 2 + 0.25 ** 2 + 1e-4)
    assert abs(float(ssim(a, b, p)) - expected) < 1e-6


def test_ssim_symmetry_and_range(rng):
    p = SsimParams(window_size=5)
    for _ in range(20):
        a, b = _pair(rng, (1, 3, 8, 8))
        s_ab = float(ssim(a, b, p))
        s_ba = float(ssim(b, a, p))
        assert abs(s_ab - s_ba) < 1e-9
        assert -1.0 <= s_ab <= 1.0 + 1e-12


def test_ssim_penalizes_structure_change(rng):
    a, _ = _pair(rng, (1, 1, 12, 12))
    noisy = a + 0.4 * torch.as_tensor(
        np.random.default_rng(0).standard_normal(a.shape), dtype=T
    )
    p = SsimParams(window_size=5)
    assert float(ssim(a, noisy.clamp(-1, 1), p)) < float(ssim(a, a, p))


def test_ssim_window_too_big():
    a = torch.zeros(1, 1, 8, 8, dtype=T)
    with pytest.raises(ConfigError):
        ssim(a, a, SsimParams(window_size=11))


def test_ssim_exponents_respected(rng):
    a, b = _pair(rng, (1, 1, 9, 9))
    p = SsimParams(window_size=5, alpha=0.7, beta=1.3, gamma=2.0)
    ref = oracles.ssim_ref(a.numpy(), b.numpy(), window_size=5,
                           alpha=0.7, beta=1.3, gamma=2.0)
    assert abs(float(ssim(a, b, p)) - ref) < 1e-9


def test_ssim_custom_constants(rng):
    a, b = _pair(rng, (1, 1, 9, 9))
    # the verbatim-constant variant (c2 = 0.03 ** 3) must be expressible
    p = SsimParams(window_size=5, c1=2e-4, c2=0.03 ** 3)
    ref = oracles.ssim_ref(a.numpy(), b.numpy(), window_size=5,
                           c1=2e-4, c2=0.03 ** 3)
    assert abs(float(ssim(a, b, p)) - ref) < 1e-9


# ---------------------------------------------------------------------------
# ms-ssim

def test_msssim_matches_pyramid_oracle(rng):
    p = SsimParams(window_size=5, scales=3)
    for _ in range(15):
        a, b = _pair(rng, (1, 1, 24, 20))
        ref = oracles.msssim_ref(a.numpy(), b.numpy(), scales=3, window_size=5)
        assert abs(float(ms_ssim(a, b, p)) - ref) < 1e-9


def test_msssim_single_scale_equals_ssim(rng):
    p1 = SsimParams(window_size=5, scales=1)
    for _ in range(10):
        a, b = _pair(rng, (1, 3, 10, 10))
        assert abs(float(ms_ssim(a, b, p1)) - float(ssim(a, b, p1))) < 1e-12


def test_msssim_self_is_one(rng):
    p = SsimParams(window_size=5, scales=2)
    a, _ = _pair(rng, (1, 3, 16, 16))
    assert abs(float(ms_ssim(a, a, p)) - 1.0) < 1e-6
    assert abs(float(ms_ssim_loss(a, a, p))) < 1e-6


def test_msssim_range_and_loss_complement(rng):
    p = SsimParams(window_size=5, scales=2)
    for _ in range(10):
        a, b = _pair(rng, (1, 3, 16, 16))
        v = float(ms_ssim(a, b, p))
        assert 0.0 < v <= 1.0 + 1e-12
        assert math.isclose(float(ms_ssim_loss(a, b, p)), 1.0 - v, rel_tol=1e-12)


def test_msssim_shape_constraints():
    a = torch.zeros(1, 1, 18, 18, dtype=T)
    with pytest.raises(ConfigError):
        ms_ssim(a, a, SsimParams(window_size=5, scales=3))  # 18 % 4 != 0
    b = torch.zeros(1, 1, 16, 16, dtype=T)
    with pytest.raises(ConfigError):
        ms_ssim(b, b, SsimParams(window_size=11, scales=3))  # window > 4x4


def test_msssim_weights_resolved_and_normalized():
    p = SsimParams(window_size=5, scales=3)
    w = p.resolved_scale_weights()
    assert len(w) == 3
    assert abs(sum(w) - 1.0) < 1e-12
    tail = oracles.CANONICAL_WEIGHTS[-3:]
    expect = tuple(v / sum(tail) for v in tail)
    assert all(abs(x - y) < 1e-12 for x, y in zip(w, expect))


def test_msssim_custom_weights(rng):
    a, b = _pair(rng, (1, 1, 16, 16))
    p = SsimParams(window_size=5, scales=2, scale_weights=(0.25, 0.75))
    ref = oracles.msssim_ref(a.numpy(), b.numpy(), scales=2,
                             scale_weights=(0.25, 0.75), window_size=5)
    assert abs(float(ms_ssim(a, b, p)) - ref) < 1e-9


# ---------------------------------------------------------------------------
# lsgan

def test_lsgan_matches_oracle(rng):
    for _ in range(50):
        r = torch.as_tensor(rng.normal(size=(2, 1, 4, 4)), dtype=T)
        f = torch.as_tensor(rng.normal(size=(2, 1, 4, 4)), dtype=T)
        assert abs(float(lsgan_discriminator_loss(r, f))
                   - oracles.lsgan_d(r.numpy(), f.numpy())) < 1e-10
        assert abs(float(lsgan_generator_loss(f))
                   - oracles.lsgan_g(f.numpy())) < 1e-10


def test_lsgan_optimum_values():
    ones = torch.ones(3, 1, 2, 2, dtype=T)
    zeros = torch.zeros(3, 1, 2, 2, dtype=T)
    assert float(lsgan_discriminator_loss(ones, zeros)) == 0.0
    assert float(lsgan_generator_loss(ones)) == 0.0
    assert float(lsgan_discriminator_loss(zeros, ones)) == 2.0


def test_lsgan_rejects_nan():
    bad = torch.tensor([float("inf")])
    with pytest.raises(NumericsError):
        lsgan_generator_loss(bad)


# ---------------------------------------------------------------------------
# classification

def test_classification_matches_softmax_oracle(rng):
    for _ in range(50):
        m = int(rng.integers(2, 9))
        n = int(rng.integers(1, 5))
        logits = torch.as_tensor(rng.normal(size=(n, m)) * 3, dtype=T)
        targets = [int(rng.integers(m)) for _ in range(n)]
        ref = oracles.softmax_nll(logits.numpy(), targets)
        assert abs(float(classification_loss(logits, targets)) - ref) < 1e-9


def test_classification_label_forms(tiny_dataset):
    logits = torch.zeros(1, 3, dtype=T)
    lab = tiny_dataset.label(1)
    v1 = float(classification_loss(logits, lab))
    v2 = float(classification_loss(logits, 1))
    assert math.isclose(v1, v2)
    assert math.isclose(v1, math.log(3.0), rel_tol=1e-9)


def test_classification_bad_labels():
    logits = torch.zeros(1, 3, dtype=T)
    with pytest.raises(LabelError):
        classification_loss(logits, 3)
    with pytest.raises(LabelError):
        classification_loss(logits, -1)


# ---------------------------------------------------------------------------
# identity + full objective

def test_identity_loss_uses_generator(tiny_dataset):
    # a generator that returns its input gives exactly zero
    x = torch.as_tensor(tiny_dataset.domain(0)[:2], dtype=T)
    lab = tiny_dataset.label(0)
    assert float(identity_loss(lambda inp, til: inp, x, lab)) == 0.0
    # and one that returns input + 0.1 gives exactly 0.1
    off = identity_loss(lambda inp, til: inp + 0.1, x, lab)
    assert abs(float(off) - 0.1) < 1e-9


def test_full_objective_weighted_sum(rng):
    w = ObjectiveWeights(lambda1=1.0, lambda2=10.0, lambda3=1.0, lambda4=0.5)
    terms = {
        "lsgan_g": 0.3, "cls_fake": 0.7, "colorcyc": 0.11,
        "msssim": 0.05, "identity": 0.2,
    }
    expect = 0.3 + 1.0 * 0.7 + 10.0 * 0.11 + 1.0 * 0.05 + 0.5 * 0.2
    assert math.isclose(float(full_objective(terms, w)), expect, rel_tol=1e-12)


def test_full_objective_lambda_zero_drops_terms():
    w = ObjectiveWeights(lambda1=0.0, lambda2=0.0, lambda3=0.0, lambda4=0.0)
    terms = {
        "lsgan_g": 0.5, "cls_fake": 9.0, "colorcyc": 9.0,
        "msssim": 9.0, "identity": 9.0,
    }
    assert float(full_objective(terms, w)) == 0.5


def test_full_objective_key_checks():
    with pytest.raises(ConfigError):
        full_objective({"lsgan_g": 1.0})
    bad = {
        "lsgan_g": float("nan"), "cls_fake": 0.0, "colorcyc": 0.0,
        "msssim": 0.0, "identity": 0.0,
    }
    with pytest.raises(NumericsError):
        full_objective(bad)


def test_objective_weight_validation():
    with pytest.raises(ConfigError):
        ObjectiveWeights(lambda1=-0.1)
    with pytest.raises(ConfigError):
        ObjectiveWeights(lambda2=float("nan"))


def test_ssim_params_validation():
    with pytest.raises(ConfigError):
        SsimParams(window_size=4)
    with pytest.raises(ConfigError):
        SsimParams(c2=-1.0)
    with pytest.raises(ConfigError):
        SsimParams(scales=0)
    with pytest.raises(ConfigError):
        SsimParams(scales=2, scale_weights=(1.0,))
    with pytest.raises(ConfigError):
        SsimParams(scales=6)  # no canonical weights that long


# ---------------------------------------------------------------------------
# property-based checks

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_property_color_cycle_triple(seed):
    r = np.random.default_rng(seed)
    a = torch.as_tensor(r.uniform(-1, 1, size=(1, 3, 8, 8)), dtype=T)
    b = torch.as_tensor(r.uniform(-1, 1, size=(1, 3, 8, 8)), dtype=T)
    assert math.isclose(float(color_cycle(a, b)), 3 * float(cycle_l1(a, b)),
                        rel_tol=0, abs_tol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_property_ssim_bounded_symmetric(seed):
    r = np.random.default_rng(seed)
    a = torch.as_tensor(r.uniform(-1, 1, size=(1, 1, 8, 8)), dtype=T)
    b = torch.as_tensor(r.uniform(-1, 1, size=(1, 1, 8, 8)), dtype=T)
    p = SsimParams(window_size=5)
    v = float(ssim(a, b, p))
    assert -1.0 - 1e-9 <= v <= 1.0 + 1e-9
    assert math.isclose(v, float(ssim(b, a, p)), rel_tol=0, abs_tol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.95))
def test_property_lsgan_nonnegative(seed, scale):
    r = np.random.default_rng(seed)
    real = torch.as_tensor(r.normal(0, scale, size=(6,)), dtype=T)
    fake = torch.as_tensor(r.normal(0, scale, size=(6,)), dtype=T)
    assert float(lsgan_discriminator_loss(real, fake)) >= 0.0
    assert float(lsgan_generator_loss(fake)) >= 0.0
