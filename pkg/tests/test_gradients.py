"""Analytic gradients vs central finite differences (64-bit, h = 1e-5)."""

import numpy as np
import pytest
import torch

from g2gan.losses import (
    SsimParams,
    classification_loss,
    color_cycle,
    cycle_l1,
    lsgan_discriminator_loss,
    lsgan_generator_loss,
    ms_ssim_loss,
    ssim_loss,
)

H = 1e-5
REL_TOL = 1e-3


def _fd_check(fn, x, subsample=None, seed=0):
    """Compare autograd's dL/dx against central differences coordinate-wise.

    Returns the relative L2 error over the checked coordinates.
    """
    x = x.detach().to(torch.float64).requires_grad_(True)
    loss = fn(x)
    loss.backward()
    grad = x.grad.detach().clone().reshape(-1)

    flat = x.detach().clone().reshape(-1)
    n = flat.numel()
    coords = np.arange(n)
    if subsample is not None and subsample < n:
        coords = np.random.default_rng(seed).choice(n, subsample, replace=False)
    fd = torch.zeros(len(coords), dtype=torch.float64)
    ana = torch.zeros(len(coords), dtype=torch.float64)
    for out_i, i in enumerate(coords):
        bump = flat.clone()
        bump[i] += H
        up = float(fn(bump.reshape(x.shape)))
        bump[i] -= 2 * H
        down = float(fn(bump.reshape(x.shape)))
        fd[out_i] = (up - down) / (2 * H)
        ana[out_i] = grad[i]
    denom = max(float(fd.norm()), 1e-12)
    return float((ana - fd).norm()) / denom


def _image(shape, seed, lo=-0.9, hi=0.9):
    r = np.random.default_rng(seed)
    return torch.as_tensor(r.uniform(lo, hi, size=shape), dtype=torch.float64)


def test_grad_cycle_l1():
    # smooth everywhere except ties; keep the pair generic so |.| is smooth
    x = _image((1, 3, 16, 16), 1)
    target = _image((1, 3, 16, 16), 2)
    err = _fd_check(lambda t: cycle_l1(t, target), x)
    assert err < REL_TOL


def test_grad_color_cycle():
    x = _image((1, 3, 16, 16), 3)
    target = _image((1, 3, 16, 16), 4)
    err = _fd_check(lambda t: color_cycle(t, target), x)
    assert err < REL_TOL


def test_grad_ssim_loss():
    x = _image((1, 3, 16, 16), 5)
    target = _image((1, 3, 16, 16), 6)
    p = SsimParams(window_size=7)
    err = _fd_check(lambda t: ssim_loss(t, target, p), x, subsample=256, seed=0)
    assert err < REL_TOL


def test_grad_ms_ssim_loss():
    x = _image((1, 3, 16, 16), 7)
    target = _image((1, 3, 16, 16), 8)
    p = SsimParams(window_size=5, scales=2)
    err = _fd_check(lambda t: ms_ssim_loss(t, target, p), x, subsample=256, seed=1)
    assert err < REL_TOL


def test_grad_ms_ssim_three_scales():
    x = _image((1, 1, 16, 16), 9)
    target = _image((1, 1, 16, 16), 10)
    p = SsimParams(window_size=3, scales=3)
    err = _fd_check(lambda t: ms_ssim_loss(t, target, p), x)
    assert err < REL_TOL


def test_grad_lsgan_discriminator():
    real = _image((1, 1, 16, 16), 11)
    fake = _image((1, 1, 16, 16), 12)
    err = _fd_check(lambda t: lsgan_discriminator_loss(t, fake), real)
    assert err < REL_TOL
    err = _fd_check(lambda t: lsgan_discriminator_loss(real, t), fake)
    assert err < REL_TOL


def test_grad_lsgan_generator():
    fake = _image((1, 1, 16, 16), 13)
    err = _fd_check(lambda t: lsgan_generator_loss(t), fake)
    assert err < REL_TOL


def test_grad_classification():
    logits = _image((16, 16), 14, lo=-2.0, hi=2.0)
    targets = [int(v) for v in
               np.random.default_rng(15).integers(0, 16, size=16)]
    err = _fd_check(lambda t: classification_loss(t, targets), logits)
    assert err < REL_TOL


def test_grad_flows_through_both_ssim_arguments():
    x = _image((1, 1, 16, 16), 16).requires_grad_(True)
    y = _image((1, 1, 16, 16), 17).requires_grad_(True)
    p = SsimParams(window_size=5, scales=2)
    ms_ssim_loss(x, y, p).backward()
    assert x.grad is not None and torch.isfinite(x.grad).all()
    assert y.grad is not None and torch.isfinite(y.grad).all()


def test_grad_finite_on_saturated_inputs():
    # exactly-constant windows hit the variance floor; gradients must stay finite
    x = torch.full((1, 3, 16, 16), -1.0, dtype=torch.float64, requires_grad=True)
    target = torch.full((1, 3, 16, 16), 1.0, dtype=torch.float64)
    p = SsimParams(window_size=5, scales=2)
    ms_ssim_loss(x, target, p).backward()
    assert torch.isfinite(x.grad).all()
