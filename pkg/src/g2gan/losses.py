"""Objective terms: cycle, color cycle, SSIM / MS-SSIM, LSGAN, classification.

Every term reduces with a mean (never a sum) so values are comparable across
batch sizes, and every public function checks its inputs for non-finite
values up front instead of letting NaNs propagate into the optimizer.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import torch
import torch.nn.functional as F

from .errors import ConfigError, LabelError, NumericsError, ShapeError

# canonical five-scale MS-SSIM exponents; shorter pyramids take the tail,
# renormalized to sum to 1
CANONICAL_SCALE_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

_VAR_EPS = 1e-12   # variance floor before the sqrt in the structure term
_POW_EPS = 1e-8    # clamp before fractional exponents


@dataclass(frozen=True)
class SsimParams:
    """Constants and geometry for ssim / ms_ssim.

    c3 defaults to c2 / 2, which collapses the contrast and structure terms
    into the familiar two-term SSIM form. input_range tells the kernel how to
    remap inputs to [0, 1]; generator outputs live in (-1, 1).
    """

    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2
    c3: float = None
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    window_size: int = 11
    window_sigma: float = 1.5
    scales: int = 3
    scale_weights: tuple = None
    input_range: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError("ssim constants c1 and c2 must be positive")
        if self.c3 is not None and self.c3 <= 0:
            raise ConfigError("ssim constant c3 must be positive when given")
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ConfigError("window_size must be odd and >= 3")
        if self.window_sigma <= 0:
            raise ConfigError("window_sigma must be positive")
        if self.scales < 1:
            raise ConfigError("scales must be >= 1")
        for e in (self.alpha, self.beta, self.gamma):
            if not math.isfinite(e) or e <= 0:
                raise ConfigError("ssim exponents must be positive and finite")
        lo, hi = self.input_range
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ConfigError(f"bad input_range {self.input_range}")
        if self.scale_weights is not None:
            if len(self.scale_weights) != self.scales:
                raise ConfigError("scale_weights length must equal scales")
            if any(w <= 0 for w in self.scale_weights):
                raise ConfigError("scale_weights must be positive")
        elif self.scales > len(CANONICAL_SCALE_WEIGHTS):
            raise ConfigError(
                f"no canonical weights for {self.scales} scales; pass scale_weights"
            )

    def resolved_c3(self):
        return self.c2 / 2.0 if self.c3 is None else self.c3

    def resolved_scale_weights(self):
        """Per-scale exponents, normalized to sum to 1."""
        w = self.scale_weights
        if w is None:
            w = CANONICAL_SCALE_WEIGHTS[-self.scales:]
        total = float(sum(w))
        return tuple(float(v) / total for v in w)


@dataclass(frozen=True)
class ObjectiveWeights:
    """Coefficients of the full generator objective."""

    lambda1: float = 1.0    # classification
    lambda2: float = 10.0   # color cycle consistency
    lambda3: float = 1.0    # ms-ssim
    lambda4: float = 0.5    # conditional identity

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")


def _require_finite(name, *tensors):
    for t in tensors:
        if torch.is_tensor(t):
            if not torch.isfinite(t).all():
                raise NumericsError(f"{name}: non-finite values in input")
        elif not math.isfinite(float(t)):
            raise NumericsError(f"{name}: non-finite scalar input")


def _check_pair(name, x_hat, x):
    if not (torch.is_tensor(x_hat) and torch.is_tensor(x)):
        raise ShapeError(f"{name} expects torch tensors")
    if x_hat.shape != x.shape:
        raise ShapeError(f"{name}: shapes {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    if x_hat.ndim != 4:
        raise ShapeError(f"{name}: expected (n, c, h, w), got {tuple(x_hat.shape)}")
    _require_finite(name, x_hat, x)


def cycle_l1(x_hat, x):
    """Mean absolute reconstruction error."""
    _check_pair("cycle_l1", x_hat, x)
    return (x_hat - x).abs().mean()


def color_cycle(x_hat, x):
    """Per-channel mean L1, summed over the three color channels.

    For 3-channel input this equals 3x cycle_l1; keeping the channel sum
    makes the term scale with how many channels disagree.
    """
    _check_pair("color_cycle", x_hat, x)
    if x_hat.shape[1] != 3:
        raise ShapeError(f"color_cycle needs 3 channels, got {x_hat.shape[1]}")
    return (x_hat - x).abs().mean(dim=(0, 2, 3)).sum()


@lru_cache(maxsize=16)
def _window_cached(size, sigma, dtype, device):
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    line = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = torch.outer(line, line)
    win = win / win.sum()
    return win.to(dtype=dtype, device=torch.device(device))


def _local_moments(a, b, size, sigma):
    """Gaussian-weighted window means, variances, and covariance (valid mode)."""
    n, c, h, w = a.shape
    win = _window_cached(size, float(sigma), a.dtype, str(a.device))
    kernel = win.view(1, 1, size, size)
    fa = a.reshape(n * c, 1, h, w)
    fb = b.reshape(n * c, 1, h, w)
    mu_a = F.conv2d(fa, kernel)
    mu_b = F.conv2d(fb, kernel)
    var_a = (F.conv2d(fa * fa, kernel) - mu_a * mu_a).clamp(min=0.0)
    var_b = (F.conv2d(fb * fb, kernel) - mu_b * mu_b).clamp(min=0.0)
    cov = F.conv2d(fa * fb, kernel) - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def _pow(v, exponent):
    if exponent == 1.0:
        return v
    return v.clamp(min=_POW_EPS) ** exponent


def _ssim_terms(x_hat, x, p):
    lo, hi = p.input_range
    a = (x_hat - lo) / (hi - lo)
    b = (x - lo) / (hi - lo)
    mu_a, mu_b, var_a, var_b, cov = _local_moments(a, b, p.window_size, p.window_sigma)
    sig_a = var_a.clamp(min=_VAR_EPS).sqrt()
    sig_b = var_b.clamp(min=_VAR_EPS).sqrt()
    c3 = p.resolved_c3()
    lum = (2.0 * mu_a * mu_b + p.c1) / (mu_a * mu_a + mu_b * mu_b + p.c1)
    con = (2.0 * sig_a * sig_b + p.c2) / (var_a + var_b + p.c2)
    struc = (cov + c3) / (sig_a * sig_b + c3)
    return lum, con, struc


def ssim(x_hat, x, params=SsimParams()):
    """Mean structural similarity over all valid windows and channels."""
    _check_pair("ssim", x_hat, x)
    h, w = x.shape[2], x.shape[3]
    if params.window_size > min(h, w):
        raise ConfigError(
            f"window {params.window_size} does not fit {h}x{w} input"
        )
    lum, con, struc = _ssim_terms(x_hat, x, params)
    t = _pow(lum, params.alpha) * _pow(con, params.beta) * _pow(struc, params.gamma)
    return t.mean()


def ms_ssim(x_hat, x, params=SsimParams()):
    """Multi-scale SSIM with a 2x2 average-pool pyramid.

    Fine scales contribute their pooled contrast * structure product; only
    the coarsest scale includes luminance. With scales=1 and unit weight this
    reduces exactly to ssim().
    """
    _check_pair("ms_ssim", x_hat, x)
    m = params.scales
    h, w = x.shape[2], x.shape[3]
    factor = 2 ** (m - 1)
    if h % factor or w % factor:
        raise ConfigError(
            f"input {h}x{w} not divisible by 2**(scales-1) = {factor}"
        )
    if params.window_size > min(h, w) // factor:
        raise ConfigError(
            f"window {params.window_size} does not fit the coarsest scale "
            f"({h // factor}x{w // factor})"
        )
    weights = params.resolved_scale_weights()
    a, b = x_hat, x
    result = None
    for j in range(m):
        last = j == m - 1
        lum, con, struc = _ssim_terms(a, b, params)
        per_window = lum * con * struc if last else con * struc
        pooled = _pow(per_window.mean(), weights[j])
        result = pooled if result is None else result * pooled
        if not last:
            a = F.avg_pool2d(a, kernel_size=2)
            b = F.avg_pool2d(b, kernel_size=2)
    return result


def ms_ssim_loss(x_hat, x, params=SsimParams()):
    return 1.0 - ms_ssim(x_hat, x, params)


def ssim_loss(x_hat, x, params=SsimParams()):
    return 1.0 - ssim(x_hat, x, params)


def lsgan_discriminator_loss(real_scores, fake_scores):
    """Least-squares GAN loss for the critic: real -> 1, fake -> 0."""
    _require_finite("lsgan_discriminator_loss", real_scores, fake_scores)
    real_term = ((real_scores - 1.0) ** 2).mean()
    fake_term = (fake_scores ** 2).mean()
    return real_term + fake_term


def lsgan_generator_loss(fake_scores):
    """Least-squares GAN loss for the generator: fake -> 1."""
    _require_finite("lsgan_generator_loss", fake_scores)
    return ((fake_scores - 1.0) ** 2).mean()


def _label_indices(target, m, device):
    if hasattr(target, "index") and hasattr(target, "m"):
        if target.m != m:
            raise LabelError(f"label m={target.m} does not match logits m={m}")
        idx = [int(target.index)]
    elif isinstance(target, int):
        idx = [target]
    elif torch.is_tensor(target):
        idx = [int(v) for v in target.reshape(-1)]
    else:
        idx = []
        for t in target:
            if hasattr(t, "index") and hasattr(t, "m"):
                if t.m != m:
                    raise LabelError(f"label m={t.m} does not match logits m={m}")
                idx.append(int(t.index))
            else:
                idx.append(int(t))
    for v in idx:
        if not 0 <= v < m:
            raise LabelError(f"domain index {v} out of range for m={m}")
    return torch.tensor(idx, dtype=torch.long, device=device)


def classification_loss(logits, target):
    """Mean negative log-likelihood of the target domain under softmax."""
    if not torch.is_tensor(logits):
        raise ShapeError("classification_loss expects a logits tensor")
    if logits.ndim == 1:
        logits = logits.unsqueeze(0)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (n, m), got {tuple(logits.shape)}")
    _require_finite("classification_loss", logits)
    idx = _label_indices(target, logits.shape[1], logits.device)
    if idx.numel() == 1 and logits.shape[0] > 1:
        idx = idx.expand(logits.shape[0])
    if idx.numel() != logits.shape[0]:
        raise LabelError(
            f"{idx.numel()} labels for {logits.shape[0]} logit rows"
        )
    return F.cross_entropy(logits, idx)


def identity_loss(generator, x, z_x):
    """Mean L1 between x and the generator's rendition of x in its own domain."""
    if not torch.is_tensor(x) or x.ndim != 4:
        raise ShapeError("identity_loss expects a (n, 3, h, w) tensor")
    _require_finite("identity_loss", x)
    tiled = torch.as_tensor(z_x.tiled, dtype=x.dtype, device=x.device)
    tiled = tiled.unsqueeze(0).expand(x.shape[0], -1, -1, -1)
    return cycle_l1(generator(x, tiled), x)


_OBJECTIVE_KEYS = ("lsgan_g", "cls_fake", "colorcyc", "msssim", "identity")


def full_objective(terms, weights=ObjectiveWeights()):
    """Weighted sum of the five generator-side terms.

    `terms` must carry exactly the keys lsgan_g, cls_fake, colorcyc, msssim,
    identity (tensors or floats). Disabled terms are passed as 0.
    """
    if set(terms) != set(_OBJECTIVE_KEYS):
        missing = set(_OBJECTIVE_KEYS) - set(terms)
        extra = set(terms) - set(_OBJECTIVE_KEYS)
        raise ConfigError(
            f"full_objective terms mismatch (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})"
        )
    for key in _OBJECTIVE_KEYS:
        _require_finite(f"full_objective[{key}]", terms[key])
    return (
        terms["lsgan_g"]
        + weights.lambda1 * terms["cls_fake"]
        + weights.lambda2 * terms["colorcyc"]
        + weights.lambda3 * terms["msssim"]
        + weights.lambda4 * terms["identity"]
    )
