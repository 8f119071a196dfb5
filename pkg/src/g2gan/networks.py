"""Generator pair, discriminator, weight init, and checkpoint IO.

The backbone follows the usual multi-domain translation recipe: a label map
is tiled onto the input image, the generator is an encoder (downsampling
convs plus residual blocks) and a decoder (transposed convs up to a tanh
output), and the discriminator is a fully convolutional patch critic with an
extra head that classifies the source domain.
"""

from enum import Enum

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, LabelError, ShapeError

CHECKPOINT_FORMAT = "g2gan-checkpoint-v1"


class SharingMode(str, Enum):
    FULL = "full"
    PARTIAL = "partial"
    NONE = "none"


def _as_mode(mode):
    if isinstance(mode, SharingMode):
        return mode
    try:
        return SharingMode(str(mode).lower())
    except ValueError:
        raise ConfigError(f"unknown sharing mode '{mode}'")


class ResidualBlock(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.main = nn.Sequential(
            nn.Conv2d(dim, dim, kernel_size=3, stride=1, padding=1, bias=False),
            nn.InstanceNorm2d(dim, affine=True, track_running_stats=False),
            nn.ReLU(inplace=True),
            nn.Conv2d(dim, dim, kernel_size=3, stride=1, padding=1, bias=False),
            nn.InstanceNorm2d(dim, affine=True, track_running_stats=False),
        )

    def forward(self, x):
        return x + self.main(x)


class GeneratorEncoder(nn.Module):
    """7x7 stem, two stride-2 downsampling convs, then residual blocks."""

    def __init__(self, m, width_base=64, n_res_blocks=6):
        super().__init__()
        layers = [
            nn.Conv2d(3 + m, width_base, kernel_size=7, stride=1, padding=3, bias=False),
            nn.InstanceNorm2d(width_base, affine=True, track_running_stats=False),
            nn.ReLU(inplace=True),
        ]
        dim = width_base
        for _ in range(2):
            layers += [
                nn.Conv2d(dim, dim * 2, kernel_size=4, stride=2, padding=1, bias=False),
                nn.InstanceNorm2d(dim * 2, affine=True, track_running_stats=False),
                nn.ReLU(inplace=True),
            ]
            dim *= 2
        layers += [ResidualBlock(dim) for _ in range(n_res_blocks)]
        self.main = nn.Sequential(*layers)

    def forward(self, x):
        return self.main(x)


class GeneratorDecoder(nn.Module):
    """Two stride-2 transposed convs back to full size, 7x7 conv, tanh."""

    def __init__(self, width_base=64):
        super().__init__()
        dim = width_base * 4
        layers = []
        for _ in range(2):
            layers += [
                nn.ConvTranspose2d(dim, dim // 2, kernel_size=4, stride=2, padding=1, bias=False),
                nn.InstanceNorm2d(dim // 2, affine=True, track_running_stats=False),
                nn.ReLU(inplace=True),
            ]
            dim //= 2
        layers += [
            nn.Conv2d(dim, 3, kernel_size=7, stride=1, padding=3, bias=True),
            nn.Tanh(),
        ]
        self.main = nn.Sequential(*layers)

    def forward(self, h):
        return self.main(h)


class Generator(nn.Module):
    def __init__(self, encoder, decoder, m):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder
        self.m = m

    def forward(self, x, tiled_label):
        return self.decoder(self.encoder(torch.cat([x, tiled_label], dim=1)))


class GeneratorPair(nn.Module):
    """Translation generator plus reconstruction generator.

    Depending on the sharing mode the two are one module (full), share the
    encoder (partial), or are entirely separate (none). Shared submodules are
    literally the same object, so their tensors appear once in parameters()
    but under both name prefixes in state_dict().
    """

    def __init__(self, translator, reconstructor, mode, m, width_base):
        super().__init__()
        self.translator = translator
        self.reconstructor = reconstructor
        self.mode = mode
        self.m = m
        self.width_base = width_base

    def translate_then_reconstruct(self, x, tiled_target, tiled_source):
        fake = self.translator(x, tiled_target)
        return fake, self.reconstructor(fake, tiled_source)


def build_generator_pair(m, resolution, mode, width_base=64, n_res_blocks=6):
    mode = _as_mode(mode)
    _check_geometry(m, resolution, width_base)
    if n_res_blocks < 1:
        raise ConfigError("n_res_blocks must be positive")
    enc_t = GeneratorEncoder(m, width_base, n_res_blocks)
    dec_t = GeneratorDecoder(width_base)
    if mode is SharingMode.FULL:
        enc_r, dec_r = enc_t, dec_t
    elif mode is SharingMode.PARTIAL:
        enc_r, dec_r = enc_t, GeneratorDecoder(width_base)
    else:
        enc_r = GeneratorEncoder(m, width_base, n_res_blocks)
        dec_r = GeneratorDecoder(width_base)
    translator = Generator(enc_t, dec_t, m)
    reconstructor = Generator(enc_r, dec_r, m)
    return GeneratorPair(translator, reconstructor, mode, m, width_base)


class Discriminator(nn.Module):
    """PatchGAN critic with an auxiliary domain classification head.

    `depth` stride-2 convs (LeakyReLU, no normalization) shrink the input by
    2**depth; a 3x3 conv gives the per-patch realness map and a conv whose
    kernel equals the remaining spatial extent gives the domain logits.
    """

    def __init__(self, m, resolution=256, width_base=64, depth=6):
        super().__init__()
        _check_geometry(m, resolution, width_base)
        if depth < 1:
            raise ConfigError("discriminator depth must be positive")
        if resolution % (2 ** depth):
            raise ConfigError(
                f"resolution {resolution} not divisible by 2**depth ({2 ** depth})"
            )
        spatial = resolution // (2 ** depth)
        layers = []
        dim_in, dim = 3, width_base
        for _ in range(depth):
            layers += [
                nn.Conv2d(dim_in, dim, kernel_size=4, stride=2, padding=1),
                nn.LeakyReLU(0.01),
            ]
            dim_in, dim = dim, dim * 2
        self.main = nn.Sequential(*layers)
        self.src_head = nn.Conv2d(dim_in, 1, kernel_size=3, stride=1, padding=1, bias=False)
        self.cls_head = nn.Conv2d(dim_in, m, kernel_size=spatial, bias=False)
        self.m = m
        self.resolution = resolution

    def forward(self, x):
        h = self.main(x)
        return self.src_head(h), self.cls_head(h).view(x.size(0), self.m)


def build_discriminator(m, resolution=256, width_base=64, depth=6):
    return Discriminator(m, resolution, width_base, depth)


def _check_geometry(m, resolution, width_base):
    if m < 2:
        raise ConfigError(f"need at least 2 domains, got m={m}")
    if resolution < 8 or resolution % 4:
        raise ConfigError(
            f"resolution {resolution} must be >= 8 and divisible by 4"
        )
    if width_base < 4:
        raise ConfigError(f"width_base {width_base} is too small")


def init_weights(module, seed=0):
    """N(0, 0.02) on conv weights, zeros on biases, identity on norms.

    Draws come from a dedicated torch.Generator, so two calls with the same
    seed on identically shaped networks produce identical tensors.
    """
    gen = torch.Generator().manual_seed(int(seed))
    for mod in module.modules():
        if isinstance(mod, (nn.Conv2d, nn.ConvTranspose2d)):
            mod.weight.data.normal_(0.0, 0.02, generator=gen)
            if mod.bias is not None:
                mod.bias.data.zero_()
        elif isinstance(mod, nn.InstanceNorm2d) and mod.affine:
            mod.weight.data.fill_(1.0)
            mod.bias.data.zero_()
    return module


def count_parameters(*modules):
    """Total learnable parameter count, counting shared tensors once."""
    seen = set()
    total = 0
    for module in modules:
        for p in module.parameters():
            if id(p) not in seen:
                seen.add(id(p))
                total += p.numel()
    return total


def tiled_label_tensor(label, batch, height, width, dtype, device=None):
    """Expand a DomainLabel (or raw (m,H,W) array) to a (n, m, H, W) tensor."""
    tiled = getattr(label, "tiled", label)
    t = torch.as_tensor(np.asarray(tiled), dtype=dtype, device=device)
    if t.ndim != 3:
        raise ShapeError(f"tiled label must be (m, H, W), got {tuple(t.shape)}")
    if t.shape[1:] != (height, width):
        raise ShapeError(
            f"label tiles {tuple(t.shape[1:])} do not match image size {(height, width)}"
        )
    return t.unsqueeze(0).expand(batch, -1, -1, -1)


def translate(generator, x, label):
    """Run one generator on a batch (or single image) with a target label.

    Accepts numpy or torch input of shape (3, H, W) or (n, 3, H, W) in
    [-1, 1]; returns a torch tensor of the same batch shape, still attached
    to the autograd graph if the generator's parameters require grad.
    """
    single = False
    t = torch.as_tensor(np.asarray(x)) if not torch.is_tensor(x) else x
    if t.ndim == 3:
        t, single = t.unsqueeze(0), True
    if t.ndim != 4 or t.shape[1] != 3:
        raise ShapeError(f"expected (n, 3, H, W) input, got {tuple(t.shape)}")
    n, _, h, w = t.shape
    if h < 8 or w < 8 or h % 4 or w % 4:
        raise ShapeError(f"input size {h}x{w} must be >= 8 and divisible by 4")
    if getattr(label, "m", None) is not None and label.m != generator.m:
        raise LabelError(
            f"label has m={label.m} but generator was built for m={generator.m}"
        )
    param = next(generator.parameters())
    t = t.to(dtype=param.dtype, device=param.device)
    tiles = tiled_label_tensor(label, n, h, w, param.dtype, param.device)
    out = generator(t, tiles)
    return out.squeeze(0) if single else out


def discriminate(disc, x):
    """Patch realness map and domain logits for a batch."""
    t = torch.as_tensor(np.asarray(x)) if not torch.is_tensor(x) else x
    if t.ndim == 3:
        t = t.unsqueeze(0)
    if t.ndim != 4 or t.shape[1] != 3:
        raise ShapeError(f"expected (n, 3, H, W) input, got {tuple(t.shape)}")
    if t.shape[2] != disc.resolution or t.shape[3] != disc.resolution:
        raise ShapeError(
            f"discriminator expects {disc.resolution}x{disc.resolution} input, "
            f"got {t.shape[2]}x{t.shape[3]}"
        )
    param = next(disc.parameters())
    return disc(t.to(dtype=param.dtype, device=param.device))


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, params, meta):
    """Write a single-archive checkpoint: flat param dict plus metadata."""
    torch.save({"format": CHECKPOINT_FORMAT, "params": params, "meta": meta}, path)


def load_checkpoint(path):
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ConfigError(f"cannot read checkpoint '{path}': {exc}")
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"'{path}' is not a recognized checkpoint archive")
    return payload["params"], payload["meta"]


def collect_params(pair, disc, disc2=None):
    """Flat {dotted name: tensor} dict covering every learnable tensor.

    Shared generator modules are saved under both the translator and the
    reconstructor prefix, which lets a checkpoint from any sharing mode seed
    a pair built in any other mode.
    """
    params = {}
    for key, value in pair.state_dict().items():
        params[f"generators.{key}"] = value.cpu().clone()
    for key, value in disc.state_dict().items():
        params[f"discriminator.{key}"] = value.cpu().clone()
    if disc2 is not None:
        for key, value in disc2.state_dict().items():
            params[f"discriminator2.{key}"] = value.cpu().clone()
    return params


def load_params(params, pair, disc=None, disc2=None):
    def subdict(prefix):
        plen = len(prefix) + 1
        return {k[plen:]: v for k, v in params.items() if k.startswith(prefix + ".")}

    gen_state = subdict("generators")
    if not gen_state:
        raise ConfigError("checkpoint holds no generator parameters")
    pair.load_state_dict(gen_state, strict=True)
    if disc is not None:
        disc_state = subdict("discriminator")
        if not disc_state:
            raise ConfigError("checkpoint holds no discriminator parameters")
        disc.load_state_dict(disc_state, strict=True)
    if disc2 is not None:
        d2_state = subdict("discriminator2")
        if not d2_state:
            raise ConfigError("checkpoint holds no second-discriminator parameters")
        disc2.load_state_dict(d2_state, strict=True)
