"""Dataset handling: folder loading, label encoding, and the synthetic generator.

Images live in memory as float32 arrays of shape (N, 3, H, W) scaled to
[-1, 1], matching the tanh output range of the generators.
"""

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DatasetError, LabelError, ShapeError

IMG_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}

PAIRING_FILENAME = "pairing.json"


def normalize(img_uint8):
    """uint8 HWC or CHW array -> float32 in [-1, 1]."""
    arr = np.asarray(img_uint8)
    if arr.dtype != np.uint8:
        raise ShapeError(f"normalize expects uint8 input, got {arr.dtype}")
    return (arr.astype(np.float32) / 127.5) - 1.0


def denormalize(img_float):
    """float array in [-1, 1] -> uint8, rounding to the nearest level."""
    arr = np.asarray(img_float, dtype=np.float32)
    arr = np.clip((arr + 1.0) * 127.5, 0.0, 255.0)
    return np.rint(arr).astype(np.uint8)


def _check_image_block(images, where):
    if images.ndim != 4 or images.shape[1] != 3:
        raise ShapeError(f"{where}: expected (N, 3, H, W), got {images.shape}")
    n, _, h, w = images.shape
    if n == 0:
        raise DatasetError(f"{where}: domain is empty")
    if h < 8 or w < 8 or h % 4 or w % 4:
        raise ShapeError(
            f"{where}: image size {h}x{w} must be >= 8 and divisible by 4"
        )
    if not np.isfinite(images).all():
        raise DatasetError(f"{where}: images contain non-finite values")
    if images.min() < -1.0 - 1e-5 or images.max() > 1.0 + 1e-5:
        raise DatasetError(f"{where}: images fall outside [-1, 1]")


@dataclass
class DomainLabel:
    """A domain id together with its one-hot and spatially tiled encodings."""

    index: int
    m: int
    onehot: np.ndarray  # (m,) float32
    tiled: np.ndarray   # (m, H, W) float32


def encode_label(index, m, height, width):
    if m < 2:
        raise LabelError(f"need at least 2 domains, got m={m}")
    if not 0 <= index < m:
        raise LabelError(f"domain index {index} out of range for m={m}")
    onehot = np.zeros(m, dtype=np.float32)
    onehot[index] = 1.0
    tiled = np.broadcast_to(onehot[:, None, None], (m, height, width)).copy()
    return DomainLabel(index=int(index), m=int(m), onehot=onehot, tiled=tiled)


class DomainDataset:
    """A named list of image domains, optionally with a cross-domain pairing.

    pairing[i] gives, for base content i, the index of its rendition inside
    each domain (same order as `names`). Only synthetic data carries one.
    """

    def __init__(self, domains, pairing=None, flip_augment=False):
        if len(domains) < 1:
            raise DatasetError("dataset has no domains")
        names = [name for name, _ in domains]
        if len(set(names)) != len(names):
            raise DatasetError("duplicate domain names")
        shape = None
        normalized = []
        for name, images in domains:
            images = np.ascontiguousarray(images, dtype=np.float32)
            _check_image_block(images, f"domain '{name}'")
            if shape is None:
                shape = images.shape[2:]
            elif images.shape[2:] != shape:
                raise DatasetError(
                    f"domain '{name}' has size {images.shape[2:]}, expected {shape}"
                )
            normalized.append((name, images))
        self.domains = normalized
        self.flip_augment = bool(flip_augment)
        self.pairing = None
        if pairing is not None:
            pairing = [list(map(int, row)) for row in pairing]
            for row in pairing:
                if len(row) != len(normalized):
                    raise DatasetError("pairing rows must have one entry per domain")
                for k, idx in enumerate(row):
                    if not 0 <= idx < len(normalized[k][1]):
                        raise DatasetError("pairing index out of range")
            self.pairing = pairing

    @property
    def m(self):
        return len(self.domains)

    @property
    def names(self):
        return [name for name, _ in self.domains]

    @property
    def resolution(self):
        return self.domains[0][1].shape[2:]

    def counts(self):
        return [len(images) for _, images in self.domains]

    def domain(self, key):
        """Images of one domain, by index or by name."""
        if isinstance(key, str):
            for name, images in self.domains:
                if name == key:
                    return images
            raise LabelError(f"unknown domain name '{key}'")
        if not 0 <= key < self.m:
            raise LabelError(f"domain index {key} out of range for m={self.m}")
        return self.domains[key][1]

    def label(self, index):
        h, w = self.resolution
        return encode_label(index, self.m, h, w)


def sample_unpaired(dataset, rng):
    """Draw (x, z_x, z_y) with z_y != z_x, all randomness from `rng`."""
    m = dataset.m
    if m < 2:
        raise DatasetError("unpaired sampling needs at least two domains")
    src = int(rng.integers(m))
    images = dataset.domains[src][1]
    idx = int(rng.integers(len(images)))
    tgt = int(rng.integers(m - 1))
    if tgt >= src:
        tgt += 1
    x = images[idx]
    if dataset.flip_augment and rng.random() < 0.5:
        x = x[:, :, ::-1].copy()
    h, w = dataset.resolution
    return x, encode_label(src, m, h, w), encode_label(tgt, m, h, w)


def draw_from_domain(dataset, domain_index, rng):
    images = dataset.domain(domain_index)
    return images[int(rng.integers(len(images)))]


# ---------------------------------------------------------------------------
# loading and export

def load_domain_folders(root, resolution=64, flip_augment=False):
    """Build a dataset from <root>/<domain>/*.png style folders.

    Domains are the immediate subdirectories in lexicographic order. Files
    that fail to decode are skipped with a warning. Every image is converted
    to RGB and bilinearly resized to resolution x resolution.
    """
    if resolution < 8 or resolution % 4:
        raise ConfigError(f"resolution {resolution} must be >= 8 and divisible by 4")
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root '{root}' is not a directory")
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    if len(subdirs) < 2:
        raise DatasetError(
            f"dataset root '{root}' must contain at least two domain subdirectories"
        )
    domains = []
    for sub in subdirs:
        files = sorted(
            p for p in sub.iterdir()
            if p.is_file() and p.suffix.lower() in IMG_EXTENSIONS
        )
        images = []
        for path in files:
            try:
                with Image.open(path) as im:
                    im = im.convert("RGB")
                    if im.size != (resolution, resolution):
                        im = im.resize((resolution, resolution), Image.BILINEAR)
                    arr = np.asarray(im, dtype=np.uint8)
            except Exception as exc:  # undecodable file: warn and move on
                warnings.warn(f"skipping unreadable image {path}: {exc}")
                continue
            images.append(normalize(arr).transpose(2, 0, 1))
        if not images:
            raise DatasetError(f"domain folder '{sub}' has no decodable images")
        domains.append((sub.name, np.stack(images)))

    pairing = _load_pairing(root, [name for name, _ in domains])
    return DomainDataset(domains, pairing=pairing, flip_augment=flip_augment)


def _load_pairing(root, names):
    path = Path(root) / PAIRING_FILENAME
    if not path.is_file():
        return None
    try:
        payload = json.loads(path.read_text())
        order = payload["domain_order"]
        pairs = payload["pairs"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"malformed {PAIRING_FILENAME}: {exc}")
    if order != names:
        raise DatasetError(
            f"{PAIRING_FILENAME} domain_order {order} does not match folders {names}"
        )
    return pairs


def export_dataset(dataset, out_dir):
    """Write the dataset back out as PNG folders plus pairing.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, images in dataset.domains:
        ddir = out / name
        ddir.mkdir(exist_ok=True)
        for i, img in enumerate(images):
            arr = denormalize(img).transpose(1, 2, 0)
            Image.fromarray(arr).save(ddir / f"img_{i:05d}.png")
    if dataset.pairing is not None:
        payload = {"domain_order": dataset.names, "pairs": dataset.pairing}
        (out / PAIRING_FILENAME).write_text(json.dumps(payload))
    return out


# ---------------------------------------------------------------------------
# synthetic data

def rgb_to_hsv(rgb):
    """Vectorized RGB -> HSV on a (3, ...) array with channels in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[0], rgb[1], rgb[2]
    maxc = rgb.max(axis=0)
    minc = rgb.min(axis=0)
    spread = maxc - minc
    v = maxc
    s = np.where(maxc > 0, spread / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(spread > 0, spread, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(spread > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v])


def hsv_to_rgb(hsv):
    """Inverse of rgb_to_hsv, same layout and range conventions."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[0], hsv[1], hsv[2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    i = i.astype(np.int64) % 6
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def rotate_hue(img01, shift):
    """Rotate the hue channel of a (3, H, W) image in [0, 1] by `shift` turns.

    A whole-turn shift (including 0) bypasses the conversion entirely so the
    identity case stays bit-exact.
    """
    if float(shift) % 1.0 == 0.0:
        return np.array(img01, copy=True)
    hsv = rgb_to_hsv(img01)
    hsv[0] = (hsv[0] + shift) % 1.0
    return hsv_to_rgb(hsv).astype(img01.dtype, copy=False)


def _saturated_color(rng, hue_jitter, s_range, v_range):
    h = (rng.uniform(-hue_jitter, hue_jitter)) % 1.0
    s = rng.uniform(*s_range)
    v = rng.uniform(*v_range)
    return hsv_to_rgb(np.array([h, s, v]).reshape(3, 1, 1)).reshape(3)


def _random_scene(rng, height, width):
    """One base scene: warm gradient background plus a few solid shapes.

    Hues are deliberately concentrated near 0 so that a per-domain hue
    rotation by k/m moves each domain into its own distinct color band.
    """
    corners = np.empty((2, 2, 3))
    for a in range(2):
        for b in range(2):
            corners[a, b] = _saturated_color(rng, 0.05, (0.35, 0.65), (0.35, 0.9))
    ys = np.linspace(0.0, 1.0, height)[:, None, None]
    xs = np.linspace(0.0, 1.0, width)[None, :, None]
    top = corners[0, 0] * (1 - xs) + corners[0, 1] * xs
    bottom = corners[1, 0] * (1 - xs) + corners[1, 1] * xs
    img = top * (1 - ys) + bottom * ys
    img = img + rng.normal(0.0, 0.015, size=img.shape)

    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(int(rng.integers(3, 7))):
        color = _saturated_color(rng, 0.06, (0.75, 1.0), (0.7, 1.0))
        kind = int(rng.integers(3))
        cy = rng.uniform(0.15, 0.85) * height
        cx = rng.uniform(0.15, 0.85) * width
        size = rng.uniform(0.08, 0.22) * min(height, width)
        if kind == 0:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= size ** 2
        elif kind == 1:
            half_w = size * rng.uniform(0.6, 1.6)
            mask = (np.abs(yy - cy) <= size) & (np.abs(xx - cx) <= half_w)
        else:
            mask = (
                (yy >= cy - size)
                & (yy <= cy + size)
                & (np.abs(xx - cx) <= (yy - (cy - size)) * 0.5)
            )
        img[mask] = color
    return np.clip(img, 0.0, 1.0).transpose(2, 0, 1)


def synthesize_multidomain(m, images_per_domain, height=64, width=64, seed=0):
    """Generate an m-domain dataset of hue-rotated renditions of shared scenes.

    Domain k applies a hue rotation of k/m turns, so content is identical
    across domains while color statistics separate them; pairing maps each
    base scene to its rendition in every domain. Deterministic in `seed`.
    """
    if m < 2:
        raise ConfigError(f"need at least 2 domains, got m={m}")
    if images_per_domain < 1:
        raise ConfigError("images_per_domain must be positive")
    if height < 8 or width < 8 or height % 4 or width % 4:
        raise ConfigError(
            f"image size {height}x{width} must be >= 8 and divisible by 4"
        )
    rng = np.random.default_rng(seed)
    bases = [_random_scene(rng, height, width) for _ in range(images_per_domain)]
    domains = []
    for k in range(m):
        shifted = [rotate_hue(base, k / m) for base in bases]
        # quantize through uint8 so in-memory data matches a PNG round trip
        block = np.stack([normalize(denormalize(s * 2.0 - 1.0)) for s in shifted])
        domains.append((f"domain_{k:02d}", block))
    pairing = [[i] * m for i in range(images_per_domain)]
    return DomainDataset(domains, pairing=pairing)
