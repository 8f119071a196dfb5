"""Evaluation: domain classifier, classification accuracy, FID, capacity table.

The eval classifier is trained on real images only and refuses to grade
anything if it cannot separate the real domains itself. Its pooled features
double as the embedding for FID at desk scale, where the usual pretrained
inception embedder would be wildly oversized.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DatasetError, EvalError
from .networks import (
    SharingMode,
    build_discriminator,
    build_generator_pair,
    count_parameters,
)


class EvalClassifier(nn.Module):
    """Small domain classifier: four stride-2 conv blocks, GAP, linear head."""

    FEATURE_DIM = 64

    def __init__(self, m, resolution=64):
        super().__init__()
        if resolution % 16:
            raise ConfigError("eval classifier needs resolution divisible by 16")
        dims = (16, 32, 64, self.FEATURE_DIM)
        layers = []
        d_in = 3
        for d_out in dims:
            layers += [
                nn.Conv2d(d_in, d_out, kernel_size=4, stride=2, padding=1),
                nn.ReLU(inplace=True),
            ]
            d_in = d_out
        self.trunk = nn.Sequential(*layers)
        self.head = nn.Linear(self.FEATURE_DIM, m)
        self.m = m
        self.resolution = resolution
        self.record = {}

    def features(self, x):
        return self.trunk(x).mean(dim=(2, 3))

    def forward(self, x):
        return self.head(self.features(x))


@dataclass
class EvalTrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    holdout_fraction: float = 0.2
    seed: int = 0
    min_accuracy: float = 0.9
    min_per_domain: int = 10


def holdout_split(dataset, fraction=0.2, seed=0):
    """Seeded per-domain split; returns ({name: train_idx}, {name: holdout_idx})."""
    rng = np.random.default_rng(seed)
    train, hold = {}, {}
    for name, images in dataset.domains:
        n = len(images)
        order = rng.permutation(n)
        n_hold = max(1, int(round(n * fraction)))
        if n_hold >= n:
            raise DatasetError(f"domain '{name}' too small to split")
        hold[name] = sorted(int(i) for i in order[:n_hold])
        train[name] = sorted(int(i) for i in order[n_hold:])
    return train, hold


def train_eval_classifier(dataset, config=EvalTrainConfig()):
    """Fit the domain classifier on real images; gate on holdout accuracy.

    Raises EvalError instead of returning a model below config.min_accuracy,
    so downstream numbers can never come from a classifier that cannot even
    tell the real domains apart.
    """
    for name, images in dataset.domains:
        if len(images) < config.min_per_domain:
            raise DatasetError(
                f"domain '{name}' has {len(images)} images; "
                f"need at least {config.min_per_domain} per domain"
            )
    h, w = dataset.resolution
    if h != w:
        raise ConfigError("eval classifier expects square images")
    train_idx, hold_idx = holdout_split(dataset, config.holdout_fraction, config.seed)

    clf = EvalClassifier(dataset.m, h)
    torch_gen = torch.Generator().manual_seed(config.seed)
    for mod in clf.modules():
        if isinstance(mod, (nn.Conv2d, nn.Linear)):
            mod.weight.data.normal_(0.0, 0.05, generator=torch_gen)
            mod.bias.data.zero_()

    rng = np.random.default_rng(config.seed)
    samples = [
        (k, i)
        for k, (name, _) in enumerate(dataset.domains)
        for i in train_idx[name]
    ]
    opt = torch.optim.Adam(clf.parameters(), lr=config.lr)
    clf.train()
    for _ in range(config.epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(order), config.batch_size):
            chunk = [samples[j] for j in order[start:start + config.batch_size]]
            xs = np.stack([dataset.domains[k][1][i] for k, i in chunk])
            ys = torch.tensor([k for k, _ in chunk], dtype=torch.long)
            logits = clf(torch.as_tensor(xs))
            loss = F.cross_entropy(logits, ys)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    clf.eval()

    hold_images, hold_labels = _gather(dataset, hold_idx)
    acc = classification_accuracy(clf, hold_images, hold_labels)
    if acc["top1"] < config.min_accuracy:
        raise EvalError(
            f"eval classifier reached only {acc['top1']:.3f} holdout accuracy "
            f"(minimum {config.min_accuracy}); refusing to evaluate with it"
        )
    clf.record = {
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "lr": config.lr,
        "seed": config.seed,
        "holdout_fraction": config.holdout_fraction,
        "holdout_accuracy": float(acc["top1"]),
        "holdout": hold_idx,
        "train": train_idx,
        "domain_names": dataset.names,
    }
    return clf


def _gather(dataset, index_map):
    images, labels = [], []
    for k, (name, block) in enumerate(dataset.domains):
        for i in index_map[name]:
            images.append(block[i])
            labels.append(k)
    return np.stack(images), labels


def _forward_batched(fn, images, batch=64):
    outs = []
    with torch.no_grad():
        for start in range(0, len(images), batch):
            xs = torch.as_tensor(np.asarray(images[start:start + batch]))
            outs.append(fn(xs.float()))
    return torch.cat(outs)


def classification_accuracy(classifier, images, labels):
    """Top-1 (and, when m > 5, top-5) accuracy of domain predictions."""
    if len(images) == 0:
        raise EvalError("no images to grade")
    if len(images) != len(labels):
        raise EvalError(f"{len(images)} images vs {len(labels)} labels")
    logits = _forward_batched(classifier, images)
    targets = torch.tensor(list(labels), dtype=torch.long)
    if int(targets.min()) < 0 or int(targets.max()) >= classifier.m:
        raise EvalError("label outside classifier's domain range")
    top1 = (logits.argmax(dim=1) == targets).float().mean().item()
    result = {"top1": float(top1)}
    if classifier.m > 5:
        top5 = logits.topk(5, dim=1).indices
        hit = (top5 == targets[:, None]).any(dim=1).float().mean().item()
        result["top5"] = float(hit)
    return result


# ---------------------------------------------------------------------------
# FID

@dataclass
class FeatureEmbedder:
    """Maps image batches to (N, dim) features; the FID metric is generic in it."""

    fn: object
    dim: int
    name: str = "custom"


def classifier_embedder(classifier):
    return FeatureEmbedder(
        fn=lambda xs: classifier.features(xs),
        dim=EvalClassifier.FEATURE_DIM,
        name="eval-classifier-gap",
    )


def fid_from_moments(mu_r, cov_r, mu_f, cov_f):
    """Frechet distance between two Gaussians given their moments.

    The matrix square root comes from an eigendecomposition of the
    symmetrized product sqrt(cov_r) cov_f sqrt(cov_r); tiny negative
    eigenvalues from numerics are clipped at zero.
    """
    mu_r = np.atleast_1d(np.asarray(mu_r, dtype=np.float64))
    mu_f = np.atleast_1d(np.asarray(mu_f, dtype=np.float64))
    cov_r = np.atleast_2d(np.asarray(cov_r, dtype=np.float64))
    cov_f = np.atleast_2d(np.asarray(cov_f, dtype=np.float64))
    if mu_r.shape != mu_f.shape or cov_r.shape != cov_f.shape:
        raise EvalError("moment shapes disagree")
    if not (
        np.isfinite(mu_r).all() and np.isfinite(mu_f).all()
        and np.isfinite(cov_r).all() and np.isfinite(cov_f).all()
    ):
        raise EvalError("non-finite moments")

    er, vr = np.linalg.eigh((cov_r + cov_r.T) / 2.0)
    er = np.clip(er, 0.0, None)
    sqrt_r = (vr * np.sqrt(er)) @ vr.T
    inner = sqrt_r @ cov_f @ sqrt_r
    ei = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    ei = np.clip(ei, 0.0, None)
    trace_sqrt = float(np.sqrt(ei).sum())

    diff = mu_r - mu_f
    value = float(diff @ diff + np.trace(cov_r) + np.trace(cov_f) - 2.0 * trace_sqrt)
    return max(value, 0.0)


def _moments(features, shrinkage):
    feats = np.asarray(features, dtype=np.float64)
    n, d = feats.shape
    mu = feats.mean(axis=0)
    if n < 2:
        raise EvalError(f"need at least 2 samples for a covariance, got {n}")
    cov = np.cov(feats, rowvar=False)
    cov = np.atleast_2d(cov)
    if n <= d:
        if not shrinkage:
            raise EvalError(
                f"{n} samples cannot estimate a full-rank {d}x{d} covariance; "
                "enable shrinkage or provide more samples"
            )
        cov = cov + 1e-6 * np.eye(d)
    return mu, cov


def fid(embedder, real_images, generated_images, shrinkage=False):
    """Frechet distance between embedded real and generated image sets.

    shrinkage=True adds a small ridge to both covariance estimates, which is
    required when a set is smaller than the embedding dimension.
    """
    feats_r = _embed(embedder, real_images)
    feats_f = _embed(embedder, generated_images)
    mu_r, cov_r = _moments(feats_r, shrinkage)
    mu_f, cov_f = _moments(feats_f, shrinkage)
    return fid_from_moments(mu_r, cov_r, mu_f, cov_f)


def _embed(embedder, images):
    if len(images) == 0:
        raise EvalError("cannot embed an empty image set")
    feats = _forward_batched(embedder.fn, images).numpy().astype(np.float64)
    if feats.ndim != 2 or feats.shape[1] != embedder.dim:
        raise EvalError(
            f"embedder produced shape {feats.shape}, expected (N, {embedder.dim})"
        )
    if not np.isfinite(feats).all():
        raise EvalError("embedder produced non-finite features")
    return feats


# ---------------------------------------------------------------------------
# capacity accounting

# published parameter counts (per model) for the baselines we tabulate against
BASELINE_CAPACITY = (
    ("pix2pix", "m(m-1)", 57.2e6),
    ("BicycleGAN", "m(m-1)", 64.3e6),
    ("CycleGAN", "m(m-1)/2", 52.6e6),
    ("DiscoGAN", "m(m-1)/2", 16.6e6),
    ("DualGAN", "m(m-1)/2", 178.7e6),
    ("DistanceGAN", "m(m-1)/2", 52.6e6),
    ("ComboGAN", "m", 14.4e6),
    ("StarGAN", "1", 53.2e6),
)

_COUNT_FORMULAS = {
    "m(m-1)": lambda m: m * (m - 1),
    "m(m-1)/2": lambda m: m * (m - 1) // 2,
    "m": lambda m: m,
    "1": lambda m: 1,
}


@dataclass
class CapacityEntry:
    method: str
    formula: str
    model_count: int
    params_per_model: int
    total_params: int


@dataclass
class CapacityReport:
    m: int
    entries: list = field(default_factory=list)

    def as_text(self):
        header = f"{'method':<24}{'models':>8}  {'formula':<10}{'params/model':>14}{'total':>14}"
        lines = [header, "-" * len(header)]
        for e in self.entries:
            lines.append(
                f"{e.method:<24}{e.model_count:>8}  {e.formula:<10}"
                f"{e.params_per_model / 1e6:>13.1f}M{e.total_params / 1e6:>13.1f}M"
            )
        return "\n".join(lines)

    def as_csv_rows(self):
        rows = [("method", "formula", "model_count", "params_per_model", "total_params")]
        for e in self.entries:
            rows.append(
                (e.method, e.formula, e.model_count, e.params_per_model, e.total_params)
            )
        return rows


def capacity_report(m, arch=None):
    """Model-count and parameter-count table for translating among m domains.

    Baseline rows use published per-model counts; the three sharing modes of
    this framework are measured from freshly built networks at the given
    architecture (defaults: 256 px, width 64, 6 res blocks, depth-6 critic).
    """
    if m < 2:
        raise ConfigError(f"capacity table needs m >= 2, got {m}")
    arch = dict(arch or {})
    resolution = arch.pop("resolution", 256)
    width_base = arch.pop("width_base", 64)
    n_res_blocks = arch.pop("n_res_blocks", 6)
    disc_depth = arch.pop("disc_depth", 6)
    if arch:
        raise ConfigError(f"unknown architecture keys: {sorted(arch)}")

    report = CapacityReport(m=m)
    for method, formula, per_model in BASELINE_CAPACITY:
        count = _COUNT_FORMULAS[formula](m)
        report.entries.append(
            CapacityEntry(method, formula, count, int(per_model), int(per_model) * count)
        )
    disc = build_discriminator(m, resolution, width_base, disc_depth)
    d_params = count_parameters(disc)
    for mode in (SharingMode.FULL, SharingMode.PARTIAL, SharingMode.NONE):
        pair = build_generator_pair(m, resolution, mode, width_base, n_res_blocks)
        per_model = count_parameters(pair) + d_params
        report.entries.append(
            CapacityEntry(f"ours ({mode.value} sharing)", "1", 1, per_model, per_model)
        )
    return report


# ---------------------------------------------------------------------------
# end-to-end translation evaluation

def evaluate_translation(
    translate_fn,
    dataset,
    classifier,
    embedder=None,
    holdout=None,
    shrinkage="auto",
):
    """Grade a translator: classify its outputs and compare feature statistics.

    translate_fn(image, src_idx, tgt_idx) -> image maps one (3, H, W) array
    to the target domain. Every holdout image is sent to every other domain;
    accuracy asks whether outputs land in the intended domain, FID compares
    them against the real holdout images (overall and per target domain).
    """
    if embedder is None:
        embedder = classifier_embedder(classifier)
    if holdout is None:
        holdout = classifier.record.get("holdout")
        if holdout is None:
            raise EvalError("no holdout split available; pass one explicitly")
    names = dataset.names
    real_images, _ = _gather(dataset, holdout)

    translated, targets = [], []
    per_target = {name: [] for name in names}
    for src, (name, block) in enumerate(dataset.domains):
        for i in holdout[name]:
            for tgt in range(dataset.m):
                if tgt == src:
                    continue
                out = np.asarray(translate_fn(block[i], src, tgt), dtype=np.float32)
                if out.shape != block[i].shape:
                    raise EvalError(
                        f"translate_fn changed shape {block[i].shape} -> {out.shape}"
                    )
                translated.append(out)
                targets.append(tgt)
                per_target[names[tgt]].append(out)

    acc = classification_accuracy(classifier, translated, targets)
    auto = shrinkage == "auto"

    def _fid(real, fake):
        sh = shrinkage if not auto else (
            min(len(real), len(fake)) <= embedder.dim
        )
        return fid(embedder, real, fake, shrinkage=sh)

    report = {
        "ca_top1": acc["top1"],
        "fid": _fid(real_images, translated),
        "per_domain": {},
    }
    if "top5" in acc:
        report["ca_top5"] = acc["top5"]
    for k, name in enumerate(names):
        real_k = [dataset.domains[k][1][i] for i in holdout[name]]
        fake_k = per_target[name]
        dom_targets = [k] * len(fake_k)
        dom_acc = classification_accuracy(classifier, fake_k, dom_targets)
        report["per_domain"][name] = {
            "ca_top1": dom_acc["top1"],
            "fid": _fid(real_k, fake_k),
            "count": len(fake_k),
        }
    return report
