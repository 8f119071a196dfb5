"""Training loop: image buffer, schedules, the three-phase step, and fit().

Each iteration updates the discriminator, then the translation generator,
then the reconstruction generator. All data-side randomness (sampling,
buffer swaps) flows through one numpy Generator owned by the TrainState, so
a run is fully determined by its config seed.
"""

import csv
import json
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import losses
from .data import DomainDataset, denormalize, draw_from_domain, sample_unpaired
from .errors import ConfigError, NumericsError
from .losses import ObjectiveWeights, SsimParams
from .networks import (
    SharingMode,
    build_discriminator,
    build_generator_pair,
    collect_params,
    count_parameters,
    init_weights,
    load_checkpoint,
    load_params,
    save_checkpoint,
    tiled_label_tensor,
)

METRIC_KEYS = ("d_adv", "d_cls", "g_adv", "g_cls", "cyc", "msssim", "idt")
D2_KEYS = ("d2_adv", "d2_cls")


class ImageBuffer:
    """History pool of previously generated images shown to the critic.

    Below capacity every fresh image is stored and returned as-is. Once the
    pool is full each fresh image either passes straight through (p = 0.5) or
    is swapped against a random stored one, which it replaces.
    """

    def __init__(self, capacity=50, rng=None):
        if capacity < 0:
            raise ConfigError("buffer capacity must be >= 0")
        self.capacity = int(capacity)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.pool = []

    def __len__(self):
        return len(self.pool)

    def query(self, fresh):
        if fresh.requires_grad:
            raise ValueError("buffer input must be detached from the graph")
        if self.capacity == 0:
            return fresh
        out = []
        for img in fresh:
            img = img.detach().clone()
            if len(self.pool) < self.capacity:
                self.pool.append(img)
                out.append(img)
            elif self.rng.random() < 0.5:
                slot = int(self.rng.integers(self.capacity))
                out.append(self.pool[slot])
                self.pool[slot] = img
            else:
                out.append(img)
        return torch.stack(out)

    def state(self):
        return [img.numpy().copy() for img in self.pool]

    def load_state(self, arrays, dtype):
        self.pool = [torch.as_tensor(a, dtype=dtype) for a in arrays]


@dataclass
class TrainConfig:
    """Everything that defines a run (architecture, objective, schedule)."""

    sharing: SharingMode = SharingMode.NONE
    resolution: int = 64
    width_base: int = 16
    n_res_blocks: int = 4
    disc_depth: int = 4
    epochs_total: int = 200
    epochs_constant_lr: int = 100
    lr0: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 1
    buffer_capacity: int = 50
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    ssim: SsimParams = field(default_factory=SsimParams)
    use_identity: bool = True
    use_msssim: bool = True
    use_colorcycle: bool = True
    use_double_discriminator: bool = False
    use_symmetric_identity: bool = False
    seed: int = 0
    dtype: str = "float32"
    max_iterations: int = 0       # 0 means no cap
    checkpoint_every: int = 10    # epochs
    sample_every: int = 10        # epochs
    log_every: int = 1            # iterations per csv row

    def __post_init__(self):
        self.sharing = SharingMode(self.sharing)
        if self.epochs_total < 1:
            raise ConfigError("epochs_total must be >= 1")
        if self.epochs_constant_lr < 0:
            raise ConfigError("epochs_constant_lr must be >= 0")
        # short runs never reach the decay leg; clamp instead of rejecting
        if self.epochs_constant_lr > self.epochs_total:
            self.epochs_constant_lr = self.epochs_total
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype '{self.dtype}'")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if self.checkpoint_every < 1 or self.sample_every < 1 or self.log_every < 1:
            raise ConfigError("periodic intervals must be >= 1")

    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["sharing"] = self.sharing.value
        d["ssim"]["scale_weights"] = (
            None if self.ssim.scale_weights is None else list(self.ssim.scale_weights)
        )
        d["ssim"]["input_range"] = list(self.ssim.input_range)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        w = d.pop("weights", {})
        s = dict(d.pop("ssim", {}))
        if s.get("scale_weights") is not None:
            s["scale_weights"] = tuple(s["scale_weights"])
        if s.get("input_range") is not None:
            s["input_range"] = tuple(s["input_range"])
        return cls(weights=ObjectiveWeights(**w), ssim=SsimParams(**s), **d)


def lr_at_epoch(cfg, epoch):
    """Constant lr0 through epochs_constant_lr, then linear decay to zero.

    Epochs are 1-based; the decay reaches exactly zero one epoch past the
    end, so the final training epoch still takes a small step.
    """
    if not 1 <= epoch <= cfg.epochs_total:
        raise ConfigError(
            f"epoch {epoch} outside schedule 1..{cfg.epochs_total}"
        )
    if epoch <= cfg.epochs_constant_lr:
        return cfg.lr0
    decay_epochs = cfg.epochs_total - cfg.epochs_constant_lr
    done = epoch - cfg.epochs_constant_lr
    return cfg.lr0 * (1.0 - done / decay_epochs)


class TrainState:
    """Mutable bundle of everything a run needs between steps."""

    def __init__(self, cfg, dataset, pair, disc, disc2, opts, buffer, rng):
        self.cfg = cfg
        self.dataset = dataset
        self.pair = pair
        self.disc = disc
        self.disc2 = disc2
        self.opt_d, self.opt_gt, self.opt_gr = opts
        self.buffer = buffer
        self.rng = rng
        self.epoch = 0
        self.iteration = 0

    @property
    def m(self):
        return self.dataset.m


def _check_dataset(cfg, dataset):
    if not isinstance(dataset, DomainDataset):
        raise ConfigError("fit expects a DomainDataset")
    if dataset.m < 2:
        raise ConfigError("training needs at least two domains")
    h, w = dataset.resolution
    if h != w:
        raise ConfigError(f"training expects square images, got {h}x{w}")
    if h != cfg.resolution:
        raise ConfigError(
            f"dataset resolution {h} does not match config resolution {cfg.resolution}"
        )


def create_train_state(cfg, dataset):
    _check_dataset(cfg, dataset)
    m = dataset.m
    dtype = cfg.torch_dtype()
    pair = build_generator_pair(
        m, cfg.resolution, cfg.sharing, cfg.width_base, cfg.n_res_blocks
    )
    disc = build_discriminator(m, cfg.resolution, cfg.width_base, cfg.disc_depth)
    init_weights(pair, cfg.seed)
    init_weights(disc, cfg.seed + 1)
    disc2 = None
    if cfg.use_double_discriminator:
        if cfg.resolution % (2 ** (cfg.disc_depth + 1)):
            raise ConfigError(
                "half-resolution discriminator needs resolution divisible by "
                f"{2 ** (cfg.disc_depth + 1)}"
            )
        disc2 = build_discriminator(
            m, cfg.resolution // 2, cfg.width_base, cfg.disc_depth
        )
        init_weights(disc2, cfg.seed + 2)
    pair.to(dtype)
    disc.to(dtype)
    if disc2 is not None:
        disc2.to(dtype)

    betas = (cfg.adam_beta1, cfg.adam_beta2)
    d_params = list(disc.parameters())
    if disc2 is not None:
        d_params += list(disc2.parameters())
    opts = (
        torch.optim.Adam(d_params, lr=cfg.lr0, betas=betas),
        torch.optim.Adam(pair.translator.parameters(), lr=cfg.lr0, betas=betas),
        torch.optim.Adam(pair.reconstructor.parameters(), lr=cfg.lr0, betas=betas),
    )
    rng = np.random.default_rng(cfg.seed)
    buffer = ImageBuffer(cfg.buffer_capacity, rng)
    return TrainState(cfg, dataset, pair, disc, disc2, opts, buffer, rng)


def _set_requires_grad(module, flag):
    if module is not None:
        for p in module.parameters():
            p.requires_grad_(flag)


def _zero_grads(state):
    state.opt_d.zero_grad(set_to_none=True)
    state.opt_gt.zero_grad(set_to_none=True)
    state.opt_gr.zero_grad(set_to_none=True)


def _as_batch(state, batch):
    """Normalize a (x, z_x, z_y) batch into tensors plus label lists."""
    x, z_x, z_y = batch
    dtype = state.cfg.torch_dtype()
    if isinstance(x, np.ndarray) and x.ndim == 3:
        x = x[None]
    x = torch.as_tensor(np.ascontiguousarray(x), dtype=dtype)
    labels_x = z_x if isinstance(z_x, (list, tuple)) else [z_x]
    labels_y = z_y if isinstance(z_y, (list, tuple)) else [z_y]
    if len(labels_x) != x.shape[0] or len(labels_y) != x.shape[0]:
        raise ConfigError("batch labels do not match batch size")
    return x, list(labels_x), list(labels_y)


def _stack_tiles(labels, h, w, dtype):
    tiles = [tiled_label_tensor(lab, 1, h, w, dtype) for lab in labels]
    return torch.cat(tiles, dim=0)


def _halve(x):
    return torch.nn.functional.avg_pool2d(x, kernel_size=2)


def _scalar(value):
    return float(value.detach()) if torch.is_tensor(value) else float(value)


def _finite_or_raise(tag, value):
    if not torch.isfinite(value).all():
        raise NumericsError(f"non-finite {tag} loss at training time")
    return value


def train_step(state, batch):
    """One full iteration: D update, G^t update, then G^r update.

    Returns a dict of float metrics (the csv columns minus bookkeeping).
    """
    cfg = state.cfg
    w = cfg.weights
    x, labels_x, labels_y = _as_batch(state, batch)
    n, _, h, wd = x.shape
    dtype = x.dtype
    tiles_x = _stack_tiles(labels_x, h, wd, dtype)
    tiles_y = _stack_tiles(labels_y, h, wd, dtype)
    dual = state.disc2 is not None
    metrics = {}

    # ----- discriminator phase -----
    y = torch.as_tensor(
        np.stack([draw_from_domain(state.dataset, lab.index, state.rng)
                  for lab in labels_y]),
        dtype=dtype,
    )
    with torch.no_grad():
        fake = state.pair.translator(x, tiles_y)
    buffered = state.buffer.query(fake)

    real_patch, _ = state.disc(y)
    fake_patch, _ = state.disc(buffered)
    _, real_logits = state.disc(x)
    d_adv = losses.lsgan_discriminator_loss(real_patch, fake_patch)
    d_cls = losses.classification_loss(real_logits, labels_x)
    metrics["d_adv"] = _scalar(d_adv)
    metrics["d_cls"] = _scalar(d_cls)
    if dual:
        rp2, _ = state.disc2(_halve(y))
        fp2, _ = state.disc2(_halve(buffered))
        _, rl2 = state.disc2(_halve(x))
        d2_adv = losses.lsgan_discriminator_loss(rp2, fp2)
        d2_cls = losses.classification_loss(rl2, labels_x)
        metrics["d2_adv"] = _scalar(d2_adv)
        metrics["d2_cls"] = _scalar(d2_cls)
        d_loss = 0.5 * (d_adv + d2_adv) + w.lambda1 * 0.5 * (d_cls + d2_cls)
    else:
        d_loss = d_adv + w.lambda1 * d_cls
    _finite_or_raise("discriminator", d_loss)
    _zero_grads(state)
    d_loss.backward()
    state.opt_d.step()

    # ----- translation generator phase -----
    _set_requires_grad(state.disc, False)
    _set_requires_grad(state.disc2, False)

    fake = state.pair.translator(x, tiles_y)
    patch, logits = state.disc(fake)
    g_adv = losses.lsgan_generator_loss(patch)
    g_cls = losses.classification_loss(logits, labels_y)
    if dual:
        p2, l2 = state.disc2(_halve(fake))
        g_adv = 0.5 * (g_adv + losses.lsgan_generator_loss(p2))
        g_cls = 0.5 * (g_cls + losses.classification_loss(l2, labels_y))
    zero = torch.zeros((), dtype=dtype)
    cyc = mss = zero
    if cfg.use_colorcycle or cfg.use_msssim:
        rec = state.pair.reconstructor(fake, tiles_x)
        if cfg.use_colorcycle:
            cyc = losses.color_cycle(rec, x)
        if cfg.use_msssim:
            mss = losses.ms_ssim_loss(rec, x, cfg.ssim)
    gt_loss = g_adv + w.lambda1 * g_cls + w.lambda2 * cyc + w.lambda3 * mss
    if cfg.use_symmetric_identity:
        gt_loss = gt_loss + w.lambda4 * losses.cycle_l1(
            state.pair.translator(y, tiles_y), y
        )
    _finite_or_raise("translator", gt_loss)
    _zero_grads(state)
    gt_loss.backward()
    state.opt_gt.step()
    metrics["g_adv"] = _scalar(g_adv)
    metrics["g_cls"] = _scalar(g_cls)
    metrics["cyc"] = _scalar(cyc)
    metrics["msssim"] = _scalar(mss)

    # ----- reconstruction generator phase -----
    # reuses the translator output from its own update, detached, so no
    # gradient reaches the translator from here
    fake_frozen = fake.detach()
    terms = []
    if cfg.use_colorcycle or cfg.use_msssim:
        rec2 = state.pair.reconstructor(fake_frozen, tiles_x)
        if cfg.use_colorcycle:
            terms.append(w.lambda2 * losses.color_cycle(rec2, x))
        if cfg.use_msssim:
            terms.append(w.lambda3 * losses.ms_ssim_loss(rec2, x, cfg.ssim))
    idt = zero
    if cfg.use_identity:
        if n == 1:
            idt = losses.identity_loss(state.pair.reconstructor, x, labels_x[0])
        else:
            idt = _batch_identity(state, x, labels_x, dtype)
        terms.append(w.lambda4 * idt)
    metrics["idt"] = _scalar(idt)
    if terms:
        gr_loss = terms[0]
        for t in terms[1:]:
            gr_loss = gr_loss + t
        _finite_or_raise("reconstructor", gr_loss)
        _zero_grads(state)
        gr_loss.backward()
        state.opt_gr.step()

    _set_requires_grad(state.disc, True)
    _set_requires_grad(state.disc2, True)
    return metrics


def _batch_identity(state, x, labels_x, dtype):
    h, w = x.shape[2], x.shape[3]
    tiles = _stack_tiles(labels_x, h, w, dtype)
    out = state.pair.reconstructor(x, tiles)
    return losses.cycle_l1(out, x)


def double_discriminator_step(state, batch):
    """train_step for a state built with use_double_discriminator."""
    if state.disc2 is None:
        raise ConfigError(
            "double_discriminator_step needs use_double_discriminator=True"
        )
    return train_step(state, batch)


# ---------------------------------------------------------------------------
# checkpoints

def save_train_checkpoint(state, path):
    params = collect_params(state.pair, state.disc, state.disc2)
    meta = {
        "config": state.cfg.to_dict(),
        "epoch": state.epoch,
        "iteration": state.iteration,
        "m": state.m,
        "domain_names": state.dataset.names,
        "rng_state": state.rng.bit_generator.state,
        "optimizers": {
            "d": state.opt_d.state_dict(),
            "gt": state.opt_gt.state_dict(),
            "gr": state.opt_gr.state_dict(),
        },
        "buffer": state.buffer.state(),
    }
    save_checkpoint(path, params, meta)
    return path


def load_train_state(path, dataset):
    params, meta = load_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    state = create_train_state(cfg, dataset)
    load_params(params, state.pair, state.disc, state.disc2)
    state.opt_d.load_state_dict(meta["optimizers"]["d"])
    state.opt_gt.load_state_dict(meta["optimizers"]["gt"])
    state.opt_gr.load_state_dict(meta["optimizers"]["gr"])
    state.rng.bit_generator.state = meta["rng_state"]
    state.buffer.load_state(meta["buffer"], cfg.torch_dtype())
    state.epoch = meta["epoch"]
    state.iteration = meta["iteration"]
    return state


def build_generators_from_checkpoint(path):
    """Rebuild just the generator pair (for translation / evaluation)."""
    params, meta = load_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    pair = build_generator_pair(
        meta["m"], cfg.resolution, cfg.sharing, cfg.width_base, cfg.n_res_blocks
    )
    pair.to(cfg.torch_dtype())
    load_params(params, pair)
    pair.eval()
    return pair, cfg, meta


# ---------------------------------------------------------------------------
# the outer loop

def _csv_columns(cfg):
    cols = ["iteration", "epoch"] + list(METRIC_KEYS)
    if cfg.use_double_discriminator:
        cols += list(D2_KEYS)
    return cols + ["lr"]


def _ordered_row(cfg, iteration, epoch, metrics, lr):
    row = {"iteration": iteration, "epoch": epoch, "lr": lr}
    for key in METRIC_KEYS:
        row[key] = metrics.get(key, 0.0)
    if cfg.use_double_discriminator:
        for key in D2_KEYS:
            row[key] = metrics.get(key, 0.0)
    return row


def _write_sample_grid(state, path):
    """m rows (one source image per domain) by 1 + m columns (input, targets)."""
    ds = state.dataset
    h, w = ds.resolution
    dtype = state.cfg.torch_dtype()
    rows = []
    with torch.no_grad():
        for src in range(ds.m):
            x = torch.as_tensor(ds.domains[src][1][0:1], dtype=dtype)
            cells = [x[0]]
            for tgt in range(ds.m):
                tiles = _stack_tiles([ds.label(tgt)], h, w, dtype)
                cells.append(state.pair.translator(x, tiles)[0])
            rows.append(torch.cat(cells, dim=2))
    grid = torch.cat(rows, dim=1).numpy()
    Image.fromarray(denormalize(grid).transpose(1, 2, 0)).save(path)


def fit(cfg, dataset, out_dir=None, callbacks=(), resume_from=None, verbose=False):
    """Run (or continue) training; returns the final TrainState.

    When resume_from points at a checkpoint the stored config wins and `cfg`
    may be None. Writes metrics.csv, periodic checkpoints, and sample grids
    when out_dir is given. On a NumericsError a small json dump of where
    training died is left next to the metrics before the error propagates.
    """
    if resume_from is not None:
        state = load_train_state(resume_from, dataset)
    elif cfg is not None:
        state = create_train_state(cfg, dataset)
    else:
        raise ConfigError("fit needs a config or a checkpoint to resume from")
    cfg = state.cfg

    writer = csv_file = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "metrics.csv"
        fresh = not csv_path.exists()
        csv_file = open(csv_path, "a", newline="")
        writer = csv.DictWriter(csv_file, fieldnames=_csv_columns(cfg))
        if fresh:
            writer.writeheader()

    iters_per_epoch = max(1, sum(dataset.counts()) // cfg.batch_size)
    cap = cfg.max_iterations or None

    try:
        while state.epoch < cfg.epochs_total:
            if cap is not None and state.iteration >= cap:
                break
            state.epoch += 1
            lr = lr_at_epoch(cfg, state.epoch)
            for opt in (state.opt_d, state.opt_gt, state.opt_gr):
                for group in opt.param_groups:
                    group["lr"] = lr
            for _ in range(iters_per_epoch):
                if cap is not None and state.iteration >= cap:
                    break
                batch = [sample_unpaired(dataset, state.rng)
                         for _ in range(cfg.batch_size)]
                xs = np.stack([b[0] for b in batch])
                lx = [b[1] for b in batch]
                ly = [b[2] for b in batch]
                try:
                    metrics = train_step(state, (xs, lx, ly))
                except NumericsError as err:
                    if out_dir is not None:
                        dump = {
                            "iteration": state.iteration,
                            "epoch": state.epoch,
                            "error": str(err),
                        }
                        (Path(out_dir) / "numerics_dump.json").write_text(
                            json.dumps(dump, indent=2)
                        )
                    raise
                state.iteration += 1
                if writer and state.iteration % cfg.log_every == 0:
                    writer.writerow(
                        _ordered_row(cfg, state.iteration, state.epoch, metrics, lr)
                    )
                for cb in callbacks:
                    cb(state, metrics)
            if verbose:
                shown = " ".join(f"{k}={metrics[k]:.4f}" for k in METRIC_KEYS)
                print(
                    f"epoch {state.epoch}/{cfg.epochs_total} "
                    f"iter {state.iteration} lr {lr:.2e} {shown}",
                    flush=True,
                )
            if out_dir is not None:
                final = state.epoch == cfg.epochs_total or (
                    cap is not None and state.iteration >= cap
                )
                if state.epoch % cfg.checkpoint_every == 0 or final:
                    save_train_checkpoint(
                        state, Path(out_dir) / f"ckpt_epoch{state.epoch}.archive"
                    )
                if state.epoch % cfg.sample_every == 0 or final:
                    _write_sample_grid(
                        state, Path(out_dir) / f"samples_epoch{state.epoch}.png"
                    )
    finally:
        if csv_file is not None:
            csv_file.close()
    return state
