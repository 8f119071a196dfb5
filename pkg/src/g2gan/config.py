"""Flat key=value run configuration shared by the CLI commands.

One RunConfig covers dataset location, output directory, training fields
(lower_snake_case mirrors of TrainConfig), and evaluation options. Files are
plain `key = value` lines; parse() rejects unknown keys and emit() round-trips.
"""

import dataclasses
import hashlib
from dataclasses import dataclass

from .errors import ConfigError
from .evaluation import EvalTrainConfig
from .losses import ObjectiveWeights, SsimParams
from .trainer import TrainConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class RunConfig:
    data: str = ""                 # dataset root; the one key without a usable default
    out: str = "runs/exp"
    sharing: str = "none"
    resolution: int = 64
    width_base: int = 16
    n_res_blocks: int = 4
    disc_depth: int = 4
    epochs: int = 200
    epochs_constant_lr: int = 100
    lr: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 1
    buffer_capacity: int = 50
    lambda1: float = 1.0
    lambda2: float = 10.0
    lambda3: float = 1.0
    lambda4: float = 0.5
    use_identity: bool = True
    use_msssim: bool = True
    use_colorcycle: bool = True
    use_double_discriminator: bool = False
    use_symmetric_identity: bool = False
    seed: int = 0
    dtype: str = "float32"
    max_iterations: int = 0
    checkpoint_every: int = 10
    sample_every: int = 10
    log_every: int = 1
    flip_augment: bool = False
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_scales: int = 3
    ssim_c1: float = 0.01 ** 2
    ssim_c2: float = 0.03 ** 2
    eval_epochs: int = 10
    eval_batch_size: int = 32
    eval_lr: float = 1e-3
    eval_holdout: float = 0.2
    eval_min_accuracy: float = 0.9


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name, raw):
    kind = _FIELDS[name].type
    raw = raw.strip()
    try:
        if kind == "bool" or kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: '{raw}'")
        if kind == "int" or kind is int:
            return int(raw)
        if kind == "float" or kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for '{name}': {exc}")


def parse(text, base=None):
    """Parse `key = value` lines onto a copy of `base` (or the defaults).

    Blank lines and lines starting with # are ignored. Unknown keys raise
    ConfigError rather than being silently dropped.
    """
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{stripped}'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown config key '{key}'")
        setattr(cfg, key, _coerce(key, raw))
    return cfg


def emit(cfg):
    """Serialize a RunConfig to text such that parse(emit(c)) == c."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg):
    return hashlib.sha256(emit(cfg).encode()).hexdigest()[:12]


def to_train_config(cfg):
    """Build the trainer-facing config from a flat RunConfig."""
    weights = ObjectiveWeights(
        lambda1=cfg.lambda1,
        lambda2=cfg.lambda2,
        lambda3=cfg.lambda3,
        lambda4=cfg.lambda4,
    )
    ssim = SsimParams(
        c1=cfg.ssim_c1,
        c2=cfg.ssim_c2,
        window_size=cfg.ssim_window,
        window_sigma=cfg.ssim_sigma,
        scales=cfg.ssim_scales,
    )
    return TrainConfig(
        sharing=cfg.sharing,
        resolution=cfg.resolution,
        width_base=cfg.width_base,
        n_res_blocks=cfg.n_res_blocks,
        disc_depth=cfg.disc_depth,
        epochs_total=cfg.epochs,
        epochs_constant_lr=cfg.epochs_constant_lr,
        lr0=cfg.lr,
        adam_beta1=cfg.adam_beta1,
        adam_beta2=cfg.adam_beta2,
        batch_size=cfg.batch_size,
        buffer_capacity=cfg.buffer_capacity,
        weights=weights,
        ssim=ssim,
        use_identity=cfg.use_identity,
        use_msssim=cfg.use_msssim,
        use_colorcycle=cfg.use_colorcycle,
        use_double_discriminator=cfg.use_double_discriminator,
        use_symmetric_identity=cfg.use_symmetric_identity,
        seed=cfg.seed,
        dtype=cfg.dtype,
        max_iterations=cfg.max_iterations,
        checkpoint_every=cfg.checkpoint_every,
        sample_every=cfg.sample_every,
        log_every=cfg.log_every,
    )


def to_eval_config(cfg):
    return EvalTrainConfig(
        epochs=cfg.eval_epochs,
        batch_size=cfg.eval_batch_size,
        lr=cfg.eval_lr,
        holdout_fraction=cfg.eval_holdout,
        seed=cfg.seed,
        min_accuracy=cfg.eval_min_accuracy,
    )
