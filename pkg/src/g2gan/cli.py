"""Command-line interface: synth, train, translate, evaluate, capacity.

Exit codes: 0 success, 1 IO failure, 2 usage or bad data/config,
3 numerical failure (a dump is written next to the metrics first).
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from .data import (
    encode_label,
    export_dataset,
    load_domain_folders,
    normalize,
    synthesize_multidomain,
)
from .errors import ConfigError, G2GanError, NumericsError
from .evaluation import (
    capacity_report,
    classifier_embedder,
    evaluate_translation,
    train_eval_classifier,
)
from .networks import translate
from .trainer import build_generators_from_checkpoint, fit

ENV_SEED = "G2GAN_SEED"


def build_parser():
    parser = argparse.ArgumentParser(
        prog="g2gan",
        description="Multi-domain unpaired image translation: data synthesis, "
        "training, translation, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-domain dataset")
    p.add_argument("--domains", type=int, required=True)
    p.add_argument("--count", type=int, required=True, help="images per domain")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a translation model")
    p.add_argument("--data", help="dataset root with one folder per domain")
    p.add_argument("--out", help="output directory for checkpoints and metrics")
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--sharing", choices=["full", "partial", "none"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--epochs-constant-lr", type=int, dest="epochs_constant_lr")
    p.add_argument("--size", type=int, dest="resolution")
    p.add_argument("--width-base", type=int, dest="width_base")
    p.add_argument("--n-res-blocks", type=int, dest="n_res_blocks")
    p.add_argument("--disc-depth", type=int, dest="disc_depth")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--buffer-capacity", type=int, dest="buffer_capacity")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-iterations", type=int, dest="max_iterations")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--sample-every", type=int, dest="sample_every")
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--lambda3", type=float)
    p.add_argument("--lambda4", type=float)
    p.add_argument("--no-identity", action="store_true")
    p.add_argument("--no-msssim", action="store_true")
    p.add_argument("--no-colorcycle", action="store_true")
    p.add_argument("--double-discriminator", action="store_true")
    p.add_argument("--flip-augment", action="store_true")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("translate", help="translate images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="an image file or a directory")
    p.add_argument("--source-domain", help="source domain name or index (default 0)")
    p.add_argument("--target-domain", help="target domain name or index")
    p.add_argument("--all-domains", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="grade a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="where to write report.json (default: stdout only)")
    p.add_argument("--config", help="config file for eval options")
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-epochs", type=int, dest="eval_epochs")
    p.add_argument("--eval-holdout", type=float, dest="eval_holdout")

    p = sub.add_parser("capacity", help="model-count / parameter-count table")
    p.add_argument("--domains", type=int, required=True)
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--width-base", type=int, default=64, dest="width_base")
    p.add_argument("--n-res-blocks", type=int, default=6, dest="n_res_blocks")
    p.add_argument("--disc-depth", type=int, default=6, dest="disc_depth")
    p.add_argument("--csv", action="store_true", help="emit csv instead of a table")
    return parser


_TRAIN_KEYS = (
    "data", "out", "sharing", "epochs", "epochs_constant_lr", "resolution",
    "width_base", "n_res_blocks", "disc_depth", "lr", "batch_size",
    "buffer_capacity", "seed", "max_iterations", "checkpoint_every",
    "sample_every", "dtype", "lambda1", "lambda2", "lambda3", "lambda4",
)


def _resolve_run_config(args):
    """Defaults < G2GAN_SEED < config file < explicit flags."""
    cfg = cfgmod.RunConfig()
    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"{ENV_SEED}='{env_seed}' is not an integer")
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file '{path}' not found")
        cfg = cfgmod.parse(path.read_text(), base=cfg)
    for key in _TRAIN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    for key in ("eval_epochs", "eval_holdout"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "no_identity", False):
        cfg.use_identity = False
    if getattr(args, "no_msssim", False):
        cfg.use_msssim = False
    if getattr(args, "no_colorcycle", False):
        cfg.use_colorcycle = False
    if getattr(args, "double_discriminator", False):
        cfg.use_double_discriminator = True
    if getattr(args, "flip_augment", False):
        cfg.flip_augment = True
    return cfg


def cmd_synth(args):
    if args.domains < 2:
        print("error: --domains must be at least 2", file=sys.stderr)
        return 2
    if args.count < 1 or args.size < 8 or args.size % 4:
        print("error: bad --count or --size", file=sys.stderr)
        return 2
    dataset = synthesize_multidomain(
        args.domains, args.count, args.size, args.size, seed=args.seed
    )
    out = export_dataset(dataset, args.out)
    total = sum(dataset.counts())
    print(f"wrote {total} images across {dataset.m} domains under {out}")
    return 0


def cmd_train(args):
    run_cfg = _resolve_run_config(args)
    if not run_cfg.data:
        print("error: --data (or a config file with data=) is required",
              file=sys.stderr)
        return 2
    train_cfg = cfgmod.to_train_config(run_cfg)
    dataset = load_domain_folders(
        run_cfg.data, run_cfg.resolution, flip_augment=run_cfg.flip_augment
    )
    out = Path(run_cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfgmod.emit(run_cfg))
    state = fit(
        train_cfg,
        dataset,
        out_dir=out,
        resume_from=getattr(args, "resume", None),
        verbose=not args.quiet,
    )
    print(f"finished at epoch {state.epoch}, iteration {state.iteration}; "
          f"outputs under {out}")
    return 0


def _parse_domain(token, names):
    if token is None:
        return None
    if token in names:
        return names.index(token)
    try:
        idx = int(token)
    except ValueError:
        raise ConfigError(
            f"unknown domain '{token}' (have {', '.join(names)})"
        )
    if not 0 <= idx < len(names):
        raise ConfigError(f"domain index {idx} out of range")
    return idx


def _load_inputs(path, resolution):
    from PIL import Image

    p = Path(path)
    files = []
    if p.is_dir():
        files = sorted(
            q for q in p.iterdir()
            if q.is_file() and q.suffix.lower() in
            {".png", ".jpg", ".jpeg", ".bmp", ".webp"}
        )
    elif p.is_file():
        files = [p]
    if not files:
        raise ConfigError(f"no input images at '{path}'")
    arrays = []
    for f in files:
        with Image.open(f) as im:
            im = im.convert("RGB")
            if im.size != (resolution, resolution):
                im = im.resize((resolution, resolution), Image.BILINEAR)
            arrays.append(normalize(np.asarray(im)).transpose(2, 0, 1))
    return files, arrays


def cmd_translate(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        print(f"error: checkpoint '{ckpt}' not found", file=sys.stderr)
        return 2
    pair, train_cfg, meta = build_generators_from_checkpoint(ckpt)
    names = meta.get("domain_names") or [
        f"domain_{k:02d}" for k in range(meta["m"])
    ]
    src = _parse_domain(args.source_domain, names) or 0
    targets = list(range(len(names))) if args.all_domains else None
    if targets is None:
        tgt = _parse_domain(args.target_domain, names)
        if tgt is None:
            print("error: need --target-domain or --all-domains", file=sys.stderr)
            return 2
        targets = [tgt]

    files, arrays = _load_inputs(args.input, train_cfg.resolution)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .data import denormalize
    from PIL import Image

    h, w = arrays[0].shape[1:]
    written = 0
    for f, arr in zip(files, arrays):
        for tgt in targets:
            label = encode_label(tgt, len(names), h, w)
            with torch.no_grad():
                result = translate(pair.translator, arr, label).numpy()
            mean_l1 = float(np.abs(result - arr).mean())
            dest = out / f"{f.stem}_to_{names[tgt]}.png"
            Image.fromarray(denormalize(result).transpose(1, 2, 0)).save(dest)
            print(f"{dest} (source {names[src]}, mean_l1={mean_l1:.4f})")
            written += 1
    print(f"wrote {written} images")
    return 0


def cmd_evaluate(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        print(f"error: checkpoint '{ckpt}' not found", file=sys.stderr)
        return 2
    run_cfg = _resolve_run_config(args)
    pair, train_cfg, meta = build_generators_from_checkpoint(ckpt)
    dataset = load_domain_folders(args.data, train_cfg.resolution)
    if dataset.m != meta["m"]:
        print(
            f"error: dataset has {dataset.m} domains, checkpoint expects {meta['m']}",
            file=sys.stderr,
        )
        return 2
    clf = train_eval_classifier(dataset, cfgmod.to_eval_config(run_cfg))
    h, w = dataset.resolution
    dtype = train_cfg.torch_dtype()

    def translate_fn(image, src_idx, tgt_idx):
        label = encode_label(tgt_idx, dataset.m, h, w)
        with torch.no_grad():
            out = translate(pair.translator, image.astype(np.float32), label)
        return out.to(torch.float32).numpy()

    report = evaluate_translation(translate_fn, dataset, clf,
                                  classifier_embedder(clf))
    report["config_hash"] = cfgmod.config_hash(run_cfg)
    report["checkpoint"] = str(ckpt)
    report["classifier_holdout_accuracy"] = clf.record["holdout_accuracy"]

    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        if out.suffix != ".json":
            out.mkdir(parents=True, exist_ok=True)
            out = out / "report.json"
        out.write_text(json.dumps(report, indent=2, sort_keys=True))
        print(f"report written to {out}")
    return 0


def cmd_capacity(args):
    if args.domains < 2:
        print("error: --domains must be at least 2", file=sys.stderr)
        return 2
    report = capacity_report(
        args.domains,
        {
            "resolution": args.resolution,
            "width_base": args.width_base,
            "n_res_blocks": args.n_res_blocks,
            "disc_depth": args.disc_depth,
        },
    )
    if args.csv:
        for row in report.as_csv_rows():
            print(",".join(str(v) for v in row))
    else:
        print(report.as_text())
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "capacity": cmd_capacity,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for usage errors; keep its codes
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except G2GanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


def entrypoint():
    raise SystemExit(main(sys.argv[1:]))


if __name__ == "__main__":
    sys.exit(main())
