"""Command-line entry point.

    peerstyle train [--config FILE] [--set section.key=value ...] [--steps N] [--out DIR]
    peerstyle train --resume CHECKPOINT [--steps N] [--out DIR]
    peerstyle stylize CHECKPOINT CONTENT STYLE --out IMAGE
    peerstyle reconstruct CHECKPOINT IMAGE --out IMAGE [--zero-content] [--zero-style]
    peerstyle gradcheck {op,network,loss,all}
    peerstyle eval-separation CHECKPOINT

Exit codes: 0 success, 1 usage error, 2 config error, 3 runtime or numeric failure.
"""

import argparse
import dataclasses
import json
import logging
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from . import _kernels
from .checkpoint import CheckpointError, load_model, load_trainer, save_checkpoint
from .config import ConfigError, TrainConfig, apply_overrides, dump_config, load_config
from .data import Dataset, ImageError, load_image, save_image
from .gradcheck import SCOPES, TOLERANCE, run_scope
from .tensor import NonFiniteError, ShapeError
from .training import CsvLog, NonFiniteLossError, Trainer, eval_style_separation

log = logging.getLogger("peerstyle")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
PRESETS = {"desk": TrainConfig.desk, "full": TrainConfig}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; route that to our usage code instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def _resolve_config(args):
    cfg = PRESETS[args.preset]()
    if args.config:
        cfg = load_config(args.config, args.set, base=cfg)
    else:
        cfg = apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def write_manifest(path, trainer, argv, resumed_from=None):
    cfg = trainer.cfg
    manifest = {
        "version": __version__,
        "backend": _kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "argv": list(argv),
        "seed": cfg.seed,
        "start_step": trainer.step,
        "resumed_from": resumed_from,
        "config": cfg.to_dict(),
        "config_ini": dump_config(cfg),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def cmd_train(args, argv):
    if args.resume:
        if args.config or args.set or args.seed is not None:
            raise UsageError("--resume takes its config and seed from the checkpoint; "
                             "--config/--set/--seed are not allowed with it")
        trainer = load_trainer(args.resume)
    else:
        trainer = Trainer(_resolve_config(args))
    cfg = trainer.cfg
    os.makedirs(args.out, exist_ok=True)
    write_manifest(os.path.join(args.out, "manifest.json"), trainer, argv, args.resume)

    remaining = trainer.total_steps - trainer.step
    n_steps = remaining if args.steps is None else min(args.steps, remaining)
    log.info("training %d steps from step %d (backend %s)", n_steps, trainer.step, _kernels.BACKEND)
    log_path = os.path.join(args.out, "log.csv")
    started = time.perf_counter()
    with CsvLog(log_path, append=bool(args.resume)) as csv_log:
        for _ in range(n_steps):
            _, row = trainer.train_step()
            csv_log.write(row)
            if cfg.log_every and trainer.step % cfg.log_every == 0:
                log.info("step %d  aux_idt %.4f  main_idt %.4f  z_style %.4f  gen %.4f  disc %.4f",
                         row["step"], row["aux_idt"], row["main_idt"], row["z_style"],
                         row["gen"], row["disc_total"])
            if cfg.checkpoint_every and trainer.step % cfg.checkpoint_every == 0:
                save_checkpoint(os.path.join(args.out, f"step_{trainer.step:06d}.npz"), trainer)
    final = os.path.join(args.out, "last.npz")
    save_checkpoint(final, trainer)
    log.info("done: %d steps in %.1fs, checkpoint %s", n_steps, time.perf_counter() - started, final)
    return EXIT_OK


# --------------------------------------------------------------------------
# inference
# --------------------------------------------------------------------------

def _load_checked(path, config_path):
    """Load a checkpoint; if a config file is given its network must match."""
    model, cfg = load_model(path)
    if config_path:
        expected = load_config(config_path, base=cfg).net
        diffs = [f"{k}: checkpoint={getattr(cfg.net, k)!r} config={getattr(expected, k)!r}"
                 for k in dataclasses.asdict(cfg.net) if getattr(cfg.net, k) != getattr(expected, k)]
        if diffs:
            raise ConfigError(f"checkpoint {path} does not match config {config_path}: " + "; ".join(diffs))
    return model, cfg


def cmd_stylize(args, argv):
    model, _ = _load_checked(args.checkpoint, args.config)
    content = load_image(args.content).pixels[None]
    style = load_image(args.style).pixels[None]
    out = model.stylize(content, style)[0]
    save_image(out, args.out)
    return EXIT_OK


def cmd_reconstruct(args, argv):
    model, _ = _load_checked(args.checkpoint, args.config)
    image = load_image(args.image).pixels[None]
    out = model.reconstruct(image, zero_content=args.zero_content, zero_style=args.zero_style)[0]
    save_image(out, args.out)
    return EXIT_OK


def cmd_eval_separation(args, argv):
    model, cfg = _load_checked(args.checkpoint, args.config)
    seed = cfg.seed if args.seed is None else args.seed
    intra, inter = eval_style_separation(model, Dataset(cfg.data), args.n_per_class, np.random.default_rng(seed))
    ratio = inter / intra if intra > 0 else float("inf")
    print(f"intra {intra:.6f}  inter {inter:.6f}  ratio {ratio:.4f}")
    return EXIT_OK


def cmd_gradcheck(args, argv):
    scopes = list(SCOPES) if args.scope == "all" else [args.scope]
    seed = 0 if args.seed is None else args.seed
    failed = 0
    started = time.perf_counter()
    for scope in scopes:
        for res in run_scope(scope, seed):
            ok = res.passed()
            failed += not ok
            print(f"{'ok  ' if ok else 'FAIL'} {res.name:<36} max rel err {res.max_rel_error:.3e} "
                  f"({res.n_entries} entries, {res.n_kinks} kinks, {res.seconds:.2f}s)")
    print(f"{failed} failure(s), tolerance {TOLERANCE:g}, {time.perf_counter() - started:.1f}s")
    return EXIT_RUNTIME if failed else EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="peerstyle", description="Peer-regularized feature recombination style transfer.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(p, config_help="INI config file"):
        p.add_argument("--config", help=config_help)
        p.add_argument("--seed", type=int, help="override the random seed")
        p.add_argument("-q", "--quiet", action="store_true", help="only print warnings and errors")
        return p

    p = common(sub.add_parser("train", help="run the training loop"))
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk",
                   help="base configuration the config file and --set apply on top of (default: desk)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue training from a checkpoint")
    p.add_argument("--steps", type=int, help="run at most this many steps (default: to the end of the schedule)")
    p.add_argument("--out", default="run", help="output directory (default: ./run)")
    p.set_defaults(func=cmd_train)

    check_help = "config file whose [net] section the checkpoint must match"
    p = common(sub.add_parser("stylize", help="render CONTENT in the style of STYLE"), check_help)
    p.add_argument("checkpoint")
    p.add_argument("content")
    p.add_argument("style")
    p.add_argument("--out", required=True, help="output image (.png or .ppm)")
    p.set_defaults(func=cmd_stylize)

    p = common(sub.add_parser("reconstruct", help="self-transfer with optional latent zeroing"), check_help)
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("--out", required=True, help="output image (.png or .ppm)")
    p.add_argument("--zero-content", action="store_true", help="zero the content code before decoding")
    p.add_argument("--zero-style", action="store_true", help="zero both style codes before decoding")
    p.set_defaults(func=cmd_reconstruct)

    p = common(sub.add_parser("gradcheck", help="finite-difference gradient checks"))
    p.add_argument("scope", choices=list(SCOPES) + ["all"])
    p.set_defaults(func=cmd_gradcheck)

    p = common(sub.add_parser("eval-separation", help="intra/inter-class style distances"), check_help)
    p.add_argument("checkpoint")
    p.add_argument("--n-per-class", type=int, default=8)
    p.set_defaults(func=cmd_eval_separation)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    if getattr(args, "steps", None) is not None and args.steps < 0:
        print("error: --steps must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLossError, NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CheckpointError, ImageError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
