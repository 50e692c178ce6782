"""Checkpoint archive: parameters, optimizer moments, RNG streams, config.

The file is an uncompressed ``.npz`` (zip) archive. Entry ``__header__`` holds
UTF-8 JSON with the format name, version, resolved config, step and RNG
states. Parameters live under ``param/<path>`` and Adam moments under
``adam/<role>/{m,v}/<path>``, all as little-endian float64.
"""

import json
import zipfile

import numpy as np

from .config import TrainConfig
from .data import DatasetSpec
from .model import StyleTransferModel
from .nn import NetConfig

FORMAT = "peerstyle-checkpoint"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _header_bytes(header):
    return np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def save_checkpoint(path, trainer):
    cfg = trainer.cfg
    header = {
        "format": FORMAT,
        "version": VERSION,
        "config": cfg.to_dict(),
        "step": trainer.step,
        "epoch": trainer.epoch,
        "rng": {name: rng.bit_generator.state for name, rng in trainer.rngs.items()},
        "optim": {role: {"step_count": o.step_count, "lr": o.lr, "betas": [o.beta1, o.beta2], "eps": o.eps}
                  for role, o in trainer.optimizers.items()},
    }
    arrays = {"__header__": _header_bytes(header)}
    for name, p in trainer.model.named_parameters().items():
        arrays[f"param/{name}"] = p.data.astype("<f8")
    for role, opt in trainer.optimizers.items():
        for name in opt.params:
            arrays[f"adam/{role}/m/{name}"] = opt.m[name].astype("<f8")
            arrays[f"adam/{role}/v/{name}"] = opt.v[name].astype("<f8")
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def save_model(path, model, cfg=None):
    """Parameters-only archive (no optimizer or RNG state), e.g. for inference."""
    cfg = cfg or TrainConfig(net=model.cfg)
    header = {"format": FORMAT, "version": VERSION, "config": cfg.to_dict(), "step": 0, "epoch": 0}
    arrays = {"__header__": _header_bytes(header)}
    for name, p in model.named_parameters().items():
        arrays[f"param/{name}"] = p.data.astype("<f8")
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def read_archive(path):
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {k: archive[k] for k in archive.files}
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such checkpoint") from None
    except (OSError, ValueError, zipfile.BadZipFile, EOFError) as exc:
        raise CheckpointError(f"{path}: corrupt or unreadable checkpoint ({exc})") from None
    if "__header__" not in arrays:
        raise CheckpointError(f"{path}: missing header, not a checkpoint")
    try:
        header = json.loads(arrays.pop("__header__").tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
    if header.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {header.get('version')} is not supported (expected {VERSION})")
    return header, arrays


def config_from_header(header):
    raw = header["config"]
    try:
        net = NetConfig(**raw["net"])
        data = DatasetSpec(**raw["data"])
        scalars = {k: v for k, v in raw.items() if k not in ("net", "data")}
        return TrainConfig(net=net, data=data, **scalars)
    except (TypeError, ValueError, KeyError) as exc:
        raise CheckpointError(f"checkpoint config is invalid: {exc}") from None


def _load_params(model, arrays, path):
    params = model.named_parameters()
    stored = {k[len("param/"):] for k in arrays if k.startswith("param/")}
    if stored != set(params):
        missing = sorted(set(params) - stored)
        extra = sorted(stored - set(params))
        raise CheckpointError(f"{path}: parameter set mismatch (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, p in params.items():
        value = arrays[f"param/{name}"]
        if value.shape != p.shape:
            raise CheckpointError(f"{path}: {name} has shape {value.shape}, model expects {p.shape}")
        p.data[...] = value


def load_model(path):
    """Rebuild the model from an archive; returns ``(model, TrainConfig)``."""
    header, arrays = read_archive(path)
    cfg = config_from_header(header)
    model = StyleTransferModel(cfg.net, np.random.default_rng(0))
    _load_params(model, arrays, path)
    return model, cfg


def load_trainer(path, dataset=None):
    """Restore a Trainer exactly as it was when saved."""
    from .training import Trainer

    header, arrays = read_archive(path)
    if "rng" not in header or "optim" not in header:
        raise CheckpointError(f"{path}: parameters-only archive cannot resume training")
    cfg = config_from_header(header)
    trainer = Trainer(cfg, dataset)
    _load_params(trainer.model, arrays, path)
    for role, opt in trainer.optimizers.items():
        try:
            state = dict(header["optim"][role])
            state["m"] = {n: arrays[f"adam/{role}/m/{n}"] for n in opt.params}
            state["v"] = {n: arrays[f"adam/{role}/v/{n}"] for n in opt.params}
            opt.load_state_dict(state)
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"{path}: optimizer state for {role} is invalid ({exc})") from None
    for name, rng in trainer.rngs.items():
        rng.bit_generator.state = header["rng"][name]
    trainer.step = int(header["step"])
    return trainer
