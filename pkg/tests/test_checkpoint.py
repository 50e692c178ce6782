import json
import zipfile

import numpy as np
import pytest

from peerstyle.checkpoint import (CheckpointError, load_model, load_trainer, read_archive, save_checkpoint,
                                  save_model)
from peerstyle.training import Trainer

from test_training import tiny_cfg


@pytest.fixture
def trained(tmp_path):
    trainer = Trainer(tiny_cfg())
    trainer.run(2)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, trainer)
    return trainer, path


def test_resume_is_bit_exact(trained):
    trainer, path = trained
    resumed = load_trainer(path)
    assert resumed.step == 2 and resumed.cfg == trainer.cfg
    assert resumed.run(3) == trainer.run(3)
    for name, p in trainer.model.named_parameters().items():
        np.testing.assert_array_equal(p.data, resumed.model.named_parameters()[name].data)


def test_model_round_trip(trained, tmp_path):
    trainer, path = trained
    model, cfg = load_model(path)
    assert cfg == trainer.cfg
    x = np.random.default_rng(0).uniform(-1, 1, size=(1, 3, 16, 16))
    np.testing.assert_array_equal(model.stylize(x, x[:, ::-1]), trainer.model.stylize(x, x[:, ::-1]))
    lite = tmp_path / "model.npz"
    save_model(lite, trainer.model, trainer.cfg)
    assert load_model(lite)[1] == trainer.cfg
    with pytest.raises(CheckpointError, match="cannot resume"):
        load_trainer(lite)


def test_corrupt_and_missing_files(tmp_path, trained):
    _, path = trained
    bad = tmp_path / "bad.npz"
    bad.write_bytes(path.read_bytes()[:200])
    with pytest.raises(CheckpointError, match="corrupt"):
        read_archive(bad)
    with pytest.raises(CheckpointError, match="no such"):
        read_archive(tmp_path / "missing.npz")
    noheader = tmp_path / "noheader.npz"
    np.savez(noheader, x=np.zeros(2))
    with pytest.raises(CheckpointError, match="missing header"):
        read_archive(noheader)


def rewrite_header(src, dst, **changes):
    with np.load(src) as a:
        arrays = {k: a[k] for k in a.files}
    header = json.loads(arrays["__header__"].tobytes())
    header.update(changes)
    arrays["__header__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    np.savez(dst, **arrays)


def test_version_mismatch_refused(trained, tmp_path):
    _, path = trained
    rewrite_header(path, tmp_path / "v2.npz", version=2)
    with pytest.raises(CheckpointError, match="version 2 is not supported"):
        load_trainer(tmp_path / "v2.npz")
    rewrite_header(path, tmp_path / "other.npz", format="something-else")
    with pytest.raises(CheckpointError, match="unknown format"):
        load_model(tmp_path / "other.npz")


def test_parameter_mismatch(trained, tmp_path):
    _, path = trained
    with np.load(path) as a:
        arrays = {k: a[k] for k in a.files if not k.startswith("param/encoder.")}
    np.savez(tmp_path / "cut.npz", **arrays)
    with pytest.raises(CheckpointError, match="parameter set mismatch"):
        load_model(tmp_path / "cut.npz")


def test_archive_is_plain_npz(trained):
    _, path = trained
    with zipfile.ZipFile(path) as z:
        names = z.namelist()
    assert "__header__.npy" in names
    assert any(n.startswith("adam/main/m/") for n in names)
