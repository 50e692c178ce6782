import tracemalloc

import numpy as np
import pytest

from peerstyle import tensor as T
from peerstyle.config import TrainConfig
from peerstyle.data import Dataset, DatasetSpec, sample_batch
from peerstyle.model import GROUPS
from peerstyle.nn import NetConfig
from peerstyle.training import (LOG_FIELDS, CsvLog, NonFiniteLossError, Trainer, eval_style_separation,
                                lr_schedule, make_rngs, read_log, train_step)


def tiny_cfg(**kw):
    net = NetConfig.desk(base_width=4, content_channels=4, style_local_channels=4,
                         style_global_channels=4, n_resnet_blocks=1, k_neighbors=2)
    base = dict(net=net, data=DatasetSpec(crop_size=16), photos_per_epoch=8, epochs=4, decay_start_epoch=2)
    base.update(kw)
    return TrainConfig.desk(**base)


def snapshot(model):
    return {k: p.data.copy() for k, p in model.named_parameters().items()}


def test_lr_schedule_values():
    cfg = TrainConfig()
    assert lr_schedule(0, cfg) == 4e-4
    assert lr_schedule(50, cfg) == 4e-4
    assert lr_schedule(125, cfg) == pytest.approx(2e-4, abs=1e-18)
    assert lr_schedule(200, cfg) == 0.0


def test_lr_schedule_continuous_and_non_increasing():
    cfg = TrainConfig()
    values = [lr_schedule(e, cfg) for e in np.linspace(0, 200, 2001)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert max(abs(b - a) for a, b in zip(values, values[1:])) <= 4e-4 / 150 * 0.1 + 1e-18


def test_lr_schedule_without_decay_window():
    assert lr_schedule(3, TrainConfig(epochs=3, decay_start_epoch=3)) == 0.0


def test_rng_streams_independent():
    rngs = make_rngs(7)
    draws = {k: r.random(4) for k, r in rngs.items()}
    assert len({tuple(v) for v in draws.values()}) == len(draws)
    again = make_rngs(7)
    for k in draws:
        np.testing.assert_array_equal(again[k].random(4), draws[k])


def test_freeze_contract_per_substep():
    trainer = Trainer(tiny_cfg())
    model = trainer.model
    before = snapshot(model)
    changed = {}

    for role, opt in trainer.optimizers.items():
        def step(opt=opt, role=role, inner=opt.step):
            start = snapshot(model)
            inner()
            end = snapshot(model)
            changed[role] = {k for k in start if not np.array_equal(start[k], end[k])}
        opt.step = step

    trainer.train_step()
    assert list(changed) == ["aux", "main", "disc"]
    for role, names in changed.items():
        allowed = set(model.group(role))
        assert names <= allowed, f"{role} step touched {sorted(names - allowed)[:3]}"
        assert names, f"{role} step changed nothing"
    # gradients never reach another group's parameters
    after = snapshot(model)
    assert {k for k in before if not np.array_equal(before[k], after[k])} == set().union(*changed.values())


def test_parameter_groups():
    """TPFR heads train with the main decoder only, never in the auxiliary step."""
    assert set(GROUPS["main"]) == {"main_decoder", "tpfr"}
    assert set(GROUPS["aux"]) == {"encoder", "aux_decoder"}


def test_determinism_across_fresh_runs():
    rows = []
    for _ in range(2):
        trainer = Trainer(tiny_cfg(seed=3))
        rows.append([trainer.train_step()[1] for _ in range(3)])
    assert rows[0] == rows[1]
    other = Trainer(tiny_cfg(seed=4))
    assert other.train_step()[1] != rows[0][0]


def test_report_totals_and_grand_total():
    trainer = Trainer(tiny_cfg())
    report, row = trainer.train_step()
    assert report.check_totals(trainer.cfg.lambda_idt, 1e-10)
    assert abs(row["total"] - (report.disc_total + report.main_total + report.aux_total)) <= 1e-10
    assert report.first_nonfinite() is None
    assert row["step"] == 1 and row["epoch"] == 0 and row["lr"] == 4e-4


def test_epoch_accounting_and_run_cap():
    trainer = Trainer(tiny_cfg())  # 4 steps per epoch, 4 epochs
    assert trainer.steps_per_epoch == 4 and trainer.total_steps == 16
    rows = trainer.run(100)
    assert len(rows) == 16
    assert [r["epoch"] for r in rows] == [0] * 4 + [1] * 4 + [2] * 4 + [3] * 4
    assert rows[8]["lr"] == pytest.approx(4e-4) and rows[12]["lr"] == pytest.approx(2e-4)
    assert trainer.run(5) == []


def test_nonfinite_loss_names_component():
    trainer = Trainer(tiny_cfg())
    batch = sample_batch(trainer.dataset, 2, trainer.rngs["data"])
    batch.x_i = np.full_like(batch.x_i, np.nan)
    with pytest.raises(NonFiniteLossError) as info:
        train_step(batch, trainer.model, trainer.optimizers, trainer.rngs, trainer.cfg, step=5)
    assert info.value.component == "z_cont" and info.value.step == 5
    assert "z_cont" in str(info.value)


def test_nonfinite_in_discriminator_only(monkeypatch):
    trainer = Trainer(tiny_cfg())
    from peerstyle import losses

    def bad(real, fake):
        return T.Tensor(np.nan)
    monkeypatch.setattr(losses, "ragan_disc_loss", bad)
    with pytest.raises(NonFiniteLossError, match="disc_total"):
        trainer.train_step()


def test_csv_log_round_trip(tmp_path):
    trainer = Trainer(tiny_cfg())
    path = tmp_path / "log.csv"
    rows = trainer.run(3)
    with CsvLog(path) as log:
        for r in rows[:2]:
            log.write(r)
    with CsvLog(path, append=True) as log:
        log.write(rows[2])
    back = read_log(path)
    assert back == rows
    assert list(back[0]) == LOG_FIELDS


def traced_step(trainer):
    """(peak bytes allocated during one step, bytes still held after it)."""
    tracemalloc.start()
    trainer.train_step()
    held, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    return peak, held


@pytest.mark.slow
def test_step_memory_is_flat():
    trainer = Trainer(tiny_cfg(epochs=1000))
    trainer.run(9)
    peak10, held10 = traced_step(trainer)
    trainer.run(989)
    peak1000, held1000 = traced_step(trainer)
    assert trainer.step == 1000
    assert abs(peak1000 - peak10) <= 0.05 * peak10
    assert held1000 <= held10 * 1.05 + 64 * 1024


def test_style_separation_identical_images():
    class Same(Dataset):
        def sample_stack(self, class_id, n, rng):
            return np.zeros((n, 3, 16, 16)) + 0.1 * class_id

    trainer = Trainer(tiny_cfg())
    ds = Same(DatasetSpec(crop_size=16))
    intra, inter = eval_style_separation(trainer.model, ds, 3, classes=[1, 2])
    assert intra == 0.0 and inter > 0.0


def test_style_separation_untrained_ratio():
    cfg = TrainConfig.desk()
    trainer = Trainer(cfg)
    intra, inter = eval_style_separation(trainer.model, trainer.dataset, 6, classes=[1, 2, 3])
    assert 0.5 <= inter / intra <= 2.0


def test_train_config_validation():
    from peerstyle.config import ConfigError
    with pytest.raises(ConfigError):
        TrainConfig(decay_start_epoch=300)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.batch_size, cfg.epochs, cfg.decay_start_epoch) == (4e-4, 2, 200, 50)
    assert (cfg.lambda_idt, cfg.margin_mu, cfg.photos_per_epoch) == (25.0, 1.0, 6144)
