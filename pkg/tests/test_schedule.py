import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wildset.errors import InvalidArgumentError
from wildset.schedule import (
    ScheduleSpec,
    detection_lr,
    finetuning_presets,
    interpolate_length,
    load_presets,
    lr_at,
    plateaus,
    preset_schedule,
    scaled_lr,
)


@pytest.mark.parametrize("mb,lr", [(8064, 3.15), (256, 0.1), (3072, 1.2)])
def test_scaled_lr(mb, lr):
    assert scaled_lr(mb) == pytest.approx(lr, abs=1e-12)


def test_scaled_lr_rejects_zero():
    with pytest.raises(InvalidArgumentError):
        scaled_lr(0)


def test_lr_at_warmup_and_end():
    spec = ScheduleSpec(total_images=2.1e9, minibatch=8064, warmup_images=1e8, decay_factor=0.5, n_decays=20)
    assert lr_at(0, spec) == pytest.approx(0.1)
    assert lr_at(5e7, spec) == pytest.approx(0.1 + (3.15 - 0.1) / 2)
    assert lr_at(spec.total_images, spec) == pytest.approx(3.15 * 0.5**20)
    with pytest.raises(InvalidArgumentError):
        lr_at(-1, spec)
    with pytest.raises(InvalidArgumentError):
        lr_at(spec.total_images + 1, spec)


def test_in1k_epoch_31_drops_tenfold():
    spec = preset_schedule("in1k", 3072).spec
    size = spec.epoch_size
    assert lr_at(29.5 * size, spec) == pytest.approx(1.2)
    assert lr_at(30.5 * size, spec) == pytest.approx(0.12)  # epoch 31
    assert lr_at(95 * size, spec) == pytest.approx(1.2e-3)


@given(st.integers(0, 40), st.floats(0.1, 1.0), st.integers(1, 10_000))
def test_plateau_count_and_monotone(n_decays, factor, mb):
    spec = ScheduleSpec(total_images=1e6, minibatch=mb, warmup_images=0, decay_factor=factor, n_decays=n_decays)
    rows = plateaus(spec)
    assert len(rows) == n_decays + 1
    xs = np.linspace(0, 1e6, 257)
    lrs = [lr_at(x, spec) for x in xs]
    assert all(b <= a + 1e-15 for a, b in zip(lrs, lrs[1:]))
    if factor < 1:
        assert len(set(lrs)) == n_decays + 1


def test_schedule_validation():
    with pytest.raises(InvalidArgumentError):
        ScheduleSpec(total_images=0, minibatch=1)
    with pytest.raises(InvalidArgumentError):
        ScheduleSpec(total_images=10, minibatch=1, decay_factor=1.5)
    with pytest.raises(InvalidArgumentError):
        ScheduleSpec(total_images=10, minibatch=1, explicit_steps=[5, 6], epoch_size=1)


def test_interpolate_length_examples():
    ends = [(3.5e6, 300e6), (3.5e9, 7000e6)]
    assert interpolate_length(3.5e6, ends) == 300e6
    assert interpolate_length(3.5e9, ends) == 7000e6
    assert interpolate_length((3.5e6 + 3.5e9) / 2, ends) == pytest.approx(3650e6)
    assert interpolate_length(5, [(10, 7.0), (10, 7.0)]) == 7.0
    with pytest.warns(UserWarning, match="clamping"):
        assert interpolate_length(1e10, ends) == 7000e6
    assert interpolate_length(3.5e6 * 1000**0.5, ends, log=True) == pytest.approx(3650e6)


def test_presets_match_reference_rows():
    pre = load_presets()["pretraining"]
    assert pre["train-IN-1k"]["steps"] == [30, 30, 30, 10]
    assert pre["train-IN-5k"]["steps"] == [15, 15, 6, 2]
    row = pre["train-IG-940M-1.5k"]
    assert row["images"] == 1925e6 and row["n_decays"] == 20 and row["lr_decay"] == 0.5
    assert row["weight_decay"] == 1e-4


def test_ig_preset_uses_extremes():
    ps = preset_schedule("ig", 8064, dataset_size=940e6, hashtags="1.5k")
    assert ps.spec.total_images == 1925e6
    assert ps.spec.n_decays == 20 and ps.spec.decay_factor == 0.5
    assert ps.spec.peak_lr == pytest.approx(3.15)


def test_preset_errors():
    with pytest.raises(InvalidArgumentError):
        preset_schedule("in5k", 256)
    with pytest.raises(InvalidArgumentError):
        preset_schedule("nope", 256)


def test_finetune_and_detection_presets():
    rows = finetuning_presets(source="train-IG-940M-1.5k", target="train-IN-5k")
    assert rows and rows[0]["lr"] == 0.0025
    assert detection_lr("ResNeXt-101 32x16d", "IG-3.5B-17k") == 0.00075
    with pytest.raises(InvalidArgumentError):
        detection_lr("nope", "nope")
