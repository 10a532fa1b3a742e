import dataclasses

import numpy as np
import pytest
from scipy import stats

from axialvc.errors import CheckpointError, ConfigError, NonFiniteError
from axialvc.networks import ModelConfig
from axialvc.training import (
    FORMAT_VERSION,
    MAGIC,
    CorpusDataset,
    TrainConfig,
    TrainState,
    adam_step,
    checkpoint_bytes,
    load_checkpoint,
    lr_schedule,
    sample_batch,
    save_checkpoint,
    steps_per_epoch,
    train,
    train_step,
)

MODEL = ModelConfig(bins=9, gen_blocks=2, temporal_kernel=5, disc_blocks=2, disc_channels=4, disc_kernel=3)
TRAIN = TrainConfig(batch_size=2, crop_frames=8, lr=1e-3, seed=3)


def corpus(seed: int, n: int = 3, frames: int = 12) -> CorpusDataset:
    rng = np.random.default_rng(seed)
    return CorpusDataset([rng.uniform(0, 1, (9, frames)).astype(np.float32) for _ in range(n)], label=str(seed))


# ---------------------------------------------------------------------- Adam


def test_adam_first_step_value():
    p, m, v = np.array([1.0]), np.zeros(1), np.zeros(1)
    adam_step(p, np.array([0.3]), m, v, 1, 2e-4)
    # bias correction makes the first step lr * g/|g| up to eps
    assert p[0] == pytest.approx(1 - 2e-4 * 0.3 / (0.3 + 1e-8), abs=1e-15)
    q = np.array([1.0])
    adam_step(q, np.array([1.0]), np.zeros(1), np.zeros(1), 1, 2e-4)
    assert q[0] == pytest.approx(1 - 2e-4 / (1 + 1e-8), abs=1e-15)


def test_adam_zero_gradient_is_a_no_op():
    p, m, v = np.array([0.5, -2.0]), np.zeros(2), np.zeros(2)
    for t in range(1, 6):
        adam_step(p, np.zeros(2), m, v, t, 1e-2)
    np.testing.assert_array_equal(p, [0.5, -2.0])


def test_adam_constant_gradient_moves_lr_per_step():
    p, m, v = np.zeros(3), np.zeros(3), np.zeros(3)
    g = np.array([4.0, -0.01, 1e3])
    for t in range(1, 11):
        adam_step(p, g, m, v, t, 1e-3)
    np.testing.assert_allclose(p, -10 * 1e-3 * np.sign(g), rtol=1e-5)


def test_lr_schedule():
    assert lr_schedule(0) == 2e-4
    assert lr_schedule(49) == 2e-4
    assert lr_schedule(50) == pytest.approx(2e-5)
    assert lr_schedule(150) == pytest.approx(2e-7)
    vals = [lr_schedule(e) for e in range(300)]
    drops = [e for e in range(1, 300) if vals[e] != vals[e - 1]]
    assert drops == [50, 100, 150, 200, 250]
    with pytest.raises(ValueError):
        lr_schedule(-1)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(max_steps=-1)


# ------------------------------------------------------------------ batching


def test_crop_of_exact_length_is_whole_utterance():
    ds = corpus(0, n=1, frames=128)
    xb, yb = sample_batch(ds, ds, 4, 128, np.random.default_rng(0))
    assert xb.shape == (4, 9, 128)
    for b in range(4):
        np.testing.assert_array_equal(xb[b], ds.items[0])


def test_crop_starts_are_uniform():
    frames, crop = 256, 128
    # each column holds its own index so the crop start is readable from the batch
    item = np.tile(np.arange(frames, dtype=np.float32), (1, 1))
    ds = CorpusDataset([item])
    xb, _ = sample_batch(ds, ds, 100_000, crop, np.random.default_rng(1))
    starts = xb[:, 0, 0].astype(int)
    counts = np.bincount(starts, minlength=frames - crop + 1)
    assert len(counts) == frames - crop + 1
    assert stats.chisquare(counts).pvalue > 1e-3


def test_sampling_is_deterministic_and_rejects_short_items():
    a, b = corpus(1), corpus(2)
    one = sample_batch(a, b, 3, 8, np.random.default_rng(9))
    two = sample_batch(a, b, 3, 8, np.random.default_rng(9))
    for u, v in zip(one, two):
        np.testing.assert_array_equal(u, v)
    with pytest.raises(ValueError, match="frames"):
        sample_batch(a, b, 1, 13, np.random.default_rng(0))
    assert len(corpus(1).usable(13)) == 0
    assert steps_per_epoch(corpus(1, 5), corpus(2, 7), 2) == 3


# ---------------------------------------------------------------- train step


def _batch(seed: int = 0):
    return sample_batch(corpus(1), corpus(2), TRAIN.batch_size, TRAIN.crop_frames, np.random.default_rng(seed))


def _snapshot(state):
    return {f"{n}/{k}": t.data.copy() for n, net in state.networks().items() for k, t in net.params.items()}


def test_train_step_is_deterministic():
    reports = []
    for _ in range(2):
        s = TrainState.create(MODEL, TRAIN)
        reports.append([train_step(s, _batch(i)) for i in range(3)])
    assert reports[0] == reports[1]
    assert all(np.isfinite(dataclasses.astuple(r)).all() for r in reports[0])


def test_train_step_updates_every_network_and_stays_finite():
    s = TrainState.create(MODEL, TRAIN)
    before = _snapshot(s)
    train_step(s, _batch())
    after = _snapshot(s)
    for net in ("g_xy", "g_yx", "d_x", "d_y"):
        assert any(not np.array_equal(before[k], after[k]) for k in before if k.startswith(net)), net
    assert all(np.isfinite(v).all() for v in after.values())
    assert all(p.grad is None for net in s.networks().values() for p in net.params.values())
    assert s.step == 1 and all(o.t == 1 for o in s.opt.values())


def test_zero_lr_changes_nothing():
    s = TrainState.create(MODEL, TRAIN)
    before = _snapshot(s)
    train_step(s, _batch(), lr=0.0)
    for k, v in _snapshot(s).items():
        np.testing.assert_array_equal(v, before[k])


def test_max_steps_caps_training():
    s = TrainState.create(MODEL, dataclasses.replace(TRAIN, max_steps=3))
    reports = train(s, corpus(1), corpus(2), epochs=10)
    assert [r.step for r in reports] == [1, 2, 3]


# --------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    s = TrainState.create(MODEL, TRAIN)
    train_step(s, _batch())
    save_checkpoint(s, tmp_path / "a.axck", {"note": "x"})
    loaded, extra = load_checkpoint(tmp_path / "a.axck")
    assert extra == {"note": "x"}
    assert checkpoint_bytes(loaded, extra) == (tmp_path / "a.axck").read_bytes()
    for k, v in _snapshot(s).items():
        np.testing.assert_array_equal(_snapshot(loaded)[k], v)


def test_resume_matches_uninterrupted_run(tmp_path):
    cfg = dataclasses.replace(TRAIN, max_steps=0)
    a, b = corpus(1), corpus(2)
    full = TrainState.create(MODEL, cfg)
    ref = train(full, a, b, epochs=4)

    half = TrainState.create(MODEL, cfg)
    first = train(half, a, b, epochs=2)
    save_checkpoint(half, tmp_path / "mid.axck")
    resumed, _ = load_checkpoint(tmp_path / "mid.axck")
    rest = train(resumed, a, b, epochs=4)
    assert first + rest == ref
    assert checkpoint_bytes(resumed) == checkpoint_bytes(full)


def test_checkpoint_corruption_is_detected(tmp_path):
    s = TrainState.create(MODEL, TRAIN)
    blob = checkpoint_bytes(s)
    p = tmp_path / "c.axck"
    p.write_bytes(blob[:-100])
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(p)
    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 0xFF
    p.write_bytes(bytes(flipped))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(p)
    p.write_bytes(b"nonsense")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(p)

    import hashlib
    import struct

    body = blob[:-32]
    body = MAGIC + struct.pack("<I", FORMAT_VERSION + 1) + body[len(MAGIC) + 4 :]
    p.write_bytes(body + hashlib.sha256(body).digest())
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(p)


def test_non_finite_loss_aborts_with_diagnostic(tmp_path):
    s = TrainState.create(MODEL, TRAIN)
    s.g_xy.params["prenet.weight"].data[0, 0, 0] = np.nan
    diag = tmp_path / "diag.axck"
    with pytest.raises(NonFiniteError):
        train(s, corpus(1), corpus(2), epochs=1, diagnostic_path=diag)
    loaded, _ = load_checkpoint(diag)
    assert np.isnan(loaded.g_xy.params["prenet.weight"].data[0, 0, 0])
