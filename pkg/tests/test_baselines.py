import numpy as np
import pytest

from jofsto import data
from jofsto.baselines import random_select, train_baseline
from jofsto.exceptions import ConfigError
from jofsto.nn import checkpoint_bytes
from jofsto.trainer import NetConfig, Schedule, infer

SCHED = Schedule([16], patience=4, batch_size=400, learning_rate=1e-3, max_epochs=40)


def test_random_select_edges():
    assert random_select(7, 7, seed=0).tolist() == list(range(7))
    one = random_select(7, 1, seed=3)
    assert one.shape == (1,) and 0 <= one[0] < 7
    assert random_select(10, 4, seed=5).tolist() == random_select(10, 4, seed=5).tolist()
    picks = random_select(50, 20, seed=1)
    assert len(set(picks.tolist())) == 20 and picks.tolist() == sorted(picks.tolist())
    for C in (0, 8):
        with pytest.raises(ConfigError):
            random_select(7, C, seed=0)


def test_random_select_is_uniform():
    counts = np.zeros(4)
    draws = 100_000
    for seed in range(draws):
        counts[random_select(4, 2, seed)] += 1
    np.testing.assert_allclose(counts / draws, 0.5, atol=0.01)


def test_baseline_is_deterministic(small_dataset):
    a = train_baseline(small_dataset, [0, 3, 5], SCHED, NetConfig(1, 16), seed=2)
    b = train_baseline(small_dataset, [0, 3, 5], SCHED, NetConfig(1, 16), seed=2)
    assert checkpoint_bytes(a.task_checkpoint) == checkpoint_bytes(b.task_checkpoint)
    assert a.test_mse == b.test_mse
    assert a.selected.tolist() == [0, 3, 5] and a.artifact.C == 3


def test_baseline_with_all_channels_is_plain_training(small_dataset):
    res = train_baseline(small_dataset, range(16), SCHED, NetConfig(1, 16), seed=0)
    X, Y = small_dataset.part("test")
    from jofsto.nn import forward

    plain = forward(res.task_checkpoint, X.astype(np.float32))[0]
    np.testing.assert_array_equal(infer(res.artifact, X), plain)
    assert res.test_mse == pytest.approx(float(np.mean((plain.astype(np.float64) - Y) ** 2)))


def test_invalid_selection_rejected(small_dataset):
    for bad in ([], [16], [-1, 2]):
        with pytest.raises(ConfigError):
            train_baseline(small_dataset, bad, SCHED)


def test_informative_channels_beat_noise_channels():
    scheme = data.AcquisitionScheme.default(4)
    ds = data.simulate(scheme, 3000, seed=11)
    ds = data.append_noise_channels(ds, 4, seed=12)
    ds = data.normalize(data.split(ds, (2400, 300, 300), seed=11))
    sched = Schedule([8], patience=5, batch_size=300, learning_rate=1e-3, max_epochs=60)
    for seed in range(3):
        good = train_baseline(ds, [0, 1, 2, 3], sched, NetConfig(1, 32), seed=seed)
        noise = train_baseline(ds, [4, 5, 6, 7], sched, NetConfig(1, 32), seed=seed)
        assert good.test_mse < noise.test_mse
