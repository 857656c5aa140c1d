import numpy as np
import pytest
from oracles import (
    adam_single_step,
    brute_early_stop_epoch,
    central_differences,
    composite_loss,
    max_relative_error,
)

import jofsto.trainer as tr
from jofsto import data, runs
from jofsto.baselines import train_baseline
from jofsto.exceptions import ConfigError, TrainingAbort
from jofsto.masking import MaskState
from jofsto.nn import AdamState, DenseNet, checkpoint_bytes, forward
from jofsto.scoring import ScoreState
from jofsto.trainer import (
    Batch,
    Networks,
    NetConfig,
    Schedule,
    composite_gradients,
    early_stop,
    fpbp,
    infer,
    run_step_one,
    run_step_t,
    train,
)


def _nets(C, M, hidden=5, seed=0, dtype=np.float32, lr=1e-3):
    rng = np.random.default_rng(seed)
    scoring = DenseNet.initialize([C, hidden, C], "two_sigmoid", rng, dtype=dtype)
    task = DenseNet.initialize([C, hidden, M], "identity", rng, dtype=dtype)
    return Networks(task, AdamState.for_net(task, lr), scoring, AdamState.for_net(scoring, lr))


def _params(net):
    return [p.copy() for p in net.parameters()]


def test_alpha_zero_blocks_scoring_and_matches_plain_task(rng):
    nets = _nets(3, 2)
    x = rng.normal(size=(8, 3)).astype(np.float32)
    expected = forward(nets.task, x)[0]
    before = _params(nets.scoring)
    opt_before = nets.scoring_opt.step_count
    mask = MaskState.full(np.zeros(3))
    _, y_hat = fpbp(Batch(x, rng.normal(size=(8, 2))), nets, ScoreState(np.ones(3), 0.0), mask)
    assert y_hat.tobytes() == expected.tobytes()
    for a, b in zip(before, nets.scoring.parameters()):
        assert a.tobytes() == b.tobytes()
    assert nets.scoring_opt.step_count == opt_before


def test_perfect_prediction_changes_nothing(rng):
    nets = _nets(3, 2)
    nets.task = DenseNet.zeros([3, 4, 2])
    nets.task_opt = AdamState.for_net(nets.task)
    before = _params(nets.task) + _params(nets.scoring)
    loss, _ = fpbp(Batch(rng.normal(size=(5, 3)), np.zeros((5, 2))), nets,
                   ScoreState(np.ones(3), 0.5), MaskState.full(np.zeros(3)))
    assert loss == 0
    for a, b in zip(before, _params(nets.task) + _params(nets.scoring)):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("alpha_s", [1.0, 0.5, 0.3])
def test_composite_gradients_and_step_match_finite_differences(rng, alpha_s):
    C, M = 2, 2
    nets = _nets(C, M, hidden=4, seed=7, dtype=np.float64, lr=1e-3)
    x_bar = rng.normal(size=(6, C))
    y = rng.normal(size=(6, M))
    s_bar = np.array([0.7, 1.3])
    m = np.array([1.0, 0.6])
    fill = np.array([0.2, -0.4])

    def loss():
        return composite_loss(nets.scoring, nets.task, x_bar, y, alpha_s, s_bar, m, fill,
                              naive=True)

    num_s = central_differences(loss, nets.scoring.parameters())
    num_t = central_differences(loss, nets.task.parameters())
    state = ScoreState(s_bar, alpha_s)
    mask = MaskState(m, np.ones(C), np.array([1.0, 0.0]), fill)
    value, _, t_grads, s_grads = composite_gradients(Batch(x_bar, y), nets, state, mask)
    assert value == pytest.approx(loss(), rel=1e-12)
    assert max_relative_error(t_grads.flat(), num_t) < 1e-4
    assert max_relative_error(s_grads.flat(), num_s) < 1e-4

    before_s, before_t = _params(nets.scoring), _params(nets.task)
    fpbp(Batch(x_bar, y), nets, ScoreState(s_bar, alpha_s), mask)
    for p0, g, p1 in zip(before_s + before_t, num_s + num_t,
                         nets.scoring.parameters() + nets.task.parameters()):
        expected = adam_single_step(p0, g, 1e-3)
        # where the gradient is tiny, Adam's normalized step is ill-conditioned in g
        ok = np.abs(g) > 1e-6
        np.testing.assert_allclose(p1[ok], expected[ok], rtol=0, atol=1e-7)


def test_non_finite_loss_aborts_with_location(small_dataset):
    ds = small_dataset
    bad = data.Dataset(ds.X_bar, np.full_like(ds.Y, np.nan), ds.train, ds.val, ds.test,
                       ds.normalizers, ds.fill)
    sched = Schedule([16], E1=1, E2=2, E3=3, batch_size=400, max_epochs=5)
    with pytest.raises(TrainingAbort, match=r"step 1, epoch 1, batch 0"):
        train(bad, sched, NetConfig(1, 8))


def _quick_schedule(C_list, **kw):
    base = dict(E1=2, E2=4, E3=6, patience=2, batch_size=400, learning_rate=1e-3, max_epochs=12)
    base.update(kw)
    return Schedule(C_list, **base)


def test_step_one_full_mask_and_score_range(small_dataset):
    nets = Networks.build(16, 3, NetConfig(1, 16), 1e-3, seed=0)
    art = run_step_one(small_dataset, nets, _quick_schedule([16]))
    assert art.mask.sum() == 16 and art.C == 16
    assert np.all(art.score > 0) and np.all(art.score < 2)


def test_step_one_with_frozen_zero_scoring_net(small_dataset):
    nets = Networks.build(16, 3, NetConfig(1, 16), 1e-3, seed=0)
    nets.scoring = DenseNet.zeros([16, 16, 16], "two_sigmoid")
    nets.scoring_opt = AdamState.for_net(nets.scoring, learning_rate=0.0)
    art = run_step_one(small_dataset, nets, _quick_schedule([16]))
    np.testing.assert_array_equal(art.score, np.ones(16))


def test_degenerate_step_keeps_mask(small_dataset):
    sched = _quick_schedule([16, 8])
    nets = Networks.build(16, 3, NetConfig(1, 16), 1e-3, seed=0)
    first = run_step_one(small_dataset, nets, sched)
    same = run_step_t(2, small_dataset, nets, sched, first, C_t=16)
    assert same.drop == []
    np.testing.assert_array_equal(same.mask, first.mask)
    assert same.epochs > sched.E3


def test_alpha_trajectory_and_warm_start(small_dataset):
    sched = _quick_schedule([16, 8], E1=2, E2=12, E3=14, max_epochs=20)
    nets = Networks.build(16, 3, NetConfig(1, 16), 1e-3, seed=0)
    first = run_step_one(small_dataset, nets, sched)
    assert checkpoint_bytes(nets.task) == checkpoint_bytes(first.task_net)
    second = run_step_t(2, small_dataset, nets, sched, first)
    alphas = [row["alpha_s"] for row in second.trace]
    np.testing.assert_allclose(alphas[:5], [0.5, 0.5, 0.3, 0.1, 0.0], atol=1e-12)
    assert all(a == 0.0 for a in alphas[4:])
    alpha_m = [row["alpha_m"] for row in second.trace]
    assert alpha_m[12:14] == [0.5, 0.0]
    assert second.mask.sum() == 8


def test_score_update_averages_with_previous(small_dataset):
    sched = _quick_schedule([16, 12], E1=3, E2=5, E3=7)
    nets = Networks.build(16, 3, NetConfig(1, 16), 1e-3, seed=1)
    first = run_step_one(small_dataset, nets, sched)
    captured = {}
    original = tr._Loop.mean_scores

    def spy(loop):
        captured["s_p"] = original(loop)
        return captured["s_p"]

    tr._Loop.mean_scores = spy
    try:
        second = run_step_t(2, small_dataset, nets, sched, first)
    finally:
        tr._Loop.mean_scores = original
    np.testing.assert_array_equal(second.score, 0.5 * (first.score + captured["s_p"]))


def test_single_step_training_is_plain_supervised(small_dataset):
    arts = train(small_dataset, _quick_schedule([16]), NetConfig(1, 16))
    assert len(arts) == 1 and arts[0].mask.sum() == 16


def test_cardinalities_nest_and_runs_are_reproducible(small_dataset, tmp_path):
    sched = _quick_schedule([16, 8, 4, 2])
    a = train(small_dataset, sched, NetConfig(1, 16), run_dir=tmp_path / "a")
    train(small_dataset, sched, NetConfig(1, 16), run_dir=tmp_path / "b")
    assert [int(x.mask.sum()) for x in a] == [16, 8, 4, 2]
    for prev, nxt in zip(a, a[1:]):
        assert set(nxt.selected) <= set(prev.selected)
    for t in range(1, 5):
        for name in ("mask.txt", "score.txt", "task.jfnn"):
            assert (runs.step_dir(tmp_path / "a", t) / name).read_bytes() == \
                (runs.step_dir(tmp_path / "b", t) / name).read_bytes()


def test_schedule_validation():
    with pytest.raises(ConfigError):
        Schedule([16, 16]).validate(16)
    with pytest.raises(ConfigError):
        Schedule([16, 8]).validate(12)
    with pytest.raises(ConfigError):
        Schedule([16, 8], E1=5, E2=5, E3=6).validate(16)
    with pytest.raises(ConfigError):
        Schedule([16, 8], E1=0).validate(16)
    s = Schedule([220, 110, 55, 28, 14])
    assert (s.E1, s.E2, s.E3, s.batch_size, s.learning_rate) == (25, 35, 45, 1500, 1e-4)


def test_infer_ignores_masked_out_channels(small_dataset):
    art = train(small_dataset, _quick_schedule([16, 8]), NetConfig(1, 16))[-1]
    X, _ = small_dataset.part("test")
    filled = np.where(art.mask == 1, X, art.fill)
    garbage = np.where(art.mask == 1, X, 1e6)
    assert infer(art, filled).tobytes() == infer(art, garbage).tobytes()
    with pytest.raises(ValueError):
        infer(art, X[:, :5])


def test_infer_with_full_mask_and_unit_score_is_task_net(rng):
    task = DenseNet.initialize([4, 6, 2], rng=rng)
    from jofsto.trainer import StepArtifact

    art = StepArtifact(1, 4, np.ones(4), np.ones(4), task, np.zeros(4))
    x = rng.normal(size=(9, 4)).astype(np.float32)
    np.testing.assert_array_equal(infer(art, x), forward(task, x)[0])


def test_infer_reproduces_logged_validation_loss(small_dataset):
    arts = train(small_dataset, _quick_schedule([16, 8]), NetConfig(1, 16))
    X, Y = small_dataset.part("val")
    last = arts[-1]
    loss = float(np.mean((infer(last, X).astype(np.float64) - Y) ** 2))
    assert abs(loss - last.val_loss) < 1e-6
    best = min(v for e, v in last.val_history if e > 6)
    assert last.val_loss == best


def test_early_stop_cases():
    assert not any(early_stop(list(range(10, 10 - n, -1)), 3) for n in range(1, 11))
    plateau = [1.0] * 10
    stops = [n for n in range(1, 11) if early_stop(plateau[:n], 5)]
    assert stops[0] == 6
    with pytest.raises(ValueError):
        early_stop([], 3)


def test_early_stop_matches_scan_oracle(rng):
    for _ in range(50):
        losses = list(np.round(rng.normal(size=40).cumsum() * 0.1 + 5, 2))
        patience = int(rng.integers(1, 8))
        first = next((n for n in range(1, 41) if early_stop(losses[:n], patience)), None)
        assert first == brute_early_stop_epoch(losses, patience)


def test_two_noise_channels_are_dropped():
    scheme = data.AcquisitionScheme(np.array([[0.3], [2.0]]))
    ds = data.simulate(scheme, 3000, snr=100, seed=5)
    ds = data.append_noise_channels(ds, 2, seed=6)
    ds = data.normalize(data.split(ds, (2400, 300, 300), seed=5))
    sched = Schedule([4, 2], E1=10, E2=15, E3=20, patience=5, batch_size=300,
                     learning_rate=1e-3, seed=0, max_epochs=60)
    arts = train(ds, sched, NetConfig(2, 32))
    assert arts[-1].selected.tolist() == [0, 1]
    # retraining oracle: every 2-subset trained from scratch, best on validation
    pairs = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    losses = {p: train_baseline(ds, list(p), sched, NetConfig(2, 32)).artifact.val_loss
              for p in pairs}
    assert min(losses, key=losses.get) == (0, 1)
