import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import naive_forward

from jofsto.exceptions import ConfigError
from jofsto.masking import select_drop_set
from jofsto.nn import DenseNet
from jofsto.scoring import (
    ScoreState,
    accumulate_mean,
    anneal_alpha_s,
    blend,
    population_scores,
    sample_scores,
    update_global,
)


def test_zero_scoring_net_scores_one():
    net = DenseNet.zeros([4, 8, 4], "two_sigmoid")
    np.testing.assert_array_equal(sample_scores(net, np.ones((3, 4))), np.ones((3, 4)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_scores_in_open_interval(seed):
    rng = np.random.default_rng(seed)
    net = DenseNet.initialize([6, 10, 6], "two_sigmoid", rng)
    s = sample_scores(net, rng.normal(scale=5, size=(20, 6)))
    assert np.all(s > 0) and np.all(s < 2)


def test_scores_match_forward_oracle(rng):
    net = DenseNet.initialize([5, 7, 5], "two_sigmoid", rng, dtype=np.float64)
    x = rng.normal(size=(4, 5))
    np.testing.assert_allclose(sample_scores(net, x),
                               naive_forward(net.weights, net.biases, x, "two_sigmoid"),
                               rtol=1e-12)


def test_scoring_width_mismatch():
    with pytest.raises(ConfigError):
        sample_scores(DenseNet.zeros([4, 3], "two_sigmoid"), np.ones((1, 4)))
    with pytest.raises(ConfigError):
        sample_scores(DenseNet.zeros([4, 4], "identity"), np.ones((1, 4)))


def test_blend_endpoints(rng):
    s_p = rng.uniform(0, 2, size=(5, 3))
    s_bar = rng.uniform(0, 2, size=3)
    np.testing.assert_array_equal(blend(ScoreState(s_bar, 1.0, s_p)), s_p)
    out = blend(ScoreState(s_bar, 0.0, s_p))
    for row in np.broadcast_to(out, s_p.shape):
        np.testing.assert_array_equal(row, s_bar)


def test_blend_half():
    out = blend(ScoreState(np.array([0.0, 2.0]), 0.5, np.array([[2.0, 0.0]])))
    np.testing.assert_array_equal(out, [[1.0, 1.0]])


def test_alpha_s_bounds():
    with pytest.raises(ValueError):
        ScoreState(np.ones(2), alpha_s=1.5)


def test_accumulate_mean_two_batches():
    state = ScoreState.initial(2)
    accumulate_mean(state, np.array([[1.0, 3.0]]))
    accumulate_mean(state, np.array([[3.0, 1.0]]))
    np.testing.assert_array_equal(state.running_mean.mean(), [2.0, 2.0])
    assert state.running_mean.count == 2


def test_accumulate_single_sample():
    state = accumulate_mean(ScoreState.initial(3), np.array([[0.2, 0.4, 1.9]]))
    np.testing.assert_array_equal(state.running_mean.mean(), [0.2, 0.4, 1.9])


def test_accumulate_matches_whole_matrix_mean(rng):
    batches = [rng.uniform(0, 2, size=(rng.integers(1, 50), 7)) for _ in range(10)]
    state = ScoreState.initial(7)
    for b in batches:
        accumulate_mean(state, b)
    np.testing.assert_allclose(state.running_mean.mean(), np.vstack(batches).mean(axis=0),
                               atol=1e-10, rtol=0)
    state.running_mean.reset()
    assert state.running_mean.count == 0


def test_population_scores_streams_exact_mean(rng):
    net = DenseNet.initialize([6, 8, 6], "two_sigmoid", rng)
    x = rng.normal(size=(1001, 6)).astype(np.float32)
    np.testing.assert_allclose(population_scores(net, x, batch_size=97),
                               sample_scores(net, x).astype(np.float64).mean(axis=0),
                               atol=1e-10, rtol=0)


def test_update_global():
    v = np.array([0.3, 1.7])
    np.testing.assert_array_equal(update_global(v, v), v)
    np.testing.assert_array_equal(update_global([0, 2], [2, 0]), [1, 1])


def test_anneal_alpha_s_values():
    assert anneal_alpha_s(0.5, 0, 10) == pytest.approx(0.3)
    assert anneal_alpha_s(0.1, 0, 10) == 0.0
    a = 0.5
    seq = []
    for _ in range(3):
        a = anneal_alpha_s(a, 25, 35)
        seq.append(a)
    assert seq[-1] == 0.0 and seq[1] > 0
    with pytest.raises(ConfigError):
        anneal_alpha_s(0.5, 3, 3)


@given(st.floats(0, 1), st.integers(1, 50))
def test_anneal_alpha_s_monotone(alpha, gap):
    out = anneal_alpha_s(alpha, 0, gap)
    assert 0 <= out <= alpha
    if alpha <= 2 / gap:
        assert out == 0


@given(st.lists(st.floats(0.01, 2), min_size=4, max_size=30), st.floats(0.01, 100),
       st.integers(0, 3))
def test_selection_depends_only_on_ranking(scores, scale, k):
    s = np.array(scores)
    m = np.ones(s.size)
    k = min(k, s.size)
    np.testing.assert_array_equal(select_drop_set(s, m, k), select_drop_set(s * scale, m, k))
