import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scommer.dropout import (
    ActivityState,
    hetero_mask,
    hetero_masks,
    init_hetero,
    record_activity,
    retain_count,
    row_available,
    semantic_mask,
    update_hetero,
    update_semantic,
)
from scommer.errors import ConfigError

import oracles


def test_init_hetero_ten_units_at_0_8_keeps_nine():
    p = init_hetero(10, 0.8, np.random.default_rng(0))
    assert p.sum() == 9 and set(np.unique(p)) == {0.0, 1.0}


def test_init_hetero_clamps_to_all_units():
    assert np.array_equal(init_hetero(7, 1.0, np.random.default_rng(0)), np.ones(7))


def test_init_hetero_subset_is_uniform():
    rng = np.random.default_rng(1)
    freq = np.mean([init_hetero(10, 0.5, rng) for _ in range(20000)], axis=0)
    # ceil(5.5) = 6 of 10 kept
    np.testing.assert_allclose(freq, 0.6, atol=4 * math.sqrt(0.24 / 20000))


@pytest.mark.parametrize("ratio,n,want", [(0.8, 10, 9), (0.5, 32, 18), (1.0, 5, 5), (0.9, 16, 16), (0.25, 4, 2)])
def test_retain_count(ratio, n, want):
    assert retain_count(ratio, n) == want


def test_most_active_unit_heterogeneous_value():
    p = update_hetero(np.array([10, 4, 0]), 0.5)
    assert abs(p[0] - 0.6065306597126334) < 1e-15
    assert p[2] == 1.0


def test_semantic_row_max_values():
    assert abs(update_semantic(np.array([[5, 1]]), 2.0)[0, 0] - 0.8646647167633873) < 1e-15
    assert abs(update_semantic(np.array([[5, 1]]), 3.0)[0, 0] - 0.950212931632136) < 1e-15


def test_formula_oracles_random_inputs():
    rng = np.random.default_rng(4)
    for _ in range(300):
        counts = rng.integers(0, 300, size=(4, 9))
        pi = float(rng.uniform(0, 4))
        got_h = update_hetero(counts[0], pi)
        for g, w in zip(got_h, oracles.hetero(counts[0].tolist(), pi)):
            assert oracles.rel_err(g, w) <= 1e-12
        got_s = update_semantic(counts, pi)
        for grow, wrow in zip(got_s, oracles.semantic(counts.tolist(), pi)):
            for g, w in zip(grow, wrow):
                assert oracles.rel_err(g, w) <= 1e-12


def test_zero_counts_contracts():
    assert np.array_equal(update_hetero(np.zeros(4), 0.5), np.ones(4))
    p = update_semantic(np.array([[0, 0], [3, 1]]), 2.0)
    assert np.array_equal(p[0], [0.0, 0.0]) and not row_available(p[0]) and row_available(p[1])


def test_pi_zero_behaviour():
    assert np.array_equal(update_hetero(np.array([3, 2]), 0.0), np.ones(2))
    assert np.array_equal(update_semantic(np.array([[3, 2]]), 0.0), np.zeros((1, 2)))


def test_negative_pi_rejected():
    with pytest.raises(ConfigError):
        update_hetero(np.ones(3), -0.1)
    with pytest.raises(ConfigError):
        update_semantic(np.ones((1, 3)), -1.0)


@settings(max_examples=100, deadline=None)
@given(counts=st.lists(st.integers(0, 1000), min_size=2, max_size=20), pi=st.floats(0.01, 5))
def test_heterogeneous_monotone_decreasing(counts, pi):
    p = update_hetero(np.array(counts), pi)
    order = np.argsort(counts, kind="stable")
    assert np.all(np.diff(p[order]) <= 0)
    assert np.all((p > 0) & (p <= 1))


@settings(max_examples=100, deadline=None)
@given(row=st.lists(st.integers(0, 1000), min_size=2, max_size=20), pi=st.floats(0.01, 5))
def test_semantic_monotone_and_argmax_aligned(row, pi):
    p = update_semantic(np.array([row]), pi)[0]
    order = np.argsort(row, kind="stable")
    assert np.all(np.diff(p[order]) >= 0)
    assert np.all((p >= 0) & (p < 1))
    if max(row) > 0:
        assert p[int(np.argmax(row))] == p.max()


def test_hetero_mask_size_and_zero_units():
    rng = np.random.default_rng(0)
    p = np.array([1.0, 0.5, 0.0, 0.2, 0.9, 0.3, 0.7, 0.1, 0.4, 0.6])
    for _ in range(100):
        m = hetero_mask(p, 0.5, rng)
        assert m.sum() == 6 and m[2] == 0


def test_hetero_mask_short_when_too_few_positive():
    p = np.array([1.0, 0.0, 0.0, 0.5])
    m = hetero_mask(p, 0.8, np.random.default_rng(0))
    assert m.tolist() == [1.0, 0.0, 0.0, 1.0]


def test_hetero_mask_all_zero_rejected():
    with pytest.raises(ValueError):
        hetero_mask(np.zeros(5), 0.5, np.random.default_rng(0))


def test_hetero_sampling_matches_sequential_draw_distribution():
    p = [1.0, 0.7, 0.4, 0.2, 0.05]
    exact = np.array(oracles.successive_inclusion(p, 3))
    n = 60000
    freq = hetero_masks(np.array(p), 3, np.random.default_rng(8), n).mean(axis=0)
    sd = np.sqrt(exact * (1 - exact) / n)
    assert np.all(np.abs(freq - exact) <= 4 * sd)


def test_semantic_mask_bernoulli_rates():
    row = np.array([0.9, 0.5, 0.1, 0.0])
    rng = np.random.default_rng(2)
    freq = np.mean([semantic_mask(row, rng) for _ in range(20000)], axis=0)
    np.testing.assert_allclose(freq, row, atol=4 * math.sqrt(0.25 / 20000))
    assert freq[3] == 0.0


def test_semantic_mask_unavailable_row_rejected():
    with pytest.raises(ValueError):
        semantic_mask(np.zeros(3), np.random.default_rng(0))


def _state(n=6, classes=3, ratio=0.5):
    return ActivityState({1: (n, ratio)}, classes, pi_h=0.5, pi_s=2.0, rng=np.random.default_rng(0))


def test_select_uses_semantic_when_row_available():
    state = _state()
    layer = state.layers[1]
    layer.p_semantic[0] = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
    layer.p_hetero = np.ones(6)
    masks = state.select_masks([0, 1], 1, np.random.default_rng(0))
    assert masks[0].tolist() == [1, 1, 0, 0, 0, 0]
    assert masks[1].sum() == retain_count(0.5, 6)


def test_record_counts_nonzero_scores_per_class():
    state = _state(n=3)
    scores = {1: np.array([[0.0, 2.0, 1.0], [3.0, 0.0, 0.0], [1.0, 1.0, 0.0]])}
    state.record(scores, np.array([0, 2, 0]))
    layer = state.layers[1]
    assert layer.global_counts.tolist() == [2, 2, 1]
    assert layer.class_counts.tolist() == [[1, 2, 1], [0, 0, 0], [1, 0, 0]]
    state.record(scores, np.array([0, 2, 0]), enabled=False)
    assert layer.global_counts.tolist() == [2, 2, 1]


def test_record_activity_single_layer():
    state = _state(n=3)
    record_activity(np.array([0.0, 1.0, 1.0]), 1, state, layer_idx=1)
    assert state.layers[1].class_counts[1].tolist() == [0, 1, 1]


def test_refreshes_apply_formulas_to_counters():
    state = _state(n=3)
    state.record({1: np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 0.0]])}, np.array([0, 0]))
    state.refresh_hetero()
    state.refresh_semantic()
    layer = state.layers[1]
    np.testing.assert_allclose(layer.p_hetero, oracles.hetero([2, 1, 0], 0.5), rtol=1e-15)
    np.testing.assert_allclose(layer.p_semantic, oracles.semantic([[2, 1, 0], [0, 0, 0], [0, 0, 0]], 2.0),
                               rtol=1e-15)


def test_semantic_schedule_boundary():
    state = ActivityState({1: (4, 0.5)}, 2, warmup_epochs=1)
    assert not state.semantic_due(0) and state.semantic_due(1)


def test_state_json_round_trip(tmp_path):
    state = _state()
    state.record({1: np.abs(np.random.default_rng(0).normal(size=(5, 6)))}, np.array([0, 1, 2, 0, 1]))
    state.refresh_semantic()
    state.save(tmp_path / "a.json")
    back = ActivityState.load(tmp_path / "a.json")
    for name in ("global_counts", "class_counts", "p_hetero", "p_semantic"):
        assert np.array_equal(getattr(back.layers[1], name), getattr(state.layers[1], name))
    assert back.pi_s == state.pi_s


def test_invalid_state_config_itemized():
    with pytest.raises(ConfigError) as info:
        ActivityState({1: (4, 0.5)}, 2, pi_h=-1, pi_s=-2)
    assert len(info.value.problems) == 2
