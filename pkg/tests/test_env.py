import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from esvplan.env import (ET_RATES, DecodedAction, EpisodeConfig, EpisodeFinished, Rejection, TerminationCause,
                         action_mask, action_mask_4d, apply_action, decode_action, encode_action, grid_et,
                         init_episode, read_action_log, run_config_text, write_action_log)
from esvplan.esv import build_esv_table
from esvplan.grid import K, GridState, LandClass
from esvplan.reward import ECO_ONLY, HEADLINE

from fuzzgrids import random_grid, random_valid_action

ESV = build_esv_table(1.35)
TREES, CROP, BUILT, BARE, RANGE = range(5)


def cells(m, fill, overrides):
    c = np.zeros((m, m, 9), dtype=int)
    c[..., fill] = 25
    for (i, j), spec in overrides.items():
        c[i, j] = 0
        for cls, v in spec.items():
            c[i, j, cls] = v
    return GridState(c)


@given(st.integers(1, 12), st.data())
def test_action_round_trip(m, data):
    i, j = data.draw(st.integers(0, m - 1)), data.draw(st.integers(0, m - 1))
    s, t = data.draw(st.integers(0, K - 1)), data.draw(st.integers(0, K - 1))
    flat = encode_action(i, j, s, t, m)
    assert 0 <= flat < m * m * K * K
    assert decode_action(flat, m) == DecodedAction(i, j, s, t)


def test_action_row_major():
    assert encode_action(0, 0, 0, 1, 10) == 1
    assert encode_action(0, 0, 1, 0, 10) == K
    assert encode_action(0, 1, 0, 0, 10) == K * K
    assert encode_action(1, 0, 0, 0, 10) == 10 * K * K
    with pytest.raises(ValueError):
        decode_action(10 * 10 * K * K, 10)
    with pytest.raises(ValueError):
        decode_action(-1, 10)


def test_mask_all_bare():
    mask = action_mask_4d(GridState.uniform(3, LandClass.BARE_GROUND))
    assert mask.sum() == 9 * 4
    assert mask[..., BARE, :].sum() == 9 * 4
    assert not mask[..., BARE, BARE].any()


def test_mask_all_protected():
    assert not action_mask(GridState.uniform(3, LandClass.WATER)).any()


def test_mask_riparian_blocks_crops_and_built():
    g = cells(3, LandClass.RANGELAND, {(0, 0): {LandClass.WATER: 25}})
    mask = action_mask_4d(g)
    for (i, j) in ((0, 1), (1, 0)):
        assert not mask[i, j, RANGE, CROP] and not mask[i, j, RANGE, BUILT]
        assert mask[i, j, RANGE, TREES] and mask[i, j, RANGE, BARE]
    assert mask[1, 1, RANGE, CROP]


def test_mask_riparian_allows_restoration():
    g = cells(2, LandClass.RANGELAND, {(0, 0): {LandClass.WATER: 25},
                                       (0, 1): {LandClass.BUILT_AREA: 5, LandClass.RANGELAND: 20}})
    mask = action_mask_4d(g)
    assert mask[0, 1, BUILT, TREES] and mask[0, 1, BUILT, BARE]
    assert not mask[0, 1, RANGE, BUILT]


def test_mask_full_target_blocked():
    g = GridState.uniform(1, LandClass.TREES)
    mask = action_mask_4d(g)
    assert mask[0, 0, TREES].sum() == 4
    assert not mask[0, 0, CROP:, TREES].any()


def test_mask_water_threshold():
    g = cells(2, LandClass.RANGELAND, {(0, 0): {LandClass.WATER: 3, LandClass.RANGELAND: 22}})
    assert not action_mask_4d(g, water_threshold=0)[0, 1, RANGE, CROP]
    assert action_mask_4d(g, water_threshold=3)[0, 1, RANGE, CROP]


def mask_oracle(state, threshold=0):
    """Per-action reference: a move is legal iff it transfers pixels and respects the water rule."""
    m = state.m
    water = state.counts[..., LandClass.WATER]
    out = np.zeros((m, m, K, K), dtype=bool)
    for i in range(m):
        for j in range(m):
            near = any(0 <= i + a < m and 0 <= j + b < m and water[i + a, j + b] > threshold
                       for a, b in ((-1, 0), (1, 0), (0, -1), (0, 1)))
            for s in range(K):
                for t in range(K):
                    nxt, moved = apply_action(state, DecodedAction(i, j, s, t), 5)
                    ok = moved > 0
                    if near and t in (CROP, BUILT):
                        ok = False
                    out[i, j, s, t] = ok
    return out


@pytest.mark.parametrize("seed", range(25))
def test_mask_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    g = random_grid(rng, int(rng.integers(1, 6)))
    assert np.array_equal(action_mask_4d(g), mask_oracle(g))


@pytest.mark.parametrize("before,moved", [(12, 5), (3, 3), (0, 0), (5, 5)])
def test_apply_clamp(before, moved):
    g = cells(1, LandClass.BARE_GROUND, {(0, 0): {LandClass.TREES: before, LandClass.BARE_GROUND: 25 - before}})
    after, n = apply_action(g, DecodedAction(0, 0, TREES, CROP), 5)
    assert n == moved
    assert after.counts[0, 0, LandClass.TREES] == before - moved
    assert after.counts[0, 0, LandClass.CROPS] == moved
    assert after.counts.sum() == 25


def test_apply_same_class_noop():
    g = GridState.uniform(1, LandClass.TREES)
    after, n = apply_action(g, DecodedAction(0, 0, TREES, TREES))
    assert n == 0 and after == g


@pytest.mark.parametrize("seed", range(10))
def test_apply_conserves(seed):
    rng = np.random.default_rng(seed)
    g = random_grid(rng, 4)
    for _ in range(40):
        a = decode_action(int(rng.integers(16 * K * K)), 4)
        nxt, moved = apply_action(g, a, int(rng.integers(1, 10)))
        assert (nxt.counts.sum(axis=-1) == 25).all()
        assert (nxt.counts >= 0).all()
        assert np.array_equal(nxt.counts[..., [0, 2, 6, 7]], g.counts[..., [0, 2, 6, 7]])
        g = nxt


def test_et_rates():
    assert ET_RATES[LandClass.SNOW_ICE] == 0.0
    assert grid_et(GridState.uniform(2, LandClass.SNOW_ICE)) == 0.0
    assert grid_et(GridState.uniform(1, LandClass.TREES)) == pytest.approx(25 * ET_RATES[LandClass.TREES])


def test_et_violation_with_zero_tolerance():
    g = cells(2, LandClass.RANGELAND, {(0, 0): {LandClass.TREES: 25}})
    ep = init_episode(g, EpisodeConfig(et_tolerance=0.0), ESV, HEADLINE, filters=())
    res = ep.step(encode_action(0, 0, TREES, BARE, 2))
    assert res.done and res.cause is TerminationCause.ET_VIOLATION
    with pytest.raises(EpisodeFinished):
        ep.step(0)


def test_saturation_at_init():
    ep = init_episode(GridState.uniform(3, LandClass.WATER), EpisodeConfig(), ESV, HEADLINE, filters=())
    assert ep.done and ep.cause is TerminationCause.SATURATION


def test_stagnation_after_zero_transfers():
    g = GridState.uniform(2, LandClass.RANGELAND)
    ep = init_episode(g, EpisodeConfig(noop_limit=10), ESV, HEADLINE, filters=())
    noop = encode_action(0, 0, TREES, CROP, 2)
    for k in range(9):
        res = ep.step(noop)
        assert not res.done and res.reward == 0.0
    res = ep.step(noop)
    assert res.done and res.cause is TerminationCause.STAGNATION
    assert ep.t == 10


def test_noop_streak_resets():
    g = GridState.uniform(2, LandClass.RANGELAND)
    ep = init_episode(g, EpisodeConfig(noop_limit=3), ESV, HEADLINE, filters=())
    noop = encode_action(0, 0, TREES, CROP, 2)
    ep.step(noop)
    ep.step(noop)
    ep.step(encode_action(1, 1, RANGE, TREES, 2))
    ep.step(noop)
    assert not ep.done and ep.noop_streak == 1


def test_step_limit_wins():
    g = GridState.uniform(2, LandClass.RANGELAND)
    ep = init_episode(g, EpisodeConfig(t_max=1, noop_limit=1), ESV, HEADLINE, filters=())
    res = ep.step(encode_action(0, 0, TREES, CROP, 2))
    assert res.cause is TerminationCause.STEP_LIMIT


def test_external_stop():
    ep = init_episode(GridState.uniform(2, LandClass.RANGELAND), EpisodeConfig(), ESV, HEADLINE, filters=())
    ep.stop()
    assert ep.done and ep.cause is TerminationCause.EXTERNAL_STOP


def test_rewards_sum_to_value_change():
    rng = np.random.default_rng(5)
    g = random_grid(rng, 4)
    ep = init_episode(g, EpisodeConfig(t_max=60), ESV, HEADLINE, filters=())
    while not ep.done:
        ep.step(random_valid_action(rng, ep.state))
    total = sum(e.reward for e in ep.log)
    assert total == pytest.approx(ep.breakdown.v_total - ep.v0.v_total, abs=1e-9)


def test_init_rejections():
    water = GridState.uniform(3, LandClass.WATER)
    r = init_episode(water, EpisodeConfig(), ESV, HEADLINE)
    assert isinstance(r, Rejection) and r.filter == "modifiable"
    assert "modifiable" in r.message
    bare = GridState.uniform(3, LandClass.BARE_GROUND)
    r = init_episode(bare, EpisodeConfig(), ESV, HEADLINE)
    assert isinstance(r, Rejection) and r.filter == "value"
    r = init_episode(bare, EpisodeConfig(), ESV, HEADLINE, filters=("effective",))
    assert isinstance(r, Rejection) and r.filter == "effective"
    with pytest.raises(ValueError):
        init_episode(bare, EpisodeConfig(), ESV, HEADLINE, filters=("bogus",))


def test_value_vs_effective_boundary():
    # V0 of exactly the threshold passes the training filter but not the evaluation one
    g = GridState.uniform(2, LandClass.BARE_GROUND)
    cfg = EpisodeConfig(min_initial_value=0.0)
    assert not isinstance(init_episode(g, cfg, ESV, ECO_ONLY, filters=("value",)), Rejection)
    assert isinstance(init_episode(g, cfg, ESV, ECO_ONLY, filters=("effective",)), Rejection)


def test_episode_config_round_trip():
    cfg = EpisodeConfig(t_max=7, delta_pixels=3, et_tolerance=0.25, noop_limit=2, min_modifiable_fraction=0.2,
                        min_initial_value=0.5, water_threshold=4)
    assert EpisodeConfig.from_dict({k: str(v) for k, v in cfg.to_dict().items()}) == cfg
    with pytest.raises(ValueError):
        EpisodeConfig(t_max=0)
    with pytest.raises(ValueError):
        EpisodeConfig(et_tolerance=-0.1)


def test_episode_determinism():
    def run(seed):
        rng = np.random.default_rng(seed)
        g = random_grid(np.random.default_rng(11), 5)
        ep = init_episode(g, EpisodeConfig(t_max=40), ESV, HEADLINE, filters=())
        while not ep.done:
            ep.step(random_valid_action(rng, ep.state))
        return ep.log, ep.state
    assert run(1) == run(1)


def test_action_log_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    ep = init_episode(random_grid(rng, 3), EpisodeConfig(t_max=20), ESV, HEADLINE, filters=())
    while not ep.done:
        ep.step(random_valid_action(rng, ep.state))
    path = tmp_path / "a.log"
    write_action_log(path, ep.log, "g" * 8, "c" * 8)
    header, entries = read_action_log(path)
    assert header == {"grid_sha256": "g" * 8, "config_sha256": "c" * 8}
    assert entries == ep.log


def test_run_config_text_stable():
    a = run_config_text(ESV, HEADLINE, EpisodeConfig())
    assert a == run_config_text(build_esv_table(1.35), HEADLINE, EpisodeConfig())
    assert a != run_config_text(build_esv_table(1.0), HEADLINE, EpisodeConfig())
    assert "esv.raw.Crops = 246.0" in a
