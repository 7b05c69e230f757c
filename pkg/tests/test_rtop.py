import math

import pytest
from hypothesis import assume, given, strategies as st

from rtdetbench.errors import InvalidConfig, InvalidInput
from rtdetbench.rtop import RtopConfig, published_rows, rank_leaderboard, rtop, weight, weight_curve


def test_at_threshold_is_identity():
    r = rtop(56.9, 30.0)
    assert (r.phi, r.w, r.rtop) == (1.0, 1.0, 56.9)


@pytest.mark.parametrize(
    "p, fps, printed",
    [(57.9, 6.7, 33.8), (53.8, 16.6, 39.5), (41.8, 20.5, 33.6), (60.4, 11.2, 39.1)],
)
def test_published_examples(p, fps, printed):
    # values as printed next to mAP/FPS in the traffic benchmark table
    assert rtop(p, fps).rtop == pytest.approx(printed, abs=0.1)


def test_hand_computed_weight():
    # 2 ** (6.7/30 - 1) evaluated independently with math.pow
    assert rtop(57.9, 6.7).w == math.pow(2.0, 6.7 / 30.0 - 1.0)


@pytest.mark.parametrize("fps", [0.0, 5.0, 29.9, 30.0, 100.0])
def test_base_one_is_identity(fps):
    assert rtop(42.0, fps, RtopConfig(30, 1)).rtop == 42.0


def test_zero_fps_halves_at_base_two():
    r = rtop(10, 0)
    assert (r.phi, r.w, r.rtop) == (0.0, 0.5, 5.0)


@pytest.mark.parametrize("T, b", [(0, 2), (-1, 2), (30, 0), (30, -2), (float("inf"), 2)])
def test_invalid_config(T, b):
    with pytest.raises(InvalidConfig):
        RtopConfig(T, b)


@pytest.mark.parametrize("p, fps", [(-1, 10), (10, -1), (float("nan"), 10), (10, float("inf"))])
def test_invalid_input(p, fps):
    with pytest.raises(InvalidInput):
        rtop(p, fps)


def test_weight_curve_examples():
    assert weight_curve(RtopConfig(30, 2), [0]) == [(0.0, 0.5)]
    assert weight_curve(RtopConfig(30, 2), [30, 60]) == [(30.0, 1.0), (60.0, 1.0)]
    # 4 ** (0.5 - 1) = 1/2
    assert weight_curve(RtopConfig(30, 4), [15]) == [(15.0, 0.5)]


def test_weight_curve_rejects_negative_fps():
    with pytest.raises(InvalidInput):
        weight_curve(RtopConfig(), [-1.0])


def test_rank_tju_block():
    rows = [r for r in published_rows() if r.dataset == "TJU-DHD-Traffic"]
    board = rank_leaderboard([(r.method, r.map, r.fps) for r in rows])
    assert [e.run_name for e in board] == ["LSFM P", "YOLOv3", "FCOS", "LSFM B", "Cascade RCNN"]


def test_rank_single_and_stable():
    assert [e.run_name for e in rank_leaderboard([("a", 10, 5)])] == ["a"]
    board = rank_leaderboard([("first", 40, 30), ("second", 40, 45), ("best", 50, 31)])
    assert [e.run_name for e in board] == ["best", "first", "second"]


def test_rank_above_threshold_orders_by_p():
    board = rank_leaderboard([("low", 30, 40), ("high", 35, 31)])
    assert [e.run_name for e in board] == ["high", "low"]


perf = st.floats(min_value=0, max_value=100, allow_nan=False)
fps_st = st.floats(min_value=0, max_value=200, allow_nan=False)
cfgs = st.builds(RtopConfig, st.floats(1, 120), st.floats(1, 16))


@given(perf, fps_st, cfgs)
def test_bounds_and_identity(p, fps, cfg):
    r = rtop(p, fps, cfg)
    assert 0 <= r.phi <= 1
    assert p / cfg.b * (1 - 1e-12) <= r.rtop <= p
    if fps >= cfg.T:
        assert r.rtop == p


@given(perf, fps_st, fps_st, cfgs)
def test_monotone_in_fps(p, f1, f2, cfg):
    lo, hi = sorted((f1, f2))
    assert rtop(p, lo, cfg).rtop <= rtop(p, hi, cfg).rtop
    if hi < cfg.T and lo < hi and cfg.b > 1:
        assert weight(lo, cfg) < weight(hi, cfg) or math.isclose(weight(lo, cfg), weight(hi, cfg))


@given(perf, perf, fps_st, cfgs)
def test_monotone_in_p(p1, p2, fps, cfg):
    assume(p1 < p2)
    assert rtop(p1, fps, cfg).rtop < rtop(p2, fps, cfg).rtop


@given(perf, fps_st, st.floats(0, 50), cfgs)
def test_scale_equivariance(p, fps, c, cfg):
    assert rtop(c * p, fps, cfg).rtop == pytest.approx(c * rtop(p, fps, cfg).rtop, rel=1e-12, abs=1e-300)


@given(cfgs)
def test_continuous_at_threshold(cfg):
    below = weight(cfg.T * (1 - 1e-12), cfg)
    assert weight(cfg.T, cfg) == 1.0
    assert below == pytest.approx(1.0, abs=1e-9)


@given(
    st.lists(st.tuples(st.integers(0, 1000), st.floats(0.1, 100), st.floats(0, 90)), min_size=1, max_size=8),
    st.sampled_from([0.5, 2.0, 4.0, 1024.0]),
)
def test_ranking_invariant_to_common_p_scale(entries, c):
    # power-of-two factors scale every rtop exactly, so no near-ties flip
    named = [(f"r{i}", p, f) for i, (_, p, f) in enumerate(entries)]
    scaled = [(n, p * c, f) for n, p, f in named]
    assert [e.run_name for e in rank_leaderboard(named)] == [e.run_name for e in rank_leaderboard(scaled)]
