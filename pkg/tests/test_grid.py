import itertools

import pytest
from hypothesis import given, strategies as st

from cv2xgeo import grid
from cv2xgeo.errors import ConfigError


@pytest.mark.parametrize("rate,SC,SF,N", [(50, 4, 20, 80), (10, 4, 100, 400), (20, 1, 50, 50)])
def test_pool_dims_examples(rate, SC, SF, N):
    cfg = grid.pool_dims(rate, SC)
    assert (cfg.SF, cfg.N) == (SF, N)


@pytest.mark.parametrize("rate,M,wmin,wmax", [(10, 5, 5, 15), (20, 2, 10, 30), (50, 1, 25, 75)])
def test_rate_defaults(rate, M, wmin, wmax):
    cfg = grid.pool_dims(rate)
    assert (cfg.M, cfg.w_min, cfg.w_max) == (M, wmin, wmax)
    # runs of 0.5 s to 1.5 s whatever the rate
    assert wmin / rate == 0.5 and wmax / rate == 1.5


def test_unsupported_rate():
    with pytest.raises(ConfigError):
        grid.pool_dims(25)


def test_subframe_of():
    cfg = grid.pool_dims(50)
    assert grid.subframe_of(3, cfg) == 3
    assert grid.subframe_of(23, cfg) == 3
    assert grid.subframe_of(0, cfg) == 0
    with pytest.raises(ValueError):
        grid.subframe_of(80, cfg)


def test_first_subchannel_examples():
    cfg = grid.pool_dims(50)
    assert grid.first_subchannel(3, 1, cfg) == 0
    assert grid.first_subchannel(23, 1, cfg) == 2
    assert grid.first_subchannel(43, 1, cfg) == 1
    with pytest.raises(ValueError):
        grid.first_subchannel(3, 5, cfg)


@pytest.mark.parametrize("rate", grid.SUPPORTED_RATES)
def test_np1_mapping_is_bijection(rate):
    cfg = grid.pool_dims(rate)
    slots = {(grid.subframe_of(pi, cfg), grid.first_subchannel(pi, 1, cfg)) for pi in range(cfg.N)}
    assert len(slots) == cfg.N
    assert slots == set(itertools.product(range(cfg.SF), range(cfg.SC)))


@pytest.mark.parametrize("rate", grid.SUPPORTED_RATES)
def test_np2_overlaps_only_across_subframes(rate):
    cfg = grid.pool_dims(rate)
    a = [grid.assignment_of(pi, 2, cfg) for pi in range(cfg.N)]
    for i in range(cfg.N):
        assert a[i].sc + a[i].np <= cfg.SC
        for j in range(i + 1, cfg.N):
            if a[i].sf == a[j].sf:
                assert a[i].sc == a[j].sc or not set(a[i].channels()) & set(a[j].channels())


def test_random_center_examples():
    cfg = grid.pool_dims(50)
    assert grid.random_center(3, cfg) == 33
    assert grid.random_center(0, cfg) == 30
    window = grid.window_set(33, 1, cfg.N)
    assert window == [32, 33, 34]
    assert [grid.assignment_of(p, 1, cfg) for p in window] == [
        grid.ResourceAssignment(sf, 2, 1) for sf in (12, 13, 14)]
    odd = grid.pool_dims(10, 1)
    assert grid.random_center(0, odd) == 50


@pytest.mark.parametrize("rate", grid.SUPPORTED_RATES)
def test_random_window_avoids_neighbour_subframes(rate):
    cfg = grid.pool_dims(rate)
    for pi in range(cfg.N):
        sf = grid.subframe_of(pi, cfg)
        near = {(sf - 1) % cfg.SF, sf, (sf + 1) % cfg.SF}
        for q in grid.window_set(grid.random_center(pi, cfg), cfg.M, cfg.N):
            assert grid.subframe_of(q, cfg) not in near


def test_window_set_examples():
    assert grid.window_set(0, 5, 400) == [395, 396, 397, 398, 399, 0, 1, 2, 3, 4, 5]
    assert grid.window_set(10, 0, 80) == [10]
    with pytest.raises(ValueError):
        grid.window_set(0, 40, 80)


@given(st.integers(1, 500), st.integers(0, 20), st.data())
def test_window_set_shift_symmetry(N, M, data):
    if 2 * M + 1 > N:
        M = (N - 1) // 2
    c = data.draw(st.integers(0, N - 1))
    s = data.draw(st.integers(0, N - 1))
    w = grid.window_set(c, M, N)
    assert len(set(w)) == 2 * M + 1
    assert {(x + s) % N for x in w} == set(grid.window_set((c + s) % N, M, N))


def test_delta_pi_examples():
    assert grid.delta_pi(0, 0.12, 400) == 0
    assert grid.delta_pi(100, 0.12, 400) == 12
    assert grid.delta_pi(3400, 0.12, 400) == 8
    assert grid.nearest_int(2.5) == 3 and grid.nearest_int(-2.5) == -3


@given(st.integers(0, 100_000), st.sampled_from([0.0625, 0.125, 0.25]), st.sampled_from([80, 200, 400]))
def test_delta_pi_periodic(d, beta, N):
    assert grid.delta_pi(d, beta, N) == grid.delta_pi(d + N / beta, beta, N)
