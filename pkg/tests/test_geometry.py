import math

import numpy as np
import pytest

from ddrhc.constellation.geometry import coupling_counts, link_lifetimes
from ddrhc.constellation.orbits import WalkerPattern, positions
from ddrhc.constellation.system import coupling_in_neighbors, desk_scale_config, ring_coupling_range

SHELL = WalkerPattern(math.radians(53), 1584, 72, 17, 6921e3)
DESK = desk_scale_config().pattern


def test_zero_radius_has_no_couplings():
    c = coupling_counts(DESK, [0.0], [0.0, 600.0])[0]
    assert (c.min, c.max, c.mean) == (0, 0, 0.0)


def test_shell_couples_every_satellite_at_750_km():
    c = coupling_counts(SHELL, [750e3], [0.0, 1800.0, 3600.0])[0]
    assert c.min >= 1


def test_counts_grow_with_radius():
    cs = coupling_counts(DESK, [1e6, 3e6, 6e6], np.arange(0.0, 3000.0, 300.0))
    assert [c.mean for c in cs] == sorted(c.mean for c in cs)


def test_in_neighbors_by_distance():
    far = np.array([[0.0, 0.0, 0.0], [800e3, 0.0, 0.0]])
    assert coupling_in_neighbors(far, 750e3, 6) == [[], []]
    near = np.array([[0.0, 0.0, 0.0], [100e3, 0.0, 0.0]])
    assert coupling_in_neighbors(near, 750e3, 6) == [[1], [0]]


def test_in_neighbor_cap_keeps_the_closest():
    pts = np.array([[0.0, 0, 0], [3.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    assert coupling_in_neighbors(pts, 10.0, 3)[0] == [2, 3]


def test_same_plane_neighbors_never_lose_sight():
    single = WalkerPattern(math.radians(53), 24, 1, 0, 6921e3)
    life = link_lifetimes(single, ring_coupling_range(24, 6921e3, 2), [0.0, 100.0], lookback=500.0, step=10.0)
    assert life.censored == life.durations.size == 2 * 24 * 2
    assert life.dt_min == life.dt_max == 500.0


def test_lifetimes_of_the_desk_shell():
    life = link_lifetimes(DESK, 3000e3, np.arange(0.0, DESK.period, 30.0), 2 * DESK.period, 1.0)
    assert 0 < life.dt_min < life.dt_max
    counts, edges = life.histogram(10)
    assert counts.sum() == life.durations.size
    assert edges[0] == life.dt_min and edges[-1] == life.dt_max


def test_lifetime_is_rounded_down_to_the_step():
    coarse = link_lifetimes(DESK, 3000e3, [0.0], lookback=2 * DESK.period, step=100.0)
    fine = link_lifetimes(DESK, 3000e3, [0.0], lookback=2 * DESK.period, step=1.0)
    assert coarse.durations.size == fine.durations.size > 0
    assert np.all(coarse.durations <= fine.durations)
    assert np.all(fine.durations < coarse.durations + 100.0)


def test_ring_range_sits_between_chords():
    R = ring_coupling_range(96, 6921e3, 2)
    pos = positions(WalkerPattern(math.radians(53), 96, 1, 0, 6921e3).nominal((0.0, 0.0), 0.0))
    d = np.linalg.norm(pos - pos[0], axis=1)
    assert np.sum((d > 0) & (d <= R)) == 4
    assert R == pytest.approx(6921e3 * (math.sin(2 * math.pi / 96) + math.sin(3 * math.pi / 96)))
