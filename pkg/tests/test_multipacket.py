from __future__ import annotations

import math

import numpy as np
import pytest

from bxi.multipacket import (clockwise_ordered, estimate_multi_packet, gap_index, multi_packet_quantity,
                             packets_avoid)
from bxi.paths import from_log_points


def ray(theta, lo=0.0, hi=2.0):
    return from_log_points([[lo, theta], [hi, theta]])


def test_clockwise_order():
    assert clockwise_ordered([[ray(5.0)], [ray(3.0)], [ray(1.0)]])
    assert not clockwise_ordered([[ray(1.0)], [ray(3.0)], [ray(5.0)]])
    # rotation does not matter
    assert clockwise_ordered([[ray(1.0)], [ray(6.0)], [ray(2.0)]])
    # interleaved packets are not in contiguous blocks
    assert not clockwise_ordered([[ray(5.0), ray(2.0)], [ray(4.0), ray(1.0)]])
    assert clockwise_ordered([[ray(0.5)]])


def test_gap_index():
    packets = [[ray(5.0)], [ray(3.0)], [ray(1.0)]]
    got = gap_index(np.array([4.0, 2.0, 0.5, 6.0]), packets)
    assert got.tolist() == [1, 2, 0, 0]
    two = [[ray(5.0), ray(4.5)], [ray(2.0)]]
    assert gap_index(np.array([4.7, 3.0, 1.0]), two).tolist() == [-1, 1, 0]
    assert gap_index(np.array([1.0, 2.0]), [[ray(1.5)]]).tolist() == [0, 0]


def test_packets_avoid():
    assert packets_avoid([[ray(1.0)], [ray(3.0)]], 0.05)
    crossing = from_log_points([[0.5, 0.0], [0.5, 2.0]])
    assert not packets_avoid([[ray(1.0)], [crossing]], 0.05)
    # paths in the same packet may meet
    assert packets_avoid([[ray(1.0), crossing]], 0.05)


def test_quantity_name():
    assert multi_packet_quantity([1, 2], [0.5, 1.0]) == "b_multi[p=1,2;lam=0.5,1]"


def test_validation():
    with pytest.raises(ValueError):
        estimate_multi_packet([1, 1], [1.0], 1.0, 1)
    with pytest.raises(ValueError):
        estimate_multi_packet([6], [1.0], 1.0, 1)
    with pytest.raises(ValueError):
        estimate_multi_packet([1], [-1.0], 1.0, 1)
    with pytest.raises(ValueError):
        estimate_multi_packet([1], [math.inf], 1.0, 1)


def test_small_run():
    rec = estimate_multi_packet([1, 1], [0.5, 0.5], 2.0, 4, dt=1e-2, seed=1)
    assert 0.0 <= rec.value <= 1.0 and rec.n == 4 and rec.lam == 1.0
    again = estimate_multi_packet([1, 1], [0.5, 0.5], 2.0, 4, dt=1e-2, seed=1, workers=2)
    assert rec == again


def test_reordering_packets_preserves_the_law():
    # with equal exponents, packets (1, 2) and (2, 1) give the same quantity in law
    a = estimate_multi_packet([1, 2], [0.5, 0.5], 1.0, 400, dt=1e-2, seed=1)
    b = estimate_multi_packet([2, 1], [0.5, 0.5], 1.0, 400, dt=1e-2, seed=2)
    assert a.value > 0 and b.value > 0
    assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr)
