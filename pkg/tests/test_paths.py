from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bxi.estimators import estimate_E_probability
from bxi.paths import (TWO_PI, AnnulusSpec, PathKind, SampledPath, concatenate, decompose_upcrossing,
                       extend_conditioned, extract_upcrossing, from_log_points, from_planar_points,
                       invert_reverse, sample_full_path, sample_upcrossing, tol, truncate_at)
from bxi.rng import RandomSeed
from bxi.verification import gamblers_ruin_rate


def ks_uniform(angles):
    return stats.kstest(np.asarray(angles) / TWO_PI, "uniform").pvalue


# --- full paths -----------------------------------------------------------------

def test_full_path_ends_on_target_circle():
    dt = 1e-4
    p = sample_full_path(1.0, dt, RandomSeed(1))
    assert p.kind is PathKind.FULL_PATH
    assert abs(p.u[0]) < 1e-12
    norm = float(np.hypot(*p.points[-1]))
    assert math.e * (1 - 5 * math.sqrt(dt)) <= norm <= math.e * (1 + 5 * math.sqrt(dt))


def test_full_path_hit_indices_monotone():
    p = sample_full_path(3.0, 1e-3, RandomSeed(5))
    levels = sorted(k for k in p.hit_indices if k >= 0)
    idx = [p.hit_indices[k] for k in levels]
    assert idx == sorted(idx)
    for k in levels:
        assert p.u[p.hit_indices[k]] >= k - 1e-12
    assert all(-2 <= k <= 3 for k in p.hit_indices)
    assert p.u[p.last_exit_index] <= 0 < p.u[p.last_exit_index + 1:].min()


def test_full_path_determinism():
    a = sample_full_path(2.0, 1e-3, RandomSeed(9, 4))
    b = sample_full_path(2.0, 1e-3, RandomSeed(9, 4))
    assert np.array_equal(a.log_points, b.log_points)


def test_full_path_steps_have_sd_sqrt_dt():
    dt = 1e-3
    p = sample_full_path(2.0, dt, RandomSeed(2))
    d = np.diff(p.log_points, axis=0)
    keep = np.ones(len(d), bool)
    keep[list(p.breaks)] = False
    keep[-1] = False
    assert np.std(d[keep, 1]) == pytest.approx(math.sqrt(dt), rel=0.05)


def test_full_path_endpoint_uniform():
    ends = [sample_full_path(1.0, 1e-3, RandomSeed(11, i)).end_angle for i in range(600)]
    assert ks_uniform(ends) > 0.01


def test_event_E2_probability():
    rec = estimate_E_probability(2, 20000, 1e-2, seed=3)
    assert abs(rec.value - 1 / 9) <= 3 * rec.stderr


# --- upcrossings -------------------------------------------------------------------

def test_upcrossing_endpoints_and_range():
    dt = 1e-4
    p = sample_upcrossing(AnnulusSpec(0.0, 1.0), dt, RandomSeed(3))
    t = tol(dt)
    assert abs(p.u[0]) <= t and abs(p.u[-1] - 1.0) <= t
    assert p.u.min() >= -t and p.u.max() <= 1.0 + t


@settings(max_examples=20, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(0.2, 2.0), st.integers(0, 1000))
def test_upcrossing_invariants(r_in, width, seed):
    dt = 1e-3
    ann = AnnulusSpec(r_in, r_in + width)
    p = sample_upcrossing(ann, dt, RandomSeed(seed))
    t = tol(dt)
    assert abs(p.u[0] - ann.r_in) <= t and abs(p.u[-1] - ann.r_out) <= t
    assert p.u.min() >= ann.r_in - t and p.u.max() <= ann.r_out + t
    idx = [p.hit_indices[k] for k in sorted(p.hit_indices)]
    assert idx == sorted(idx)


def test_upcrossing_endpoint_uniform():
    ends = [sample_upcrossing(AnnulusSpec(0.0, 1.0), 1e-3, RandomSeed(4, i)).end_angle for i in range(2000)]
    assert ks_uniform(ends) > 0.01


def _reentry(u):
    k = np.argmax(u > 0.5)
    return bool(u[k:].min() <= 0.1)


def test_upcrossing_reentry_statistic():
    # Bessel(3) from 1/2 hits 1/10 before 1 with probability (b-x)a / ((b-a)x) = 1/9
    # (h-transform of Brownian motion killed at 0 with h(u) = u).
    n, dt = 4000, 1e-4
    hits = [_reentry(sample_upcrossing(AnnulusSpec(0.0, 1.0), dt, RandomSeed(6, i)).u) for i in range(n)]
    p = np.mean(hits)
    se = math.sqrt(p * (1 - p) / n)
    assert abs(p - 1 / 9) <= 3 * se

    # rejection oracle: Brownian motion from 0.02 conditioned to reach 1 before 0
    rng = np.random.default_rng(7)
    oracle = []
    while len(oracle) < 1500:
        u, path = 0.02, [0.02]
        while 0 < u < 1:
            u += math.sqrt(dt) * rng.standard_normal()
            path.append(u)
        if u >= 1:
            oracle.append(_reentry(np.array(path)))
    q = np.mean(oracle)
    se_q = math.sqrt(q * (1 - q) / len(oracle))
    assert abs(p - q) <= 3 * math.hypot(se, se_q)


def test_annulus_validation():
    with pytest.raises(ValueError):
        AnnulusSpec(1.0, 1.0)


# --- extensions, inversion, decomposition --------------------------------------------

def test_extension_degenerate_target():
    p = sample_upcrossing(AnnulusSpec(0.0, 1.0), 1e-3, RandomSeed(1))
    with pytest.raises(ValueError, match="degenerate"):
        extend_conditioned(p, 1.0, 1e-3, RandomSeed(2))


def test_extension_reaches_target_and_joins():
    p = sample_upcrossing(AnnulusSpec(0.0, 1.0), 1e-3, RandomSeed(1))
    e = extend_conditioned(p, 2.0, 1e-3, RandomSeed(2))
    assert e.kind is PathKind.EXTENSION
    assert e.u[-1] == pytest.approx(2.0) and e.u.min() > 0
    assert np.array_equal(e.log_points[0], p.log_points[-1])
    joined = concatenate(p, e)
    assert joined.annulus == AnnulusSpec(0.0, 2.0)
    assert len(joined) == len(p) + len(e) - 1


def test_gamblers_ruin_quick():
    p, se = gamblers_ruin_rate(1.0, 2.0, 10000, 1e-2, seed=5)
    assert abs(p - 0.5) <= 3 * se


def test_invert_reverse_annulus_and_involution():
    p = sample_upcrossing(AnnulusSpec(0.0, 1.0), 1e-3, RandomSeed(8))
    q = invert_reverse(p)
    assert q.annulus == AnnulusSpec(-1.0, 0.0)
    assert q.u[0] == pytest.approx(-1.0) and q.u[-1] == pytest.approx(0.0, abs=1e-12)
    assert np.array_equal(invert_reverse(q).log_points, p.log_points)


def test_invert_reverse_endpoint_law():
    img = [invert_reverse(sample_upcrossing(AnnulusSpec(0.0, 1.0), 1e-3, RandomSeed(9, i))).end_angle
           for i in range(1500)]
    direct = [sample_upcrossing(AnnulusSpec(-1.0, 0.0), 1e-3, RandomSeed(10, i)).start[1] % TWO_PI
              for i in range(1500)]
    assert stats.ks_2samp(img, direct).pvalue > 0.01


def test_decompose_roundtrip_and_second_part():
    for i in range(20):
        p = sample_upcrossing(AnnulusSpec(0.0, 2.0), 1e-3, RandomSeed(12, i))
        a, b = decompose_upcrossing(p, 1.0)
        assert np.array_equal(concatenate(a, b).log_points, p.log_points)
        assert b.u.min() > 0 and b.u[-1] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        decompose_upcrossing(p, 2.0)


def test_decompose_first_part_law():
    firsts = [decompose_upcrossing(sample_upcrossing(AnnulusSpec(0.0, 2.0), 1e-3, RandomSeed(13, i)), 1.0)[0]
              .end_angle for i in range(1000)]
    direct = [sample_upcrossing(AnnulusSpec(0.0, 1.0), 1e-3, RandomSeed(14, i)).end_angle for i in range(1000)]
    assert stats.ks_2samp(firsts, direct).pvalue > 0.01


# --- helpers ----------------------------------------------------------------------

def test_truncate_and_extract():
    full = sample_full_path(3.0, 1e-3, RandomSeed(15))
    t = truncate_at(full, 2.0)
    assert t.u[-1] == pytest.approx(2.0) and t.u[:-1].max() < 2.0
    up = extract_upcrossing(t)
    assert up.kind is PathKind.UPCROSSING
    assert up.u[0] == pytest.approx(0.0) and up.u[1:].min() > 0
    with pytest.raises(ValueError):
        truncate_at(full, 4.0)


def test_from_planar_points_roundtrip():
    xy = [[1.0, 0.0], [0.0, 2.0], [-3.0, 0.0]]
    p = from_planar_points(xy)
    assert np.allclose(p.points, xy)
    assert isinstance(p, SampledPath)
    with pytest.raises(ValueError):
        from_planar_points([[0.0, 0.0]])


def test_rotation_changes_only_angles():
    p = from_log_points([[0.0, 0.1], [1.0, 0.4]])
    q = p.rotated(1.0)
    assert np.allclose(q.theta - p.theta, 1.0) and np.array_equal(q.u, p.u)
