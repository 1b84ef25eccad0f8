from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bxi.estimators import (ConfigStats, EventFilter, FilterKind, ZStats, a_records, assemble_config,
                            b_records, build_config, classify_nice, classify_very_nice_end, disconnection_records,
                            estimate_a, estimate_a_hat, estimate_b, harmonic_Z, mean_record, walker_Z, z_grid)
from bxi.geometry import InnerCap, disconnection_test, rasterize
from bxi.paths import TWO_PI, AnnulusSpec, PathKind, from_log_points
from bxi.rng import RandomSeed


def radial_up(theta, r=3.0, n=400, u=None):
    u = np.linspace(0.0, r, n) if u is None else u
    return from_log_points(np.column_stack((u, np.full(u.size, theta))), kind=PathKind.UPCROSSING,
                           annulus=AnnulusSpec(0.0, r))


def ring(u, n=400):
    th = np.linspace(0.0, TWO_PI, n)
    return from_log_points(np.column_stack((np.full(n, u), th)))


# --- Z ------------------------------------------------------------------------------

def test_Z_is_one_without_obstacles():
    g = rasterize([], -1.0, 2.0, 0.05, InnerCap.SUPER_NODE)
    z = harmonic_Z(g)
    assert z.Z == pytest.approx(1.0) and z.Z_max == pytest.approx(1.0) and not z.disconnected


def test_Z_is_zero_behind_a_ring():
    g = z_grid([ring(1.0)], 2.0, 0.05)
    z = harmonic_Z(g)
    assert z.Z == 0.0 and z.disconnected


def test_Z_of_a_radial_slit_is_strictly_between():
    g = z_grid([from_log_points([[0.0, 1.0], [2.0, 1.0]])], 2.0, 0.05)
    z = harmonic_Z(g)
    assert 0.0 < z.Z < z.Z_max <= 1.0


def test_walker_matches_harmonic_measure():
    paths = [from_log_points([[0.0, 1.0], [1.5, 1.0]]), from_log_points([[-0.5, 3.0], [1.0, 4.5]])]
    g = z_grid(paths, 1.5, 0.05)
    z = harmonic_Z(g)
    p, se = walker_Z(g, 20_000, RandomSeed(4))
    assert abs(p - z.Z) <= 3 * se


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_Z_positive_iff_connected(seed):
    rng = np.random.default_rng(seed)
    paths = [from_log_points(np.column_stack((np.cumsum(rng.normal(0.02, 0.1, 80)) % 2.0,
                                              np.cumsum(rng.normal(0, 0.15, 80))))) for _ in range(2)]
    g = z_grid(paths, 2.0, 0.05)
    z = harmonic_Z(g)
    assert (z.Z > 0) == (not disconnection_test(g)) == (not z.disconnected)


# --- records ---------------------------------------------------------------------

def test_mean_record():
    rec = mean_record("q", 2, 1.0, np.array([1.0, 2.0, 3.0, 4.0]), 7)
    assert rec.value == 2.5 and rec.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert (rec.n, rec.seed, rec.r) == (4, 7, 2.0)
    assert mean_record("q", 1, 0, np.array([0.5]), 0).stderr == 0.0


def _ztrials(zs):
    return [[ZStats(2.0, float(z), float(z), z == 0)] for z in zs]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=30))
def test_a_monotone_and_log_convex_in_lambda(zs):
    lams = [0.5, 1.0, 1.5]
    v = [r.value for r in a_records(_ztrials(zs), lams, 0)]
    assert v[0] >= v[1] - 1e-15 >= v[2] - 2e-15
    # Holder: a(1)^2 <= a(0.5) a(1.5)
    assert v[1] ** 2 <= v[0] * v[2] * (1 + 1e-12) + 1e-300


def test_a_uses_zero_to_the_zero_equals_zero():
    v = a_records(_ztrials([0.0, 1.0]), [0.0], 0)[0].value
    assert v == 0.5


def test_disconnection_records():
    rec = disconnection_records(_ztrials([0.0, 0.3, 0.0, 1.0]), 0)[0]
    assert rec.value == 0.5 and rec.quantity == "P(Z>0)"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.0, 10.0) | st.just(math.inf), st.booleans()), min_size=2, max_size=30))
def test_filtered_b_never_exceeds_unfiltered(items):
    trials = [[ConfigStats(2.0, L, L + 1.0, acc)] for L, acc in items]
    full = b_records(trials, [1.0], EventFilter(), 0)[0]
    part = b_records(trials, [1.0], EventFilter(FilterKind.H_N), 0)[0]
    assert part.value <= full.value + 1e-15
    assert full.quantity == "b" and part.quantity == "b[H_n]"


# --- filters and classifiers -----------------------------------------------------------

def test_filter_validation_and_parse():
    with pytest.raises(ValueError):
        EventFilter(FilterKind.E_N_EPS)
    with pytest.raises(ValueError):
        EventFilter(FilterKind.DELTA_NICE, delta=0.3)
    with pytest.raises(ValueError):
        EventFilter(where="middle")
    f = EventFilter.parse("DELTA_NICE:0.1:begin")
    assert (f.kind, f.delta, f.where) == (FilterKind.DELTA_NICE, 0.1, "begin")
    assert EventFilter.parse("E_n_EPS:0.1").label == "E_n_EPS:0.1"
    assert EventFilter.parse("H_n").needs_full_paths
    with pytest.raises(ValueError):
        EventFilter.parse("BOGUS")


def test_full_path_filter_requires_full_paths():
    cfg = assemble_config(radial_up(0.0), radial_up(math.pi))
    with pytest.raises(ValueError, match="full paths"):
        EventFilter(FilterKind.E_N).accepts(cfg)


def test_very_nice_end_on_synthetic_tails():
    good = assemble_config(radial_up(0.0), radial_up(math.pi))
    assert math.isfinite(good.L1) and classify_very_nice_end(good)
    assert "VERY_NICE_END" in good.flags
    # endpoint 0.1 away from its target angle
    off = assemble_config(radial_up(0.1), radial_up(math.pi))
    assert not classify_very_nice_end(off)
    # tail drops back below r' - 1/2 after reaching r' - 1/3
    u = np.concatenate((np.linspace(0, 2.8, 200), np.linspace(2.8, 2.3, 50), np.linspace(2.3, 3.0, 100)))
    back = assemble_config(radial_up(0.0, u=u), radial_up(math.pi))
    assert not classify_very_nice_end(back)


def test_nice_on_synthetic_paths():
    cfg = assemble_config(radial_up(0.0), radial_up(math.pi))
    assert classify_nice(cfg, 0.1, "both")
    u = np.concatenate((np.linspace(0, 1.5, 150), np.linspace(1.5, 0.05, 150), np.linspace(0.05, 3.0, 300)))
    back = assemble_config(radial_up(0.0, u=u), radial_up(math.pi))
    assert not classify_nice(back, 0.1, "begin")
    close = assemble_config(radial_up(0.0), radial_up(0.2))
    assert not classify_nice(close, 0.1, "begin")
    with pytest.raises(ValueError):
        classify_nice(cfg, 0.3)
    with pytest.raises(ValueError):
        classify_nice(cfg, 0.1, "middle")


# --- end-to-end (small) -------------------------------------------------------------

def test_build_config_fields():
    cfg = build_config(2.0, 1e-2, 0.05, RandomSeed(3), with_full_paths=True)
    assert cfg.r == 2.0 and cfg.L == min(cfg.L1, cfg.L2)
    assert cfg.full_paths is not None
    assert ("L_FINITE" in cfg.flags) == math.isfinite(cfg.L)
    with pytest.raises(ValueError):
        build_config(0.5, 1e-2, 0.05, RandomSeed(0))


def test_estimate_b_is_deterministic_and_bounded():
    a = estimate_b(1.0, [0.5, 1.0], 6, dt=1e-2, seed=2)
    b = estimate_b(1.0, [0.5, 1.0], 6, dt=1e-2, seed=2, workers=2)
    assert a == b
    assert all(0.0 <= r.value <= 1.0 for r in a)
    assert a[0].value >= a[1].value


def test_a_hat_with_single_start_reproduces_a():
    a = estimate_a(2.0, [1.0], 5, dt=1e-2, seed=4)
    ah = estimate_a_hat(2.0, [1.0], 5, start_grid=1, dt=1e-2, seed=4)
    assert ah[0].value == a[0].value and ah[0].quantity == "a_hat"
