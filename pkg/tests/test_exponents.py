from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bxi.exponents import (U, V, fit_exponent, flatness, subadditivity_report, xi_exact,
                           xi_exact_general)


@dataclass
class Rec:
    r: float
    value: float
    stderr: float = 0.0


def series(xi, radii=range(1, 7), pre=1.0, rel=0.0):
    return [Rec(float(r), pre * math.exp(-xi * r), rel * pre * math.exp(-xi * r)) for r in radii]


def test_xi_exact_known_values():
    assert xi_exact(1.0) == pytest.approx(2.0, abs=1e-14)
    assert xi_exact(0.0) == pytest.approx(2.0 / 3.0, abs=1e-14)


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0, 2.0])
def test_two_displays_agree(lam):
    assert abs(V(U(2.0) + U(lam)) - xi_exact(lam)) < 1e-12
    assert abs(xi_exact_general([2], [lam]) - xi_exact(lam)) < 1e-12


def test_grid_shape_properties():
    lam = np.linspace(0.0, 10.0, 100)
    xs = np.array([xi_exact(x) for x in lam])
    assert np.all(np.diff(xs) > 0)
    assert np.all(np.diff(xs, 2) <= 1e-12)
    assert np.all(xs <= 2 + lam + 1e-12)


@given(st.floats(0.0, 50.0))
def test_identity_property(lam):
    assert abs(V(U(2.0) + U(lam)) - xi_exact(lam)) < 1e-11 * max(1.0, lam)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.data())
def test_general_formula_symmetric_under_reordering(p, data):
    lams = data.draw(st.lists(st.floats(0.0, 5.0), min_size=len(p), max_size=len(p)))
    perm = data.draw(st.permutations(range(len(p))))
    a = xi_exact_general(p, lams)
    b = xi_exact_general([p[i] for i in perm], [lams[i] for i in perm])
    assert a == pytest.approx(b, rel=1e-12)


def test_rejects_negative_inputs():
    with pytest.raises(ValueError):
        U(-1.0)
    with pytest.raises(ValueError):
        xi_exact(-0.1)
    with pytest.raises(ValueError):
        xi_exact_general([0], [1.0])
    with pytest.raises(ValueError):
        xi_exact_general([1, 2], [1.0])


def test_fit_exact_series():
    fit = fit_exponent(series(2.0))
    assert fit.xi_hat == pytest.approx(2.0, abs=1e-12)


def test_fit_prefactor_goes_to_intercept():
    fit = fit_exponent(series(0.5, pre=5.0))
    assert fit.xi_hat == pytest.approx(0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(5.0), abs=1e-12)


@given(st.floats(1e-3, 1e3))
def test_fit_scale_equivariance(c):
    rng = np.random.default_rng(3)
    recs = [Rec(r, math.exp(-1.3 * r) * (1 + 0.1 * rng.standard_normal()), 0.05 * math.exp(-1.3 * r))
            for r in range(1, 7)]
    scaled = [Rec(x.r, c * x.value, c * x.stderr) for x in recs]
    assert fit_exponent(scaled).xi_hat == pytest.approx(fit_exponent(recs).xi_hat, abs=1e-9)


def test_fit_calibration_under_noise():
    rng = np.random.default_rng(20240611)
    xi, covered, reps = 1.7, 0, 1000
    radii = np.arange(1, 7, dtype=float)
    for _ in range(reps):
        truth = np.exp(-xi * radii)
        vals = truth * (1 + 0.05 * rng.standard_normal(radii.size))
        fit = fit_exponent([Rec(r, v, 0.05 * t) for r, v, t in zip(radii, vals, truth)])
        covered += abs(fit.xi_hat - xi) <= 2 * fit.stderr
    assert covered / reps >= 0.95


def test_fit_errors():
    with pytest.raises(ValueError, match="r=3"):
        fit_exponent([Rec(1, 0.5), Rec(2, 0.1), Rec(3, 0.0)])
    with pytest.raises(ValueError):
        fit_exponent([Rec(1, 0.5), Rec(2, 0.1)])


def test_flatness():
    assert flatness(series(1.2), 1.2).band_ratio == pytest.approx(1.0)
    wobble = [Rec(r, (0.5 if r % 2 else 2.0) * math.exp(-r)) for r in range(1, 7)]
    rep = flatness(wobble, 1.0)
    assert rep.band_ratio == pytest.approx(4.0)
    assert rep.c_min <= rep.c_max


def test_subadditivity_exact_series():
    # exp(-xi (m+n+1)) / (exp(-xi m) exp(-xi n)) = exp(-xi)
    rep = subadditivity_report(series(0.8))
    for ratio in rep.ratios.values():
        assert ratio == pytest.approx(math.exp(-0.8))
    assert rep.spread == pytest.approx(1.0)


def test_subadditivity_needs_radii():
    with pytest.raises(ValueError):
        subadditivity_report([Rec(2, 0.1)])
    with pytest.raises((ValueError, KeyError)):
        subadditivity_report([Rec(1, 0.5), Rec(2, 0.1)], max_radius=6)


@settings(max_examples=50)
@given(st.lists(st.floats(0.05, 3.0), min_size=6, max_size=6))
def test_subadditivity_max_dominates_min(vals):
    recs = [Rec(r + 1, v * math.exp(-(r + 1))) for r, v in enumerate(vals)]
    rep = subadditivity_report(recs)
    assert rep.min_ratio <= rep.max_ratio
    m, n = rep.argmax
    assert rep.ratios[(m, n)] == rep.max_ratio
