from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from bxi.extremal import (PreconditionError, excursion_mass_rectangle, exp_neg, extremal_between,
                          mass_series, pi_extremal_distance, serial_cut_constant, solve_network,
                          subarc_constant, verify_disk_removal, verify_serial_cut, verify_subarc)
from bxi.geometry import rectangle_domain
from bxi.rng import RandomSeed
from bxi.verification import central_subarc

PI = math.pi


@pytest.mark.parametrize("L", [1.0, 2.0, 4.0])
def test_rectangle_distance(L):
    assert pi_extremal_distance(rectangle_domain(L, PI, 0.02)).L == pytest.approx(L, rel=0.01)


def test_square_has_distance_pi():
    assert pi_extremal_distance(rectangle_domain(PI, PI, 0.02)).L == pytest.approx(PI, rel=0.01)


def test_half_annulus_is_a_rectangle_in_log_coordinates():
    # {1 < |z| < e^2, Im z > 0} is the rectangle (0, 2) x (0, pi) of the cylinder
    d = rectangle_domain(2.0, PI, 0.02)
    d = replace(d, col0=0)
    assert pi_extremal_distance(d).L == pytest.approx(2.0, rel=0.01)


def test_translation_invariance_in_log_radius():
    d = rectangle_domain(1.5, PI, 0.05)
    a = pi_extremal_distance(d).L
    b = pi_extremal_distance(replace(d, u_min=3.7)).L
    assert a == pytest.approx(b, rel=1e-10)


def test_conjugate_duality():
    # extremal lengths of the two conjugate families multiply to one; in pi units the product is pi^2
    d = rectangle_domain(2.0, PI, 0.02)
    L = pi_extremal_distance(d).L
    dual = extremal_between(d, d.arc == 3, d.arc == 4)
    assert L * dual == pytest.approx(PI**2, rel=0.02)


def test_refinement_converges():
    errs = [abs(pi_extremal_distance(rectangle_domain(2.0, PI, h)).L - 2.0) for h in (0.1, 0.05)]
    assert errs[1] <= 0.03 * 2.0
    assert errs[1] <= errs[0] + 1e-12


def test_solver_reports_residual():
    d = rectangle_domain(1.0, PI, 0.1)
    sol = pi_extremal_distance(d, tol=1e-10).solution
    assert sol.residual <= 1e-10 and sol.iterations > 0
    assert np.nanmin(sol.potential) >= -1e-9 and np.nanmax(sol.potential) <= 1 + 1e-9


def test_solve_network_series_resistors():
    # a chain of three unknowns between 0 and 1 with unit conductances
    node = np.array([[-1, 0, 1, 2, -1]])
    fixed = np.array([[0.0, np.nan, np.nan, np.nan, 1.0]])
    sol = solve_network(node, fixed, 1.0, 1.0)
    assert np.allclose(sol.potential[0], [0, 0.25, 0.5, 0.75, 1.0])
    assert sol.energy == pytest.approx(0.25)


# --- excursion mass -----------------------------------------------------------

def test_mass_series_known_limits():
    # the mass of a long rectangle is dominated by the first mode 16/pi * exp(-L)
    assert mass_series(6.0) == pytest.approx(16 / PI * math.exp(-6.0), rel=1e-4)
    assert mass_series(1.0, 0.1) > mass_series(1.0)


def test_mass_monte_carlo_matches_series():
    est = excursion_mass_rectangle(1.0, 0.1, 1e-4, 40_000, RandomSeed(3))
    assert abs(est.value - mass_series(1.0, 0.1)) <= 3 * est.stderr + 1e-12
    with pytest.raises(ValueError):
        excursion_mass_rectangle(1.0, 1.5, 1e-3, 10, RandomSeed(0))


def test_exp_neg():
    assert exp_neg(0.0, math.inf) == 0.0
    assert exp_neg(1.0, math.inf) == 0.0
    assert exp_neg(2.0, 0.5) == pytest.approx(math.exp(-1.0))
    assert np.allclose(exp_neg(1.0, np.array([0.0, math.inf])), [1.0, 0.0])


# --- lemmas ---------------------------------------------------------------------

def test_disk_removal_on_rectangle():
    d = rectangle_domain(4.0, PI, 0.05)
    o = verify_disk_removal(d, 0.05)
    assert 0.0 <= o.slack + 1e-9 and o.holds
    with pytest.raises(PreconditionError):
        verify_disk_removal(rectangle_domain(1.0, PI, 0.05), 0.1)


def test_subarc_full_arc_is_identity():
    d = rectangle_domain(2.0, PI, 0.05)
    assert extremal_between(d, d.arc == 1, d.arc == 2) == pytest.approx(pi_extremal_distance(d).L, rel=1e-10)


def test_subarc_on_rectangle():
    d = rectangle_domain(3.0, PI, 0.05)
    v = central_subarc(d, 0.2)
    o = verify_subarc(d, v, 0.2)
    assert o.slack >= -1e-9 and o.holds and o.bound == subarc_constant(0.2)
    with pytest.raises(PreconditionError):
        verify_subarc(d, d.arc == 1, 0.2)
    with pytest.raises(PreconditionError):
        verify_subarc(d, np.zeros_like(d.arc, dtype=bool), 0.2)


def test_serial_cut_on_rectangle():
    d = rectangle_domain(4.0, PI, 0.05)
    o = verify_serial_cut(d, 2.0, 0.1)
    L1, L2 = o.extra
    assert L1 == pytest.approx(2.0, rel=0.03) and L2 == pytest.approx(2.0, rel=0.03)
    assert abs(o.slack) <= 0.1 and o.holds and o.bound == serial_cut_constant(0.1)
    with pytest.raises(PreconditionError):
        verify_serial_cut(d, 0.5, 0.1)


def test_no_inner_arc_gives_infinite_distance():
    d = rectangle_domain(1.0, PI, 0.1)
    d = replace(d, arc=np.where(d.arc == 1, 0, d.arc))
    assert math.isinf(pi_extremal_distance(d).L) and math.isinf(pi_extremal_distance(None).L)
