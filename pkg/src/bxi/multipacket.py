"""Several packets of Brownian paths: mutual avoidance, cyclic order and per-gap harmonic measure."""

from __future__ import annotations

import math

import numpy as np

from .estimators import DEFAULT_H, TRIAL_ERRORS, EstimateRecord, mean_record, z_grid, z_network
from .extremal import solve_network
from .geometry import Cell, OccupancyGrid, disconnection_test, paths_intersect
from .parallel import guarded_map, succeeded
from .paths import TWO_PI, SampledPath, sample_full_path
from .rng import RandomSeed

MAX_PACKET = 5


def packets_avoid(packets: list[list[SampledPath]], h: float) -> bool:
    """True iff no two paths from different packets share a grid cell."""
    for i in range(len(packets)):
        for j in range(i + 1, len(packets)):
            if any(paths_intersect(a, b, h) for a in packets[i] for b in packets[j]):
                return False
    return True


def _end_labels(packets: list[list[SampledPath]]) -> tuple[np.ndarray, np.ndarray]:
    """Endpoint angles in ``[0, 2 pi)`` sorted clockwise (decreasing), with packet labels.

    Equal angles are ordered by packet index.
    """
    ang, lab = [], []
    for k, pk in enumerate(packets):
        for p in pk:
            ang.append(p.end_angle)
            lab.append(k)
    ang = np.array(ang)
    lab = np.array(lab)
    order = np.lexsort((lab, -ang))
    return ang[order], lab[order]


def clockwise_ordered(packets: list[list[SampledPath]]) -> bool:
    """True iff the packets meet the outer circle in contiguous blocks ordered ``1, 2, ..., l`` clockwise."""
    l = len(packets)
    if l == 1:
        return True
    _, lab = _end_labels(packets)
    # rotate so the sequence starts at a block boundary
    change = np.flatnonzero(lab != np.roll(lab, 1))
    if change.size == 0:
        return False
    seq = np.roll(lab, -int(change[0]))
    blocks = seq[np.r_[True, seq[1:] != seq[:-1]]]
    if blocks.size != l:
        return False
    start = int(np.argmax(blocks == 0))
    return bool(np.array_equal(np.roll(blocks, -start), np.arange(l)))


def gap_index(theta: np.ndarray, packets: list[list[SampledPath]]) -> np.ndarray:
    """Gap label per outer-circle angle: ``k`` if the angle lies clockwise after packet ``k-1`` and before packet ``k``.

    Angles between two endpoints of the same packet get ``-1``.  With one
    packet every angle is in gap 0.
    """
    theta = np.asarray(theta, dtype=float) % TWO_PI
    l = len(packets)
    if l == 1:
        return np.zeros(theta.shape, dtype=np.int64)
    ang, lab = _end_labels(packets)
    asc = ang[::-1]
    lab_asc = lab[::-1]
    m = asc.size
    # nearest endpoint counterclockwise (larger angle) and clockwise (smaller angle), cyclically
    i = np.searchsorted(asc, theta, side="right")
    above = lab_asc[i % m]
    below = lab_asc[(i - 1) % m]
    out = np.full(theta.shape, -1, dtype=np.int64)
    ok = (above == (below - 1) % l) & (above != below)
    out[ok] = below[ok]
    return out


def gap_measures(grid: OccupancyGrid, packets: list[list[SampledPath]]) -> np.ndarray:
    """Harmonic measure from the unit circle of each gap on the outer row."""
    l = len(packets)
    if disconnection_test(grid):
        return np.zeros(l)
    node, fixed = z_network(grid)
    top = grid.cells[-1] == Cell.OUTER_BOUNDARY
    theta = (np.arange(grid.cells.shape[1]) + 0.5) * grid.h_theta
    gaps = gap_index(theta, packets)
    out = np.zeros(l)
    for k in range(l):
        f = fixed.copy()
        f[-1][top] = (gaps[top] == k).astype(float)
        sol = solve_network(node, f, grid.h_theta / grid.h_u, grid.h_u / grid.h_theta, periodic=True)
        row = np.clip(np.nan_to_num(sol.potential[grid.start_row], nan=0.0), 0.0, 1.0)
        out[k] = float(np.mean(row))
    return out


def _power(z: float, lam: float) -> float:
    # 0 ** 0 is taken as 0, the indicator of a positive measure
    return z ** lam if z > 0 else 0.0


def _mp_trial(args) -> float:
    p, lambdas, n, dt, h, seed = args
    packets = [[sample_full_path(n, dt, seed.child(j, k)) for k in range(pj)] for j, pj in enumerate(p)]
    if not (packets_avoid(packets, h) and clockwise_ordered(packets)):
        return 0.0
    grid = z_grid([q for pk in packets for q in pk], n, h)
    z = gap_measures(grid, packets)
    return float(np.prod([_power(zk, lk) for zk, lk in zip(z, lambdas)]))


def multi_packet_quantity(p, lambdas) -> str:
    return "b_multi[p=" + ",".join(str(int(x)) for x in p) + ";lam=" + ",".join(f"{x:g}" for x in lambdas) + "]"


def estimate_multi_packet(p, lambdas, n: float, trials: int, dt: float = 6.25e-4, h: float = DEFAULT_H,
                          seed: int = 0, workers: int = 1) -> EstimateRecord:
    """Mean of ``1_E prod_k (Z^k)^{lam_k}`` over ``trials`` samples of the packets to radius ``n``.

    ``E`` requires the packets to avoid each other and to meet the outer
    circle in clockwise order; ``Z^k`` is the harmonic measure of the gap
    between packets ``k-1`` and ``k``.  The record's ``lam`` is the sum of
    the exponents.
    """
    p = [int(x) for x in p]
    lambdas = [float(x) for x in lambdas]
    if not p or len(p) != len(lambdas):
        raise ValueError("need one exponent per packet")
    if any(x < 1 or x > MAX_PACKET for x in p):
        raise ValueError(f"packet sizes must lie in 1..{MAX_PACKET}")
    if any(x < 0 or not math.isfinite(x) for x in lambdas):
        raise ValueError("exponents must be finite and non-negative")
    tasks = [(p, lambdas, n, dt, h, RandomSeed(seed, i)) for i in range(trials)]
    vals = succeeded(guarded_map(_mp_trial, tasks, workers, TRIAL_ERRORS))
    return mean_record(multi_packet_quantity(p, lambdas), n, sum(lambdas), np.array(vals), seed)
