"""Monte Carlo estimators built from pairs of sampled paths.

A configuration is a pair of upcrossings of ``A(0, r)`` (optionally with
the full paths they were cut from), the two path domains they bound and
their pi-extremal distances.  Every estimator draws trial ``i`` from
``RandomSeed(seed, i)`` and aggregates in trial order, so results do not
depend on how trials are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .extremal import SolverError, exp_neg, pi_extremal_distance, solve_network
from .geometry import (Cell, InnerCap, OccupancyGrid, PathDomainSpec, disconnection_test,
                       extract_domains, loop_in_annulus, rasterize, reachable_from_outer)
from .parallel import guarded_map, parallel_map, succeeded
from .paths import (TWO_PI, AnnulusSpec, SampledPath, extract_upcrossing, initial_part,
                    StepCapExceeded, invert_reverse, sample_full_path, sample_upcrossing,
                    truncate_at)
from .rng import RandomSeed

DEFAULT_H = 0.05
Z_MARGIN = 1.0
Z_FLOOR = -6.0
NICE_SCALES = (0.5, 0.25, 0.125)
TAIL_WEDGE = 0.1
END_WINDOW = 0.05
# trials raising these are excluded and counted rather than aborting a run
TRIAL_ERRORS = (SolverError, StepCapExceeded)


def default_dt(r: float) -> float:
    return 1e-4 if r <= 4 else 1e-3


# --- configurations ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConfigSample:
    """Two upcrossings of ``A(0, r)``, their path domains and pi-extremal distances."""

    r: float
    upcrossings: tuple[SampledPath, SampledPath]
    full_paths: tuple[SampledPath, SampledPath] | None
    L1: float
    L2: float
    flags: frozenset[str]
    h: float = DEFAULT_H
    domains: tuple[PathDomainSpec | None, PathDomainSpec | None] = field(default=(None, None), repr=False)
    grid: OccupancyGrid | None = field(default=None, repr=False)

    @property
    def L(self) -> float:
        return min(self.L1, self.L2)


def _wrap(theta: np.ndarray | float, centre: float) -> np.ndarray | float:
    return np.abs((np.asarray(theta) - centre + math.pi) % TWO_PI - math.pi)


def _min_u(path: SampledPath) -> float:
    return float(path.u.min())


def _full_flags(full: tuple[SampledPath, SampledPath], r: float) -> set[str]:
    flags = set()
    if all(_min_u(p) > -1.0 for p in full):
        flags.add("E_n")
    if not any(loop_in_annulus(initial_part(p), AnnulusSpec(-1.0, 0.0)) for p in full):
        flags.add("H_n")
    return flags


def assemble_config(b1: SampledPath, b2: SampledPath, h: float = DEFAULT_H,
                    full_paths: tuple[SampledPath, SampledPath] | None = None,
                    domain_one_only: bool = False) -> ConfigSample:
    """Rasterise two upcrossings of ``A(0, r)``, extract both domains and solve."""
    r = float(b1.annulus.r_out)
    grid = rasterize([b1, b2], 0.0, r, h, InnerCap.ABSORB)
    o1, o2 = extract_domains(grid, b1.end_angle, b2.end_angle)
    L1 = pi_extremal_distance(o1).L
    L2 = math.inf if domain_one_only else pi_extremal_distance(o2).L
    flags = set()
    if math.isfinite(L1):
        flags.add("L1_FINITE")
    if math.isfinite(min(L1, L2)):
        flags.add("L_FINITE")
    if full_paths is not None:
        flags |= _full_flags(full_paths, r)
    if math.isfinite(L1) and _very_nice_tail(b1, r, 0.0) and _very_nice_tail(b2, r, math.pi):
        flags.add("VERY_NICE_END")
    return ConfigSample(r, (b1, b2), full_paths, L1, L2, frozenset(flags), h, (o1, o2), grid)


def sample_pair(r: float, dt: float, seed: RandomSeed, with_full_paths: bool):
    """Two independent paths to ``C_r``: upcrossings, or full paths with their upcrossings."""
    if with_full_paths:
        full = tuple(sample_full_path(r, dt, seed.child(j)) for j in (1, 2))
        return tuple(extract_upcrossing(p) for p in full), full
    ups = tuple(sample_upcrossing(AnnulusSpec(0.0, r), dt, seed.child(j)) for j in (1, 2))
    return ups, None


def build_config(r: float, dt: float, h: float, seed: RandomSeed,
                 with_full_paths: bool = False) -> ConfigSample:
    """Sample a configuration at log-radius ``r`` and evaluate its distances and flags."""
    if r < 1:
        raise ValueError("r must be at least 1")
    ups, full = sample_pair(r, dt, seed, with_full_paths)
    return assemble_config(ups[0], ups[1], h, full)


def truncate_config_paths(ups, full, r: float):
    """Paths of a configuration at a smaller radius, cut from the same samples."""
    if full is not None:
        fr = tuple(truncate_at(p, r) for p in full)
        return tuple(extract_upcrossing(p) for p in fr), fr
    return tuple(truncate_at(p, r) for p in ups), None


def config_series(radii, dt: float, h: float, seed: RandomSeed, with_full_paths: bool = False):
    """Configurations at every radius in ``radii``, all cut from one pair of paths."""
    radii = sorted(radii)
    ups, full = sample_pair(radii[-1], dt, seed, with_full_paths)
    out = []
    for r in radii:
        u, f = (ups, full) if r == radii[-1] else truncate_config_paths(ups, full, r)
        out.append(assemble_config(u[0], u[1], h, f))
    return out


# --- niceness ---------------------------------------------------------------

def _nice_begin_path(p: SampledPath, r: float, delta: float) -> bool:
    u = p.u
    z = p.complex_points
    z0 = z[0]
    k1 = p.first_hit(r + 1.0)
    if k1 is None:
        return False
    for s in NICE_SCALES:
        eta = s * delta
        k = p.first_hit(r + math.sqrt(eta))
        if np.any(np.abs(z[: k + 1] - z0) >= eta**0.25 * math.exp(r)):
            return False
        seg = u[k:k1 + 1]
        if np.any((seg > r) & (seg < r + 4 * eta)):
            return False
    tail = u[k1:]
    return not np.any((tail > r) & (tail < r + 4 * delta))


def nice_begin_paths(b1: SampledPath, b2: SampledPath, delta: float) -> bool:
    """Separation and confinement conditions at the inner circle (all but finiteness)."""
    r = b1.annulus.r_in
    if b1.annulus.width <= 1:
        return False
    if abs(b1.complex_points[0] - b2.complex_points[0]) <= delta**0.125 * math.exp(r):
        return False
    return _nice_begin_path(b1, r, delta) and _nice_begin_path(b2, r, delta)


def classify_nice(config: ConfigSample, delta: float, where: str = "begin") -> bool:
    """delta-niceness at the beginning, at the end (via inversion) or both."""
    if not 0 < delta < 0.25:
        raise ValueError("delta must lie in (0, 1/4)")
    if where not in ("begin", "end", "both"):
        raise ValueError("where must be begin, end or both")
    if not math.isfinite(config.L1):
        return False
    b1, b2 = config.upcrossings
    ok = True
    if where in ("begin", "both"):
        ok = nice_begin_paths(b1, b2, delta)
    if ok and where in ("end", "both"):
        ok = nice_begin_paths(invert_reverse(b1), invert_reverse(b2), delta)
    return ok


def _very_nice_tail(p: SampledPath, rp: float, centre: float) -> bool:
    u, th = p.u, p.theta
    k = p.first_hit(rp - 1.0 / 3.0)
    if k is None or np.any(u[k:] <= rp - 0.5):
        return False
    top = (u > rp - 0.2) & (u < rp)
    if np.any(_wrap(th[top], centre) > TAIL_WEDGE):
        return False
    return bool(_wrap(th[-1], centre) <= END_WINDOW)


def very_nice_end_geometry(config: ConfigSample) -> bool:
    b1, b2 = config.upcrossings
    rp = config.r
    return _very_nice_tail(b1, rp, 0.0) and _very_nice_tail(b2, rp, math.pi)


def classify_very_nice_end(config: ConfigSample) -> bool:
    """Both tails confined near the outer circle in opposite wedges, with finite ``L1``."""
    return math.isfinite(config.L1) and very_nice_end_geometry(config)


# --- filters ----------------------------------------------------------------

class FilterKind(Enum):
    NONE = "NONE"
    E_N = "E_n"
    E_N_EPS = "E_n_EPS"
    H_N = "H_n"
    DELTA_NICE = "DELTA_NICE"
    VERY_NICE_END = "VERY_NICE_END"
    NICE_BEGIN_VERY_NICE_END = "NICE_BEGIN_VERY_NICE_END"


@dataclass(frozen=True)
class EventFilter:
    kind: FilterKind = FilterKind.NONE
    eps: float | None = None
    delta: float | None = None
    where: str = "both"

    def __post_init__(self) -> None:
        if self.kind is FilterKind.E_N_EPS and not (self.eps is not None and 0 < self.eps < 0.25):
            raise ValueError("E_n_EPS needs eps in (0, 1/4)")
        if self.kind in (FilterKind.DELTA_NICE, FilterKind.NICE_BEGIN_VERY_NICE_END):
            if not (self.delta is not None and 0 < self.delta < 0.25):
                raise ValueError("niceness filters need delta in (0, 1/4)")
        if self.where not in ("begin", "end", "both"):
            raise ValueError("where must be begin, end or both")

    @classmethod
    def parse(cls, text: str, delta: float | None = None) -> EventFilter:
        """``NONE``, ``E_n``, ``E_n_EPS:0.1``, ``H_n``, ``DELTA_NICE[:delta[:where]]``, ..."""
        parts = text.split(":")
        kind = FilterKind(parts[0])
        args = parts[1:]
        if kind is FilterKind.E_N_EPS:
            return cls(kind, eps=float(args[0]) if args else None)
        if kind is FilterKind.DELTA_NICE:
            d = float(args[0]) if args else delta
            return cls(kind, delta=d, where=args[1] if len(args) > 1 else "both")
        if kind is FilterKind.NICE_BEGIN_VERY_NICE_END:
            return cls(kind, delta=float(args[0]) if args else delta)
        return cls(kind)

    @property
    def label(self) -> str:
        if self.kind is FilterKind.E_N_EPS:
            return f"E_n_EPS:{self.eps:g}"
        if self.kind is FilterKind.DELTA_NICE:
            return f"DELTA_NICE:{self.delta:g}:{self.where}"
        if self.kind is FilterKind.NICE_BEGIN_VERY_NICE_END:
            return f"NICE_BEGIN_VERY_NICE_END:{self.delta:g}"
        return self.kind.value

    @property
    def needs_full_paths(self) -> bool:
        return self.kind in (FilterKind.E_N, FilterKind.E_N_EPS, FilterKind.H_N)

    @property
    def weights_first_domain(self) -> bool:
        """Niceness-weighted quantities use the distance of the first domain only."""
        return self.kind in (FilterKind.DELTA_NICE, FilterKind.NICE_BEGIN_VERY_NICE_END)

    def accepts(self, config: ConfigSample) -> bool:
        k = self.kind
        if k is FilterKind.NONE:
            return True
        if self.needs_full_paths and config.full_paths is None:
            raise ValueError(f"filter {self.label} needs full paths")
        if k is FilterKind.E_N:
            return "E_n" in config.flags
        if k is FilterKind.E_N_EPS:
            return all(_min_u(p) > -1.0 + self.eps for p in config.full_paths)
        if k is FilterKind.H_N:
            return "H_n" in config.flags
        if k is FilterKind.DELTA_NICE:
            return classify_nice(config, self.delta, self.where)
        if k is FilterKind.VERY_NICE_END:
            return classify_very_nice_end(config)
        return classify_nice(config, self.delta, "begin") and classify_very_nice_end(config)

    def weight_distance(self, config: ConfigSample) -> float:
        return config.L1 if self.weights_first_domain else config.L


# --- records ----------------------------------------------------------------

@dataclass(frozen=True)
class EstimateRecord:
    quantity: str
    r: float
    lam: float
    value: float
    stderr: float
    n: int
    seed: int

    def __post_init__(self) -> None:
        if self.value < 0 or self.stderr < 0:
            raise ValueError("estimates and standard errors are non-negative")


def mean_record(quantity: str, r: float, lam: float, x: np.ndarray, seed: int) -> EstimateRecord:
    """Sample mean and its standard error, summed in trial order."""
    x = np.asarray(x, dtype=float)
    n = x.size
    m = float(np.sum(x) / n)
    se = float(np.sqrt(np.sum((x - m) ** 2) / (n - 1) / n)) if n > 1 else 0.0
    return EstimateRecord(quantity, float(r), float(lam), max(m, 0.0), se, n, seed)


# --- b ----------------------------------------------------------------------

@dataclass(frozen=True)
class ConfigStats:
    """What the b-type estimators need from one configuration."""

    r: float
    L1: float
    L2: float
    accepted: bool

    @property
    def L(self) -> float:
        return min(self.L1, self.L2)


def _b_trial(args) -> list[ConfigStats]:
    radii, dt, h, seed, filt = args
    cfgs = config_series(radii, dt, h, seed, filt.needs_full_paths)
    return [ConfigStats(c.r, c.L1, c.L2, filt.accepts(c)) for c in cfgs]


def b_trials(radii, n: int, filt: EventFilter, dt: float, h: float, seed: int,
             workers: int = 1) -> list[list[ConfigStats]]:
    tasks = [(tuple(radii), dt, h, RandomSeed(seed, i), filt) for i in range(n)]
    return guarded_map(_b_trial, tasks, workers, TRIAL_ERRORS)


def b_quantity(filt: EventFilter) -> str:
    return "b" if filt.kind is FilterKind.NONE else f"b[{filt.label}]"


def b_records(trials: list[list[ConfigStats]], lambdas, filt: EventFilter, seed: int) -> list[EstimateRecord]:
    """``r**-2 * mean(exp(-lam L) * indicator)`` for every radius and lambda."""
    out = []
    trials = succeeded(trials)
    if not trials:
        return out
    for j, r in enumerate(s.r for s in trials[0]):
        stats = [t[j] for t in trials]
        dist = np.array([s.L1 if filt.weights_first_domain else s.L for s in stats])
        ind = np.array([s.accepted for s in stats], dtype=float)
        for lam in lambdas:
            x = exp_neg(lam, dist) * ind / r**2
            out.append(mean_record(b_quantity(filt), r, lam, x, seed))
    return out


def estimate_b(r: float, lambdas, n: int, filt: EventFilter | None = None, dt: float | None = None,
               h: float = DEFAULT_H, seed: int = 0, workers: int = 1) -> list[EstimateRecord]:
    """``b_r(lam) = r**-2 E[exp(-lam L_r)]``, optionally restricted to an event."""
    if r < 1:
        raise ValueError("r must be at least 1")
    filt = filt or EventFilter()
    dt = default_dt(r) if dt is None else dt
    return b_records(b_trials([r], n, filt, dt, h, seed, workers), lambdas, filt, seed)


def estimate_b_series(radii, lambdas, n: int, filt: EventFilter | None = None, dt: float = 6.25e-4,
                      h: float = DEFAULT_H, seed: int = 0, workers: int = 1) -> list[EstimateRecord]:
    """``b`` at several radii from shared samples (each radius uses a prefix of the same paths)."""
    filt = filt or EventFilter()
    return b_records(b_trials(radii, n, filt, dt, h, seed, workers), lambdas, filt, seed)


# --- E_n ----------------------------------------------------------------------

def _en_trial(args) -> bool:
    n, dt, seed, level = args
    return all(sample_full_path(n, dt, seed.child(j), stop_below=level).complete for j in (1, 2))


def estimate_E_probability(n: float, trials: int, dt: float = 1e-2, seed: int = 0,
                           level: float = -1.0, workers: int = 1) -> EstimateRecord:
    """Frequency of two full paths both reaching ``C_n`` before ``C_level``."""
    tasks = [(n, dt, RandomSeed(seed, i), level) for i in range(trials)]
    hits = np.array(parallel_map(_en_trial, tasks, workers), dtype=float)
    return mean_record("P(E_n)", n, 0.0, hits, seed)


# --- Z ----------------------------------------------------------------------

class ZMode(Enum):
    HARMONIC = "harmonic"
    NESTED_MC = "nested_mc"


def z_grid(paths, r: float, h: float = DEFAULT_H, margin: float = Z_MARGIN,
           floor: float = Z_FLOOR) -> OccupancyGrid:
    """Super-node grid of the disk of log-radius ``r`` with the paths as obstacles."""
    lo = min(float(p.u.min()) for p in paths) - margin
    lo = max(lo, floor)
    n = math.ceil((r - lo) / h - 1e-9)
    return rasterize(list(paths), r - n * h, r, h, InnerCap.SUPER_NODE)


def z_network(grid: OccupancyGrid) -> tuple[np.ndarray, np.ndarray]:
    """Node/Dirichlet arrays for harmonic measure of the outer circle on a super-node grid."""
    cells = grid.cells
    reach = reachable_from_outer(grid)
    fixed = np.full(cells.shape, np.nan)
    fixed[cells == Cell.OBSTACLE] = 0.0
    fixed[-1][cells[-1] == Cell.OUTER_BOUNDARY] = 1.0
    unknown = reach & np.isnan(fixed)
    node = np.full(cells.shape, -1, dtype=np.int64)
    inner = unknown[0].copy()
    unknown[0] = False
    node[unknown] = np.arange(int(unknown.sum()))
    if inner.any():
        node[0][inner] = int(unknown.sum())
    # cells cut off from the outer circle are pinned at zero
    fixed[~reach & np.isnan(fixed)] = 0.0
    return node, fixed


@dataclass(frozen=True)
class ZResult:
    Z: float
    Z_max: float
    disconnected: bool


def harmonic_Z(grid: OccupancyGrid) -> ZResult:
    """Mean and max over the unit-circle row of the harmonic measure of the outer circle."""
    if disconnection_test(grid):
        return ZResult(0.0, 0.0, True)
    node, fixed = z_network(grid)
    args = (node, fixed, grid.h_theta / grid.h_u, grid.h_u / grid.h_theta)
    sol = solve_network(*args, periodic=True)
    row = np.clip(np.nan_to_num(sol.potential[grid.start_row], nan=0.0), 0.0, 1.0)
    if not row.max() > 0:
        # connected but below round-off: polish, then keep the value strictly positive
        sol = solve_network(*args, periodic=True, tol=1e-14)
        row = np.clip(np.nan_to_num(sol.potential[grid.start_row], nan=0.0), 0.0, 1.0)
        row = np.maximum(row, np.where(node[grid.start_row] >= 0, np.finfo(float).tiny, 0.0))
    return ZResult(float(np.mean(row)), float(row.max()), False)


def _walk_graph(grid: OccupancyGrid):
    """CSR transition structure of the cell walk; targets ``n`` and ``n+1`` are absorbing 0 and 1."""
    node, fixed = z_network(grid)
    n = int(node.max()) + 1
    c_u = grid.h_theta / grid.h_u
    c_t = grid.h_u / grid.h_theta
    nflat = node.ravel()
    fflat = fixed.ravel()
    tgt = np.where(nflat >= 0, nflat, np.where(fflat == 1.0, n + 1, n))
    rows, nbrs, conds = [], [], []
    shape = node.shape
    idx = np.arange(nflat.size).reshape(shape)
    pairs = [(idx[:-1].ravel(), idx[1:].ravel(), c_u), (idx.ravel(), np.roll(idx, -1, axis=1).ravel(), c_t)]
    for a, b, c in pairs:
        for p, q in ((a, b), (b, a)):
            ok = (nflat[p] >= 0) & (tgt[q] != nflat[p])
            rows.append(nflat[p][ok])
            nbrs.append(tgt[q][ok])
            conds.append(np.full(int(ok.sum()), c))
    rows = np.concatenate(rows)
    nbrs = np.concatenate(nbrs)
    conds = np.concatenate(conds)
    order = np.lexsort((nbrs, rows))
    rows, nbrs, conds = rows[order], nbrs[order], conds[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    cum = np.empty_like(conds)
    for i in range(n):
        s, e = indptr[i], indptr[i + 1]
        w = np.cumsum(conds[s:e])
        cum[s:e] = w / w[-1]
    start = tgt.reshape(shape)[grid.start_row]
    return indptr, nbrs, cum, start, n


_WALKER = None


def _walker_kernel():
    import numba

    @numba.njit(cache=True)
    def run(indptr, nbrs, cum, starts, n, seed, max_steps):
        np.random.seed(seed)
        wins = 0
        for i in range(starts.size):
            v = starts[i]
            steps = 0
            while v < n and steps < max_steps:
                s = indptr[v]
                e = indptr[v + 1]
                x = np.random.random()
                j = s
                while j < e - 1 and cum[j] < x:
                    j += 1
                v = nbrs[j]
                steps += 1
            if v == n + 1:
                wins += 1
        return wins

    return run


def walker_Z(grid: OccupancyGrid, m: int, seed: RandomSeed) -> tuple[float, float]:
    """Fraction of ``m`` cell walks from uniform unit-circle cells that reach the outer row.

    The walk moves to a neighbouring cell with probability proportional to
    the link conductance, so its success probability is exactly the
    discrete harmonic measure solved by :func:`harmonic_Z`.
    """
    global _WALKER
    if _WALKER is None:
        _WALKER = _walker_kernel()
    indptr, nbrs, cum, start, n = _walk_graph(grid)
    rng = seed.generator()
    starts = start[rng.integers(0, start.size, size=m)].astype(np.int64)
    inner = int(rng.integers(0, 2**31 - 1))
    wins = _WALKER(indptr, nbrs, cum, starts, n, inner, 10**9)
    p = wins / m
    return p, math.sqrt(p * (1 - p) / m)


def estimate_Z(config: ConfigSample, h: float | None = None, mode: ZMode = ZMode.HARMONIC,
               m: int = 10**4, seed: RandomSeed | None = None) -> float:
    """Probability that a third path from the unit circle reaches ``C_r`` avoiding both full paths."""
    if config.full_paths is None:
        raise ValueError("estimate_Z needs full paths")
    grid = z_grid(config.full_paths, config.r, h or config.h)
    if mode is ZMode.HARMONIC:
        return harmonic_Z(grid).Z
    if disconnection_test(grid):
        return 0.0
    return walker_Z(grid, m, seed or RandomSeed(0))[0]


@dataclass(frozen=True)
class ZStats:
    r: float
    Z: float
    Z_max: float
    disconnected: bool
    walker: float = math.nan


def _z_trial(args) -> list[ZStats]:
    radii, dt, h, seed, solve, walkers, start = args
    radii = sorted(radii)
    if start is None:
        full = tuple(sample_full_path(radii[-1], dt, seed.child(j)) for j in (1, 2))
    else:
        full = tuple(sample_full_path(radii[-1], dt, seed.child(j), start_angle=a) for j, a in zip((1, 2), start))
    out = []
    for r in radii:
        paths = full if r == radii[-1] else tuple(truncate_at(p, r) for p in full)
        grid = z_grid(paths, r, h)
        if solve:
            zr = harmonic_Z(grid)
        else:
            zr = ZResult(math.nan, math.nan, disconnection_test(grid))
        w = math.nan
        if walkers:
            w = 0.0 if zr.disconnected else walker_Z(grid, walkers, seed.child(3, int(round(r * 1000))))[0]
        out.append(ZStats(r, zr.Z, zr.Z_max, zr.disconnected, w))
    return out


def z_trials(radii, n: int, dt: float, h: float, seed: int, *, solve: bool = True, walkers: int = 0,
             start: tuple[float, float] | None = None, workers: int = 1, offset: int = 0) -> list[list[ZStats]]:
    tasks = [(tuple(radii), dt, h, RandomSeed(seed, offset + i), solve, walkers, start) for i in range(n)]
    return guarded_map(_z_trial, tasks, workers, TRIAL_ERRORS)


def a_records(trials: list[list[ZStats]], lambdas, seed: int, use_max: bool = False,
              quantity: str = "a") -> list[EstimateRecord]:
    out = []
    trials = succeeded(trials)
    if not trials:
        return out
    for j, r in enumerate(s.r for s in trials[0]):
        z = np.array([(t[j].Z_max if use_max else t[j].Z) for t in trials])
        for lam in lambdas:
            x = np.where(z > 0, z ** lam, 0.0)
            out.append(mean_record(quantity, r, lam, x, seed))
    return out


def disconnection_records(trials: list[list[ZStats]], seed: int) -> list[EstimateRecord]:
    out = []
    trials = succeeded(trials)
    if not trials:
        return out
    for j, r in enumerate(s.r for s in trials[0]):
        x = np.array([0.0 if t[j].disconnected else 1.0 for t in trials])
        out.append(mean_record("P(Z>0)", r, 0.0, x, seed))
    return out


def estimate_a(r: float, lambdas, n: int, dt: float | None = None, h: float = DEFAULT_H,
               seed: int = 0, workers: int = 1) -> list[EstimateRecord]:
    """``a_r(lam) = E[Z_r**lam]`` with ``Z`` from the harmonic solve and ``0**0 = 0``."""
    if r < 2:
        raise ValueError("r must be at least 2")
    dt = default_dt(r) if dt is None else dt
    return a_records(z_trials([r], n, dt, h, seed, workers=workers), lambdas, seed)


def a_hat_trials(radii, n: int, start_grid: int = 16, dt: float = 6.25e-4, h: float = DEFAULT_H,
                 seed: int = 0, workers: int = 1) -> list[list[list[ZStats]]]:
    """One batch of ``n`` Z-trials per pinned start angle (first path at 0, second at ``2 pi k / start_grid``)."""
    return [z_trials(radii, n, dt, h, seed, start=(0.0, TWO_PI * k / start_grid), workers=workers,
                     offset=k * n) for k in range(start_grid)]


def a_hat_records(batches: list[list[list[ZStats]]], lambdas, seed: int) -> list[EstimateRecord]:
    """Per radius and lambda, the largest batch mean of ``Z_max**lam``."""
    best: dict[tuple[float, float], EstimateRecord] = {}
    for trials in batches:
        for rec in a_records(trials, lambdas, seed, use_max=True, quantity="a_hat"):
            key = (rec.r, rec.lam)
            if key not in best or rec.value > best[key].value:
                best[key] = rec
    return [best[k] for k in sorted(best)]


def estimate_a_hat(r: float, lambdas, n: int, start_grid: int = 16, dt: float | None = None,
                   h: float = DEFAULT_H, seed: int = 0, workers: int = 1) -> list[EstimateRecord]:
    """Sup over pinned start angles of the mean of ``Z_max**lam``.

    ``Z_max`` is the largest discrete harmonic measure over unit-circle
    cells.  By rotation invariance only the angle between the two starts
    matters, so ``start_grid`` batches of ``n`` configurations pin the first
    path at angle 0 and the second at ``2 pi k / start_grid``.  With
    ``start_grid = 1`` the starts are uniform and ``Z`` itself is used, which
    reproduces :func:`estimate_a`.
    """
    if r < 2:
        raise ValueError("r must be at least 2")
    dt = default_dt(r) if dt is None else dt
    if start_grid == 1:
        recs = estimate_a(r, lambdas, n, dt, h, seed, workers)
        return [EstimateRecord("a_hat", x.r, x.lam, x.value, x.stderr, x.n, seed) for x in recs]
    recs = a_hat_records(a_hat_trials([r], n, start_grid, dt, h, seed, workers), lambdas, seed)
    return [next(x for x in recs if x.lam == float(lam)) for lam in lambdas]


def estimate_disconnection(r: float, n: int, dt: float | None = None, h: float = DEFAULT_H,
                           seed: int = 0, workers: int = 1) -> EstimateRecord:
    """Frequency of configurations whose full paths leave ``C_0`` connected to ``C_r``."""
    dt = default_dt(r) if dt is None else dt
    return disconnection_records(z_trials([r], n, dt, h, seed, solve=False, workers=workers), seed)[0]
