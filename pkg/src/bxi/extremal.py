"""Discrete Dirichlet energies, pi-extremal distances and the extremal-length lemmas.

Cells are nodes of a resistor network.  A link across a row boundary (the
log-radius direction) has conductance ``h_theta/h_u`` and a link across a
column boundary has ``h_u/h_theta``, the 5-point Laplacian of the
cylinder metric.  With unit potential drop the energy of a ``length x pi``
rectangle is ``pi/length``, so the pi-extremal distance is ``pi/energy``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import LinearOperator, cg

from .geometry import InnerCap, PathDomainSpec
from .rng import RandomSeed, as_generator

SOLVER_TOL = 1e-8
SOLVER_MAXITER = 10**6
DISK_REMOVAL_BOUND = 6.0 * math.pi**2
_FOUR = ndimage.generate_binary_structure(2, 1)


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class HarmonicSolution:
    """Potential per window cell (NaN off the network), its energy and solver diagnostics."""

    potential: np.ndarray
    energy: float
    residual: float
    iterations: int


@dataclass(frozen=True, eq=False)
class ExtremalResult:
    L: float
    solution: HarmonicSolution | None = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.L)


def _pairs(shape: tuple[int, int], periodic: bool):
    """Flat index pairs of 4-neighbours, split by direction."""
    idx = np.arange(shape[0] * shape[1]).reshape(shape)
    a_u, b_u = idx[:-1].ravel(), idx[1:].ravel()
    if periodic:
        a_t, b_t = idx.ravel(), np.roll(idx, -1, axis=1).ravel()
    else:
        a_t, b_t = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    return (a_u, b_u), (a_t, b_t)


def solve_network(node: np.ndarray, fixed: np.ndarray, c_u: float, c_theta: float,
                  periodic: bool = False, tol: float = SOLVER_TOL,
                  maxiter: int = SOLVER_MAXITER, x0: np.ndarray | None = None) -> HarmonicSolution:
    """Harmonic potential on a cell network by Jacobi-preconditioned conjugate gradients.

    ``node`` holds an unknown index per cell (``-1`` if none; cells may share
    an index to form a super node) and ``fixed`` holds Dirichlet values (NaN
    elsewhere).  Cells that are neither carry no links.  Unknowns that are
    not linked to any Dirichlet cell are pinned to zero.
    """
    shape = node.shape
    nflat = node.ravel()
    fflat = fixed.ravel()
    n = int(nflat.max()) + 1 if nflat.size else 0
    isfix = ~np.isnan(fflat)
    diag = np.zeros(n)
    rhs = np.zeros(n)
    rows, cols, vals = [], [], []
    edges = []
    for (a, b), c in zip(_pairs(shape, periodic), (c_u, c_theta)):
        na, nb = nflat[a], nflat[b]
        uu = (na >= 0) & (nb >= 0) & (na != nb)
        rows += [na[uu], nb[uu]]
        cols += [nb[uu], na[uu]]
        vals += [np.full(2 * int(uu.sum()), -c)]
        diag += c * np.bincount(na[uu], minlength=n) + c * np.bincount(nb[uu], minlength=n)
        for p, q in ((a, b), (b, a)):
            uf = (nflat[p] >= 0) & isfix[q]
            diag += c * np.bincount(nflat[p][uf], minlength=n)
            rhs += c * np.bincount(nflat[p][uf], weights=fflat[q][uf], minlength=n)
        live = ((na >= 0) | isfix[a]) & ((nb >= 0) | isfix[b]) & ~((na >= 0) & (na == nb))
        edges.append((a[live], b[live], c))
    x = np.zeros(n)
    residual = 0.0
    iterations = 0
    if n:
        grounded = diag > 0
        # unknowns with no link at all keep potential zero
        diag_safe = np.where(grounded, diag, 1.0)
        A = coo_matrix((np.concatenate(vals + [diag_safe]),
                        (np.concatenate(rows + [np.arange(n)]), np.concatenate(cols + [np.arange(n)]))),
                       shape=(n, n)).tocsr()
        inv = 1.0 / diag_safe
        M = LinearOperator((n, n), matvec=lambda v: inv * v, dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1

        bnorm = np.linalg.norm(rhs)
        if bnorm > 0:
            x, info = cg(A, rhs, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
            residual = float(np.linalg.norm(rhs - A @ x) / bnorm)
            iterations = count[0]
            if info != 0:
                raise SolverError("conjugate gradients did not converge", residual)
    phi = np.full(nflat.size, np.nan)
    phi[isfix] = fflat[isfix]
    has = nflat >= 0
    phi[has] = x[nflat[has]]
    energy = 0.0
    for a, b, c in edges:
        d = phi[a] - phi[b]
        energy += c * float(np.dot(d, d))
    return HarmonicSolution(phi.reshape(shape), energy, residual, iterations)


def _network(domain: PathDomainSpec, d1: np.ndarray | None = None,
             d2: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Node and Dirichlet arrays of a domain.  ``d1``/``d2`` override arcs 1 and 2."""
    d1 = domain.arc == 1 if d1 is None else d1
    d2 = domain.arc == 2 if d2 is None else d2
    fixed = np.full(domain.interior.shape, np.nan)
    fixed[d1] = 0.0
    fixed[d2] = 1.0
    # keep only interior pieces linked to a Dirichlet cell
    labels, _ = ndimage.label(domain.interior, structure=_FOUR)
    touch = ndimage.binary_dilation(d1 | d2, structure=_FOUR) & domain.interior
    keep = np.isin(labels, np.unique(labels[touch]))
    node = np.full(domain.interior.shape, -1, dtype=np.int64)
    node[keep] = np.arange(int(keep.sum()))
    grid = domain.grid
    if grid is not None and grid.inner_cap_mode is InnerCap.SUPER_NODE and domain.inner_free is not None:
        cap = np.zeros_like(keep)
        cap[0] = domain.inner_free & ~d1[0] & keep[1]
        if cap.any():
            node[cap] = int(keep.sum())
    return node, fixed


def _distance(domain: PathDomainSpec, node: np.ndarray, fixed: np.ndarray, tol: float) -> ExtremalResult:
    if not (fixed == 0.0).any() or not (fixed == 1.0).any():
        return ExtremalResult(math.inf, None)
    sol = solve_network(node, fixed, domain.h_theta / domain.h_u, domain.h_u / domain.h_theta, tol=tol)
    if sol.energy <= 0.0:
        return ExtremalResult(math.inf, sol)
    return ExtremalResult(math.pi / sol.energy, sol)


def pi_extremal_distance(domain: PathDomainSpec | None, tol: float = SOLVER_TOL) -> ExtremalResult:
    """pi-extremal distance between the inner and outer arcs of ``domain``.

    Infinite when the domain is absent or has no inner arc.
    """
    if domain is None or not domain.has_inner_arc:
        return ExtremalResult(math.inf, None)
    node, fixed = _network(domain)
    return _distance(domain, node, fixed, tol)


def extremal_between(domain: PathDomainSpec, d1: np.ndarray, d2: np.ndarray,
                     interior: np.ndarray | None = None, tol: float = SOLVER_TOL) -> float:
    """pi-extremal distance between two arbitrary cell sets of a domain window."""
    dom = domain if interior is None else replace(domain, interior=interior)
    node, fixed = _network(dom, d1, d2)
    return _distance(dom, node, fixed, tol).L


def exp_neg(lam: float, L: float | np.ndarray) -> float | np.ndarray:
    """``exp(-lam*L)`` with ``exp(-0*inf) = 0``."""
    L = np.asarray(L, dtype=float)
    out = np.where(np.isinf(L), 0.0, np.exp(-lam * np.where(np.isinf(L), 0.0, L)))
    return out if out.ndim else float(out)


# --- excursion mass ---------------------------------------------------------

def mass_series(L: float, eps: float = 0.0, terms: int = 2001) -> float:
    """Excursion mass of a ``L x pi`` rectangle from its Fourier series.

    With ``eps > 0`` returns ``pi/eps`` times the probability that Brownian
    motion started uniformly on the segment at abscissa ``eps`` exits
    through the far side.
    """
    k = np.arange(1, 2 * terms, 2, dtype=float)
    kL = k * L
    ok = kL < 700
    k, kL = k[ok], kL[ok]
    factor = np.ones_like(k) if eps == 0 else np.sinh(k * eps) / (k * eps)
    return float(np.sum(8.0 / (k * np.pi * np.sinh(kL)) * factor))


@dataclass(frozen=True)
class MassEstimate:
    L: float
    eps: float
    value: float
    stderr: float
    n: int
    hits: int


def _mass_kernel():
    import numba

    @numba.njit(cache=True)
    def kernel(L, eps, dt, thetas, normals_seed, n):
        np.random.seed(normals_seed)
        sd = math.sqrt(dt)
        hits = 0
        for i in range(n):
            u = eps
            t = thetas[i]
            while True:
                du = sd * np.random.standard_normal()
                dth = sd * np.random.standard_normal()
                u1 = u + du
                t1 = t + dth
                if u1 >= L:
                    hits += 1
                    break
                if u1 <= 0.0 or t1 <= 0.0 or t1 >= math.pi:
                    break
                # Brownian-bridge crossing between two interior samples
                crossed = False
                for a, b, right in ((u, u1, False), (L - u, L - u1, True),
                                    (t, t1, False), (math.pi - t, math.pi - t1, False)):
                    if a * b < 4.0 * dt:
                        if np.random.random() < math.exp(-2.0 * a * b / dt):
                            if right:
                                hits += 1
                            crossed = True
                            break
                if crossed:
                    break
                u = u1
                t = t1
        return hits

    return kernel


_MASS = None


def excursion_mass_rectangle(L: float, eps: float, dt: float, n: int,
                             seed: RandomSeed) -> MassEstimate:
    """Monte Carlo excursion mass ``(pi/eps) * P(exit through the far side)``.

    Brownian motion starts at abscissa ``eps`` with a uniform height in
    ``(0, pi)`` and is stepped with increments of variance ``dt``; a
    Brownian-bridge test between consecutive samples removes the
    first-order overshoot bias of discrete monitoring.
    """
    global _MASS
    if not 0 < eps < L:
        raise ValueError("need 0 < eps < L")
    if _MASS is None:
        _MASS = _mass_kernel()
    rng = as_generator(seed)
    thetas = rng.uniform(0.0, math.pi, size=n)
    inner = int(rng.integers(0, 2**31 - 1))
    hits = int(_MASS(float(L), float(eps), float(dt), thetas, inner, int(n)))
    p = hits / n
    scale = math.pi / eps
    return MassEstimate(L, eps, scale * p, scale * math.sqrt(max(p * (1 - p), 0.0) / n), n, hits)


# --- extremal-length lemmas --------------------------------------------------

@dataclass(frozen=True)
class LemmaOutcome:
    L_before: float
    L_after: float
    slack: float
    bound: float
    extra: tuple[float, ...] = ()

    @property
    def holds(self) -> bool:
        return self.slack <= self.bound


def subarc_constant(delta: float) -> float:
    """Area bound for the slab metric ``1/delta`` on a width-``delta`` slab of a cylinder."""
    return 2.0 * math.pi**2 / delta


def serial_cut_constant(delta: float) -> float:
    """Area bound for the metric ``1/delta`` on a width-``2 delta`` slab of a cylinder."""
    return 4.0 * math.pi**2 / delta


def _centers(domain: PathDomainSpec, mask: np.ndarray) -> np.ndarray:
    return domain.centers(np.argwhere(mask))


def _window_centers(domain: PathDomainSpec) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = domain.interior.shape
    u = domain.u_min + np.arange(rows) * domain.h_u
    th = (domain.col0 + np.arange(cols) + 0.5) * domain.h_theta
    return u[:, None], th[None, :]


def _near(points: np.ndarray, z: np.ndarray, radius: float) -> bool:
    if points.size == 0:
        return False
    return bool((np.hypot(points[:, 0] - z[0], points[:, 1] - z[1]) < radius).any())


def verify_disk_removal(domain: PathDomainSpec, delta: float, tol: float = SOLVER_TOL) -> LemmaOutcome:
    """Remove the ``delta``-disks around both inner corners and compare distances.

    The corners are the junctions of the inner arc with the lower and upper
    sides.  Requires ``delta < width - 1`` and that the ``4 delta`` disk at
    each corner avoids the opposite side.
    """
    if not domain.has_inner_arc:
        raise PreconditionError("domain has no inner arc")
    width = (domain.n_rows - 1) * domain.h_u
    if not delta < width - 1:
        raise PreconditionError("delta must be smaller than the annulus width minus one")
    z1, z2 = domain.inner_corners()
    if _near(_centers(domain, domain.arc == 4), z1, 4 * delta) or \
            _near(_centers(domain, domain.arc == 3), z2, 4 * delta):
        raise PreconditionError("corner disks of radius 4 delta meet the opposite side")
    before = pi_extremal_distance(domain, tol).L
    u, th = _window_centers(domain)
    # the inner corners sit on the lower edge of row 0's cells; use distances to cell centres
    disks = (np.hypot(u - z1[0], th - z1[1]) < delta) | (np.hypot(u - z2[0], th - z2[1]) < delta)
    interior = domain.interior & ~disks
    d1 = (domain.arc == 1) & ~disks
    after = extremal_between(domain, d1, domain.arc == 2, interior, tol)
    return LemmaOutcome(before, after, after - before, DISK_REMOVAL_BOUND)


def _slab_disconnects(domain: PathDomainSpec, v: np.ndarray, delta: float) -> bool:
    """Does the ``delta``-neighbourhood of ``v`` split the sides inside the first ``delta`` slab?"""
    u, th = _window_centers(domain)
    slab = np.broadcast_to((u - domain.u_min) < delta, domain.interior.shape) & domain.interior
    vp = _centers(domain, v)
    grid_u = np.broadcast_to(u, slab.shape)[slab]
    grid_t = np.broadcast_to(th, slab.shape)[slab]
    d = np.min(np.hypot(grid_u[:, None] - vp[None, :, 0], grid_t[:, None] - vp[None, :, 1]), axis=1)
    free = slab.copy()
    free[slab] = d >= delta
    labels, _ = ndimage.label(free, structure=_FOUR)
    lower = ndimage.binary_dilation(domain.arc == 3, structure=_FOUR)
    upper = ndimage.binary_dilation(domain.arc == 4, structure=_FOUR)
    a = set(np.unique(labels[lower & free]).tolist()) - {0}
    b = set(np.unique(labels[upper & free]).tolist()) - {0}
    return not (a & b)


def verify_subarc(domain: PathDomainSpec, v: np.ndarray, delta: float,
                  tol: float = SOLVER_TOL) -> LemmaOutcome:
    """Replace the inner arc by its sub-arc ``v`` (a boolean window mask) and compare distances."""
    v = np.asarray(v, dtype=bool) & (domain.arc == 1)
    if not v.any():
        raise PreconditionError("sub-arc is empty")
    cols = np.flatnonzero(v[0])
    if cols.size * domain.h_theta < delta - 1e-12:
        raise PreconditionError("sub-arc shorter than delta")
    vp = _centers(domain, v)
    sides = _centers(domain, (domain.arc == 3) | (domain.arc == 4))
    if sides.size:
        # distance from arc cells to side cells, measured between cell boundaries
        d = np.min(np.hypot(vp[:, None, 0] - sides[None, :, 0], vp[:, None, 1] - sides[None, :, 1]))
        if d - domain.h_theta <= delta:
            raise PreconditionError("sub-arc is within delta of the sides")
    if not _slab_disconnects(domain, v, delta):
        raise PreconditionError("delta-neighbourhood of the sub-arc does not separate the sides")
    full = pi_extremal_distance(domain, tol).L
    sub = extremal_between(domain, v, domain.arc == 2, None, tol)
    return LemmaOutcome(full, sub, sub - full, subarc_constant(delta))


def _diameter(p: np.ndarray) -> float:
    if len(p) < 2:
        return 0.0
    d = p[:, None, :] - p[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


def verify_serial_cut(domain: PathDomainSpec, s: float, delta: float,
                      tol: float = SOLVER_TOL) -> LemmaOutcome:
    """Cut the domain along the cross-cut at log-radius ``s``.

    Returns ``L_before = L``, ``L_after = L1 + L2`` and ``slack = L - L1 - L2``;
    ``extra`` holds ``(L1, L2)``.  The cut must sit in ``(1, width - 1)``
    from the inner circle, the side pieces within ``delta`` of it must have
    diameter below ``delta**(1/6)`` and be ``delta**(1/7)`` apart, and the
    component must meet the cut row in a single run.
    """
    if not domain.has_inner_arc:
        raise PreconditionError("domain has no inner arc")
    width = (domain.n_rows - 1) * domain.h_u
    rel = s - domain.u_min
    if not 1.0 < rel < width - 1.0:
        raise PreconditionError("cut must lie at distance more than one from both circles")
    row = int(round(rel / domain.h_u))
    u, _ = _window_centers(domain)
    band = np.broadcast_to(np.abs(u - s) < delta, domain.interior.shape)
    p3 = _centers(domain, (domain.arc == 3) & band)
    p4 = _centers(domain, (domain.arc == 4) & band)
    if p3.size == 0 or p4.size == 0:
        raise PreconditionError("sides do not reach the cut")
    if _diameter(p3) >= delta ** (1 / 6) or _diameter(p4) >= delta ** (1 / 6):
        raise PreconditionError("side pieces near the cut are too large")
    gap = np.min(np.hypot(p3[:, None, 0] - p4[None, :, 0], p3[:, None, 1] - p4[None, :, 1]))
    if gap < delta ** (1 / 7):
        raise PreconditionError("sides are too close near the cut")
    cut = np.zeros_like(domain.interior)
    cut[row] = domain.interior[row]
    runs = np.flatnonzero(np.diff(np.concatenate(([0], cut[row].astype(np.int8), [0]))) == 1)
    if runs.size != 1:
        raise PreconditionError("cross-cut is not unique")
    full = pi_extremal_distance(domain, tol).L
    below = domain.interior.copy()
    below[row:] = False
    above = domain.interior.copy()
    above[:row + 1] = False
    L1 = extremal_between(domain, domain.arc == 1, cut, below, tol)
    L2 = extremal_between(domain, cut, domain.arc == 2, above, tol)
    return LemmaOutcome(full, L1 + L2, full - L1 - L2, serial_cut_constant(delta), (L1, L2))
