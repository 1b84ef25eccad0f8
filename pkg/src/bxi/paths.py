"""Planar Brownian paths, annulus upcrossings and conditioned extensions.

All paths are simulated in log-cylinder coordinates ``w = log z = u + i*theta``
with the angle unwrapped.  Under ``w = log z`` a planar Brownian trace maps
to the trace of a (time-changed) planar Brownian motion, so every event in
this package, which only depends on traces, is sampled exactly in law up to
the Euler step ``dt`` in the cylinder.  This keeps the cost of reaching the
circle of radius ``e**r`` polynomial in ``r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .rng import RandomSeed, as_generator

TWO_PI = 2.0 * math.pi
DEFAULT_STEP_CAP = 10**10
DEFAULT_INNER_CUTOFF = -4.0
_MAX_CHUNK = 1 << 18


class StepCapExceeded(RuntimeError):
    """A walk ran past its step budget; almost always a misconfigured dt."""


class PathKind(Enum):
    FULL_PATH = "full_path"
    UPCROSSING = "upcrossing"
    EXTENSION = "extension"


@dataclass(frozen=True)
class AnnulusSpec:
    r_in: float
    r_out: float

    def __post_init__(self) -> None:
        if not self.r_in < self.r_out:
            raise ValueError(f"annulus needs r_in < r_out, got ({self.r_in}, {self.r_out})")

    @property
    def width(self) -> float:
        return self.r_out - self.r_in


def tol(dt: float) -> float:
    """Hitting tolerance for a walk with step ``dt``."""
    return 5.0 * math.sqrt(dt)


@dataclass(frozen=True, eq=False)
class SampledPath:
    """A discretised trace.

    ``log_points[:, 0]`` is the log-radius and ``log_points[:, 1]`` the
    unwrapped angle.  ``breaks`` lists indices ``i`` such that the step
    ``i -> i+1`` is an exact jump over a region the path is known to stay in
    (see :func:`sample_full_path`) rather than a Gaussian increment; such
    steps are never interpolated.
    """

    log_points: np.ndarray
    dt: float
    kind: PathKind
    hit_indices: dict[float, int] = field(default_factory=dict)
    annulus: AnnulusSpec | None = None
    breaks: tuple[int, ...] = ()
    last_exit_index: int | None = None
    attempts: int = 1
    complete: bool = True

    @property
    def u(self) -> np.ndarray:
        return self.log_points[:, 0]

    @property
    def theta(self) -> np.ndarray:
        return self.log_points[:, 1]

    @property
    def points(self) -> np.ndarray:
        """Planar coordinates, shape ``(n, 2)``."""
        r = np.exp(self.u)
        return np.column_stack((r * np.cos(self.theta), r * np.sin(self.theta)))

    @property
    def complex_points(self) -> np.ndarray:
        return np.exp(self.u + 1j * self.theta)

    def __len__(self) -> int:
        return len(self.log_points)

    @property
    def end(self) -> tuple[float, float]:
        u, th = self.log_points[-1]
        return float(u), float(th)

    @property
    def start(self) -> tuple[float, float]:
        u, th = self.log_points[0]
        return float(u), float(th)

    @property
    def end_angle(self) -> float:
        return float(self.log_points[-1, 1] % TWO_PI)

    def first_hit(self, level: float) -> int | None:
        return first_hit_index(self.u, level)

    def rotated(self, phi: float) -> SampledPath:
        pts = self.log_points.copy()
        pts[:, 1] += phi
        return replace(self, log_points=pts)


def first_hit_index(u: np.ndarray, level: float) -> int | None:
    """First index at which ``u`` reaches ``level`` from its starting side."""
    if level >= u[0]:
        hits = np.flatnonzero(u >= level)
    else:
        hits = np.flatnonzero(u <= level)
    return int(hits[0]) if hits.size else None


def _levels_hit(u: np.ndarray, lo: float, hi: float) -> dict[float, int]:
    out: dict[float, int] = {}
    up = np.maximum.accumulate(u)
    down = np.minimum.accumulate(u)
    u0 = u[0]
    for k in range(math.ceil(2 * lo), math.floor(2 * hi) + 1):
        level = k / 2.0
        if level >= u0:
            if up[-1] >= level:
                out[level] = int(np.searchsorted(up, level, side="left"))
        elif down[-1] <= level:
            out[level] = int(np.searchsorted(-down, -level, side="left"))
    return out


def _expected_steps(u0: float, lo: float, hi: float, dt: float) -> int:
    if math.isfinite(lo):
        t = (u0 - lo) * (hi - u0)
    else:
        t = (hi - u0) ** 2
    return int(min(max(1.5 * t / dt, 64), _MAX_CHUNK))


def _walk(u0: float, th0: float, lo: float, hi: float, dt: float,
          rng: np.random.Generator, cap: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """Gaussian walk in the cylinder from ``(u0, th0)`` until ``u`` leaves ``(lo, hi)``.

    Between grid times ``u`` is a Brownian bridge, and each step tests whether
    the bridge crossed a level (probability ``exp(-2 a b / dt)`` for distances
    ``a, b`` to it), so the exit side and step are exact in law for any
    ``dt``.  The returned arrays start at the initial point and end on the
    exit level, placed by linear interpolation (at mid-step when the exit is
    detected by the bridge test).  The flag is True for an exit through ``hi``.
    """
    sd = math.sqrt(dt)
    us = [np.array([u0])]
    ths = [np.array([th0])]
    cu, ct = u0, th0
    chunk = _expected_steps(u0, lo, hi, dt)
    taken = 0
    while True:
        inc = rng.standard_normal((2, chunk))
        uu = cu + np.cumsum(inc[0]) * sd
        tt = ct + np.cumsum(inc[1]) * sd
        prev = np.concatenate(([cu], uu[:-1]))
        ph = np.exp(-2.0 * np.maximum(hi - prev, 0.0) * np.maximum(hi - uu, 0.0) / dt)
        pl = np.exp(-2.0 * np.maximum(prev - lo, 0.0) * np.maximum(uu - lo, 0.0) / dt)
        uni = rng.random((2, chunk))
        fire_h = uni[0] < ph
        fire_l = uni[1] < pl
        out = fire_h | fire_l
        if out.any():
            k = int(np.argmax(out))
            pu = uu[k - 1] if k else cu
            pt = tt[k - 1] if k else ct
            upper = bool(fire_h[k] and (not fire_l[k] or ph[k] >= pl[k]))
            level = hi if upper else lo
            beyond = uu[k] >= hi if upper else uu[k] <= lo
            frac = (level - pu) / (uu[k] - pu) if beyond else 0.5
            us.append(uu[:k])
            ths.append(tt[:k])
            us.append(np.array([level]))
            ths.append(np.array([pt + frac * (tt[k] - pt)]))
            return np.concatenate(us), np.concatenate(ths), upper
        us.append(uu)
        ths.append(tt)
        cu, ct = uu[-1], tt[-1]
        taken += chunk
        if taken > cap:
            raise StepCapExceeded(f"walk from u={u0:.3f} exceeded {cap} steps (dt={dt})")
        chunk = min(2 * chunk, _MAX_CHUNK)


def _disk_exit_angle(theta: float, depth: float, rng: np.random.Generator) -> float:
    """Angle where a Brownian motion at ``e**-depth * e**(i theta)`` leaves the unit disk.

    Harmonic measure from ``zeta`` is the image of the uniform law under the
    disk automorphism sending 0 to ``zeta``.  The result is unwrapped to the
    branch nearest ``theta``.
    """
    zeta = math.exp(-depth) * complex(math.cos(theta), math.sin(theta))
    e = complex(math.cos(v := rng.uniform(0.0, TWO_PI)), math.sin(v))
    w = (e + zeta) / (1.0 + zeta.conjugate() * e)
    d = math.atan2(w.imag, w.real) - theta
    return theta + (d + math.pi) % TWO_PI - math.pi


def sample_full_path(r: float, dt: float, seed: RandomSeed | np.random.Generator, *,
                     start_angle: float | None = None,
                     inner_cutoff: float = DEFAULT_INNER_CUTOFF,
                     stop_below: float | None = None,
                     step_cap: int = DEFAULT_STEP_CAP) -> SampledPath:
    """Brownian motion from a uniform point of the unit circle until it hits ``C_r``.

    Whenever the walk reaches log-radius ``inner_cutoff - 1`` it is moved, exactly
    in law, to its exit point from the disk of log-radius ``inner_cutoff``; the
    trace it skips lies inside that disk.  Consumers must therefore treat the
    trace below ``inner_cutoff`` as unknown (grids are clamped there).

    If ``stop_below`` is given the walk is abandoned as soon as it reaches that
    log-radius and the path is returned with ``complete=False``.
    """
    if r <= 0 or dt <= 0:
        raise ValueError("need r > 0 and dt > 0")
    if inner_cutoff > -1:
        raise ValueError("inner_cutoff must be at most -1")
    rng = as_generator(seed)
    th = rng.uniform(0.0, TWO_PI) if start_angle is None else float(start_angle)
    jump_level = inner_cutoff - 1.0
    lo = jump_level if stop_below is None else max(jump_level, stop_below)
    us: list[np.ndarray] = []
    ths: list[np.ndarray] = []
    breaks: list[int] = []
    n = 0
    u = 0.0
    budget = step_cap
    complete = True
    while True:
        su, st, upper = _walk(u, th, lo, r, dt, rng, budget)
        us.append(su)
        ths.append(st)
        n += len(su)
        budget -= len(su)
        if upper:
            break
        if stop_below is not None and lo > jump_level:
            complete = False
            break
        breaks.append(n - 1)
        th = _disk_exit_angle(float(st[-1]), 1.0, rng)
        u = inner_cutoff
    pts = np.column_stack((np.concatenate(us), np.concatenate(ths)))
    return _finish_full(pts, dt, tuple(breaks), complete, hi=r if complete else float(pts[:, 0].max()))


def _finish_full(pts: np.ndarray, dt: float, breaks: tuple[int, ...], complete: bool,
                 hi: float) -> SampledPath:
    u = pts[:, 0]
    hits = _levels_hit(u, -2.0, hi)
    last_exit = None
    if complete:
        below = np.flatnonzero(u <= 0.0)
        last_exit = int(below[-1])
    return SampledPath(pts, dt, PathKind.FULL_PATH, hits, None, breaks, last_exit, 1, complete)


def sample_upcrossing(annulus: AnnulusSpec, dt: float, seed: RandomSeed | np.random.Generator, *,
                      start_angle: float | None = None,
                      step_cap: int = DEFAULT_STEP_CAP) -> SampledPath:
    """Upcrossing of ``annulus``: log-radius is a Bessel(3) process from 0.

    The Bessel process is realised as the norm of a three-dimensional Gaussian
    walk, so its law is exact at grid times; the angle is an independent
    Brownian motion from a uniform point.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = as_generator(seed)
    th0 = rng.uniform(0.0, TWO_PI) if start_angle is None else float(start_angle)
    target = annulus.width
    sd = math.sqrt(dt)
    x = np.zeros(3)
    ct = th0
    rhos = [np.array([0.0])]
    ths = [np.array([th0])]
    chunk = int(min(max(target**2 / (3 * dt) * 1.5, 64), _MAX_CHUNK))
    taken = 0
    while True:
        inc = rng.standard_normal((4, chunk)) * sd
        xyz = x[:, None] + np.cumsum(inc[:3], axis=1)
        rho = np.sqrt(np.einsum("ij,ij->j", xyz, xyz))
        tt = ct + np.cumsum(inc[3])
        hit = rho >= target
        if hit.any():
            k = int(np.argmax(hit))
            pr = rho[k - 1] if k else float(np.linalg.norm(x))
            pt = tt[k - 1] if k else ct
            frac = (target - pr) / (rho[k] - pr)
            rhos += [rho[:k], np.array([target])]
            ths += [tt[:k], np.array([pt + frac * (tt[k] - pt)])]
            break
        rhos.append(rho)
        ths.append(tt)
        x = xyz[:, -1]
        ct = tt[-1]
        taken += chunk
        if taken > step_cap:
            raise StepCapExceeded(f"upcrossing exceeded {step_cap} steps (dt={dt})")
        chunk = min(2 * chunk, _MAX_CHUNK)
    pts = np.column_stack((annulus.r_in + np.concatenate(rhos), np.concatenate(ths)))
    return _make_upcrossing(pts, dt, annulus)


def _make_upcrossing(pts: np.ndarray, dt: float, annulus: AnnulusSpec,
                     kind: PathKind = PathKind.UPCROSSING, attempts: int = 1) -> SampledPath:
    hits = _levels_hit(pts[:, 0], annulus.r_in, annulus.r_out)
    return SampledPath(pts, dt, kind, hits, annulus, (), None, attempts, True)


def extract_upcrossing(path: SampledPath) -> SampledPath:
    """The upcrossing ``Y[S_r, T_r]`` of a complete full path."""
    if path.kind is not PathKind.FULL_PATH or not path.complete:
        raise ValueError("need a complete FULL_PATH")
    i = path.last_exit_index
    u, th = path.u, path.theta
    if u[i] == 0.0:
        head = path.log_points[i:i + 1]
    else:
        frac = (0.0 - u[i]) / (u[i + 1] - u[i])
        head = np.array([[0.0, th[i] + frac * (th[i + 1] - th[i])]])
    pts = np.vstack((head, path.log_points[i + 1:]))
    return _make_upcrossing(pts, path.dt, AnnulusSpec(0.0, float(u[-1])))


def initial_part(path: SampledPath) -> SampledPath:
    """``Y[T_0, S_r]`` of a complete full path (kept as FULL_PATH, incomplete)."""
    i = path.last_exit_index
    pts = path.log_points[: i + 1]
    breaks = tuple(b for b in path.breaks if b < i)
    return SampledPath(pts, path.dt, PathKind.FULL_PATH, _levels_hit(pts[:, 0], -2.0, float(pts[:, 0].max())),
                       None, breaks, None, 1, False)


def truncate_at(path: SampledPath, level: float) -> SampledPath:
    """Prefix of ``path`` up to its first hit of ``level``, ending on that circle."""
    k = path.first_hit(level)
    if k is None:
        raise ValueError(f"path never reaches log-radius {level}")
    u, th = path.u, path.theta
    if u[k] == level or k == 0:
        pts = path.log_points[: k + 1].copy()
    else:
        frac = (level - u[k - 1]) / (u[k] - u[k - 1])
        last = np.array([[level, th[k - 1] + frac * (th[k] - th[k - 1])]])
        pts = np.vstack((path.log_points[:k], last))
    breaks = tuple(b for b in path.breaks if b < len(pts) - 1)
    if path.kind is PathKind.FULL_PATH:
        return _finish_full(pts, path.dt, breaks, True, hi=level)
    base = path.annulus.r_in if path.annulus else float(pts[0, 0])
    return _make_upcrossing(pts, path.dt, AnnulusSpec(base, level), path.kind)


def extend_conditioned(path: SampledPath, r_prime: float, dt: float,
                       seed: RandomSeed | np.random.Generator, *,
                       max_attempts: int = 10**7,
                       step_cap: int = DEFAULT_STEP_CAP) -> SampledPath:
    """Continue ``path`` from its endpoint on ``C_r`` to ``C_{r_prime}``.

    The continuation is a Brownian motion conditioned to reach ``C_{r_prime}``
    before the inner circle of the path's annulus (``C_0`` by default),
    realised by rejection.  ``attempts`` on the result counts proposals.
    """
    inner = path.annulus.r_in if path.annulus is not None else 0.0
    r, th = path.end
    if path.annulus is not None and abs(r - path.annulus.r_out) > tol(path.dt):
        raise ValueError("path does not end on its outer circle")
    if r <= inner:
        raise ValueError("path must end outside the inner circle")
    if not r_prime > r:
        raise ValueError(f"degenerate target: r_prime={r_prime} must exceed r={r}")
    rng = as_generator(seed)
    for attempt in range(1, max_attempts + 1):
        su, st, upper = _walk(r, th, inner, r_prime, dt, rng, step_cap)
        if upper:
            pts = np.column_stack((su, st))
            return _make_upcrossing(pts, dt, AnnulusSpec(inner, r_prime), PathKind.EXTENSION, attempt)
    raise RuntimeError(f"no accepted extension in {max_attempts} attempts")


def concatenate(first: SampledPath, second: SampledPath) -> SampledPath:
    """Join two paths, dropping the shared junction point when duplicated."""
    a, b = first.log_points, second.log_points
    if np.array_equal(a[-1], b[0]):
        b = b[1:]
    pts = np.vstack((a, b))
    if first.kind is PathKind.FULL_PATH:
        breaks = first.breaks + tuple(len(a) + i for i in second.breaks)
        return _finish_full(pts, first.dt, breaks, True, hi=float(pts[-1, 0]))
    base = first.annulus.r_in if first.annulus else float(a[0, 0])
    return _make_upcrossing(pts, first.dt, AnnulusSpec(base, float(pts[-1, 0])))


def invert_reverse(path: SampledPath) -> SampledPath:
    """Time reversal of ``1/B``: an upcrossing of ``A(r, r')`` becomes one of ``A(-r', -r)``."""
    if path.kind is not PathKind.UPCROSSING:
        raise ValueError("invert_reverse expects an UPCROSSING")
    pts = -path.log_points[::-1]
    ann = path.annulus
    return _make_upcrossing(np.ascontiguousarray(pts), path.dt, AnnulusSpec(-ann.r_out, -ann.r_in))


def decompose_upcrossing(path: SampledPath, r_mid: float) -> tuple[SampledPath, SampledPath]:
    """Split an upcrossing at its first hit of ``C_{r_mid}``.

    The parts share the junction sample, so joining them with
    :func:`concatenate` returns the original sequence.  No interpolated point
    is inserted; the first part therefore ends within one step of the circle.
    """
    ann = path.annulus
    if path.kind is not PathKind.UPCROSSING or ann is None:
        raise ValueError("decompose_upcrossing expects an UPCROSSING")
    if not ann.r_in < r_mid < ann.r_out:
        raise ValueError("r_mid must lie strictly inside the annulus")
    k = path.first_hit(r_mid)
    head = path.log_points[: k + 1]
    tail = path.log_points[k:]
    first = SampledPath(head, path.dt, PathKind.UPCROSSING, _levels_hit(head[:, 0], ann.r_in, r_mid),
                        AnnulusSpec(ann.r_in, r_mid))
    second = SampledPath(tail, path.dt, PathKind.EXTENSION, _levels_hit(tail[:, 0], r_mid, ann.r_out),
                         AnnulusSpec(ann.r_in, ann.r_out))
    return first, second


def from_log_points(log_points, dt: float = 1e-4, kind: PathKind = PathKind.FULL_PATH,
                    annulus: AnnulusSpec | None = None) -> SampledPath:
    """Wrap a hand-made polyline (tests, synthetic configurations)."""
    pts = np.asarray(log_points, dtype=float).reshape(-1, 2)
    u = pts[:, 0]
    if annulus is not None:
        return SampledPath(pts, dt, kind, _levels_hit(u, annulus.r_in, annulus.r_out), annulus)
    hits = _levels_hit(u, float(u.min()), float(u.max()))
    return SampledPath(pts, dt, kind, hits, None, (), None, 1, True)


def from_planar_points(xy, dt: float = 1e-4, kind: PathKind = PathKind.FULL_PATH,
                       annulus: AnnulusSpec | None = None) -> SampledPath:
    """Polyline given in the plane; the angle is unwrapped along the sequence."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    z = xy[:, 0] + 1j * xy[:, 1]
    if np.any(z == 0):
        raise ValueError("planar points must avoid the origin")
    th = np.unwrap(np.angle(z))
    return from_log_points(np.column_stack((np.log(np.abs(z)), th)), dt, kind, annulus)
