"""Conditional expectations given a configuration: separation ratio and R-quantities.

Given two upcrossings of ``A(0, n)`` we extend each by an independent
Brownian motion conditioned to reach ``C_m`` before ``C_0`` and average
``exp(-lam L_m)`` over extensions, with or without the event that the new
configuration is very nice at the end.  That event pins both endpoint
angles to windows of width 0.1, so extensions are drawn from an exact
importance sampler:

* the radial walk is run in two stages, to ``C_{m-1/3}`` and then to
  ``C_m``;
* in the first stage the angle is a Gaussian walk whose final value is drawn
  from a defensive mixture of its true law and uniform windows around the
  target direction, filled in with a discrete Brownian bridge; the
  likelihood ratio is bounded by ``1 / (1 - mix)``;
* for the second stage a batch of free tails is run from the first-stage
  exit and one tail meeting the end-of-path requirements is kept at random;
  the fraction of qualifying tails, divided by the probability of reaching
  ``C_m`` before ``C_0``, is an unbiased weight.

The unrestricted mean is split as the restricted part (from the guided
sampler) plus the complement (from plain extensions), so every ratio lies
in ``[0, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimators import DEFAULT_H, END_WINDOW, TAIL_WEDGE, TRIAL_ERRORS, _wrap, assemble_config
from .extremal import exp_neg
from .parallel import Failed, guarded_map
from .paths import (TWO_PI, AnnulusSpec, PathKind, SampledPath, _make_upcrossing, concatenate,
                    sample_upcrossing)
from .rng import RandomSeed

STAGE_DROP = 1.0 / 3.0
TAIL_FLOOR = 0.5
MIX = 0.8
WINDOW_MID = 0.1
TOP_BAND = 0.2
TAIL_BATCH = 256
_CHUNK = 1 << 14


def _radial(u0: float, lo: float, hi: float, dt: float, rng: np.random.Generator,
            reject_low: bool = True, cap: int = 10**9) -> tuple[np.ndarray, float, int]:
    """Gaussian walk from ``u0`` until it leaves ``(lo, hi)``; lower exits are retried.

    Returns the full-step values ``u_1..u_K`` (the last one outside the
    interval), the interpolation fraction of the exit point within step ``K``
    and the number of attempts.
    """
    sd = math.sqrt(dt)
    attempts = 0
    while True:
        attempts += 1
        parts = []
        cu = u0
        taken = 0
        while True:
            uu = cu + np.cumsum(rng.standard_normal(_CHUNK)) * sd
            out = (uu >= hi) | (uu <= lo)
            if out.any():
                k = int(np.argmax(out))
                parts.append(uu[: k + 1])
                upper = bool(uu[k] >= hi)
                break
            parts.append(uu)
            cu = uu[-1]
            taken += _CHUNK
            if taken > cap:
                raise RuntimeError("radial walk exceeded its step cap")
        steps = np.concatenate(parts)
        if upper or not reject_low:
            prev = steps[-2] if steps.size > 1 else u0
            level = hi if upper else lo
            frac = (level - prev) / (steps[-1] - prev)
            return steps, float(frac), attempts


def _gauss_pdf(x: float, mu: float, var: float) -> float:
    return math.exp(-0.5 * (x - mu) ** 2 / var) / math.sqrt(TWO_PI * var)


def _window_mixture(mu: float, var: float, target: float, half: float, mix: float,
                    rng: np.random.Generator) -> tuple[float, float]:
    """Draw from ``(1-mix) N(mu, var) + mix * windows`` and return (value, p/q).

    The windows sit at ``target + 2 pi k`` with probabilities proportional to
    the Gaussian density there, each uniform of half-width ``half``.
    """
    sd = math.sqrt(var)
    k0 = math.floor((mu - 6 * sd - target) / TWO_PI)
    k1 = math.ceil((mu + 6 * sd - target) / TWO_PI)
    centres = target + TWO_PI * np.arange(k0, k1 + 1)
    dens = np.exp(-0.5 * (centres - mu) ** 2 / var)
    if dens.sum() <= 0:
        centres = np.array([target + TWO_PI * round((mu - target) / TWO_PI)])
        dens = np.ones(1)
    probs = dens / dens.sum()
    if rng.random() < mix:
        c = centres[rng.choice(len(centres), p=probs)]
        x = c + rng.uniform(-half, half)
    else:
        x = rng.normal(mu, sd)
    p = _gauss_pdf(x, mu, var)
    inside = np.abs(x - centres) <= half
    q = (1 - mix) * p + mix * float(np.sum(probs[inside])) / (2 * half)
    return float(x), p / q


def _angle_walk(th0: float, k: int, dt: float, rng: np.random.Generator,
                pinned: float | None = None) -> np.ndarray:
    """``th_1..th_K`` of a Gaussian walk from ``th0``, optionally bridged to ``th_K = pinned``."""
    w = np.cumsum(rng.standard_normal(k)) * math.sqrt(dt)
    if pinned is None:
        return th0 + w
    return th0 + w - np.arange(1, k + 1) / k * (w[-1] - (pinned - th0))


def _stage_points(u_start: float, th_start: float, us: np.ndarray, ths: np.ndarray,
                  frac: float, level: float) -> np.ndarray:
    """Recorded points of one stage: start, full steps except the last, interpolated exit."""
    th_prev = ths[-2] if ths.size > 1 else th_start
    end = np.array([[level, th_prev + frac * (ths[-1] - th_prev)]])
    body = np.column_stack((us[:-1], ths[:-1]))
    return np.vstack(([[u_start, th_start]], body, end))


def _tail_batch(u0: float, th0: float, floor: float, top: float, dt: float, m: int,
                target: float, rng: np.random.Generator) -> tuple[np.ndarray, list[np.ndarray]]:
    """``m`` independent walks from ``(u0, th0)`` until they leave ``(floor, top)``.

    Returns the mask of walks meeting the end-of-path requirements (upper
    exit, wedge near the top, endpoint window) and the recorded points of
    the accepted ones.
    """
    sd = math.sqrt(dt)
    u = np.full((m, 0), u0)
    th = np.full((m, 0), th0)
    chunk = 256
    while True:
        lu = u[:, -1:] if u.shape[1] else np.full((m, 1), u0)
        lt = th[:, -1:] if th.shape[1] else np.full((m, 1), th0)
        u = np.hstack((u, lu + np.cumsum(rng.standard_normal((m, chunk)) * sd, axis=1)))
        th = np.hstack((th, lt + np.cumsum(rng.standard_normal((m, chunk)) * sd, axis=1)))
        out = (u >= top) | (u <= floor)
        if out.any(axis=1).all():
            break
    steps = u.shape[1]
    k = np.argmax(out, axis=1)
    idx = np.arange(m)
    upper = u[idx, k] >= top
    prev_u = np.where(k > 0, u[idx, np.maximum(k - 1, 0)], u0)
    prev_th = np.where(k > 0, th[idx, np.maximum(k - 1, 0)], th0)
    frac = (top - prev_u) / (u[idx, k] - prev_u)
    th_end = prev_th + frac * (th[idx, k] - prev_th)
    alive = np.arange(steps)[None, :] < k[:, None]
    near = alive & (u > top - TOP_BAND)
    bad_wedge = (near & (_wrap(th, target) > TAIL_WEDGE)).any(axis=1)
    ok = upper & ~bad_wedge & (_wrap(th_end, target) <= END_WINDOW)
    pts = []
    for i in np.flatnonzero(ok):
        body = np.column_stack((u[i, : k[i]], th[i, : k[i]]))
        pts.append(np.vstack(([[u0, th0]], body, [[top, th_end[i]]])))
    return ok, pts


@dataclass(frozen=True)
class Extension:
    path: SampledPath
    weight: float


def extend_two_stage(path: SampledPath, r_prime: float, dt: float, rng: np.random.Generator,
                     target: float | None = None, tail_batch: int = TAIL_BATCH) -> Extension | None:
    """Conditioned extension of ``path`` to ``C_{r_prime}`` in two radial stages.

    With ``target`` None this is the plain law (weight 1).  Otherwise the
    extension is steered so that the end-of-path requirements toward
    ``target`` hold, and ``weight`` is an unbiased likelihood-ratio estimate:
    ``E[weight * f]`` equals the plain mean of ``f`` times the indicator of
    those requirements.  Returns None when no tail in the batch qualified
    (weight zero).
    """
    r, th0 = path.end
    mid = r_prime - STAGE_DROP
    if not mid > r:
        raise ValueError("extension must span more than one third of a unit")
    us1, f1, _ = _radial(r, 0.0, mid, dt, rng)
    k1 = us1.size
    weight = 1.0
    if target is None:
        ths1 = _angle_walk(th0, k1, dt, rng)
    else:
        pin, w = _window_mixture(th0, k1 * dt, target, WINDOW_MID, MIX, rng)
        weight *= w
        ths1 = _angle_walk(th0, k1, dt, rng, pin)
    p1 = _stage_points(r, th0, us1, ths1, f1, mid)
    th_mid = float(p1[-1, 1])
    if target is None:
        us2, f2, _ = _radial(mid, 0.0, r_prime, dt, rng)
        ths2 = _angle_walk(th_mid, us2.size, dt, rng)
        p2 = _stage_points(mid, th_mid, us2, ths2, f2, r_prime)
    else:
        ok, tails = _tail_batch(mid, th_mid, r_prime - TAIL_FLOOR, r_prime, dt, tail_batch,
                                target, rng)
        if not tails:
            return None
        # the plain tail is conditioned to reach r_prime before 0, which has probability mid / r_prime
        weight *= ok.sum() / tail_batch / (mid / r_prime)
        p2 = tails[int(rng.integers(len(tails)))]
    pts = np.vstack((p1, p2[1:]))
    ext = _make_upcrossing(pts, dt, AnnulusSpec(0.0, r_prime), PathKind.EXTENSION)
    return Extension(ext, weight)


def _tail_ok(p: SampledPath, rp: float, centre: float) -> bool:
    u, th = p.u, p.theta
    k = p.first_hit(rp - STAGE_DROP)
    if k is None or np.any(u[k:] <= rp - TAIL_FLOOR):
        return False
    top = (u > rp - TOP_BAND) & (u < rp)
    if np.any(_wrap(th[top], centre) > TAIL_WEDGE):
        return False
    return bool(_wrap(th[-1], centre) <= END_WINDOW)


@dataclass(frozen=True)
class ConditionalMeans:
    """Per-lambda ``E[1_G e^{-lam L}]`` and ``E[1_{not G} e^{-lam L}]`` given a configuration."""

    lambdas: tuple[float, ...]
    restricted: np.ndarray
    complement: np.ndarray
    n_guided: int
    n_plain: int
    g_hits: int

    @property
    def total(self) -> np.ndarray:
        return self.restricted + self.complement


def conditional_means(b1: SampledPath, b2: SampledPath, r_prime: float, lambdas, n_guided: int,
                      n_plain: int, dt: float, h: float, seed: RandomSeed,
                      use_min: bool = False) -> ConditionalMeans:
    """Monte Carlo means over extensions of ``(b1, b2)`` to ``C_{r_prime}``.

    ``use_min`` selects ``L = min(L1, L2)``; otherwise ``L1`` is used.
    """
    lambdas = tuple(float(x) for x in lambdas)
    lam = np.array(lambdas)
    rng_g = seed.child(1).generator()
    rng_p = seed.child(2).generator()
    restricted = np.zeros(len(lam))
    hits = 0
    for _ in range(n_guided):
        e1 = extend_two_stage(b1, r_prime, dt, rng_g, target=0.0)
        e2 = extend_two_stage(b2, r_prime, dt, rng_g, target=math.pi)
        if e1 is None or e2 is None:
            continue
        c1, c2 = concatenate(b1, e1.path), concatenate(b2, e2.path)
        if not (_tail_ok(c1, r_prime, 0.0) and _tail_ok(c2, r_prime, math.pi)):
            continue
        cfg = assemble_config(c1, c2, h, domain_one_only=not use_min)
        if not math.isfinite(cfg.L1):
            continue
        hits += 1
        restricted += e1.weight * e2.weight * exp_neg(1.0, lam * (cfg.L if use_min else cfg.L1))
    complement = np.zeros(len(lam))
    for _ in range(n_plain):
        e1 = extend_two_stage(b1, r_prime, dt, rng_p)
        e2 = extend_two_stage(b2, r_prime, dt, rng_p)
        c1, c2 = concatenate(b1, e1.path), concatenate(b2, e2.path)
        cfg = assemble_config(c1, c2, h, domain_one_only=not use_min)
        g = math.isfinite(cfg.L1) and _tail_ok(c1, r_prime, 0.0) and _tail_ok(c2, r_prime, math.pi)
        if g:
            continue
        complement += np.asarray(exp_neg(1.0, lam * (cfg.L if use_min else cfg.L1)))
    restricted /= max(n_guided, 1)
    complement /= max(n_plain, 1)
    return ConditionalMeans(lambdas, restricted, complement, n_guided, n_plain, hits)


def outer_pair(n: float, dt: float, seed: RandomSeed) -> tuple[SampledPath, SampledPath]:
    return tuple(sample_upcrossing(AnnulusSpec(0.0, n), dt, seed.child(j)) for j in (1, 2))


@dataclass(frozen=True)
class SeparationResult:
    """Per-configuration ratios (NaN where the denominator vanished) and their summary."""

    n: float
    lam: float
    ratios: np.ndarray
    excluded: int

    @property
    def valid(self) -> np.ndarray:
        return self.ratios[~np.isnan(self.ratios)]

    @property
    def minimum(self) -> float:
        v = self.valid
        return float(v.min()) if v.size else math.nan

    def summary(self) -> dict[str, float]:
        v = self.valid
        if v.size == 0:
            return {"count": 0, "excluded": self.excluded}
        q = np.quantile(v, [0.0, 0.1, 0.5, 0.9, 1.0])
        return {"count": int(v.size), "excluded": int(self.excluded), "min": float(q[0]),
                "p10": float(q[1]), "median": float(q[2]), "p90": float(q[3]), "max": float(q[4]),
                "mean": float(v.mean())}


def _sep_trial(args) -> ConditionalMeans:
    n, lambdas, n_guided, n_plain, dt, h, seed = args
    b1, b2 = outer_pair(n, dt, seed.child(0))
    return conditional_means(b1, b2, n + 1, lambdas, n_guided, n_plain, dt, h, seed.child(9))


def separation_trials(n: float, lambdas, n_outer: int, n_inner: int, dt: float, h: float,
                      seed: int, workers: int = 1, n_plain: int | None = None) -> list[ConditionalMeans]:
    tasks = [(n, tuple(lambdas), n_inner, n_plain or n_inner, dt, h, RandomSeed(seed, i))
             for i in range(n_outer)]
    return guarded_map(_sep_trial, tasks, workers, TRIAL_ERRORS)


def separation_from_trials(trials: list[ConditionalMeans], n: float, lam: float) -> SeparationResult:
    ratios = []
    for t in trials:
        if isinstance(t, Failed):
            ratios.append(math.nan)
            continue
        j = t.lambdas.index(float(lam))
        den = t.total[j]
        ratios.append(t.restricted[j] / den if den > 0 else math.nan)
    ratios = np.array(ratios)
    return SeparationResult(float(n), float(lam), ratios, int(np.isnan(ratios).sum()))


def separation_ratio(n: float, lam: float, n_outer: int, n_inner: int, dt: float = 6.25e-4,
                     h: float = DEFAULT_H, seed: int = 0, workers: int = 1) -> SeparationResult:
    """Ratio of the very-nice-restricted to the unrestricted conditional mean of ``exp(-lam L1)``.

    For each of ``n_outer`` configurations at radius ``n`` the means are
    taken over ``n_inner`` extensions to radius ``n + 1``.  Configurations
    with zero denominator are excluded and counted.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    trials = separation_trials(n, [lam], n_outer, n_inner, dt, h, seed, workers)
    return separation_from_trials(trials, n, lam)


@dataclass(frozen=True)
class RResult:
    """``R_{n,m}`` and ``R*_{n,m}`` per configuration (NaN when undefined)."""

    n: float
    m: float
    lam: float
    xi: float
    R: np.ndarray
    R_star: np.ndarray


def _r_trial(args):
    n, ms, lam, n_guided, n_plain, dt, h, seed = args
    b1, b2 = outer_pair(n, dt, seed.child(0))
    return [conditional_means(b1, b2, m, [lam], n_guided, n_plain, dt, h, seed.child(9, k), use_min=True)
            for k, m in enumerate(ms)]


def estimate_R(n: float, ms, lam: float, n_outer: int, n_inner: int, xi: float, dt: float = 6.25e-4,
               h: float = DEFAULT_H, seed: int = 0, workers: int = 1) -> list[RResult]:
    """``R_{n,m} = e^{(m-n) xi} E[e^{-lam L_m} | F_n]`` and its very-nice restriction, per ``m``."""
    ms = [float(m) for m in np.atleast_1d(ms)]
    if any(not 1 <= n < m for m in ms):
        raise ValueError("need 1 <= n < m")
    tasks = [(n, ms, lam, n_inner, n_inner, dt, h, RandomSeed(seed, i)) for i in range(n_outer)]
    rows = [x for x in guarded_map(_r_trial, tasks, workers, TRIAL_ERRORS) if not isinstance(x, Failed)]
    out = []
    for k, m in enumerate(ms):
        scale = math.exp((m - n) * xi)
        star = np.array([row[k].restricted[0] for row in rows]) * scale
        full = np.array([row[k].total[0] for row in rows]) * scale
        out.append(RResult(float(n), m, float(lam), float(xi), full, star))
    return out


def wedge_probability_exact(eps: float, alpha: float, terms: int = 200) -> float:
    """Probability that Brownian motion from ``eps`` reaches the unit circle inside ``|arg z| <= alpha``.

    Harmonic measure of the end of a half-strip in log coordinates, summed as
    a sine series.
    """
    if not (0 < eps < 1 and 0 < alpha < math.pi):
        raise ValueError("need 0 < eps < 1 and 0 < alpha < pi")
    a = math.pi / (2 * alpha)
    k = np.arange(1, 2 * terms, 2)
    sign = np.where((k // 2) % 2 == 0, 1.0, -1.0)
    return float(np.sum(4 / (k * math.pi) * sign * eps ** (a * k)))


def wedge_probability_mc(eps: float, alpha: float, n: int, dt: float = 1e-4,
                         seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate and standard error of the wedge probability with bridge-corrected exits."""
    if not (0 < eps < 1 and 0 < alpha < math.pi):
        raise ValueError("need 0 < eps < 1 and 0 < alpha < pi")
    rng = RandomSeed(seed, 0).generator()
    sd = math.sqrt(dt)
    u = np.full(n, math.log(eps))
    th = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    win = np.zeros(n, dtype=bool)
    while alive.any():
        idx = np.flatnonzero(alive)
        nu = u[idx] + sd * rng.standard_normal(idx.size)
        nt = th[idx] + sd * rng.standard_normal(idx.size)
        # probability that the angle crossed a side between the two grid times
        da, db = alpha - th[idx], alpha - nt
        ea, eb = alpha + th[idx], alpha + nt
        pin = (1 - np.exp(-2 * np.maximum(da, 0) * np.maximum(db, 0) / dt)) * \
              (1 - np.exp(-2 * np.maximum(ea, 0) * np.maximum(eb, 0) / dt))
        left = (np.abs(nt) > alpha) | (rng.random(idx.size) > pin)
        # the arc may also be crossed between two samples below it
        arc = np.exp(-2 * np.maximum(-u[idx], 0) * np.maximum(-nu, 0) / dt)
        reached = ~left & ((nu >= 0) | (rng.random(idx.size) < arc))
        win[idx[reached]] = True
        alive[idx[left | reached]] = False
        u[idx], th[idx] = nu, nt
    x = win.astype(float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n))
