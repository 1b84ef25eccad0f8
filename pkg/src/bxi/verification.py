"""Check suites: sampler identities, extremal-length oracles, lemma inequalities and exponent formulas."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import DEFAULT_H, TRIAL_ERRORS, build_config, default_dt, estimate_E_probability
from .exponents import U, V, xi_exact
from .extremal import (DISK_REMOVAL_BOUND, LemmaOutcome, PreconditionError, excursion_mass_rectangle,
                       mass_series, pi_extremal_distance, verify_disk_removal, verify_serial_cut,
                       verify_subarc)
from .geometry import PathDomainSpec, rectangle_domain
from .parallel import Failed, guarded_map
from .paths import AnnulusSpec, extend_conditioned, sample_upcrossing
from .rng import RandomSeed

LEMMAS = ("disk_removal", "subarc", "serial_cut")
# slack below zero by more than this (relative to L) counts as a violation of the lower inequality
GRID_TOL = 1e-6


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


# --- lemma sampling -----------------------------------------------------------

def central_subarc(domain: PathDomainSpec, delta: float) -> np.ndarray | None:
    """The inner arc's longest run, trimmed by a little more than ``delta`` at each end."""
    row = domain.arc[0] == 1
    edges = np.flatnonzero(np.diff(np.concatenate(([0], row.astype(np.int8), [0]))))
    if edges.size == 0:
        return None
    starts, stops = edges[::2], edges[1::2]
    j = int(np.argmax(stops - starts))
    trim = int(math.floor(delta / domain.h_theta)) + 2
    a, b = starts[j] + trim, stops[j] - trim
    if b - a < 1:
        return None
    v = np.zeros_like(domain.arc, dtype=bool)
    v[0, a:b] = True
    return v


def _serial_cut(domain: PathDomainSpec, delta: float) -> LemmaOutcome | None:
    width = (domain.n_rows - 1) * domain.h_u
    for rel in np.arange(1.25, width - 1.0, 0.25):
        try:
            return verify_serial_cut(domain, domain.u_min + float(rel), delta)
        except PreconditionError:
            continue
    return None


def _lemma_trial(args) -> list[tuple[str, LemmaOutcome | None]]:
    r, delta, dt, h, seed = args
    cfg = build_config(r, dt, h, seed)
    out: list[tuple[str, LemmaOutcome | None]] = []
    for dom in cfg.domains:
        if dom is None or not dom.has_inner_arc:
            continue
        try:
            out.append(("disk_removal", verify_disk_removal(dom, delta)))
        except PreconditionError:
            out.append(("disk_removal", None))
        v = central_subarc(dom, delta)
        try:
            out.append(("subarc", verify_subarc(dom, v, delta) if v is not None else None))
        except PreconditionError:
            out.append(("subarc", None))
        out.append(("serial_cut", _serial_cut(dom, delta)))
    return out


def lemma_violation(name: str, o: LemmaOutcome) -> bool:
    """Upper bound broken, or (for every lemma) the monotone lower inequality broken."""
    floor = -GRID_TOL * max(1.0, abs(o.L_before))
    return not (floor <= o.slack <= o.bound)


@dataclass
class LemmaTally:
    name: str
    outcomes: list[LemmaOutcome] = field(default_factory=list)
    not_applicable: int = 0

    @property
    def violations(self) -> int:
        return sum(lemma_violation(self.name, o) for o in self.outcomes)

    @property
    def failure_rate(self) -> float:
        return self.violations / len(self.outcomes) if self.outcomes else math.nan

    @property
    def max_slack_ratio(self) -> float:
        return max((o.slack / o.bound for o in self.outcomes), default=math.nan)


@dataclass
class LemmaSuiteResult:
    tallies: dict[str, LemmaTally]
    configs: int
    excluded: int


def sample_lemma_outcomes(n_domains: int, r: float = 4.0, delta: float = 0.1, dt: float | None = None,
                          h: float = DEFAULT_H, seed: int = 0, workers: int = 1,
                          max_configs: int | None = None, batch: int = 64) -> LemmaSuiteResult:
    """Apply the three lemmas to sampled path domains until each has ``n_domains`` applicable cases.

    Configurations are drawn in fixed-size batches and consumed in trial
    order, so the result does not depend on ``workers``.
    """
    dt = default_dt(r) if dt is None else dt
    max_configs = max_configs or 20 * n_domains
    tallies = {k: LemmaTally(k) for k in LEMMAS}
    done = 0
    excluded = 0
    while done < max_configs and any(len(t.outcomes) < n_domains for t in tallies.values()):
        size = min(batch, max_configs - done)
        tasks = [(r, delta, dt, h, RandomSeed(seed, done + i)) for i in range(size)]
        for res in guarded_map(_lemma_trial, tasks, workers, TRIAL_ERRORS):
            if isinstance(res, Failed):
                excluded += 1
                continue
            for name, o in res:
                t = tallies[name]
                if len(t.outcomes) >= n_domains:
                    continue
                if o is None:
                    t.not_applicable += 1
                else:
                    t.outcomes.append(o)
        done += size
    return LemmaSuiteResult(tallies, done, excluded)


# --- suites ---------------------------------------------------------------------

def _within(x: float, target: float, se: float, k: float = 3.0) -> bool:
    return abs(x - target) <= k * se


def gamblers_ruin_rate(r: float, r_prime: float, trials: int, dt: float = 1e-2,
                       seed: int = 0) -> tuple[float, float]:
    """Acceptance rate of the conditioned extension and its binomial standard error."""
    base = sample_upcrossing(AnnulusSpec(0.0, r), dt, RandomSeed(seed, 0))
    attempts = 0
    rng = RandomSeed(seed, 1).generator()
    for _ in range(trials):
        attempts += extend_conditioned(base, r_prime, dt, rng).attempts
    p = trials / attempts
    return p, math.sqrt(p * (1 - p) / attempts)


def suite_sampler(seed: int = 0, trials: int = 20000) -> list[Check]:
    out = []
    for r, rp in ((1, 2), (2, 3)):
        p, se = gamblers_ruin_rate(r, rp, trials, seed=seed)
        out.append(Check(f"conditioned extension acceptance {r}->{rp}", _within(p, r / rp, se),
                         f"{p:.4f} vs {r / rp:.4f} (se {se:.4f})"))
    rec = estimate_E_probability(1, trials // 4, seed=seed)
    out.append(Check("P(E_1) = 1/4", _within(rec.value, 0.25, rec.stderr),
                     f"{rec.value:.4f} vs 0.25 (se {rec.stderr:.4f})"))
    return out


def suite_extremal(seed: int = 0) -> list[Check]:
    out = []
    for L in (1.0, 2.0):
        got = pi_extremal_distance(rectangle_domain(L, math.pi, 0.02)).L
        out.append(Check(f"rectangle L={L:g}", abs(got / L - 1) < 0.02, f"{got:.5f}"))
    m = excursion_mass_rectangle(1.0, 0.05, 2.5e-5, 20000, RandomSeed(seed, 0))
    exact = mass_series(1.0)
    out.append(Check("excursion mass L=1", _within(m.value, exact, m.stderr),
                     f"{m.value:.4f} vs {exact:.4f} (se {m.stderr:.4f})"))
    return out


def suite_lemmas(seed: int = 0, n_domains: int = 40, workers: int = 1) -> list[Check]:
    res = sample_lemma_outcomes(n_domains, seed=seed, workers=workers)
    out = []
    for name, t in res.tallies.items():
        ok = bool(t.outcomes) and t.failure_rate <= 0.01
        out.append(Check(f"lemma {name}", ok, f"{len(t.outcomes)} domains, {t.violations} violations, "
                                             f"max slack/bound {t.max_slack_ratio:.3g}"))
    return out


def suite_exponents() -> list[Check]:
    lam = np.linspace(0.0, 10.0, 100)
    comp = np.array([V(U(2.0) + U(x)) for x in lam])
    exact = np.array([xi_exact(x) for x in lam])
    d2 = np.diff(exact, 2)
    return [
        Check("V(U(2)+U(lam)) identity", bool(np.max(np.abs(comp - exact)) < 1e-12),
              f"max diff {np.max(np.abs(comp - exact)):.2e}"),
        Check("xi(1) = 2 and xi(0) = 2/3", abs(xi_exact(1) - 2) < 1e-14 and abs(xi_exact(0) - 2 / 3) < 1e-14, ""),
        Check("xi <= 2 + lam", bool(np.all(exact <= 2 + lam + 1e-12)), ""),
        Check("xi increasing and concave", bool(np.all(np.diff(exact) > 0) and np.all(d2 <= 1e-12)), ""),
    ]


SUITES = {
    "sampler": suite_sampler,
    "extremal": suite_extremal,
    "lemmas": suite_lemmas,
    "exponents": lambda seed=0, **_: suite_exponents(),
}


def lemma_summary(res: LemmaSuiteResult) -> dict:
    return {name: {"applicable": len(t.outcomes), "not_applicable": t.not_applicable,
                   "violations": t.violations, "failure_rate": t.failure_rate,
                   "max_slack_over_bound": t.max_slack_ratio,
                   "bound": DISK_REMOVAL_BOUND if name == "disk_removal" else
                   (t.outcomes[0].bound if t.outcomes else math.nan)}
            for name, t in res.tallies.items()}
