"""The acceptance criteria as functions, with a result cache keyed by parameters and source digest."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .conditional import separation_from_trials, separation_trials
from .estimators import (EventFilter, a_hat_records, a_hat_trials, b_records, b_trials,
                         disconnection_records, estimate_E_probability, z_trials)
from .experiments import ExperimentConfig, run
from .exponents import U, V, fit_exponent, flatness, subadditivity_report, xi_exact
from .extremal import excursion_mass_rectangle, mass_series, pi_extremal_distance
from .geometry import rectangle_domain
from .parallel import failures, resolve_workers
from .rng import RandomSeed
from .verification import gamblers_ruin_rate, sample_lemma_outcomes

CACHE_ENV = "BXI_ACCEPTANCE_CACHE"
SEED = 20240611


@dataclass
class Criterion:
    number: int
    name: str
    passed: bool
    detail: str
    values: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d}. {self.name}: {self.detail}"


def source_digest() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.cwd() / ".acceptance_cache"))


def _cached(key: str, params: dict, compute):
    """JSON-serialisable result of ``compute()``, reused while parameters and sources are unchanged."""
    tag = hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()[:12]
    path = cache_dir() / f"{key}-{tag}-{source_digest()}.json"
    if path.exists():
        return json.loads(path.read_text())
    value = compute()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(value, sort_keys=True))
    return value


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        c = fn(*args, **kwargs)
        c.seconds = time.perf_counter() - t0
        return c
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# --- 1-4: identities and oracles ------------------------------------------------

@_timed
def c01_gamblers_ruin(trials: int = 100_000, dt: float = 1e-2) -> Criterion:
    def compute():
        return {f"{r},{rp}": gamblers_ruin_rate(r, rp, trials, dt, SEED + 10 * r + rp)
                for r, rp in ((1, 2), (1, 4), (2, 3))}
    vals = _cached("c01", {"trials": trials, "dt": dt}, compute)
    ok, parts = True, []
    for key, (p, se) in vals.items():
        r, rp = map(int, key.split(","))
        z = (p - r / rp) / se
        ok &= abs(z) <= 3
        parts.append(f"({key}) {p:.4f} vs {r / rp:.4f} z={z:+.2f}")
    return Criterion(1, "conditioned-extension acceptance = r/r'", ok, "; ".join(parts), vals)


@_timed
def c02_en_probability(trials: int = 100_000, dt: float = 1e-2, workers: int | None = None) -> Criterion:
    w = resolve_workers(workers)

    def compute():
        out = {}
        for n in (1, 2, 3):
            rec = estimate_E_probability(n, trials, dt, SEED + n, workers=w)
            out[str(n)] = [rec.value, rec.stderr]
        return out
    vals = _cached("c02", {"trials": trials, "dt": dt}, compute)
    ok, parts = True, []
    for n, (p, se) in vals.items():
        exact = 1 / (int(n) + 1) ** 2
        z = (p - exact) / se
        ok &= abs(z) <= 3
        parts.append(f"n={n} {p:.5f} vs {exact:.5f} z={z:+.2f}")
    return Criterion(2, "P(E_n) = 1/(n+1)^2", ok, "; ".join(parts), vals)


@_timed
def c03_rectangle(h: float = 0.01) -> Criterion:
    vals = {str(L): pi_extremal_distance(rectangle_domain(L, math.pi, h)).L for L in (1.0, 2.0, 4.0)}
    errs = {k: abs(v / float(k) - 1) for k, v in vals.items()}
    ok = all(e < 0.02 for e in errs.values())
    return Criterion(3, "rectangle pi-extremal distance within 2%", ok,
                     ", ".join(f"L={k}: {v:.5f}" for k, v in vals.items()), vals)


@_timed
def c04_excursion_mass(n: int = 200_000, eps: float = 0.1, dt: float = 2.5e-5) -> Criterion:
    def compute():
        out = {}
        for L in (1, 2, 3, 4):
            m = excursion_mass_rectangle(float(L), eps, dt, n, RandomSeed(SEED, 400 + L))
            out[str(L)] = [m.value, m.stderr]
        return out
    vals = _cached("c04", {"n": n, "eps": eps, "dt": dt}, compute)
    parts, ok = [], True
    for L in ("1", "3"):
        v, se = vals[L]
        z = (v - mass_series(float(L))) / se
        ok &= abs(z) <= 3
        parts.append(f"L={L} z={z:+.2f}")
    scaled = [math.exp(int(L)) * v for L, (v, _) in vals.items()]
    band = max(scaled) / min(scaled)
    ok &= band < 2
    parts.append(f"e^L M band {band:.3f}")
    return Criterion(4, "excursion mass vs series oracle", ok, "; ".join(parts), vals)


# --- 5: lemmas ------------------------------------------------------------------------

@_timed
def c05_lemmas(n_domains: int = 1000, r: float = 4.0, delta: float = 0.1, workers: int | None = None) -> Criterion:
    w = resolve_workers(workers)

    def compute():
        res = sample_lemma_outcomes(n_domains, r, delta, seed=SEED, workers=w, max_configs=40 * n_domains)
        return {name: {"applicable": len(t.outcomes), "violations": t.violations,
                       "max_slack_over_bound": t.max_slack_ratio,
                       "min_slack": min((o.slack for o in t.outcomes), default=math.nan)}
                for name, t in res.tallies.items()} | {"configs": res.configs, "excluded": res.excluded}
    vals = _cached("c05", {"n": n_domains, "r": r, "delta": delta}, compute)
    ok, parts = True, []
    for name in ("disk_removal", "subarc", "serial_cut"):
        s = vals[name]
        rate = s["violations"] / s["applicable"] if s["applicable"] else math.nan
        ok &= s["applicable"] >= n_domains and rate <= 0.01
        parts.append(f"{name} {s['violations']}/{s['applicable']}")
    return Criterion(5, "lemma suite failure rate <= 1%", ok, "; ".join(parts), vals)


# --- 6-9: exponent series ---------------------------------------------------------------

B_RADII = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)


def b_series(n: int = 20_000, dt: float = 6.25e-4, h: float = 0.05, workers: int | None = None) -> dict:
    """Per-trial-half b estimates at lambda=1, shared by criteria 6, 8 and 9."""
    w = resolve_workers(workers)

    def compute():
        trials = b_trials(B_RADII, n, EventFilter(), dt, h, SEED + 6, w)
        out = {"excluded": failures(trials), "trials": len(trials)}
        for label, part in (("full", trials), ("half", trials[: n // 2])):
            out[label] = [[x.r, x.value, x.stderr] for x in b_records(part, [1.0], EventFilter(), SEED + 6)]
        return out
    return _cached("bseries", {"n": n, "dt": dt, "h": h}, compute)


def local_slopes(rows) -> list[tuple[float, float, float]]:
    """``log(v_a / v_b) / (b - a)`` for consecutive radii."""
    rows = sorted(rows)
    return [(a[0], b[0], math.log(a[1] / b[1]) / (b[0] - a[0]))
            for a, b in zip(rows, rows[1:]) if a[1] > 0 and b[1] > 0]


class _Rec:
    def __init__(self, r, value, stderr):
        self.r, self.value, self.stderr = r, value, stderr


def _recs(rows, radii=None):
    return [_Rec(*x) for x in rows if radii is None or x[0] in radii]


@_timed
def c06_xi_fit(**kw) -> Criterion:
    data = b_series(**kw)
    recs = _recs(data["full"], (2.0, 3.0, 4.0, 5.0, 6.0))
    fit = fit_exponent(recs)
    band = flatness(recs, 2.0).band_ratio
    ok = 1.8 <= fit.xi_hat <= 2.2 and band < 3 and data["excluded"] <= 0.01 * data["trials"]
    return Criterion(6, "xi(2,1) fit in [1.8, 2.2], flatness band < 3", ok,
                     f"xi_hat={fit.xi_hat:.4f}+-{fit.stderr:.4f}, band={band:.3f}",
                     {"xi_hat": fit.xi_hat, "stderr": fit.stderr, "band": band, "b": data["full"]})


@_timed
def c07_disconnection(n: int = 10_000, dt: float = 6.25e-4, h: float = 0.05, workers: int | None = None) -> Criterion:
    w = resolve_workers(workers)
    radii = (2.0, 3.0, 4.0, 5.0, 6.0)

    def compute():
        trials = z_trials(radii, n, dt, h, SEED + 7, solve=False, workers=w)
        return {"excluded": failures(trials), "rows": [[x.r, x.value, x.stderr]
                                                       for x in disconnection_records(trials, SEED + 7)]}
    vals = _cached("c07", {"n": n, "dt": dt, "h": h}, compute)
    fit = fit_exponent(_recs(vals["rows"]))
    ok = 0.57 <= fit.xi_hat <= 0.77
    slopes = local_slopes(vals["rows"])
    return Criterion(7, "disconnection exponent in [0.57, 0.77]", ok,
                     f"fit={fit.xi_hat:.4f}+-{fit.stderr:.4f} (exact {xi_exact(0):.4f}); local slopes "
                     + ", ".join(f"{a:g}-{b:g}: {s:.3f}" for a, b, s in slopes), vals | {"local_slopes": slopes})


@_timed
def c08_a_vs_b(n_per_start: int = 500, start_grid: int = 16, dt: float = 6.25e-4, h: float = 0.05,
               workers: int | None = None, b_samples: int = 20_000) -> Criterion:
    w = resolve_workers(workers)
    radii = (2.0, 3.0, 4.0)

    def compute():
        batches = a_hat_trials(radii, n_per_start, start_grid, dt, h, SEED + 8, w)
        return {"rows": [[x.r, x.value, x.stderr] for x in a_hat_records(batches, [1.0], SEED + 8)],
                "excluded": sum(failures(b) for b in batches)}
    vals = _cached("c08", {"n": n_per_start, "grid": start_grid, "dt": dt, "h": h}, compute)
    b = {x[0]: x[1] for x in b_series(b_samples, dt, h, workers)["full"]}
    ratios = {str(r): v / b[r] for r, v, _ in vals["rows"]}
    band = max(ratios.values()) / min(ratios.values())
    return Criterion(8, "a_hat/b varies by factor < 4 over r in {2,3,4}", band < 4,
                     ", ".join(f"r={k}: {v:.3f}" for k, v in ratios.items()) + f"; band={band:.3f}",
                     {"ratios": ratios, "band": band, **vals})


@_timed
def c09_submultiplicativity(**kw) -> Criterion:
    data = b_series(**kw)
    full = subadditivity_report(_recs(data["full"]), 6)
    half = subadditivity_report(_recs(data["half"]), 6)
    change = abs(full.max_ratio / half.max_ratio - 1)
    ok = change <= 0.25 and math.isfinite(full.max_ratio)
    return Criterion(9, "one c_hat for all m+n+1 <= 6, stable within 25% under doubling", ok,
                     f"c_hat(n)={half.max_ratio:.4f}, c_hat(2n)={full.max_ratio:.4f}, change={100 * change:.1f}%",
                     {"c_full": full.max_ratio, "c_half": half.max_ratio,
                      "argmax": list(full.argmax)})


# --- 10: separation --------------------------------------------------------------------

@_timed
def c10_separation(n_outer: int = 200, n_inner: int = 100, dt: float = 6.25e-4, h: float = 0.05,
                   workers: int | None = None) -> Criterion:
    w = resolve_workers(workers)
    lams = (0.5, 1.0)

    def compute():
        out = {}
        for n in (2.0, 3.0):
            trials = separation_trials(n, lams, n_outer, n_inner, dt, h, SEED + int(10 * n), w)
            for lam in lams:
                res = separation_from_trials(trials, n, lam)
                out[f"{n:g},{lam:g}"] = {"summary": res.summary(), "ratios": [None if math.isnan(x) else x
                                                                             for x in res.ratios]}
        return out
    vals = _cached("c10", {"outer": n_outer, "inner": n_inner, "dt": dt, "h": h}, compute)
    ok, parts = True, []
    for lam in lams:
        m2 = vals[f"2,{lam:g}"]["summary"].get("min", 0.0)
        m3 = vals[f"3,{lam:g}"]["summary"].get("min", 0.0)
        pos = m2 > 0 and m3 > 0
        factor = max(m2, m3) / min(m2, m3) if pos else math.inf
        ok &= pos and factor < 2
        parts.append(f"lambda={lam:g}: min n=2 {m2:.3g}, n=3 {m3:.3g}, factor {factor:.3g}")
    return Criterion(10, "separation ratio min > 0 and stable within 2 across n", ok, "; ".join(parts),
                     {k: v["summary"] for k, v in vals.items()})


# --- 11-12 ----------------------------------------------------------------------------------

@_timed
def c11_exact_identities() -> Criterion:
    lam = np.linspace(0.0, 10.0, 100)
    diff = max(abs(V(U(2.0) + U(x)) - xi_exact(x)) for x in lam)
    xs = np.array([xi_exact(x) for x in lam])
    ok = diff < 1e-12 and bool(np.all(xs <= 2 + lam)) and bool(np.all(np.diff(xs) > 0)) \
        and bool(np.all(np.diff(xs, 2) <= 1e-12))
    return Criterion(11, "exact-formula identities", ok, f"max |V(U(2)+U(lam)) - xi| = {diff:.2e}",
                     {"max_diff": diff})


DETERMINISM_CONFIG = {"experiment": "B_SERIES", "r_values": [1, 2, 3], "lambda_values": [0.5, 1],
                      "n_samples": 60, "seed": 11}


@_timed
def c12_determinism() -> Criterion:
    cfg = ExperimentConfig.from_dict(DETERMINISM_CONFIG)
    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        for tag, workers in (("a", 1), ("b", 1), ("c", 2)):
            d = Path(tmp) / tag
            saved = os.environ.pop("BXI_WORKERS", None)
            try:
                run(cfg, workers, d)
            finally:
                if saved is not None:
                    os.environ["BXI_WORKERS"] = saved
            digests.append(hashlib.sha256((d / "results.csv").read_bytes()).hexdigest())
    ok = len(set(digests)) == 1
    return Criterion(12, "byte-identical results.csv across reruns and worker counts", ok,
                     f"digests {', '.join(x[:12] for x in digests)}", {"digests": digests})


ALL = (c01_gamblers_ruin, c02_en_probability, c03_rectangle, c04_excursion_mass, c05_lemmas,
       c06_xi_fit, c07_disconnection, c08_a_vs_b, c09_submultiplicativity, c10_separation,
       c11_exact_identities, c12_determinism)


def run_all(numbers=None) -> list[Criterion]:
    out = []
    for fn in ALL:
        num = int(fn.__name__[1:3])
        if numbers and num not in numbers:
            continue
        c = fn()
        print(c.line(), f"({c.seconds:.1f}s)", flush=True)
        out.append(c)
    return out


def to_json(results: list[Criterion]) -> str:
    return json.dumps([asdict(c) for c in results], indent=2, default=str)
