"""Configuration-driven experiments: dispatch, result files and per-experiment checks."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path

import numpy as np

from .conditional import separation_from_trials, separation_trials
from .estimators import (EstimateRecord, EventFilter, a_hat_records, a_hat_trials, a_records,
                         b_records, b_trials, disconnection_records, z_trials)
from .exponents import fit_exponent, flatness, subadditivity_report, xi_exact, xi_exact_general
from .extremal import excursion_mass_rectangle, mass_series
from .multipacket import estimate_multi_packet
from .parallel import failures, resolve_workers
from .rng import RandomSeed
from .verification import lemma_summary, sample_lemma_outcomes

CSV_HEADER = ("experiment", "quantity", "r", "lambda", "value", "stderr", "n", "seed", "config_hash")
MAX_EXCLUSION = 0.01


class Experiment(Enum):
    B_SERIES = "B_SERIES"
    A_SERIES = "A_SERIES"
    DISCONNECT = "DISCONNECT"
    SEPARATION = "SEPARATION"
    LEMMA_VERIFY = "LEMMA_VERIFY"
    MULTI_PACKET = "MULTI_PACKET"
    MASS_RECT = "MASS_RECT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment.  ``r_values`` are log-radii (rectangle lengths for ``MASS_RECT``).

    ``delta`` is the niceness scale (the start abscissa for ``MASS_RECT``).
    ``packets`` is used by ``MULTI_PACKET``, ``n_inner`` by ``SEPARATION`` and
    ``start_grid`` by ``A_SERIES``.
    """

    experiment: Experiment
    r_values: tuple[float, ...]
    lambda_values: tuple[float, ...]
    n_samples: int
    seed: int
    dt: float = 6.25e-4
    h: float = 0.05
    delta: float = 0.1
    filter: str = "NONE"
    workers: int = 1
    output_dir: str = "results"
    packets: tuple[int, ...] = ()
    n_inner: int = 100
    start_grid: int = 16

    def __post_init__(self) -> None:
        if not self.r_values:
            raise ConfigError("r_values must not be empty")
        if list(self.r_values) != sorted(self.r_values):
            raise ConfigError("r_values must be sorted ascending")
        if any(not (r > 0 and math.isfinite(r)) for r in self.r_values):
            raise ConfigError("r_values must be positive")
        if any(not (x >= 0 and math.isfinite(x)) for x in self.lambda_values):
            raise ConfigError("lambda_values must be finite and non-negative")
        for name in ("n_samples", "dt", "h", "delta", "workers", "n_inner", "start_grid"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.h > 0.05:
            raise ConfigError("h must be at most 0.05")
        try:
            EventFilter.parse(self.filter, self.delta)
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"unknown filter {self.filter!r}") from exc
        if self.experiment is Experiment.MULTI_PACKET and len(self.packets) != len(self.lambda_values):
            raise ConfigError("MULTI_PACKET needs one packet size per lambda")

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown keys: {', '.join(unknown)}")
        missing = sorted(k for k in ("experiment", "r_values", "lambda_values", "n_samples", "seed")
                         if k not in data)
        if missing:
            raise ConfigError(f"missing keys: {', '.join(missing)}")
        d = dict(data)
        try:
            d["experiment"] = Experiment(d["experiment"])
        except ValueError as exc:
            raise ConfigError(f"unknown experiment {data['experiment']!r}") from exc
        for key, conv in (("r_values", float), ("lambda_values", float), ("packets", int)):
            if key in d:
                if not isinstance(d[key], list):
                    raise ConfigError(f"{key} must be a list")
                d[key] = tuple(conv(x) for x in d[key])
        for key in ("n_samples", "seed", "workers", "n_inner", "start_grid"):
            if key in d and (not isinstance(d[key], int) or isinstance(d[key], bool)):
                raise ConfigError(f"{key} must be an integer")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["experiment"] = self.experiment.value
        for k in ("r_values", "lambda_values", "packets"):
            d[k] = list(d[k])
        return d

    @property
    def config_hash(self) -> str:
        """Digest of the canonical config, leaving out scheduling and output location."""
        d = self.to_dict()
        d.pop("workers")
        d.pop("output_dir")
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    quantity: str
    r: float
    lam: float
    value: float
    stderr: float
    n: int
    seed: int
    config_hash: str

    @classmethod
    def from_record(cls, rec: EstimateRecord, experiment: str, config_hash: str) -> ResultRow:
        return cls(experiment, rec.quantity, rec.r, rec.lam, rec.value, rec.stderr, rec.n, rec.seed,
                   config_hash)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class RunOutcome:
    rows: list[ResultRow]
    summary: dict
    checks: list[CheckResult] = field(default_factory=list)
    trials: int = 0
    excluded: int = 0

    @property
    def exclusion_rate(self) -> float:
        return self.excluded / self.trials if self.trials else 0.0

    @property
    def failed(self) -> bool:
        return self.exclusion_rate > MAX_EXCLUSION

    @property
    def status(self) -> str:
        if self.failed:
            return "FAILED"
        return "PASS" if all(c.passed for c in self.checks) else "CHECKS_FAILED"


def _num(x: float) -> str:
    return format(float(x), ".17g")


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.experiment, r.quantity, _num(r.r), _num(r.lam), _num(r.value), _num(r.stderr),
                    int(r.n), int(r.seed), r.config_hash])
    return buf.getvalue()


def read_csv(path: str | Path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected header {header}")
        out = []
        for line in reader:
            if len(line) != len(CSV_HEADER):
                raise ConfigError(f"{path}: malformed row {line}")
            e, q, r, lam, v, se, n, seed, h = line
            out.append(ResultRow(e, q, float(r), float(lam), float(v), float(se), int(n), int(seed), h))
    return out


# --- analysis shared by run and report ------------------------------------------

def exponent_table(rows: list[ResultRow], quantity: str, xi_of=xi_exact) -> list[dict]:
    """Fit, exact value and flatness band per lambda for one quantity."""
    out = []
    sel = [r for r in rows if r.quantity == quantity]
    for lam in sorted({r.lam for r in sel}):
        recs = sorted((r for r in sel if r.lam == lam), key=lambda r: r.r)
        entry: dict = {"quantity": quantity, "lambda": lam, "radii": [r.r for r in recs]}
        exact = xi_of(lam) if xi_of is not None else math.nan
        entry["xi_exact"] = exact
        try:
            fit = fit_exponent(recs)
            entry.update(xi_fit=fit.xi_hat, xi_stderr=fit.stderr, abs_error=abs(fit.xi_hat - exact))
        except ValueError as exc:
            entry.update(xi_fit=math.nan, xi_stderr=math.nan, abs_error=math.nan, fit_error=str(exc))
        try:
            entry["band_ratio"] = flatness(recs, exact).band_ratio if math.isfinite(exact) else math.nan
        except ValueError:
            entry["band_ratio"] = math.nan
        out.append(entry)
    return out


def _ratio_band(rows: list[ResultRow], top: str, bottom: str, lam: float) -> float:
    a = {r.r: r.value for r in rows if r.quantity == top and r.lam == lam}
    b = {r.r: r.value for r in rows if r.quantity == bottom and r.lam == lam}
    common = sorted(set(a) & set(b))
    ratios = [a[r] / b[r] for r in common if b[r] > 0 and a[r] > 0]
    if len(ratios) < 2:
        return math.nan
    return max(ratios) / min(ratios)


# --- experiments ---------------------------------------------------------------------

def _seed_rows(records, cfg: ExperimentConfig) -> list[ResultRow]:
    return [ResultRow.from_record(r, cfg.experiment.value, cfg.config_hash) for r in records]


def _run_b(cfg: ExperimentConfig, workers: int) -> RunOutcome:
    filt = EventFilter.parse(cfg.filter, cfg.delta)
    trials = b_trials(cfg.r_values, cfg.n_samples, filt, cfg.dt, cfg.h, cfg.seed, workers)
    rows = _seed_rows(b_records(trials, cfg.lambda_values, filt, cfg.seed), cfg)
    quantity = rows[0].quantity if rows else "b"
    table = exponent_table(rows, quantity)
    checks = []
    for e in table:
        if e["lambda"] == 1.0 and len(e["radii"]) >= 3:
            checks.append(CheckResult("xi(2,1) fit in [1.8, 2.2]", 1.8 <= e["xi_fit"] <= 2.2,
                                      f"{e['xi_fit']:.4f} +- {e['xi_stderr']:.4f}"))
            checks.append(CheckResult("flatness band ratio < 3", e["band_ratio"] < 3, f"{e['band_ratio']:.3f}"))
    summary: dict = {"exponents": table}
    ints = [r for r in cfg.r_values if float(r).is_integer()]
    if len(ints) >= 3:
        sub = {}
        for lam in cfg.lambda_values:
            recs = [r for r in rows if r.lam == lam and float(r.r).is_integer()]
            try:
                rep = subadditivity_report(recs)
                sub[_num(lam)] = {"c_hat": rep.max_ratio, "argmax": list(rep.argmax), "min_ratio": rep.min_ratio}
            except ValueError as exc:
                sub[_num(lam)] = {"error": str(exc)}
        summary["subadditivity"] = sub
    return RunOutcome(rows, summary, checks, len(trials), failures(trials))


def _run_a(cfg: ExperimentConfig, workers: int) -> RunOutcome:
    uniform = z_trials(cfg.r_values, cfg.n_samples, cfg.dt, cfg.h, cfg.seed, workers=workers,
                       offset=cfg.start_grid * cfg.n_samples)
    batches = a_hat_trials(cfg.r_values, cfg.n_samples, cfg.start_grid, cfg.dt, cfg.h, cfg.seed, workers)
    records = a_records(uniform, cfg.lambda_values, cfg.seed) + a_hat_records(batches, cfg.lambda_values, cfg.seed)
    rows = _seed_rows(records, cfg)
    summary = {"exponents": exponent_table(rows, "a") + exponent_table(rows, "a_hat")}
    n = len(uniform) + sum(len(b) for b in batches)
    return RunOutcome(rows, summary, [], n, failures(uniform) + sum(failures(b) for b in batches))


def _run_disconnect(cfg: ExperimentConfig, workers: int) -> RunOutcome:
    trials = z_trials(cfg.r_values, cfg.n_samples, cfg.dt, cfg.h, cfg.seed, solve=False, workers=workers)
    rows = _seed_rows(disconnection_records(trials, cfg.seed), cfg)
    table = exponent_table(rows, "P(Z>0)", lambda lam: xi_exact(0.0))
    checks = []
    summary: dict = {"exponents": table}
    if table and math.isfinite(table[0]["xi_fit"]):
        fit = table[0]["xi_fit"]
        summary["fit_minus_two_thirds"] = abs(fit - 2 / 3)
        checks.append(CheckResult("disconnection exponent in [0.57, 0.77]", 0.57 <= fit <= 0.77, f"{fit:.4f}"))
    return RunOutcome(rows, summary, checks, len(trials), failures(trials))


def _run_separation(cfg: ExperimentConfig, workers: int) -> RunOutcome:
    rows, per, mins = [], {}, {}
    trials_total = excluded = 0
    for n in cfg.r_values:
        seed = cfg.seed + int(round(1000 * n))
        trials = separation_trials(n, cfg.lambda_values, cfg.n_samples, cfg.n_inner, cfg.dt, cfg.h, seed, workers)
        trials_total += len(trials)
        excluded += failures(trials)
        for lam in cfg.lambda_values:
            res = separation_from_trials(trials, n, lam)
            s = res.summary()
            per[f"n={_num(n)},lambda={_num(lam)}"] = s
            mins[(n, lam)] = res.minimum
            v = res.valid
            for q, val in (("separation_min", res.minimum),
                           ("separation_median", float(np.median(v)) if v.size else math.nan)):
                rows.append(ResultRow(cfg.experiment.value, q, n, lam, val if math.isfinite(val) else 0.0, 0.0,
                                      int(v.size), seed, cfg.config_hash))
    checks = []
    for lam in cfg.lambda_values:
        ms = [mins[(n, lam)] for n in cfg.r_values]
        pos = all(m > 0 for m in ms)
        stable = pos and max(ms) / min(ms) < 2
        checks.append(CheckResult(f"separation min > 0 (lambda={lam:g})", pos, ", ".join(f"{m:.3g}" for m in ms)))
        if len(ms) > 1:
            checks.append(CheckResult(f"separation min stable within 2 across n (lambda={lam:g})", stable,
                                      f"ratio {max(ms) / min(ms) if pos else math.inf:.3g}"))
    return RunOutcome(rows, {"separation": per}, checks, trials_total, excluded)


def _run_lemmas(cfg: ExperimentConfig, workers: int) -> RunOutcome:
    res = sample_lemma_outcomes(cfg.n_samples, cfg.r_values[0], cfg.delta, cfg.dt, cfg.h, cfg.seed, workers)
    summ = lemma_summary(res)
    rows, checks = [], []
    for name, s in summ.items():
        for q in ("failure_rate", "max_slack_over_bound"):
            v = s[q]
            rows.append(ResultRow(cfg.experiment.value, f"lemma_{q}[{name}]", cfg.r_values[0], 0.0,
                                  v if math.isfinite(v) else 0.0, 0.0, s["applicable"], cfg.seed, cfg.config_hash))
        ok = s["applicable"] >= cfg.n_samples and s["failure_rate"] <= 0.01
        checks.append(CheckResult(f"lemma {name} failure rate <= 1%", ok,
                                  f"{s['violations']}/{s['applicable']} violations"))
    return RunOutcome(rows, {"lemmas": summ, "configs": res.configs}, checks, res.configs, res.excluded)


def _run_multi(cfg: ExperimentConfig, workers: int) -> RunOutcome:
    recs = [estimate_multi_packet(cfg.packets, cfg.lambda_values, n, cfg.n_samples, cfg.dt, cfg.h, cfg.seed, workers)
            for n in cfg.r_values]
    rows = _seed_rows(recs, cfg)
    exact = xi_exact_general(cfg.packets, cfg.lambda_values)
    table = exponent_table(rows, rows[0].quantity, lambda lam: exact)
    trials = cfg.n_samples * len(cfg.r_values)
    return RunOutcome(rows, {"exponents": table}, [], trials, trials - sum(r.n for r in recs))


def _run_mass(cfg: ExperimentConfig, workers: int) -> RunOutcome:
    rows, table, checks = [], [], []
    scaled = []
    for k, L in enumerate(cfg.r_values):
        m = excursion_mass_rectangle(L, cfg.delta, cfg.dt, cfg.n_samples, RandomSeed(cfg.seed, k))
        exact = mass_series(L)
        rows.append(ResultRow(cfg.experiment.value, "mass", L, 0.0, m.value, m.stderr, m.n, cfg.seed, cfg.config_hash))
        z = (m.value - exact) / m.stderr if m.stderr > 0 else math.inf
        table.append({"L": L, "mass": m.value, "stderr": m.stderr, "oracle": exact, "z": z})
        scaled.append(math.exp(L) * m.value)
        checks.append(CheckResult(f"mass L={L:g} within 3 sigma of the series", abs(z) <= 3, f"z = {z:.2f}"))
    summary = {"mass": table}
    if len(scaled) > 1 and min(scaled) > 0:
        band = max(scaled) / min(scaled)
        summary["scaled_band"] = band
        checks.append(CheckResult("exp(L) * mass varies by factor < 2", band < 2, f"{band:.3f}"))
    return RunOutcome(rows, summary, checks, cfg.n_samples * len(cfg.r_values), 0)


_DISPATCH = {
    Experiment.B_SERIES: _run_b,
    Experiment.A_SERIES: _run_a,
    Experiment.DISCONNECT: _run_disconnect,
    Experiment.SEPARATION: _run_separation,
    Experiment.LEMMA_VERIFY: _run_lemmas,
    Experiment.MULTI_PACKET: _run_multi,
    Experiment.MASS_RECT: _run_mass,
}


def execute(cfg: ExperimentConfig, workers: int | None = None) -> RunOutcome:
    """Run an experiment in memory."""
    return _DISPATCH[cfg.experiment](cfg, resolve_workers(workers or cfg.workers))


def render_report(cfg: ExperimentConfig, out: RunOutcome) -> str:
    lines = [f"# {cfg.experiment.value} ({cfg.config_hash})", "", f"status: {out.status}",
             f"trials: {out.trials}, excluded: {out.excluded} ({100 * out.exclusion_rate:.2f}%)", ""]
    table = out.summary.get("exponents")
    if table:
        lines += exponent_markdown(table) + [""]
    if out.checks:
        lines.append("| check | result | detail |")
        lines.append("|---|---|---|")
        for c in out.checks:
            lines.append(f"| {c.name} | {'PASS' if c.passed else 'FAIL'} | {c.detail} |")
    return "\n".join(lines) + "\n"


def exponent_markdown(table: list[dict]) -> list[str]:
    lines = ["| quantity | lambda | xi_fit | stderr | xi_exact | band ratio |", "|---|---|---|---|---|---|"]
    for e in table:
        lines.append(f"| {e['quantity']} | {e['lambda']:g} | {e['xi_fit']:.4f} | {e['xi_stderr']:.4f} | "
                     f"{e['xi_exact']:.4f} | {e['band_ratio']:.3f} |")
    return lines


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def run(cfg: ExperimentConfig, workers: int | None = None, output_dir: str | Path | None = None) -> RunOutcome:
    """Run an experiment and write ``results.csv``, ``summary.json`` and ``report.md``."""
    t0 = time.perf_counter()
    out = execute(cfg, workers)
    wall = time.perf_counter() - t0
    d = Path(output_dir or cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "results.csv").write_text(rows_to_csv(out.rows))
    summary = {"experiment": cfg.experiment.value, "config": cfg.to_dict(), "config_hash": cfg.config_hash,
               "status": out.status, "trials": out.trials, "excluded": out.excluded,
               "exclusion_rate": out.exclusion_rate, "wall_time_s": wall,
               "checks": [asdict(c) for c in out.checks], **out.summary}
    (d / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    (d / "report.md").write_text(render_report(cfg, out))
    return out


# --- report over saved runs ---------------------------------------------------

def pool_rows(rows: list[ResultRow]) -> list[ResultRow]:
    """Merge rows of the same (experiment, quantity, r, lambda) by sample-size weighting."""
    groups: dict[tuple, list[ResultRow]] = {}
    for r in rows:
        groups.setdefault((r.experiment, r.quantity, r.r, r.lam), []).append(r)
    out = []
    for key in sorted(groups):
        g = groups[key]
        n = sum(r.n for r in g)
        if n == 0:
            continue
        v = sum(r.n * r.value for r in g) / n
        se = math.sqrt(sum((r.n * r.stderr) ** 2 for r in g)) / n
        hashes = sorted({r.config_hash for r in g})
        seed = g[0].seed if len(g) == 1 else -1
        out.append(ResultRow(key[0], key[1], key[2], key[3], v, se, n, seed, "+".join(hashes)))
    return out


def build_report(paths: list[str | Path]) -> tuple[str, list[dict]]:
    if not paths:
        raise ConfigError("no input files")
    rows = []
    for p in paths:
        rows += read_csv(p)
    pooled = pool_rows(rows)
    tables = []
    for q in sorted({r.quantity for r in pooled}):
        if q.startswith(("b", "a")) and not q.startswith("b_multi"):
            tables += exponent_table(pooled, q)
        elif q == "P(Z>0)":
            tables += exponent_table(pooled, q, lambda lam: xi_exact(0.0))
    lines = ["# Exponent report", ""] + exponent_markdown(tables)
    for lam in sorted({r.lam for r in pooled if r.quantity == "b"}):
        band = _ratio_band(pooled, "a_hat", "b", lam)
        if math.isfinite(band):
            lines += ["", f"a_hat/b band ratio at lambda={lam:g}: {band:.3f}"]
    return "\n".join(lines) + "\n", tables
