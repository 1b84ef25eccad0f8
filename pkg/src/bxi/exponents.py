"""Closed-form intersection exponents and decay-rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

_S24 = math.sqrt(24.0)


def _check_nonneg(x: float, name: str) -> None:
    if x < 0 or math.isnan(x):
        raise ValueError(f"{name} must be non-negative, got {x}")


def U(x: float) -> float:
    _check_nonneg(x, "x")
    return (math.sqrt(24.0 * x + 1.0) - 1.0) / _S24


def V(x: float) -> float:
    return (6.0 * x * x - 1.0) / 12.0


def xi_exact(lam: float) -> float:
    """Two-path exponent ``xi(2, lam)``."""
    _check_nonneg(lam, "lambda")
    return lam / 2.0 + 11.0 / 24.0 + 5.0 / 24.0 * math.sqrt(24.0 * lam + 1.0)


def xi_exact_general(p: Sequence[int], lambdas: Sequence[float]) -> float:
    """Packet exponent ``V(sum U(p_j) + sum U(lam_j))``."""
    if len(p) == 0 or len(p) != len(lambdas):
        raise ValueError("need one lambda per packet")
    for k in p:
        if k < 1 or int(k) != k:
            raise ValueError("packet sizes must be positive integers")
    return V(sum(U(k) for k in p) + sum(U(x) for x in lambdas))


@dataclass(frozen=True)
class ExponentFit:
    xi_hat: float
    stderr: float
    r_range: tuple[float, ...]
    intercept: float
    intercept_stderr: float = 0.0


def _points(records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rs = np.array([rec.r for rec in records], dtype=float)
    vals = np.array([rec.value for rec in records], dtype=float)
    ses = np.array([rec.stderr for rec in records], dtype=float)
    for r, v in zip(rs, vals):
        if not v > 0:
            raise ValueError(f"non-positive estimate at r={r:g}")
    return rs, vals, ses


def fit_exponent(records) -> ExponentFit:
    """Weighted least squares of ``log(value)`` on ``r``; returns minus the slope.

    The variance of ``log(value)`` is ``(stderr/value)**2`` by the delta
    method.  When every standard error is zero the fit is unweighted.  The
    reported standard error is the model-based one, scaled by the residual
    variance when the weights are uninformative.
    """
    records = list(records)
    if len({rec.r for rec in records}) < 3:
        raise ValueError("need at least three radii")
    rs, vals, ses = _points(records)
    y = np.log(vals)
    rel = ses / vals
    weighted = bool(np.all(rel > 0))
    w = 1.0 / rel**2 if weighted else np.ones_like(rs)
    X = np.column_stack((np.ones_like(rs), rs))
    WX = X * w[:, None]
    cov = np.linalg.inv(X.T @ WX)
    beta = cov @ (WX.T @ y)
    if not weighted:
        resid = y - X @ beta
        dof = len(rs) - 2
        s2 = float(resid @ resid) / dof if dof > 0 else 0.0
        cov = cov * s2
    return ExponentFit(float(-beta[1]), float(math.sqrt(max(cov[1, 1], 0.0))),
                       tuple(float(r) for r in rs), float(beta[0]), float(math.sqrt(max(cov[0, 0], 0.0))))


@dataclass(frozen=True)
class FlatnessReport:
    values: dict[float, float]
    c_min: float
    c_max: float

    @property
    def band_ratio(self) -> float:
        return self.c_max / self.c_min


def flatness(records, xi: float) -> FlatnessReport:
    """``exp(r xi) * value`` per radius and its range."""
    rs, vals, _ = _points(list(records))
    scaled = {float(r): float(math.exp(r * xi) * v) for r, v in zip(rs, vals)}
    return FlatnessReport(scaled, min(scaled.values()), max(scaled.values()))


@dataclass(frozen=True)
class SubadditivityReport:
    max_ratio: float
    argmax: tuple[int, int]
    min_ratio: float
    argmin: tuple[int, int]
    ratios: dict[tuple[int, int], float]

    @property
    def spread(self) -> float:
        return self.max_ratio / self.min_ratio


def subadditivity_report(records, max_radius: int | None = None) -> SubadditivityReport:
    """Ratios ``value[m+n+1] / (value[m] * value[n])`` over all pairs available.

    Pairs range over integers ``m, n >= 1`` with ``m + n + 1`` at most
    ``max_radius`` (default: the largest radius present).  A missing radius
    raises.
    """
    rs, vals, _ = _points(list(records))
    table = {}
    for r, v in zip(rs, vals):
        if float(r).is_integer():
            table[int(r)] = float(v)
    if len(table) < 2:
        raise ValueError("need several integer radii")
    top = max(table) if max_radius is None else int(max_radius)
    ratios = {}
    for m, n in product(range(1, top), repeat=2):
        k = m + n + 1
        if k > top:
            continue
        for need in (m, n, k):
            if need not in table:
                raise ValueError(f"missing radius {need}")
        ratios[(m, n)] = table[k] / (table[m] * table[n])
    if not ratios:
        raise ValueError("no admissible pair (m, n)")
    hi = max(ratios, key=ratios.get)
    lo = min(ratios, key=ratios.get)
    return SubadditivityReport(ratios[hi], hi, ratios[lo], lo, ratios)
