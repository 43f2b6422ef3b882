"""Tests for an intervention at known or unknown time and type.

Known ``(tau, delta)``: the F-type or score statistic compared with chi-square(1).
Unknown: the maximum over candidate times (and types), calibrated by the
tabulated approximate critical values or by the parametric bootstrap.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.special

from .cls import FScanner, fit_cls
from .cml import fit_cml, score_context
from .process import ConfigurationError, UnsupportedError, as_counts

DEFAULT_DELTAS = (0.0, 0.6, 0.8, 0.9, 1.0)
METHODS = ("F", "score")

# approximate critical values of the maximum statistic, keyed (n, method) -> {level: value}
CRITICAL_VALUES = {
    (100, "F"): {0.10: 17.0, 0.05: 20.0, 0.01: 27.0},
    (100, "score"): {0.10: 22.0, 0.05: 26.0, 0.01: 35.0},
    (200, "F"): {0.10: 19.0, 0.05: 22.0, 0.01: 28.0},
    (200, "score"): {0.10: 26.0, 0.05: 30.0, 0.01: 40.0},
}


def normalize_method(method: str) -> str:
    m = str(method).strip().lower()
    if m == "f":
        return "F"
    if m == "score":
        return "score"
    raise ConfigurationError(f"unknown method {method!r}; use 'F' or 'score'")


def chi2_pvalue(stat: float) -> float:
    """Upper tail of chi-square(1) via the regularized incomplete gamma function."""
    if math.isnan(stat):
        return math.nan
    if stat <= 0.0:
        return 1.0
    return float(scipy.special.gammaincc(0.5, 0.5 * stat))


def chi2_quantile(prob: float) -> float:
    """``prob``-quantile of chi-square(1)."""
    if not (0.0 < prob < 1.0):
        raise ValueError("prob must lie in (0, 1)")
    return float(2.0 * scipy.special.gammainccinv(0.5, 1.0 - prob))


@dataclass(frozen=True)
class TestOutcome:
    method: str
    tau: int
    delta: float
    statistic: float
    p_value: float
    significant: bool
    kappa_hat: float = math.nan
    available: bool = True

    __test__ = False  # keep pytest from collecting this class

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "tau": self.tau,
            "delta": self.delta,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "significant": self.significant,
            "kappa_hat": self.kappa_hat,
            "available": self.available,
        }


@dataclass(frozen=True)
class MaxResult:
    best: TestOutcome
    per_delta: dict  # delta -> (tau*, statistic); tau* is None when the whole row is unavailable
    tau_range: tuple[int, int]
    unavailable: tuple = field(default=())  # (delta, tau) cells skipped
    critical_value: float | None = None

    def to_dict(self) -> dict:
        return {
            "best": self.best.to_dict(),
            "per_delta": [
                {"delta": d, "tau": t, "statistic": s} for d, (t, s) in sorted(self.per_delta.items())
            ],
            "tau_range": list(self.tau_range),
            "unavailable_cells": len(self.unavailable),
            "critical_value": self.critical_value,
        }


def make_scanner(series, p: int, method: str, covariates=None, fit=None):
    """Object with ``scan(delta, taus)`` for the requested statistic."""
    method = normalize_method(method)
    if method == "F":
        if covariates is not None:
            raise UnsupportedError("the F statistic needs a constant innovation mean; use the score method")
        return FScanner(series, p)
    return score_context(series, p, covariates, fit=fit)


def resolve_tau_range(n: int, p: int, tau_range=None, edge: int = 0) -> tuple[int, int]:
    lo, hi = (p + 1, n) if tau_range is None else (int(tau_range[0]), int(tau_range[1]))
    lo, hi = max(lo, p + 1) + int(edge), min(hi, n) - int(edge)
    if tau_range is not None and (int(tau_range[0]) < p + 1 or int(tau_range[1]) > n):
        raise ConfigurationError(f"tau range must lie within [{p + 1}, {n}]")
    if lo > hi:
        raise ConfigurationError("empty range of candidate intervention times")
    return lo, hi


def _kappa_hat(y, p, tau, delta, method, covariates):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            if method == "F":
                return float(fit_cls(y, p, [(tau, delta)]).kappas[0])
            fit = fit_cml(y, p, covariates, [(tau, delta)])
            return float(fit.theta.kappas[0]) if fit.converged else math.nan
        except (ValueError, np.linalg.LinAlgError):
            return math.nan


def test_at(
    series,
    p: int,
    tau: int,
    delta: float,
    method: str = "F",
    level: float = 0.05,
    covariates=None,
    estimate_kappa: bool = True,
) -> TestOutcome:
    """Test for an intervention of type ``delta`` at the known time ``tau``."""
    method = normalize_method(method)
    y = as_counts(series)
    if not (p + 1 <= tau <= y.size):
        raise ConfigurationError(f"tau must lie in [{p + 1}, {y.size}], got {tau}")
    if method == "score" and p != 1:
        raise UnsupportedError("score statistics are available for INAR(1) only")
    stat = float(make_scanner(y, p, method, covariates).scan(delta, [tau])[0])
    if math.isnan(stat):
        return TestOutcome(method, int(tau), float(delta), math.nan, math.nan, False, math.nan, False)
    pv = chi2_pvalue(stat)
    kappa = _kappa_hat(y, p, tau, delta, method, covariates) if estimate_kappa else math.nan
    return TestOutcome(method, int(tau), float(delta), stat, pv, pv < level, kappa)


def scan_maxima(scanner, deltas: Sequence[float], taus: np.ndarray):
    """Per-delta ``(tau*, max)`` plus the list of unavailable cells.

    The earliest time wins ties within a row; a row with no available cell maps to
    ``(None, nan)``.
    """
    per, bad = {}, []
    for d in deltas:
        s = scanner.scan(d, taus)
        miss = np.isnan(s)
        if miss.any():
            bad.extend((float(d), int(t)) for t in taus[miss])
        if miss.all():
            per[float(d)] = (None, math.nan)
            continue
        k = int(np.nanargmax(s))
        per[float(d)] = (int(taus[k]), float(s[k]))
    return per, bad


def best_delta(per_delta: Mapping[float, float]) -> float | None:
    """Arg-max over the map, ties toward the larger delta; None if nothing is available."""
    best, top = None, -math.inf
    for d in sorted(per_delta):
        s = per_delta[d]
        if s is None or math.isnan(s):
            continue
        if s >= top:
            best, top = d, s
    return best


def max_statistic(
    series,
    p: int,
    delta_grid: Sequence[float] = DEFAULT_DELTAS,
    tau_range=None,
    method: str = "F",
    level: float = 0.05,
    covariates=None,
    critical_value: float | None = None,
    edge: int = 0,
    scanner=None,
) -> MaxResult:
    """Maximum of the statistic over candidate times and the delta grid.

    ``best.p_value`` is the pointwise chi-square(1) tail and is not a valid
    p-value for the maximum. If ``critical_value`` is given, ``best.significant``
    compares the maximum with it (strictly); otherwise with the pointwise level.
    """
    method = normalize_method(method)
    y = as_counts(series)
    if not len(delta_grid):
        raise ConfigurationError("empty delta grid")
    lo, hi = resolve_tau_range(y.size, p, tau_range, edge)
    taus = np.arange(lo, hi + 1)
    sc = scanner if scanner is not None else make_scanner(y, p, method, covariates)
    per, bad = scan_maxima(sc, delta_grid, taus)
    d = best_delta({k: v[1] for k, v in per.items()})
    if d is None:
        best = TestOutcome(method, lo, math.nan, math.nan, math.nan, False, math.nan, False)
    else:
        tau, stat = per[d]
        pv = chi2_pvalue(stat)
        sig = stat > critical_value if critical_value is not None else pv < level
        best = TestOutcome(method, tau, d, stat, pv, bool(sig))
    return MaxResult(best, per, (lo, hi), tuple(bad), critical_value)


def approximate_critical_value(n: int, method: str, level: float) -> float:
    """Tabulated critical value of the maximum statistic for n in {100, 200}."""
    method = normalize_method(method)
    table = CRITICAL_VALUES.get((int(n), method))
    if table is None:
        raise ConfigurationError(
            f"no tabulated critical value for n={n}, method={method}; use the bootstrap test"
        )
    for lv, c in table.items():
        if math.isclose(float(level), lv):
            return c
    raise ConfigurationError(f"level must be one of 0.10, 0.05, 0.01 (got {level}); use the bootstrap test")


def classify_by_max(per_delta_statistics: Mapping[float, float], threshold: float) -> float | None:
    """Type with the largest statistic if that exceeds ``threshold`` (ties toward larger delta)."""
    if not per_delta_statistics:
        raise ConfigurationError("need at least one statistic")
    d = best_delta(per_delta_statistics)
    if d is None or not per_delta_statistics[d] > threshold:
        return None
    return d
