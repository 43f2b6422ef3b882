"""Parametric bootstrap for the maximum statistic and the iterative detect/classify/correct loop."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.stats
from joblib import Parallel, delayed

from .cls import fit_cls
from .cml import DomainError, fit_cml
from .detection import (
    DEFAULT_DELTAS,
    approximate_critical_value,
    best_delta,
    make_scanner,
    max_statistic,
    normalize_method,
    resolve_tau_range,
    scan_maxima,
)
from .process import (
    DEFAULT_BURN_IN,
    ConfigurationError,
    CountSeries,
    InarModel,
    Intervention,
    LogLinearMean,
    SeedLike,
    as_counts,
    simulate_contaminated,
    substream,
)

MAX_ITERATIONS = 10

# substream ids under the master seed
_BOOT = 0


class FitError(RuntimeError):
    """A model fit needed by the procedure failed or did not converge."""


@dataclass(frozen=True)
class NullModel:
    """Clean model fitted to the data, in the form used for simulation and correction."""

    alphas: tuple
    lam: float | None = None
    betas: tuple | None = None
    method: str = "F"
    loglik: float | None = None
    cml: object = field(default=None, compare=False, repr=False)

    def lam_t(self, covariates, n: int) -> np.ndarray:
        if self.betas is None:
            return np.full(n, float(self.lam))
        return np.exp(np.asarray(covariates, dtype=float)[:n] @ np.asarray(self.betas))

    def inar_model(self, covariates=None, burn_in: int = DEFAULT_BURN_IN) -> InarModel:
        if self.betas is None:
            return InarModel(self.alphas, self.lam)
        x = np.asarray(covariates, dtype=float)
        # burn-in rows repeat the first covariate row
        rows = np.vstack([np.repeat(x[:1], burn_in, axis=0), x])
        return InarModel(self.alphas, LogLinearMean(self.betas, rows))

    def to_dict(self) -> dict:
        d = {"method": self.method, "alphas": list(self.alphas)}
        if self.betas is None:
            d["lambda"] = self.lam
        else:
            d["betas"] = list(self.betas)
        d["loglik"] = self.loglik
        return d


def _clip_alphas(a) -> tuple:
    a = np.clip(np.asarray(a, dtype=float), 0.0, 0.999)
    if a.sum() > 0.99:
        a *= 0.99 / a.sum()
    return tuple(float(v) for v in a)


def fit_null(series, p: int, method: str, covariates=None) -> NullModel:
    """Clean fit: CLS (clipped into the stationary region) for F, CML for score."""
    method = normalize_method(method)
    y = as_counts(series)
    if method == "F":
        if covariates is not None:
            raise ConfigurationError("the F path needs a constant innovation mean; use the score method")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = fit_cls(y, p)
        return NullModel(_clip_alphas(fit.alphas), max(fit.lam, 1e-3), None, "F")
    try:
        fit = fit_cml(y, p, covariates)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise FitError(f"null CML fit failed: {exc}") from exc
    if not fit.converged:
        raise FitError(f"null CML fit did not converge ({fit.message})")
    th = fit.theta
    if th.loglinear:
        return NullModel(tuple(th.alphas), None, tuple(th.mean), "score", fit.loglik, fit)
    return NullModel(tuple(th.alphas), th.lam, None, "score", fit.loglik, fit)


@dataclass(frozen=True)
class DeltaBootstrap:
    observed: float
    tau: int | None
    exceedances: int
    p_value: float


@dataclass(frozen=True)
class BootstrapResult:
    per_delta: dict  # delta -> DeltaBootstrap
    B: int
    chosen: tuple | None  # (delta, tau, p_value)
    level: float
    failed_replicates: int = 0
    null: NullModel | None = None

    @property
    def significant(self) -> bool:
        return self.chosen is not None and self.chosen[2] < self.level

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "level": self.level,
            "per_delta": [
                {
                    "delta": d,
                    "tau": r.tau,
                    "statistic": r.observed,
                    "exceedances": r.exceedances,
                    "p_value": r.p_value,
                }
                for d, r in sorted(self.per_delta.items())
            ],
            "chosen": None
            if self.chosen is None
            else {"delta": self.chosen[0], "tau": self.chosen[1], "p_value": self.chosen[2]},
            "significant": self.significant,
            "failed_replicates": self.failed_replicates,
        }


def _replicate_maxima(null, model, p, method, deltas, taus, n, covariates, seed, indices):
    out = np.empty((len(indices), len(deltas)))
    for row, b in enumerate(indices):
        ys = simulate_contaminated(model, (), n, rng=substream(seed, b))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sc = make_scanner(ys, p, method, covariates)
                per, _ = scan_maxima(sc, deltas, taus)
            out[row] = [per[float(d)][1] for d in deltas]
        except (ValueError, np.linalg.LinAlgError):
            out[row] = np.nan
    return out


def bootstrap_test(
    series,
    p: int,
    method: str = "F",
    delta_grid: Sequence[float] = DEFAULT_DELTAS,
    B: int = 500,
    rng: SeedLike = 0,
    level: float = 0.05,
    covariates=None,
    tau_range=None,
    threads: int = 1,
    null: NullModel | None = None,
) -> BootstrapResult:
    """Parametric bootstrap p-values of the per-type maximum statistics.

    Replicate ``b`` is simulated from the fitted clean model on substream ``b`` of
    ``rng``, so the result does not depend on ``threads``. ``N`` counts replicates
    whose maximum is not smaller than the observed one; a replicate whose statistic
    cannot be computed counts as an exceedance.
    """
    method = normalize_method(method)
    if B < 1:
        raise ConfigurationError("B must be at least 1")
    y = as_counts(series)
    n = y.size
    deltas = [float(d) for d in delta_grid]
    if not deltas:
        raise ConfigurationError("empty delta grid")
    lo, hi = resolve_tau_range(n, p, tau_range)
    taus = np.arange(lo, hi + 1)
    if null is None:
        null = fit_null(y, p, method, covariates)

    obs_fit = null.cml if method == "score" else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        observed, _ = scan_maxima(make_scanner(y, p, method, covariates, fit=obs_fit), deltas, taus)

    model = null.inar_model(covariates)
    chunks = np.array_split(np.arange(B), max(1, min(int(threads), B)))
    args = (null, model, p, method, deltas, taus, n, covariates, rng)
    if threads > 1:
        parts = Parallel(n_jobs=int(threads))(delayed(_replicate_maxima)(*args, c) for c in chunks)
    else:
        parts = [_replicate_maxima(*args, c) for c in chunks]
    reps = np.vstack(parts)
    failed = int(np.isnan(reps).any(axis=1).sum())

    per = {}
    for k, d in enumerate(deltas):
        tau, s = observed[d]
        if tau is None:
            per[d] = DeltaBootstrap(math.nan, None, B, 1.0)
            continue
        col = reps[:, k]
        N = int(np.sum(np.isnan(col) | (col >= s)))
        per[d] = DeltaBootstrap(s, tau, N, (N + 1) / (B + 1))
    pmap = {d: r.p_value for d, r in per.items() if r.tau is not None}
    chosen = None
    if pmap:
        # smallest p-value, ties toward larger delta
        d = best_delta({k: -v for k, v in pmap.items()})
        chosen = (d, per[d].tau, per[d].p_value)
    return BootstrapResult(per, int(B), chosen, float(level), failed, null)


# --------------------------------------------------------------------------
# correction
# --------------------------------------------------------------------------


def effect_distribution(y: int, lag_mean: float, iv_mean: float):
    """Conditional law of the intervention contribution given ``Y_t = y``: binomial."""
    if lag_mean <= 0:
        raise ValueError("lag_mean must be positive")
    return scipy.stats.binom(int(y), iv_mean / (lag_mean + iv_mean))


def conditional_effect_mean(y: int, lag_mean: float, iv_mean: float) -> float:
    """``E(U_t | Y_t = y, past) = y * iv_mean / (lag_mean + iv_mean)``."""
    if lag_mean <= 0:
        raise ValueError("lag_mean must be positive")
    if iv_mean < 0:
        raise ValueError("iv_mean must be nonnegative")
    return float(y) * iv_mean / (lag_mean + iv_mean)


def correct_series(series, alphas: Sequence[float], lam, iv: Intervention) -> CountSeries:
    """Remove the estimated intervention effect sequentially from ``t = tau`` on.

    ``lam`` is the innovation mean, scalar or one value per time point. Lags of
    the corrected series enter the conditional mean.
    """
    y0 = as_counts(series)
    n = y0.size
    alphas = np.asarray(alphas, dtype=float)
    p = alphas.size
    tau = int(iv.tau)
    if not (1 <= tau <= n):
        raise DomainError(f"tau={tau} outside the series 1..{n}", t=tau)
    labels = series.labels if isinstance(series, CountSeries) else None
    if iv.kappa < 0:
        warnings.warn("negative effect estimate; series left uncorrected", stacklevel=2)
        return CountSeries(y0, labels)
    if iv.kappa == 0:
        return CountSeries(y0, labels)
    if tau <= p:
        raise DomainError(f"tau={tau} leaves lags undefined for p={p}", t=tau)
    lam_t = np.broadcast_to(np.asarray(lam, dtype=float), (n,))
    y = y0.copy()
    for t in range(tau, n + 1):  # 1-based
        eff = iv.kappa * iv.delta ** (t - tau)
        if eff == 0.0:
            break
        k = t - 1
        lag_mean = float(alphas @ y[k - np.arange(1, p + 1)]) + lam_t[k]
        if lag_mean <= 0:
            raise DomainError(f"nonpositive conditional mean at t={t}", t=t)
        u = math.floor(conditional_effect_mean(int(y[k]), lag_mean, eff) * (1 + 1e-12))
        y[k] -= min(u, int(y[k]))
    return CountSeries(y, labels)


# --------------------------------------------------------------------------
# iterative procedure
# --------------------------------------------------------------------------


@dataclass
class DetectionConfig:
    delta_grid: tuple = DEFAULT_DELTAS
    B: int | None = 500  # None selects critical-value mode
    level: float = 0.05
    max_iterations: int = MAX_ITERATIONS
    seed: SeedLike | None = None
    tau_range: tuple | None = None
    threads: int = 1

    def __post_init__(self):
        self.delta_grid = tuple(float(d) for d in self.delta_grid)
        if self.B is not None and self.B < 1:
            raise ConfigurationError("B must be at least 1")
        if self.B is not None and self.seed is None:
            raise ConfigurationError("a seed is required for the bootstrap")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be at least 1")
        if not (0 < self.level < 1):
            raise ConfigurationError("level must lie in (0, 1)")


@dataclass
class Iteration:
    index: int
    null: NullModel
    test: object  # BootstrapResult or MaxResult
    detected: Intervention | None = None
    effect_fit: dict | None = None
    series: CountSeries | None = None
    p_value: float | None = None

    def to_dict(self) -> dict:
        d = {
            "iteration": self.index,
            "null_fit": self.null.to_dict(),
            "test": self.test.to_dict() if self.test is not None else None,
            "p_value": self.p_value,
            "detected": None,
            "effect_fit": self.effect_fit,
        }
        if self.detected is not None:
            d["detected"] = {
                "tau": self.detected.tau,
                "delta": self.detected.delta,
                "kappa": self.detected.kappa,
            }
        d["series"] = None if self.series is None else self.series.values.tolist()
        return d


@dataclass
class DetectionReport:
    method: str
    iterations: list = field(default_factory=list)
    final_fit: NullModel | None = None
    terminated_reason: str = "no-detection"
    warnings: list = field(default_factory=list)

    @property
    def interventions(self) -> list:
        return [it.detected for it in self.iterations if it.detected is not None]

    @property
    def corrected(self) -> CountSeries | None:
        snaps = [it.series for it in self.iterations if it.series is not None]
        return snaps[-1] if snaps else None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "terminated_reason": self.terminated_reason,
            "final_fit": None if self.final_fit is None else self.final_fit.to_dict(),
            "interventions": [
                {"tau": iv.tau, "delta": iv.delta, "kappa": iv.kappa} for iv in self.interventions
            ],
            "iterations": [it.to_dict() for it in self.iterations],
        }


def _fit_effect(y, p, method, tau, delta, covariates):
    """Alternative-model fit at the detected (tau, delta): returns (alphas, lam_t, kappa, summary)."""
    n = y.size
    if method == "F":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = fit_cls(y, p, [(tau, delta)])
        lam = np.full(n, fit.lam)
        return fit.alphas, lam, float(fit.kappas[0]), {
            "alphas": fit.alphas.tolist(),
            "lambda": fit.lam,
            "kappa": float(fit.kappas[0]),
        }
    fit = fit_cml(y, p, covariates, [(tau, delta)])
    if not fit.converged:
        raise FitError(f"alternative CML fit at tau={tau}, delta={delta} did not converge")
    th = fit.theta
    if th.loglinear:
        lam = np.exp(np.asarray(covariates, dtype=float)[:n] @ th.mean)
    else:
        lam = np.full(n, th.lam)
    return th.alphas, lam, float(th.kappas[0]), fit.to_dict()


def run_iterative_detection(
    series,
    p: int = 1,
    method: str = "F",
    config: DetectionConfig | None = None,
    covariates=None,
) -> DetectionReport:
    """Detect, classify and remove intervention effects one at a time.

    Each round fits the clean model, tests the maximum statistic (bootstrap, or
    the tabulated critical values when ``config.B`` is None), and if significant
    estimates the effect at the chosen ``(tau, delta)`` and subtracts it.
    """
    method = normalize_method(method)
    cfg = config or DetectionConfig(seed=0)
    y = CountSeries(as_counts(series), getattr(series, "labels", None))
    report = DetectionReport(method)
    crit = None
    if cfg.B is None:
        crit = approximate_critical_value(y.n, method, cfg.level)

    for j in range(cfg.max_iterations):
        try:
            null = fit_null(y, p, method, covariates)
            if cfg.B is None:
                res = max_statistic(
                    y, p, cfg.delta_grid, cfg.tau_range, method, cfg.level, covariates, critical_value=crit
                )
                hit = res.best.significant
                choice = (res.best.delta, res.best.tau) if hit else None
                pval = None
            else:
                res = bootstrap_test(
                    y, p, method, cfg.delta_grid, cfg.B, substream(cfg.seed, _BOOT, j),
                    cfg.level, covariates, cfg.tau_range, cfg.threads, null,
                )
                hit = res.significant
                choice = (res.chosen[0], res.chosen[1]) if res.chosen else None
                pval = res.chosen[2] if res.chosen else None
        except (FitError, ValueError, np.linalg.LinAlgError) as exc:
            report.warnings.append(f"iteration {j + 1}: {exc}")
            report.terminated_reason = "failure"
            return report
        it = Iteration(j + 1, null, res, p_value=pval)
        report.iterations.append(it)
        report.final_fit = null
        if not hit:
            report.terminated_reason = "no-detection"
            return report

        delta, tau = choice
        try:
            alphas, lam_t, kappa, summary = _fit_effect(y.values, p, method, tau, delta, covariates)
        except (FitError, ValueError, np.linalg.LinAlgError) as exc:
            report.warnings.append(f"iteration {j + 1}: {exc}")
            report.terminated_reason = "failure"
            return report
        iv = Intervention(tau, delta, kappa)
        it.detected = iv
        it.effect_fit = summary
        if kappa <= 0:
            report.warnings.append(
                f"iteration {j + 1}: effect estimate {kappa:.4g} at tau={tau} is not positive; no correction applied"
            )
            report.terminated_reason = "nonpositive-effect"
            return report
        y = correct_series(y, alphas, lam_t, iv)
        it.series = y

    report.terminated_reason = "iteration-cap"
    return report
