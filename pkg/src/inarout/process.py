"""Poisson INAR(p) processes with intervention effects.

The contaminated model is

    Y_t = sum_i alpha_i o Y_{t-i} + e_t + sum_j U_{t,j},

with ``e_t ~ Pois(lambda_t)`` and ``U_{t,j} ~ Pois(kappa_j delta_j^(t - tau_j))``
for ``t >= tau_j`` (zero before). ``o`` is binomial thinning.

Randomness is split into independent substreams keyed by component so that,
for instance, adding an intervention with ``kappa = 0`` leaves every other draw
untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence]

DEFAULT_BURN_IN = 500

# substream component ids
_THIN = 0
_INNOV = 1
_INTERV = 2


class ConfigurationError(ValueError):
    """Inconsistent model, series or run configuration."""


class UnsupportedError(ValueError):
    """Operation not available for the given model class."""


# --------------------------------------------------------------------------
# random streams
# --------------------------------------------------------------------------


def as_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, (int, np.integer)) and not isinstance(seed, bool):
        if seed < 0:
            raise ConfigurationError("seed must be nonnegative")
        return np.random.SeedSequence(int(seed))
    raise TypeError(f"expected int or SeedSequence, got {type(seed).__name__}")


def substream(seed: SeedLike, *key: int) -> np.random.SeedSequence:
    """Independent child stream of ``seed`` addressed by an integer key path.

    Unlike ``SeedSequence.spawn`` the result depends only on ``(seed, key)``,
    never on how many children were spawned before.
    """
    ss = as_seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(k) for k in key))


def generator(seed: SeedLike, *key: int) -> np.random.Generator:
    return np.random.default_rng(substream(seed, *key))


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CountSeries:
    """Observed counts ``y_1..y_n`` with optional time labels."""

    values: np.ndarray
    labels: tuple | None = None

    def __init__(self, values, labels=None):
        arr = np.asarray(values)
        if arr.ndim != 1 or arr.size < 1:
            raise ConfigurationError("a count series needs at least one value")
        if arr.dtype.kind == "f":
            if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
                raise ConfigurationError("counts must be integer valued")
        elif arr.dtype.kind not in "iu":
            raise ConfigurationError(f"counts must be integers, got dtype {arr.dtype}")
        arr = arr.astype(np.int64)
        if np.any(arr < 0):
            raise ConfigurationError("counts must be nonnegative")
        arr.setflags(write=False)
        if labels is not None:
            labels = tuple(labels)
            if len(labels) != arr.size:
                raise ConfigurationError("labels and values differ in length")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CountSeries):
            return NotImplemented
        return np.array_equal(self.values, other.values) and self.labels == other.labels

    @property
    def n(self) -> int:
        return self.values.size


def as_counts(series) -> np.ndarray:
    """Integer array view of a ``CountSeries`` or array-like of counts."""
    if isinstance(series, CountSeries):
        return series.values
    return CountSeries(series).values


@dataclass(frozen=True)
class ConstantMean:
    lam: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ConfigurationError(f"lambda must be positive, got {self.lam}")

    def values(self, n: int) -> np.ndarray:
        return np.full(n, float(self.lam))


@dataclass(frozen=True, eq=False)
class LogLinearMean:
    """``lambda_t = exp(x_t' beta)`` with one covariate row per time point."""

    betas: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=float).ravel()
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim != 2 or x.shape[1] != b.size:
            raise ConfigurationError(
                f"covariates must have shape (rows, {b.size}), got {x.shape}"
            )
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "covariates", x)

    def values(self, n: int) -> np.ndarray:
        if self.covariates.shape[0] < n:
            raise ConfigurationError(
                f"need {n} covariate rows, have {self.covariates.shape[0]}"
            )
        return np.exp(self.covariates[:n] @ self.betas)


MeanSpec = Union[ConstantMean, LogLinearMean]


@dataclass(frozen=True)
class InarModel:
    alphas: tuple
    mean: MeanSpec

    def __init__(self, alphas, mean):
        if np.isscalar(alphas):
            alphas = (alphas,)
        alphas = tuple(float(a) for a in alphas)
        if not alphas:
            raise ConfigurationError("order p must be at least 1")
        if any(not (0.0 <= a < 1.0) for a in alphas):
            raise ConfigurationError(f"thinning probabilities must lie in [0, 1): {alphas}")
        if sum(alphas) >= 1.0:
            raise ConfigurationError(f"sum of alphas must be < 1 for stationarity: {alphas}")
        if not isinstance(mean, (ConstantMean, LogLinearMean)):
            mean = ConstantMean(float(mean))
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "mean", mean)

    @property
    def p(self) -> int:
        return len(self.alphas)


@dataclass(frozen=True)
class Intervention:
    """One intervention effect: onset ``tau`` (1-based), decay ``delta``, size ``kappa``."""

    tau: int
    delta: float
    kappa: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.delta <= 1.0):
            raise ConfigurationError(f"delta must lie in [0, 1], got {self.delta}")
        if int(self.tau) != self.tau or self.tau < 1:
            raise ConfigurationError(f"tau must be a positive integer, got {self.tau}")
        object.__setattr__(self, "tau", int(self.tau))

    @property
    def profile(self) -> tuple[int, float]:
        return (self.tau, self.delta)


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------


def binomial_thin(count: int, alpha: float, rng: np.random.Generator) -> int:
    """``alpha o count``: number of successes among ``count`` Bernoulli(alpha) trials."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if count < 0:
        raise ValueError("count must be nonnegative")
    return int(rng.binomial(int(count), alpha))


def decay_profile(n: int, tau: int, delta: float) -> np.ndarray:
    """``delta^(t - tau) 1(t >= tau)`` for ``t = 1..n``, with ``0^0 = 1``."""
    t = np.arange(1, n + 1)
    out = np.zeros(n)
    on = t >= tau
    # numpy gives 0.0 ** 0 == 1.0, which is the convention we need
    out[on] = float(delta) ** (t[on] - tau)
    return out


def intervention_mean(iv: Intervention, t: int) -> float:
    if t < 1:
        raise ValueError("t is 1-based")
    if t < iv.tau:
        return 0.0
    return float(iv.kappa) * float(iv.delta) ** (t - iv.tau)


def stationary_mean(model: InarModel) -> float:
    if not isinstance(model.mean, ConstantMean):
        raise UnsupportedError("stationary mean requires a constant innovation mean")
    return model.mean.lam / (1.0 - sum(model.alphas))


def simulate_contaminated(
    model: InarModel,
    interventions: Sequence[Intervention],
    n: int,
    burn_in: int = DEFAULT_BURN_IN,
    rng: SeedLike = 0,
) -> CountSeries:
    """Simulate ``n`` observations of the (possibly contaminated) INAR(p) model.

    The chain starts from ``p`` zeros and runs ``burn_in`` clean steps before the
    retained window. Intervention onsets refer to the retained window. For a
    log-linear mean the covariate rows cover burn-in followed by the window.
    """
    n = int(n)
    burn_in = int(burn_in)
    if n < 1 or burn_in < 0:
        raise ConfigurationError("need n >= 1 and burn_in >= 0")
    p = model.p
    total = burn_in + n
    for iv in interventions:
        if not (1 <= iv.tau <= n):
            raise ConfigurationError(f"intervention at tau={iv.tau} outside 1..{n}")
        if iv.kappa < 0:
            raise ConfigurationError("simulation requires kappa >= 0")

    lam = model.mean.values(total)

    innov = generator(rng, _INNOV).poisson(lam)
    extra = np.zeros(total, dtype=np.int64)
    for j, iv in enumerate(interventions):
        rates = iv.kappa * decay_profile(n, iv.tau, iv.delta)
        extra[burn_in:] += generator(rng, _INTERV, j).poisson(rates)

    thinners = [generator(rng, _THIN, i) for i in range(p)]
    alphas = model.alphas
    y = np.zeros(total + p, dtype=np.int64)
    fresh = innov + extra
    for s in range(total):
        k = s + p
        acc = fresh[s]
        for i in range(p):
            prev = y[k - 1 - i]
            if prev:
                acc += thinners[i].binomial(prev, alphas[i])
        y[k] = acc
    return CountSeries(y[p + burn_in:])
