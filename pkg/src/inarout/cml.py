"""Exact conditional likelihood of the (contaminated) Poisson INAR(p) model.

Transition probabilities are convolutions of binomial thinnings with a Poisson
arrival law and are evaluated in log space. Score and Hessian elements are
ratios of "shifted" transition probabilities

    r(a; b) = p(y_t - a | y_{t-1} - b_1, ..., y_{t-p} - b_p) / p(y_t | y_{t-1}, ..., y_{t-p}),

with the convention that a probability with a negative argument is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .cls import fit_cls
from .process import (
    ConfigurationError,
    LogLinearMean,
    UnsupportedError,
    as_counts,
    decay_profile,
)

ALPHA_EPS = 1e-6
MEAN_FLOOR = 1e-8
GRAD_TOL = 1e-6
MAX_ITER = 500
COND_LIMIT = 1e12


class DomainError(ValueError):
    """Parameters outside the likelihood-feasible region."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class SingularityError(np.linalg.LinAlgError):
    """Information matrix is (nearly) singular."""


# --------------------------------------------------------------------------
# log-space primitives
# --------------------------------------------------------------------------

_LGAMMA = gammaln(np.arange(1.0, 1025.0))  # log(k!) for k = 0..1023


def _logfact(k: np.ndarray) -> np.ndarray:
    global _LGAMMA
    top = int(k.max(initial=0))
    if top >= _LGAMMA.size:
        _LGAMMA = gammaln(np.arange(1.0, 2.0 * top + 2.0))
    return _LGAMMA[k]


def _klog(k: np.ndarray, a: float) -> np.ndarray:
    # k * log(a) with 0 * log(0) = 0
    if a > 0.0:
        return k * math.log(a)
    return np.where(k == 0, 0.0, -np.inf)


def _lse(a: np.ndarray, axis: int = -1) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - m).sum(axis=axis)) + np.squeeze(m, axis=axis)


def _log_binom_grid(x: np.ndarray, alpha: float, K: int) -> np.ndarray:
    """log P(Bin(x_r, alpha) = k) on k = 0..K-1 for each row (``-inf`` where impossible)."""
    k = np.arange(K)
    xr = x[:, None]
    valid = (k[None, :] <= xr) & (xr >= 0)
    rest = np.where(valid, xr - k[None, :], 0)
    out = (
        _logfact(np.maximum(xr, 0))
        - _logfact(k)[None, :]
        - _logfact(rest)
        + _klog(k, alpha)[None, :]
        + _klog(rest, 1.0 - alpha)
    )
    out[~valid] = -np.inf
    return out


def _log_pois(j: np.ndarray, mu: np.ndarray) -> np.ndarray:
    valid = j >= 0
    js = np.where(valid, j, 0)
    out = js * np.log(mu) - mu - _logfact(js)
    return np.where(valid, out, -np.inf)


def log_transition(y: np.ndarray, lags: np.ndarray, alphas: Sequence[float], mu: np.ndarray) -> np.ndarray:
    """Vectorized ``log p(y_r | lags_r)`` for rows r; negative arguments give ``-inf``.

    ``lags`` has shape (rows, p) with column i holding y_{t-i-1}.
    """
    y = np.asarray(y, dtype=np.int64)
    lags = np.asarray(lags, dtype=np.int64)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), y.shape)
    p = lags.shape[1]
    ymax = max(int(y.max(initial=0)), 0)
    K = min(ymax, max(int(lags.max(initial=0)), 0)) + 1
    if p == 1:
        B = _log_binom_grid(lags[:, 0], alphas[0], K)
        P = _log_pois(y[:, None] - np.arange(K)[None, :], mu[:, None])
        out = _lse(B + P, axis=1)
    else:
        # R[r, s] = log P(arrivals + thinned lags 2..p = s), s = 0..ymax
        s = np.arange(ymax + 1)
        R = _log_pois(s[None, :], mu[:, None])
        rows = np.arange(y.size)[:, None, None]
        for i in range(1, p):
            Bi = _log_binom_grid(lags[:, i], alphas[i], K)
            idx = s[None, :, None] - np.arange(K)[None, None, :]
            ok = idx >= 0
            T = np.where(ok, R[rows, np.where(ok, idx, 0)], -np.inf) + Bi[:, None, :]
            R = _lse(T, axis=2)
        B1 = _log_binom_grid(lags[:, 0], alphas[0], K)
        idx = y[:, None] - np.arange(K)[None, :]
        ok = idx >= 0
        T = np.where(ok, R[np.arange(y.size)[:, None], np.clip(idx, 0, ymax)], -np.inf)
        out = _lse(B1 + T, axis=1)
    return np.where(y < 0, -np.inf, out)


def _p1_ratios(y: np.ndarray, x: np.ndarray, alpha: float, mu: np.ndarray):
    """INAR(1) ``log p(y|x)`` and the ratios ``p(y-a | x-b) / p(y|x)`` for a <= 2, b <= a.

    Shares one binomial and one Poisson grid across all shifts by working in
    row-scaled linear space. Rows whose scaled sum underflows are redone in log
    space.
    """
    y = np.asarray(y, dtype=np.int64)
    x = np.asarray(x, dtype=np.int64)
    K = min(int(y.max(initial=0)), int(x.max(initial=0))) + 1
    L0 = _log_binom_grid(x, alpha, K)
    Q = _log_pois(y[:, None] - np.arange(K + 2)[None, :], mu[:, None])
    cm = L0.max(axis=1)
    dm = Q.max(axis=1)
    B0 = np.exp(L0 - cm[:, None])
    P = np.exp(Q - dm[:, None])
    k = np.arange(K)[None, :]
    xf = x[:, None].astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        f1 = np.where(xf >= 1, np.maximum(xf - k, 0.0) / (xf * (1.0 - alpha)), 0.0)
        f2 = np.where(xf >= 2, np.maximum(xf - 1 - k, 0.0) / ((xf - 1) * (1.0 - alpha)), 0.0)
    B1 = B0 * f1
    B2 = B1 * f2
    S00 = np.einsum("ij,ij->i", B0, P[:, :K])
    grids = {0: B0, 1: B1, 2: B2}
    out = {}
    with np.errstate(divide="ignore", invalid="ignore"):
        for a, b in ((1, 0), (1, 1), (2, 0), (2, 1), (2, 2)):
            out[(a, b)] = np.einsum("ij,ij->i", grids[b], P[:, a:a + K]) / S00
        l0 = np.log(S00) + cm + dm
    bad = ~(S00 > 1e-250) | ~np.isfinite(l0)
    if np.any(bad):
        yb, xb, mb = y[bad], x[bad][:, None], mu[bad]
        a1 = np.array([alpha])
        lb = log_transition(yb, xb, a1, mb)
        l0[bad] = lb
        for (a, b), r in out.items():
            r[bad] = np.exp(log_transition(yb - a, xb - b, a1, mb) - lb)
    return l0, out


def transition_log_prob(y: int, lags: Sequence[int], alphas: Sequence[float], mean_t: float) -> float:
    """``log p(y | y_{t-1}, ..., y_{t-p})`` for arrival mean ``mean_t``."""
    if not mean_t > 0:
        raise DomainError(f"transition mean must be positive, got {mean_t}")
    lags = np.atleast_1d(np.asarray(lags, dtype=np.int64))
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    if lags.size != alphas.size:
        raise ConfigurationError("need one lag per thinning probability")
    if y < 0 or np.any(lags < 0):
        raise DomainError("counts must be nonnegative")
    return float(log_transition(np.array([y]), lags[None, :], alphas, np.array([mean_t]))[0])


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Theta:
    """Parameter vector ``(alpha_1..alpha_p, lambda | beta, kappa_1..kappa_J)``."""

    alphas: np.ndarray
    mean: np.ndarray  # (lambda,) or betas
    kappas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    loglinear: bool = False

    def __post_init__(self):
        for name in ("alphas", "mean", "kappas"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy())

    @classmethod
    def constant(cls, alphas, lam, kappas=()):
        return cls(np.atleast_1d(alphas), np.array([lam]), np.asarray(kappas, dtype=float))

    @classmethod
    def regression(cls, alphas, betas, kappas=()):
        return cls(np.atleast_1d(alphas), np.asarray(betas), np.asarray(kappas, dtype=float), loglinear=True)

    @property
    def p(self) -> int:
        return self.alphas.size

    @property
    def lam(self) -> float:
        if self.loglinear:
            raise AttributeError("log-linear parameterization has no scalar lambda")
        return float(self.mean[0])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.alphas, self.mean, self.kappas])

    @property
    def blocks(self) -> dict[str, slice]:
        p, d = self.alphas.size, self.mean.size
        return {
            "alpha": slice(0, p),
            "beta" if self.loglinear else "lambda": slice(p, p + d),
            "kappa": slice(p + d, p + d + self.kappas.size),
        }

    def with_vector(self, v) -> "Theta":
        v = np.asarray(v, dtype=float)
        p, d = self.alphas.size, self.mean.size
        return Theta(v[:p], v[p:p + d], v[p + d:], self.loglinear)

    def to_dict(self) -> dict:
        out = {"alphas": self.alphas.tolist(), "kappas": self.kappas.tolist()}
        if self.loglinear:
            out["betas"] = self.mean.tolist()
        else:
            out["lambda"] = float(self.mean[0])
        return out


# --------------------------------------------------------------------------
# likelihood engine
# --------------------------------------------------------------------------


@dataclass
class Evaluation:
    loglik: float
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None
    # per-row pieces (rows t = p+1..n), used by the score scan
    g_mu: np.ndarray | None = None
    h_mumu: np.ndarray | None = None
    cross: np.ndarray | None = None  # d^2 l_t / d mu_t d theta_null, shape (rows, p + d)


class Likelihood:
    """Conditional log-likelihood of one series under fixed intervention profiles."""

    def __init__(self, series, p: int, profiles: Sequence[tuple[int, float]] = (), covariates=None):
        y = as_counts(series)
        n = y.size
        p = int(p)
        if p < 1:
            raise ConfigurationError("order p must be at least 1")
        if n <= p:
            raise ConfigurationError(f"series of length {n} too short for p={p}")
        self.n, self.p = n, p
        self.profiles = tuple((int(t), float(d)) for t, d in profiles)
        self.y = y[p:]
        self.lags = np.stack([y[p - i:n - i] for i in range(1, p + 1)], axis=1)
        m = n - p
        if self.profiles:
            self.W = np.stack([decay_profile(n, t, d)[p:] for t, d in self.profiles], axis=1)
        else:
            self.W = np.zeros((m, 0))
        if covariates is None:
            self.X = None
            self.d_mean = 1
        else:
            X = np.asarray(covariates, dtype=float)
            if X.ndim != 2 or X.shape[0] < n:
                raise ConfigurationError(f"need at least {n} covariate rows, got shape {X.shape}")
            self.X = X[p:n]
            self.d_mean = X.shape[1]
        self.J = len(self.profiles)
        self.dim = p + self.d_mean + self.J

    @property
    def loglinear(self) -> bool:
        return self.X is not None

    def theta(self, v) -> Theta:
        v = np.asarray(v, dtype=float)
        p, d = self.p, self.d_mean
        return Theta(v[:p], v[p:p + d], v[p + d:], self.loglinear)

    def arrival_mean(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        p, d = self.p, self.d_mean
        if self.X is None:
            lam = np.full(self.y.size, v[p])
        else:
            lam = np.exp(self.X @ v[p:p + d])
        return lam, lam + self.W @ v[p + d:]

    def check(self, v) -> tuple[np.ndarray, np.ndarray]:
        v = np.asarray(v, dtype=float)
        if v.size != self.dim:
            raise ConfigurationError(f"expected {self.dim} parameters, got {v.size}")
        a = v[:self.p]
        if np.any(~np.isfinite(v)):
            raise DomainError("non-finite parameter")
        if np.any(a < 0) or np.any(a >= 1) or a.sum() >= 1:
            raise DomainError(f"alphas outside the stationary region: {a}")
        if self.X is None and v[self.p] <= 0:
            raise DomainError(f"lambda must be positive, got {v[self.p]}")
        lam, mu = self.arrival_mean(v)
        bad = np.flatnonzero(~(mu > 0))
        if bad.size:
            t = int(bad[0]) + self.p + 1
            raise DomainError(f"arrival mean not positive at t={t}", t=t)
        return lam, mu

    def feasible(self, v, floor: float = MEAN_FLOOR) -> bool:
        try:
            _, mu = self.check(v)
        except DomainError:
            return False
        return bool(mu.min() >= floor)

    def _lp(self, a, shift, alphas, mu):
        lags = self.lags - np.asarray(shift)[None, :] if np.any(shift) else self.lags
        return log_transition(self.y - a, lags, alphas, mu)

    def evaluate(self, v, order: int = 2) -> Evaluation:
        v = np.asarray(v, dtype=float)
        lam, mu = self.check(v)
        p, d = self.p, self.d_mean
        alphas = v[:p]
        zero = np.zeros(p, dtype=np.int64)
        fast = _p1_ratios(self.y, self.lags[:, 0], alphas[0], mu) if p == 1 else None
        l0 = fast[0] if fast is not None else self._lp(0, zero, alphas, mu)
        ll = float(l0.sum())
        if order == 0:
            return Evaluation(ll)

        def ratio(a, shift):
            if fast is not None:
                return fast[1][(a, int(shift[0]))]
            return np.exp(self._lp(a, shift, alphas, mu) - l0)

        eye = np.eye(p, dtype=np.int64)
        x = self.lags.astype(float)
        inv1a = 1.0 / (1.0 - alphas)
        r10 = ratio(1, zero)
        r1e = np.stack([ratio(1, eye[i]) for i in range(p)], axis=1)
        g_mu = r10 - 1.0
        g_alpha = x * inv1a[None, :] * (r1e - 1.0)

        if self.X is None:
            dmu = np.ones((self.y.size, 1))
        else:
            dmu = lam[:, None] * self.X
        grad = np.concatenate([g_alpha.sum(0), dmu.T @ g_mu, self.W.T @ g_mu])
        if order == 1:
            return Evaluation(ll, grad, g_mu=g_mu)

        r20 = ratio(2, zero)
        r2e = np.stack([ratio(2, eye[i]) for i in range(p)], axis=1)
        h_mumu = r20 - r10 ** 2
        h_amu = x * inv1a[None, :] * (r2e - r1e * r10[:, None])

        H = np.zeros((self.dim, self.dim))
        for i in range(p):
            r22 = ratio(2, 2 * eye[i])
            H[i, i] = np.sum(
                x[:, i] * inv1a[i] ** 2
                * (2.0 * r1e[:, i] - 1.0 + (x[:, i] - 1.0) * r22 - x[:, i] * r1e[:, i] ** 2)
            )
            for j in range(i):
                rij = ratio(2, eye[i] + eye[j])
                H[i, j] = H[j, i] = np.sum(
                    x[:, i] * x[:, j] * inv1a[i] * inv1a[j] * (rij - r1e[:, i] * r1e[:, j])
                )
        ms = slice(p, p + d)
        ks = slice(p + d, self.dim)
        H[:p, ms] = h_amu.T @ dmu
        H[:p, ks] = h_amu.T @ self.W
        mm = dmu.T @ (h_mumu[:, None] * dmu)
        if self.X is not None:
            mm += self.X.T @ ((g_mu * lam)[:, None] * self.X)
        H[ms, ms] = mm
        H[ms, ks] = dmu.T @ (h_mumu[:, None] * self.W)
        H[ks, ks] = self.W.T @ (h_mumu[:, None] * self.W)
        iu = np.tril_indices(self.dim, -1)
        H[iu] = H.T[iu]
        cross = np.concatenate([h_amu, h_mumu[:, None] * dmu], axis=1)
        return Evaluation(ll, grad, H, g_mu=g_mu, h_mumu=h_mumu, cross=cross)


def _as_vector(theta) -> np.ndarray:
    return theta.vector if isinstance(theta, Theta) else np.asarray(theta, dtype=float)


def _likelihood_for(theta, series, interventions, covariates):
    profiles = [tuple(iv)[:2] if not hasattr(iv, "profile") else iv.profile for iv in interventions]
    p = theta.p if isinstance(theta, Theta) else None
    if p is None:
        raise TypeError("theta must be a Theta instance")
    if theta.loglinear and covariates is None:
        raise ConfigurationError("log-linear parameters need covariates")
    lik = Likelihood(series, p, profiles, covariates if theta.loglinear else None)
    if theta.kappas.size != lik.J:
        raise ConfigurationError(f"theta has {theta.kappas.size} kappas for {lik.J} interventions")
    return lik


def conditional_loglik(theta: Theta, series, interventions=(), covariates=None) -> float:
    lik = _likelihood_for(theta, series, interventions, covariates)
    return lik.evaluate(theta.vector, order=0).loglik


def score_vector(theta: Theta, series, interventions=(), covariates=None) -> np.ndarray:
    lik = _likelihood_for(theta, series, interventions, covariates)
    return lik.evaluate(theta.vector, order=1).grad


def hessian_matrix(theta: Theta, series, interventions=(), covariates=None) -> np.ndarray:
    lik = _likelihood_for(theta, series, interventions, covariates)
    return lik.evaluate(theta.vector, order=2).hess


# --------------------------------------------------------------------------
# expected information (p = 1, constant mean, kappa = 0)
# --------------------------------------------------------------------------


def truncation_point(mean: float, tol: float = 1e-15) -> int:
    """Smallest m with P(Pois(mean) > m) <= tol, by direct upper-tail summation."""
    top = int(mean + 40.0 * math.sqrt(mean) + 60)
    k = np.arange(top + 1)
    pmf = np.exp(_log_pois(k, np.full(k.shape, float(mean))))
    tail = np.cumsum(pmf[::-1])[::-1]  # tail[j] = P(X >= j)
    above = np.append(tail[1:], 0.0)  # P(X > j)
    return int(np.flatnonzero(above <= tol)[0])


@lru_cache(maxsize=256)
def stationary_moments(alpha: float, lam: float, m: int) -> tuple[float, float, float]:
    """E[h_aa], E[h_amu], E[h_mumu] for one stationary INAR(1) transition, truncated at m."""
    # full log transition matrix on 0..m; shifted entries are sub-blocks of it
    xs, ys = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
    L = log_transition(ys.ravel(), xs.ravel()[:, None], np.array([alpha]), np.full(xs.size, lam))
    L = L.reshape(m + 1, m + 1)
    pad = np.full((m + 3, m + 3), -np.inf)
    pad[2:, 2:] = L

    def ratio(sy, sx):
        return np.exp(pad[2 - sx:m + 3 - sx, 2 - sy:m + 3 - sy] - L)

    r10, r11, r20, r21, r22 = ratio(1, 0), ratio(1, 1), ratio(2, 0), ratio(2, 1), ratio(2, 2)
    lpi = _log_pois(np.arange(m + 1), np.full(m + 1, lam / (1.0 - alpha)))
    w = np.exp(lpi[:, None] + L)
    xf = np.arange(m + 1, dtype=float)[:, None]
    inv = 1.0 / (1.0 - alpha)
    h_aa = xf * inv ** 2 * (2.0 * r11 - 1.0 + (xf - 1.0) * r22 - xf * r11 ** 2)
    h_amu = xf * inv * (r21 - r11 * r10)
    h_mumu = r20 - r10 ** 2
    return float(np.sum(w * h_aa)), float(np.sum(w * h_amu)), float(np.sum(w * h_mumu))


def conditional_moments(alpha: float, lags, mu, truncation_tol: float = 1e-15):
    """Per-row E[h_aa], E[h_amu], E[h_mumu] of INAR(1) transitions given the lag.

    The expectation runs over ``y_t`` given ``y_{t-1}``, so a row's weight does not
    depend on its own observation.
    """
    x = np.asarray(lags, dtype=np.int64)
    mu = np.asarray(mu, dtype=float)
    top = int(x.max(initial=0)) + truncation_point(float(mu.max()), truncation_tol)
    ys = np.arange(top + 1)
    Y = np.broadcast_to(ys[None, :], (x.size, ys.size)).ravel()
    X = np.repeat(x, ys.size)
    M = np.repeat(mu, ys.size)
    l0, r = _p1_ratios(Y, X, alpha, M)
    shape = (x.size, ys.size)
    w = np.exp(l0).reshape(shape)
    r10, r11, r20, r21, r22 = (np.nan_to_num(r[k].reshape(shape)) for k in ((1, 0), (1, 1), (2, 0), (2, 1), (2, 2)))
    xf = x[:, None].astype(float)
    inv = 1.0 / (1.0 - alpha)
    h_aa = xf * inv ** 2 * (2.0 * r11 - 1.0 + (xf - 1.0) * r22 - xf * r11 ** 2)
    h_amu = xf * inv * (r21 - r11 * r10)
    h_mumu = r20 - r10 ** 2
    return np.sum(w * h_aa, 1), np.sum(w * h_amu, 1), np.sum(w * h_mumu, 1)


def _null_moments(theta: Theta, truncation_tol: float, m: int | None):
    if theta.p != 1:
        raise UnsupportedError("expected information is implemented for INAR(1) only")
    if theta.loglinear:
        raise UnsupportedError("expected information needs a constant innovation mean")
    if np.any(theta.kappas != 0):
        raise ConfigurationError("expected information is evaluated under the null (kappa = 0)")
    alpha, lam = float(theta.alphas[0]), theta.lam
    if not (0 <= alpha < 1 and lam > 0):
        raise DomainError("need 0 <= alpha < 1 and lambda > 0")
    if m is None:
        m = truncation_point(lam / (1.0 - alpha), truncation_tol)
    return stationary_moments(alpha, lam, int(m))


def scaled_condition(M: np.ndarray) -> np.ndarray:
    """Condition number of the correlation-scaled matrix (batched); ``inf`` if not PD."""
    d = np.sqrt(np.abs(np.diagonal(M, axis1=-2, axis2=-1)))
    d = np.where(d > 0, d, 1.0)
    C = M / (d[..., :, None] * d[..., None, :])
    ev = np.linalg.eigvalsh(C)
    lo, hi = ev[..., 0], ev[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(lo > 0, hi / lo, np.inf)


def expected_information(
    theta: Theta,
    n: int,
    interventions: Sequence[tuple[int, float]] = (),
    truncation_tol: float = 1e-15,
    m: int | None = None,
) -> np.ndarray:
    """Expected conditional information for INAR(1) at ``kappa = 0``.

    Order of parameters is ``(alpha, lambda, kappa_1..kappa_J)``.
    """
    profiles = [iv.profile if hasattr(iv, "profile") else tuple(iv)[:2] for iv in interventions]
    if theta.kappas.size == 0 and profiles:
        theta = Theta.constant(theta.alphas, theta.lam, np.zeros(len(profiles)))
    e_aa, e_amu, e_mm = _null_moments(theta, truncation_tol, m)
    rows = n - 1
    J = len(profiles)
    W = np.stack([decay_profile(n, t, d)[1:] for t, d in profiles], axis=1) if J else np.zeros((rows, 0))
    I = np.empty((2 + J, 2 + J))
    I[0, 0] = -rows * e_aa
    I[0, 1] = I[1, 0] = -rows * e_amu
    I[1, 1] = -rows * e_mm
    s1 = W.sum(0)
    I[0, 2:] = I[2:, 0] = -e_amu * s1
    I[1, 2:] = I[2:, 1] = -e_mm * s1
    I[2:, 2:] = -e_mm * (W.T @ W)
    if scaled_condition(I) > COND_LIMIT:
        raise SingularityError("expected information is nearly singular")
    return I


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------


@dataclass
class CmlFit:
    theta: Theta
    loglik: float
    std_errors: np.ndarray | None
    converged: bool
    iterations: int
    profiles: tuple = ()
    information: str = "observed"
    grad_norm: float = float("nan")
    loglik_path: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        d = self.theta.to_dict()
        d.update(
            loglik=self.loglik,
            std_errors=None if self.std_errors is None else self.std_errors.tolist(),
            converged=self.converged,
            iterations=self.iterations,
            information=self.information,
        )
        return d


def _to_alpha(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map unconstrained z onto {alpha_i > 0, sum alpha < 1 - eps}; returns alpha and d alpha / d z."""
    zmax = max(0.0, float(z.max()))
    e = np.exp(z - zmax)
    s = e / (math.exp(-zmax) + e.sum())
    scale = 1.0 - ALPHA_EPS
    jac = scale * (np.diag(s) - np.outer(s, s))
    return scale * s, jac


def _from_alpha(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float) / (1.0 - ALPHA_EPS)
    rest = 1.0 - a.sum()
    return np.log(a) - math.log(rest)


class _Transform:
    """theta <-> z: softmax-type map for alphas, log for lambda, identity for beta and kappa."""

    def __init__(self, lik: Likelihood):
        self.lik = lik
        self.p = lik.p

    def theta(self, z):
        z = np.asarray(z, dtype=float)
        p = self.p
        a, ja = _to_alpha(z[:p])
        v = z.copy()
        v[:p] = a
        J = np.eye(z.size)
        J[:p, :p] = ja
        if not self.lik.loglinear:
            v[p] = math.exp(z[p]) if z[p] < 700 else math.inf
            J[p, p] = v[p]
        return v, J

    def z(self, v):
        v = np.asarray(v, dtype=float)
        p = self.p
        z = v.copy()
        z[:p] = _from_alpha(v[:p])
        if not self.lik.loglinear:
            z[p] = math.log(v[p])
        return z


def _start_point(lik: Likelihood, series) -> np.ndarray:
    import warnings

    p = lik.p
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            cls = fit_cls(series, p, lik.profiles)
            a0, lam0, k0 = cls.alphas.copy(), cls.lam, cls.kappas.copy()
        except Exception:
            cls = fit_cls(series, p)
            a0, lam0, k0 = cls.alphas.copy(), cls.lam, np.zeros(lik.J)
    for i in range(p):
        others = a0.sum() - a0[i]
        a0[i] = min(max(a0[i], 1e-4), 0.99 * max(1.0 - others, 1e-3))
    if a0.sum() >= 1 - ALPHA_EPS:
        a0 *= 0.9 / a0.sum()
    if lik.loglinear:
        y = lik.y.astype(float)
        target = np.log(np.maximum(y - lik.lags @ a0, 0.5))
        mean = np.linalg.lstsq(lik.X, target, rcond=None)[0]
    else:
        mean = np.array([max(lam0, 1e-4)])
    v = np.concatenate([a0, mean, k0])
    if not lik.feasible(v):
        v[p + lik.d_mean:] = 0.0
    return v


def fit_cml(
    series,
    p: int = 1,
    covariates=None,
    interventions: Sequence[tuple[int, float]] = (),
    start=None,
    max_iter: int = MAX_ITER,
    tol: float = GRAD_TOL,
) -> CmlFit:
    """Conditional maximum likelihood by damped Newton steps in transformed coordinates.

    ``covariates`` switches the innovation mean to ``exp(x_t' beta)``. The returned
    fit is flagged ``converged=False`` (not raised) when the gradient criterion is
    not met within ``max_iter`` iterations.
    """
    profiles = [iv.profile if hasattr(iv, "profile") else (int(iv[0]), float(iv[1])) for iv in interventions]
    y = as_counts(series)
    if covariates is None and not np.any(y[p:]):
        raise ConfigurationError("cannot fit lambda to an all-zero series")
    lik = Likelihood(y, p, profiles, covariates)
    tr = _Transform(lik)
    v = np.asarray(start, dtype=float) if start is not None else _start_point(lik, y)
    z = tr.z(v)
    v, Jz = tr.theta(z)
    ev = lik.evaluate(v)
    path = [ev.loglik]
    converged = False
    it = 0
    gz = Jz.T @ ev.grad
    message = ""
    while it < max_iter:
        gnorm = float(np.max(np.abs(gz)))
        if gnorm < tol:
            converged = True
            break
        it += 1
        M = Jz.T @ (-ev.hess) @ Jz
        step = _newton_direction(M, gz)
        t = 1.0
        accepted = False
        for _ in range(60):
            zn = z + t * step
            vn, Jn = tr.theta(zn)
            if lik.feasible(vn):
                evn = lik.evaluate(vn)
                if evn.loglik >= ev.loglik - 1e-12 * abs(ev.loglik) and np.isfinite(evn.loglik):
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            # no ascent possible along the Newton or gradient direction
            step = gz / max(np.max(np.abs(gz)), 1.0)
            t = 1.0
            for _ in range(60):
                zn = z + t * step
                vn, Jn = tr.theta(zn)
                if lik.feasible(vn):
                    evn = lik.evaluate(vn)
                    if evn.loglik > ev.loglik:
                        accepted = True
                        break
                t *= 0.5
        if not accepted:
            message = "line search failed"
            break
        if evn.loglik < ev.loglik:
            # tolerate round-off sized decreases without recording them
            evn.loglik = ev.loglik
        z, v, Jz, ev = zn, vn, Jn, evn
        gz = Jz.T @ ev.grad
        path.append(ev.loglik)
    if not converged and not message:
        message = "iteration limit reached"
    gnorm = float(np.max(np.abs(gz)))
    converged = converged or gnorm < tol
    theta = lik.theta(v)
    se, info_kind = _standard_errors(lik, theta, ev)
    return CmlFit(
        theta=theta,
        loglik=float(lik.evaluate(v, order=0).loglik),
        std_errors=se,
        converged=converged,
        iterations=it,
        profiles=tuple(profiles),
        information=info_kind,
        grad_norm=gnorm,
        loglik_path=path,
        message=message,
    )


def _newton_direction(M: np.ndarray, g: np.ndarray) -> np.ndarray:
    M = 0.5 * (M + M.T)
    diag = np.abs(np.diag(M))
    ridge = 0.0
    base = max(float(diag.max(initial=0.0)), 1e-8)
    for _ in range(30):
        try:
            L = np.linalg.cholesky(M + ridge * np.eye(M.shape[0]))
            return np.linalg.solve(L.T, np.linalg.solve(L, g))
        except np.linalg.LinAlgError:
            ridge = base * 1e-8 if ridge == 0.0 else ridge * 10.0
    return g / base


def _standard_errors(lik: Likelihood, theta: Theta, ev: Evaluation):
    try:
        if lik.p == 1 and not lik.loglinear and lik.J == 0:
            info = expected_information(theta, lik.n)
            kind = "expected"
        else:
            info = -ev.hess
            kind = "observed"
            if scaled_condition(info) > COND_LIMIT:
                return None, kind
        cov = np.linalg.inv(info)
        d = np.diag(cov)
        if np.any(d <= 0):
            return None, kind
        return np.sqrt(d), kind
    except (np.linalg.LinAlgError, UnsupportedError, DomainError):
        return None, "unavailable"


# --------------------------------------------------------------------------
# score statistic
# --------------------------------------------------------------------------


@dataclass
class ScoreContext:
    """Null-fit quantities from which score statistics for any (tau, delta) follow."""

    n: int
    p: int
    grad_null: np.ndarray  # score of the null parameters at the null fit
    info_null: np.ndarray  # information block for the null parameters
    g_mu: np.ndarray  # per-row d l_t / d mu_t
    cross: np.ndarray  # per-row information cross terms (rows, d_null)
    h_kk: np.ndarray  # per-row information weight for kappa-kappa
    information: str
    fit: CmlFit | None = None

    def scan(self, delta: float, taus) -> np.ndarray:
        """Score statistics for all ``taus``; NaN where the information is (nearly) singular."""
        from .cls import decay_matrix

        taus = np.asarray(taus, dtype=int)
        W = decay_matrix(self.n, taus, delta)[:, self.p:]
        vk = W @ self.g_mu
        ik_null = W @ self.cross
        ikk = (W ** 2) @ self.h_kk
        # block inverse: S = g'A^-1 g + (v_k - c'A^-1 g)^2 / s with s the Schur complement
        A = self.info_null
        Ainv_g = np.linalg.solve(A, self.grad_null)
        Ainv_c = np.linalg.solve(A, ik_null.T).T
        schur = ikk - np.einsum("ij,ij->i", ik_null, Ainv_c)
        out = np.full(taus.size, np.nan)
        ok = (ikk > 0) & (schur > 1e-6 * np.maximum(ikk, 0.0))
        edge = (ikk > 0) & ~ok & (schur > 0)
        if np.any(edge):
            # borderline cells: apply the full scaled-condition test
            d = A.shape[0]
            I = np.empty((int(edge.sum()), d + 1, d + 1))
            I[:, :d, :d] = A
            I[:, :d, d] = ik_null[edge]
            I[:, d, :d] = ik_null[edge]
            I[:, d, d] = ikk[edge]
            ok[np.flatnonzero(edge)[scaled_condition(I) <= COND_LIMIT]] = True
        if scaled_condition(A) > COND_LIMIT:
            ok[:] = False
        base = float(self.grad_null @ Ainv_g)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = base + (vk - ik_null @ Ainv_g) ** 2 / schur
        out[ok] = np.maximum(s[ok], 0.0)
        return out


def score_context(series, p: int = 1, covariates=None, fit: CmlFit | None = None) -> ScoreContext:
    """Fit the clean model (unless given) and collect what the score scan needs."""
    if p != 1:
        raise UnsupportedError("score statistics are available for INAR(1) only")
    y = as_counts(series)
    if fit is None:
        fit = fit_cml(y, 1, covariates)
    if not fit.converged:
        raise DomainError(f"null CML fit did not converge ({fit.message})")
    lik = Likelihood(y, 1, (), covariates)
    v = fit.theta.vector
    ev = lik.evaluate(v)
    rows = lik.y.size
    if lik.loglinear:
        # conditional information: the outlier's own count does not enter its weight
        lam, mu = lik.arrival_mean(v)
        e_aa, e_amu, e_mm = conditional_moments(float(v[0]), lik.lags[:, 0], mu)
        dmu = lam[:, None] * lik.X
        cross = -np.concatenate([e_amu[:, None], e_mm[:, None] * dmu], axis=1)
        info_null = np.empty((dmu.shape[1] + 1,) * 2)
        info_null[0, 0] = -e_aa.sum()
        info_null[0, 1:] = info_null[1:, 0] = -(e_amu @ dmu)
        info_null[1:, 1:] = -(dmu.T @ (e_mm[:, None] * dmu))
        h_kk = -e_mm
        kind = "conditional"
    else:
        e_aa, e_amu, e_mm = _null_moments(fit.theta, 1e-15, None)
        info_null = -rows * np.array([[e_aa, e_amu], [e_amu, e_mm]])
        cross = -np.tile([e_amu, e_mm], (rows, 1))
        h_kk = np.full(rows, -e_mm)
        kind = "expected"
    return ScoreContext(y.size, 1, ev.grad, info_null, ev.g_mu, cross, h_kk, kind, fit)


def score_statistic(series, p: int, tau: int, delta: float, covariates=None, context: ScoreContext | None = None) -> float:
    """Score statistic for one intervention of type ``delta`` at ``tau`` against the clean INAR(1)."""
    y = as_counts(series)
    if not (p + 1 <= tau <= y.size):
        raise ConfigurationError(f"tau must lie in [{p + 1}, {y.size}], got {tau}")
    ctx = context or score_context(y, p, covariates)
    s = ctx.scan(delta, [tau])[0]
    if np.isnan(s):
        raise SingularityError(f"information singular at tau={tau}, delta={delta}")
    return float(s)
