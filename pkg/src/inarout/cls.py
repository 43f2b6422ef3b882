"""Conditional least squares for the contaminated INAR(p) model and the F-type statistic.

With known ``(tau, delta)`` profiles the conditional mean is linear in
``(lambda, alpha_1..alpha_p, kappa_1..kappa_J)``, so CLS is ordinary least squares
on rows ``t = p+1..n``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg

from .process import ConfigurationError, as_counts, decay_profile

COND_LIMIT = 1e10


class RankError(ValueError):
    """Design matrix is (numerically) rank deficient."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


@dataclass(frozen=True)
class ClsFit:
    alphas: np.ndarray
    lam: float
    kappas: np.ndarray
    rss: float
    n_effective: int
    profiles: tuple = ()
    out_of_region: bool = False

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([[self.lam], self.alphas, self.kappas])


def _column_names(p, profiles):
    names = ["intercept"] + [f"lag{i}" for i in range(1, p + 1)]
    names += [f"iv(tau={tau},delta={delta:g})" for tau, delta in profiles]
    return names


def build_cls_design(series, p: int, profiles: Sequence[tuple[int, float]] = ()):
    """Response ``y_{p+1..n}`` and design ``[1, y_{t-1}..y_{t-p}, profile columns]``."""
    y = as_counts(series).astype(float)
    n = y.size
    p = int(p)
    profiles = [(int(tau), float(delta)) for tau, delta in profiles]
    ncol = 1 + p + len(profiles)
    if p < 1:
        raise ConfigurationError("order p must be at least 1")
    if n - p < ncol:
        raise ConfigurationError(
            f"series of length {n} too short for {ncol} coefficients with p={p}"
        )
    X = np.empty((n - p, ncol))
    X[:, 0] = 1.0
    for i in range(1, p + 1):
        X[:, i] = y[p - i:n - i]
    for j, (tau, delta) in enumerate(profiles):
        X[:, 1 + p + j] = decay_profile(n, tau, delta)[p:]
    _check_rank(X, _column_names(p, profiles))
    return y[p:], X


def _check_rank(X, names):
    # pivoted QR exposes which columns are dependent
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    tol = max(X.shape) * np.finfo(float).eps * (d[0] if d.size else 0.0) * 1e3
    rank = int(np.sum(d > tol))
    if rank < X.shape[1]:
        bad = [names[k] for k in piv[rank:]]
        raise RankError(f"rank-deficient CLS design; dependent columns: {', '.join(bad)}", bad)


def _lstsq(X, z):
    # normal equations via Cholesky; QR when poorly conditioned
    G = X.T @ X
    try:
        if np.linalg.cond(G) > COND_LIMIT:
            raise np.linalg.LinAlgError
        c = scipy.linalg.cho_factor(G)
        return scipy.linalg.cho_solve(c, X.T @ z)
    except np.linalg.LinAlgError:
        Q, R = np.linalg.qr(X)
        return scipy.linalg.solve_triangular(R, Q.T @ z)


def fit_cls(series, p: int, profiles: Sequence[tuple[int, float]] = ()) -> ClsFit:
    """Unconstrained CLS estimates; ``out_of_region`` flags alphas outside the stationary region."""
    z, X = build_cls_design(series, p, profiles)
    coef = _lstsq(X, z)
    resid = z - X @ coef
    alphas = coef[1:1 + p]
    oor = bool(np.any(alphas < 0) or np.any(alphas >= 1) or alphas.sum() >= 1 or coef[0] <= 0)
    if oor:
        warnings.warn("CLS estimates fall outside the stationary parameter region", stacklevel=2)
    return ClsFit(
        alphas=alphas.copy(),
        lam=float(coef[0]),
        kappas=coef[1 + p:].copy(),
        rss=float(resid @ resid),
        n_effective=int(z.size),
        profiles=tuple((int(t), float(d)) for t, d in profiles),
        out_of_region=oor,
    )


def f_from_rss(rss0: float, rss1: float, n: int, p: int) -> float:
    dof = n - p - 2
    if dof <= 0:
        raise ConfigurationError("need n - p - 2 > 0")
    if rss1 <= 0.0:
        return math.inf
    return max(rss0 - rss1, 0.0) / (rss1 / dof)


def f_statistic(series, p: int, tau: int, delta: float) -> float:
    """F-type statistic for one intervention of type ``delta`` at ``tau``; ``inf`` if RSS(1) = 0."""
    y = as_counts(series)
    n = y.size
    if not (p + 1 <= tau <= n):
        raise ConfigurationError(f"tau must lie in [{p + 1}, {n}], got {tau}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rss0 = fit_cls(y, p).rss
        rss1 = fit_cls(y, p, [(tau, delta)]).rss
    return f_from_rss(rss0, rss1, n, p)


def decay_matrix(n: int, taus, delta: float) -> np.ndarray:
    """Rows are ``delta^(t - tau) 1(t >= tau)`` over ``t = 1..n`` for each ``tau`` (read-only)."""
    return _decay_matrix(int(n), tuple(int(t) for t in np.asarray(taus).ravel()), float(delta))


@lru_cache(maxsize=128)
def _decay_matrix(n, taus, delta):
    t = np.arange(1, n + 1)
    lag = t[None, :] - np.asarray(taus, dtype=int)[:, None]
    on = lag >= 0
    W = np.zeros(lag.shape)
    W[on] = delta ** lag[on]
    W.setflags(write=False)
    return W


def f_scan(series, p: int, delta: float, taus) -> np.ndarray:
    """F statistics for one ``delta`` at every ``tau`` in ``taus`` (NaN where the column is degenerate).

    Uses the null fit once: adding a single column ``z`` reduces the RSS by
    ``(z'r)^2 / (z'Mz)`` where ``r`` are null residuals and ``M`` the residual
    projector.
    """
    return FScanner(series, p).scan(delta, taus)


class FScanner:
    """Null CLS projection shared by F scans over several decay rates."""

    def __init__(self, series, p: int):
        y = as_counts(series)
        self.n, self.p = y.size, int(p)
        z, X = build_cls_design(y, p)
        self.Q, _ = np.linalg.qr(X)
        self.r = z - self.Q @ (self.Q.T @ z)
        self.rss0 = float(self.r @ self.r)

    def scan(self, delta: float, taus) -> np.ndarray:
        return _f_from_projection(self, delta, taus)


def _f_from_projection(sc, delta, taus):
    n, p, Q, r, rss0 = sc.n, sc.p, sc.Q, sc.r, sc.rss0
    taus = np.asarray(taus, dtype=int)
    Z = decay_matrix(n, taus, delta)[:, p:].T  # rows t = p+1..n, one column per tau
    MZ = Z - Q @ (Q.T @ Z)
    zmz = np.einsum("ij,ij->j", MZ, MZ)
    zz = np.einsum("ij,ij->j", Z, Z)
    num = (MZ.T @ r) ** 2
    out = np.full(taus.size, np.nan)
    ok = zmz > 1e-10 * np.maximum(zz, 1.0)
    rss1 = rss0 - num[ok] / zmz[ok]
    rss1 = np.maximum(rss1, 0.0)
    dof = n - p - 2
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(rss1 > 1e-12 * max(rss0, 1.0), (rss0 - rss1) / (rss1 / dof), np.inf)
    out[ok] = np.maximum(f, 0.0)
    return out
