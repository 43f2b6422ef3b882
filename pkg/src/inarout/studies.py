"""Seeded Monte Carlo studies: empirical size, power, classification rates and
quantiles of the maximum statistic.

Replicate ``r`` of cell ``c`` always draws from substream ``(seed, c..., r)``, so
tables do not depend on how replicates are spread over workers.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from .detection import best_delta, chi2_quantile, make_scanner, normalize_method
from .process import (
    ConfigurationError,
    InarModel,
    Intervention,
    simulate_contaminated,
    substream,
)

KINDS = ("size", "power", "classification", "critical-values")
LEVELS = (0.01, 0.05, 0.10)
# kappa / sqrt(lambda) for each true delta
KAPPA_RULE = {0.0: 3.0, 0.6: 2.5, 0.8: 2.0, 0.9: 1.5, 1.0: 1.0}
QUANTILES = (0.90, 0.95, 0.99)

COLUMNS = (
    "kind", "method", "alpha1", "alpha2", "lambda", "n", "delta_true", "delta_tested",
    "tau", "level", "rate_pct", "mc_se_pct", "value", "replicates",
)


@dataclass
class StudySpec:
    kind: str
    models: Sequence = ((0.3, 2.0),)  # entries (alpha, lambda) or ((alpha1, alpha2), lambda)
    n: int = 200
    tau_fracs: Sequence[float] = (0.25, 0.5, 0.75)
    deltas: Sequence[float] = (0.0, 0.8, 1.0)  # tested (or maximized over) types
    true_deltas: Sequence = (0.0, 0.8, 1.0)  # power and classification; None means clean
    kappa_rule: dict = field(default_factory=lambda: dict(KAPPA_RULE))
    replicates: int = 2000
    seed: int = 0
    methods: Sequence[str] = ("F",)
    levels: Sequence[float] = LEVELS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown study kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if int(self.replicates) < 1:
            raise ConfigurationError("replicates must be at least 1")
        self.methods = tuple(normalize_method(m) for m in self.methods)
        self.models = tuple(_model_key(m) for m in self.models)
        self.deltas = tuple(float(d) for d in self.deltas)
        self.true_deltas = tuple(None if d is None else float(d) for d in self.true_deltas)
        self.kappa_rule = {float(k): float(v) for k, v in self.kappa_rule.items()}
        if any(v < 0 for v in self.kappa_rule.values()):
            raise ConfigurationError("kappa multipliers must be nonnegative")
        if not self.deltas:
            raise ConfigurationError("empty delta grid")
        for f in self.tau_fracs:
            if not (0.0 < f <= 1.0):
                raise ConfigurationError(f"tau fractions must lie in (0, 1], got {f}")
        for alphas, _ in self.models:
            p = len(alphas)
            for t in self.taus:
                if t <= p:
                    raise ConfigurationError(f"tau={t} leaves no lags for p={p}")
            if "score" in self.methods and p != 1:
                raise ConfigurationError("score studies need INAR(1) models")
        if self.kind in ("power", "classification"):
            for d in self.true_deltas:
                if d is not None and d not in self.kappa_rule:
                    raise ConfigurationError(f"no kappa multiplier for delta={d}")

    @property
    def taus(self) -> list[int]:
        return [int(round(f * self.n)) for f in self.tau_fracs]


def _model_key(m):
    a, lam = m
    alphas = tuple(float(x) for x in np.atleast_1d(a))
    InarModel(alphas, float(lam))  # validates
    return alphas, float(lam)


PRESETS = {
    "paper-sm2": dict(
        models=[(a, lam) for a in (0.3, 0.6, 0.9) for lam in (2.0, 5.0)],
        n=200,
        methods=("F", "score"),
    ),
    "paper-sm3": dict(
        models=[(a, lam) for a in ((0.5, 0.3), (0.3, 0.4), (0.1, 0.1)) for lam in (2.0, 5.0)],
        n=200,
        methods=("F",),
    ),
}


def preset(name: str, kind: str, **overrides) -> StudySpec:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    kw = dict(PRESETS[name])
    if kind == "classification":
        kw["deltas"] = (0.0, 0.6, 0.8, 0.9, 1.0)
        kw["true_deltas"] = (None, 0.0, 0.6, 0.8, 0.9, 1.0)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return StudySpec(kind=kind, **kw)


@dataclass
class StudyTable:
    rows: list

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r.get(c)) for c in COLUMNS])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text

    def select(self, **keys) -> list:
        out = []
        for r in self.rows:
            if all(_same(r.get(k), v) for k, v in keys.items()):
                out.append(r)
        return out

    def rate(self, **keys) -> float:
        rows = self.select(**keys)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {keys}")
        return rows[0]["rate_pct"]


def _same(a, b):
    if isinstance(a, float) and isinstance(b, (int, float)) and not isinstance(b, bool):
        return math.isclose(a, float(b), abs_tol=1e-12)
    return a == b


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return f"{v:.4f}"
    return str(v)


# --------------------------------------------------------------------------
# replicate kernels
# --------------------------------------------------------------------------


def _statistics(y, p, method, deltas, taus):
    """Statistics at the known times: array (len(deltas), len(taus)); NaN if unavailable."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            sc = make_scanner(y, p, method)
        except (ValueError, np.linalg.LinAlgError):
            return np.full((len(deltas), len(taus)), np.nan)
        return np.array([sc.scan(d, taus) for d in deltas])


def _overall_max(y, p, method, deltas, taus):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            sc = make_scanner(y, p, method)
        except (ValueError, np.linalg.LinAlgError):
            return math.nan
        vals = [np.nanmax(s) if np.any(~np.isnan(s)) else -np.inf for s in (sc.scan(d, taus) for d in deltas)]
    m = max(vals)
    return m if np.isfinite(m) else math.nan


def _chunk(kernel, args, indices):
    return [kernel(*args, r) for r in indices]


def _size_kernel(model, n, p, methods, deltas, taus, key, r):
    y = simulate_contaminated(model, (), n, rng=substream(*key, r))
    return np.array([_statistics(y, p, m, deltas, taus) for m in methods])


def _contaminated_kernel(model, n, p, methods, deltas, tau, iv, key, r):
    ivs = () if iv is None else (iv,)
    y = simulate_contaminated(model, ivs, n, rng=substream(*key, r))
    return np.array([_statistics(y, p, m, deltas, [tau]) for m in methods])


def _max_kernel(model, n, p, methods, deltas, taus, key, r):
    y = simulate_contaminated(model, (), n, rng=substream(*key, r))
    return np.array([_overall_max(y, p, m, deltas, taus) for m in methods])


def _replicate(kernel, args, R, threads):
    chunks = np.array_split(np.arange(R), max(1, min(int(threads), R)))
    if threads > 1:
        parts = Parallel(n_jobs=int(threads))(delayed(_chunk)(kernel, args, c) for c in chunks)
    else:
        parts = [_chunk(kernel, args, c) for c in chunks]
    return np.array([x for part in parts for x in part])


def _rate_row(base, hits, valid):
    R = int(valid)
    r = hits / R if R else math.nan
    row = dict(base)
    row["rate_pct"] = 100.0 * r
    row["mc_se_pct"] = 100.0 * math.sqrt(r * (1 - r) / R) if R else math.nan
    row["replicates"] = R
    return row


# --------------------------------------------------------------------------
# runner
# --------------------------------------------------------------------------


def run_study(spec: StudySpec, threads: int = 1) -> StudyTable:
    """Run every cell of ``spec``; output is identical for any ``threads``."""
    rows = []
    for mi, (alphas, lam) in enumerate(spec.models):
        model = InarModel(alphas, lam)
        p = len(alphas)
        mbase = {
            "kind": spec.kind,
            "alpha1": alphas[0],
            "alpha2": alphas[1] if p > 1 else None,
            "lambda": lam,
            "n": spec.n,
        }
        if spec.kind == "size":
            rows += _size_rows(spec, model, p, mi, mbase, threads)
        elif spec.kind == "critical-values":
            rows += _quantile_rows(spec, model, p, mi, mbase, threads)
        else:
            rows += _contaminated_rows(spec, model, p, mi, lam, mbase, threads)
    return StudyTable(rows)


def _size_rows(spec, model, p, mi, mbase, threads):
    taus = spec.taus
    key = (spec.seed, 0, mi)
    stats = _replicate(_size_kernel, (model, spec.n, p, spec.methods, spec.deltas, taus, key), spec.replicates, threads)
    rows = []
    for k, m in enumerate(spec.methods):
        for di, d in enumerate(spec.deltas):
            for ti, frac in enumerate(spec.tau_fracs):
                s = stats[:, k, di, ti]
                ok = ~np.isnan(s)
                for lv in spec.levels:
                    q = chi2_quantile(1 - lv)
                    base = dict(mbase, method=m, delta_true="none", delta_tested=d, tau=frac, level=lv)
                    rows.append(_rate_row(base, int(np.sum(s[ok] > q)), ok.sum()))
    return rows


def _contaminated_rows(spec, model, p, mi, lam, mbase, threads):
    rows = []
    for ti, (frac, tau) in enumerate(zip(spec.tau_fracs, spec.taus)):
        for di, dtrue in enumerate(spec.true_deltas):
            iv = None
            if dtrue is not None:
                iv = Intervention(tau, dtrue, spec.kappa_rule[dtrue] * math.sqrt(lam))
            key = (spec.seed, 1, mi, di, ti)
            stats = _replicate(
                _contaminated_kernel, (model, spec.n, p, spec.methods, spec.deltas, tau, iv, key), spec.replicates, threads
            )[:, :, :, 0]  # (R, methods, deltas)
            label = "none" if dtrue is None else dtrue
            for k, m in enumerate(spec.methods):
                S = stats[:, k, :]
                if spec.kind == "power":
                    for j, d in enumerate(spec.deltas):
                        s = S[:, j]
                        ok = ~np.isnan(s)
                        for lv in spec.levels:
                            q = chi2_quantile(1 - lv)
                            base = dict(mbase, method=m, delta_true=label, delta_tested=d, tau=frac, level=lv)
                            rows.append(_rate_row(base, int(np.sum(s[ok] > q)), ok.sum()))
                else:
                    rows += _classification_rows(S, spec, dict(mbase, method=m, delta_true=label, tau=frac))
    return rows


def _classification_rows(S, spec, base):
    rows = []
    ok = ~np.all(np.isnan(S), axis=1)
    for lv in spec.levels:
        q = chi2_quantile(1 - lv)
        counts = {d: 0 for d in spec.deltas}
        none = 0
        for s in S[ok]:
            d = best_delta(dict(zip(spec.deltas, s)))
            if d is None or not s[spec.deltas.index(d)] > q:
                none += 1
            else:
                counts[d] += 1
        for d in spec.deltas:
            rows.append(_rate_row(dict(base, delta_tested=d, level=lv), counts[d], ok.sum()))
        rows.append(_rate_row(dict(base, delta_tested="none", level=lv), none, ok.sum()))
    return rows


def _quantile_rows(spec, model, p, mi, mbase, threads):
    taus = np.arange(p + 1, spec.n + 1)
    key = (spec.seed, 2, mi)
    maxima = _replicate(_max_kernel, (model, spec.n, p, spec.methods, spec.deltas, taus, key), spec.replicates, threads)
    rows = []
    for k, m in enumerate(spec.methods):
        v = maxima[:, k]
        v = v[~np.isnan(v)]
        for qp in QUANTILES:
            row = dict(
                mbase, method=m, delta_true="none", delta_tested="max", tau="all", level=round(1 - qp, 10),
                value=float(np.quantile(v, qp)) if v.size else math.nan, replicates=int(v.size),
            )
            rows.append(row)
    return rows
