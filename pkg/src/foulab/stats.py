"""Shared statistical estimators: KS tests, log-log slope fits, ensemble moments.

All estimators are deterministic functions of their input vectors and
permutation-invariant, so ensemble reductions can be parallelised freely.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

REPORT_SCHEMA = "report_v1"


@dataclass
class ExperimentReport:
    """Aggregated result of one verification experiment.

    ``points`` holds one entry per abscissa (usually one per epsilon):
    ``{"x": ..., "stat": ..., "ci": ...}`` where ``ci`` is one Monte Carlo
    standard error (multiply as needed).  ``rule`` states the pass criterion
    in words so the record is self-describing.
    """

    test_name: str
    params: dict = field(default_factory=dict)
    points: list = field(default_factory=list)
    fitted: dict | None = None
    passed: bool = False
    rule: str = ""
    runtime_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def add_point(self, x, stat, ci=0.0):
        self.points.append({"x": float(x), "stat": float(stat), "ci": float(ci)})

    def to_report_v1(self):
        rep = {
            "schema": REPORT_SCHEMA,
            "test": self.test_name,
            "params": _jsonable(self.params),
            "eps_grid": [p["x"] for p in self.points],
            "statistics": [p["stat"] for p in self.points],
            "ci": [p["ci"] for p in self.points],
            "pass": bool(self.passed),
            "rule": self.rule,
            "runtime_s": self.runtime_s,
        }
        if self.fitted is not None:
            rep["fitted"] = _jsonable(self.fitted)
        if self.extra:
            rep["extra"] = _jsonable(self.extra)
        return rep

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_report_v1(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def summary_line(self):
        return "%-34s %s" % (self.test_name, "PASS" if self.passed else "FAIL")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


class stopwatch:
    """Context manager feeding ``runtime_s`` of a report."""

    def __init__(self, report):
        self.report = report

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.report.runtime_s = time.perf_counter() - self._t0
        return False


def _check_samples(x, n_min):
    x = np.asarray(x, dtype=float).ravel()
    if x.size < n_min:
        raise DataError(f"need at least {n_min} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DataError("samples contain non-finite values")
    return x


def ks_one_sample(samples, cdf):
    """Kolmogorov-Smirnov sup-distance of the empirical CDF against ``cdf``.

    Returns the statistic together with the asymptotic 1% and 5% critical
    values 1.63/sqrt(n) and 1.36/sqrt(n).
    """
    x = np.sort(_check_samples(samples, 50))
    n = x.size
    f = np.asarray(cdf(x), dtype=float)
    if not np.all(np.isfinite(f)):
        raise DataError("cdf returned non-finite values")
    up = np.arange(1, n + 1) / n - f
    lo = f - np.arange(0, n) / n
    stat = max(up.max(), lo.max())
    return {
        "stat": float(stat),
        "critical_1pct": 1.63 / np.sqrt(n),
        "critical_5pct": 1.36 / np.sqrt(n),
        "n": n,
    }


def ks_two_sample(a, b):
    """Two-sample KS statistic with the asymptotic 5% critical value."""
    a = np.sort(_check_samples(a, 50))
    b = np.sort(_check_samples(b, 50))
    n, m = a.size, b.size
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / n
    fb = np.searchsorted(b, grid, side="right") / m
    stat = np.abs(fa - fb).max()
    return {
        "stat": float(stat),
        "critical_5pct": 1.36 * np.sqrt((n + m) / (n * m)),
        "critical_1pct": 1.63 * np.sqrt((n + m) / (n * m)),
        "n": n,
        "m": m,
    }


def loglog_slope(xs, ys):
    """Least-squares slope of log(y) against log(x).

    Used by every rate-law acceptance fit; requires at least 3 strictly
    positive points.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 3 or ys.size != xs.size:
        raise DataError("need at least 3 matched points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise DataError("log-log fit needs strictly positive data")
    lx, ly = np.log(xs), np.log(ys)
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    if ss_tot == 0.0:
        r2 = 1.0
    else:
        ss_res = float(res[0]) if res.size else float(np.sum((ly - A @ [slope, intercept]) ** 2))
        r2 = max(0.0, 1.0 - ss_res / ss_tot)
    return {"slope": float(slope), "intercept": float(intercept), "r2": float(r2)}


def ensemble_moments(samples, k_max=4):
    """Mean and central moments 2..k_max with jackknife standard errors.

    Returns a dict with ``mean``, ``m2``..``m4``, derived ``skewness`` and
    ``kurtosis`` (m4/m2^2), each as ``(value, se)``.  The leave-one-out
    values are computed from power sums, so the whole thing is O(n).
    """
    x = _check_samples(samples, 100)
    n = x.size
    if not 2 <= k_max <= 4:
        raise DataError("k_max must be in 2..4")
    S = [np.sum(x ** r) for r in range(0, 5)]

    def central_from_sums(s1, s2, s3, s4, cnt):
        mu = s1 / cnt
        m2 = s2 / cnt - mu ** 2
        m3 = s3 / cnt - 3 * mu * s2 / cnt + 2 * mu ** 3
        m4 = s4 / cnt - 4 * mu * s3 / cnt + 6 * mu ** 2 * s2 / cnt - 3 * mu ** 4
        return mu, m2, m3, m4

    full = central_from_sums(S[1], S[2], S[3], S[4], n)
    # leave-one-out, vectorised over the left-out sample
    loo = central_from_sums(S[1] - x, S[2] - x ** 2, S[3] - x ** 3, S[4] - x ** 4, n - 1)

    def jack_se(theta_loo):
        tbar = theta_loo.mean()
        return np.sqrt((n - 1) / n * np.sum((theta_loo - tbar) ** 2))

    out = {}
    names = ["mean", "m2", "m3", "m4"]
    for i, name in enumerate(names[: k_max if k_max < 4 else 4]):
        out[name] = (float(full[i]), float(jack_se(loo[i])))
    mu, m2, m3, m4 = full
    if m2 > 0:
        skew_loo = loo[2] / loo[1] ** 1.5
        kurt_loo = loo[3] / loo[1] ** 2
        out["skewness"] = (float(m3 / m2 ** 1.5), float(jack_se(skew_loo)))
        out["kurtosis"] = (float(m4 / m2 ** 2), float(jack_se(kurt_loo)))
    out["n"] = n
    return out
