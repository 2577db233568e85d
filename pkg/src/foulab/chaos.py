"""Hermite polynomial algebra and chaos expansions of observables.

Probabilists' normalisation throughout: H_0 = 1, H_1 = x, leading
coefficient 1, recurrence H_{k+1}(x) = x H_k(x) - k H_{k-1}(x), and
||H_m||^2 = m! against the standard Gaussian.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_hermitenorm

from .errors import AccuracyError, NotCentredError, RangeError

MAX_DIRECT_DEGREE = 60
TOL_RANK = 1e-10
SUP_BOUND_CONST = 1.0865  # sup_x |e^{-x^2/2} H_k(x)| <= 1.0865 sqrt(k!)


def hermite_eval(m, x):
    """H_m(x) by the three-term recurrence; x may be a scalar or array.

    Degrees above 60 are refused: use ``hermite_eval_weighted`` which tracks
    a Gaussian damping factor and never overflows.
    """
    if m < 0:
        raise ValueError("degree must be nonnegative")
    if m > MAX_DIRECT_DEGREE:
        raise ValueError(
            f"degree {m} > {MAX_DIRECT_DEGREE}: use hermite_eval_weighted for scaled evaluation"
        )
    x = np.asarray(x, dtype=float)
    hkm1 = np.ones_like(x)
    if m == 0:
        return hkm1 if hkm1.shape else float(hkm1)
    hk = x.copy()
    with np.errstate(over="raise"):
        try:
            for k in range(1, m):
                hkm1, hk = hk, x * hk - k * hkm1
        except FloatingPointError as exc:
            amax = float(np.max(np.abs(x)))
            raise RangeError(
                f"H_{m} overflowed at degree {k} for |x| up to {amax:g}"
            ) from exc
    return hk if hk.shape else float(hk)


def hermite_eval_weighted(m, x):
    """exp(-x^2/4) H_m(x) / sqrt(m!), stable for any degree and argument.

    Runs the orthonormal recurrence psi_{k+1} = (x psi_k - sqrt(k) psi_{k-1})
    / sqrt(k+1) with periodic rescaling, folding the rescalings into the
    final exponent.
    """
    if m < 0:
        raise ValueError("degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    pkm1 = np.ones_like(x)
    pk = x.copy()
    logscale = np.zeros_like(x)
    if m >= 1:
        for k in range(1, m):
            pkm1, pk = pk, (x * pk - np.sqrt(k) * pkm1) / np.sqrt(k + 1)
            big = np.abs(pk) > 1e100
            if big.any():
                pkm1[big] *= 1e-100
                pk[big] *= 1e-100
                logscale[big] += 100 * np.log(10.0)
    else:
        pk = pkm1
    out = pk * np.exp(logscale - x * x / 4.0)
    return float(out[0]) if scalar else out


def hermite_design_matrix(x, k_max):
    """Columns H_0(x)..H_kmax(x); single recurrence pass over the grid."""
    x = np.asarray(x, dtype=float)
    tab = np.empty((x.size, k_max + 1))
    tab[:, 0] = 1.0
    if k_max >= 1:
        tab[:, 1] = x
    for k in range(1, k_max):
        tab[:, k + 1] = x * tab[:, k] - k * tab[:, k - 1]
    return tab


@dataclass
class ChaosExpansion:
    """Truncated Hermite expansion of a centred observable G.

    ``coeffs[k]`` is c_k in G = sum c_k H_k; c_0 must vanish.  ``rank`` is
    the first k >= 1 with |c_k| above TOL_RANK relative to the L2 norm
    sqrt(sum c_k^2 k!).
    """

    coeffs: np.ndarray
    rank: int
    l2_norm: float
    source: str = ""
    k_max: int = field(init=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        self.k_max = len(self.coeffs) - 1
        if abs(self.coeffs[0]) > TOL_RANK * max(self.l2_norm, 1e-300):
            raise NotCentredError(
                f"c_0 = {self.coeffs[0]:g}: observable must be centred; recentre G first"
            )
        norm2 = float(np.sum(self.coeffs[1:] ** 2 * _factorials(self.k_max)[1:]))
        if not math.isclose(norm2, self.l2_norm ** 2, rel_tol=1e-10, abs_tol=1e-300):
            raise ValueError("l2_norm inconsistent with coefficients")

    @classmethod
    def from_coeffs(cls, coeffs, source=""):
        coeffs = np.asarray(coeffs, dtype=float)
        norm = math.sqrt(float(np.sum(coeffs[1:] ** 2 * _factorials(len(coeffs) - 1)[1:])))
        if norm == 0.0:
            raise ValueError("all coefficients vanish")
        nz = np.nonzero(np.abs(coeffs[1:]) >= TOL_RANK * norm)[0]
        if nz.size == 0:
            raise ValueError("no coefficient above the rank-detection threshold")
        return cls(coeffs=coeffs, rank=int(nz[0] + 1), l2_norm=norm, source=source)

    @classmethod
    def hermite(cls, m, coeff=1.0):
        c = np.zeros(m + 1)
        c[m] = coeff
        return cls.from_coeffs(c, source=f"{coeff:g}*H_{m}")

    def __call__(self, x):
        """Evaluate G(x) = sum_k c_k H_k(x) in one recurrence pass."""
        x = np.asarray(x, dtype=float)
        acc = np.full_like(x, self.coeffs[0])
        hkm1 = np.ones_like(x)
        if self.k_max >= 1:
            hk = x.copy()
            acc = acc + self.coeffs[1] * hk
            for k in range(1, self.k_max):
                hkm1, hk = hk, x * hk - k * hkm1
                if self.coeffs[k + 1] != 0.0:
                    acc = acc + self.coeffs[k + 1] * hk
        return acc

    def to_json(self):
        return json.dumps(
            {"coeffs": self.coeffs.tolist(), "rank": self.rank, "l2_norm": self.l2_norm},
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(coeffs=np.asarray(d["coeffs"]), rank=int(d["rank"]), l2_norm=float(d["l2_norm"]))


def _factorials(k_max):
    return np.cumprod(np.concatenate([[1.0], np.arange(1, k_max + 1, dtype=float)]))


def chaos_coefficients(G, k_max, quad_order=200):
    """Project G onto H_0..H_kmax by Gauss-Hermite quadrature against N(0,1).

    The order is doubled until every coefficient moves by less than 1e-8;
    an uncentred G (|c_0| above the rank threshold) is rejected.
    """
    if quad_order < k_max + 10:
        raise ValueError("quad_order must be at least k_max + 10")

    def project(order):
        nodes, weights = roots_hermitenorm(order)
        w = weights / math.sqrt(2 * math.pi)
        g = np.asarray(G(nodes), dtype=float)
        tab = hermite_design_matrix(nodes, k_max)
        raw = tab.T @ (w * g)
        return raw / _factorials(k_max)

    coeffs = project(quad_order)
    order = quad_order
    for _ in range(4):
        order *= 2
        nxt = project(order)
        delta = float(np.max(np.abs(nxt - coeffs)))
        coeffs = nxt
        if delta < 1e-8:
            break
    else:
        raise AccuracyError("Gauss-Hermite projection did not stabilise to 1e-8")

    fact = _factorials(k_max)
    norm = math.sqrt(float(np.sum(coeffs[1:] ** 2 * fact[1:])))
    if norm == 0.0:
        raise ValueError("G projects to zero on chaos levels 1..k_max")
    if abs(coeffs[0]) >= TOL_RANK * norm:
        raise NotCentredError(
            f"int G dmu = {coeffs[0]:g} is not zero; recentre G before expanding"
        )
    coeffs[0] = 0.0
    coeffs[1:][np.abs(coeffs[1:]) < TOL_RANK * norm] = 0.0
    exp = ChaosExpansion.from_coeffs(coeffs, source=getattr(G, "__name__", "callable"))
    return exp


def hstar(H, m):
    """The rank-to-exponent map m(H-1)+1 deciding the universality class."""
    if not 0.0 < H < 1.0:
        raise ValueError("H must lie in (0,1)")
    if m < 1:
        raise ValueError("rank must be >= 1")
    return m * (H - 1.0) + 1.0


BOUNDARY_TOL = 1e-12


def scaling_alpha(eps, H, m):
    """Scaling constant alpha(eps, H*(m)) of the path functional.

    eps^{-1/2} below the boundary, (eps |ln eps|)^{-1/2} on it (detected to
    1e-12), eps^{H*(m)-1} above it.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if eps > 0.5:
        raise ValueError("eps must lie in (0, 1/2]")
    hs = hstar(H, m)
    if abs(hs - 0.5) <= BOUNDARY_TOL:
        return 1.0 / math.sqrt(eps * abs(math.log(eps)))
    if hs < 0.5:
        return 1.0 / math.sqrt(eps)
    return eps ** (hs - 1.0)


@dataclass
class ScalingExponents:
    """Classification of one (H, rank) pair."""

    H: float
    m: int
    hstar: float
    regime: str               # wiener | boundary | hermite
    excluded_band: bool       # H*(m) in [0, 1/2]: outside the strict assumption
    strict: bool              # H*(m) < 0 or H*(m) > 1/2
    band: tuple               # raw endpoints (1/(1-H), 1/(2(1-H))) as stated, unordered


def classify_limit(H, m):
    """Regime of the scaled functional of a rank-m observable.

    H = 1/2 is the classical case: Wiener regime for every rank.  The
    excluded band is the closed rank interval on which H*(m) lies in
    [0, 1/2]; its raw endpoints come out reversed for H > 1/2, so membership
    is decided on the [min, max] normalisation (both endpoints are reported).
    """
    if not 0.0 < H < 1.0:
        raise ValueError("H must lie in (0,1)")
    if m < 1:
        raise ValueError("rank must be >= 1")
    if H == 0.5:
        return ScalingExponents(H=H, m=m, hstar=hstar(H, m), regime="wiener",
                                excluded_band=False, strict=True, band=(math.inf, math.inf))
    hs = hstar(H, m)
    if abs(hs - 0.5) <= BOUNDARY_TOL:
        regime = "boundary"
    elif hs < 0.5:
        regime = "wiener"
    else:
        regime = "hermite"
    lo, hi = 1.0 / (1.0 - H), 1.0 / (2.0 * (1.0 - H))
    excluded = min(lo, hi) - BOUNDARY_TOL <= m <= max(lo, hi) + BOUNDARY_TOL
    strict = hs < -BOUNDARY_TOL or hs > 0.5 + BOUNDARY_TOL
    return ScalingExponents(H=H, m=m, hstar=hs, regime=regime,
                            excluded_band=excluded, strict=strict, band=(lo, hi))


def fast_decay_norm(exp: ChaosExpansion, q):
    """sum_l |c_l| sqrt(l!) (2q-1)^{l/2} over the stored coefficients.

    Finite for all polynomials; +inf is returned on overflow so the caller
    can compare against a growth budget.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    fact = _factorials(exp.k_max)
    with np.errstate(over="ignore"):
        terms = np.abs(exp.coeffs) * np.sqrt(fact) * (2.0 * q - 1.0) ** (np.arange(exp.k_max + 1) / 2.0)
        total = float(np.sum(terms))
    return total if np.isfinite(total) else math.inf


def hermite_sup_bound_check(m, grid):
    """True iff max |e^{-x^2/2} H_m(x)| over the grid respects 1.0865 sqrt(m!).

    The grid must cover [-20, 20]; the weighted evaluator supplies
    e^{-x^2/4} H_m / sqrt(m!), the remaining factor is folded in here.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.min() > -20.0 or grid.max() < 20.0:
        raise ValueError("grid must cover [-20, 20]")
    vals = np.abs(hermite_eval_weighted(m, grid)) * np.exp(-grid * grid / 4.0)
    sup = float(vals.max())  # = max |e^{-x^2/2} H_m| / sqrt(m!)
    return sup <= SUP_BOUND_CONST + 1e-9


def hermite_product_expectation(n, m, rho_power_moment=None):
    """E H_n(X) H_m(Y) for jointly standard Gaussian (X, Y) with corr rho.

    Returns delta_{n,m} m! rho^m as a function of rho (callable) for reuse in
    covariance computations.
    """
    if n != m:
        return lambda rho: np.zeros_like(np.asarray(rho, dtype=float))
    f = math.factorial(m)
    return lambda rho: f * np.asarray(rho, dtype=float) ** m
