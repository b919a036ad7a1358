"""Two-stage (marginals first) copula fitting and family selection.

Marginals are estimated nonparametrically (see kde); raw scores are mapped
through the fitted marginal CDFs onto (0,1) and the copula parameter is
then chosen to maximize the summed log copula density over those
pseudo-observations.  Fit quality is compared across families with
log-likelihood, AIC and BIC.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar
from scipy.stats import kendalltau as _scipy_kendalltau

from .copulas import (
    CLAYTON_THETA_RANGE,
    FRANK_THETA_MAG_RANGE,
    GUMBEL_THETA_RANGE,
    SELECTABLE_FAMILIES,
    STUDENTT_NU_RANGE,
    CopulaParams,
    Family,
    archimedean_params,
    clamp_unit,
    copula_log_density,
    elliptical_params,
    independence_params,
)
from .errors import EstimationError, SelectionError
from .kde import kde_cdf

_THETA_XATOL = 1e-6  # tolerance on log-parameterized theta searches
_TIE_EPS = 1e-9


def pseudo_observations(raw, kdes):
    """Map each raw score column through its marginal CDF onto (0,1)."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ValueError(f"expected a T x L score matrix, got shape {raw.shape}")
    if raw.shape[1] != len(kdes):
        raise ValueError(
            f"score matrix has {raw.shape[1]} columns but {len(kdes)} marginals were given"
        )
    if raw.shape[0] < 10:
        raise ValueError(f"need at least 10 observations, got {raw.shape[0]}")
    cols = [clamp_unit(kde_cdf(kdes[i], raw[:, i])) for i in range(raw.shape[1])]
    return np.column_stack(cols)


def kendall_tau(x, y):
    """Kendall tau-a: (concordant - discordant) / (n(n-1)/2), ties neither."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need two equal-length vectors, got {x.shape} and {y.shape}")
    n = x.size
    if n < 2:
        raise ValueError(f"need at least 2 observations, got {n}")
    n0 = n * (n - 1) // 2
    tau_b = _scipy_kendalltau(x, y).statistic
    if np.isnan(tau_b):  # a constant input column; no concordant or discordant pairs
        return 0.0

    def tie_pairs(v):
        _, counts = np.unique(v, return_counts=True)
        return int(np.sum(counts * (counts - 1) // 2))

    n1, n2 = tie_pairs(x), tie_pairs(y)
    s = round(tau_b * math.sqrt((n0 - n1) * (n0 - n2)))
    return s / n0


# --- Kendall tau <-> parameter relations -----------------------------------

def clayton_theta_from_tau(tau):
    tau = min(max(tau, 1e-6), 0.96)
    return 2.0 * tau / (1.0 - tau)


def clayton_tau_from_theta(theta):
    return theta / (theta + 2.0)


def gumbel_theta_from_tau(tau):
    tau = min(max(tau, 1e-6), 0.96)
    return 1.0 / (1.0 - tau)


def gumbel_tau_from_theta(theta):
    return 1.0 - 1.0 / theta


def _debye1(theta):
    val, _ = quad(lambda t: t / math.expm1(t) if t > 0 else 1.0, 0.0, theta, limit=200)
    return val / theta


def frank_tau_from_theta(theta):
    if theta == 0.0:
        return 0.0
    return math.copysign(1.0, theta) * (1.0 - 4.0 / abs(theta) * (1.0 - _debye1(abs(theta))))


def frank_theta_from_tau(tau):
    """Numeric inversion of the Frank tau relation; sign follows tau."""
    if abs(tau) < 1e-6:
        return math.copysign(1e-4, tau if tau != 0.0 else 1.0)
    mag = brentq(lambda th: frank_tau_from_theta(th) - abs(tau), 1e-6, 300.0, xtol=1e-10)
    return math.copysign(mag, tau)


def gaussian_rho_from_tau(tau):
    return math.sin(math.pi * tau / 2.0)


# --- fit reports ------------------------------------------------------------

@dataclass
class FitReport:
    family: Family
    params: CopulaParams
    log_likelihood: float
    k: int
    n: int
    aic: float = field(init=False)
    bic: float = field(init=False)
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.aic, self.bic = fit_statistics(self.k, self.n, self.log_likelihood)


@dataclass
class SelectionReport:
    per_family: list
    chosen: Family
    criterion: str
    excluded: dict = field(default_factory=dict)

    def chosen_report(self):
        for rep in self.per_family:
            if rep.family is self.chosen:
                return rep
        raise LookupError(f"no fit report for chosen family {self.chosen}")


def fit_statistics(k, n, ll):
    """(AIC, BIC) = (2k - 2*LL, k*ln(n) - 2*LL)."""
    if n < 1:
        raise ValueError(f"observation count must be >= 1, got {n}")
    if k < 0:
        raise ValueError(f"parameter count must be >= 0, got {k}")
    return 2.0 * k - 2.0 * ll, k * math.log(n) - 2.0 * ll


# --- per-family estimation ---------------------------------------------------

def _pairwise_taus(u):
    d = u.shape[1]
    taus = np.zeros((d, d))
    for i in range(d):
        for j in range(i + 1, d):
            taus[i, j] = taus[j, i] = kendall_tau(u[:, i], u[:, j])
    return taus


def _nearest_correlation(sigma):
    """Clip eigenvalues and renormalize to unit diagonal; flags if adjusted."""
    vals, vecs = np.linalg.eigh(sigma)
    if vals.min() > 1e-8:
        return sigma, False
    vals = np.maximum(vals, 1e-6)
    fixed = (vecs * vals) @ vecs.T
    scale = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(scale, scale)
    np.fill_diagonal(fixed, 1.0)
    return fixed, True


def _check_columns(u):
    for i in range(u.shape[1]):
        if np.all(u[:, i] == u[0, i]):
            raise EstimationError(f"pseudo-observation column {i} is constant (all ties)")


def _total_ll(family, params, u):
    return float(np.sum(copula_log_density(family, params, u)))


def _fit_gaussian(u):
    d = u.shape[1]
    taus = _pairwise_taus(u)
    sigma = np.vectorize(gaussian_rho_from_tau)(taus)
    np.fill_diagonal(sigma, 1.0)
    sigma = np.clip(sigma, -0.999999, 0.999999)
    np.fill_diagonal(sigma, 1.0)
    sigma, projected = _nearest_correlation(sigma)
    params = elliptical_params(sigma)
    flags = ["sigma-projected"] if projected else []
    return params, _total_ll(Family.GAUSSIAN, params, u), d * (d - 1) // 2, flags


def _fit_studentt(u):
    d = u.shape[1]
    base, _, _, flags = _fit_gaussian(u)
    lo, hi = STUDENTT_NU_RANGE

    def neg_ll(nu):
        params = elliptical_params(base.sigma, nu=nu)
        return -_total_ll(Family.STUDENTT, params, u)

    res = minimize_scalar(neg_ll, bounds=(lo + 1e-3, hi), method="bounded", options={"xatol": 1e-2})
    nu = float(res.x)
    if nu > hi - 0.05:
        flags = flags + ["nu-at-upper-bound"]
    elif nu < lo + 0.05:
        flags = flags + ["nu-at-lower-bound"]
    params = elliptical_params(base.sigma, nu=nu)
    return params, -float(res.fun), d * (d - 1) // 2 + 1, flags


def _fit_archimedean(family, u):
    d = u.shape[1]
    taus = _pairwise_taus(u)
    tau_bar = float(np.mean(taus[np.triu_indices(d, 1)]))
    flags = []
    if family is Family.CLAYTON:
        lo, hi = CLAYTON_THETA_RANGE
        sign = 1.0
    elif family is Family.GUMBEL:
        lo, hi = GUMBEL_THETA_RANGE
        sign = 1.0
    else:  # frank
        lo, hi = FRANK_THETA_MAG_RANGE
        sign = -1.0 if tau_bar < 0.0 else 1.0
        if d > 2 and sign < 0.0:
            sign = 1.0
            flags.append("negative-tau-forced-positive")

    def neg_ll(log_theta):
        return -_total_ll(family, archimedean_params(sign * math.exp(log_theta), dim=d), u)

    res = minimize_scalar(
        neg_ll,
        bounds=(math.log(lo), math.log(hi)),
        method="bounded",
        options={"xatol": _THETA_XATOL},
    )
    theta = sign * math.exp(float(res.x))
    if abs(theta) > hi * (1.0 - 1e-3):
        flags.append("theta-at-upper-bound")
    elif abs(theta) < lo * (1.0 + 1e-3):
        flags.append("theta-at-lower-bound")
    params = archimedean_params(theta, dim=d)
    return params, -float(res.fun), 1, flags


def fit_copula_ifm(family, u):
    """Maximize the copula log-likelihood over the family's parameter range.

    Gaussian correlation comes from pairwise Kendall-tau inversion
    (rho = sin(pi tau / 2)) projected to a valid correlation matrix;
    studentt adds a bounded profile search over nu; the Archimedean
    families run a bounded 1-D search over log theta.
    """
    family = Family(family)
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] < 2:
        raise ValueError(f"expected a T x L matrix with L >= 2, got shape {u.shape}")
    n = u.shape[0]
    if n < 50:
        warnings.warn(f"fitting on only {n} observations; estimates may be unstable")
    u = clamp_unit(u)
    if family is Family.INDEPENDENCE:
        return FitReport(family, independence_params(u.shape[1]), 0.0, 0, n)
    _check_columns(u)
    try:
        if family is Family.GAUSSIAN:
            params, ll, k, flags = _fit_gaussian(u)
        elif family is Family.STUDENTT:
            params, ll, k, flags = _fit_studentt(u)
        else:
            params, ll, k, flags = _fit_archimedean(family, u)
    except EstimationError:
        raise
    except Exception as exc:
        raise EstimationError(f"{family.value} fit failed: {exc}") from exc
    if not math.isfinite(ll):
        raise EstimationError(f"{family.value} fit produced non-finite log-likelihood")
    return FitReport(family, params, ll, k, n, flags=flags)


_CRITERIA = ("aic", "bic", "ll")


def select_family(u, candidates=None, criterion="aic"):
    """Fit every candidate family and pick the winner by the criterion.

    AIC/BIC are minimized, LL is maximized.  Near-ties (difference below
    1e-9) prefer fewer parameters, then the fixed candidate order
    gaussian, studentt, clayton, frank, gumbel.
    """
    criterion = str(criterion).lower()
    if criterion not in _CRITERIA:
        raise ValueError(f"criterion must be one of {_CRITERIA}, got {criterion!r}")
    if candidates is None:
        candidates = SELECTABLE_FAMILIES
    candidates = [Family(c) for c in candidates]
    if not candidates:
        raise ValueError("candidate list is empty")
    reports, excluded = [], {}
    for fam in candidates:
        try:
            reports.append(fit_copula_ifm(fam, u))
        except (EstimationError, ValueError) as exc:
            excluded[fam.value] = str(exc)
    if not reports:
        raise SelectionError(f"every candidate family failed: {excluded}")

    def score(rep):
        if criterion == "aic":
            return rep.aic
        if criterion == "bic":
            return rep.bic
        return -rep.log_likelihood

    order = {fam: i for i, fam in enumerate(SELECTABLE_FAMILIES)}
    order[Family.INDEPENDENCE] = len(order)
    best_score = min(score(r) for r in reports)
    # near-ties collapse onto the best score so k and family order decide
    best = min(
        reports,
        key=lambda r: (
            best_score if score(r) - best_score < _TIE_EPS else score(r),
            r.k,
            order.get(r.family, 99),
        ),
    )
    return SelectionReport(per_family=reports, chosen=best.family, criterion=criterion, excluded=excluded)


def selection_to_dict(report, class_label=None):
    """JSON-ready form of a SelectionReport."""
    from .copulas import params_to_dict

    out = {
        "criterion": report.criterion,
        "chosen": report.chosen.value,
        "fits": [
            {
                "family": rep.family.value,
                "ll": rep.log_likelihood,
                "k": rep.k,
                "n": rep.n,
                "aic": rep.aic,
                "bic": rep.bic,
                "params": params_to_dict(rep.family, rep.params),
                "flags": list(rep.flags),
            }
            for rep in report.per_family
        ],
        "excluded": dict(report.excluded),
    }
    if class_label is not None:
        out = {"class": int(class_label), **out}
    return out
