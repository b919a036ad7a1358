"""Copula families: CDFs, log-densities, and seeded samplers.

Six families are supported: independence, gaussian, studentt, clayton,
frank, gumbel.  Elliptical families carry a correlation matrix (plus
degrees of freedom for studentt); the Archimedean trio carries a scalar
theta.  Densities are evaluated in log space; uniform inputs are clamped
into [CLAMP_EPS, 1 - CLAMP_EPS] before evaluation because the Clayton and
Gumbel densities diverge at the boundary of the unit cube.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.linalg import cholesky, solve_triangular
from scipy.special import gammaln, ndtr, ndtri, stdtr, stdtrit

from .errors import CapabilityError

# Global clamp applied to uniform inputs before density/CDF evaluation.
CLAMP_EPS = 1e-6

_LOG_2PI = math.log(2.0 * math.pi)


class Family(str, enum.Enum):
    INDEPENDENCE = "independence"
    GAUSSIAN = "gaussian"
    STUDENTT = "studentt"
    CLAYTON = "clayton"
    FRANK = "frank"
    GUMBEL = "gumbel"

    def __str__(self):
        return self.value

    @classmethod
    def parse(cls, name):
        cleaned = str(name).strip().lower().replace("-", "").replace("_", "")
        try:
            return cls(cleaned)
        except ValueError:
            valid = ", ".join(f.value for f in cls)
            raise ValueError(f"unknown copula family {name!r}; expected one of {valid}") from None


# Default candidate set for model selection (fixed tie-break order).
SELECTABLE_FAMILIES = (
    Family.GAUSSIAN,
    Family.STUDENTT,
    Family.CLAYTON,
    Family.FRANK,
    Family.GUMBEL,
)

# Admissible scalar-parameter ranges used by fitting and validation.
CLAYTON_THETA_RANGE = (1e-4, 50.0)
FRANK_THETA_MAG_RANGE = (1e-4, 50.0)
GUMBEL_THETA_RANGE = (1.0 + 1e-6, 50.0)
STUDENTT_NU_RANGE = (2.0, 50.0)


@dataclass(frozen=True)
class CopulaParams:
    """Parameter bundle; only the fields a family needs are set.

    sigma : correlation matrix (gaussian/studentt), unit diagonal, PD
    nu    : degrees of freedom > 2 (studentt)
    theta : scalar dependence parameter (clayton/frank/gumbel)
    dim   : number of variables (classifiers), >= 2
    """

    dim: int
    sigma: np.ndarray | None = None
    nu: float | None = None
    theta: float | None = None

    def __post_init__(self):
        if self.sigma is not None:
            object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))


def validate_params(family, params):
    """Raise ValueError if params are invalid for the family."""
    family = Family(family)
    d = params.dim
    if d < 2:
        raise ValueError(f"dim must be >= 2, got {d}")
    if family in (Family.GAUSSIAN, Family.STUDENTT):
        s = params.sigma
        if s is None or s.shape != (d, d):
            raise ValueError(f"{family.value} copula needs a {d}x{d} correlation matrix")
        if not np.allclose(s, s.T, atol=1e-12):
            raise ValueError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(s), 1.0, atol=1e-12):
            raise ValueError("correlation matrix must have unit diagonal")
        off = s[~np.eye(d, dtype=bool)]
        if np.any(np.abs(off) >= 1.0):
            raise ValueError("off-diagonal correlations must lie in (-1, 1)")
        try:
            cholesky(s, lower=True)
        except np.linalg.LinAlgError:
            raise ValueError("correlation matrix must be positive definite") from None
        except Exception as exc:  # scipy raises LinAlgError from its own module
            raise ValueError(f"correlation matrix must be positive definite: {exc}") from None
    if family is Family.STUDENTT:
        if params.nu is None or not params.nu > 2.0:
            raise ValueError(f"studentt needs nu > 2, got {params.nu}")
    if family is Family.CLAYTON:
        if params.theta is None or not params.theta > 0.0:
            raise ValueError(f"clayton needs theta > 0, got {params.theta}")
    if family is Family.FRANK:
        if params.theta is None or params.theta == 0.0:
            raise ValueError(f"frank needs theta != 0, got {params.theta}")
        if params.theta < 0.0 and d > 2:
            raise ValueError("frank with theta < 0 is only a valid copula at dim 2")
    if family is Family.GUMBEL:
        if params.theta is None or not params.theta >= 1.0:
            raise ValueError(f"gumbel needs theta >= 1, got {params.theta}")


def independence_params(dim):
    return CopulaParams(dim=dim)


def elliptical_params(sigma, nu=None):
    sigma = np.asarray(sigma, dtype=float)
    return CopulaParams(dim=sigma.shape[0], sigma=sigma, nu=nu)


def archimedean_params(theta, dim=2):
    return CopulaParams(dim=dim, theta=float(theta))


def equicorrelation(rho, dim):
    """Correlation matrix with a common off-diagonal entry."""
    s = np.full((dim, dim), float(rho))
    np.fill_diagonal(s, 1.0)
    return s


def clamp_unit(u, eps=CLAMP_EPS):
    """Clamp values into the open interval (0, 1) used throughout."""
    return np.clip(u, eps, 1.0 - eps)


# ---------------------------------------------------------------------------
# univariate quantiles
# ---------------------------------------------------------------------------

def std_normal_quantile(p):
    """Inverse of the standard normal CDF."""
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr <= 0.0) | (p_arr >= 1.0)):
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    out = ndtri(p_arr)
    return float(out) if np.isscalar(p) or p_arr.ndim == 0 else out


def student_t_quantile(p, nu):
    """Inverse of the Student-t CDF with nu degrees of freedom."""
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr <= 0.0) | (p_arr >= 1.0)):
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if not nu > 0.0:
        raise ValueError(f"degrees of freedom must be > 0, got {nu}")
    out = np.where(p_arr == 0.5, 0.0, stdtrit(nu, p_arr))  # exact symmetry at the median
    return float(out) if np.isscalar(p) or p_arr.ndim == 0 else out


# ---------------------------------------------------------------------------
# internal helpers
# ---------------------------------------------------------------------------

def _as_matrix(u, dim):
    """Clamp and reshape input to (n, dim); report whether input was 1-D."""
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    if single:
        u = u[None, :]
    if u.ndim != 2 or u.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {u.shape}")
    return clamp_unit(u), single


def _maybe_scalar(values, single):
    return float(values[0]) if single else values


def _chol_logdet(sigma):
    lo = cholesky(sigma, lower=True)
    return lo, 2.0 * float(np.sum(np.log(np.diag(lo))))


def _gaussian_log_density(params, u):
    q = ndtri(u)
    lo, logdet = _chol_logdet(params.sigma)
    y = solve_triangular(lo, q.T, lower=True)
    quad_form = np.sum(y * y, axis=0)
    return -0.5 * logdet - 0.5 * (quad_form - np.sum(q * q, axis=1))


def _studentt_log_density(params, u):
    nu, d = params.nu, params.dim
    x = stdtrit(nu, u)
    lo, logdet = _chol_logdet(params.sigma)
    y = solve_triangular(lo, x.T, lower=True)
    quad_form = np.sum(y * y, axis=0)
    const = (
        gammaln((nu + d) / 2.0)
        + (d - 1) * gammaln(nu / 2.0)
        - d * gammaln((nu + 1) / 2.0)
        - 0.5 * logdet
    )
    return (
        const
        - 0.5 * (nu + d) * np.log1p(quad_form / nu)
        + 0.5 * (nu + 1) * np.sum(np.log1p(x * x / nu), axis=1)
    )


def _clayton_log_density(theta, u):
    d = u.shape[1]
    t = -theta * np.log(u)
    m = t.max(axis=1)
    # log(sum u_i^-theta - (d-1)), computed around the largest exponent
    log_s = m + np.log(np.sum(np.exp(t - m[:, None]), axis=1) - (d - 1) * np.exp(-m))
    const = float(np.sum(np.log1p(theta * np.arange(1, d))))
    return const - (1.0 + theta) * np.sum(np.log(u), axis=1) - (1.0 / theta + d) * log_s


def _gumbel_log_density(theta, u):
    d = u.shape[1]
    x = -np.log(u)
    log_x = np.log(x)
    # log S with S = sum x_i^theta, stable for theta up to the range cap
    tlx = theta * log_x
    m = tlx.max(axis=1)
    log_s = m + np.log(np.sum(np.exp(tlx - m[:, None]), axis=1))
    w = np.exp(log_s / theta)
    alpha = 1.0 / theta
    shared = (theta - 1.0) * np.sum(log_x, axis=1) + np.sum(x, axis=1) - w
    if d == 2:
        return shared + (alpha - 2.0) * log_s + np.log(w + theta - 1.0)
    if d == 3:
        poly = alpha**2 * w**2 + 3.0 * alpha * (1.0 - alpha) * w + (1.0 - alpha) * (2.0 - alpha)
        return shared + 2.0 * np.log(theta) + (alpha - 3.0) * log_s + np.log(poly)
    raise CapabilityError(f"gumbel density is implemented for dim 2 and 3, not {d}")


def _frank_generator_sum(theta, u):
    """Sum of generator values t = sum_i phi(u_i) >= 0, computed stably."""
    a = math.expm1(-theta)  # e^-theta - 1
    b = np.expm1(-theta * u)
    # a/b_i >= 1 for either sign of theta; log of a positive ratio
    return np.sum(np.log(a / b), axis=1), a


def _frank_log_density(theta, u):
    d = u.shape[1]
    t, a = _frank_generator_sum(theta, u)
    # 1 + g with g = a * e^-t, grouped to avoid cancellation for large theta
    one_plus_g = np.exp(-t - theta) - np.expm1(-t)
    if d == 2:
        return (
            math.log(abs(theta))
            - math.log(abs(a))
            - theta * np.sum(u, axis=1)
            - 2.0 * np.log(one_plus_g)
        )
    if d == 3:
        one_minus_g = 1.0 - a * np.exp(-t)
        return (
            2.0 * math.log(theta)
            - 2.0 * math.log(abs(a))
            + np.log(one_minus_g)
            - theta * np.sum(u, axis=1)
            - 3.0 * np.log(one_plus_g)
        )
    raise CapabilityError(f"frank density is implemented for dim 2 and 3, not {d}")


# ---------------------------------------------------------------------------
# public density / CDF surface
# ---------------------------------------------------------------------------

def copula_log_density(family, params, u):
    """Log of the copula density at u (rows are points, columns variables)."""
    family = Family(family)
    validate_params(family, params)
    u, single = _as_matrix(u, params.dim)
    if family is Family.INDEPENDENCE:
        out = np.zeros(u.shape[0])
    elif family is Family.GAUSSIAN:
        out = _gaussian_log_density(params, u)
    elif family is Family.STUDENTT:
        out = _studentt_log_density(params, u)
    elif family is Family.CLAYTON:
        out = _clayton_log_density(params.theta, u)
    elif family is Family.FRANK:
        out = _frank_log_density(params.theta, u)
    else:
        out = _gumbel_log_density(params.theta, u)
    return _maybe_scalar(out, single)


def copula_density(family, params, u):
    """Copula density at u; exp of the log-space evaluation."""
    return np.exp(copula_log_density(family, params, u))


def _bivariate_gaussian_cdf(rho, x1, x2):
    # P(Z1 <= x1, Z2 <= x2) via conditioning on Z1
    s = math.sqrt(1.0 - rho * rho)

    def integrand(z):
        return math.exp(-0.5 * z * z - 0.5 * _LOG_2PI) * ndtr((x2 - rho * z) / s)

    lo = min(-8.5, x1 - 1.0)
    if x1 <= lo:
        return 0.0
    val, _ = quad(integrand, lo, x1, epsabs=1e-12, epsrel=1e-10, limit=200)
    return val


def _bivariate_student_cdf(rho, nu, x1, x2):
    # conditional of a bivariate t: T2 | T1=z is scaled t with nu+1 dof
    s2 = 1.0 - rho * rho
    log_norm = gammaln((nu + 1.0) / 2.0) - gammaln(nu / 2.0) - 0.5 * math.log(nu * math.pi)

    def integrand(z):
        pdf = math.exp(log_norm - 0.5 * (nu + 1.0) * math.log1p(z * z / nu))
        scale = math.sqrt(s2 * (nu + z * z) / (nu + 1.0))
        return pdf * stdtr(nu + 1.0, (x2 - rho * z) / scale)

    val, _ = quad(integrand, -np.inf, x1, epsabs=1e-11, epsrel=1e-9, limit=400)
    return val


def copula_cdf(family, params, u):
    """Copula CDF at u.

    Archimedean and independence families support any dimension;
    gaussian/studentt are evaluated by numerical integration and only at
    dim 2 (higher dimensions raise CapabilityError).
    """
    family = Family(family)
    validate_params(family, params)
    u, single = _as_matrix(u, params.dim)
    d = params.dim
    if family is Family.INDEPENDENCE:
        out = np.prod(u, axis=1)
    elif family is Family.CLAYTON:
        th = params.theta
        arg = np.maximum(np.sum(u ** (-th), axis=1) - d + 1.0, 0.0)
        out = arg ** (-1.0 / th)
    elif family is Family.GUMBEL:
        th = params.theta
        out = np.exp(-np.sum((-np.log(u)) ** th, axis=1) ** (1.0 / th))
    elif family is Family.FRANK:
        th = params.theta
        t, _ = _frank_generator_sum(th, u)
        one_plus_g = np.exp(-t - th) - np.expm1(-t)
        out = -np.log(one_plus_g) / th
    elif family is Family.GAUSSIAN:
        if d != 2:
            raise CapabilityError("gaussian copula CDF is only available at dim 2")
        x = ndtri(u)
        rho = float(params.sigma[0, 1])
        out = np.array([_bivariate_gaussian_cdf(rho, a, b) for a, b in x])
    else:  # studentt
        if d != 2:
            raise CapabilityError("studentt copula CDF is only available at dim 2")
        x = stdtrit(params.nu, u)
        rho = float(params.sigma[0, 1])
        out = np.array([_bivariate_student_cdf(rho, params.nu, a, b) for a, b in x])
    out = np.clip(out, 0.0, 1.0)
    return _maybe_scalar(out, single)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _sample_positive_stable(alpha, n, rng):
    """Kanter's method; V has Laplace transform E[exp(-tV)] = exp(-t^alpha)."""
    w = rng.uniform(0.0, math.pi, n)
    e = rng.standard_exponential(n)
    return (np.sin(alpha * w) / np.sin(w) ** (1.0 / alpha)) * (
        np.sin((1.0 - alpha) * w) / e
    ) ** ((1.0 - alpha) / alpha)


def _sample_frank_bivariate(theta, n, rng):
    """Conditional inversion; exact for either sign of theta at dim 2."""
    u = rng.random(n)
    p = rng.random(n)
    a = math.expm1(-theta)
    b = np.exp(-theta * u)
    v = -np.log1p(p * a / (b * (1.0 - p) + p)) / theta
    return np.column_stack([u, v])


def sample_copula(family, params, n, seed):
    """Draw n rows of d uniforms from the copula, deterministic per seed."""
    rng = np.random.default_rng(seed)
    return sample_copula_rng(family, params, n, rng)


def sample_copula_rng(family, params, n, rng):
    family = Family(family)
    validate_params(family, params)
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    d = params.dim
    if family is Family.INDEPENDENCE:
        return rng.random((n, d))
    if family is Family.GAUSSIAN:
        lo = cholesky(params.sigma, lower=True)
        z = rng.standard_normal((n, d)) @ lo.T
        return clamp_unit(ndtr(z))
    if family is Family.STUDENTT:
        lo = cholesky(params.sigma, lower=True)
        z = rng.standard_normal((n, d)) @ lo.T
        w = rng.chisquare(params.nu, n) / params.nu
        return clamp_unit(stdtr(params.nu, z / np.sqrt(w)[:, None]))
    if family is Family.CLAYTON:
        th = params.theta
        if th < 1e-12:
            return rng.random((n, d))
        v = rng.gamma(1.0 / th, 1.0, n)
        e = rng.standard_exponential((n, d))
        return clamp_unit((1.0 + e / v[:, None]) ** (-1.0 / th))
    if family is Family.GUMBEL:
        th = params.theta
        alpha = 1.0 / th
        if alpha > 1.0 - 1e-9:
            return rng.random((n, d))
        v = _sample_positive_stable(alpha, n, rng)
        e = rng.standard_exponential((n, d))
        return clamp_unit(np.exp(-((e / v[:, None]) ** alpha)))
    # frank
    th = params.theta
    if th < 0.0:
        if d != 2:
            raise ValueError("frank with theta < 0 can only be sampled at dim 2")
        return clamp_unit(_sample_frank_bivariate(th, n, rng))
    # logarithmic-series frailty; p saturates to 1.0 in float64 near theta ~ 36.7
    p = min(-math.expm1(-th), np.nextafter(1.0, 0.0))
    v = rng.logseries(p, n).astype(float)
    e = rng.standard_exponential((n, d))
    a = math.expm1(-th)
    return clamp_unit(-np.log1p(np.exp(-e / v[:, None]) * a) / th)


# ---------------------------------------------------------------------------
# serialization (shared with fitting): JSON-ready mapping
# ---------------------------------------------------------------------------

def params_to_dict(family, params):
    """JSON-ready mapping; absent fields mean not-applicable for the family."""
    family = Family(family)
    out = {"family": family.value, "dim": int(params.dim)}
    if params.theta is not None:
        out["theta"] = float(params.theta)
    if params.nu is not None:
        out["nu"] = float(params.nu)
    if params.sigma is not None:
        out["sigma"] = [float(v) for v in np.asarray(params.sigma).reshape(-1)]
    return out


def params_from_dict(obj):
    """Inverse of params_to_dict; returns (family, params)."""
    family = Family.parse(obj["family"])
    dim = int(obj["dim"])
    sigma = obj.get("sigma")
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float).reshape(dim, dim)
    params = CopulaParams(dim=dim, sigma=sigma, nu=obj.get("nu"), theta=obj.get("theta"))
    validate_params(family, params)
    return family, params
