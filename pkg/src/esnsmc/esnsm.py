"""Sample-selection model with extended skew-normal errors.

An outcome equation and a scalar selection equation share a
(d+1)-variate ESN error vector whose location is pinned so the errors
have mean zero; the outcome is observed only when the latent selection
variable is positive.  The observed-data likelihood follows from the
ESN closure properties: the censored contribution is the CDF of the
selection error's marginal (a bivariate normal CDF ratio) and the
observed contribution is the outcome marginal density times the
conditional selection survivor, whose normalisers collapse into a
single constant per observation.

Setting the shape vector and shift to zero recovers the Gaussian
Tobit-2 (Heckman) model exactly, which is used as an oracle throughout
the tests, and the conditional-expectation formulas reduce to the
classical inverse-Mills corrections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import log_ndtr

from . import esn
from .errors import DataError, ParameterDomainError
from .normals import log_bvn_cdf, mills_ratio_inv, norm_logpdf
from .priors import iw_logpdf
from .smc import TargetModel

__all__ = [
    "EsnsmParams",
    "EsnsmData",
    "EsnsmHyper",
    "CovariateSpec",
    "simulate",
    "loglik",
    "log_prior_esnsm",
    "tau",
    "delta",
    "conditional_expectations",
    "marginal_effect",
    "make_esnsm_target",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class EsnsmParams:
    """Outcome coefficients B (d x k1), selection coefficients beta2 (k1),
    outcome scale sigma1 (d x d), cross covariance sigma12 (d), shape
    alpha (d+1) and shift lam.  The selection error variance is fixed at 1.

    The location of the error vector is not free: it is the value that
    makes the errors mean zero, exposed as the ``xi`` property.
    """

    B: np.ndarray
    beta2: np.ndarray
    sigma1: np.ndarray
    sigma12: np.ndarray
    alpha: np.ndarray
    lam: float

    def __post_init__(self):
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.beta2 = np.atleast_1d(np.asarray(self.beta2, dtype=float))
        self.sigma1 = np.atleast_2d(np.asarray(self.sigma1, dtype=float))
        self.sigma12 = np.atleast_1d(np.asarray(self.sigma12, dtype=float))
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.lam = float(self.lam)
        d, k1 = self.B.shape
        if self.beta2.shape != (k1,):
            raise ParameterDomainError("beta2 length must match B's column count")
        if self.sigma1.shape != (d, d) or self.sigma12.shape != (d,):
            raise ParameterDomainError("sigma1 / sigma12 dimensions disagree with B")
        if self.alpha.shape != (d + 1,):
            raise ParameterDomainError("alpha must have length d + 1")
        try:
            np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError as exc:
            raise ParameterDomainError(
                "assembled error scale matrix is not positive definite"
            ) from exc

    @property
    def d(self) -> int:
        return self.B.shape[0]

    @property
    def k1(self) -> int:
        return self.B.shape[1]

    @property
    def sigma(self) -> np.ndarray:
        """Assembled (d+1) x (d+1) error scale with unit selection variance."""
        d = self.d
        out = np.empty((d + 1, d + 1))
        out[:d, :d] = self.sigma1
        out[:d, d] = self.sigma12
        out[d, :d] = self.sigma12
        out[d, d] = 1.0
        return out

    @property
    def c0(self) -> float:
        return math.sqrt(1.0 + float(self.alpha @ self.sigma @ self.alpha))

    @property
    def xi(self) -> np.ndarray:
        """Error location making the errors mean zero."""
        c0 = self.c0
        h = float(mills_ratio_inv(self.lam / c0))
        return -(self.sigma @ self.alpha / c0) * h

    def error_params(self) -> esn.EsnParamsP1:
        return esn.EsnParamsP1(self.xi, self.sigma, self.alpha, self.lam)


@dataclass
class EsnsmData:
    """Censored dataset: covariates, selection indicators and outcomes.

    Censored outcome rows carry NaN; an outcome of zero is a legitimate
    value and never a missingness marker.
    """

    x: np.ndarray
    s: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.s = np.asarray(self.s, dtype=int).ravel()
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        n = self.x.shape[0]
        if self.s.shape != (n,) or self.y.shape[0] != n:
            raise DataError("x, s and y row counts disagree")
        if not np.isin(self.s, (0, 1)).all():
            raise DataError("selection indicators must be 0 or 1")
        obs = self.s == 1
        if not np.all(np.isfinite(self.y[obs])):
            raise DataError("selected rows must have observed outcomes")
        if np.any(np.isfinite(self.y[~obs])):
            raise DataError("censored rows must have missing outcomes")

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass
class CovariateSpec:
    """Design: intercept plus independent centred Gaussian covariates."""

    n_covariates: int = 2
    variance: float = 2.0
    intercept: bool = True

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        cols = []
        if self.intercept:
            cols.append(np.ones(n))
        for _ in range(self.n_covariates):
            cols.append(rng.normal(0.0, math.sqrt(self.variance), size=n))
        return np.column_stack(cols)


def simulate(
    params: EsnsmParams, n: int, covariates, rng: np.random.Generator
) -> EsnsmData:
    """Generate a censored dataset from the latent model.

    ``covariates`` is either a CovariateSpec or an explicit (n, k1) design
    matrix.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(covariates, CovariateSpec):
        x = covariates.draw(n, rng)
    else:
        x = np.atleast_2d(np.asarray(covariates, dtype=float))
        if x.shape[0] != n:
            raise DataError("covariate matrix row count must equal n")
    if x.shape[1] != params.k1:
        raise DataError("covariate count does not match the coefficient matrices")
    eps = esn.sample(params.error_params(), n, rng)
    ystar = x @ params.B.T + eps[:, : params.d]
    sstar = x @ params.beta2 + eps[:, params.d]
    s = (sstar >= 0.0).astype(int)
    y = np.where(s[:, None] == 1, ystar, np.nan)
    return EsnsmData(x, s, y)


def _selection_blocks(params: EsnsmParams):
    """Quantities shared by every observation: marginal/conditional pieces
    of the (outcome, selection) split of the error law."""
    d = params.d
    sig1 = params.sigma1
    s12 = params.sigma12
    a1 = params.alpha[:d]
    a2 = float(params.alpha[d])
    xi = params.xi
    xi1, xi2 = xi[:d], float(xi[d])

    sol12 = np.linalg.solve(sig1, s12)  # Sigma_1^{-1} sigma_12
    s22_1 = 1.0 - float(s12 @ sol12)  # conditional selection variance
    if s22_1 <= 0.0:
        raise ParameterDomainError("conditional selection variance is not positive")

    # selection marginal: shape c2 * atilde2, shift c2 * lam
    sigma11_2 = sig1 - np.outer(s12, s12)
    c2 = 1.0 / math.sqrt(1.0 + float(a1 @ sigma11_2 @ a1))
    atilde2 = a2 + float(s12 @ a1)

    # outcome marginal: shape c1 * atilde1, shift c1 * lam
    atilde1 = a1 + sol12 * a2
    c1 = 1.0 / math.sqrt(1.0 + a2 * a2 * s22_1)
    c0m = math.sqrt(1.0 + c1 * c1 * float(atilde1 @ sig1 @ atilde1))
    c0s = math.sqrt(1.0 + (c2 * atilde2) ** 2)
    return {
        "xi1": xi1,
        "xi2": xi2,
        "sol12": sol12,
        "s22_1": s22_1,
        "c2": c2,
        "atilde2": atilde2,
        "atilde1": atilde1,
        "c1": c1,
        "c0m": c0m,
        "c0s": c0s,
    }


def loglik(params: EsnsmParams, data: EsnsmData) -> float:
    """Observed-data log-likelihood.

    Censored rows contribute the marginal CDF of the selection error at
    minus the selection index; observed rows contribute the outcome
    marginal Gaussian factor times a bivariate normal CDF whose second
    coordinate tracks the shift updated by the outcome residual, divided
    by a per-call constant normaliser.
    """
    blk = _selection_blocks(params)
    d = params.d
    sel_idx = data.x @ params.beta2
    out = 0.0

    cen = data.s == 0
    if np.any(cen):
        abar = blk["c2"] * blk["atilde2"]
        lbar = blk["c2"] * params.lam
        h = -sel_idx[cen] - blk["xi2"]
        k = lbar / blk["c0s"]
        r = -abar / blk["c0s"]
        r = min(max(r, -1.0 + 1e-14), 1.0 - 1e-14)
        num = log_bvn_cdf(h, np.full(h.shape, k), r)
        out += float(np.sum(num - log_ndtr(k)))

    obs = data.s == 1
    if np.any(obs):
        chol = np.linalg.cholesky(params.sigma1)
        resid = data.y[obs] - data.x[obs] @ params.B.T - blk["xi1"]
        w = np.linalg.solve(chol, resid.T)
        gauss = -0.5 * (d * _LOG_2PI * np.ones(resid.shape[0])) - np.sum(
            np.log(np.diag(chol))
        ) - 0.5 * np.sum(w * w, axis=0)

        m_i = blk["xi2"] + sel_idx[obs] + resid @ blk["sol12"]
        lam_i = params.lam + resid @ blk["atilde1"]
        a2 = float(params.alpha[d])
        s22_1 = blk["s22_1"]
        sd2 = math.sqrt(s22_1)
        kvar = math.sqrt(1.0 + a2 * a2 * s22_1)
        r = a2 * sd2 / kvar  # template covariance (s22_1, s22_1*a2; ., 1+a2^2 s22_1)
        r = min(max(r, -1.0 + 1e-14), 1.0 - 1e-14)
        num = log_bvn_cdf(m_i / sd2, lam_i / kvar, r)
        norm_const = log_ndtr(blk["c1"] * params.lam / blk["c0m"])
        out += float(np.sum(gauss + num - norm_const))
    return out


@dataclass
class EsnsmHyper:
    """Prior hyperparameters: g-prior scales for both coefficient blocks,
    inverse-Wishart block for the outcome scale, and the usual shape/shift
    priors.  The cross covariance is uniform over the feasible region given
    the outcome scale."""

    mu_b: np.ndarray
    c_beta1: float
    mu_beta2: np.ndarray
    c_beta2: float
    V: np.ndarray
    nu: float
    sigma2_alpha: float = 10.0

    def __post_init__(self):
        self.mu_b = np.asarray(self.mu_b, dtype=float)
        self.mu_beta2 = np.atleast_1d(np.asarray(self.mu_beta2, dtype=float))
        self.V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if self.c_beta1 <= 0 or self.c_beta2 <= 0 or self.sigma2_alpha <= 0:
            raise ValueError("scale factors must be positive")

    @classmethod
    def defaults(cls, d: int, k_out: int, k_sel: int, n: int) -> "EsnsmHyper":
        return cls(
            mu_b=np.zeros((d, k_out)),
            c_beta1=5.0 * n,
            mu_beta2=np.zeros(k_sel),
            c_beta2=5.0 * n,
            V=12.0 * np.eye(d),
            nu=float(max(6, d + 4)),
        )


def _gauss_logpdf_prec(x, mu, prec_chol_logdet, prec):
    u = np.asarray(x, dtype=float).ravel() - np.asarray(mu, dtype=float).ravel()
    return -0.5 * (u.size * _LOG_2PI - prec_chol_logdet + float(u @ prec @ u))


def log_prior_esnsm(
    params: EsnsmParams,
    hyper: EsnsmHyper,
    x: np.ndarray,
    outcome_terms: Optional[Sequence[int]] = None,
    select_terms: Optional[Sequence[int]] = None,
) -> float:
    """Log prior density.

    The outcome coefficients get a matrix-normal g-prior with covariance
    c_beta1 * Sigma_1 (x) (X1'X1)^{-1}, the selection coefficients a
    Gaussian with covariance c_beta2 * (X2'X2)^{-1}; the outcome scale is
    inverse Wishart, the cross covariance uniform over the SPD-feasible
    ellipsoid given the scale, and shape/shift follow the IID-model priors.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = params.d
    x1 = x if outcome_terms is None else x[:, list(outcome_terms)]
    x2 = x if select_terms is None else x[:, list(select_terms)]
    xtx1 = x1.T @ x1
    xtx2 = x2.T @ x2
    if np.linalg.matrix_rank(xtx1) < xtx1.shape[0] or np.linalg.matrix_rank(xtx2) < xtx2.shape[0]:
        raise DataError("X'X is singular")

    b_free = params.B if outcome_terms is None else params.B[:, list(outcome_terms)]
    beta2_free = params.beta2 if select_terms is None else params.beta2[list(select_terms)]
    if b_free.shape[1] != xtx1.shape[0] or beta2_free.shape[0] != xtx2.shape[0]:
        raise ValueError("coefficient blocks do not match the design columns")

    # vec(B) | Sigma_1: precision (1/c_beta1) Sigma_1^{-1} (x) X1'X1
    prec_b = np.kron(np.linalg.inv(params.sigma1), xtx1) / hyper.c_beta1
    sign, logdet_prec = np.linalg.slogdet(prec_b)
    out = _gauss_logpdf_prec(b_free.ravel(), hyper.mu_b.ravel(), logdet_prec, prec_b)

    prec_2 = xtx2 / hyper.c_beta2
    sign2, logdet2 = np.linalg.slogdet(prec_2)
    out += _gauss_logpdf_prec(beta2_free, hyper.mu_beta2, logdet2, prec_2)

    out += iw_logpdf(params.sigma1, hyper.V, hyper.nu)

    # sigma12 | sigma1: uniform over {t : t' Sigma_1^{-1} t < 1}
    q = float(params.sigma12 @ np.linalg.solve(params.sigma1, params.sigma12))
    if q >= 1.0:
        return -math.inf
    _, logdet_s1 = np.linalg.slogdet(params.sigma1)
    out += math.lgamma(d / 2.0 + 1.0) - 0.5 * d * math.log(math.pi) - 0.5 * logdet_s1

    out += float(
        np.sum(norm_logpdf(params.alpha / math.sqrt(hyper.sigma2_alpha)))
    ) - 0.5 * (d + 1) * math.log(hyper.sigma2_alpha)
    c0sq = 1.0 + float(params.alpha @ params.sigma @ params.alpha)
    out += -0.5 * (_LOG_2PI + math.log(c0sq) + params.lam**2 / c0sq)
    return float(out)


def tau(a: float, alpha: float, lam: float) -> float:
    """phi(a) Phi(lam + alpha a) / Phi2(a, 1, alpha, lam)."""
    c0 = math.sqrt(1.0 + alpha * alpha)
    r = -alpha / c0
    denom = float(log_bvn_cdf(a, lam / c0, min(max(r, -1 + 1e-14), 1 - 1e-14)))
    if denom == -math.inf:
        raise ParameterDomainError("vanishing selection probability in tau")
    return math.exp(float(norm_logpdf(a)) + float(log_ndtr(lam + alpha * a)) - denom)


def delta(a: float, alpha: float, lam: float) -> float:
    """phi(lam/c0) Phi(a c0 + alpha lam / c0) / Phi2(a, 1, alpha, lam)."""
    c0 = math.sqrt(1.0 + alpha * alpha)
    r = -alpha / c0
    denom = float(log_bvn_cdf(a, lam / c0, min(max(r, -1 + 1e-14), 1 - 1e-14)))
    if denom == -math.inf:
        raise ParameterDomainError("vanishing selection probability in delta")
    return math.exp(
        float(norm_logpdf(lam / c0)) + float(log_ndtr(a * c0 + alpha * lam / c0)) - denom
    )


def conditional_expectations(params: EsnsmParams, x_i) -> tuple[float, float]:
    """(E[S*|S=1,x], E[Y*|S=1,x]) for a univariate outcome.

    The selection-error location enters both expectations (it shifts the
    latent index), so it appears alongside the regression parts; in the
    Gaussian limit both reduce to the classical truncated-normal and
    Heckman corrections.
    """
    if params.d != 1:
        raise ParameterDomainError("conditional expectations require a scalar outcome")
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    blk = _selection_blocks(params)
    c2, at2, c02 = blk["c2"], blk["atilde2"], blk["c0s"]
    a_i = blk["xi2"] + float(x_i @ params.beta2)
    t2 = tau(a_i, -c2 * at2, c2 * params.lam)
    d2 = delta(a_i, -c2 * at2, c2 * params.lam)
    e_sstar = float(x_i @ params.beta2) + blk["xi2"] + t2 + (c2 * at2 / c02) * d2

    sigma1 = math.sqrt(params.sigma1[0, 0])
    sigma12 = float(params.sigma12[0])
    rho = sigma12 / sigma1
    alpha1 = float(params.alpha[0])
    # the shape entering the correction is that of the standardised outcome
    # error (sigma1 * alpha1); with it, sigma1 * v2 * delta2 equals
    # sigma12 * (c2 atilde2 / c02) delta2 + Sigma_11.2 alpha1 c2 delta2 / c02,
    # which is what conditioning on the selection error yields
    v2 = (rho * c2 * at2 + c2 * (1.0 - rho * rho) * sigma1 * alpha1) / c02
    e_ystar = float(blk["xi1"][0]) + float(x_i @ params.B[0]) + sigma12 * t2 + sigma1 * v2 * d2
    return e_sstar, e_ystar


def marginal_effect(params: EsnsmParams, x_i, k: int) -> float:
    """d E[Y*|S=1,x] / d x_k by centred finite differences."""
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float)).copy()
    step = 1e-5 * max(1.0, abs(x_i[k]))
    x_hi = x_i.copy()
    x_lo = x_i.copy()
    x_hi[k] += step
    x_lo[k] -= step
    _, up = conditional_expectations(params, x_hi)
    _, lo = conditional_expectations(params, x_lo)
    return (up - lo) / (2.0 * step)


def make_esnsm_target(
    data: EsnsmData,
    hyper: EsnsmHyper,
    outcome_terms: Sequence[int],
    select_terms: Sequence[int],
    gaussian_errors: bool = False,
) -> TargetModel:
    """Posterior target for the univariate-outcome selection model.

    Free parameters: the outcome and selection coefficients named by the
    covariate-column index lists, log outcome scale, atanh of the error
    correlation, and (unless gaussian_errors) the two shapes and the
    shift.  With gaussian_errors the shape and shift are pinned at zero,
    which is the Bayesian Tobit-2 model.
    """
    outcome_terms = list(outcome_terms)
    select_terms = list(select_terms)
    k_out, k_sel = len(outcome_terms), len(select_terms)
    k1 = data.x.shape[1]
    n_shape = 0 if gaussian_errors else 3
    dim = k_out + k_sel + 2 + n_shape

    def build_params(theta):
        b_full = np.zeros((1, k1))
        b_full[0, outcome_terms] = theta[:k_out]
        b2_full = np.zeros(k1)
        b2_full[select_terms] = theta[k_out : k_out + k_sel]
        s1 = theta[k_out + k_sel]
        s12 = theta[k_out + k_sel + 1]
        if gaussian_errors:
            al = np.zeros(2)
            lam = 0.0
        else:
            al = theta[k_out + k_sel + 2 : k_out + k_sel + 4]
            lam = theta[-1]
        return EsnsmParams(b_full, b2_full, [[s1]], [s12], al, lam)

    def to_constrained(v):
        out = np.asarray(v, dtype=float).copy()
        u = v[k_out + k_sel]
        w = v[k_out + k_sel + 1]
        out[k_out + k_sel] = math.exp(2.0 * u)
        out[k_out + k_sel + 1] = math.exp(u) * math.tanh(w)
        return out

    def to_unconstrained(theta):
        out = np.asarray(theta, dtype=float).copy()
        s1 = theta[k_out + k_sel]
        s12 = theta[k_out + k_sel + 1]
        u = 0.5 * math.log(s1)
        out[k_out + k_sel] = u
        out[k_out + k_sel + 1] = math.atanh(min(max(s12 / math.sqrt(s1), -1 + 1e-12), 1 - 1e-12))
        return out

    def log_jacobian(v):
        u = v[k_out + k_sel]
        w = v[k_out + k_sel + 1]
        # d(sigma1^2)/du = 2 e^{2u}; d(sigma12)/dw = e^u sech^2(w)
        return math.log(2.0) + 3.0 * u + math.log(max(1.0 - math.tanh(w) ** 2, 1e-300))

    def log_post(theta):
        try:
            params = build_params(theta)
            return loglik(params, data) + log_prior_esnsm(
                params, hyper, data.x, outcome_terms, select_terms
            )
        except (ParameterDomainError, np.linalg.LinAlgError, FloatingPointError):
            return -math.inf

    names = (
        [f"beta1_{j}" for j in outcome_terms]
        + [f"beta2_{j}" for j in select_terms]
        + ["sigma1", "sigma12"]
        + ([] if gaussian_errors else ["alpha1", "alpha2", "lambda"])
    )

    obs = data.s == 1
    y_obs = data.y[obs, 0]
    x1_obs = data.x[np.ix_(obs, outcome_terms)]
    coef, *_ = np.linalg.lstsq(x1_obs, y_obs, rcond=None)
    resid_var = float(np.var(y_obs - x1_obs @ coef)) or 1.0
    start_theta = np.concatenate(
        [
            coef,
            np.zeros(k_sel),
            [resid_var, 0.0],
            [] if gaussian_errors else [0.5, 0.5, 0.0],
        ]
    )
    return TargetModel(
        dim=dim,
        log_posterior_unnorm=log_post,
        to_constrained=to_constrained,
        to_unconstrained=to_unconstrained,
        log_jacobian=log_jacobian,
        param_names=names,
        default_start=to_unconstrained(start_theta),
    )
