"""Posterior target builders for the IID sampling models.

Each builder packs the model's parameters into a flat constrained vector,
defines the matching unconstrained coordinates (locations, shapes and
shift/truncation scalars pass through; scale matrices go through a
log-Cholesky map), and wires the likelihood and prior into a
``TargetModel``.  The univariate models also carry a vectorised
evaluator over whole particle matrices, which is what makes the
sampler's inner loop cheap; it is required to agree with the scalar
route and is tested against it.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, log_ndtr

from . import esn, priors
from .errors import ParameterDomainError
from .smc import TargetModel

__all__ = [
    "chol_params_from_matrix",
    "matrix_from_chol_params",
    "chol_log_jacobian",
    "make_iid_esn_target",
    "make_gaussian_target",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _tril(d):
    return np.tril_indices(d)


def _diag_positions(d):
    rows, cols = _tril(d)
    return np.flatnonzero(rows == cols)


def matrix_from_chol_params(u, d):
    """Lower-Cholesky parameters (log-diagonal) to the SPD matrix."""
    lmat = np.zeros((d, d))
    lmat[_tril(d)] = u
    idx = np.diag_indices(d)
    lmat[idx] = np.exp(lmat[idx])
    return lmat @ lmat.T


def chol_params_from_matrix(m):
    lmat = np.linalg.cholesky(m)
    d = m.shape[0]
    u = lmat[_tril(d)].copy()
    u[_diag_positions(d)] = np.log(np.diag(lmat))
    return u


def chol_log_jacobian(u, d):
    """log |d vech(Sigma) / d u| for the log-Cholesky map:
    d log 2 + sum_i (d - i + 2) log L_ii (1-based diagonal index i)."""
    logdiag = np.asarray(u)[_diag_positions(d)]
    weights = d - np.arange(1, d + 1) + 2
    return d * math.log(2.0) + float(weights @ logdiag)


class _Packing:
    """Flat layout [location block, scale tril block, extra blocks...]."""

    def __init__(self, d, extra):
        self.d = d
        self.n_tril = d * (d + 1) // 2
        self.extra = extra  # number of trailing passthrough entries
        self.dim = d + self.n_tril + extra
        self._s = slice(d, d + self.n_tril)

    def to_constrained(self, v):
        v = np.asarray(v, dtype=float)
        out = v.copy()
        sigma = matrix_from_chol_params(v[self._s], self.d)
        out[self._s] = sigma[_tril(self.d)]
        return out

    def to_unconstrained(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = theta.copy()
        sigma = np.zeros((self.d, self.d))
        sigma[_tril(self.d)] = theta[self._s]
        sigma = sigma + sigma.T - np.diag(np.diag(sigma))
        out[self._s] = chol_params_from_matrix(sigma)
        return out

    def log_jacobian(self, v):
        return chol_log_jacobian(np.asarray(v)[self._s], self.d)

    def unpack_matrix(self, theta):
        sigma = np.zeros((self.d, self.d))
        sigma[_tril(self.d)] = np.asarray(theta)[self._s]
        return sigma + sigma.T - np.diag(np.diag(sigma))


def _scale_names(prefix, d):
    rows, cols = _tril(d)
    return [f"{prefix}{i + 1}{j + 1}" for i, j in zip(rows, cols)]


def _iw1_logpdf_vec(s2, scale, df):
    return (
        0.5 * df * math.log(scale)
        - 0.5 * df * math.log(2.0)
        - gammaln(0.5 * df)
        - (0.5 * df + 1.0) * np.log(s2)
        - 0.5 * scale / s2
    )


def _norm_logpdf_vec(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def make_iid_esn_target(data, hyper, parametrization: str = "p1") -> TargetModel:
    """Posterior target for IID extended skew-normal data under either
    parametrisation, with its §-default prior block attached by the caller."""
    z = np.asarray(data, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    n, d = z.shape
    pack = _Packing(d, extra=d + 1)

    if parametrization == "p1":
        if not isinstance(hyper, priors.HyperParamsP1):
            raise TypeError("p1 target needs HyperParamsP1")

        def unpack(theta):
            return esn.EsnParamsP1(
                theta[:d], pack.unpack_matrix(theta), theta[-d - 1 : -1], theta[-1]
            )

        def log_post(theta):
            try:
                params = unpack(theta)
                return esn.loglik(params, z) + priors.log_prior_p1(params, hyper)
            except (ParameterDomainError, np.linalg.LinAlgError, FloatingPointError):
                return -math.inf

        if d == 1:
            names = ["xi", "sigma2", "alpha", "lambda"]
        else:
            names = (
                [f"xi{i + 1}" for i in range(d)]
                + _scale_names("sigma", d)
                + [f"alpha{i + 1}" for i in range(d)]
                + ["lambda"]
            )
        batch = _batch_esn_p1_1d(z, hyper) if d == 1 else None
    elif parametrization == "p2":
        if not isinstance(hyper, priors.HyperParamsP2):
            raise TypeError("p2 target needs HyperParamsP2")

        def unpack(theta):
            return esn.EsnParamsP2(
                theta[:d], pack.unpack_matrix(theta), theta[-d - 1 : -1], theta[-1]
            )

        def log_post(theta):
            try:
                params = unpack(theta)
                return esn.loglik(params, z) + priors.log_prior_p2(params, hyper)
            except (ParameterDomainError, np.linalg.LinAlgError, FloatingPointError):
                return -math.inf

        if d == 1:
            names = ["xi", "omega2", "d", "c"]
        else:
            names = (
                [f"xi{i + 1}" for i in range(d)]
                + _scale_names("omega", d)
                + [f"d{i + 1}" for i in range(d)]
                + ["c"]
            )
        batch = _batch_esn_p2_1d(z, hyper) if d == 1 else None
    else:
        raise ValueError(f"unknown parametrization {parametrization!r}")

    mean = z.mean(axis=0)
    var = np.cov(z.T, ddof=0) if d > 1 else np.array([[z.var()]])
    skew_sign = float(np.sign(np.mean((z[:, 0] - mean[0]) ** 3)) or 1.0)
    if parametrization == "p1":
        start_theta = np.concatenate(
            [mean, np.atleast_2d(var)[_tril(d)], np.full(d, 0.5 * skew_sign), [0.0]]
        )
    else:
        half = np.atleast_2d(var) / 2.0
        start_theta = np.concatenate(
            [mean, half[_tril(d)], np.full(d, skew_sign * math.sqrt(half[0, 0])), [0.0]]
        )

    return TargetModel(
        dim=pack.dim,
        log_posterior_unnorm=log_post,
        to_constrained=pack.to_constrained,
        to_unconstrained=pack.to_unconstrained,
        log_jacobian=pack.log_jacobian,
        log_target_batch=batch,
        param_names=names,
        default_start=pack.to_unconstrained(start_theta),
    )


def _batch_esn_p1_1d(z, hyper):
    zz = z.ravel()
    n = zz.shape[0]
    sz = zz.sum()
    szz = float(zz @ zz)
    v0 = float(hyper.V[0, 0])
    xi0 = float(hyper.xi0[0])
    mu_a = float(hyper.mu_alpha[0])

    def batch(vmat):
        xi, u, al, lam = vmat.T
        s2 = np.exp(2.0 * u)
        c0sq = 1.0 + al * al * s2
        ss = szz - 2.0 * xi * sz + n * xi * xi
        ll = -0.5 * n * (_LOG_2PI + 2.0 * u) - 0.5 * ss / s2
        arg = lam[:, None] + al[:, None] * (zz[None, :] - xi[:, None])
        ll += log_ndtr(arg).sum(axis=1) - n * log_ndtr(lam / np.sqrt(c0sq))
        lp = _iw1_logpdf_vec(s2, v0, hyper.nu)
        lp += _norm_logpdf_vec(xi, xi0, s2 / hyper.kappa)
        lp += _norm_logpdf_vec(al, mu_a, hyper.sigma2_alpha)
        lp += _norm_logpdf_vec(lam, 0.0, c0sq)
        return ll + lp + math.log(2.0) + 2.0 * u

    return batch


def _batch_esn_p2_1d(z, hyper):
    zz = z.ravel()
    n = zz.shape[0]
    v0 = float(hyper.Vt[0, 0])
    xi0 = float(hyper.xi0t[0])
    mu_d = float(hyper.mu_d[0])

    def batch(vmat):
        xi, u, dd, c = vmat.T
        w2 = np.exp(2.0 * u)
        s2 = w2 + dd * dd
        c0 = np.sqrt(s2 / w2)
        resid = zz[None, :] - xi[:, None]
        ll = (
            -0.5 * n * (_LOG_2PI + np.log(s2))
            - 0.5 * np.sum(resid * resid, axis=1) / s2
        )
        arg = c0[:, None] * (c[:, None] + dd[:, None] * resid / s2[:, None])
        ll += log_ndtr(arg).sum(axis=1) - n * log_ndtr(c)
        lp = _iw1_logpdf_vec(w2, v0, hyper.nut)
        lp += _norm_logpdf_vec(xi, xi0, w2 / hyper.kappat)
        lp += _norm_logpdf_vec(dd, mu_d, w2 / hyper.kappa_d)
        lp += _norm_logpdf_vec(c, 0.0, 1.0)
        return ll + lp + math.log(2.0) + 2.0 * u

    return batch


def make_gaussian_target(data, hyper) -> TargetModel:
    """Posterior target for IID Gaussian data under the conjugate
    normal-inverse-Wishart prior.  The evidence of this model has a
    closed form, which makes it the calibration oracle for the sampler."""
    if not isinstance(hyper, priors.HyperParamsP1):
        raise TypeError("gaussian target needs HyperParamsP1")
    z = np.asarray(data, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    n, d = z.shape
    pack = _Packing(d, extra=0)

    def log_post(theta):
        try:
            xi = theta[:d]
            sigma = pack.unpack_matrix(theta)
            chol = np.linalg.cholesky(sigma)
            resid = z - xi
            w = np.linalg.solve(chol, resid.T)
            ll = -0.5 * n * (d * _LOG_2PI) - n * np.sum(np.log(np.diag(chol)))
            ll -= 0.5 * float(np.sum(w * w))
            return ll + priors.niw_logpdf(xi, sigma, hyper.xi0, hyper.kappa, hyper.nu, hyper.V)
        except (np.linalg.LinAlgError, ParameterDomainError, FloatingPointError):
            return -math.inf

    batch = None
    if d == 1:
        zz = z.ravel()
        sz = zz.sum()
        szz = float(zz @ zz)
        v0 = float(hyper.V[0, 0])
        xi0 = float(hyper.xi0[0])

        def batch(vmat):
            xi, u = vmat.T
            s2 = np.exp(2.0 * u)
            ss = szz - 2.0 * xi * sz + n * xi * xi
            ll = -0.5 * n * (_LOG_2PI + 2.0 * u) - 0.5 * ss / s2
            lp = _iw1_logpdf_vec(s2, v0, hyper.nu)
            lp += _norm_logpdf_vec(xi, xi0, s2 / hyper.kappa)
            return ll + lp + math.log(2.0) + 2.0 * u

    names = (
        ["xi", "sigma2"]
        if d == 1
        else [f"xi{i + 1}" for i in range(d)] + _scale_names("sigma", d)
    )
    mean = z.mean(axis=0)
    var = np.cov(z.T, ddof=0) if d > 1 else np.array([[max(z.var(), 1e-8)]])
    start_theta = np.concatenate([mean, np.atleast_2d(var)[_tril(d)]])
    return TargetModel(
        dim=pack.dim,
        log_posterior_unnorm=log_post,
        to_constrained=pack.to_constrained,
        to_unconstrained=pack.to_unconstrained,
        log_jacobian=pack.log_jacobian,
        log_target_batch=batch,
        param_names=names,
        default_start=pack.to_unconstrained(start_theta),
    )
