"""Adaptive tempered sequential Monte Carlo sampler.

The sampler moves a particle population from a normalised initial
distribution eta1 to an unnormalised target pi along the geometric
bridge pi_rho proportional to eta1^(1-rho) * pi^rho.  Temperatures are
self-tuned: each stage takes the largest step that keeps the effective
sample size of the incremental weights above a threshold (located by
bisection), then resamples systematically and rejuvenates every
particle with a few Gaussian random-walk Metropolis-Hastings steps
whose proposal covariance is the weighted particle covariance scaled by
an adaptive factor.  The product of the incremental-weight averages
estimates the target's normalising constant, which is the model
evidence when pi is likelihood times a proper prior.

Everything runs in unconstrained coordinates; the target model supplies
the reparametrisation and its log-Jacobian, which enters both the
bridge density and the evidence bookkeeping.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import DegenerateSystemError, InitializationError, NumericalError

__all__ = [
    "GaussianInit",
    "TargetModel",
    "ParticleSystem",
    "SmcConfig",
    "StageRecord",
    "SmcResult",
    "ess",
    "reweight",
    "next_temperature",
    "systematic_resample",
    "rwmh_propagate",
    "evidence_increment",
    "run",
    "laplace_init",
    "pilot_mh_init",
]


def _identity(v):
    return v


def _zero(v):
    return 0.0


@dataclass
class GaussianInit:
    """Normalised Gaussian initial distribution in unconstrained coordinates."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        self._chol = np.linalg.cholesky(self.cov)
        d = self.mean.shape[0]
        self._log_norm = -0.5 * d * math.log(2.0 * math.pi) - np.sum(
            np.log(np.diag(self._chol))
        )

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def logpdf(self, v) -> float:
        return float(self.logpdf_batch(np.atleast_2d(v))[0])

    def logpdf_batch(self, vmat) -> np.ndarray:
        u = np.atleast_2d(vmat) - self.mean
        w = np.linalg.solve(self._chol, u.T)
        return self._log_norm - 0.5 * np.sum(w * w, axis=0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._chol.T


@dataclass
class TargetModel:
    """Posterior target seen by the sampler.

    ``log_posterior_unnorm`` evaluates the unnormalised log posterior on a
    flat constrained parameter vector; transforms map to and from the
    unconstrained coordinates the sampler works in, with ``log_jacobian``
    the log-determinant of d(constrained)/d(unconstrained).  An optional
    ``log_target_batch`` evaluates whole particle matrices at once
    (Jacobian included) and must agree with the scalar route.
    """

    dim: int
    log_posterior_unnorm: Callable[[np.ndarray], float]
    to_constrained: Callable[[np.ndarray], np.ndarray] = _identity
    to_unconstrained: Callable[[np.ndarray], np.ndarray] = _identity
    log_jacobian: Callable[[np.ndarray], float] = _zero
    log_target_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eta1: Optional[GaussianInit] = None
    param_names: Optional[list[str]] = None
    default_start: Optional[np.ndarray] = None

    def log_target(self, v) -> float:
        v = np.asarray(v, dtype=float)
        theta = self.to_constrained(v)
        val = self.log_posterior_unnorm(theta) + self.log_jacobian(v)
        return val if math.isfinite(val) else -math.inf

    def log_target_many(self, vmat) -> np.ndarray:
        vmat = np.atleast_2d(vmat)
        if self.log_target_batch is not None:
            with np.errstate(all="ignore"):
                out = np.asarray(self.log_target_batch(vmat), dtype=float)
        else:
            out = np.array([self.log_target(v) for v in vmat])
        out[~np.isfinite(out)] = -np.inf
        return out

    def eta1_logpdf(self, v) -> float:
        return self._eta1().logpdf(v)

    def eta1_sample(self, rng: np.random.Generator) -> np.ndarray:
        return self._eta1().sample(rng, 1)[0]

    def _eta1(self) -> GaussianInit:
        if self.eta1 is None:
            raise InitializationError("target has no initial distribution attached")
        return self.eta1


@dataclass
class StageRecord:
    rho: float
    ess: float
    acceptance_rate: float
    scale: float
    log_evidence_increment: float
    wall_time_ms: float

    def as_dict(self) -> dict:
        return {
            "rho": self.rho,
            "ess": self.ess,
            "acceptance_rate": self.acceptance_rate,
            "scale": self.scale,
            "log_evidence_increment": self.log_evidence_increment,
            "wall_time_ms": self.wall_time_ms,
        }


@dataclass
class ParticleSystem:
    """Weighted particle population in unconstrained coordinates."""

    particles: np.ndarray
    log_weights: np.ndarray
    rho: float = 0.0
    log_evidence_acc: float = 0.0
    history: list[StageRecord] = field(default_factory=list)
    log_ratio: Optional[np.ndarray] = None  # log pi - log eta1 per particle
    proposal_cov: Optional[np.ndarray] = None
    scale: float = 1.0
    last_acceptance: float = 0.0

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    def normalized_weights(self) -> np.ndarray:
        lw = self.log_weights
        m = np.max(lw)
        if not np.isfinite(m):
            raise DegenerateSystemError("all particle weights are zero")
        w = np.exp(lw - m)
        return w / w.sum()


@dataclass
class SmcConfig:
    n_particles: int = 10_000
    ess_threshold_fraction: float = 0.5
    mh_steps: int = 3
    bisect_epsilon: float = 1e-4
    scale_init: Optional[float] = None  # 2.38^2 / dim when unset
    acceptance_band: tuple[float, float] = (0.2, 0.6)
    seed: int = 0
    max_stages: int = 20_000

    def __post_init__(self):
        if not 0.0 < self.ess_threshold_fraction < 1.0:
            raise ValueError("ess_threshold_fraction must be in (0, 1)")
        if self.n_particles < 2 or self.mh_steps < 1:
            raise ValueError("need at least 2 particles and 1 MH step")
        if self.bisect_epsilon <= 0.0:
            raise ValueError("bisect_epsilon must be positive")
        lo, hi = self.acceptance_band
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError("acceptance_band must satisfy 0 <= lo < hi <= 1")


@dataclass
class SmcResult:
    system: ParticleSystem
    log_evidence: float
    diagnostics: list[StageRecord]

    @property
    def n_stages(self) -> int:
        return len(self.diagnostics)

    def constrained_particles(self, target: TargetModel) -> np.ndarray:
        return np.array([target.to_constrained(v) for v in self.system.particles])


def ess(log_weights) -> float:
    """Effective sample size 1 / sum(W^2), computed in log space."""
    lw = np.asarray(log_weights, dtype=float)
    m = np.max(lw)
    if not np.isfinite(m):
        raise DegenerateSystemError("all particle weights are zero")
    w = np.exp(lw - m)
    w /= w.sum()
    return float(1.0 / np.sum(w * w))


def _ensure_log_ratio(system: ParticleSystem, target: TargetModel) -> np.ndarray:
    if system.log_ratio is None:
        eta = target._eta1()
        system.log_ratio = target.log_target_many(system.particles) - eta.logpdf_batch(
            system.particles
        )
    return system.log_ratio


def reweight(system: ParticleSystem, target: TargetModel, rho_new: float) -> np.ndarray:
    """Normalised log-weights for moving the system from its temperature to
    rho_new: increment (rho_new - rho) * (log pi - log eta1) per particle."""
    if not system.rho <= rho_new <= 1.0:
        raise ValueError("rho_new must lie in [system.rho, 1]")
    lr = _ensure_log_ratio(system, target)
    lw = system.log_weights + (rho_new - system.rho) * lr
    return lw - logsumexp(lw)


def next_temperature(system: ParticleSystem, target: TargetModel, config: SmcConfig) -> float:
    """Largest admissible next temperature.

    Returns 1 outright when the full step keeps the effective sample size
    at or above the threshold; otherwise bisects ESS(rho) = beta on
    [rho, 1] down to a bracket narrower than bisect_epsilon and returns
    its midpoint (never less than rho + bisect_epsilon, so the ladder
    always advances).
    """
    if system.rho >= 1.0:
        raise ValueError("temperature ladder already complete")
    beta = config.ess_threshold_fraction * system.n
    lr = _ensure_log_ratio(system, target)

    def ess_at(rho):
        return ess(system.log_weights + (rho - system.rho) * lr)

    if ess_at(1.0) >= beta:
        return 1.0
    lo, hi = system.rho, 1.0
    while hi - lo >= config.bisect_epsilon:
        mid = 0.5 * (lo + hi)
        if ess_at(mid) >= beta:
            lo = mid
        else:
            hi = mid
    rho_star = 0.5 * (lo + hi)
    return min(1.0, max(rho_star, system.rho + config.bisect_epsilon))


def systematic_resample(log_weights, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling: one uniform, stratified inverse-CDF lookups.

    Copy counts are floor(N W) or ceil(N W) for every particle.
    """
    lw = np.asarray(log_weights, dtype=float)
    n = lw.shape[0]
    w = np.exp(lw - logsumexp(lw))
    positions = (np.arange(n) + rng.uniform()) / n
    cum = np.cumsum(w)
    cum[-1] = 1.0  # guard against round-off
    return np.searchsorted(cum, positions, side="left")


def evidence_increment(
    system: ParticleSystem, target: TargetModel, rho_prev: float, rho_new: float
) -> float:
    """log of sum_m W_m(rho_prev) * [pi/eta1]^(rho_new - rho_prev) at the
    current particles, evaluated stably in log space."""
    lr = _ensure_log_ratio(system, target)
    lw = system.log_weights - logsumexp(system.log_weights)
    return float(logsumexp(lw + (rho_new - rho_prev) * lr))


def _proposal_chol(cov: np.ndarray, scale: float) -> np.ndarray:
    try:
        return np.linalg.cholesky(scale * cov)
    except np.linalg.LinAlgError:
        diag = np.clip(np.diag(cov), 0.0, None) + 1e-8
        return np.linalg.cholesky(scale * np.diag(diag))


def rwmh_propagate(
    system: ParticleSystem,
    target: TargetModel,
    rho: float,
    config: SmcConfig,
    rng: np.random.Generator,
) -> ParticleSystem:
    """Advance every particle with mh_steps Gaussian random-walk MH steps
    targeting the bridge density at temperature rho.

    The proposal covariance is ``system.proposal_cov`` (the engine stores
    the weighted pre-resampling particle covariance there) scaled by
    ``system.scale``; a singular covariance falls back to its diagonal
    plus a 1e-8 ridge.  Acceptance uses the bridge density in
    unconstrained coordinates, Jacobian included.
    """
    eta = target._eta1()
    x = system.particles
    cov = system.proposal_cov
    if cov is None:
        w = system.normalized_weights()
        cov = _weighted_cov(x, w)
    chol = _proposal_chol(cov, system.scale)

    cur_eta = eta.logpdf_batch(x)
    cur_pi = target.log_target_many(x)
    cur = (1.0 - rho) * cur_eta + rho * cur_pi
    n, dim = x.shape
    accepted = 0
    for _ in range(config.mh_steps):
        prop = x + rng.standard_normal((n, dim)) @ chol.T
        prop_eta = eta.logpdf_batch(prop)
        prop_pi = target.log_target_many(prop)
        cand = (1.0 - rho) * prop_eta + rho * prop_pi
        logu = np.log(rng.uniform(size=n))
        acc = logu < cand - cur
        x = np.where(acc[:, None], prop, x)
        cur = np.where(acc, cand, cur)
        cur_eta = np.where(acc, prop_eta, cur_eta)
        cur_pi = np.where(acc, prop_pi, cur_pi)
        accepted += int(acc.sum())
    system.particles = x
    system.log_ratio = cur_pi - cur_eta
    system.last_acceptance = accepted / (config.mh_steps * n)
    return system


def _weighted_cov(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    mean = w @ x
    centred = x - mean
    return (centred * w[:, None]).T @ centred


def run(target: TargetModel, config: SmcConfig, rng=None) -> SmcResult:
    """Execute the full tempering loop and return particles, log-evidence
    and per-stage diagnostics.

    All randomness derives from config.seed through per-stage child
    streams, so a run is reproducible bit for bit; passing ``rng``
    replaces the root seed sequence (reproducibility then rests on the
    caller).
    """
    eta = target._eta1()
    ss = np.random.SeedSequence(config.seed) if rng is None else None
    def stage_stream():
        if ss is not None:
            return np.random.default_rng(ss.spawn(1)[0])
        return rng

    n = config.n_particles
    init_rng = stage_stream()
    particles = eta.sample(init_rng, n)
    system = ParticleSystem(
        particles=particles,
        log_weights=np.full(n, -math.log(n)),
        rho=0.0,
        scale=config.scale_init if config.scale_init is not None else 2.38**2 / target.dim,
    )
    _ensure_log_ratio(system, target)

    while system.rho < 1.0:
        if len(system.history) >= config.max_stages:
            raise NumericalError(
                f"tempering failed to reach rho = 1 in {config.max_stages} stages; "
                f"stalled at rho = {system.rho:.6f}"
            )
        t0 = time.perf_counter()
        srng = stage_stream()
        rho_new = next_temperature(system, target, config)
        increment = evidence_increment(system, target, system.rho, rho_new)
        system.log_evidence_acc += increment
        lw_new = reweight(system, target, rho_new)
        stage_ess = ess(lw_new)

        # proposal covariance from the weighted (pre-resampling) population
        cov = _weighted_cov(system.particles, np.exp(lw_new))
        idx = systematic_resample(lw_new, srng)
        system.particles = system.particles[idx]
        system.log_ratio = system.log_ratio[idx]
        system.log_weights = np.full(n, -math.log(n))
        system.proposal_cov = cov
        system.rho = rho_new

        rwmh_propagate(system, target, rho_new, config, srng)
        _ensure_log_ratio(system, target)
        acc = system.last_acceptance
        system.history.append(
            StageRecord(
                rho=rho_new,
                ess=stage_ess,
                acceptance_rate=acc,
                scale=system.scale,
                log_evidence_increment=increment,
                wall_time_ms=(time.perf_counter() - t0) * 1e3,
            )
        )
        lo, hi = config.acceptance_band
        if acc > hi:
            system.scale *= 2.0
        elif acc < lo:
            system.scale *= 0.5

    return SmcResult(
        system=system,
        log_evidence=system.log_evidence_acc,
        diagnostics=system.history,
    )


def _fd_hessian(f, x, step=1e-4):
    d = x.shape[0]
    h = step * np.maximum(1.0, np.abs(x))
    hess = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = h[i]
            ej[j] = h[j]
            val = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
            hess[i, j] = hess[j, i] = val
    return hess


def _spd_floor(mat: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Symmetrise and floor the eigenvalues of a nearly-SPD matrix."""
    mat = 0.5 * (mat + mat.T)
    eigval, eigvec = np.linalg.eigh(mat)
    return (eigvec * np.maximum(eigval, floor)) @ eigvec.T


def _cov_from_precision(prec: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Invert a (near-)precision matrix with eigenvalues floored at ``floor``."""
    prec = 0.5 * (prec + prec.T)
    eigval, eigvec = np.linalg.eigh(prec)
    eigval = np.maximum(eigval, floor)
    return (eigvec / eigval) @ eigvec.T


def laplace_init(
    target: TargetModel, start, max_iter: int = 500, inflate: float = 1.0
) -> GaussianInit:
    """Gaussian initial distribution from a Laplace approximation:
    quasi-Newton ascent to the posterior mode (numerical gradients), then
    the inverse of the negated finite-difference Hessian, eigenvalue-floored
    to stay positive definite.

    ``inflate`` scales the covariance; values above 1 overdisperse the
    initial distribution, which costs a few extra tempering stages but
    protects the sampler when the posterior has heavy ridges the local
    curvature cannot see.
    """
    start = np.asarray(start, dtype=float)
    if not math.isfinite(target.log_target(start)):
        raise InitializationError("log posterior not finite at the starting point")

    def neg(v):
        val = target.log_target(v)
        return -val if math.isfinite(val) else 1e30

    res = minimize(neg, start, method="BFGS", options={"maxiter": max_iter, "gtol": 1e-7})
    # BFGS on slightly noisy numerical gradients often stops with a
    # "precision loss" flag at a perfectly good mode: judge by the
    # gradient scaled to the objective instead of the success flag.
    tol = 1e-3 * (1.0 + abs(res.fun))
    if not (res.success or np.max(np.abs(res.jac)) < tol):
        polish = minimize(
            neg, res.x, method="Nelder-Mead",
            options={"maxiter": 400 * target.dim, "xatol": 1e-8, "fatol": 1e-10},
        )
        if polish.fun <= res.fun:
            res = polish
        if not (res.success or neg(res.x) < 1e29):
            raise InitializationError(f"posterior maximisation failed: {res.message}")
    mode = res.x
    hess = _fd_hessian(target.log_target, mode)
    cov = _cov_from_precision(-hess)
    return GaussianInit(mode, inflate * cov)


def pilot_mh_init(
    target: TargetModel,
    iterations: int,
    rng: np.random.Generator,
    start=None,
    initial_step: float = 0.1,
    inflate: float = 1.0,
) -> GaussianInit:
    """Gaussian initial distribution from a pilot random-walk MH run.

    The first half of the chain is burn-in (with multiplicative step-size
    adaptation towards the acceptance band); the second half supplies the
    mean and covariance, the latter scaled by ``inflate``.  Raises when
    nothing is ever accepted.
    """
    if iterations < 1000:
        raise ValueError("pilot run needs at least 1000 iterations")
    if start is None:
        start = target.default_start
    if start is None:
        start = np.zeros(target.dim)
    x = np.asarray(start, dtype=float).copy()
    cur = target.log_target(x)
    if not math.isfinite(cur):
        raise InitializationError("log posterior not finite at the pilot start")

    step = initial_step
    burn = iterations // 2
    chain = np.empty((iterations, target.dim))
    accepted = 0
    window_acc = 0
    for it in range(iterations):
        prop = x + step * rng.standard_normal(target.dim)
        cand = target.log_target(prop)
        if math.log(rng.uniform()) < cand - cur:
            x, cur = prop, cand
            accepted += 1
            window_acc += 1
        chain[it] = x
        if it < burn and (it + 1) % 100 == 0:
            rate = window_acc / 100.0
            if rate < 0.2:
                step *= 0.7
            elif rate > 0.45:
                step *= 1.4
            window_acc = 0
    if accepted == 0:
        raise InitializationError("pilot chain never accepted a proposal")
    tail = chain[burn:]
    mean = tail.mean(axis=0)
    cov = _spd_floor(np.atleast_2d(np.cov(tail.T, ddof=1)))
    return GaussianInit(mean, inflate * cov)
