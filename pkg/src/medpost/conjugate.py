"""Normal linear model with a Normal-Inverse-Gamma prior under a powered
subset likelihood.

The subset likelihood is raised to an integer power R (with the normalizing
constant adjusted), which compensates the reduced subset sample size so each
subset posterior concentrates like a full-data posterior. Everything here is
conjugate: full conditionals, the exact joint posterior, and the marginal
likelihood are available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import gammaln

from .criteria import ModelSpec
from .errors import ConfigError, DataError, NumericError
from .seeding import derive_seed

SIGMA2_FLOOR = 1e-12            # keeps the MLE log-likelihood finite on perfect fits
S_CHOLESKY_MAX = 2000           # marginal likelihood switches to the D-dim route above this


@dataclass(frozen=True)
class NigPrior:
    """Gamma(a, b) prior on the noise precision, N(beta0, sigma2*sigma0) on
    the coefficients."""

    a: float
    b: float
    beta0: np.ndarray
    sigma0: np.ndarray

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ConfigError("prior shape a and rate b must be positive")
        beta0 = np.atleast_1d(np.asarray(self.beta0, dtype=float))
        sigma0 = np.asarray(self.sigma0, dtype=float)
        if sigma0.ndim != 2 or sigma0.shape[0] != sigma0.shape[1]:
            raise ConfigError("sigma0 must be a square matrix")
        d = sigma0.shape[0]
        if beta0.shape != (d,):
            raise ConfigError("beta0 length must match sigma0 dimension")
        if d > 0:
            if not np.allclose(sigma0, sigma0.T, atol=1e-10, rtol=0.0):
                raise ConfigError("sigma0 must be symmetric (tolerance 1e-10)")
            try:
                np.linalg.cholesky(sigma0)
            except np.linalg.LinAlgError:
                raise ConfigError("sigma0 must be positive definite") from None
        beta0 = beta0.copy()
        sigma0 = sigma0.copy()
        beta0.setflags(write=False)
        sigma0.setflags(write=False)
        object.__setattr__(self, "beta0", beta0)
        object.__setattr__(self, "sigma0", sigma0)

    @property
    def d(self) -> int:
        return self.beta0.shape[0]

    @cached_property
    def precision(self) -> np.ndarray:
        """inv(sigma0), computed once via Cholesky."""
        if self.d == 0:
            return np.zeros((0, 0))
        return cho_solve(cho_factor(self.sigma0, lower=True), np.eye(self.d))

    @cached_property
    def logdet_sigma0(self) -> float:
        if self.d == 0:
            return 0.0
        chol = np.linalg.cholesky(self.sigma0)
        return float(2.0 * np.log(np.diag(chol)).sum())

    def restrict(self, columns: np.ndarray) -> "NigPrior":
        """Prior marginal over a subset of coefficients."""
        cols = np.asarray(columns, dtype=int)
        return NigPrior(a=self.a, b=self.b, beta0=self.beta0[cols],
                        sigma0=self.sigma0[np.ix_(cols, cols)])


def default_prior(d: int, scale: float = 100.0, a: float = 1.0,
                  b: float = 1.0) -> NigPrior:
    """Zero-mean prior with covariance scale * identity."""
    if scale <= 0:
        raise ConfigError("prior scale must be positive")
    return NigPrior(a=a, b=b, beta0=np.zeros(d), sigma0=scale * np.eye(d))


@dataclass(frozen=True)
class PowerLikelihoodConfig:
    """Likelihood exponent R; the data-count terms become R * s."""

    r_power: int = 1

    def __post_init__(self):
        if int(self.r_power) != self.r_power or self.r_power < 1:
            raise ConfigError("r_power must be an integer >= 1")
        object.__setattr__(self, "r_power", int(self.r_power))


@dataclass(frozen=True)
class McmcConfig:
    """Chain length controls shared by all samplers."""

    iterations: int = 1000
    burn_in: int = 500
    seed: int = 0
    thin: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")

    @property
    def n_kept(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))


@dataclass(frozen=True)
class NigPosteriorDraws:
    """Retained Gibbs draws for one (subset, model) pair."""

    beta_draws: np.ndarray
    sigma2_draws: np.ndarray
    model: ModelSpec
    seed: int = 0

    def __post_init__(self):
        beta = np.asarray(self.beta_draws, dtype=float)
        sig = np.asarray(self.sigma2_draws, dtype=float)
        if beta.ndim != 2 or sig.ndim != 1 or beta.shape[0] != sig.shape[0]:
            raise DataError("draws must be (T, d) betas with T sigma2 values")
        if (sig <= 0).any():
            raise NumericError("sigma2 draws must be positive")
        if beta.shape[1] != self.model.size:
            raise DataError("beta draw width must equal the model's column count")
        object.__setattr__(self, "beta_draws", beta)
        object.__setattr__(self, "sigma2_draws", sig)


@dataclass(frozen=True)
class NigPosterior:
    """Exact powered posterior: beta | sigma2 ~ N(mu, sigma2 * sigma_n),
    1/sigma2 ~ Gamma(a_n, b_n). Serves as the closed-form oracle for the
    Gibbs sampler and as a direct sampler."""

    mu: np.ndarray
    sigma_n: np.ndarray
    a_n: float
    b_n: float

    def beta_mean(self) -> np.ndarray:
        return self.mu

    def sigma2_mean(self) -> float:
        if self.a_n <= 1:
            raise NumericError("sigma2 posterior mean undefined for a_n <= 1")
        return self.b_n / (self.a_n - 1.0)

    def beta_cov(self) -> np.ndarray:
        return self.sigma2_mean() * self.sigma_n

    def sample(self, n_draws: int, rng: np.random.Generator
               ) -> tuple[np.ndarray, np.ndarray]:
        """Independent exact draws of (beta, sigma2)."""
        d = self.mu.shape[0]
        sigma2 = self.b_n / rng.gamma(self.a_n, 1.0, size=n_draws)
        z = rng.standard_normal((n_draws, d))
        chol = np.linalg.cholesky(self.sigma_n) if d else np.zeros((0, 0))
        betas = self.mu + np.sqrt(sigma2)[:, None] * (z @ chol.T)
        return betas, sigma2


def _model_design(x_sub, y_sub, model: ModelSpec, prior: NigPrior):
    x = np.asarray(x_sub, dtype=float)
    y = np.asarray(y_sub, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DataError("x must be (s, D) and y length s")
    if model.d != x.shape[1]:
        raise DataError("model mask length must equal design width")
    cols = model.columns()
    if prior.d != cols.shape[0]:
        raise DataError(
            f"prior is {prior.d}-dimensional but model includes {cols.shape[0]} columns")
    return x[:, cols], y


def _posterior_core(xm: np.ndarray, y: np.ndarray, prior: NigPrior,
                    cfg: PowerLikelihoodConfig):
    """Precision, its Cholesky, and the conditional mean of beta."""
    r = cfg.r_power
    q0 = prior.precision
    prec = q0 + r * (xm.T @ xm)
    try:
        chol_prec = np.linalg.cholesky(prec) if prec.shape[0] else np.zeros((0, 0))
    except np.linalg.LinAlgError:
        raise NumericError("posterior precision matrix is not positive definite") from None
    rhs = q0 @ prior.beta0 + r * (xm.T @ y)
    if prec.shape[0]:
        mu = cho_solve((chol_prec, True), rhs)
    else:
        mu = np.zeros(0)
    return prec, chol_prec, mu


def gibbs_beta_conditional(x_sub, y_sub, sigma2: float, prior: NigPrior,
                           cfg: PowerLikelihoodConfig
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of beta | sigma2, data under the powered likelihood.

    Returns (mu, sigma2 * inv(inv(sigma0) + R x'x)).
    """
    if sigma2 <= 0:
        raise DataError("sigma2 must be positive")
    xm = np.asarray(x_sub, dtype=float)
    y = np.asarray(y_sub, dtype=float)
    if xm.shape[1] != prior.d:
        raise DataError("design width must match prior dimension")
    if xm.shape[0] != y.shape[0]:
        raise DataError("x and y row counts differ")
    prec, chol_prec, mu = _posterior_core(xm, y, prior, cfg)
    cov_unit = cho_solve((chol_prec, True), np.eye(prior.d)) if prior.d else np.zeros((0, 0))
    return mu, sigma2 * cov_unit


def gibbs_sigma2_conditional(x_sub, y_sub, beta: np.ndarray, prior: NigPrior,
                             cfg: PowerLikelihoodConfig) -> tuple[float, float]:
    """Gamma(shape, rate) parameters of 1/sigma2 given beta and the data.

    The data-count term uses the effective sample size R*s.
    """
    xm = np.asarray(x_sub, dtype=float)
    y = np.asarray(y_sub, dtype=float)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if xm.shape[1] != prior.d or beta.shape != (prior.d,):
        raise DataError("beta and design width must match prior dimension")
    if xm.shape[0] != y.shape[0]:
        raise DataError("x and y row counts differ")
    r = cfg.r_power
    s = y.shape[0]
    resid = y - xm @ beta
    dev = beta - prior.beta0
    a_post = prior.a + (r * s + prior.d) / 2.0
    b_post = prior.b + 0.5 * r * float(resid @ resid) \
        + 0.5 * float(dev @ (prior.precision @ dev))
    return a_post, b_post


def power_posterior(x_sub, y_sub, model: ModelSpec, prior: NigPrior,
                    cfg: PowerLikelihoodConfig) -> NigPosterior:
    """Closed-form joint posterior under the powered likelihood."""
    xm, y = _model_design(x_sub, y_sub, model, prior)
    r = cfg.r_power
    s = y.shape[0]
    prec, chol_prec, mu = _posterior_core(xm, y, prior, cfg)
    q0 = prior.precision
    a_n = prior.a + r * s / 2.0
    b_n = prior.b + 0.5 * (
        r * float(y @ y)
        + float(prior.beta0 @ (q0 @ prior.beta0))
        - float(mu @ (prec @ mu))
    )
    # exact-arithmetic b_n > b; guard against catastrophic cancellation on
    # noiseless data
    b_n = max(b_n, SIGMA2_FLOOR * prior.b)
    if prior.d:
        sigma_n = cho_solve((chol_prec, True), np.eye(prior.d))
    else:
        sigma_n = np.zeros((0, 0))
    return NigPosterior(mu=mu, sigma_n=sigma_n, a_n=a_n, b_n=b_n)


def sample_posterior(x_sub, y_sub, model: ModelSpec, prior: NigPrior,
                     cfg: PowerLikelihoodConfig, mcmc: McmcConfig
                     ) -> NigPosteriorDraws:
    """Alternating Gibbs draws of beta | sigma2 and 1/sigma2 | beta.

    The first ``burn_in`` sweeps are discarded and every ``thin``-th state is
    retained. Deterministic given ``mcmc.seed``.
    """
    xm, y = _model_design(x_sub, y_sub, model, prior)
    d = xm.shape[1]
    s = y.shape[0]
    r = cfg.r_power
    prec, chol_prec, mu = _posterior_core(xm, y, prior, cfg)
    if d:
        sigma_beta = cho_solve((chol_prec, True), np.eye(d))
        chol_sigma = np.linalg.cholesky(sigma_beta)
    else:
        chol_sigma = np.zeros((0, 0))
    q0 = prior.precision
    a_post = prior.a + (r * s + d) / 2.0

    rng = np.random.default_rng(mcmc.seed)
    z_all = rng.standard_normal((mcmc.iterations, d))
    g_all = rng.gamma(a_post, 1.0, size=mcmc.iterations)

    kept_beta = np.empty((mcmc.n_kept, d))
    kept_sigma2 = np.empty(mcmc.n_kept)
    sigma2 = prior.b / prior.a
    k = 0
    for t in range(mcmc.iterations):
        beta = mu + np.sqrt(sigma2) * (chol_sigma @ z_all[t])
        resid = y - xm @ beta
        dev = beta - prior.beta0
        b_post = prior.b + 0.5 * r * float(resid @ resid) \
            + 0.5 * float(dev @ (q0 @ dev))
        sigma2 = b_post / g_all[t]
        if t >= mcmc.burn_in and (t - mcmc.burn_in) % mcmc.thin == 0:
            kept_beta[k] = beta
            kept_sigma2[k] = sigma2
            k += 1
    return NigPosteriorDraws(beta_draws=kept_beta, sigma2_draws=kept_sigma2,
                             model=model, seed=mcmc.seed)


def _logml_terms(r: int, s: int, a: float, b: float):
    n_eff = r * s
    return (0.5 * n_eff * np.log(r / (2.0 * np.pi))
            + a * np.log(b) - gammaln(a) + gammaln(a + 0.5 * n_eff),
            a + 0.5 * n_eff)


def _logml_s_path(xm, y, prior, cfg) -> float:
    """Marginal likelihood through the s x s covariance of the data."""
    r = cfg.r_power
    s = y.shape[0]
    sigma_x = np.eye(s) + r * (xm @ prior.sigma0 @ xm.T)
    try:
        chol = np.linalg.cholesky(sigma_x)
    except np.linalg.LinAlgError:
        raise NumericError("data covariance not positive definite "
                           "(corrupted inputs?)") from None
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    e = y - xm @ prior.beta0
    w = solve_triangular(chol, e, lower=True)
    quad = float(w @ w)
    const, expo = _logml_terms(r, s, prior.a, prior.b)
    return float(const - 0.5 * logdet - expo * np.log(prior.b + 0.5 * r * quad))


def _logml_d_path(xm, y, prior, cfg) -> float:
    """Same value through the d x d posterior precision (for large s)."""
    r = cfg.r_power
    s = y.shape[0]
    d = xm.shape[1]
    e = y - xm @ prior.beta0
    ete = float(e @ e)
    if d:
        prec = prior.precision + r * (xm.T @ xm)
        try:
            chol = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError:
            raise NumericError("posterior precision not positive definite") from None
        logdet = prior.logdet_sigma0 + 2.0 * np.log(np.diag(chol)).sum()
        xe = xm.T @ e
        w = solve_triangular(chol, xe, lower=True)
        quad = ete - r * float(w @ w)
    else:
        logdet = 0.0
        quad = ete
    quad = max(quad, 0.0)
    const, expo = _logml_terms(r, s, prior.a, prior.b)
    return float(const - 0.5 * logdet - expo * np.log(prior.b + 0.5 * r * quad))


def log_marginal_likelihood(x_sub, y_sub, model: ModelSpec, prior: NigPrior,
                            cfg: PowerLikelihoodConfig) -> float:
    """Log of the powered-likelihood marginal density of the subset response.

    Uses the s x s Cholesky route for s <= 2000 and the d-dimensional
    identity beyond; the two agree to floating precision and are tested
    against each other.
    """
    xm, y = _model_design(x_sub, y_sub, model, prior)
    if y.shape[0] < 1:
        raise DataError("need at least one observation")
    if y.shape[0] <= S_CHOLESKY_MAX:
        return _logml_s_path(xm, y, prior, cfg)
    return _logml_d_path(xm, y, prior, cfg)


def mle_fit(x_sub, y_sub, model: ModelSpec
            ) -> tuple[np.ndarray, float, float]:
    """OLS coefficients, MLE variance (RSS/s, floored), and the Gaussian
    log-likelihood at the maximum."""
    x = np.asarray(x_sub, dtype=float)
    y = np.asarray(y_sub, dtype=float)
    if model.d != x.shape[1]:
        raise DataError("model mask length must equal design width")
    cols = model.columns()
    xm = x[:, cols]
    s = y.shape[0]
    d = xm.shape[1]
    if d > s:
        raise DataError(f"model has {d} predictors but only {s} rows")
    if d:
        _, rdiag, pivots = sla.qr(xm, mode="economic", pivoting=True)
        diag = np.abs(np.diag(rdiag))
        tol = max(s, d) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
        rank = int((diag > tol).sum())
        if rank < d:
            dependent = sorted(int(cols[p]) for p in pivots[rank:])
            raise DataError(
                f"rank-deficient design: column(s) {dependent} are linearly "
                "dependent on the others")
        beta_hat, *_ = np.linalg.lstsq(xm, y, rcond=None)
        resid = y - xm @ beta_hat
    else:
        beta_hat = np.zeros(0)
        resid = y
    rss = float(resid @ resid)
    sigma2_hat = max(rss / s, SIGMA2_FLOOR)
    loglik = -0.5 * s * np.log(2.0 * np.pi * sigma2_hat) - 0.5 * rss / sigma2_hat
    return beta_hat, sigma2_hat, float(loglik)


def predictive_draws(draws: NigPosteriorDraws, x_new,
                     seed: Optional[int] = None) -> np.ndarray:
    """One response draw per retained state and prediction point.

    y_t = x_new @ beta_t + eps_t with eps_t ~ N(0, sigma2_t I); the noise
    stream is derived from the draws' seed lineage.
    """
    x_new = np.asarray(x_new, dtype=float)
    if x_new.ndim != 2:
        raise DataError("x_new must be a 2-d matrix")
    if x_new.shape[1] != draws.beta_draws.shape[1]:
        raise DataError(
            f"x_new has {x_new.shape[1]} columns, model includes "
            f"{draws.beta_draws.shape[1]}")
    t = draws.sigma2_draws.shape[0]
    noise_seed = seed if seed is not None else derive_seed(
        draws.seed, purpose_tag="predictive")
    rng = np.random.default_rng(noise_seed)
    eps = rng.standard_normal((t, x_new.shape[0]))
    return draws.beta_draws @ x_new.T + np.sqrt(draws.sigma2_draws)[:, None] * eps
