"""Rescaled spike-and-slab Gibbs sampler under the powered subset likelihood.

The response is rescaled by sqrt(n_effective / sigma_hat^2) so coefficient
magnitudes are comparable across sample sizes. Each coefficient's prior
variance is J_d * tau_d^2 where J_d is a two-point indicator taking the
spike value nu0 (near zero) or the slab value 1; the posterior frequency of
J_d = 1 is the inclusion frequency used for variable selection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import expit

from .conjugate import McmcConfig, PowerLikelihoodConfig
from .dataset import Dataset
from .errors import ConfigError, DataError, NumericError

SCALE_BASES = ("per_subset", "global")


@dataclass(frozen=True)
class SpikeSlabPrior:
    """Hyperparameters: spike scale nu0, Gamma(a, b) on the noise precision,
    Gamma(a_tau, b_tau) on each local precision.

    The rescaling gives every coefficient unit information, so null draws
    have roughly unit scale; the slab prior must sit well above that scale
    (tau^2 around b_tau/a_tau = 400) or nulls get stuck in the slab."""

    nu0: float = 0.005
    a: float = 0.01
    b: float = 0.01
    a_tau: float = 2.0
    b_tau: float = 800.0

    def __post_init__(self):
        if not 0 < self.nu0 < 1:
            raise ConfigError("nu0 must lie in (0, 1)")
        if min(self.a, self.b, self.a_tau, self.b_tau) <= 0:
            raise ConfigError("all Gamma hyperparameters must be positive")


@dataclass(frozen=True)
class SpikeSlabState:
    """One Gibbs state."""

    beta: np.ndarray
    sigma2_inv: float
    j: np.ndarray
    tau2: np.ndarray
    w: float

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        j = np.asarray(self.j, dtype=float)
        tau2 = np.asarray(self.tau2, dtype=float)
        if beta.shape != j.shape or beta.shape != tau2.shape:
            raise DataError("beta, j and tau2 must have equal length")
        if self.sigma2_inv <= 0:
            raise NumericError("sigma2_inv must be positive")
        if (tau2 <= 0).any():
            raise NumericError("tau2 entries must be positive")
        if not 0.0 <= self.w <= 1.0:
            raise NumericError("w must lie in [0, 1]")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "tau2", tau2)

    def validate_support(self, nu0: float):
        ok = (self.j == nu0) | (self.j == 1.0)
        if not ok.all():
            raise NumericError("j entries must be exactly nu0 or 1")


@dataclass(frozen=True)
class RescaledResponse:
    """Response scaled to y * sqrt(n_basis / sigma_hat2)."""

    y_prime: np.ndarray
    sigma_hat2: float
    scale_basis: str
    n_basis: int

    def __post_init__(self):
        if self.scale_basis not in SCALE_BASES:
            raise ConfigError(f"scale_basis must be one of {SCALE_BASES}")
        if self.sigma_hat2 <= 0:
            raise NumericError("sigma_hat2 must be positive")
        y = np.asarray(self.y_prime, dtype=float)
        object.__setattr__(self, "y_prime", y)


def rescale_response(ds_subset: Dataset, cfg: PowerLikelihoodConfig,
                     basis: str = "per_subset",
                     global_sigma_hat2: Optional[float] = None
                     ) -> RescaledResponse:
    """Scale the subset response by sqrt(R*s / sigma_hat2).

    sigma_hat2 is the unbiased full-model OLS variance estimate computed on
    the subset itself (per_subset) or a supplied full-data value (global).
    """
    if basis not in SCALE_BASES:
        raise ConfigError(f"scale_basis must be one of {SCALE_BASES}")
    s, d = ds_subset.x.shape
    n_basis = cfg.r_power * s
    if basis == "global":
        if global_sigma_hat2 is None:
            raise ConfigError("global basis requires global_sigma_hat2")
        sigma_hat2 = float(global_sigma_hat2)
    else:
        if s <= d:
            raise DataError(
                f"cannot estimate the full-model variance with s={s} <= D={d}; "
                "supply a global value")
        beta_hat, *_ = np.linalg.lstsq(ds_subset.x, ds_subset.y, rcond=None)
        resid = ds_subset.y - ds_subset.x @ beta_hat
        sigma_hat2 = float(resid @ resid) / (s - d)
    if sigma_hat2 <= 0:
        raise NumericError("sigma_hat2 must be positive")
    y_prime = np.sqrt(n_basis / sigma_hat2) * ds_subset.y
    return RescaledResponse(y_prime=y_prime, sigma_hat2=sigma_hat2,
                            scale_basis=basis, n_basis=n_basis)


def spike_probabilities(beta: np.ndarray, tau2: np.ndarray, w: float,
                        nu0: float) -> np.ndarray:
    """P(J_d = nu0 | -) for each coordinate, computed in log space.

    Spike weight (1-w) nu0^{-1/2} exp(-beta^2 / (2 nu0 tau^2)) against slab
    weight w exp(-beta^2 / (2 tau^2)); stable for beta^2/tau^2 up to 1e6 and
    beyond.
    """
    beta = np.asarray(beta, dtype=float)
    tau2 = np.asarray(tau2, dtype=float)
    with np.errstate(divide="ignore"):
        log_spike = np.log1p(-w) - 0.5 * np.log(nu0) - beta ** 2 / (2.0 * nu0 * tau2)
        log_slab = np.log(w) - beta ** 2 / (2.0 * tau2)
    return expit(log_spike - log_slab)


def _beta_update_core(gram: np.ndarray, xty: np.ndarray, s: int,
                      state: SpikeSlabState, cfg: PowerLikelihoodConfig
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean of beta and the Cholesky factor of its precision.

    Precision is diag(1/(J tau^2)) + (R / n_eff) sigma2_inv X'X with
    n_eff = R*s, matching the rescaled-likelihood model.
    """
    n_eff = cfg.r_power * s
    scale = cfg.r_power / n_eff * state.sigma2_inv
    prec = scale * gram + np.diag(1.0 / (state.j * state.tau2))
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        raise NumericError(
            "spike-and-slab coefficient precision is not positive definite "
            "(exploding chain state)") from None
    mu = cho_solve((chol, True), scale * xty)
    return mu, chol


def beta_conditional(x_sub, y_prime, state: SpikeSlabState,
                     cfg: PowerLikelihoodConfig
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the coefficient full conditional."""
    x_sub = np.asarray(x_sub, dtype=float)
    y_prime = np.asarray(y_prime, dtype=float)
    mu, chol = _beta_update_core(x_sub.T @ x_sub, x_sub.T @ y_prime,
                                 y_prime.shape[0], state, cfg)
    cov = cho_solve((chol, True), np.eye(state.beta.shape[0]))
    return mu, cov


def ss_gibbs_step(state: SpikeSlabState, x_sub, y_prime, prior: SpikeSlabPrior,
                  cfg: PowerLikelihoodConfig, rng: np.random.Generator,
                  gram: Optional[np.ndarray] = None,
                  xty: Optional[np.ndarray] = None) -> SpikeSlabState:
    """One full sweep: beta, noise precision, each J_d, each tau_d, then w."""
    x_sub = np.asarray(x_sub, dtype=float)
    y_prime = np.asarray(y_prime, dtype=float)
    state.validate_support(prior.nu0)
    d = state.beta.shape[0]
    if x_sub.shape != (y_prime.shape[0], d):
        raise DataError("design shape must be (s, D) matching the state")
    s = y_prime.shape[0]
    n_eff = cfg.r_power * s
    if gram is None:
        gram = x_sub.T @ x_sub
    if xty is None:
        xty = x_sub.T @ y_prime

    mu, chol_prec = _beta_update_core(gram, xty, s, state, cfg)
    z = rng.standard_normal(d)
    beta = mu + solve_triangular(chol_prec.T, z, lower=False)

    resid = y_prime - x_sub @ beta
    a_post = prior.a + n_eff / 2.0
    b_post = prior.b + cfg.r_power / (2.0 * n_eff) * float(resid @ resid)
    sigma2_inv = rng.gamma(a_post, 1.0 / b_post)

    p_spike = spike_probabilities(beta, state.tau2, state.w, prior.nu0)
    j = np.where(rng.random(d) < p_spike, prior.nu0, 1.0)

    tau2_inv = rng.gamma(prior.a_tau + 0.5, 1.0 / (prior.b_tau + beta ** 2 / (2.0 * j)))
    tau2 = 1.0 / tau2_inv

    n_slab = int((j == 1.0).sum())
    w = rng.beta(1.0 + n_slab, 1.0 + (d - n_slab))

    return SpikeSlabState(beta=beta, sigma2_inv=float(sigma2_inv), j=j,
                          tau2=tau2, w=float(w))


def ss_run_chain(x_sub, y_sub, prior: SpikeSlabPrior,
                 cfg: PowerLikelihoodConfig, mcmc: McmcConfig,
                 basis: str = "per_subset",
                 global_sigma_hat2: Optional[float] = None
                 ) -> tuple[list[SpikeSlabState], np.ndarray]:
    """Rescale, initialize, and run the sampler; returns retained states and
    per-predictor inclusion frequencies (fraction of retained states in the
    slab). Deterministic given mcmc.seed."""
    x_sub = np.asarray(x_sub, dtype=float)
    y_sub = np.asarray(y_sub, dtype=float)
    ds = Dataset(x=x_sub, y=y_sub)
    scaled = rescale_response(ds, cfg, basis=basis,
                              global_sigma_hat2=global_sigma_hat2)
    y_prime = scaled.y_prime
    d = x_sub.shape[1]
    gram = x_sub.T @ x_sub
    xty = x_sub.T @ y_prime

    # start in the slab with a ridge solution so real signals are not
    # trapped in the spike
    ridge = gram + 1e-6 * np.eye(d)
    beta0 = np.linalg.solve(ridge, xty)
    state = SpikeSlabState(
        beta=beta0,
        sigma2_inv=1.0 / scaled.sigma_hat2,
        j=np.ones(d),
        tau2=np.ones(d),
        w=0.5,
    )

    rng = np.random.default_rng(mcmc.seed)
    kept: list[SpikeSlabState] = []
    for t in range(mcmc.iterations):
        state = ss_gibbs_step(state, x_sub, y_prime, prior, cfg, rng,
                              gram=gram, xty=xty)
        if t >= mcmc.burn_in and (t - mcmc.burn_in) % mcmc.thin == 0:
            kept.append(state)
    slab = np.vstack([s.j == 1.0 for s in kept])
    inclusion = slab.mean(axis=0)
    return kept, inclusion


def selected_model_mask(inclusion_freq: Sequence[float]) -> np.ndarray:
    """Median-rule readout: keep predictors with inclusion frequency >= 1/2."""
    return np.asarray(inclusion_freq, dtype=float) >= 0.5
