"""Divide-and-conquer pipeline: partition, per-subset inference in parallel,
geometric-median aggregation, prediction.

Each subset raises its likelihood to the power R (the subset count) so its
posterior concentrates like a full-data posterior, evaluates every candidate
model (marginal likelihood, information criteria, predictive draws), and the
subset results are aggregated with geometric medians. All randomness flows
through per-(subset, model, purpose) streams derived from one master seed,
so results are independent of scheduling and worker count.
"""

from __future__ import annotations

import concurrent.futures
import multiprocessing
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from . import spikeslab
from .conjugate import (SIGMA2_FLOOR, McmcConfig, NigPrior,
                        PowerLikelihoodConfig, default_prior)
from .criteria import (CriterionVector, ModelSpec, ModelUniverse, aic_r, bic_r,
                       enumerate_universe, inclusion_probs,
                       median_probability_model, posterior_model_probs)
from .dataset import Dataset
from .errors import ConfigError, DataError, NumericError
from .geomedian import (DEFAULT_QUANTILE_LEVELS, AggregateResult,
                        WeiszfeldConfig, combine, _pick)
from .seeding import derive_seed
from .spikeslab import SpikeSlabPrior
from . import dataset as dataset_mod

__all__ = [
    "UniverseSpec", "PipelineConfig", "SubsetSummary", "ParamDigest",
    "PipelineDetail", "run_pipeline", "run_pipeline_multi",
    "run_pipeline_detailed", "run_single_machine", "run_subset", "derive_seed",
]


@dataclass(frozen=True)
class UniverseSpec:
    """How to enumerate the candidate models for a D-column design."""

    mode: str = "all_subsets"
    size: Optional[int] = None
    model_masks: Optional[tuple[tuple[bool, ...], ...]] = None
    always_include: tuple[int, ...] = ()

    def build(self, d: int) -> ModelUniverse:
        return enumerate_universe(
            d, mode=self.mode, size=self.size, model_masks=self.model_masks,
            always_include=self.always_include)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one pipeline run depends on besides the data."""

    method: str = "bma"
    strategy: str = "model_combination"
    r: int = 1
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    prior: Optional[NigPrior] = None
    ss_prior: SpikeSlabPrior = field(default_factory=SpikeSlabPrior)
    universe: UniverseSpec = field(default_factory=UniverseSpec)
    master_seed: int = 0
    parallelism: int = 1
    r_power: Optional[int] = None  # None: use r; 1 disables the power adjustment
    ss_scale_basis: str = "per_subset"
    quantile_levels: tuple[float, ...] = tuple(DEFAULT_QUANTILE_LEVELS)
    weiszfeld: WeiszfeldConfig = field(default_factory=WeiszfeldConfig)

    def __post_init__(self):
        if self.r < 1:
            raise ConfigError("subset count r must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.method not in ("bma", "aic", "bic", "median_prob", "spike_slab"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.strategy not in ("model_combination", "estimate_combination"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.r_power is not None and self.r_power < 1:
            raise ConfigError("r_power override must be >= 1")

    @property
    def effective_power(self) -> int:
        return self.r if self.r_power is None else self.r_power

    def levels(self) -> np.ndarray:
        return np.asarray(self.quantile_levels, dtype=float)


@dataclass(frozen=True)
class ParamDigest:
    """Posterior mean and covariance of one model's coefficients."""

    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class SubsetSummary:
    """Everything one subset contributes to the aggregation step."""

    subset_id: int
    criterion: Optional[CriterionVector]
    per_model_pred_mean: np.ndarray
    per_model_quantiles: np.ndarray
    local_best: ModelSpec
    param_draw_digest: tuple[ParamDigest, ...]
    timing: float
    inclusion_freq: Optional[np.ndarray] = None


@dataclass(frozen=True)
class _SubsetTable:
    """Method-independent per-subset results; summaries are cheap views."""

    subset_id: int
    log_marginals: np.ndarray
    post_probs: np.ndarray
    aic: np.ndarray
    bic: np.ndarray
    per_model_pred_mean: np.ndarray
    per_model_quantiles: np.ndarray
    param_draw_digest: tuple[ParamDigest, ...]
    timing: float
    inclusion_freq: Optional[np.ndarray] = None

    def to_summary(self, method: str, universe: ModelUniverse) -> SubsetSummary:
        if method in ("bma", "median_prob"):
            crit = CriterionVector(kind="posterior_prob", values=self.post_probs,
                                   subset_id=self.subset_id)
            if method == "bma":
                best = universe.models[_pick(self.post_probs, universe, False)]
            else:
                p = inclusion_probs(crit, universe)
                best = median_probability_model(p)
        elif method in ("aic", "bic"):
            vals = self.aic if method == "aic" else self.bic
            crit = CriterionVector(kind=method, values=vals,
                                   subset_id=self.subset_id)
            best = universe.models[_pick(vals, universe, True)]
        elif method == "spike_slab":
            if self.inclusion_freq is None:
                raise ConfigError(
                    "subset was computed without the spike-and-slab chain; "
                    "request the method when running the pipeline")
            crit = None
            best = ModelSpec(tuple(bool(m) for m in
                                   spikeslab.selected_model_mask(self.inclusion_freq)))
        else:
            raise ConfigError(f"unknown method {method!r}")
        return SubsetSummary(
            subset_id=self.subset_id,
            criterion=crit,
            per_model_pred_mean=self.per_model_pred_mean,
            per_model_quantiles=self.per_model_quantiles,
            local_best=best,
            param_draw_digest=self.param_draw_digest,
            timing=self.timing,
            inclusion_freq=self.inclusion_freq,
        )


def _compute_subset_table(
    x: np.ndarray,
    y: np.ndarray,
    x_test: np.ndarray,
    universe: ModelUniverse,
    prior: NigPrior,
    r_power: int,
    mcmc: McmcConfig,
    master_seed: int,
    subset_id: int,
    levels: np.ndarray,
    want_spike_slab: bool = False,
    ss_prior: Optional[SpikeSlabPrior] = None,
    ss_basis: str = "per_subset",
    ss_global_sigma_hat2: Optional[float] = None,
) -> _SubsetTable:
    """All per-subset inference for every candidate model.

    Criterion values come from closed forms; predictive summaries come from
    one Gibbs chain per model, all models advanced together. Each model owns
    the RNG streams derived from (master_seed, subset_id, model_index).
    """
    t_start = time.perf_counter()
    s, d_full = x.shape
    k = universe.k
    n_test = x_test.shape[0]
    r = r_power
    n_eff = r * s

    gram = x.T @ x
    xty = x.T @ y
    yty = float(y @ y)

    cols_list = [m.columns() for m in universe.models]
    d_sizes = np.array([c.shape[0] for c in cols_list])
    d_max = int(d_sizes.max()) if k else 0

    log_marginals = np.empty(k)
    aic_vals = np.empty(k)
    bic_vals = np.empty(k)
    mu_pad = np.zeros((k, d_max))
    chol_draw_pad = np.zeros((k, d_max, d_max))  # lower factors of beta covariance
    q0_pad = np.zeros((k, d_max, d_max))
    b0_pad = np.zeros((k, d_max))
    a_post = np.empty(k)
    pad_cols = np.zeros((k, d_max), dtype=int)
    pad_mask = np.zeros((k, d_max), dtype=bool)

    logml_const = (0.5 * n_eff * np.log(r / (2.0 * np.pi)) + prior.a * np.log(prior.b)
                   - gammaln(prior.a) + gammaln(prior.a + 0.5 * n_eff))
    logml_expo = prior.a + 0.5 * n_eff

    for i, cols in enumerate(cols_list):
        d = cols.shape[0]
        sub_prior = prior.restrict(cols)
        q0 = sub_prior.precision
        gram_m = gram[np.ix_(cols, cols)]
        xty_m = xty[cols]
        prec = q0 + r * gram_m
        try:
            chol_prec = np.linalg.cholesky(prec) if d else np.zeros((0, 0))
        except np.linalg.LinAlgError:
            raise NumericError(
                f"model {universe.models[i].label()}: posterior precision "
                "not positive definite") from None
        rhs = q0 @ sub_prior.beta0 + r * xty_m
        if d:
            w = solve_triangular(chol_prec, rhs, lower=True)
            mu = solve_triangular(chol_prec.T, w, lower=False)
            inv_prec = solve_triangular(
                chol_prec.T, solve_triangular(chol_prec, np.eye(d), lower=True),
                lower=False)
            chol_draw = np.linalg.cholesky(inv_prec)
        else:
            mu = np.zeros(0)
            chol_draw = np.zeros((0, 0))

        # marginal likelihood via the d-dimensional identity
        b0 = sub_prior.beta0
        ete = yty - 2.0 * float(b0 @ xty_m) + float(b0 @ (gram_m @ b0))
        xe = xty_m - gram_m @ b0
        if d:
            we = solve_triangular(chol_prec, xe, lower=True)
            quad = max(ete - r * float(we @ we), 0.0)
            logdet = sub_prior.logdet_sigma0 + 2.0 * np.log(np.diag(chol_prec)).sum()
        else:
            quad = max(ete, 0.0)
            logdet = 0.0
        log_marginals[i] = (logml_const - 0.5 * logdet
                            - logml_expo * np.log(prior.b + 0.5 * r * quad))

        # maximum likelihood fit from the same Gram blocks
        if d:
            try:
                chol_g = np.linalg.cholesky(gram_m)
            except np.linalg.LinAlgError:
                chol_g = None
            diag_g = np.diag(chol_g) if chol_g is not None else None
            if chol_g is None or diag_g.min() <= 1e-8 * diag_g.max():
                raise DataError(
                    f"model {universe.models[i].label()}: rank-deficient design "
                    f"on subset {subset_id}")
            beta_hat = solve_triangular(
                chol_g.T, solve_triangular(chol_g, xty_m, lower=True), lower=False)
            rss = max(yty - float(beta_hat @ xty_m), 0.0)
        else:
            rss = yty
        sigma2_hat = max(rss / s, SIGMA2_FLOOR)
        loglik = -0.5 * s * np.log(2.0 * np.pi * sigma2_hat) - 0.5 * rss / sigma2_hat
        aic_vals[i] = aic_r(loglik, d, r)
        bic_vals[i] = bic_r(loglik, d, n_eff, r)

        mu_pad[i, :d] = mu
        chol_draw_pad[i, :d, :d] = chol_draw
        q0_pad[i, :d, :d] = q0
        b0_pad[i, :d] = b0
        a_post[i] = prior.a + (r * s + d) / 2.0
        pad_cols[i, :d] = cols
        pad_mask[i, :d] = True

    # pre-draw every model's variates from its own stream
    iters = mcmc.iterations
    z_all = np.zeros((k, iters, d_max))
    g_all = np.empty((k, iters))
    for i in range(k):
        rng = np.random.default_rng(
            derive_seed(master_seed, subset_id, i, "gibbs"))
        d = d_sizes[i]
        z_all[i, :, :d] = rng.standard_normal((iters, d))
        g_all[i] = rng.gamma(a_post[i], 1.0, size=iters)

    kept_idx = range(mcmc.burn_in, iters, mcmc.thin)
    n_kept = len(kept_idx)
    beta_kept = np.empty((k, n_kept, d_max))
    sigma2_kept = np.empty((k, n_kept))

    # whole-chain precomputation: the draw directions w_t = L z_t and the
    # prior quadratic form, which is a polynomial in the current sigma
    # because beta_t = mu + sigma_{t-1} w_t
    w_dirs = np.einsum("kde,kte->ktd", chol_draw_pad, z_all)
    mu_dev = mu_pad - b0_pad
    q0_mu = np.einsum("kde,ke->kd", q0_pad, mu_dev)
    quad_c0 = np.einsum("kd,kd->k", mu_dev, q0_mu)
    quad_c1 = np.einsum("ktd,kd->kt", w_dirs, q0_mu)
    quad_c2 = np.einsum("ktd,kde,kte->kt", w_dirs, q0_pad, w_dirs)

    flat_models = np.repeat(np.arange(k), d_max)[pad_mask.ravel()]
    flat_cols = pad_cols.ravel()[pad_mask.ravel()]
    beta_full = np.zeros((d_full, k))
    xb = np.empty((s, k))
    sigma2 = np.full(k, prior.b / prior.a)
    keep_at = {t: j for j, t in enumerate(kept_idx)}
    for t in range(iters):
        sig = np.sqrt(sigma2)
        beta_pad = mu_pad + sig[:, None] * w_dirs[:, t, :]
        beta_full[flat_cols, flat_models] = beta_pad[pad_mask]
        np.matmul(x, beta_full, out=xb)
        np.subtract(y[:, None], xb, out=xb)
        rss_t = np.einsum("sk,sk->k", xb, xb)
        quad_t = quad_c0 + 2.0 * sig * quad_c1[:, t] + sigma2 * quad_c2[:, t]
        b_post = prior.b + 0.5 * r * rss_t + 0.5 * quad_t
        sigma2 = b_post / g_all[:, t]
        j = keep_at.get(t)
        if j is not None:
            beta_kept[:, j, :] = beta_pad
            sigma2_kept[:, j] = sigma2

    # predictive draws: y = x_test beta_t + sigma_t * eps, eps from the
    # model's predictive stream
    eps = np.empty((k, n_kept, n_test))
    for i in range(k):
        rng = np.random.default_rng(
            derive_seed(master_seed, subset_id, i, "predictive"))
        eps[i] = rng.standard_normal((n_kept, n_test))

    # gather x_test columns per model (zero-padded)
    xt_pad = np.zeros((k, n_test, d_max))
    for i in range(k):
        d = d_sizes[i]
        xt_pad[i, :, :d] = x_test[:, cols_list[i]]
    draws = np.einsum("ktd,knd->ktn", beta_kept, xt_pad)
    draws += np.sqrt(sigma2_kept)[:, :, None] * eps
    per_model_pred_mean = draws.mean(axis=1) if n_kept else np.zeros((k, n_test))
    if n_test:
        per_model_quantiles = np.moveaxis(
            np.quantile(draws, levels, axis=1), 0, 1)
    else:
        per_model_quantiles = np.zeros((k, levels.shape[0], 0))

    digests = []
    for i in range(k):
        d = d_sizes[i]
        bk = beta_kept[i, :, :d]
        mean = bk.mean(axis=0) if d else np.zeros(0)
        if d and n_kept > 1:
            cov = np.cov(bk, rowvar=False).reshape(d, d)
        else:
            cov = np.zeros((d, d))
        digests.append(ParamDigest(mean=mean, cov=cov))

    inclusion = None
    if want_spike_slab:
        ss_mcmc = McmcConfig(iterations=mcmc.iterations, burn_in=mcmc.burn_in,
                             seed=derive_seed(master_seed, subset_id, 0,
                                              "spikeslab"),
                             thin=mcmc.thin)
        _, inclusion = spikeslab.ss_run_chain(
            x, y, ss_prior or SpikeSlabPrior(),
            PowerLikelihoodConfig(r_power=r), ss_mcmc,
            basis=ss_basis, global_sigma_hat2=ss_global_sigma_hat2)

    return _SubsetTable(
        subset_id=subset_id,
        log_marginals=log_marginals,
        post_probs=posterior_model_probs(log_marginals, universe,
                                         subset_id).values,
        aic=aic_vals,
        bic=bic_vals,
        per_model_pred_mean=per_model_pred_mean,
        per_model_quantiles=per_model_quantiles,
        param_draw_digest=tuple(digests),
        timing=time.perf_counter() - t_start,
        inclusion_freq=inclusion,
    )


def _table_task(args) -> _SubsetTable:
    return _compute_subset_table(**args)


def _effective_parallelism(requested: int) -> int:
    cap = os.environ.get("MEDPOST_THREADS")
    if cap:
        try:
            requested = min(requested, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"MEDPOST_THREADS must be an integer, got {cap!r}")
    return requested


def _validate_inputs(ds_train: Dataset, x_test, cfg: PipelineConfig):
    x_test = np.asarray(x_test, dtype=float)
    if x_test.ndim != 2 or x_test.shape[1] != ds_train.n_cols:
        raise DataError(
            f"x_test must be 2-d with {ds_train.n_cols} columns")
    if not np.isfinite(x_test).all():
        raise DataError("x_test contains non-finite entries")
    universe = cfg.universe.build(ds_train.n_cols)
    prior = cfg.prior if cfg.prior is not None else default_prior(ds_train.n_cols)
    if prior.d != ds_train.n_cols:
        raise ConfigError(
            f"prior dimension {prior.d} does not match design width "
            f"{ds_train.n_cols}")
    return x_test, universe, prior


def _global_ss_sigma_hat2(ds: Dataset) -> float:
    beta_hat, *_ = np.linalg.lstsq(ds.x, ds.y, rcond=None)
    resid = ds.y - ds.x @ beta_hat
    dof = ds.n_rows - ds.n_cols
    if dof <= 0:
        raise DataError("global variance basis needs N > D")
    return float(resid @ resid) / dof


@dataclass(frozen=True)
class PipelineDetail:
    """Aggregated results plus the per-subset summaries they came from."""

    results: dict[tuple[str, str], AggregateResult]
    summaries: dict[str, list[SubsetSummary]]
    universe: ModelUniverse


def run_pipeline_detailed(
    ds_train: Dataset,
    x_test,
    cfg: PipelineConfig,
    methods: Optional[Sequence[str]] = None,
    strategies: Optional[Sequence[str]] = None,
) -> PipelineDetail:
    """Run the divide-and-conquer pipeline once, reading out several
    method/strategy combinations from the shared per-subset tables."""
    methods = list(methods) if methods is not None else [cfg.method]
    strategies = list(strategies) if strategies is not None else [cfg.strategy]
    x_test, universe, prior = _validate_inputs(ds_train, x_test, cfg)
    want_ss = "spike_slab" in methods
    levels = cfg.levels()

    part = dataset_mod.partition(
        ds_train, cfg.r, seed=derive_seed(cfg.master_seed, 0, 0, "partition"))
    ss_global = None
    if want_ss and cfg.ss_scale_basis == "global":
        ss_global = _global_ss_sigma_hat2(ds_train)

    tasks = []
    for j in range(part.r):
        rows = part.rows_of(j)
        tasks.append(dict(
            x=ds_train.x[rows], y=ds_train.y[rows], x_test=x_test,
            universe=universe, prior=prior, r_power=cfg.effective_power,
            mcmc=cfg.mcmc, master_seed=cfg.master_seed, subset_id=j,
            levels=levels, want_spike_slab=want_ss, ss_prior=cfg.ss_prior,
            ss_basis=cfg.ss_scale_basis, ss_global_sigma_hat2=ss_global,
        ))

    workers = min(_effective_parallelism(cfg.parallelism), len(tasks))
    tables: list[Optional[_SubsetTable]] = [None] * len(tasks)
    if workers <= 1:
        for task in tasks:
            tables[task["subset_id"]] = _run_task_checked(task)
    else:
        ctx = multiprocessing.get_context("spawn")
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=workers, mp_context=ctx) as pool:
            futs = {pool.submit(_table_task, task): task["subset_id"]
                    for task in tasks}
            for fut in concurrent.futures.as_completed(futs):
                j = futs[fut]
                try:
                    tables[j] = fut.result()
                except Exception as exc:
                    raise type(exc)(f"subset {j} failed: {exc}") from exc

    results: dict[tuple[str, str], AggregateResult] = {}
    summaries_by_method: dict[str, list[SubsetSummary]] = {}
    for method in methods:
        summaries = [t.to_summary(method, universe) for t in tables]
        summaries_by_method[method] = summaries
        for strategy in strategies:
            results[(method, strategy)] = combine(
                strategy, summaries, method, universe, cfg.weiszfeld, levels)
    return PipelineDetail(results=results, summaries=summaries_by_method,
                          universe=universe)


def run_pipeline_multi(
    ds_train: Dataset,
    x_test,
    cfg: PipelineConfig,
    methods: Optional[Sequence[str]] = None,
    strategies: Optional[Sequence[str]] = None,
) -> dict[tuple[str, str], AggregateResult]:
    """Aggregated results for several method/strategy pairs from one run."""
    return run_pipeline_detailed(ds_train, x_test, cfg, methods,
                                 strategies).results


def _run_task_checked(task) -> _SubsetTable:
    try:
        return _table_task(task)
    except Exception as exc:
        raise type(exc)(f"subset {task['subset_id']} failed: {exc}") from exc


def run_pipeline(ds_train: Dataset, x_test, cfg: PipelineConfig) -> AggregateResult:
    """Partition, infer per subset (in parallel), aggregate, predict."""
    return run_pipeline_multi(ds_train, x_test, cfg)[(cfg.method, cfg.strategy)]


def run_subset(x_sub, y_sub, x_test, cfg: PipelineConfig,
               subset_id: int = 0) -> SubsetSummary:
    """Inference for a single subset: criterion vector for cfg.method plus
    per-model predictive summaries."""
    x_sub = np.asarray(x_sub, dtype=float)
    y_sub = np.asarray(y_sub, dtype=float)
    if x_sub.ndim != 2 or x_sub.shape[0] != y_sub.shape[0] or x_sub.shape[0] < 1:
        raise DataError("subset must be a non-empty (s, D) design with responses")
    ds = Dataset(x=x_sub, y=y_sub)
    x_test, universe, prior = _validate_inputs(ds, x_test, cfg)
    table = _compute_subset_table(
        x=ds.x, y=ds.y, x_test=x_test, universe=universe, prior=prior,
        r_power=cfg.effective_power, mcmc=cfg.mcmc,
        master_seed=cfg.master_seed, subset_id=subset_id, levels=cfg.levels(),
        want_spike_slab=cfg.method == "spike_slab", ss_prior=cfg.ss_prior,
        ss_basis=cfg.ss_scale_basis)
    return table.to_summary(cfg.method, universe)


def run_single_machine(ds_train: Dataset, x_test,
                       cfg: PipelineConfig) -> AggregateResult:
    """The undivided code path: one subset holding all rows, no power
    adjustment, identity aggregation. The r=1 pipeline reproduces this
    bit for bit."""
    x_test, universe, prior = _validate_inputs(ds_train, x_test, cfg)
    table = _compute_subset_table(
        x=ds_train.x, y=ds_train.y, x_test=x_test, universe=universe,
        prior=prior, r_power=1 if cfg.r_power is None else cfg.r_power,
        mcmc=cfg.mcmc, master_seed=cfg.master_seed, subset_id=0,
        levels=cfg.levels(), want_spike_slab=cfg.method == "spike_slab",
        ss_prior=cfg.ss_prior, ss_basis=cfg.ss_scale_basis,
        ss_global_sigma_hat2=(_global_ss_sigma_hat2(ds_train)
                              if cfg.method == "spike_slab"
                              and cfg.ss_scale_basis == "global" else None))
    summary = table.to_summary(cfg.method, universe)
    return combine(cfg.strategy, [summary], cfg.method, universe,
                   cfg.weiszfeld, cfg.levels())
