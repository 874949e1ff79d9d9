"""Per-subset model-selection criteria.

Posterior model probabilities, power-adjusted information criteria, the
median-probability model, posterior inclusion probabilities, and mixture
moments for model-averaged prediction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericError

CRITERION_KINDS = ("posterior_prob", "aic", "bic")

ALL_SUBSETS_CAP = 20  # 2**20 models is the enumeration limit


@dataclass(frozen=True)
class ModelSpec:
    """A candidate model: boolean inclusion mask over the D design columns."""

    included: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "included", tuple(bool(b) for b in self.included))

    @classmethod
    def from_columns(cls, columns: Iterable[int], d: int) -> "ModelSpec":
        mask = [False] * d
        for c in columns:
            mask[c] = True
        return cls(tuple(mask))

    @property
    def d(self) -> int:
        return len(self.included)

    @property
    def size(self) -> int:
        return sum(self.included)

    def columns(self) -> np.ndarray:
        """Indices of included design columns."""
        return np.flatnonzero(np.asarray(self.included, dtype=bool))

    def mask(self) -> np.ndarray:
        return np.asarray(self.included, dtype=bool)

    def label(self) -> str:
        return "{" + ",".join(str(c) for c in self.columns()) + "}"


@dataclass(frozen=True)
class ModelUniverse:
    """Ordered family of candidate models with prior probabilities."""

    models: tuple[ModelSpec, ...]
    prior_probs: np.ndarray

    def __post_init__(self):
        models = tuple(self.models)
        if not models:
            raise ConfigError("model universe must contain at least one model")
        d = models[0].d
        if any(m.d != d for m in models):
            raise ConfigError("all models must share the same mask length")
        if len({m.included for m in models}) != len(models):
            raise ConfigError("duplicate models in universe")
        p = np.asarray(self.prior_probs, dtype=float)
        if p.shape != (len(models),):
            raise ConfigError("prior_probs length must match model count")
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigError("prior_probs must be a simplex vector")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "prior_probs", p)

    @property
    def k(self) -> int:
        return len(self.models)

    @property
    def d(self) -> int:
        return self.models[0].d

    def index_of(self, model: ModelSpec) -> Optional[int]:
        for i, m in enumerate(self.models):
            if m.included == model.included:
                return i
        return None


@dataclass(frozen=True)
class CriterionVector:
    """One subset's criterion values, aligned with its model universe."""

    kind: str
    values: np.ndarray
    subset_id: int = 0

    def __post_init__(self):
        if self.kind not in CRITERION_KINDS:
            raise ConfigError(f"unknown criterion kind {self.kind!r}")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ConfigError("criterion values must be a vector")
        if not np.isfinite(v).all():
            raise NumericError(f"non-finite {self.kind} criterion values")
        if self.kind == "posterior_prob":
            if (v < -1e-12).any() or abs(v.sum() - 1.0) > 1e-9:
                raise NumericError("posterior_prob values must form a simplex")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class InclusionProbs:
    """Posterior probability that each predictor appears in the model."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or (p < -1e-12).any() or (p > 1 + 1e-12).any():
            raise NumericError("inclusion probabilities must lie in [0, 1]")
        p = np.clip(p, 0.0, 1.0)
        p.setflags(write=False)
        object.__setattr__(self, "p", p)


def enumerate_universe(
    d: int,
    mode: str = "all_subsets",
    size: Optional[int] = None,
    model_masks: Optional[Sequence[Sequence[bool]]] = None,
    always_include: Sequence[int] = (),
    prior_probs: Optional[Sequence[float]] = None,
) -> ModelUniverse:
    """Enumerate the candidate family over d design columns.

    Modes: "all_subsets" (every subset of the free columns, requires
    d <= 20), "fixed_size" (all subsets of exactly ``size`` free columns),
    "user_list" (explicit masks). Columns in ``always_include`` (e.g. the
    intercept) are present in every model and do not count toward ``size``.
    Priors default to uniform. Models are ordered by size, then
    lexicographically by included-column indices.
    """
    if d < 1:
        raise ConfigError("d must be >= 1")
    always = sorted(set(int(c) for c in always_include))
    if any(c < 0 or c >= d for c in always):
        raise ConfigError("always_include index out of range")
    free = [c for c in range(d) if c not in always]

    if mode == "all_subsets":
        if d > ALL_SUBSETS_CAP:
            raise ConfigError(
                f"all_subsets enumeration capped at d={ALL_SUBSETS_CAP}, got {d}")
        combos = []
        for m in range(len(free) + 1):
            combos.extend(itertools.combinations(free, m))
    elif mode == "fixed_size":
        if size is None or size < 0 or size > len(free):
            raise ConfigError(f"fixed_size needs 0 <= size <= {len(free)}")
        combos = list(itertools.combinations(free, size))
    elif mode == "user_list":
        if not model_masks:
            raise ConfigError("user_list mode needs a non-empty model list")
        models = []
        for mask in model_masks:
            mask = tuple(bool(b) for b in mask)
            if len(mask) != d:
                raise ConfigError("user mask length must equal d")
            if any(not mask[c] for c in always):
                raise ConfigError("user mask omits an always-included column")
            models.append(ModelSpec(mask))
        return _with_priors(models, prior_probs)
    else:
        raise ConfigError(f"unknown universe mode {mode!r}")

    models = [ModelSpec.from_columns(tuple(always) + combo, d) for combo in combos]
    return _with_priors(models, prior_probs)


def _with_priors(models, prior_probs) -> ModelUniverse:
    k = len(models)
    if prior_probs is None:
        p = np.full(k, 1.0 / k)
    else:
        p = np.asarray(prior_probs, dtype=float)
    return ModelUniverse(models=tuple(models), prior_probs=p)


def posterior_model_probs(log_marginals: np.ndarray,
                          universe: ModelUniverse,
                          subset_id: int = 0) -> CriterionVector:
    """Normalize prior x marginal-likelihood in log space into a simplex."""
    lm = np.asarray(log_marginals, dtype=float)
    if lm.shape != (universe.k,):
        raise DataError(f"expected {universe.k} log marginals, got {lm.shape}")
    if np.isnan(lm).any() or (lm == np.inf).any():
        raise NumericError("log marginals must not be NaN or +inf")
    with np.errstate(divide="ignore"):
        score = lm + np.log(universe.prior_probs)
    top = score.max()
    if not np.isfinite(top):
        raise NumericError("all models have zero posterior mass")
    w = np.exp(score - top)
    return CriterionVector(kind="posterior_prob", values=w / w.sum(),
                           subset_id=subset_id)


def aic_r(max_loglik: float, d_model: int, r: int) -> float:
    """Information criterion with the log-likelihood scaled by the power r.

    Penalty counts the included predictors plus the variance parameter.
    """
    if not np.isfinite(max_loglik):
        raise NumericError("max_loglik must be finite")
    if r < 1:
        raise ConfigError("power r must be >= 1")
    return -2.0 * r * max_loglik + 2.0 * (d_model + 1)


def bic_r(max_loglik: float, d_model: int, n_effective: float, r: int) -> float:
    """BIC analogue of :func:`aic_r`; n_effective is the power-adjusted count r*s."""
    if not np.isfinite(max_loglik):
        raise NumericError("max_loglik must be finite")
    if n_effective < 1:
        raise ConfigError("n_effective must be >= 1")
    if r < 1:
        raise ConfigError("power r must be >= 1")
    return -2.0 * r * max_loglik + (d_model + 1) * np.log(n_effective)


def inclusion_probs(probs: CriterionVector, universe: ModelUniverse) -> InclusionProbs:
    """p_d = total posterior probability of the models containing predictor d."""
    if probs.kind != "posterior_prob":
        raise ConfigError("inclusion probabilities need posterior_prob values")
    if probs.values.shape != (universe.k,):
        raise DataError("criterion vector not aligned with universe")
    masks = np.array([m.included for m in universe.models], dtype=float)
    return InclusionProbs(p=masks.T @ probs.values)


def median_probability_model(p: InclusionProbs) -> ModelSpec:
    """Model containing exactly the predictors with inclusion probability >= 1/2."""
    return ModelSpec(tuple(bool(v >= 0.5) for v in p.p))


def bma_moments(per_model_means: np.ndarray, per_model_vars: np.ndarray,
                probs: np.ndarray) -> tuple[float, float]:
    """Mean and variance of the probability-weighted mixture of model predictives."""
    m = np.asarray(per_model_means, dtype=float)
    v = np.asarray(per_model_vars, dtype=float)
    p = np.asarray(probs, dtype=float)
    if m.shape != v.shape or m.shape != p.shape:
        raise DataError("mixture inputs must have equal length")
    if (v < 0).any():
        raise DataError("per-model variances must be nonnegative")
    if (p < -1e-12).any() or abs(p.sum() - 1.0) > 1e-9:
        raise DataError("probs must form a simplex")
    mean = float(p @ m)
    var = float(p @ (v + m * m) - mean * mean)
    return mean, max(var, 0.0)
