"""Geometric median in Euclidean space and the aggregation strategies built
on it.

The geometric median minimizes the summed Euclidean distance to a set of
points. It is computed with the Weiszfeld fixed-point iteration plus the
Vardi-Zhang correction at data points, lives in the convex hull of its
inputs (so aggregating probability vectors yields a probability vector), and
ignores a minority of arbitrarily corrupted inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .criteria import (CriterionVector, InclusionProbs, ModelSpec,
                       ModelUniverse, inclusion_probs,
                       median_probability_model)
from .errors import ConfigError, DataError, NumericError

if TYPE_CHECKING:  # pragma: no cover
    from .engine import SubsetSummary

DEFAULT_QUANTILE_LEVELS = np.linspace(0.01, 0.99, 99)

STRATEGIES = ("model_combination", "estimate_combination")
METHODS = ("bma", "aic", "bic", "median_prob", "spike_slab")


class WeiszfeldWarning(UserWarning):
    """Raised as a warning when the iteration hits max_iters before tol."""


@dataclass(frozen=True)
class WeiszfeldConfig:
    tol: float = 1e-10
    max_iters: int = 1000
    anchor_eps: float = 1e-12

    def __post_init__(self):
        if self.tol <= 0 or self.anchor_eps <= 0:
            raise ConfigError("tol and anchor_eps must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")


def _objective(y: np.ndarray, pts: np.ndarray) -> float:
    return float(np.linalg.norm(pts - y, axis=1).sum())


def geometric_median(points: Sequence[np.ndarray],
                     cfg: Optional[WeiszfeldConfig] = None) -> np.ndarray:
    """argmin_y sum_j ||y - x_j|| over the input points.

    Weiszfeld iteration from the coordinate-wise mean with the Vardi-Zhang
    correction when an iterate coincides with a data point. 1-dimensional
    inputs reduce to the ordinary median. The result lies in the convex hull
    of the inputs, and its objective never exceeds that of any input point.
    """
    cfg = cfg or WeiszfeldConfig()
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise DataError("need a non-empty list of equal-length vectors")
    if not np.isfinite(pts).all():
        raise DataError("points contain non-finite entries")
    n_pts, dim = pts.shape
    if n_pts == 1:
        return pts[0].copy()
    if dim == 0:
        return np.zeros(0)
    if dim == 1:
        return np.array([np.median(pts[:, 0])])

    y = pts.mean(axis=0)
    obj = _objective(y, pts)
    converged = False
    for _ in range(cfg.max_iters):
        diff = pts - y
        dist = np.linalg.norm(diff, axis=1)
        near = dist < cfg.anchor_eps
        if near.all():
            converged = True
            break
        far = ~near
        w = 1.0 / dist[far]
        target = (pts[far] * w[:, None]).sum(axis=0) / w.sum()
        n_anchored = int(near.sum())
        if n_anchored:
            pull = (diff[far] * w[:, None]).sum(axis=0)
            pull_norm = float(np.linalg.norm(pull))
            if pull_norm <= n_anchored:
                converged = True  # anchored point satisfies the optimality condition
                break
            gamma = n_anchored / pull_norm
            y_new = (1.0 - gamma) * target + gamma * y
        else:
            y_new = target
        new_obj = _objective(y_new, pts)
        if __debug__:
            assert new_obj <= obj + 1e-9 * (1.0 + abs(obj)), \
                "Weiszfeld objective increased"
        move = float(np.linalg.norm(y_new - y))
        y = y_new
        obj = new_obj
        if move < cfg.tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"Weiszfeld did not reach tol={cfg.tol} in {cfg.max_iters} "
            "iterations; returning best iterate", WeiszfeldWarning)
    # the nearest input can beat the final iterate by a rounding margin when
    # the optimum sits exactly on a data point
    nearest = int(np.argmin(np.linalg.norm(pts - y, axis=1)))
    if _objective(pts[nearest], pts) < obj:
        return pts[nearest].copy()
    return y


def aggregate_model_probs(subset_probs: Sequence[np.ndarray],
                          cfg: Optional[WeiszfeldConfig] = None) -> np.ndarray:
    """Geometric median of per-subset posterior model probability vectors."""
    arrs = [np.asarray(p, dtype=float) for p in subset_probs]
    if not arrs:
        raise DataError("no probability vectors to aggregate")
    k = arrs[0].shape[0]
    for p in arrs:
        if p.shape != (k,):
            raise DataError("probability vectors must share a common length")
        if (p < -1e-12).any() or abs(p.sum() - 1.0) > 1e-8:
            raise DataError("inputs must be probability simplex vectors")
    med = geometric_median(arrs, cfg)
    drift = max(abs(med.sum() - 1.0), float(-(med.min())) if med.min() < 0 else 0.0)
    if drift > 1e-12:
        med = np.clip(med, 0.0, None)
        med = med / med.sum()
    return med


def aggregate_predictions(subset_preds: Sequence[np.ndarray],
                          cfg: Optional[WeiszfeldConfig] = None) -> np.ndarray:
    """Geometric median of per-subset prediction vectors."""
    arrs = [np.asarray(p, dtype=float) for p in subset_preds]
    if not arrs:
        raise DataError("no prediction vectors to aggregate")
    if arrs[0].shape[0] == 0:
        return np.zeros(0)
    return geometric_median(arrs, cfg)


def aggregate_quantile_vectors(subset_quantiles: Sequence[np.ndarray],
                               cfg: Optional[WeiszfeldConfig] = None
                               ) -> np.ndarray:
    """Geometric median of flattened quantile matrices (levels x points).

    Inputs must share one quantile grid and have nondecreasing columns; the
    output columns are re-sorted to repair any floating-point monotonicity
    drift.
    """
    mats = [np.asarray(q, dtype=float) for q in subset_quantiles]
    if not mats:
        raise DataError("no quantile matrices to aggregate")
    shape = mats[0].shape
    if len(shape) != 2:
        raise DataError("quantile matrices must be 2-d (levels x points)")
    for q in mats:
        if q.shape != shape:
            raise DataError("quantile matrices must share the same grid shape")
        if shape[0] > 1 and (np.diff(q, axis=0) < -1e-9).any():
            raise DataError("quantile matrix columns must be nondecreasing")
    if shape[1] == 0:
        return np.zeros(shape)
    flat = geometric_median([q.ravel() for q in mats], cfg)
    out = flat.reshape(shape)
    out.sort(axis=0)
    return out


def interval_from_quantiles(qmat: np.ndarray, levels: np.ndarray,
                            lo: float = 0.025, hi: float = 0.975
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Read interval endpoints off a quantile matrix by linear interpolation."""
    qmat = np.asarray(qmat, dtype=float)
    levels = np.asarray(levels, dtype=float)
    if qmat.shape[0] != levels.shape[0]:
        raise DataError("quantile matrix rows must match the level grid")
    lo_v = np.array([np.interp(lo, levels, qmat[:, i]) for i in range(qmat.shape[1])])
    hi_v = np.array([np.interp(hi, levels, qmat[:, i]) for i in range(qmat.shape[1])])
    return lo_v, hi_v


def mixture_quantiles(per_model_quantiles: np.ndarray, weights: np.ndarray,
                      levels: np.ndarray) -> np.ndarray:
    """Quantiles of the weight-mixture of distributions given per-component
    quantile matrices (components x levels x points).

    Each component CDF is the piecewise-linear interpolant through its
    quantile grid; the mixture CDF is inverted on the union of the grids.
    """
    q = np.asarray(per_model_quantiles, dtype=float)
    w = np.asarray(weights, dtype=float)
    levels = np.asarray(levels, dtype=float)
    if q.ndim != 3 or q.shape[0] != w.shape[0] or q.shape[1] != levels.shape[0]:
        raise DataError("per-component quantiles must be (K, Q, n) with K weights")
    k, n_levels, n_pts = q.shape
    if n_levels == 0 or n_pts == 0:
        return np.zeros((n_levels, n_pts))
    out = np.empty((n_levels, n_pts))
    active = w > 1e-12
    for i in range(n_pts):
        grid = np.unique(q[active, :, i])
        cdf = np.zeros(grid.shape[0])
        for j in np.flatnonzero(active):
            cdf += w[j] * np.interp(grid, q[j, :, i], levels)
        cdf /= w[active].sum()
        out[:, i] = np.interp(levels, cdf, grid)
    return out


@dataclass(frozen=True)
class AggregateResult:
    """Everything the aggregation step produces for one pipeline run."""

    final_prediction: np.ndarray
    per_model_predictions: np.ndarray
    predictive_quantiles: np.ndarray
    quantile_levels: np.ndarray
    strategy: str
    method: str
    star_probs: Optional[np.ndarray] = None
    chosen_model: Optional[ModelSpec] = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.star_probs is not None:
            p = np.asarray(self.star_probs, dtype=float)
            if (p < -1e-9).any() or abs(p.sum() - 1.0) > 1e-9:
                raise NumericError("star_probs must form a simplex")
        q = np.asarray(self.predictive_quantiles, dtype=float)
        if q.shape[1] > 0 and q.shape[0] > 1 and (np.diff(q, axis=0) < -1e-9).any():
            raise NumericError("predictive quantile columns must be nondecreasing")

    def interval(self, lo: float = 0.025, hi: float = 0.975):
        return interval_from_quantiles(self.predictive_quantiles,
                                       self.quantile_levels, lo, hi)


def _pick(values: np.ndarray, universe: ModelUniverse, minimize: bool) -> int:
    """Extremal model index; ties go to the smaller model, then to the
    lexicographically first column set."""
    vals = np.asarray(values, dtype=float)
    best = None
    best_key = None
    for idx in range(universe.k):
        v = vals[idx] if minimize else -vals[idx]
        key = (v, universe.models[idx].size, tuple(universe.models[idx].columns()))
        if best_key is None or key < best_key:
            best, best_key = idx, key
    return int(best)


def _local_winner_index(summary, method: str, universe: ModelUniverse) -> int:
    """Index of the subset's locally best model under the given method."""
    if method == "bma":
        return _pick(summary.criterion.values, universe, minimize=False)
    if method in ("aic", "bic"):
        return _pick(summary.criterion.values, universe, minimize=True)
    if method == "median_prob":
        p = inclusion_probs(summary.criterion, universe)
        mask = median_probability_model(p)
        idx = universe.index_of(mask)
        if idx is None:
            # the median-rule mask can fall outside restricted universes;
            # fall back to the highest-probability candidate
            return _pick(summary.criterion.values, universe, minimize=False)
        return idx
    if method == "spike_slab":
        if summary.inclusion_freq is None:
            raise DataError("spike_slab summaries need inclusion frequencies")
        mask = ModelSpec(tuple(bool(f >= 0.5) for f in summary.inclusion_freq))
        idx = universe.index_of(mask)
        if idx is None:
            raise DataError(
                f"spike-and-slab selected model {mask.label()} is not in the "
                "universe; use an all-subsets universe for this method")
        return idx
    raise ConfigError(f"unknown method {method!r}")


def combine(strategy: str, subset_summaries: Sequence["SubsetSummary"],
            method: str, universe: ModelUniverse,
            cfg: Optional[WeiszfeldConfig] = None,
            quantile_levels: Optional[np.ndarray] = None) -> AggregateResult:
    """Aggregate per-subset summaries into a final prediction and model choice.

    estimate_combination selects the best model locally on every subset,
    predicts under it, and takes the geometric median of the predictions.
    model_combination aggregates the criterion vectors first (geometric
    median for probability vectors, component-wise median for information
    criteria, geometric median of inclusion frequencies for spike-and-slab),
    fixes the single global winner, and aggregates every subset's prediction
    under that one model. Model averaging mixes the aggregated per-model
    predictions with geometric-median model probabilities instead of
    committing to a single winner.
    """
    cfg = cfg or WeiszfeldConfig()
    levels = np.asarray(quantile_levels if quantile_levels is not None
                        else DEFAULT_QUANTILE_LEVELS, dtype=float)
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    summaries = list(subset_summaries)
    if not summaries:
        raise DataError("no subset summaries to combine")
    k = universe.k
    n_test = summaries[0].per_model_pred_mean.shape[1]
    n_q = levels.shape[0]
    for s in summaries:
        if s.per_model_pred_mean.shape != (k, n_test):
            raise DataError("subset summaries disagree on universe or test grid")
        if s.per_model_quantiles.shape != (k, n_q, n_test):
            raise DataError("subset summaries disagree on the quantile grid")

    per_model_predictions = np.vstack([
        aggregate_predictions([s.per_model_pred_mean[i] for s in summaries], cfg)
        for i in range(k)
    ]) if n_test else np.zeros((k, 0))

    star = None
    if method in ("bma", "median_prob"):
        star = aggregate_model_probs([s.criterion.values for s in summaries], cfg)

    def _aggregate_under(indices: Sequence[int]):
        """Predictions/quantiles where subset j predicts under model indices[j]."""
        preds = aggregate_predictions(
            [s.per_model_pred_mean[i] for s, i in zip(summaries, indices)], cfg)
        qmat = aggregate_quantile_vectors(
            [s.per_model_quantiles[i] for s, i in zip(summaries, indices)], cfg)
        return preds, qmat

    chosen: Optional[ModelSpec] = None
    if method == "bma":
        if strategy == "model_combination":
            final = star @ per_model_predictions if n_test else np.zeros(0)
            agg_q = np.stack([
                aggregate_quantile_vectors(
                    [s.per_model_quantiles[i] for s in summaries], cfg)
                for i in range(k)
            ]) if n_test else np.zeros((k, n_q, 0))
            qmat = mixture_quantiles(agg_q, star, levels) if n_test \
                else np.zeros((n_q, 0))
        else:
            idx = [_local_winner_index(s, method, universe) for s in summaries]
            final, qmat = _aggregate_under(idx)
    elif method in ("aic", "bic", "median_prob", "spike_slab"):
        if strategy == "model_combination":
            if method in ("aic", "bic"):
                agg = np.median(
                    np.vstack([s.criterion.values for s in summaries]), axis=0)
                win = _pick(agg, universe, minimize=True)
            elif method == "median_prob":
                p = inclusion_probs(
                    CriterionVector(kind="posterior_prob", values=star), universe)
                mask = median_probability_model(p)
                maybe = universe.index_of(mask)
                win = maybe if maybe is not None else _pick(star, universe,
                                                            minimize=False)
            else:
                if any(s.inclusion_freq is None for s in summaries):
                    raise DataError("spike_slab summaries need inclusion frequencies")
                incl = [np.asarray(s.inclusion_freq, dtype=float) for s in summaries]
                agg_incl = geometric_median(incl, cfg)
                mask = ModelSpec(tuple(bool(f >= 0.5) for f in agg_incl))
                maybe = universe.index_of(mask)
                if maybe is None:
                    raise DataError(
                        f"aggregated spike-and-slab model {mask.label()} is not "
                        "in the universe; use an all-subsets universe")
                win = maybe
            chosen = universe.models[win]
            final, qmat = _aggregate_under([win] * len(summaries))
        else:
            idx = [_local_winner_index(s, method, universe) for s in summaries]
            final, qmat = _aggregate_under(idx)
    else:  # pragma: no cover
        raise ConfigError(f"unknown method {method!r}")

    return AggregateResult(
        final_prediction=final,
        per_model_predictions=per_model_predictions,
        predictive_quantiles=qmat,
        quantile_levels=levels,
        strategy=strategy,
        method=method,
        star_probs=star,
        chosen_model=chosen,
    )
