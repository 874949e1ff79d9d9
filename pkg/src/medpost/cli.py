"""Command-line front end.

Subcommands: ``fit`` (one pipeline run), ``experiment`` (a study from the
harness), ``aggregate`` (standalone geometric-median aggregation of
probability vectors), ``gen-data`` (synthetic CSV).

Configuration is one flat YAML key-value file; command-line flags override
file values. Every output file embeds the run-manifest hash, and outputs are
byte-identical across reruns of the same manifest (wall-clock timings live
only in manifest.json, which also carries the timestamps).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .conjugate import (McmcConfig, PowerLikelihoodConfig, default_prior,
                        sample_posterior)
from .criteria import ModelSpec
from .dataset import (Dataset, SyntheticSpec, generate_synthetic, load_csv,
                      with_intercept)
from .engine import (PipelineConfig, UniverseSpec, derive_seed,
                     run_pipeline_detailed)
from .errors import ConfigError, DataError, NumericError
from .experiments import (EXPERIMENT_KINDS, ExperimentResult, ExperimentSpec,
                          run_experiment)
from .geomedian import aggregate_model_probs
from .spikeslab import SpikeSlabPrior, ss_run_chain

CONFIG_DEFAULTS = {
    "data": None,
    "response": "y",
    "test_data": None,
    "method": "bma",
    "strategy": "model_combination",
    "r": 1,
    "master_seed": 0,
    "parallelism": 1,
    "r_power": None,
    "add_intercept": False,
    "standardize": False,
    "universe": "all_subsets",
    "iterations": 1000,
    "burn_in": 500,
    "thin": 1,
    "prior_a": 1.0,
    "prior_b": 1.0,
    "prior_scale": 100.0,
    "nu0": 0.005,
    "ss_a": 0.01,
    "ss_b": 0.01,
    "a_tau": 5.0,
    "b_tau": 50.0,
    "ss_scale_basis": "per_subset",
}


@dataclass
class RunManifest:
    """Run identity: hash covers everything that determines the outputs."""

    config_hash: str
    master_seed: int
    method: str
    r: int
    versions: dict
    timestamps: dict
    input_digests: dict
    timings: dict

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "master_seed": self.master_seed,
            "method": self.method,
            "r": self.r,
            "versions": self.versions,
            "timestamps": self.timestamps,
            "input_digests": self.input_digests,
            "timings": self.timings,
        }


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_hash(resolved: dict, input_digests: dict) -> str:
    payload = json.dumps(
        {"config": resolved, "inputs": input_digests, "version": __version__},
        sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _versions() -> dict:
    import scipy
    return {"medpost": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(map(str, sys.version_info[:3]))}


def _load_config(path: Optional[str], overrides: dict) -> dict:
    cfg = dict(CONFIG_DEFAULTS)
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file is not valid YAML: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a key-value mapping")
        unknown = set(loaded) - set(CONFIG_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    return cfg


def _universe_spec(text: str, add_intercept: bool) -> UniverseSpec:
    always = (0,) if add_intercept else ()
    if text == "all_subsets":
        return UniverseSpec(mode="all_subsets", always_include=always)
    if text.startswith("fixed_size:"):
        try:
            size = int(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad universe spec {text!r}") from None
        return UniverseSpec(mode="fixed_size", size=size, always_include=always)
    raise ConfigError(
        f"universe must be 'all_subsets' or 'fixed_size:<m>', got {text!r}")


def _prepare_data(cfg: dict) -> tuple[Dataset, np.ndarray, Optional[np.ndarray]]:
    """Training dataset and test design (with training-based preprocessing)."""
    if not cfg["data"]:
        raise ConfigError("config key 'data' (training CSV) is required")
    ds = load_csv(cfg["data"], cfg["response"])
    x_test = None
    y_test = None
    if cfg["test_data"]:
        ds_test = load_csv(cfg["test_data"], cfg["response"])
        if ds_test.column_names != ds.column_names:
            raise DataError("test data columns must match training columns")
        x_test = np.asarray(ds_test.x)
        y_test = np.asarray(ds_test.y)
    x_train = np.asarray(ds.x)
    if cfg["standardize"]:
        mean = x_train.mean(axis=0)
        centered = x_train - mean
        norms = np.linalg.norm(centered, axis=0)
        if (norms == 0).any():
            bad = [ds.column_names[j] for j in np.flatnonzero(norms == 0)]
            raise DataError(f"zero-variance column(s): {', '.join(bad)}")
        x_train = centered / norms
        if x_test is not None:
            x_test = (x_test - mean) / norms
    ds = Dataset(x=x_train, y=ds.y, column_names=ds.column_names)
    if cfg["add_intercept"]:
        ds = with_intercept(ds)
        if x_test is not None:
            x_test = np.hstack([np.ones((x_test.shape[0], 1)), x_test])
    if x_test is None:
        x_test = np.asarray(ds.x)
    return ds, x_test, y_test


def _pipeline_from_config(cfg: dict, d: int) -> PipelineConfig:
    prior = default_prior(d, scale=float(cfg["prior_scale"]),
                          a=float(cfg["prior_a"]), b=float(cfg["prior_b"]))
    ss_prior = SpikeSlabPrior(nu0=float(cfg["nu0"]), a=float(cfg["ss_a"]),
                              b=float(cfg["ss_b"]), a_tau=float(cfg["a_tau"]),
                              b_tau=float(cfg["b_tau"]))
    return PipelineConfig(
        method=cfg["method"], strategy=cfg["strategy"], r=int(cfg["r"]),
        mcmc=McmcConfig(iterations=int(cfg["iterations"]),
                        burn_in=int(cfg["burn_in"]), thin=int(cfg["thin"]),
                        seed=derive_seed(int(cfg["master_seed"]), 0, 0, "mcmc")),
        prior=prior, ss_prior=ss_prior,
        universe=_universe_spec(cfg["universe"], bool(cfg["add_intercept"])),
        master_seed=int(cfg["master_seed"]),
        parallelism=int(cfg["parallelism"]),
        r_power=None if cfg["r_power"] is None else int(cfg["r_power"]),
        ss_scale_basis=cfg["ss_scale_basis"],
    )


def _write_csv(path: Path, header, rows, manifest_hash: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# manifest_hash={manifest_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_jsonl(path: Path, rows, manifest_hash: str):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            row = dict(row)
            row["manifest_hash"] = manifest_hash
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _model_label(model: Optional[ModelSpec]) -> str:
    return model.label() if model is not None else ""


def cmd_fit(args) -> int:
    cfg = _load_config(args.config, {
        "data": args.data, "response": args.response, "method": args.method,
        "strategy": args.strategy, "r": args.subsets,
        "master_seed": args.seed, "parallelism": args.parallelism,
    })
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    t0 = time.perf_counter()

    ds, x_test, _ = _prepare_data(cfg)
    pipeline_cfg = _pipeline_from_config(cfg, ds.n_cols)
    detail = run_pipeline_detailed(ds, x_test, pipeline_cfg)
    result = detail.results[(pipeline_cfg.method, pipeline_cfg.strategy)]
    wall = time.perf_counter() - t0

    input_digests = {cfg["data"]: _sha256_file(cfg["data"])}
    if cfg["test_data"]:
        input_digests[cfg["test_data"]] = _sha256_file(cfg["test_data"])
    resolved = {k: cfg[k] for k in sorted(CONFIG_DEFAULTS)}
    config_hash = _config_hash(resolved, input_digests)
    manifest = RunManifest(
        config_hash=config_hash, master_seed=int(cfg["master_seed"]),
        method=cfg["method"], r=int(cfg["r"]), versions=_versions(),
        timestamps={"started": started,
                    "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z")},
        input_digests=input_digests, timings={"fit_seconds": wall})

    lo, hi = result.interval()
    pred_rows = [(i, result.final_prediction[i], lo[i], hi[i])
                 for i in range(result.final_prediction.shape[0])]
    _write_csv(out_dir / "predictions.csv",
               ("point", "prediction", "lo95", "hi95"), pred_rows, config_hash)
    _write_jsonl(out_dir / "predictions.jsonl",
                 [{"point": int(i), "prediction": float(p), "lo95": float(l),
                   "hi95": float(h)} for i, p, l, h in pred_rows], config_hash)

    universe = detail.universe
    if result.star_probs is not None:
        _write_csv(out_dir / "model_probs.csv",
                   ("model_index", "model", "star_prob"),
                   [(k, universe.models[k].label(), result.star_probs[k])
                    for k in range(universe.k)], config_hash)
    crit_rows = []
    for summary in detail.summaries[pipeline_cfg.method]:
        if summary.criterion is None:
            continue
        for k in range(universe.k):
            crit_rows.append((summary.subset_id, k, summary.criterion.kind,
                              summary.criterion.values[k]))
    if crit_rows:
        _write_csv(out_dir / "criterion.csv",
                   ("subset_id", "model_index", "kind", "value"),
                   crit_rows, config_hash)

    summary_doc = {
        "method": pipeline_cfg.method,
        "strategy": pipeline_cfg.strategy,
        "r": pipeline_cfg.r,
        "chosen_model": _model_label(result.chosen_model),
        "n_test": int(result.final_prediction.shape[0]),
        "manifest_hash": config_hash,
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary_doc, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")

    if args.dump_draws:
        _dump_draws(out_dir, ds, detail, pipeline_cfg, cfg, config_hash)
    return 0


def _dump_draws(out_dir: Path, ds: Dataset, detail, pipeline_cfg: PipelineConfig,
                cfg: dict, config_hash: str):
    """Re-run the per-model sampler with the pipeline's seeds and export the
    chain for each subset's locally best model (or the spike-and-slab trace)."""
    from .dataset import partition as _partition
    part = _partition(ds, pipeline_cfg.r,
                      seed=derive_seed(pipeline_cfg.master_seed, 0, 0,
                                       "partition"))
    universe = detail.universe
    for summary in detail.summaries[pipeline_cfg.method]:
        j = summary.subset_id
        rows_j = part.rows_of(j)
        x_sub, y_sub = ds.x[rows_j], ds.y[rows_j]
        if pipeline_cfg.method == "spike_slab":
            states, _ = ss_run_chain(
                x_sub, y_sub, pipeline_cfg.ss_prior,
                PowerLikelihoodConfig(r_power=pipeline_cfg.effective_power),
                McmcConfig(iterations=pipeline_cfg.mcmc.iterations,
                           burn_in=pipeline_cfg.mcmc.burn_in,
                           seed=derive_seed(pipeline_cfg.master_seed, j, 0,
                                            "spikeslab"),
                           thin=pipeline_cfg.mcmc.thin),
                basis=pipeline_cfg.ss_scale_basis)
            d = states[0].beta.shape[0]
            header = (["iteration"] + [f"beta_{i}" for i in range(d)]
                      + ["sigma2_inv"] + [f"j_{i}" for i in range(d)] + ["w"])
            rows = [[t, *st.beta, st.sigma2_inv, *st.j, st.w]
                    for t, st in enumerate(states)]
            _write_csv(out_dir / f"draws_subset{j}.csv", header, rows,
                       config_hash)
        else:
            model = summary.local_best
            idx = universe.index_of(model)
            if idx is None:
                continue
            prior = (pipeline_cfg.prior
                     if pipeline_cfg.prior is not None
                     else default_prior(ds.n_cols,
                                        scale=float(cfg["prior_scale"]),
                                        a=float(cfg["prior_a"]),
                                        b=float(cfg["prior_b"])))
            draws = sample_posterior(
                x_sub, y_sub, model, prior.restrict(model.columns()),
                PowerLikelihoodConfig(r_power=pipeline_cfg.effective_power),
                McmcConfig(iterations=pipeline_cfg.mcmc.iterations,
                           burn_in=pipeline_cfg.mcmc.burn_in,
                           seed=derive_seed(pipeline_cfg.master_seed, j, idx,
                                            "gibbs"),
                           thin=pipeline_cfg.mcmc.thin))
            header = (["iteration"] + [f"beta_{c}" for c in model.columns()]
                      + ["sigma2"])
            rows = [[t, *draws.beta_draws[t], draws.sigma2_draws[t]]
                    for t in range(draws.sigma2_draws.shape[0])]
            _write_csv(out_dir / f"draws_subset{j}.csv", header, rows,
                       config_hash)


def cmd_experiment(args) -> int:
    if args.kind not in EXPERIMENT_KINDS:
        raise ConfigError(
            f"unknown experiment kind {args.kind!r}; choose from "
            f"{', '.join(EXPERIMENT_KINDS)}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")

    kwargs = dict(kind=args.kind, base_seed=args.seed)
    if args.trials is not None:
        kwargs["trials"] = args.trials
    if args.methods:
        kwargs["methods"] = tuple(args.methods.split(","))
    if args.subsets:
        kwargs["r_values"] = tuple(int(r) for r in args.subsets.split(","))
    if args.n_train is not None:
        kwargs["n_train"] = args.n_train
    if args.strategy:
        kwargs["strategy"] = args.strategy
    if args.workers is not None:
        kwargs["workers"] = args.workers
    spec = ExperimentSpec(**kwargs)

    ds = None
    input_digests = {}
    if args.kind == "realdata":
        if not args.data:
            raise ConfigError("realdata experiment needs --data CSV")
        ds = load_csv(args.data, args.response)
        input_digests[args.data] = _sha256_file(args.data)

    t0 = time.perf_counter()
    result = run_experiment(spec, ds)
    wall = time.perf_counter() - t0

    resolved = result.metadata
    config_hash = _config_hash(resolved, input_digests)
    _write_experiment_outputs(out_dir, result, config_hash)
    manifest = RunManifest(
        config_hash=config_hash, master_seed=spec.base_seed, method=",".join(
            spec.methods), r=0, versions=_versions(),
        timestamps={"started": started,
                    "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z")},
        input_digests=input_digests,
        timings={"experiment_seconds": wall,
                 "per_run_wall_seconds": sorted(
                     {round(m.wall_seconds, 6) for m in result.records})})
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    for name, ok in sorted(result.checks.items()):
        print(f"check {'PASS' if ok else 'FAIL'}: {name}")
    return 0


def _write_experiment_outputs(out_dir: Path, result: ExperimentResult,
                              config_hash: str):
    header = ("method", "strategy", "r", "grid_value", "trial", "detail",
              "rmse", "covered", "selected_correct", "interval_width")

    def _opt(v):
        return "" if v is None else v

    rows = [(m.method, m.strategy, m.r, m.grid_value, m.trial, m.detail,
             m.rmse, _opt(m.covered), _opt(m.selected_correct),
             _opt(m.interval_width))
            for m in result.records_sorted()]
    _write_csv(out_dir / "records.csv", header, rows, config_hash)
    _write_jsonl(out_dir / "records.jsonl", [
        {"method": m.method, "strategy": m.strategy, "r": m.r,
         "grid_value": m.grid_value, "trial": m.trial, "detail": m.detail,
         "rmse": m.rmse, "covered": m.covered,
         "selected_correct": m.selected_correct,
         "interval_width": m.interval_width}
        for m in result.records_sorted()], config_hash)
    for name, (fig_header, fig_rows) in sorted(result.figures.items()):
        _write_csv(out_dir / f"figure_{name}.csv", fig_header, fig_rows,
                   config_hash)
    (out_dir / "checks.json").write_text(
        json.dumps(result.checks, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    (out_dir / "metadata.json").write_text(
        json.dumps(result.metadata, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")


def cmd_aggregate(args) -> int:
    rows = []
    with open(args.input, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for line in reader:
            if not line or line[0].startswith("#"):
                continue
            try:
                rows.append([float(c) for c in line])
            except ValueError:
                if not rows:  # header row
                    continue
                raise DataError(f"non-numeric row in {args.input}: {line}") \
                    from None
    if not rows:
        raise DataError(f"{args.input}: no probability rows")
    mat = np.asarray(rows, dtype=float)
    for i, row in enumerate(mat):
        if (row < -1e-12).any() or abs(row.sum() - 1.0) > 1e-6:
            raise DataError(
                f"{args.input}: row {i} is not a probability vector "
                f"(sum={row.sum():.6g})")
    agg = aggregate_model_probs(list(mat))
    out = ",".join(repr(float(v)) for v in agg)
    if args.output:
        Path(args.output).write_text(out + "\n", encoding="utf-8")
    else:
        print(out)
    return 0


def cmd_gen_data(args) -> int:
    beta = None
    if args.beta:
        beta = np.array([float(b) for b in args.beta.split(",")])
    spec = SyntheticSpec(n=args.n, d=args.d, n_true=args.n_true,
                         noise_sd=args.noise_sd, beta_true=beta,
                         seed=args.seed)
    ds, beta_true = generate_synthetic(spec)
    path = Path(args.out)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.column_names) + ["y"])
        for i in range(ds.n_rows):
            writer.writerow([repr(float(v)) for v in ds.x[i]]
                            + [repr(float(ds.y[i]))])
    print(f"wrote {ds.n_rows} rows to {path} "
          f"(true predictors: {list(np.flatnonzero(beta_true))})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medpost",
        description="Robust, parallel Bayesian model selection for normal "
                    "linear models")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="run the pipeline on a CSV")
    p_fit.add_argument("--config", help="YAML key-value config file")
    p_fit.add_argument("--data", help="training CSV (overrides config)")
    p_fit.add_argument("--response", default=None, help="response column name")
    p_fit.add_argument("--method", default=None,
                       choices=["bma", "aic", "bic", "median_prob",
                                "spike_slab"])
    p_fit.add_argument("--strategy", default=None,
                       choices=["model_combination", "estimate_combination"])
    p_fit.add_argument("--subsets", type=int, default=None,
                       help="subset count r")
    p_fit.add_argument("--seed", type=int, default=None, help="master seed")
    p_fit.add_argument("--parallelism", type=int, default=None)
    p_fit.add_argument("--out-dir", default="medpost_out")
    p_fit.add_argument("--dump-draws", action="store_true",
                       help="export per-subset chain draws as CSV")
    p_fit.set_defaults(func=cmd_fit)

    p_exp = sub.add_parser("experiment", help="run a study from the harness")
    p_exp.add_argument("kind", help=f"one of {', '.join(EXPERIMENT_KINDS)}")
    p_exp.add_argument("--trials", type=int, default=None)
    p_exp.add_argument("--methods", default=None,
                       help="comma-separated method list")
    p_exp.add_argument("--subsets", default=None,
                       help="comma-separated r values")
    p_exp.add_argument("--seed", type=int, default=0)
    p_exp.add_argument("--n-train", type=int, default=None)
    p_exp.add_argument("--strategy", default=None)
    p_exp.add_argument("--workers", type=int, default=None)
    p_exp.add_argument("--data", help="CSV for the realdata experiment")
    p_exp.add_argument("--response", default="y")
    p_exp.add_argument("--out-dir", default="medpost_exp")
    p_exp.set_defaults(func=cmd_experiment)

    p_agg = sub.add_parser("aggregate",
                           help="geometric median of probability rows")
    p_agg.add_argument("--input", required=True,
                       help="CSV of probability vectors, one per row")
    p_agg.add_argument("--output", help="write result here (default stdout)")
    p_agg.set_defaults(func=cmd_aggregate)

    p_gen = sub.add_parser("gen-data", help="write a synthetic CSV")
    p_gen.add_argument("--n", type=int, required=True)
    p_gen.add_argument("--d", type=int, required=True)
    p_gen.add_argument("--n-true", type=int, default=3)
    p_gen.add_argument("--noise-sd", type=float, default=1.0)
    p_gen.add_argument("--beta", help="comma-separated true coefficients")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: kind=config message={exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"error: kind=data message={exc}", file=sys.stderr)
        return 3
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"error: kind=numeric message={exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
