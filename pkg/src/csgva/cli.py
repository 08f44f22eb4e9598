"""Command line front end: fit, estimate-bound and sample subcommands.

A run is described by an INI-style config file (sections ``[model]``,
``[fit]``, ``[output]``; every key overridable from the command line) and
produces six artifacts in the output directory:

    fit.json              final state, trace and window averages
    trace.csv             per-iteration bound estimates
    windows.csv           per-window averages
    posterior_global.csv  per-parameter posterior mean and sd
    posterior_latent.csv  per-latent-state posterior mean and sd
    bound_estimate.json   replicated bound estimate (mean, sd, K, reps)

Exit codes: 0 success, 2 bad config, 3 bad data, 4 fit diverged (partial
artifacts are still written).  Timing is logged to stderr, never into the
artifacts, so reruns with the same seed are byte-identical.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError, FitDivergedError
from .family import VariationalParams
from .models.glmm import GlmmModel, load_glmm_csv
from .models.svm import SvmModel, load_svm_csv
from .optimizer import RNG_INIT, FitConfig, FitReport, estimate_bound, fit
from .posterior import sample_posterior

MODEL_KINDS = ("glmm-poisson", "glmm-bernoulli", "svm")


def _fmt(x: float) -> str:
    """17 significant digits: parses back to the identical double."""
    return format(float(x), ".17g")


@dataclass
class RunConfig:
    """Everything one ``fit`` invocation needs."""

    model: dict
    fit: FitConfig
    out_dir: Path
    posterior_samples: int = 2000
    bound_reps: int = 1000
    threads: int = 1
    init_file: str | None = None


# ---------------------------------------------------------------------------
# config file handling

_LIST_KEYS = ("covariate_cols", "random_cols", "subject_specific_cols")


def _parse_list(raw: str) -> list:
    return [item.strip() for item in raw.split(",") if item.strip()]


def load_config_file(path) -> dict:
    """Read the INI config into plain nested dicts (strings untyped)."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return {section: dict(parser[section]) for section in parser.sections()}


def _coerce(section: dict, key, conv, default):
    if key not in section or section[key] == "":
        return default
    try:
        if conv is bool:
            raw = section[key].strip().lower()
            if raw in ("1", "true", "yes", "on"):
                return True
            if raw in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {section[key]!r}")
        return conv(section[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from None


def build_run_config(file_cfg: dict, overrides: dict) -> RunConfig:
    """Merge the config file with command line overrides."""
    model_sec = dict(file_cfg.get("model", {}))
    fit_sec = dict(file_cfg.get("fit", {}))
    out_sec = dict(file_cfg.get("output", {}))

    for key in ("model", "data"):
        takes = {"model": "kind", "data": "data"}[key]
        if overrides.get(key) is not None:
            model_sec[takes] = overrides[key]
    for key in ("method", "K", "seed", "init", "max_iters"):
        if overrides.get(key) is not None:
            fit_sec[key.lower()] = str(overrides[key])
    if overrides.get("out") is not None:
        out_sec["dir"] = overrides["out"]
    if overrides.get("posterior_samples") is not None:
        out_sec["posterior_samples"] = str(overrides["posterior_samples"])
    if overrides.get("bound_reps") is not None:
        out_sec["bound_reps"] = str(overrides["bound_reps"])

    kind = model_sec.get("kind")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"model kind must be one of {MODEL_KINDS}, got {kind!r}")
    if not model_sec.get("data"):
        raise ConfigError("a data path is required (config [model] data or --data)")

    model = {"kind": kind, "data": model_sec["data"]}
    if kind.startswith("glmm"):
        model.update(
            subject_col=model_sec.get("subject_col", "subject"),
            response_col=model_sec.get("response_col", "y"),
            covariate_cols=_parse_list(model_sec.get("covariate_cols", "")),
            random_cols=_parse_list(model_sec.get("random_cols", "")),
            subject_specific_cols=_parse_list(model_sec.get("subject_specific_cols", "")),
            prior_var_beta=_coerce(model_sec, "prior_var_beta", float, 100.0),
            prior_var_omega=_coerce(model_sec, "prior_var_omega", float, 100.0),
        )
    else:
        model.update(
            rate_col=model_sec.get("rate_col") or None,
            response_col=model_sec.get("response_col") or None,
            mean_correct=_coerce(model_sec, "mean_correct", bool, True),
            prior_var_alpha=_coerce(model_sec, "prior_var_alpha", float, 10.0),
            prior_var_kappa=_coerce(model_sec, "prior_var_kappa", float, 10.0),
            prior_var_psi=_coerce(model_sec, "prior_var_psi", float, 10.0),
        )
        if model["rate_col"] is None and model["response_col"] is None:
            model["response_col"] = "y"

    try:
        fit_config = FitConfig(
            method=fit_sec.get("method", "csgva"),
            K=_coerce(fit_sec, "k", int, 1),
            max_iters=_coerce(fit_sec, "max_iters", int, 100_000),
            stop_window=_coerce(fit_sec, "stop_window", int, 1000),
            kappa=_coerce(fit_sec, "kappa", int, 6),
            seed=_coerce(fit_sec, "seed", int, 0),
            init=fit_sec.get("init", "zero"),
            iw_iters=_coerce(fit_sec, "iw_iters", int, 1000),
            step_size=_coerce(fit_sec, "step_size", float, 0.001),
            tau1=_coerce(fit_sec, "tau1", float, 0.9),
            tau2=_coerce(fit_sec, "tau2", float, 0.99),
            eps=_coerce(fit_sec, "eps", float, 1e-8),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if fit_config.init not in ("zero", "from_gva", "from_file"):
        raise ConfigError(f"unknown init {fit_config.init!r}")

    init_file = overrides.get("init_file") or fit_sec.get("init_file") or None
    if fit_config.init == "from_file" and not init_file:
        raise ConfigError("init=from_file needs --init-file (or [fit] init_file)")

    threads = overrides.get("threads")
    if threads is None:
        # default: machine cores, capped at the per-iteration draw count
        threads = min(os.cpu_count() or 1, fit_config.K) if fit_config.method == "iw" else 1
    out_dir = Path(out_sec.get("dir", "out"))
    return RunConfig(
        model=model,
        fit=fit_config,
        out_dir=out_dir,
        posterior_samples=_coerce(out_sec, "posterior_samples", int, 2000),
        bound_reps=_coerce(out_sec, "bound_reps", int, 1000),
        threads=threads,
        init_file=init_file,
    )


# ---------------------------------------------------------------------------
# model construction

def build_model(model_cfg: dict):
    kind = model_cfg["kind"]
    if kind.startswith("glmm"):
        data = load_glmm_csv(
            model_cfg["data"],
            response_col=model_cfg["response_col"],
            covariate_cols=model_cfg["covariate_cols"],
            random_cols=model_cfg["random_cols"],
            subject_specific_cols=model_cfg["subject_specific_cols"],
            family="poisson" if kind == "glmm-poisson" else "bernoulli",
            subject_col=model_cfg["subject_col"],
            prior_var_beta=model_cfg["prior_var_beta"],
            prior_var_omega=model_cfg["prior_var_omega"],
        )
        return GlmmModel(data)
    data = load_svm_csv(
        model_cfg["data"],
        rate_col=model_cfg.get("rate_col"),
        response_col=model_cfg.get("response_col"),
        apply_mean_correct=model_cfg.get("mean_correct", True),
        prior_var_alpha=model_cfg["prior_var_alpha"],
        prior_var_kappa=model_cfg["prior_var_kappa"],
        prior_var_psi=model_cfg["prior_var_psi"],
    )
    return SvmModel(data)


def _initial_lambda(model, config: RunConfig):
    dims = model.dims
    method = config.fit.method
    if config.fit.init == "zero":
        return VariationalParams.zeros(dims.G, dims.pattern(),
                                       gaussian_mode=(method == "gva"))
    if config.fit.init == "from_gva":
        pre_cfg = FitConfig(method="gva", seed=config.fit.seed,
                            max_iters=config.fit.max_iters,
                            stop_window=config.fit.stop_window, kappa=config.fit.kappa,
                            step_size=config.fit.step_size, tau1=config.fit.tau1,
                            tau2=config.fit.tau2, eps=config.fit.eps)
        lam0 = VariationalParams.zeros(dims.G, dims.pattern(), gaussian_mode=True)
        print("running informative initialization (gva pre-fit)", file=sys.stderr)
        pre = fit(model, lam0, pre_cfg, threads=config.threads, rng_stream=RNG_INIT)
        lam = pre.lam.copy()
        lam.gaussian_mode = method == "gva"
        return lam
    # from_file
    try:
        with open(config.init_file) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read init file: {exc}") from None
    lam = VariationalParams.from_dict(payload.get("lambda", payload))
    if method == "gva":
        if np.any(lam.F != 0.0):
            raise ConfigError("init file carries a non-Gaussian state; cannot run method=gva")
        lam.gaussian_mode = True
    else:
        lam.gaussian_mode = False
    expect = dims.pattern()
    if not lam.layout.pattern.same_shape(expect) or lam.layout.G != dims.G:
        raise ConfigError("init file dimensions do not match the model")
    return lam


# ---------------------------------------------------------------------------
# artifact writing

def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=1) + "\n")


def _write_fit_json(path: Path, report: FitReport, model_cfg: dict):
    payload = {"model": model_cfg}
    payload.update(report.to_dict())
    _write_json(path, payload)


def _write_trace_csv(path: Path, trace):
    lines = ["iteration,bound"]
    lines += [f"{i + 1},{_fmt(v)}" for i, v in enumerate(trace)]
    path.write_text("\n".join(lines) + "\n")


def _write_windows_csv(path: Path, windows):
    lines = ["window,average"]
    lines += [f"{i + 1},{_fmt(v)}" for i, v in enumerate(windows)]
    path.write_text("\n".join(lines) + "\n")


def _write_posterior_csvs(out_dir: Path, summary):
    lines = ["param,mean,sd"]
    for name, m, s in zip(summary.global_labels, summary.global_mean, summary.global_sd):
        lines.append(f"{name},{_fmt(m)},{_fmt(s)}")
    (out_dir / "posterior_global.csv").write_text("\n".join(lines) + "\n")

    lines = ["state,mean,sd"]
    for name, m, s in zip(summary.latent_labels, summary.latent_mean, summary.latent_sd):
        lines.append(f"{name},{_fmt(m)},{_fmt(s)}")
    (out_dir / "posterior_latent.csv").write_text("\n".join(lines) + "\n")


def run(config: RunConfig) -> int:
    """Fit, estimate the bound, sample the posterior, write all artifacts."""
    model = build_model(config.model)
    out = config.out_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None

    lam0 = _initial_lambda(model, config)
    try:
        report = fit(model, lam0, config.fit, threads=config.threads)
    except FitDivergedError as exc:
        print(f"fit diverged: {exc}", file=sys.stderr)
        if exc.report is not None:
            _write_fit_json(out / "fit.json", exc.report, config.model)
            _write_trace_csv(out / "trace.csv", exc.report.bound_trace)
            _write_windows_csv(out / "windows.csv", exc.report.window_means)
        return 4

    print(f"fit: {report.iterations} iterations, stop={report.stop_reason}, "
          f"{report.wall_time_s:.1f}s", file=sys.stderr)
    _write_fit_json(out / "fit.json", report, config.model)
    _write_trace_csv(out / "trace.csv", report.bound_trace)
    _write_windows_csv(out / "windows.csv", report.window_means)

    mean, sd = estimate_bound(report.lam, model, config.fit.method, K=config.fit.K,
                              reps=config.bound_reps, seed=config.fit.seed,
                              threads=config.threads)
    _write_json(out / "bound_estimate.json", {
        "mean": mean, "sd": sd,
        "K": config.fit.K if config.fit.method == "iw" else 1,
        "reps": config.bound_reps, "method": config.fit.method,
    })
    print(f"bound estimate: {mean:.4f} ({sd:.4f})", file=sys.stderr)

    summary = sample_posterior(report.lam, model, config.posterior_samples,
                               seed=config.fit.seed)
    _write_posterior_csvs(out, summary)
    return 0


# ---------------------------------------------------------------------------
# subcommands

def _cmd_fit(args) -> int:
    file_cfg = load_config_file(args.config) if args.config else {}
    overrides = {
        "model": args.model, "data": args.data, "method": args.method,
        "K": args.K, "seed": args.seed, "init": args.init,
        "init_file": args.init_file, "out": args.out, "threads": args.threads,
        "max_iters": args.max_iters, "posterior_samples": args.posterior_samples,
        "bound_reps": args.bound_reps,
    }
    return run(build_run_config(file_cfg, overrides))


def _load_fit_file(path):
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read fit file: {exc}") from None
    if "lambda" not in payload or "model" not in payload:
        raise ConfigError(f"{path} is not a fit artifact")
    lam = VariationalParams.from_dict(payload["lambda"])
    model = build_model(payload["model"])
    return payload, lam, model


def _cmd_estimate_bound(args) -> int:
    payload, lam, model = _load_fit_file(args.fit)
    method = args.method or payload.get("fit_config", {}).get("method", "csgva")
    K = args.K if args.K is not None else payload.get("fit_config", {}).get("K", 1)
    seed = args.seed if args.seed is not None else payload.get("fit_config", {}).get("seed", 0)
    mean, sd = estimate_bound(lam, model, method, K=K, reps=args.reps, seed=seed,
                              threads=args.threads or 1)
    result = {"mean": mean, "sd": sd, "K": K if method == "iw" else 1,
              "reps": args.reps, "method": method}
    out_path = Path(args.out) if args.out else Path(args.fit).parent
    out_path.mkdir(parents=True, exist_ok=True)
    _write_json(out_path / "bound_estimate.json", result)
    print(f"{mean:.4f} ({sd:.4f})")
    return 0


def _cmd_sample(args) -> int:
    payload, lam, model = _load_fit_file(args.fit)
    seed = args.seed if args.seed is not None else payload.get("fit_config", {}).get("seed", 0)
    summary = sample_posterior(lam, model, args.count, seed=seed,
                               keep_samples=args.save_samples)
    out_path = Path(args.out) if args.out else Path(args.fit).parent
    out_path.mkdir(parents=True, exist_ok=True)
    _write_posterior_csvs(out_path, summary)
    if args.save_samples:
        labels = list(summary.global_labels) + list(summary.latent_labels)
        lines = [",".join(labels)]
        for row in summary.samples:
            lines.append(",".join(_fmt(v) for v in row))
        (out_path / "posterior_samples.csv").write_text("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csgva",
        description="Conditionally structured Gaussian variational inference",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a variational approximation")
    p_fit.add_argument("--config", help="INI config file (sections model/fit/output)")
    p_fit.add_argument("--model", choices=MODEL_KINDS)
    p_fit.add_argument("--data", help="CSV data path")
    p_fit.add_argument("--method", choices=("gva", "csgva", "iw"))
    p_fit.add_argument("--K", type=int, help="draws per iteration (method=iw)")
    p_fit.add_argument("--seed", type=int)
    p_fit.add_argument("--init", choices=("zero", "from_gva", "from_file"))
    p_fit.add_argument("--init-file", help="fit.json to initialize from")
    p_fit.add_argument("--out", help="output directory")
    p_fit.add_argument("--threads", type=int, help="workers for K-sample evaluation")
    p_fit.add_argument("--max-iters", type=int, dest="max_iters")
    p_fit.add_argument("--posterior-samples", type=int, dest="posterior_samples")
    p_fit.add_argument("--bound-reps", type=int, dest="bound_reps")
    p_fit.set_defaults(func=_cmd_fit)

    p_bound = sub.add_parser("estimate-bound", help="re-estimate the bound of a saved fit")
    p_bound.add_argument("--fit", required=True, help="fit.json from a previous run")
    p_bound.add_argument("--reps", type=int, default=1000)
    p_bound.add_argument("--K", type=int)
    p_bound.add_argument("--method", choices=("gva", "csgva", "iw"))
    p_bound.add_argument("--seed", type=int)
    p_bound.add_argument("--threads", type=int)
    p_bound.add_argument("--out", help="directory for bound_estimate.json")
    p_bound.set_defaults(func=_cmd_estimate_bound)

    p_sample = sub.add_parser("sample", help="sample the fitted posterior")
    p_sample.add_argument("--fit", required=True, help="fit.json from a previous run")
    p_sample.add_argument("--count", type=int, default=2000)
    p_sample.add_argument("--seed", type=int)
    p_sample.add_argument("--out", help="directory for posterior CSVs")
    p_sample.add_argument("--save-samples", action="store_true")
    p_sample.set_defaults(func=_cmd_sample)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except FitDivergedError as exc:
        print(f"fit diverged: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
