"""
Fit, predict, simulate and evaluate from the command line.

    python -m bipnet fit --views X1.csv X2.csv --outcome y.csv --groups groups_X1.csv groups_X2.csv
    python -m bipnet predict --model_dir out --views test/X1.csv test/X2.csv
    python -m bipnet simulate --scenario 1 --setting 1 --output data
    python -m bipnet evaluate --model_dir out --truth data/truth.json --test_dir data/test
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import joblib
import numpy as np
import pandas as pd

from bipnet.create_datasets import ScenarioSpec, simulate, write_dataset
from bipnet.data_io import (
    read_group_table,
    read_json,
    read_matrix,
    read_outcome,
    write_csv_atomic,
    write_json_atomic,
    write_matrix,
)
from bipnet.metrics import (
    active_components,
    feature_auc,
    group_auc,
    mse,
    select_features,
    selection_scores,
)
from bipnet.model_core import (
    DEFAULT_OPTIONS,
    OMICS,
    ConfigError,
    GroupDesign,
    Hyperparameters,
    NumericalError,
    SamplerOptions,
    ValidationError,
    ViewSet,
    make_group_design,
    validate_and_standardize,
)
from bipnet.predict import FittedModel, attach_mode_loadings, predict_viewset
from bipnet.sampler import run_chains

logger = logging.getLogger(__name__)

MODEL_FILE = "model.joblib"
EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
BANNER = "=" * 70

HP_KEYS = {f.name: f.type for f in fields(Hyperparameters)}
OPTION_KEYS = {"loading_conditional", "exact_pseudo_prior", "posterior_mode_variant", "log_every"}
PATH_KEYS = {"views", "outcome", "covariates", "groups", "output"}
FLAG_KEYS = {"center_outcome", "no_groups"}


@dataclass
class RunConfig:
    hp: Hyperparameters = field(default_factory=Hyperparameters)
    options: SamplerOptions = field(default_factory=SamplerOptions)
    views: list = field(default_factory=list)
    outcome: str | None = None
    covariates: str | None = None
    groups: list = field(default_factory=list)
    output: str = "bip_output"
    center_outcome: bool = True
    no_groups: bool = False

    def validate(self):
        self.hp.validate()
        self.options.validate()
        if not self.views:
            raise ConfigError("at least one view file is required")
        if self.outcome is None:
            raise ConfigError("an outcome file is required")
        if self.groups and len(self.groups) != len(self.views):
            raise ConfigError(f"{len(self.groups)} group files given for {len(self.views)} views")
        for path in [*self.views, self.outcome, self.covariates, *self.groups]:
            if path is not None and not Path(path).exists():
                raise ValidationError(f"file not found: {path}")
        return self


def _parse_bool(value):
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def _coerce(key, value):
    if key in ("views", "groups"):
        return value if isinstance(value, list) else [v.strip() for v in str(value).split(",") if v.strip()]
    if key in FLAG_KEYS or key == "exact_pseudo_prior":
        return value if isinstance(value, bool) else _parse_bool(value)
    if key in ("r", "n_iter", "burn_in", "thin", "seed", "n_chains", "log_every"):
        try:
            return int(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key} must be an integer, got {value!r}") from exc
    if key in HP_KEYS:
        try:
            return float(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key} must be a number, got {value!r}") from exc
    return value


def read_config_file(path):
    """Flat key=value file; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path.name}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def build_config(file_values=None, overrides=None):
    """defaults < config file < command-line flags."""
    merged = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in HP_KEYS and key not in OPTION_KEYS and key not in PATH_KEYS and key not in FLAG_KEYS:
                raise ConfigError(f"unknown configuration key: {key}")
            merged[key] = _coerce(key, value)
    hp = replace(Hyperparameters(), **{k: v for k, v in merged.items() if k in HP_KEYS})
    options = replace(SamplerOptions(), **{k: v for k, v in merged.items() if k in OPTION_KEYS})
    rest = {k: v for k, v in merged.items() if k in PATH_KEYS or k in FLAG_KEYS}
    return RunConfig(hp=hp, options=options, **rest)


# model fitting

def fit_model(raw, groups, hp, options=DEFAULT_OPTIONS, center_outcome=True, use_groups=True):
    """Standardize, sample and summarise; returns a FittedModel with posterior-mode loadings."""
    hp.validate()
    options.validate()
    data, record = validate_and_standardize(raw, center_outcome=center_outcome)
    if groups is None:
        groups = GroupDesign.empty(data.M)
    use_groups = use_groups and groups.present
    summary = run_chains(data, groups, hp, options=options, use_groups=use_groups)
    fitted = FittedModel(summary=summary, standardization=record, hp=hp, options=options,
                         train_blocks=data.blocks(), use_groups=use_groups,
                         group_names=groups.group_names if use_groups else None)
    return attach_mode_loadings(fitted)


def _read_frames(paths):
    frames = []
    for path in paths:
        values, ids, cols = read_matrix(path)
        frames.append(pd.DataFrame(values, index=ids, columns=cols))
    return frames


def _aligned(frame, ids, name):
    if set(frame.index) != set(ids) or len(frame.index) != len(ids):
        raise ValidationError(f"{name}: sample IDs do not match the first view")
    return frame.loc[ids]


def load_viewset(view_paths, outcome_path=None, covariates_path=None, view_names=None):
    frames = _read_frames(view_paths)
    names = view_names or [Path(p).stem for p in view_paths]
    ids = list(frames[0].index)
    frames = [_aligned(f, ids, name) for f, name in zip(frames, names)]
    outcome = None
    if outcome_path is not None:
        y, y_ids = read_outcome(outcome_path)
        outcome = _aligned(pd.DataFrame({"y": y}, index=y_ids), ids, "outcome")["y"].to_numpy()
    covariates = covariate_names = None
    if covariates_path is not None:
        cov = _aligned(_read_frames([covariates_path])[0], ids, "covariates")
        covariates, covariate_names = cov.to_numpy(), list(cov.columns)
    return ViewSet(views=[f.to_numpy() for f in frames], outcome=outcome, covariates=covariates,
                   view_names=names, feature_names=[list(f.columns) for f in frames],
                   covariate_names=covariate_names, sample_ids=ids)


def _match_training_columns(raw, record):
    """Reorder new-sample columns to the training order; a mismatch names the view."""
    views = []
    for m, X in enumerate(raw.views):
        name = record.view_names[m]
        expected = record.feature_names[m]
        got = raw.feature_names[m]
        if set(got) != set(expected) or len(got) != len(expected):
            raise ValidationError(f"column mismatch in view {name}: features differ from training")
        views.append(pd.DataFrame(X, columns=got)[expected].to_numpy())
    covariates = raw.covariates
    if record.covariate_names is not None and raw.covariates is not None:
        if set(raw.covariate_names) != set(record.covariate_names):
            raise ValidationError("column mismatch in covariates: features differ from training")
        covariates = pd.DataFrame(raw.covariates, columns=raw.covariate_names)[record.covariate_names].to_numpy()
    return ViewSet(views=views, outcome=raw.outcome, covariates=covariates,
                   view_names=list(record.view_names), feature_names=record.feature_names,
                   covariate_names=record.covariate_names, sample_ids=raw.sample_ids)


# result files

def _component_columns(r):
    return [f"comp_{l + 1}" for l in range(r)]


def write_fit_outputs(fitted, data_ids, out_dir, config, wall_time):
    out_dir = Path(out_dir)
    summary = fitted.summary
    record = fitted.standardization
    comps = _component_columns(summary.r)

    mpp_gamma = pd.DataFrame(np.vstack(summary.mpp_gamma), index=pd.Index(summary.block_names, name="block"),
                             columns=comps)
    write_csv_atomic(mpp_gamma, out_dir / "mpp_gamma.csv")

    row_names = {0: ["y"]}
    for m, kind in enumerate(summary.block_kinds):
        if kind == OMICS:
            row_names[m] = record.feature_names[m - 1]
        elif m > 0:
            row_names[m] = record.covariate_names
    for m, name in enumerate(summary.block_names):
        index = pd.Index(row_names[m], name="feature")
        if summary.block_kinds[m] == OMICS:
            write_csv_atomic(pd.DataFrame(summary.mpp_eta[m].T, index=index, columns=comps),
                             out_dir / f"mpp_eta_{name}.csv")
        write_csv_atomic(pd.DataFrame(summary.A_mode[m].T, index=index, columns=comps),
                         out_dir / f"loadings_{name}.csv")
        if summary.mpp_group[m] is not None:
            groups = pd.Index(fitted.group_names[m - 1], name="group")
            write_csv_atomic(pd.DataFrame(summary.mpp_group[m].T, index=groups, columns=comps),
                             out_dir / f"mpp_group_{name}.csv")

    write_matrix(summary.U_bar, data_ids, comps, out_dir / "u_scores.csv")
    joblib.dump(fitted, out_dir / MODEL_FILE)

    fit_info = {
        "hyperparameters": fitted.hp.to_dict(),
        "options": fitted.options.to_dict(),
        "seed": fitted.hp.seed,
        "model": "BIPnet" if fitted.use_groups else "BIP",
        "center_outcome": record.center_outcome,
        "outcome_mean": record.outcome_mean,
        "views": record.view_names,
        "inputs": {"views": config.views, "outcome": config.outcome,
                   "covariates": config.covariates, "groups": config.groups},
        "n_samples": len(data_ids),
        "n_retained": summary.n_retained,
        "alpha0_hat": summary.alpha0_hat,
        "active_components": dict(zip(summary.block_names, active_components(summary.mpp_gamma))),
        "diagnostics": summary.diagnostics,
        "wall_time_sec": wall_time,
    }
    write_json_atomic(fit_info, out_dir / "fit.json")
    return out_dir


def load_model(model_dir):
    path = Path(model_dir) / MODEL_FILE
    if not path.exists():
        raise ValidationError(f"no fitted model in {model_dir}")
    return joblib.load(path)


# evaluation

def evaluate_model(fitted, truth, test=None):
    """Selection scores per view against a truth manifest, plus test MSE when test data is given."""
    record = fitted.standardization
    summary = fitted.summary
    report = {"model": "BIPnet" if fitted.use_groups else "BIP", "views": {}}
    selected = select_features(summary.mpp_eta)
    for v, view in enumerate(record.view_names):
        m = v + 1
        if view not in truth["views"]:
            raise ValidationError(f"truth manifest has no entry for view {view}")
        signal = set(truth["views"][view]["signal_features"])
        labels = np.array([f in signal for f in record.feature_names[v]])
        scores = selection_scores(selected[m], labels)
        entry = {"fnr": scores.fnr, "fpr": scores.fpr, "f_measure": scores.f_measure,
                 "n_selected": scores.n_selected, "n_signal": scores.n_true}
        if 0 < labels.sum() < labels.size:
            entry["feature_auc"] = feature_auc(summary.mpp_eta[m], labels)
        if summary.mpp_group[m] is not None:
            signal_groups = set(truth["views"][view]["signal_groups"])
            group_labels = np.array([g in signal_groups for g in fitted.group_names[v]])
            if 0 < group_labels.sum() < group_labels.size:
                entry["group_auc"] = group_auc(summary.mpp_group[m], group_labels, summary.mpp_gamma[m])
        entry["active_components"] = active_components(summary.mpp_gamma[m])
        report["views"][view] = entry
    report["outcome_active_components"] = active_components(summary.mpp_gamma[0])
    if test is not None:
        pred = predict_viewset(fitted, test)
        report["mse"] = mse(pred, test.outcome)
        report["n_test"] = int(test.outcome.shape[0])
    return report


def flatten_report(report):
    """One flat dict of scalar metrics, for replicate tables."""
    row = {"mse": report.get("mse", np.nan)}
    for view, entry in report["views"].items():
        for key in ("fnr", "fpr", "f_measure", "feature_auc", "group_auc"):
            if key in entry:
                row[f"{view}_{key}"] = entry[key]
    return row


# subcommands

def cmd_fit(config):
    config.validate()
    print(BANNER)
    print("FIT")
    print(BANNER)
    raw = load_viewset(config.views, config.outcome, config.covariates)
    groups = None
    if config.groups and not config.no_groups:
        groups = make_group_design(raw.feature_names, [read_group_table(p) for p in config.groups])
    print(f"Samples: {raw.n}   Views: {', '.join(f'{n} ({X.shape[1]})' for n, X in zip(raw.view_names, raw.views))}")
    print(f"Model: {'BIPnet' if groups is not None else 'BIP'}   r={config.hp.r}   "
          f"n_iter={config.hp.n_iter}   burn_in={config.hp.burn_in}   seed={config.hp.seed}")

    started = time.perf_counter()
    fitted = fit_model(raw, groups, config.hp, config.options, config.center_outcome,
                       use_groups=groups is not None)
    wall = time.perf_counter() - started
    out_dir = write_fit_outputs(fitted, raw.sample_ids, config.output, config, wall)

    print("\nComponent MPPs:")
    for name, mpp in zip(fitted.summary.block_names, fitted.summary.mpp_gamma):
        print(f"  {name:<12} " + "  ".join(f"{v:.3f}" for v in mpp))
    for m, name in enumerate(fitted.summary.block_names):
        if fitted.summary.block_kinds[m] == OMICS:
            n_sel = int(select_features(fitted.summary.mpp_eta[m]).sum())
            print(f"  {name:<12} features selected (MPP > 0.5): {n_sel}")
    print(f"\nWall time: {wall:.1f}s   Output: {out_dir}")
    return EXIT_OK


def cmd_predict(args):
    fitted = load_model(args.model_dir)
    record = fitted.standardization
    if len(args.views) != len(record.view_names):
        raise ValidationError(f"model has {len(record.view_names)} views, got {len(args.views)} files")
    raw = load_viewset(args.views, args.outcome, args.covariates, view_names=record.view_names)
    raw = _match_training_columns(raw, record)
    y_hat = predict_viewset(fitted, raw)
    out = Path(args.output or args.model_dir) / "predictions.csv"
    write_csv_atomic(pd.DataFrame({"sample_id": raw.sample_ids, "y_hat": y_hat}), out, index=False)
    print(f"Predictions for {len(y_hat)} samples written to {out}")
    if raw.outcome is not None:
        print(f"Test MSE: {mse(y_hat, raw.outcome):.4f}")
    return EXIT_OK


def cmd_simulate(args):
    spec = ScenarioSpec(scenario=args.scenario, setting=args.setting, overlap=args.overlap, n=args.n,
                        p1=args.p1, p2=args.p2, seed=args.seed, iid_noise=args.iid_noise, n_test=args.n_test)
    sim = simulate(spec)
    out = write_dataset(sim, args.output)
    print(f"{spec.label()}: n={spec.n} (+{spec.n_test} test), p=({spec.p1}, {spec.p2}) -> {out}")
    for view, entry in sim.truth_manifest()["views"].items():
        print(f"  {view}: {len(entry['signal'])} signal features in {len(entry['signal_groups'])} groups")
    return EXIT_OK


def cmd_evaluate(args):
    fitted = load_model(args.model_dir)
    truth = read_json(args.truth)
    test = None
    if args.test_dir is not None:
        test_dir = Path(args.test_dir)
        record = fitted.standardization
        paths = [test_dir / f"{view}.csv" for view in record.view_names]
        covariates = test_dir / "covariates.csv" if record.covariate_names is not None else None
        test = load_viewset(paths, test_dir / "y.csv", covariates, view_names=record.view_names)
        test = _match_training_columns(test, record)
    report = evaluate_model(fitted, truth, test)
    out = Path(args.output or args.model_dir) / "report.json"
    write_json_atomic(report, out)

    print(BANNER)
    print(f"EVALUATION ({report['model']})")
    print(BANNER)
    print(f"  {'view':<8} {'FNR':>8} {'FPR':>8} {'F':>8} {'AUC':>8} {'grpAUC':>8}")
    for view, e in report["views"].items():
        print(f"  {view:<8} {e['fnr']:>8.2f} {e['fpr']:>8.2f} {e['f_measure']:>8.2f} "
              f"{e.get('feature_auc', np.nan):>8.3f} {e.get('group_auc', np.nan):>8.3f}")
    if "mse" in report:
        print(f"  Test MSE: {report['mse']:.4f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="bipnet", description="Bayesian integrative factor analysis")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run the sampler and write posterior summaries")
    fit.add_argument("--config", help="key=value configuration file")
    fit.add_argument("--views", nargs="+")
    fit.add_argument("--outcome")
    fit.add_argument("--covariates")
    fit.add_argument("--groups", nargs="+")
    fit.add_argument("--output")
    fit.add_argument("--no_groups", "--no-groups", action="store_true", default=None,
                     help="ignore group files (BIP)")
    fit.add_argument("--center_outcome", action=argparse.BooleanOptionalAction, default=None)
    for key in HP_KEYS:
        fit.add_argument(f"--{key}", default=None)
    fit.add_argument("--loading_conditional", choices=["supplement", "conjugate"])
    fit.add_argument("--posterior_mode_variant", choices=["scaled", "conditional"])
    fit.add_argument("--exact_pseudo_prior", action=argparse.BooleanOptionalAction, default=None)
    fit.add_argument("--log_every", default=None)

    predict = sub.add_parser("predict", help="predict outcomes for new samples")
    predict.add_argument("--model_dir", required=True)
    predict.add_argument("--views", nargs="+", required=True)
    predict.add_argument("--covariates")
    predict.add_argument("--outcome", help="optional observed outcome, prints test MSE")
    predict.add_argument("--output")

    sim = sub.add_parser("simulate", help="generate a simulation scenario")
    sim.add_argument("--scenario", type=int, default=1)
    sim.add_argument("--setting", type=int)
    sim.add_argument("--overlap", action=argparse.BooleanOptionalAction, default=True)
    sim.add_argument("--n", type=int, default=200)
    sim.add_argument("--p1", type=int, default=500)
    sim.add_argument("--p2", type=int, default=500)
    sim.add_argument("--n_test", type=int, default=200)
    sim.add_argument("--seed", type=int, default=42)
    sim.add_argument("--iid_noise", action="store_true")
    sim.add_argument("--output", required=True)

    ev = sub.add_parser("evaluate", help="score a fitted model against a truth manifest")
    ev.add_argument("--model_dir", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--test_dir")
    ev.add_argument("--output")
    return parser


def config_from_args(args):
    file_values = read_config_file(args.config) if args.config else {}
    keys = set(HP_KEYS) | OPTION_KEYS | PATH_KEYS | FLAG_KEYS
    overrides = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    return build_config(file_values, overrides)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fit":
            return cmd_fit(config_from_args(args))
        if args.command == "predict":
            return cmd_predict(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        return cmd_evaluate(args)
    except (ValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
