"""
Monte-Carlo replicate runner shared by the experiment scripts
"""

from __future__ import annotations

import logging
import time

import numpy as np
import pandas as pd

from bipnet.create_datasets import simulate
from bipnet.metrics import summarize_replicates
from bipnet.model_core import DEFAULT_OPTIONS, GroupDesign, make_group_design
from bipnet.run_models import evaluate_model, fit_model, flatten_report

logger = logging.getLogger(__name__)

# Replicate-mean targets for BIPnet at full scale (n = 200, p = 500, n_test = 200).
# A bound is (low, high); None leaves that side open.
ACCEPTANCE_TARGETS = {
    "scenario1_setting1": {
        "X1_fnr": (None, 2.0), "X2_fnr": (None, 2.0),
        "X1_fpr": (None, 1.0), "X2_fpr": (None, 1.0),
        "X1_f_measure": (95.0, None), "X2_f_measure": (95.0, None),
        "mse": (1.8, 2.5),
        "X1_group_auc": (0.95, None), "X2_group_auc": (0.95, None),
    },
    "scenario1_setting5": {
        "X1_group_auc": (0.95, None), "X2_group_auc": (0.95, None),
    },
    "scenario2_overlap": {
        "X1_f_measure": (95.0, None), "X2_f_measure": (95.0, None),
        "mse": (1.9, 2.5),
    },
    "scenario3_overlap": {
        "two_shared_components": (0.8, None),
    },
}


def run_replicate(spec, hp, use_groups=True, options=DEFAULT_OPTIONS):
    """Simulate one dataset (train + test), fit BIP or BIPnet, score it. Returns (row, fitted)."""
    sim = simulate(spec)
    raw = sim.to_viewset()
    groups = make_group_design(raw.feature_names, sim.group_tables()) if use_groups else GroupDesign.empty(raw.M)
    started = time.perf_counter()
    fitted = fit_model(raw, groups, hp, options, use_groups=use_groups)
    report = evaluate_model(fitted, sim.truth_manifest(), sim.test_viewset())
    row = flatten_report(report)
    row["model"] = report["model"]
    row["scenario"] = spec.label()
    row["seconds"] = time.perf_counter() - started
    logger.debug("%s seed %d (%s): %s", spec.label(), spec.seed, row["model"], row)
    components = [set(report["views"][view]["active_components"]) for view in sim.view_names]
    for view, active in zip(sim.view_names, components):
        row[f"{view}_components"] = ",".join(str(l + 1) for l in sorted(active))
    shared = set.intersection(*components)
    row["n_shared_components"] = len(shared)
    row["two_shared_components"] = float(len(shared) >= 2)
    return row, fitted


def run_replicates(make_spec, hp, n_replicates, use_groups=True, options=DEFAULT_OPTIONS, label=""):
    """make_spec(replicate) -> ScenarioSpec; replicate seeds are the caller's business."""
    rows = []
    for rep in range(n_replicates):
        spec = make_spec(rep)
        row, _ = run_replicate(spec, hp, use_groups, options)
        row["replicate"] = rep
        rows.append(row)
        print(f"  {label} rep {rep + 1}/{n_replicates}: MSE={row['mse']:.3f}  "
              f"F(X1)={row.get('X1_f_measure', np.nan):.1f}  F(X2)={row.get('X2_f_measure', np.nan):.1f}  "
              f"({row['seconds']:.0f}s)")
    return pd.DataFrame(rows)


def mean_se_table(results, by):
    """mean (se) strings per metric, the layout used in the printed summaries."""
    summary = summarize_replicates(results, by=by)
    metrics = sorted({c[:-5] for c in summary.columns if c.endswith("_mean")})
    table = summary[list(by)].copy()
    for metric in metrics:
        table[metric] = [f"{m:.2f} ({s:.2f})" for m, s in zip(summary[f"{metric}_mean"], summary[f"{metric}_se"])]
    return table


def check_targets(results, targets=None, model="BIPnet"):
    """Replicate means of one model against per-scenario bounds; one row per (scenario, metric).

    Scenarios absent from results are skipped; a metric missing for a present scenario fails.
    """
    targets = ACCEPTANCE_TARGETS if targets is None else targets
    results = results[results["model"] == model]
    rows = []
    for scenario, bounds in targets.items():
        frame = results[results["scenario"] == scenario]
        if frame.empty:
            continue
        for metric, (low, high) in bounds.items():
            value = frame[metric].mean() if metric in frame else np.nan
            passed = bool(np.isfinite(value)
                          and (low is None or value >= low)
                          and (high is None or value <= high))
            rows.append({"scenario": scenario, "metric": metric, "value": value, "low": low, "high": high,
                         "n_replicates": len(frame), "passed": passed})
    if not rows:
        logger.warning("no replicate rows match any target scenario for %s", model)
    return pd.DataFrame(rows, columns=["scenario", "metric", "value", "low", "high", "n_replicates", "passed"])


def print_targets(targets):
    print("\nAcceptance targets (replicate means):")
    for row in targets.itertuples(index=False):
        low = "-inf" if row.low is None else f"{row.low:g}"
        high = "inf" if row.high is None else f"{row.high:g}"
        status = "PASS" if row.passed else "FAIL"
        print(f"  {row.scenario:<20} {row.metric:<22} {row.value:>8.3f}  in [{low}, {high}]  {status}")
