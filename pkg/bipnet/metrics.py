"""
Selection and prediction scores for fitted models
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix, f1_score, mean_squared_error, roc_auc_score

from bipnet.model_core import ValidationError

MPP_THRESHOLD = 0.5


@dataclass
class SelectionReport:
    fnr: float
    fpr: float
    f_measure: float
    n_selected: int
    n_true: int
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self):
        return asdict(self)


def select_features(mpp_eta, threshold=MPP_THRESHOLD):
    """Feature j is selected when max_l MPP(eta_lj) > threshold. Accepts one r x p array or a list."""
    if isinstance(mpp_eta, (list, tuple)):
        return [select_features(m, threshold) for m in mpp_eta]
    return np.asarray(mpp_eta).max(axis=0) > threshold


def selection_scores(selected, truth):
    selected = np.asarray(selected, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if selected.shape != truth.shape:
        raise ValidationError(f"selected has shape {selected.shape}, truth has {truth.shape}")
    tn, fp, fn, tp = confusion_matrix(truth, selected, labels=[False, True]).ravel()
    n_true = int(tp + fn)
    n_null = int(tn + fp)
    fnr = 100.0 * fn / n_true if n_true else 0.0
    fpr = 100.0 * fp / n_null if n_null else 0.0
    f = 100.0 * f1_score(truth, selected, zero_division=0)
    return SelectionReport(fnr=float(fnr), fpr=float(fpr), f_measure=float(f),
                           n_selected=int(selected.sum()), n_true=n_true,
                           tp=int(tp), fp=int(fp), fn=int(fn), tn=int(tn))


def auc_from_mpp(scores, labels):
    """Mann-Whitney AUC (ties count one half)."""
    labels = np.asarray(labels, dtype=bool)
    if labels.all() or not labels.any():
        raise ValidationError("AUC needs at least one positive and one negative label")
    return float(roc_auc_score(labels, np.asarray(scores, dtype=float)))


def mse(pred, actual):
    return float(mean_squared_error(np.asarray(actual, dtype=float), np.asarray(pred, dtype=float)))


def feature_auc(mpp_eta, truth):
    return auc_from_mpp(np.asarray(mpp_eta).max(axis=0), truth)


def group_auc(mpp_group, group_truth, mpp_gamma=None, threshold=MPP_THRESHOLD):
    """AUC of max_l MPP(r_lk) per group; given mpp_gamma, only active components are scored."""
    mpp_group = np.asarray(mpp_group)
    if mpp_gamma is not None:
        active = np.asarray(mpp_gamma) > threshold
        if active.any():
            mpp_group = mpp_group[active]
    return auc_from_mpp(mpp_group.max(axis=0), group_truth)


def active_components(mpp_gamma, threshold=MPP_THRESHOLD):
    """Indices of components with MPP(gamma) > threshold, per block."""
    if isinstance(mpp_gamma, (list, tuple)):
        return [active_components(m, threshold) for m in mpp_gamma]
    return [int(l) for l in np.flatnonzero(np.asarray(mpp_gamma) > threshold)]


def summarize_replicates(records, by=None):
    """Mean and standard error of every numeric metric across replicates."""
    df = pd.DataFrame(records)
    if df.empty:
        raise ValidationError("no replicate records to summarise")
    keys = [] if by is None else list(by)
    metrics = [c for c in df.select_dtypes(include="number").columns if c not in keys and c != "replicate"]

    def stats_row(frame):
        row = {}
        for metric in metrics:
            values = frame[metric].dropna()
            row[f"{metric}_mean"] = values.mean()
            row[f"{metric}_se"] = values.std(ddof=1) / np.sqrt(len(values)) if len(values) > 1 else 0.0
        return row

    if not keys:
        return pd.DataFrame([stats_row(df)])
    rows = []
    for key, frame in df.groupby(keys, sort=False):
        key = key if isinstance(key, tuple) else (key,)
        rows.append({**dict(zip(keys, key)), **stats_row(frame)})
    return pd.DataFrame(rows)
