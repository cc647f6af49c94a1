"""
CSV / JSON plumbing: matrix files carry feature names in the header row and
sample IDs in the first column; every write goes to a temp sibling first.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import pandas as pd

from bipnet.model_core import ValidationError

FLOAT_FORMAT = "%.10g"


def _atomic(path, write):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    write(tmp)
    os.replace(tmp, path)
    return path


def write_csv_atomic(df, path, index=True):
    return _atomic(path, lambda tmp: df.to_csv(tmp, index=index, float_format=FLOAT_FORMAT))


def write_json_atomic(obj, path):
    def write(tmp):
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=False)
            fh.write("\n")
    return _atomic(path, write)


def matrix_frame(X, sample_ids, feature_names):
    return pd.DataFrame(np.asarray(X), index=pd.Index(sample_ids, name="sample_id"), columns=feature_names)


def write_matrix(X, sample_ids, feature_names, path):
    return write_csv_atomic(matrix_frame(X, sample_ids, feature_names), path)


def read_matrix(path):
    """Returns (values, sample_ids, column_names)."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    df = pd.read_csv(path, index_col=0)
    try:
        values = df.to_numpy(dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path.name}: non-numeric entries") from exc
    return values, [str(i) for i in df.index], [str(c) for c in df.columns]


def read_outcome(path):
    values, ids, _ = read_matrix(path)
    if values.shape[1] != 1:
        raise ValidationError(f"{Path(path).name}: outcome file must have exactly one value column")
    return values[:, 0], ids


def read_group_table(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"group file not found: {path}")
    table = pd.read_csv(path, dtype=str)
    if table.shape[1] != 2:
        raise ValidationError(f"{path.name}: group file needs exactly two columns (feature, group)")
    return table.dropna()


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
