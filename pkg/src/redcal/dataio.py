"""CSV and JSON interchange formats.

Dataset CSV schema: ``unit_id,weight,y_0..y_{d-1},f1_0..f1_{d-1},
f2_0..f2_{d-1}``.  The weight column is optional (uniform when absent),
lines starting with '#' are ignored, and floats are written with full
shortest-repr precision so a save/load round trip is bit exact.

Loss-family JSON: ``{"k": K, "d": outcome_dim, "rescaled": bool,
"losses": [{"name": ..., "matrix": [[...]]}]}``.  Raw families
(``rescaled: false``) are squashed into [0,1] on load, one global affine
map per loss.
"""
from __future__ import annotations

import io
import json
import re

import numpy as np
import pandas as pd

from .core import (
    EmpiricalDataset,
    InputError,
    LossFamily,
    LossFunction,
    RedcalError,
    rescale_loss,
)


class MissingColumnError(RedcalError):
    """A required CSV column is absent."""

    def __init__(self, column: str):
        super().__init__(f"missing required column {column!r}")
        self.column = column


class RangeViolationError(RedcalError):
    """A CSV cell is outside its legal range (or not finite)."""

    def __init__(self, row: int, column: str, value):
        super().__init__(f"value {value!r} out of range at row {row}, column {column!r}")
        self.row = row
        self.column = column
        self.value = value


class WeightSumError(RedcalError):
    """Weights are present but do not sum to 1."""

    def __init__(self, total: float):
        super().__init__(f"weights sum to {total!r}, expected 1")
        self.total = total


def _block_columns(columns, prefix: str) -> list[str]:
    """Contiguous `prefix`_0..`prefix`_{d-1} column names, validated."""
    pattern = re.compile(rf"^{re.escape(prefix)}_(\d+)$")
    found = {}
    for name in columns:
        match = pattern.match(name)
        if match:
            found[int(match.group(1))] = name
    if not found:
        raise MissingColumnError(f"{prefix}_0")
    d = max(found) + 1
    ordered = []
    for j in range(d):
        if j not in found:
            raise MissingColumnError(f"{prefix}_{j}")
        ordered.append(found[j])
    return ordered


def _check_unit_interval(frame: pd.DataFrame, columns: list[str]) -> None:
    for col in columns:
        values = frame[col].to_numpy(dtype=np.float64)
        bad = ~np.isfinite(values) | (values < 0.0) | (values > 1.0)
        if bad.any():
            row = int(np.argmax(bad))
            raise RangeViolationError(row=row + 1, column=col, value=frame[col].iloc[row])


def load_dataset(source) -> EmpiricalDataset:
    """Read a dataset CSV from a path or file object.

    Row/column coordinates in range errors are 1-based data rows and
    schema column names.
    """
    try:
        # the default C parser can be one ulp off; round_trip keeps the
        # save/load cycle bit exact
        frame = pd.read_csv(source, comment="#", float_precision="round_trip")
    except (ValueError, OSError) as err:
        raise InputError(f"cannot parse dataset CSV: {err}") from err
    if "unit_id" not in frame.columns:
        raise MissingColumnError("unit_id")
    y_cols = _block_columns(frame.columns, "y")
    f1_cols = _block_columns(frame.columns, "f1")
    f2_cols = _block_columns(frame.columns, "f2")
    if not (len(y_cols) == len(f1_cols) == len(f2_cols)):
        raise InputError("y, f1, and f2 blocks must share one dimension")
    _check_unit_interval(frame, y_cols + f1_cols + f2_cols)
    ids = frame["unit_id"].to_numpy()
    if not np.issubdtype(ids.dtype, np.number) or np.any(ids != ids.astype(np.int64)):
        raise InputError("unit_id must be integral")
    ids = ids.astype(np.int64)
    if np.unique(ids).size != ids.size:
        raise InputError("unit_id values must be unique")
    if "weight" in frame.columns:
        weights = frame["weight"].to_numpy(dtype=np.float64)
        bad = ~np.isfinite(weights) | (weights <= 0.0) | (weights > 1.0)
        if bad.any():
            row = int(np.argmax(bad))
            raise RangeViolationError(row=row + 1, column="weight", value=frame["weight"].iloc[row])
        total = float(weights.sum())
        if abs(total - 1.0) > 1e-9:
            raise WeightSumError(total)
    else:
        weights = None
    return EmpiricalDataset.build(
        unit_ids=ids,
        labels=frame[y_cols].to_numpy(dtype=np.float64),
        pred_1=frame[f1_cols].to_numpy(dtype=np.float64),
        pred_2=frame[f2_cols].to_numpy(dtype=np.float64),
        weights=weights,
    )


def save_dataset(data: EmpiricalDataset, dest, state=None, comment: str | None = None) -> None:
    """Write a dataset CSV to a path or file object.

    ``state`` substitutes a PredictorPair's current predictions for the
    stored ones (used to export patched predictors).  ``comment`` becomes
    a leading '#' line the loader skips.
    """
    d = data.d
    preds = state.predictions if state is not None else data.predictions
    frame = pd.DataFrame({"unit_id": data.unit_ids, "weight": data.weights})
    for j in range(d):
        frame[f"y_{j}"] = data.labels[:, j]
    for j in range(d):
        frame[f"f1_{j}"] = preds[1][:, j]
    for j in range(d):
        frame[f"f2_{j}"] = preds[2][:, j]
    buffer = io.StringIO()
    if comment:
        buffer.write(f"# {comment}\n")
    frame.to_csv(buffer, index=False)
    text = buffer.getvalue()
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)


def load_loss_family(source) -> LossFamily:
    """Read a loss-family JSON file (path or file object)."""
    try:
        if hasattr(source, "read"):
            payload = json.load(source)
        else:
            with open(source, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
    except json.JSONDecodeError as err:
        raise InputError(f"cannot parse loss JSON: {err}") from err
    try:
        k = int(payload["k"])
        d = int(payload["d"])
        rescaled = bool(payload["rescaled"])
        entries = payload["losses"]
    except (KeyError, TypeError, ValueError) as err:
        raise InputError(f"loss JSON missing required fields: {err}") from err
    if not entries:
        raise InputError("loss JSON contains no losses")
    losses = []
    for idx, entry in enumerate(entries):
        name = str(entry.get("name", f"loss_{idx}"))
        matrix = np.asarray(entry["matrix"], dtype=np.float64)
        if matrix.shape != (k, d):
            raise InputError(
                f"loss {name!r} has shape {matrix.shape}, header says {(k, d)}")
        if rescaled:
            losses.append(LossFunction(action_losses=matrix, name=name))
        else:
            losses.append(rescale_loss(matrix, name=name))
    return LossFamily(tuple(losses))


def save_loss_family(family: LossFamily, dest) -> None:
    """Write a loss-family JSON file (path or file object); always rescaled."""
    payload = {
        "k": family.k,
        "d": family.outcome_dim,
        "rescaled": True,
        "losses": [
            {"name": loss.name, "matrix": loss.action_losses.tolist()}
            for loss in family
        ],
    }
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    if hasattr(dest, "write"):
        dest.write(text + "\n")
    else:
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
