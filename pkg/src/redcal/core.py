"""Domain types and primitives for reconciling a pair of predictors.

A dataset is a weighted table of units, each carrying a label vector in
[0,1]^d and one prediction vector per predictor.  Losses are linear in the
outcome: a loss function is a matrix with one coefficient row per action,
and the loss of playing action ``a`` against outcome ``y`` is ``<y, l_a>``.
Binary problems (d = 1) store scalars but evaluate losses through the
implicit two-class encoding ``[1 - v, v]``, so their loss matrices have two
columns.

All reductions run in canonical ascending unit-id order, which makes every
metric deterministic for a given dataset regardless of input row order.
Everything in this module is a pure function of immutable inputs except
:class:`PredictorPair`, the single mutable state object the calibration
loops patch in place.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WEIGHT_SUM_TOL = 1e-9


class RedcalError(Exception):
    """Base class for all errors raised by this package."""


class InputError(RedcalError):
    """Malformed data: bad ranges, non-finite values, duplicate ids."""


class ConfigurationError(RedcalError):
    """Invalid run parameters."""


class DimensionError(RedcalError):
    """Shape mismatch between datasets, predictions, and loss matrices."""


def _float_array(values, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class EmpiricalDataset:
    """Weighted empirical distribution over units with two prediction tables.

    Rows are kept sorted by unit id; use :meth:`build` to construct from
    unsorted inputs.  Weights are positive and sum to one, labels and
    predictions live in [0,1] coordinate-wise.
    """

    unit_ids: np.ndarray                     # (n,) int64, strictly increasing
    labels: np.ndarray                       # (n, d)
    predictions: dict[int, np.ndarray]       # {1: (n, d), 2: (n, d)}
    weights: np.ndarray                      # (n,), each in (0, 1], sums to 1

    def __post_init__(self) -> None:
        ids = np.asarray(self.unit_ids, dtype=np.int64)
        object.__setattr__(self, "unit_ids", ids)
        if ids.ndim != 1 or ids.size == 0:
            raise InputError("unit_ids must be a non-empty 1-d array")
        if np.any(np.diff(ids) <= 0):
            raise InputError("unit_ids must be unique and sorted ascending")
        labels = _float_array(self.labels, "labels", 2)
        object.__setattr__(self, "labels", labels)
        n, d = labels.shape
        if n != ids.size:
            raise DimensionError("labels row count does not match unit_ids")
        if d < 1:
            raise DimensionError("label dimension must be at least 1")
        if np.any(labels < 0.0) or np.any(labels > 1.0):
            raise InputError("labels must lie in [0, 1]")
        if set(self.predictions) != {1, 2}:
            raise InputError("predictions must be keyed by predictor indices 1 and 2")
        tables = {}
        for idx in (1, 2):
            table = _float_array(self.predictions[idx], f"predictions[{idx}]", 2)
            if table.shape != (n, d):
                raise DimensionError(f"predictions[{idx}] must have shape {(n, d)}")
            if np.any(table < 0.0) or np.any(table > 1.0):
                raise InputError(f"predictions[{idx}] must lie in [0, 1]")
            tables[idx] = table
        object.__setattr__(self, "predictions", tables)
        weights = _float_array(self.weights, "weights", 1)
        object.__setattr__(self, "weights", weights)
        if weights.shape != (n,):
            raise DimensionError("weights length does not match unit_ids")
        if np.any(weights <= 0.0) or np.any(weights > 1.0):
            raise InputError("weights must lie in (0, 1]")
        if abs(float(weights.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise InputError(f"weights must sum to 1 within {WEIGHT_SUM_TOL}")

    @classmethod
    def build(cls, unit_ids, labels, pred_1, pred_2, weights=None) -> "EmpiricalDataset":
        """Sort rows into canonical unit-id order and validate.

        ``weights=None`` assigns the uniform distribution.
        """
        ids = np.asarray(unit_ids, dtype=np.int64)
        labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
        if labels.shape[0] == 1 and ids.size > 1:
            labels = labels.T
        p1 = np.asarray(pred_1, dtype=np.float64).reshape(labels.shape)
        p2 = np.asarray(pred_2, dtype=np.float64).reshape(labels.shape)
        if weights is None:
            w = np.full(ids.shape, 1.0 / ids.size)
        else:
            w = np.asarray(weights, dtype=np.float64)
        order = np.argsort(ids, kind="stable")
        return cls(
            unit_ids=ids[order],
            labels=labels[order],
            predictions={1: p1[order], 2: p2[order]},
            weights=w[order],
        )

    @property
    def n(self) -> int:
        return int(self.unit_ids.size)

    @property
    def d(self) -> int:
        return int(self.labels.shape[1])


@dataclass(frozen=True)
class LossFunction:
    """One decision loss: row ``a`` holds the outcome coefficients of action a.

    Entries are expected in [0, 1]; raw matrices go through
    :func:`rescale_loss` first.
    """

    action_losses: np.ndarray                # (K, outcome_dim)
    name: str = ""

    def __post_init__(self) -> None:
        mat = _float_array(self.action_losses, "action_losses", 2)
        object.__setattr__(self, "action_losses", mat)
        if mat.shape[0] < 2:
            raise InputError("a loss function needs at least 2 actions")
        if np.any(mat < 0.0) or np.any(mat > 1.0):
            raise InputError("loss entries must lie in [0, 1]; rescale raw matrices first")

    @property
    def k(self) -> int:
        return int(self.action_losses.shape[0])

    @property
    def outcome_dim(self) -> int:
        return int(self.action_losses.shape[1])


@dataclass(frozen=True)
class LossFamily:
    """A finite, ordered collection of loss functions sharing one action set."""

    losses: tuple[LossFunction, ...]

    def __post_init__(self) -> None:
        losses = tuple(self.losses)
        object.__setattr__(self, "losses", losses)
        if not losses:
            raise InputError("loss family must contain at least one loss")
        k = losses[0].k
        dim = losses[0].outcome_dim
        for loss in losses[1:]:
            if loss.k != k or loss.outcome_dim != dim:
                raise DimensionError("all losses in a family must share K and outcome dimension")

    def __iter__(self):
        return iter(self.losses)

    def __len__(self) -> int:
        return len(self.losses)

    def __getitem__(self, i: int) -> LossFunction:
        return self.losses[i]

    @property
    def k(self) -> int:
        return self.losses[0].k

    @property
    def outcome_dim(self) -> int:
        return self.losses[0].outcome_dim

    def validate_for(self, data: EmpiricalDataset) -> None:
        """Check the family can score this dataset (directly or via binary lift)."""
        if self.outcome_dim == data.d:
            return
        if data.d == 1 and self.outcome_dim == 2:
            return
        raise DimensionError(
            f"loss outcome dimension {self.outcome_dim} does not fit data dimension {data.d}"
        )


@dataclass
class PredictorPair:
    """Mutable prediction state the calibration loops patch in place.

    Step counters split by stage: ``reconcile_counts`` ticks once per
    disagreement (or baseline band) patch on each predictor,
    ``calibration_counts`` once per inner decision-calibration patch.
    Single-threaded by contract; never mutate concurrently.
    """

    predictions: dict[int, np.ndarray]
    reconcile_counts: dict[int, int] = field(default_factory=lambda: {1: 0, 2: 0})
    calibration_counts: dict[int, int] = field(default_factory=lambda: {1: 0, 2: 0})

    @classmethod
    def from_dataset(cls, data: EmpiricalDataset) -> "PredictorPair":
        return cls(predictions={i: data.predictions[i].copy() for i in (1, 2)})

    @property
    def step_count(self) -> int:
        return (
            self.reconcile_counts[1]
            + self.reconcile_counts[2]
            + self.calibration_counts[1]
            + self.calibration_counts[2]
        )

    def copy(self) -> "PredictorPair":
        return PredictorPair(
            predictions={i: self.predictions[i].copy() for i in (1, 2)},
            reconcile_counts=dict(self.reconcile_counts),
            calibration_counts=dict(self.calibration_counts),
        )


@dataclass(frozen=True)
class RunConfig:
    """Run parameters shared by the calibration loops.

    ``beta``, ``m`` and ``max_steps`` may be left as None, in which case the
    loops derive safe defaults from the data (see calibration.resolve_config).
    ``m=0`` requests exact arithmetic with no grid rounding; any positive m
    is raised to the smallest resolution that guarantees termination.
    """

    alpha: float
    eta: float
    beta: float | None = None
    m: int | None = None
    max_steps: int | None = None
    seed: int = 0
    adaptive_beta: bool = False

    def __post_init__(self) -> None:
        if not (self.alpha > 0.0):
            raise ConfigurationError("alpha must be positive")
        if not (0.0 < self.eta < 1.0):
            raise ConfigurationError("eta must lie in (0, 1)")
        if self.beta is not None and not (self.beta > 0.0):
            raise ConfigurationError("beta must be positive")
        if self.m is not None and (int(self.m) != self.m or self.m < 0):
            raise ConfigurationError("m must be a non-negative integer (0 = exact mode)")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError("max_steps must be at least 1")


def outcome_vectors(values: np.ndarray, outcome_dim: int) -> np.ndarray:
    """Map stored vectors onto the outcome space a loss matrix contracts with.

    Scalars (d = 1) lift to the two-class encoding [1 - v, v]; matching
    dimensions pass through unchanged.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    d = values.shape[1]
    if d == outcome_dim:
        return values
    if d == 1 and outcome_dim == 2:
        return np.concatenate([1.0 - values, values], axis=1)
    raise DimensionError(f"cannot evaluate {outcome_dim}-column losses on {d}-dim vectors")


def expected_action_losses(values: np.ndarray, loss: LossFunction) -> np.ndarray:
    """Per-action expected losses <v, l_a> for each row of ``values``; (n, K)."""
    return outcome_vectors(values, loss.outcome_dim) @ loss.action_losses.T


def best_response_actions(values: np.ndarray, loss: LossFunction) -> np.ndarray:
    """Argmin action per row, ties broken toward the smallest index."""
    return np.argmin(expected_action_losses(values, loss), axis=1)


def best_response(prediction, loss: LossFunction) -> int:
    """Best-response action for a single prediction vector (or scalar)."""
    row = np.atleast_1d(np.asarray(prediction, dtype=np.float64)).reshape(1, -1)
    return int(best_response_actions(row, loss)[0])


def _resolve_table(predictor_index: int, data: EmpiricalDataset, predictions) -> np.ndarray:
    if predictions is not None:
        return np.asarray(predictions, dtype=np.float64)
    if predictor_index not in (1, 2):
        raise InputError("predictor index must be 1 or 2")
    return data.predictions[predictor_index]


def brier_score(predictor_index: int, data: EmpiricalDataset, predictions=None) -> float:
    """Weighted squared error sum_x w_x ||f(x) - y_x||^2; lies in [0, d].

    ``predictions`` overrides the stored table, letting callers score an
    evolving PredictorPair against the same labels.
    """
    table = _resolve_table(predictor_index, data, predictions)
    sq = np.square(table - data.labels).sum(axis=1)
    return float(np.dot(data.weights, sq))


def decision_loss(predictor_index: int, loss: LossFunction, data: EmpiricalDataset,
                  predictions=None) -> float:
    """Realized loss of best-responding to the predictor on every unit."""
    table = _resolve_table(predictor_index, data, predictions)
    actions = best_response_actions(table, loss)
    realized = expected_action_losses(data.labels, loss)
    per_unit = realized[np.arange(data.n), actions]
    return float(np.dot(data.weights, per_unit))


def oracle_decision_loss(loss: LossFunction, data: EmpiricalDataset) -> float:
    """Loss of best-responding directly to each unit's label."""
    realized = expected_action_losses(data.labels, loss)
    return float(np.dot(data.weights, realized.min(axis=1)))


def loss_gap(predictor_index: int, loss: LossFunction, data: EmpiricalDataset,
             predictions=None) -> float:
    """Decision loss in excess of the label-informed oracle; non-negative
    whenever labels are deterministic outcomes."""
    return decision_loss(predictor_index, loss, data, predictions) - oracle_decision_loss(loss, data)


def rescale_loss(raw, name: str = "") -> LossFunction:
    """Squash a raw loss matrix into [0, 1] by one global affine map.

    A single (x - min) / (max - min) over all entries preserves every
    best-response set; a constant matrix maps to all zeros.
    """
    mat = np.asarray(raw, dtype=np.float64)
    if mat.ndim != 2:
        raise DimensionError("loss matrix must be 2-dimensional")
    if not np.all(np.isfinite(mat)):
        raise InputError("loss matrix contains non-finite values")
    lo = float(mat.min())
    hi = float(mat.max())
    if hi == lo:
        scaled = np.zeros_like(mat)
    else:
        scaled = (mat - lo) / (hi - lo)
    return LossFunction(action_losses=scaled, name=name)
