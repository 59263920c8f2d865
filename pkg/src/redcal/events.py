"""Event descriptors and membership tests over a dataset's units.

Membership is represented as boolean masks aligned with the dataset's
canonical row order.  Three event kinds drive the calibration loops:
best-response events (one predictor picks action a under loss l),
disagreement events (the two predictors pick different actions and at
least one sees more than alpha of expected regret in the other's choice),
and intersections of a best-response event with a frozen disagreement
region.  The d = 1 baseline uses signed prediction-gap bands instead.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np

from .core import (
    EmpiricalDataset,
    LossFamily,
    RedcalError,
    best_response_actions,
    expected_action_losses,
)

if TYPE_CHECKING:  # pragma: no cover
    from .core import PredictorPair


class EmptyEventError(RedcalError):
    """Raised when a conditional statistic is requested on an empty event."""


@dataclass(frozen=True)
class BestResponseEvent:
    """Units on which the target predictor best-responds with ``action``."""

    loss_index: int
    action: int


@dataclass(frozen=True)
class DisagreementEvent:
    """Units where predictor 1 plays action_1, predictor 2 plays action_2,
    and at least one predictor attributes > alpha extra loss to the other's
    action (strict inequality)."""

    loss_index: int
    action_1: int
    action_2: int
    alpha: float


@dataclass(frozen=True, eq=False)
class FrozenRegion:
    """A disagreement event whose membership was fixed at transcript step
    ``seq``.  ``mask`` is None on descriptors decoded from a transcript;
    replay recomputes it at the recorded step."""

    event: DisagreementEvent
    mask: np.ndarray | None
    seq: int


@dataclass(frozen=True, eq=False)
class IntersectEvent:
    """A best-response event restricted to a frozen disagreement region."""

    base: BestResponseEvent
    region: FrozenRegion


@dataclass(frozen=True)
class BandEvent:
    """Signed prediction-gap band for the scalar baseline: units where
    f1 - f2 > eps (side '>') or f2 - f1 > eps (side '<')."""

    side: str
    eps: float

    def __post_init__(self) -> None:
        if self.side not in (">", "<"):
            raise RedcalError("band side must be '>' or '<'")


EventDescriptor = Union[BestResponseEvent, DisagreementEvent, IntersectEvent, BandEvent]


def br_event_members(ev: BestResponseEvent, predictor_index: int, state: "PredictorPair",
                     family: LossFamily) -> np.ndarray:
    """Boolean mask of units where the predictor's best response is ev.action."""
    loss = family[ev.loss_index]
    actions = best_response_actions(state.predictions[predictor_index], loss)
    return actions == ev.action


def disagreement_members(ev: DisagreementEvent, state: "PredictorPair",
                         family: LossFamily) -> np.ndarray:
    """Boolean mask of the alpha-margin disagreement event."""
    loss = family[ev.loss_index]
    p1 = state.predictions[1]
    p2 = state.predictions[2]
    el1 = expected_action_losses(p1, loss)
    el2 = expected_action_losses(p2, loss)
    base = (np.argmin(el1, axis=1) == ev.action_1) & (np.argmin(el2, axis=1) == ev.action_2)
    margin_1 = el1[:, ev.action_2] - el1[:, ev.action_1] > ev.alpha
    margin_2 = el2[:, ev.action_1] - el2[:, ev.action_2] > ev.alpha
    return base & (margin_1 | margin_2)


def band_members(ev: BandEvent, state: "PredictorPair") -> np.ndarray:
    """Boolean mask of the scalar baseline's signed gap band."""
    gap = state.predictions[1][:, 0] - state.predictions[2][:, 0]
    return gap > ev.eps if ev.side == ">" else -gap > ev.eps


def descriptor_members(ev: EventDescriptor, predictor_index: int, state: "PredictorPair",
                       family: LossFamily) -> np.ndarray:
    """Resolve any event descriptor to a membership mask for the target
    predictor.  Intersections require the region mask to be materialized."""
    if isinstance(ev, BestResponseEvent):
        return br_event_members(ev, predictor_index, state, family)
    if isinstance(ev, DisagreementEvent):
        return disagreement_members(ev, state, family)
    if isinstance(ev, IntersectEvent):
        if ev.region.mask is None:
            raise RedcalError("intersect event has no materialized region mask")
        return br_event_members(ev.base, predictor_index, state, family) & ev.region.mask
    if isinstance(ev, BandEvent):
        return band_members(ev, state)
    raise RedcalError(f"unknown event descriptor {ev!r}")


def event_mass(members: np.ndarray, data: EmpiricalDataset) -> float:
    """Total weight of the member units."""
    return float(data.weights[members].sum())


def residual_sum(members: np.ndarray, predictor_index: int, data: EmpiricalDataset,
                 state: "PredictorPair") -> np.ndarray:
    """Unconditional weighted residual sum_x w_x (y_x - f(x)) 1[x in E]; (d,)."""
    resid = data.labels[members] - state.predictions[predictor_index][members]
    return data.weights[members] @ resid if members.any() else np.zeros(data.d)


def conditional_mean_residual(members: np.ndarray, predictor_index: int,
                              data: EmpiricalDataset, state: "PredictorPair") -> np.ndarray:
    """Conditional mean residual E[y - f(x) | E]; the patch direction."""
    mass = event_mass(members, data)
    if mass <= 0.0:
        raise EmptyEventError("conditional mean requested on an empty event")
    return residual_sum(members, predictor_index, data, state) / mass


def calibration_residual_norm(ev: EventDescriptor, predictor_index: int,
                              data: EmpiricalDataset, state: "PredictorPair",
                              family: LossFamily) -> float:
    """Norm of the unconditional residual ||sum_x w_x (y_x - f(x)) 1[x in E]||.

    This is the quantity decision calibration drives below beta; the event
    mass stays inside the expectation, so empty events score zero.
    """
    members = descriptor_members(ev, predictor_index, state, family)
    return float(np.linalg.norm(residual_sum(members, predictor_index, data, state)))
