"""Replayable patch transcripts.

A transcript is the full description of what a run did to the predictors:
a header (version, dimensions, a digest of the loss family, the resolved
config) plus one step per accepted patch.  Steps store event descriptors,
not member lists, so replaying against any dataset re-derives membership
from the replayed predictions; the patched predictors therefore remain
genuine functions of fresh inputs.  The one exception is a frozen
disagreement region, which is recomputed at the step that froze it and
cached under that step's sequence number for later intersections.

Serialized form (schema version 1, canonical JSON with sorted keys):

    {"version": 1, "d": 2, "k": 2, "loss_count": 1,
     "losses_digest": "<sha256 hex>",
     "config": {"mode": "redcal", "alpha": 0.1, ...},
     "steps": [{"seq": 0, "stage": "reconcile", "target": 1,
                "event": {"kind": "disagree", "loss": 0, "a1": 0, "a2": 1,
                          "alpha": "1/10"},
                "phi": ["2/10", "-1/10"]}, ...]}

Patch vectors and event thresholds are rendered as exact fractions
(grid-mode phi as the literal "k/m") so values survive the round trip
bit-for-bit.  The transcript digest is the sha256 of this canonical JSON.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import EmpiricalDataset, LossFamily, PredictorPair, RedcalError
from .calibration import StepReport, patch
from .events import (
    BandEvent,
    BestResponseEvent,
    DisagreementEvent,
    EventDescriptor,
    FrozenRegion,
    IntersectEvent,
    band_members,
    br_event_members,
    disagreement_members,
)


class ReplayError(RedcalError):
    """Transcript does not fit the data, losses, or its own step order."""


@dataclass(frozen=True)
class PatchStep:
    seq: int
    stage: str
    target: int
    event: EventDescriptor
    phi: np.ndarray


@dataclass(frozen=True)
class Transcript:
    version: int
    d: int
    k: int
    loss_count: int
    losses_digest: str
    config: dict
    steps: tuple[PatchStep, ...]

    def __len__(self) -> int:
        return len(self.steps)


def fraction_literal(value: float, m: int = 0) -> str:
    """Exact fraction rendering; grid values appear as the literal k/m."""
    if m:
        k = round(value * m)
        if k / m == value:
            return f"{k}/{m}"
    frac = Fraction(value).limit_denominator(10 ** 9)
    if float(frac) != value:
        frac = Fraction(value)
    return f"{frac.numerator}/{frac.denominator}"


def _parse_fraction(text: str) -> float:
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError) as err:
        raise ReplayError(f"bad fraction {text!r} in transcript") from err


def family_digest(family: LossFamily | None) -> str:
    """sha256 over the loss family's canonical JSON; '' for no family."""
    if family is None:
        return ""
    payload = {
        "k": family.k,
        "outcome_dim": family.outcome_dim,
        "losses": [
            {"name": loss.name, "matrix": loss.action_losses.tolist()}
            for loss in family
        ],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def encode_event(event: EventDescriptor, m: int) -> dict:
    if isinstance(event, BestResponseEvent):
        return {"kind": "br", "loss": event.loss_index, "action": event.action}
    if isinstance(event, DisagreementEvent):
        return {
            "kind": "disagree",
            "loss": event.loss_index,
            "a1": event.action_1,
            "a2": event.action_2,
            "alpha": fraction_literal(event.alpha),
        }
    if isinstance(event, IntersectEvent):
        region = event.region
        return {
            "kind": "intersect",
            "loss": event.base.loss_index,
            "action": event.base.action,
            "region": {
                "loss": region.event.loss_index,
                "a1": region.event.action_1,
                "a2": region.event.action_2,
                "alpha": fraction_literal(region.event.alpha),
            },
            "frozen_seq": region.seq,
        }
    if isinstance(event, BandEvent):
        return {"kind": "band", "side": event.side, "eps": fraction_literal(event.eps)}
    raise RedcalError(f"cannot encode event {event!r}")


def _decode_event(spec: dict) -> EventDescriptor:
    kind = spec.get("kind")
    if kind == "br":
        return BestResponseEvent(loss_index=spec["loss"], action=spec["action"])
    if kind == "disagree":
        return DisagreementEvent(
            loss_index=spec["loss"], action_1=spec["a1"], action_2=spec["a2"],
            alpha=_parse_fraction(spec["alpha"]))
    if kind == "intersect":
        region_spec = spec["region"]
        region = FrozenRegion(
            event=DisagreementEvent(
                loss_index=region_spec["loss"], action_1=region_spec["a1"],
                action_2=region_spec["a2"], alpha=_parse_fraction(region_spec["alpha"])),
            mask=None,
            seq=spec["frozen_seq"])
        return IntersectEvent(
            base=BestResponseEvent(loss_index=spec["loss"], action=spec["action"]),
            region=region)
    if kind == "band":
        return BandEvent(side=spec["side"], eps=_parse_fraction(spec["eps"]))
    raise ReplayError(f"unknown event kind {kind!r}")


def build_transcript(reports: list[StepReport], data: EmpiricalDataset,
                     family: LossFamily | None, config: dict) -> Transcript:
    """Assemble the transcript for a finished (or truncated) run."""
    steps = tuple(
        PatchStep(seq=r.seq, stage=r.stage, target=r.target, event=r.event,
                  phi=np.asarray(r.phi, dtype=np.float64))
        for r in reports
    )
    return Transcript(
        version=1,
        d=data.d,
        k=family.k if family is not None else 0,
        loss_count=len(family) if family is not None else 0,
        losses_digest=family_digest(family),
        config=dict(config),
        steps=steps,
    )


def to_json_dict(tr: Transcript) -> dict:
    m = int(tr.config.get("m") or 0)
    return {
        "version": tr.version,
        "d": tr.d,
        "k": tr.k,
        "loss_count": tr.loss_count,
        "losses_digest": tr.losses_digest,
        "config": tr.config,
        "steps": [
            {
                "seq": step.seq,
                "stage": step.stage,
                "target": step.target,
                "event": encode_event(step.event, m),
                "phi": [fraction_literal(float(v), m) for v in step.phi],
            }
            for step in tr.steps
        ],
    }


def to_json(tr: Transcript) -> str:
    return json.dumps(to_json_dict(tr), sort_keys=True, separators=(",", ":"))


def from_json(text: str) -> Transcript:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as err:
        raise ReplayError(f"transcript is not valid JSON: {err}") from err
    if payload.get("version") != 1:
        raise ReplayError(f"unsupported transcript version {payload.get('version')!r}")
    steps = tuple(
        PatchStep(
            seq=spec["seq"],
            stage=spec["stage"],
            target=spec["target"],
            event=_decode_event(spec["event"]),
            phi=np.array([_parse_fraction(v) for v in spec["phi"]], dtype=np.float64),
        )
        for spec in payload.get("steps", ())
    )
    return Transcript(
        version=1,
        d=payload["d"],
        k=payload["k"],
        loss_count=payload.get("loss_count", 0),
        losses_digest=payload["losses_digest"],
        config=payload["config"],
        steps=steps,
    )


def save_transcript(tr: Transcript, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_json(tr))
        fh.write("\n")


def load_transcript(path) -> Transcript:
    with open(path, "r", encoding="utf-8") as fh:
        return from_json(fh.read())


def transcript_digest(tr: Transcript) -> str:
    """sha256 hex digest of the canonical JSON form."""
    return hashlib.sha256(to_json(tr).encode("utf-8")).hexdigest()


def replay(tr: Transcript, data: EmpiricalDataset, family: LossFamily | None = None) -> PredictorPair:
    """Apply a transcript's patches to fresh data, re-deriving event
    membership from the replayed predictions at every step.

    Frozen disagreement regions are recomputed at the step that froze them
    and cached by sequence number; intersections must reference an earlier
    disagreement step or the replay fails.  Running on the dataset a
    transcript was produced from reproduces the final predictions exactly.
    """
    if tr.d != data.d:
        raise ReplayError(f"transcript is for d={tr.d}, data has d={data.d}")
    if family_digest(family) != tr.losses_digest:
        raise ReplayError("loss family digest does not match the transcript header")
    if family is not None:
        family.validate_for(data)
    state = PredictorPair.from_dataset(data)
    frozen_masks: dict[int, np.ndarray] = {}
    for position, step in enumerate(tr.steps):
        if step.seq != position:
            raise ReplayError(f"transcript step order broken at seq {step.seq}")
        if step.phi.shape != (data.d,):
            raise ReplayError(f"step {step.seq} phi has wrong dimension")
        event = step.event
        if isinstance(event, BestResponseEvent):
            members = br_event_members(event, step.target, state, family)
        elif isinstance(event, DisagreementEvent):
            members = disagreement_members(event, state, family)
            frozen_masks[step.seq] = members
        elif isinstance(event, IntersectEvent):
            region_mask = frozen_masks.get(event.region.seq)
            if region_mask is None:
                raise ReplayError(
                    f"step {step.seq} references unknown frozen region {event.region.seq}")
            members = br_event_members(event.base, step.target, state, family) & region_mask
        elif isinstance(event, BandEvent):
            members = band_members(event, state)
        else:  # pragma: no cover - decoding guards against this
            raise ReplayError(f"step {step.seq} has unknown event type")
        patch(step.target, members, step.phi, state)
        if step.stage == "decision_cal":
            state.calibration_counts[step.target] += 1
        else:
            state.reconcile_counts[step.target] += 1
    return state
