"""Patching loops that reconcile two predictors for downstream decisions.

Three entry points share one mechanic: find an event where a predictor's
conditional mean residual is large, shift the predictor by that residual
(rounded onto a 1/m grid), clip into [0,1], repeat.

* :func:`decision_calibrate` drives every best-response event's residual
  norm below ``beta`` for a single predictor.
* :func:`redcal` repeatedly freezes the heaviest alpha-margin disagreement
  region between the two predictors, patches the predictor whose loss
  estimate is further from the truth on that region, then re-calibrates it
  restricted to the frozen region.
* :func:`reconcile_baseline` is the scalar value-band baseline: it patches
  on bands where |f1 - f2| > eps without looking at any loss, which can
  flip best responses for the worse.

Every accepted patch strictly decreases the target's squared error, which
is what bounds the run length.  Grid mode cannot push residuals below the
grid floor sqrt(d/2)/m, so effective tolerances are clamped there; the
default resolution keeps that floor under any requested beta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .bounds import (
    BoundInputs,
    baseline_iteration_bound,
    baseline_min_grid,
    exact_iteration_bound,
    grid_iteration_bound,
    min_brier_gain,
)
from .core import (
    ConfigurationError,
    DimensionError,
    EmpiricalDataset,
    LossFamily,
    LossFunction,
    PredictorPair,
    RedcalError,
    RunConfig,
    best_response_actions,
    brier_score,
    decision_loss,
    expected_action_losses,
    oracle_decision_loss,
    outcome_vectors,
)
from .events import (
    BandEvent,
    BestResponseEvent,
    DisagreementEvent,
    EventDescriptor,
    FrozenRegion,
    IntersectEvent,
    conditional_mean_residual,
    event_mass,
)


class TruncatedRunError(RedcalError):
    """A loop hit config.max_steps; carries the partial state and reports."""

    def __init__(self, message: str, state: PredictorPair, reports: list, config: dict):
        super().__init__(message)
        self.state = state
        self.reports = reports
        self.config = config


@dataclass(frozen=True)
class StepReport:
    """Metrics snapshot for one accepted patch.

    brier_* index by predictor; decision_loss and loss_gap hold one value
    per loss in family order, measured after the patch.  beta_used and
    delta are populated on disagreement steps only.
    """

    seq: int
    stage: str                                # "reconcile" | "decision_cal" | "baseline"
    target: int
    event: EventDescriptor
    phi: np.ndarray
    mass: float
    brier_before: dict[int, float]
    brier_after: dict[int, float]
    decision_loss: dict[int, tuple[float, ...]]
    loss_gap: dict[int, tuple[float, ...]]
    beta_used: float | None = None
    delta: float | None = None


@dataclass(frozen=True)
class ResolvedConfig:
    """A RunConfig with every default filled in for a concrete run."""

    mode: str
    alpha: float
    eta: float
    beta: float | None
    m: int
    max_steps: int
    seed: int
    adaptive_beta: bool
    m_raised_from: int | None = None

    def echo(self) -> dict:
        out = {
            "mode": self.mode,
            "alpha": self.alpha,
            "eta": self.eta,
            "beta": self.beta,
            "m": self.m,
            "max_steps": self.max_steps,
            "seed": self.seed,
            "adaptive_beta": self.adaptive_beta,
        }
        if self.m_raised_from is not None:
            out["m_raised_from"] = self.m_raised_from
        return out


def round_to_grid(values, m: int) -> np.ndarray:
    """Round each coordinate to the nearest multiple of 1/m in [-1, 1].

    Exact midpoints round toward the larger grid value.  ``m`` of 0 (or
    None) returns the values untouched: exact mode.
    """
    arr = np.asarray(values, dtype=np.float64)
    if not m:
        return arr.copy()
    k = np.floor(arr * m + 0.5)
    np.clip(k, -m, m, out=k)
    return k / m


def patch(predictor_index: int, members: np.ndarray, phi: np.ndarray,
          state: PredictorPair) -> PredictorPair:
    """Shift the predictor by phi on the member units, clipping into [0,1].

    Empty member sets are a no-op.  Mutates ``state`` in place.
    """
    if members.any():
        table = state.predictions[predictor_index]
        table[members] = np.clip(table[members] + phi, 0.0, 1.0)
    return state


def adaptive_beta_delta(members: np.ndarray, action: int, loss: LossFunction,
                        data: EmpiricalDataset) -> float:
    """Advantage of the event action over the best fixed action on the event:
    max_a sum_x w_x (l(y_x, action) - l(y_x, a)) over member units.

    Always non-negative; an empty event scores 0.  Dividing by sqrt(d)
    gives the calibration tolerance at which re-calibrating the patched
    predictor cannot raise its decision loss for this round.
    """
    if not members.any():
        return 0.0
    w = data.weights[members]
    y_out = outcome_vectors(data.labels[members], loss.outcome_dim)
    totals = w @ (y_out @ loss.action_losses.T)
    return float(totals[action] - totals.min())


def resolve_config(config: RunConfig, data: EmpiricalDataset, family: LossFamily | None,
                   mode: str, state: PredictorPair | None = None) -> ResolvedConfig:
    """Fill beta / m / max_steps defaults for one run.

    beta defaults to alpha / (T sqrt(d) K) with T the exact-arithmetic
    round cap, small enough that cumulative calibration error cannot move
    any decision loss by more than alpha per predictor.  m defaults to the
    smallest resolution that keeps grid runs strictly profitable, and a
    user-specified positive m below that threshold is raised to it.
    """
    if mode not in ("redcal", "decal", "baseline"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    if mode == "baseline" and data.d != 1:
        raise DimensionError("the value-band baseline only applies to 1-dimensional data")
    if family is not None:
        family.validate_for(data)
    preds = state.predictions if state is not None else data.predictions
    b1 = brier_score(1, data, preds[1])
    b2 = brier_score(2, data, preds[2])
    d = data.d

    if mode == "baseline":
        cap = max(1, baseline_iteration_bound(config.alpha, config.eta, b1, b2))
        m_min = baseline_min_grid(config.alpha, config.eta)
        beta = config.beta
    else:
        beta = config.beta
        if beta is None:
            t_exact = exact_iteration_bound(BoundInputs(
                d=d, alpha=config.alpha, eta=config.eta, brier_1=b1, brier_2=b2))
            beta = config.alpha / (max(1, t_exact) * math.sqrt(d) * family.k)
        inputs = BoundInputs(d=d, alpha=config.alpha, eta=config.eta, beta=beta)
        grid = grid_iteration_bound(inputs)
        m_min = grid.m_min
        if config.m == 0:
            # exact mode: disagreement rounds plus inner steps, each worth >= beta^2
            inner_cap = math.ceil(Fraction(b1 + b2) / (Fraction(beta) ** 2)) if b1 + b2 > 0 else 0
            t_exact = exact_iteration_bound(BoundInputs(
                d=d, alpha=config.alpha, eta=config.eta, brier_1=b1, brier_2=b2))
            cap = max(1, t_exact + inner_cap + 1)
        else:
            cap = max(1, grid.t_max)

    m_raised_from = None
    if config.m == 0:
        m = 0
    elif config.m is None:
        m = m_min
    else:
        m = max(int(config.m), m_min)
        if m != config.m:
            m_raised_from = int(config.m)

    max_steps = config.max_steps if config.max_steps is not None else 10 * cap
    return ResolvedConfig(
        mode=mode,
        alpha=config.alpha,
        eta=config.eta,
        beta=beta,
        m=m,
        max_steps=max_steps,
        seed=config.seed,
        adaptive_beta=config.adaptive_beta,
        m_raised_from=m_raised_from,
    )


class _MetricsContext:
    """Precomputed pieces for per-step metric snapshots."""

    def __init__(self, data: EmpiricalDataset, family: LossFamily | None):
        self.data = data
        self.family = family
        self.oracles = (
            tuple(oracle_decision_loss(loss, data) for loss in family)
            if family is not None else ()
        )

    def briers(self, state: PredictorPair) -> dict[int, float]:
        return {i: brier_score(i, self.data, state.predictions[i]) for i in (1, 2)}

    def decision_metrics(self, state):
        losses = {}
        gaps = {}
        for i in (1, 2):
            if self.family is None:
                losses[i] = ()
                gaps[i] = ()
                continue
            vals = tuple(
                decision_loss(i, loss, self.data, state.predictions[i])
                for loss in self.family
            )
            losses[i] = vals
            gaps[i] = tuple(v - o for v, o in zip(vals, self.oracles))
        return losses, gaps


@dataclass
class _RunLog:
    max_steps: int
    config_echo: dict
    reports: list = field(default_factory=list)

    @property
    def next_seq(self) -> int:
        return len(self.reports)


def _apply_and_record(log: _RunLog, ctx: _MetricsContext, state: PredictorPair,
                      stage: str, target: int, event: EventDescriptor,
                      phi: np.ndarray, members: np.ndarray, mass: float,
                      beta_used: float | None = None, delta: float | None = None) -> StepReport:
    if log.next_seq >= log.max_steps:
        raise TruncatedRunError(
            f"run exceeded max_steps={log.max_steps}", state, log.reports, log.config_echo)
    brier_before = ctx.briers(state)
    patch(target, members, phi, state)
    brier_after = ctx.briers(state)
    losses, gaps = ctx.decision_metrics(state)
    report = StepReport(
        seq=log.next_seq,
        stage=stage,
        target=target,
        event=event,
        phi=np.asarray(phi, dtype=np.float64).copy(),
        mass=mass,
        brier_before=brier_before,
        brier_after=brier_after,
        decision_loss=losses,
        loss_gap=gaps,
        beta_used=beta_used,
        delta=delta,
    )
    log.reports.append(report)
    return report


def _best_calibration_event(predictor_index: int, family: LossFamily, state: PredictorPair,
                            data: EmpiricalDataset, restrict_mask: np.ndarray | None):
    """Largest-residual best-response event (optionally inside a region).

    Returns (norm, loss_index, action, members); ties keep the smallest
    (loss_index, action).
    """
    resid = data.weights[:, None] * (data.labels - state.predictions[predictor_index])
    best = None
    for li, loss in enumerate(family):
        actions = best_response_actions(state.predictions[predictor_index], loss)
        sums = np.zeros((loss.k, data.d))
        if restrict_mask is None:
            np.add.at(sums, actions, resid)
        else:
            np.add.at(sums, actions[restrict_mask], resid[restrict_mask])
        norms = np.linalg.norm(sums, axis=1)
        for a in range(loss.k):
            if best is None or norms[a] > best[0]:
                members = actions == a
                if restrict_mask is not None:
                    members = members & restrict_mask
                best = (float(norms[a]), li, a, members)
    return best


def _calibration_pass(predictor_index: int, family: LossFamily, beta: float,
                      state: PredictorPair, log: _RunLog, ctx: _MetricsContext,
                      resolved: ResolvedConfig, restrict: FrozenRegion | None,
                      delta: float | None = None) -> None:
    data = ctx.data
    # grid mode cannot separate residuals finer than the grid floor
    floor = math.sqrt(data.d / 2.0) / resolved.m if resolved.m else 0.0
    effective_beta = max(beta, floor)
    restrict_mask = restrict.mask if restrict is not None else None
    while True:
        norm, li, a, members = _best_calibration_event(
            predictor_index, family, state, data, restrict_mask)
        if norm <= effective_beta:
            break
        base = BestResponseEvent(loss_index=li, action=a)
        event = IntersectEvent(base=base, region=restrict) if restrict is not None else base
        mass = event_mass(members, data)
        phi = round_to_grid(conditional_mean_residual(members, predictor_index, data, state),
                            resolved.m)
        _apply_and_record(log, ctx, state, "decision_cal", predictor_index, event, phi,
                          members, mass, beta_used=effective_beta, delta=delta)
        state.calibration_counts[predictor_index] += 1


def max_residual_norm(predictor_index: int, family: LossFamily, state: PredictorPair,
                      data: EmpiricalDataset) -> float:
    """Largest best-response-event residual norm over the whole family."""
    best = _best_calibration_event(predictor_index, family, state, data, None)
    return best[0]


def max_disagreement_mass(state: PredictorPair, data: EmpiricalDataset,
                          family: LossFamily, alpha: float) -> float:
    """Mass of the heaviest alpha-margin disagreement event."""
    found = _largest_disagreement(state, data, family, alpha)
    return found.mass if found is not None else 0.0


def decision_calibrate(predictor_index: int, family: LossFamily, beta: float,
                       state: PredictorPair, data: EmpiricalDataset,
                       config: RunConfig | None = None,
                       restrict: FrozenRegion | None = None):
    """Patch one predictor until every best-response event's residual norm
    is at most beta (within ``restrict`` if given).

    Returns the mutated state and the list of StepReports.  alpha and eta
    from ``config`` only influence the default grid resolution; pass
    config.m = 0 for exact arithmetic.
    """
    family.validate_for(data)
    if config is None:
        config = RunConfig(alpha=1.0, eta=0.5, beta=beta)
    elif config.beta != beta:
        config = replace(config, beta=beta)
    resolved = resolve_config(config, data, family, mode="decal", state=state)
    ctx = _MetricsContext(data, family)
    log = _RunLog(max_steps=resolved.max_steps, config_echo=resolved.echo())
    _calibration_pass(predictor_index, family, resolved.beta, state, log, ctx, resolved, restrict)
    return state, log.reports


@dataclass(frozen=True)
class _Disagreement:
    mass: float
    loss_index: int
    action_1: int
    action_2: int
    members: np.ndarray


def _largest_disagreement(state: PredictorPair, data: EmpiricalDataset,
                          family: LossFamily, alpha: float) -> _Disagreement | None:
    """Heaviest alpha-margin disagreement event; ties keep the smallest
    (loss_index, action_1, action_2)."""
    best = None
    for li, loss in enumerate(family):
        el1 = expected_action_losses(state.predictions[1], loss)
        el2 = expected_action_losses(state.predictions[2], loss)
        acts1 = np.argmin(el1, axis=1)
        acts2 = np.argmin(el2, axis=1)
        for a1 in range(loss.k):
            side1 = acts1 == a1
            margin1 = el1[:, a1]
            for a2 in range(loss.k):
                if a1 == a2:
                    continue
                members = (
                    side1 & (acts2 == a2)
                    & ((el1[:, a2] - margin1 > alpha) | (el2[:, a1] - el2[:, a2] > alpha))
                )
                mass = float(data.weights[members].sum())
                if best is None or mass > best.mass:
                    best = _Disagreement(mass, li, a1, a2, members)
    return best


def _select_patch_target(members: np.ndarray, loss: LossFunction, a1: int, a2: int,
                         state: PredictorPair, data: EmpiricalDataset) -> int:
    """Pick the predictor whose estimate of the a1-vs-a2 loss difference on
    the event is further from the label estimate; ties go to predictor 1."""
    w = data.weights[members]
    total = float(w.sum())
    diff_row = loss.action_losses[a1] - loss.action_losses[a2]
    y_term = float(w @ (outcome_vectors(data.labels[members], loss.outcome_dim) @ diff_row)) / total
    scores = {}
    for i in (1, 2):
        f_out = outcome_vectors(state.predictions[i][members], loss.outcome_dim)
        scores[i] = abs(y_term - float(w @ (f_out @ diff_row)) / total)
    return 1 if scores[1] >= scores[2] else 2


def redcal(family: LossFamily, config: RunConfig, state: PredictorPair,
           data: EmpiricalDataset):
    """Reconcile two predictors until no alpha-margin disagreement event
    carries eta mass or more.

    Each round freezes the heaviest disagreement region, patches the
    predictor picked by :func:`_select_patch_target` with the region's mean
    residual, then re-runs decision calibration for that predictor
    restricted to the frozen region (tolerance beta, or delta/sqrt(d) when
    config.adaptive_beta is set and the round's advantage delta is
    positive).  Returns (state, transcript, step reports).
    """
    from .transcript import build_transcript

    family.validate_for(data)
    resolved = resolve_config(config, data, family, mode="redcal", state=state)
    ctx = _MetricsContext(data, family)
    log = _RunLog(max_steps=resolved.max_steps, config_echo=resolved.echo())
    sqrt_d = math.sqrt(data.d)
    while True:
        found = _largest_disagreement(state, data, family, resolved.alpha)
        if found is None or found.mass < resolved.eta:
            break
        loss = family[found.loss_index]
        event = DisagreementEvent(found.loss_index, found.action_1, found.action_2,
                                  resolved.alpha)
        target = _select_patch_target(found.members, loss, found.action_1, found.action_2,
                                      state, data)
        region = FrozenRegion(event=event, mask=found.members.copy(), seq=log.next_seq)
        phi = round_to_grid(
            conditional_mean_residual(found.members, target, data, state), resolved.m)
        beta_round = resolved.beta
        delta = None
        if resolved.adaptive_beta:
            own_action = found.action_1 if target == 1 else found.action_2
            delta = adaptive_beta_delta(found.members, own_action, loss, data)
            if delta > 0.0:
                beta_round = delta / sqrt_d
        _apply_and_record(log, ctx, state, "reconcile", target, event, phi,
                          found.members, found.mass, beta_used=beta_round, delta=delta)
        state.reconcile_counts[target] += 1
        _calibration_pass(target, family, beta_round, state, log, ctx, resolved,
                          restrict=region, delta=delta)
    transcript = build_transcript(log.reports, data, family, resolved.echo())
    return state, transcript, log.reports


def reconcile_baseline(config: RunConfig, state: PredictorPair, data: EmpiricalDataset,
                       family: LossFamily | None = None):
    """Scalar baseline: patch whichever predictor's conditional value
    estimate is further off on the heavier |f1 - f2| > eps band.

    config.alpha plays the role of eps.  ``family`` is only used for the
    per-step decision-loss columns in the reports; pass the losses you care
    about (defaults to none).  Returns (state, transcript, step reports).
    """
    from .transcript import build_transcript

    resolved = resolve_config(config, data, family, mode="baseline", state=state)
    eps = resolved.alpha
    ctx = _MetricsContext(data, family)
    log = _RunLog(max_steps=resolved.max_steps, config_echo=resolved.echo())
    w = data.weights
    y = data.labels[:, 0]
    while True:
        gap = state.predictions[1][:, 0] - state.predictions[2][:, 0]
        bands = {">": gap > eps, "<": -gap > eps}
        masses = {side: float(w[mask].sum()) for side, mask in bands.items()}
        if masses[">"] + masses["<"] < resolved.eta:
            break
        best = None
        for i in (1, 2):
            for side in (">", "<"):
                mass = masses[side]
                if mass <= 0.0:
                    continue
                mask = bands[side]
                v_star = float(w[mask] @ y[mask]) / mass
                v_i = float(w[mask] @ state.predictions[i][mask, 0]) / mass
                score = mass * (v_star - v_i) ** 2
                if best is None or score > best[0]:
                    best = (score, i, side, mask, mass, v_star - v_i)
        _, target, side, mask, mass, shift = best
        phi = round_to_grid(np.array([shift]), resolved.m)
        _apply_and_record(log, ctx, state, "baseline", target,
                          BandEvent(side=side, eps=eps), phi, mask, mass)
        state.reconcile_counts[target] += 1
    transcript = build_transcript(log.reports, data, family, resolved.echo())
    return state, transcript, log.reports
