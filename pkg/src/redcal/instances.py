"""Benchmark instance generators and an independent audit oracle.

The two fixed constructions are small enough to check by hand:

* :func:`gen_reconcile_counterexample` builds the two-unit binary instance
  on which value-band reconciliation flips a best response and raises one
  predictor's decision loss by 1/2 while its squared error improves.
* :func:`gen_decal_counterexample` builds the four-unit binary instance
  whose predictors are both exactly decision calibrated for the threshold
  loss yet disagree on 2*eta of the population.

Stochastic labels are realized exactly: a unit with conditional mean p
splits into two deterministic sub-units with weights w(1-p) and wp, so
empirical conditional expectations match the construction with no
sampling error.

:func:`audit` recomputes every guarantee with plain Python loops, kept
deliberately separate from the vectorized paths it cross-checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigurationError,
    EmpiricalDataset,
    LossFamily,
    LossFunction,
    PredictorPair,
    RunConfig,
    rescale_loss,
)

GENERATOR_NAME = "pcg64"


def threshold_loss() -> LossFunction:
    """Act/ignore loss on a binary outcome: acting costs 1 on healthy units,
    ignoring costs 1 on affected units."""
    return LossFunction(action_losses=np.array([[0.0, 1.0], [1.0, 0.0]]), name="threshold")


def _expand_stochastic(unit_specs):
    """Realize units with fractional conditional means as weighted pairs of
    deterministic sub-units (id 10u for label 0, 10u+1 for label 1)."""
    ids, labels, p1, p2, weights = [], [], [], [], []
    for uid, weight, mean, f1, f2 in unit_specs:
        for bit in (0, 1):
            w = weight * (mean if bit else 1.0 - mean)
            if w <= 0.0:
                continue
            ids.append(10 * uid + bit)
            labels.append([float(bit)])
            p1.append([f1])
            p2.append([f2])
            weights.append(w)
    return EmpiricalDataset.build(ids, labels, p1, p2, weights)


def gen_reconcile_counterexample(phi: float = 0.2):
    """Two equally weighted units where both predictors sit on the same side
    of the action threshold, phi/2 apart from it.

    Unit 1 (label 0): f1 = 1/2 - phi/2, f2 = 1/2 + phi/2.
    Unit 2 (label 1): f1 = 1/2 - 3 phi/2, f2 = 1/2 - phi/2.

    f1's squared error exceeds f2's by exactly phi^2, and closing the value
    gap moves f1 past the threshold on unit 1, raising its threshold-loss
    decision loss from 1/2 to 1.  Valid for 0 < phi <= 1/3.
    """
    if not (0.0 < phi <= 1.0 / 3.0):
        raise ConfigurationError("phi must lie in (0, 1/3]")
    data = EmpiricalDataset.build(
        unit_ids=[1, 2],
        labels=[[0.0], [1.0]],
        pred_1=[[0.5 - phi / 2.0], [0.5 - 3.0 * phi / 2.0]],
        pred_2=[[0.5 + phi / 2.0], [0.5 - phi / 2.0]],
        weights=[0.5, 0.5],
    )
    return data, LossFamily((threshold_loss(),))


def gen_decal_counterexample(eta: float = 0.1, beta: float = 0.4):
    """Four-unit binary instance: both predictors exactly decision
    calibrated for the threshold loss, yet each is wrong on one eta-mass
    unit where the other is right.

    With low = beta/2 + 2 eta (1 - beta) and high = 1 - beta/2:

        unit 1, weight 1/2 - eta: mean beta/2, f1 = f2 = low
        unit 2, weight eta:       mean high,   f1 = low,  f2 = high
        unit 3, weight eta:       mean high,   f1 = high, f2 = low
        unit 4, weight 1/2 - eta: mean high,   f1 = f2 = high

    All four best-response-event residuals vanish identically, while the
    opposed-action disagreement events each carry mass eta.  Valid for
    eta in (0, 1/4) and beta in (0, 1/2).
    """
    if not (0.0 < eta < 0.25):
        raise ConfigurationError("eta must lie in (0, 1/4)")
    if not (0.0 < beta < 0.5):
        raise ConfigurationError("beta must lie in (0, 1/2)")
    low = beta / 2.0 + 2.0 * eta * (1.0 - beta)
    high = 1.0 - beta / 2.0
    specs = [
        (1, 0.5 - eta, beta / 2.0, low, low),
        (2, eta, high, low, high),
        (3, eta, high, high, low),
        (4, 0.5 - eta, high, high, high),
    ]
    return _expand_stochastic(specs), LossFamily((threshold_loss(),))


def gen_random_instance(n: int, d: int, k: int, loss_count: int, noise: float,
                        seed: int):
    """Reproducible random instance: categorical one-hot labels (Bernoulli
    scalars when d = 1), predictors equal to the label plus clipped
    Gaussian noise, and losses rescaled from standard normal draws.

    Draw order is fixed (labels, predictor 1, predictor 2, loss matrices)
    so a seed pins the whole instance; the generator is numpy's pcg64.
    """
    if n < 1 or d < 1 or k < 2 or loss_count < 1 or noise < 0.0:
        raise ConfigurationError("need n >= 1, d >= 1, k >= 2, loss_count >= 1, noise >= 0")
    rng = np.random.default_rng(seed)
    if d == 1:
        labels = rng.integers(0, 2, size=(n, 1)).astype(np.float64)
    else:
        classes = rng.integers(0, d, size=n)
        labels = np.zeros((n, d))
        labels[np.arange(n), classes] = 1.0
    p1 = np.clip(labels + noise * rng.standard_normal((n, d)), 0.0, 1.0)
    p2 = np.clip(labels + noise * rng.standard_normal((n, d)), 0.0, 1.0)
    outcome_dim = 2 if d == 1 else d
    losses = tuple(
        rescale_loss(rng.standard_normal((k, outcome_dim)), name=f"loss_{j}")
        for j in range(loss_count)
    )
    data = EmpiricalDataset.build(np.arange(1, n + 1), labels, p1, p2)
    return data, LossFamily(losses)


# ---------------------------------------------------------------------------
# audit oracle: plain-Python recomputation of every guarantee
# ---------------------------------------------------------------------------

_CUSHION = 1e-12  # allowance for summation-order float drift vs the fast paths


@dataclass(frozen=True)
class AuditReport:
    """Raw numbers plus pass/fail flags against the config thresholds.

    residuals_ok / loss_estimation_ok are None when config.beta is unset.
    """

    briers: dict[int, float]
    decision_losses: dict[int, tuple[float, ...]]
    loss_gaps: dict[int, tuple[float, ...]]
    disagreement_masses: dict[tuple[int, int, int], float]
    max_disagreement_mass: float
    residual_norms: dict[int, dict[tuple[int, int], float]]
    max_residual_norm: dict[int, float]
    loss_estimation_gaps: dict[int, float]
    alpha: float
    eta: float
    beta: float | None
    masses_ok: bool
    residuals_ok: dict[int, bool] | None
    loss_estimation_ok: dict[int, bool] | None

    @property
    def passed(self) -> bool:
        if not self.masses_ok:
            return False
        if self.residuals_ok is not None and not all(self.residuals_ok.values()):
            return False
        return True

    def to_dict(self) -> dict:
        return {
            "briers": {str(i): v for i, v in self.briers.items()},
            "decision_losses": {str(i): list(v) for i, v in self.decision_losses.items()},
            "loss_gaps": {str(i): list(v) for i, v in self.loss_gaps.items()},
            "max_disagreement_mass": self.max_disagreement_mass,
            "max_residual_norm": {str(i): v for i, v in self.max_residual_norm.items()},
            "loss_estimation_gaps": {str(i): v for i, v in self.loss_estimation_gaps.items()},
            "alpha": self.alpha,
            "eta": self.eta,
            "beta": self.beta,
            "masses_ok": self.masses_ok,
            "residuals_ok": (
                {str(i): v for i, v in self.residuals_ok.items()}
                if self.residuals_ok is not None else None
            ),
            "loss_estimation_ok": (
                {str(i): v for i, v in self.loss_estimation_ok.items()}
                if self.loss_estimation_ok is not None else None
            ),
            "passed": self.passed,
        }


def _lift(vector: list[float], outcome_dim: int) -> list[float]:
    if len(vector) == outcome_dim:
        return vector
    return [1.0 - vector[0], vector[0]]


def _dot(a: list[float], b: list[float]) -> float:
    total = 0.0
    for x, y in zip(a, b):
        total += x * y
    return total


def _argmin(values: list[float]) -> int:
    best = 0
    for i in range(1, len(values)):
        if values[i] < values[best]:
            best = i
    return best


def audit(state: PredictorPair, data: EmpiricalDataset, family: LossFamily,
          config: RunConfig) -> AuditReport:
    """Recompute masses, residuals, and losses with plain Python loops and
    compare them against the config thresholds.

    Checks: every alpha-margin disagreement event's mass is below eta, and
    (when config.beta is set) every best-response event's residual norm is
    at most beta and every loss-estimation gap at most beta sqrt(d).  A
    1e-12 cushion absorbs summation-order differences from the vectorized
    paths.
    """
    family.validate_for(data)
    weights = data.weights.tolist()
    labels = data.labels.tolist()
    preds = {i: state.predictions[i].tolist() for i in (1, 2)}
    n = data.n
    d = data.d
    matrices = [loss.action_losses.tolist() for loss in family]
    k = family.k
    outcome_dim = family.outcome_dim

    briers = {}
    for i in (1, 2):
        total = 0.0
        for x in range(n):
            sq = 0.0
            for j in range(d):
                diff = preds[i][x][j] - labels[x][j]
                sq += diff * diff
            total += weights[x] * sq
        briers[i] = total

    # per unit: lifted outcome rows and per-action losses for each loss fn
    lifted_labels = [_lift(labels[x], outcome_dim) for x in range(n)]
    lifted_preds = {i: [_lift(preds[i][x], outcome_dim) for x in range(n)] for i in (1, 2)}
    action_losses = {
        (i, li): [[_dot(lifted_preds[i][x], mat[a]) for a in range(k)] for x in range(n)]
        for i in (1, 2) for li, mat in enumerate(matrices)
    }
    label_losses = {
        li: [[_dot(lifted_labels[x], mat[a]) for a in range(k)] for x in range(n)]
        for li, mat in enumerate(matrices)
    }
    br = {
        (i, li): [_argmin(action_losses[(i, li)][x]) for x in range(n)]
        for i in (1, 2) for li in range(len(matrices))
    }

    decision_losses = {}
    loss_gaps = {}
    for i in (1, 2):
        vals = []
        gaps = []
        for li in range(len(matrices)):
            realized = 0.0
            oracle = 0.0
            for x in range(n):
                realized += weights[x] * label_losses[li][x][br[(i, li)][x]]
                oracle += weights[x] * min(label_losses[li][x])
            vals.append(realized)
            gaps.append(realized - oracle)
        decision_losses[i] = tuple(vals)
        loss_gaps[i] = tuple(gaps)

    disagreement_masses = {}
    for li in range(len(matrices)):
        for a1 in range(k):
            for a2 in range(k):
                if a1 == a2:
                    continue
                mass = 0.0
                for x in range(n):
                    if br[(1, li)][x] != a1 or br[(2, li)][x] != a2:
                        continue
                    row1 = action_losses[(1, li)][x]
                    row2 = action_losses[(2, li)][x]
                    if (row1[a2] - row1[a1] > config.alpha
                            or row2[a1] - row2[a2] > config.alpha):
                        mass += weights[x]
                disagreement_masses[(li, a1, a2)] = mass
    max_mass = max(disagreement_masses.values()) if disagreement_masses else 0.0

    residual_norms = {}
    max_residual = {}
    estimation_gaps = {}
    for i in (1, 2):
        norms = {}
        worst_gap = 0.0
        for li, mat in enumerate(matrices):
            residual_sums = [[0.0] * d for _ in range(k)]
            for x in range(n):
                a = br[(i, li)][x]
                for j in range(d):
                    residual_sums[a][j] += weights[x] * (labels[x][j] - preds[i][x][j])
            for a in range(k):
                norms[(li, a)] = math.sqrt(sum(v * v for v in residual_sums[a]))
                # estimation gap over the same event, any comparison action;
                # a lifted residual is [-r, r] since the constant parts cancel
                if d != outcome_dim:
                    lifted_resid = [-residual_sums[a][0], residual_sums[a][0]]
                else:
                    lifted_resid = residual_sums[a]
                for a_cmp in range(k):
                    gap = abs(_dot(lifted_resid, mat[a_cmp]))
                    if gap > worst_gap:
                        worst_gap = gap
        residual_norms[i] = norms
        max_residual[i] = max(norms.values()) if norms else 0.0
        estimation_gaps[i] = worst_gap

    masses_ok = max_mass < config.eta + _CUSHION
    residuals_ok = None
    estimation_ok = None
    if config.beta is not None:
        residuals_ok = {i: max_residual[i] <= config.beta + _CUSHION for i in (1, 2)}
        cap = config.beta * math.sqrt(d)
        estimation_ok = {i: estimation_gaps[i] <= cap + _CUSHION for i in (1, 2)}

    return AuditReport(
        briers=briers,
        decision_losses=decision_losses,
        loss_gaps=loss_gaps,
        disagreement_masses=disagreement_masses,
        max_disagreement_mass=max_mass,
        residual_norms=residual_norms,
        max_residual_norm=max_residual,
        loss_estimation_gaps=estimation_gaps,
        alpha=config.alpha,
        eta=config.eta,
        beta=config.beta,
        masses_ok=masses_ok,
        residuals_ok=residuals_ok,
        loss_estimation_ok=estimation_ok,
    )
