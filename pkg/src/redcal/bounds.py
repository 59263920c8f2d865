"""Closed-form run-length, description-length, and deviation bounds.

Integer bounds (iteration counts, minimal grid resolution) are computed in
exact rational arithmetic so the ceilings never suffer float drift.
Real-valued bounds are evaluated in log space to stay finite even when the
patch-function count is astronomically large.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple


@dataclass(frozen=True)
class BoundInputs:
    """Inputs shared by the bound calculators; leave unused fields as None.

    d: outcome dimension, k: actions per loss, loss_count: family size,
    alpha/eta/beta: run parameters, m: grid resolution, brier_1/brier_2:
    initial squared errors, n: sample size, delta: failure probability.
    """

    d: int
    alpha: float
    eta: float
    k: int | None = None
    loss_count: int | None = None
    beta: float | None = None
    m: int | None = None
    brier_1: float | None = None
    brier_2: float | None = None
    n: int | None = None
    delta: float | None = None


class GridBound(NamedTuple):
    t_max: int
    m_min: int


class DeviationBounds(NamedTuple):
    brier_dev: float
    calib_dev: float
    mass_dev: float


def _require(inputs: BoundInputs, *names: str) -> None:
    missing = [name for name in names if getattr(inputs, name) is None]
    if missing:
        raise ValueError(f"bound requires {', '.join(missing)}")


def _ceil_sqrt(value: Fraction) -> int:
    """Smallest non-negative integer m with m*m >= value; exact."""
    if value <= 0:
        return 0
    c = -((-value.numerator) // value.denominator)  # ceil(value)
    root = math.isqrt(c)
    if root * root < c:
        root += 1
    return root


def min_brier_gain(inputs: BoundInputs) -> Fraction:
    """Per-step progress floor min{beta^2, eta alpha^2 / (4d)}, exact."""
    _require(inputs, "beta")
    beta_sq = Fraction(inputs.beta) ** 2
    outer = Fraction(inputs.eta) * Fraction(inputs.alpha) ** 2 / (4 * inputs.d)
    return min(beta_sq, outer)


def exact_iteration_bound(inputs: BoundInputs) -> int:
    """Ceiling of 4d (B1 + B2) / (alpha^2 eta): the exact-arithmetic cap on
    disagreement-patching rounds."""
    _require(inputs, "brier_1", "brier_2")
    total = Fraction(inputs.brier_1) + Fraction(inputs.brier_2)
    bound = 4 * inputs.d * total / (Fraction(inputs.alpha) ** 2 * Fraction(inputs.eta))
    return math.ceil(bound)


def grid_iteration_bound(inputs: BoundInputs) -> GridBound:
    """Total patch cap under grid rounding plus the minimal valid resolution.

    t_max = ceil(2d / min{beta^2, eta alpha^2 / (4d)}) and m_min is the
    smallest integer with m^2 >= d / (2 min{...}); running with m >= m_min
    keeps every accepted patch strictly profitable.
    """
    gain = min_brier_gain(inputs)
    t_max = math.ceil(Fraction(2 * inputs.d) / gain)
    m_min = _ceil_sqrt(Fraction(inputs.d) / (2 * gain))
    return GridBound(t_max=t_max, m_min=m_min)


def transcript_space_log(inputs: BoundInputs, t_max: int | None = None,
                         m: int | None = None) -> float:
    """Natural log of the number of reachable patched predictors.

    Each of at most t_max + 1 stages multiplies the count by
    4 |L|^2 K^3 (m+1)^d, so the log is (t_max + 1) * ln(4 |L|^2 K^3 (m+1)^d).
    """
    _require(inputs, "k", "loss_count")
    if t_max is None:
        t_max = grid_iteration_bound(inputs).t_max
    if m is None:
        m = inputs.m if inputs.m is not None else grid_iteration_bound(inputs).m_min
    per_stage = (
        math.log(4.0)
        + 2.0 * math.log(inputs.loss_count)
        + 3.0 * math.log(inputs.k)
        + inputs.d * math.log(m + 1)
    )
    return (t_max + 1) * per_stage


def deviation_bounds(inputs: BoundInputs, ln_space: float | None = None) -> DeviationBounds:
    """Finite-sample uniform deviation widths at confidence 1 - delta.

    ln_space is the log patch-function count (defaults to
    transcript_space_log); each width is a sqrt((ln terms) / 2n) expression:
      brier_dev = sqrt(d (ln(6d/delta) + ln_space) / (2n))
      calib_dev = sqrt(3d (ln(6dK|L|/delta) + ln_space) / (2n))
      mass_dev  = sqrt(2 (ln(6K|L|/delta) + ln_space) / (2n))
    """
    _require(inputs, "k", "loss_count", "n", "delta")
    if ln_space is None:
        ln_space = transcript_space_log(inputs)
    d, k, ell = inputs.d, inputs.k, inputs.loss_count
    n, delta = inputs.n, inputs.delta
    brier_dev = math.sqrt(d * (math.log(6.0 * d / delta) + ln_space) / (2.0 * n))
    calib_dev = math.sqrt(3.0 * d * (math.log(6.0 * d * k * ell / delta) + ln_space) / (2.0 * n))
    mass_dev = math.sqrt(2.0 * (math.log(6.0 * k * ell / delta) + ln_space) / (2.0 * n))
    return DeviationBounds(brier_dev=brier_dev, calib_dev=calib_dev, mass_dev=mass_dev)


def baseline_iteration_bound(eps: float, eta: float, brier_1: float, brier_2: float) -> int:
    """Ceiling of 16 (B1 + B2) / (eta eps^2): round cap for the scalar baseline."""
    total = Fraction(brier_1) + Fraction(brier_2)
    return math.ceil(16 * total / (Fraction(eta) * Fraction(eps) ** 2))


def baseline_min_grid(eps: float, eta: float) -> int:
    """Smallest m with 1/(4 m^2) <= eta eps^2 / 16, i.e. m >= 2 / (eps sqrt(eta)).

    Rounding on this grid keeps every baseline round's Brier drop at least
    eta eps^2 / 16."""
    return _ceil_sqrt(Fraction(4) / (Fraction(eta) * Fraction(eps) ** 2))
