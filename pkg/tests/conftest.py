"""Shared fixtures: counterexample instances and the seeded random-run corpus.

The corpus is built once per session and read by several modules, so the
records keep everything a check might need: the instance, the config, the
metrics of the untouched predictors, the final state, the transcript, and
the wall-clock cost of the run itself.
"""
import dataclasses
import time

import pytest
from hypothesis import settings

from redcal import (
    EmpiricalDataset,
    LossFamily,
    PredictorPair,
    RunConfig,
    brier_score,
    decision_calibrate,
    decision_loss,
    gen_decal_counterexample,
    gen_random_instance,
    gen_reconcile_counterexample,
    redcal,
)

settings.register_profile("suite", deadline=None, derandomize=True)
settings.load_profile("suite")


CORPUS_SIZE = 200
DECAL_SIZE = 60
ADAPTIVE_SIZE = 48

_ALPHAS = (0.02, 0.05, 0.1)
_ETAS = (0.05, 0.08, 0.12)
_NOISES = (0.3, 0.5, 0.8)


def corpus_params(seed: int) -> dict:
    """Deterministic spread over the instance space: n in [50, 400],
    d in 2..5, K in 2..4, one to three losses."""
    return dict(
        n=50 + (seed * 7) % 351,
        d=2 + seed % 4,
        k=2 + seed % 3,
        loss_count=1 + (seed // 2) % 3,
        noise=_NOISES[seed % 3],
    )


def corpus_config(seed: int) -> RunConfig:
    return RunConfig(
        alpha=_ALPHAS[seed % 3],
        eta=_ETAS[(seed // 3) % 3],
        beta=1e-3,
        seed=seed,
    )


@dataclasses.dataclass
class CorpusRun:
    seed: int
    params: dict
    config: RunConfig
    data: EmpiricalDataset
    family: LossFamily
    initial_briers: dict
    initial_losses: dict
    state: PredictorPair
    transcript: object
    reports: list
    run_seconds: float

    @property
    def resolved(self) -> dict:
        return self.transcript.config

    def test_split(self):
        """A disjoint draw from the same generator settings."""
        data, _ = gen_random_instance(seed=self.seed + 100_000, **self.params)
        return data


def _initial_metrics(data, family):
    briers = {i: brier_score(i, data) for i in (1, 2)}
    losses = {
        i: tuple(decision_loss(i, loss, data) for loss in family) for i in (1, 2)
    }
    return briers, losses


@pytest.fixture(scope="session")
def corpus():
    runs = []
    for seed in range(CORPUS_SIZE):
        params = corpus_params(seed)
        data, family = gen_random_instance(seed=seed, **params)
        config = corpus_config(seed)
        briers, losses = _initial_metrics(data, family)
        state = PredictorPair.from_dataset(data)
        t0 = time.perf_counter()
        state, transcript, reports = redcal(family, config, state, data)
        elapsed = time.perf_counter() - t0
        runs.append(CorpusRun(seed, params, config, data, family, briers,
                              losses, state, transcript, reports, elapsed))
    return runs


@dataclasses.dataclass
class DecalRun:
    seed: int
    config: RunConfig
    data: EmpiricalDataset
    family: LossFamily
    target: int
    state: PredictorPair
    reports: list


@pytest.fixture(scope="session")
def decal_runs():
    """Single-predictor calibration runs on a corpus prefix, fresh state."""
    runs = []
    for seed in range(DECAL_SIZE):
        params = corpus_params(seed)
        data, family = gen_random_instance(seed=seed, **params)
        config = RunConfig(alpha=_ALPHAS[seed % 3], eta=_ETAS[(seed // 3) % 3],
                           beta=5e-4, seed=seed)
        target = 1 + seed % 2
        state = PredictorPair.from_dataset(data)
        state, reports = decision_calibrate(target, family, 5e-4, state, data,
                                            config=config)
        runs.append(DecalRun(seed, config, data, family, target, state, reports))
    return runs


@pytest.fixture(scope="session")
def adaptive_runs():
    """Exact-arithmetic runs with the per-round tolerance switch on."""
    runs = []
    for seed in range(ADAPTIVE_SIZE):
        params = dict(n=80 + (seed * 11) % 200, d=2 + seed % 2, k=2 + seed % 3,
                      loss_count=1 + seed % 2, noise=0.5)
        data, family = gen_random_instance(seed=seed, **params)
        config = RunConfig(alpha=0.05, eta=0.08, beta=5e-4, m=0,
                           adaptive_beta=True, seed=seed)
        briers, losses = _initial_metrics(data, family)
        state = PredictorPair.from_dataset(data)
        state, transcript, reports = redcal(family, config, state, data)
        runs.append(CorpusRun(seed, params, config, data, family, briers,
                              losses, state, transcript, reports, 0.0))
    return runs


@pytest.fixture()
def reconcile_cx():
    return gen_reconcile_counterexample(0.2)


@pytest.fixture()
def decal_cx():
    return gen_decal_counterexample(0.1, 0.4)


def split_rounds(reports):
    """Group a report stream into rounds: each non-calibration step starts
    one, the calibration steps that follow belong to it."""
    rounds = []
    for r in reports:
        if r.stage != "decision_cal":
            rounds.append([r])
        else:
            rounds[-1].append(r)
    return rounds


def round_loss_changes(run: CorpusRun):
    """Per round: (delta, change in the target's decision loss under the
    round's own loss function, from before the round to after it)."""
    last = dict(run.initial_losses)
    out = []
    for group in split_rounds(run.reports):
        head = group[0]
        li = head.event.loss_index
        change = group[-1].decision_loss[head.target][li] - last[head.target][li]
        out.append((head.delta, change))
        for r in group:
            last[r.target] = r.decision_loss[r.target]
    return out


# ---------------------------------------------------------------------------
# bound-calculator comparison table, shared by test_bounds and acceptance
# ---------------------------------------------------------------------------

# kind, kwargs; expected values come from the 50-digit mpmath oracle below,
# except the pinned literals asserted separately in the tests.
BOUND_CASES = [
    ("exact", dict(d=1, alpha=0.1, eta=0.25, brier_1=0.40, brier_2=0.36)),
    ("exact", dict(d=1, alpha=0.1, eta=0.25, brier_1=0.0, brier_2=0.0)),
    ("exact", dict(d=2, alpha=0.1, eta=0.5, brier_1=0.25, brier_2=0.25)),
    ("exact", dict(d=4, alpha=0.1, eta=0.5, brier_1=0.25, brier_2=0.25)),
    ("exact", dict(d=5, alpha=0.007, eta=0.013, brier_1=3.7, brier_2=4.1)),
    ("grid", dict(d=1, alpha=0.2, eta=0.25, beta=0.1)),
    ("grid", dict(d=3, alpha=0.05, eta=0.1, beta=1e-4)),
    ("grid", dict(d=5, alpha=0.5, eta=0.9, beta=2.0)),
    ("grid", dict(d=2, alpha=1e-3, eta=0.01, beta=0.05)),
    ("space", dict(d=1, alpha=0.2, eta=0.25, beta=0.1, k=2, loss_count=1,
                   m=10), dict(t_max=2)),
    ("space", dict(d=5, alpha=0.05, eta=0.1, beta=0.01, k=4, loss_count=3,
                   m=1000), dict(t_max=10_000)),
    ("space", dict(d=2, alpha=0.1, eta=0.2, beta=0.05, k=3, loss_count=2,
                   m=40), dict()),
    ("dev", dict(d=1, alpha=0.2, eta=0.25, beta=0.1, k=2, loss_count=1,
                 n=10_000, delta=0.05), dict(ln_space=17.59)),
    ("dev", dict(d=1, alpha=0.2, eta=0.25, beta=0.1, k=2, loss_count=1,
                 n=100, delta=0.5), dict(ln_space=2.0)),
    ("dev", dict(d=8, alpha=0.1, eta=0.1, beta=0.02, k=16, loss_count=4,
                 n=1_000_000, delta=1e-6), dict(ln_space=1e6)),
    ("dev", dict(d=512, alpha=0.3, eta=0.4, beta=0.25, k=64, loss_count=32,
                 n=10**8, delta=0.01), dict(ln_space=3.5e4)),
    ("dev", dict(d=3, alpha=0.05, eta=0.05, beta=0.005, k=2, loss_count=1,
                 n=500, delta=0.05), dict()),
    ("dev", dict(d=2, alpha=0.02, eta=0.3, beta=0.001, k=5, loss_count=3,
                 n=25_000, delta=0.05), dict()),
    ("grid", dict(d=4, alpha=0.08, eta=0.15, beta=0.3)),
    ("exact", dict(d=3, alpha=0.05, eta=0.1, brier_1=1.2, brier_2=0.9)),
    ("space", dict(d=1, alpha=0.1, eta=0.25, beta=1e-3, k=2, loss_count=1,
                   m=7072), dict(t_max=1)),
    ("dev", dict(d=1, alpha=0.1, eta=0.25, beta=1e-3, k=2, loss_count=1,
                 n=2, delta=0.999), dict(ln_space=0.0)),
]


def mp_bound_oracle(kind: str, kwargs: dict, extra: dict | None = None) -> dict:
    """Recompute one table row with 50-digit mpmath arithmetic."""
    from mpmath import mp, mpf, ceil, log, sqrt

    mp.dps = 50
    extra = extra or {}
    d = mpf(kwargs["d"])
    alpha = mpf(kwargs["alpha"])
    eta = mpf(kwargs["eta"])
    if kind == "exact":
        total = mpf(kwargs["brier_1"]) + mpf(kwargs["brier_2"])
        return {"exact": int(ceil(4 * d * total / (alpha ** 2 * eta)))}
    gain = min(mpf(kwargs["beta"]) ** 2, eta * alpha ** 2 / (4 * d))
    if kind == "grid":
        return {
            "t_max": int(ceil(2 * d / gain)),
            "m_min": int(ceil(sqrt(d / (2 * gain)))),
        }
    k = mpf(kwargs["k"])
    count = mpf(kwargs["loss_count"])
    if kind == "space":
        if "t_max" in extra:
            t_max = mpf(extra["t_max"])
        else:
            t_max = ceil(2 * d / gain)
        m = mpf(kwargs["m"])
        ln_one = log(4) + 2 * log(count) + 3 * log(k) + d * log(m + 1)
        return {"ln_space": float((t_max + 1) * ln_one)}
    # deviation bounds; ln_space defaults from the grid cap and minimal m
    n = mpf(kwargs["n"])
    delta = mpf(kwargs["delta"])
    if "ln_space" in extra:
        ln_s = mpf(extra["ln_space"])
    else:
        t_max = ceil(2 * d / gain)
        m = ceil(sqrt(d / (2 * gain)))
        ln_s = (t_max + 1) * (log(4) + 2 * log(count) + 3 * log(k) + d * log(m + 1))
    return {
        "brier_dev": float(sqrt(d * (log(6 * d / delta) + ln_s) / (2 * n))),
        "calib_dev": float(sqrt(3 * d * (log(6 * d * k * count / delta) + ln_s) / (2 * n))),
        "mass_dev": float(sqrt(2 * (log(6 * k * count / delta) + ln_s) / (2 * n))),
    }


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion at the end of the run
# ---------------------------------------------------------------------------

def pytest_terminal_summary(terminalreporter):
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            if outcome == "passed":
                if rep.when == "call":
                    lines.setdefault(name, f"{name}: PASS")
            else:
                lines[name] = f"{name}: FAIL"
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name in sorted(lines):
            terminalreporter.write_line(lines[name])
