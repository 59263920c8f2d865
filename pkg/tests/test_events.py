"""Event membership masks, masses, and residual reductions."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from redcal import (
    BandEvent,
    BestResponseEvent,
    DisagreementEvent,
    EmpiricalDataset,
    EmptyEventError,
    FrozenRegion,
    IntersectEvent,
    LossFamily,
    PredictorPair,
    RedcalError,
    band_members,
    best_response_actions,
    br_event_members,
    calibration_residual_norm,
    conditional_mean_residual,
    descriptor_members,
    disagreement_members,
    event_mass,
    gen_random_instance,
    residual_sum,
    threshold_loss,
)


def binary_instance():
    data = EmpiricalDataset.build(
        [1, 2, 3, 4],
        [[0.0], [1.0], [1.0], [0.0]],
        [[0.2], [0.4], [0.9], [0.45]],
        [[0.8], [0.6], [0.9], [0.55]],
    )
    return data, LossFamily((threshold_loss(),)), PredictorPair.from_dataset(data)


def test_br_event_membership():
    data, fam, state = binary_instance()
    low = br_event_members(BestResponseEvent(0, 0), 1, state, fam)
    assert low.tolist() == [True, True, False, True]
    high = br_event_members(BestResponseEvent(0, 1), 2, state, fam)
    assert high.tolist() == [True, True, True, True]


def test_disagreement_requires_both_actions_and_margin():
    data, fam, state = binary_instance()
    ev = DisagreementEvent(0, 0, 1, alpha=0.15)
    members = disagreement_members(ev, state, fam)
    # unit 1: f1=0.2 plays 0 with margin 0.6, f2=0.8 plays 1: in.
    # unit 2: margins are 0.2 each, still above 0.15: in.
    # unit 3: both play action 1: out.  unit 4: margins 0.1: out.
    assert members.tolist() == [True, True, False, False]


def test_disagreement_margin_is_strict():
    data, fam, state = binary_instance()
    # unit 2's asserted margins are exactly 0.2 on both sides
    ev = DisagreementEvent(0, 0, 1, alpha=0.2 - 1e-12)
    assert disagreement_members(ev, state, fam).tolist()[1] is True
    ev_eq = DisagreementEvent(0, 0, 1, alpha=0.19999999999999998)
    at_alpha = disagreement_members(ev_eq, state, fam)
    # the margin equals alpha here, so strict > drops the unit
    assert at_alpha.tolist()[1] is False


def test_one_sided_margin_is_enough():
    # margins are exactly representable: f1 asserts 0.25, f2 asserts 0.75
    data = EmpiricalDataset.build(
        [1], [[1.0]], [[0.375]], [[0.875]])
    fam = LossFamily((threshold_loss(),))
    state = PredictorPair.from_dataset(data)
    # only f2's side clears alpha = 0.5; that is enough
    assert disagreement_members(DisagreementEvent(0, 0, 1, 0.5), state, fam).all()
    # alpha = 0.75 shuts the last side (strict comparison)
    assert not disagreement_members(DisagreementEvent(0, 0, 1, 0.75), state, fam).any()


def test_band_members_signs():
    data = EmpiricalDataset.build(
        [1, 2, 3, 4],
        [[0.0], [1.0], [1.0], [0.0]],
        [[0.125], [0.375], [0.875], [0.25]],
        [[0.75], [0.5], [0.875], [0.5]],
    )
    state = PredictorPair.from_dataset(data)
    above = band_members(BandEvent(side=">", eps=0.1), state)
    below = band_members(BandEvent(side="<", eps=0.1), state)
    assert above.tolist() == [False, False, False, False]
    assert below.tolist() == [True, True, False, True]
    # unit 4's gap is exactly 0.25; strict comparison keeps it out
    tight = band_members(BandEvent(side="<", eps=0.25), state)
    assert tight.tolist() == [True, False, False, False]


def test_band_side_validation():
    with pytest.raises(RedcalError):
        BandEvent(side="=", eps=0.1)


def test_event_mass_and_empty_residuals():
    data, fam, state = binary_instance()
    none = np.zeros(4, dtype=bool)
    assert event_mass(none, data) == 0.0
    assert residual_sum(none, 1, data, state).tolist() == [0.0]
    with pytest.raises(EmptyEventError):
        conditional_mean_residual(none, 1, data, state)


def test_residual_sum_matches_manual():
    data, fam, state = binary_instance()
    members = np.array([True, True, False, False])
    expected = 0.25 * (0.0 - 0.2) + 0.25 * (1.0 - 0.4)
    got = residual_sum(members, 1, data, state)
    assert got.shape == (1,)
    assert got[0] == pytest.approx(expected, abs=1e-15)
    cond = conditional_mean_residual(members, 1, data, state)
    assert cond[0] == pytest.approx(expected / 0.5, abs=1e-15)


def test_calibration_residual_norm_via_descriptor():
    data, fam, state = binary_instance()
    ev = BestResponseEvent(0, 0)
    members = br_event_members(ev, 1, state, fam)
    manual = np.linalg.norm(residual_sum(members, 1, data, state))
    assert calibration_residual_norm(ev, 1, data, state, fam) == pytest.approx(manual)


def test_intersect_event_requires_mask():
    data, fam, state = binary_instance()
    region = FrozenRegion(event=DisagreementEvent(0, 0, 1, 0.15), mask=None, seq=0)
    ev = IntersectEvent(base=BestResponseEvent(0, 0), region=region)
    with pytest.raises(RedcalError):
        descriptor_members(ev, 1, state, fam)
    frozen = FrozenRegion(event=region.event,
                          mask=np.array([True, True, False, False]), seq=0)
    got = descriptor_members(IntersectEvent(BestResponseEvent(0, 0), frozen),
                             1, state, fam)
    assert got.tolist() == [True, True, False, False]


def test_frozen_mask_outlives_prediction_changes():
    data, fam, state = binary_instance()
    ev = DisagreementEvent(0, 0, 1, 0.15)
    frozen = FrozenRegion(event=ev, mask=disagreement_members(ev, state, fam), seq=0)
    state.predictions[1][:] = state.predictions[2]  # kill the disagreement
    assert not disagreement_members(ev, state, fam).any()
    assert frozen.mask.tolist() == [True, True, False, False]


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 0.5))
def test_disagreement_events_partition_consistently(seed, alpha):
    """Members of (a1, a2) must actually best-respond with a1 and a2, and
    events with different action pairs never overlap."""
    data, family = gen_random_instance(n=40, d=3, k=3, loss_count=1, noise=0.6,
                                       seed=seed)
    state = PredictorPair.from_dataset(data)
    loss = family[0]
    br1 = best_response_actions(state.predictions[1], loss)
    br2 = best_response_actions(state.predictions[2], loss)
    seen = np.zeros(data.n, dtype=int)
    for a1 in range(loss.k):
        for a2 in range(loss.k):
            if a1 == a2:
                continue
            members = disagreement_members(
                DisagreementEvent(0, a1, a2, alpha), state, family)
            assert np.all(br1[members] == a1)
            assert np.all(br2[members] == a2)
            seen += members.astype(int)
    assert seen.max() <= 1


@given(st.integers(0, 2 ** 32 - 1))
def test_event_mass_bounded_by_total_weight(seed):
    data, family = gen_random_instance(n=25, d=2, k=3, loss_count=2, noise=0.4,
                                       seed=seed)
    state = PredictorPair.from_dataset(data)
    for li in range(len(family)):
        for a in range(family.k):
            mask = br_event_members(BestResponseEvent(li, a), 1, state, family)
            mass = event_mass(mask, data)
            assert 0.0 <= mass <= 1.0 + 1e-12
