import itertools

import numpy as np
import pytest

from polca.config import PolicyConfig
from polca.oracle import oracle_step
from polca.policy import (CAP_ALL, CAP_HP, CAP_LP, NO_CAP, ONE_THRESH_ALL,
                          ONE_THRESH_LOW_PRI, SET_LP, UNCAP_HP, UNCAP_LP,
                          BaselineState, PolicyState, baseline_step,
                          make_policy, polca_step)

CFG = PolicyConfig()


def acts(actions):
    return [(a.kind, a.freq) for a in actions]


def state(**kw):
    return PolicyState(**kw)


# -- spec-listed step examples ----------------------------------------------

def test_t1_crossing_caps_lp_to_base():
    s, a = polca_step(0.82, state(), CFG)
    assert s.t1cap and not s.t2cap
    assert acts(a) == [(CAP_LP, 1275.0)]


def test_t2_first_crossing_caps_lp_only():
    s, a = polca_step(0.90, state(), CFG)
    assert s.t2cap and not s.t1cap
    assert acts(a) == [(CAP_LP, 1110.0)]


def test_t2_escalates_to_hp_on_second_step():
    s, a = polca_step(0.90, state(t2cap=True), CFG)
    assert acts(a) == [(CAP_HP, 1305.0)]
    assert s.hp_capped_at_t2


def test_brake_fires_from_any_state():
    for st in (state(), state(t1cap=True, t2cap=True, powerbrake=True)):
        s, a = polca_step(1.02, st, CFG)
        assert acts(a) == [(CAP_ALL, 288.0)]
        assert s.powerbrake and s.t1cap and s.t2cap


def test_t2_uncap_steps_down_to_t1_level():
    s, a = polca_step(0.83, state(t2cap=True), CFG)
    assert acts(a) == [(UNCAP_HP, None), (SET_LP, 1275.0)]
    assert s.t1cap and not s.t2cap and not s.powerbrake


def test_t1_uncap_releases_lp():
    s, a = polca_step(0.74, state(t1cap=True), CFG)
    assert acts(a) == [(UNCAP_LP, None)]
    assert not s.t1cap


def test_below_thresholds_is_noop():
    s, a = polca_step(0.50, state(), CFG)
    assert a == []
    assert s == state()


def test_exact_threshold_is_strict():
    s, a = polca_step(CFG.t1, state(), CFG)
    assert a == [] and not s.t1cap


def test_t1_cap_suppressed_while_t2_cap_live():
    # stronger 1110 MHz cap must not be loosened by a 1275 MHz re-cap
    s, a = polca_step(0.85, state(t2cap=True), CFG)
    assert a == []
    assert s.t1cap and s.t2cap


# -- invariants and properties ----------------------------------------------

VALID_STATES = [
    state(),
    state(t1cap=True),
    state(t2cap=True),
    state(t1cap=True, t2cap=True),
    state(t2cap=True, hp_capped_at_t2=True),
    state(t1cap=True, t2cap=True, hp_capped_at_t2=True),
    state(t1cap=True, t2cap=True, powerbrake=True),
    state(t1cap=True, t2cap=True, powerbrake=True, hp_capped_at_t2=True),
]


def test_hp_capped_only_as_escalation():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        st = VALID_STATES[rng.integers(len(VALID_STATES))]
        p = float(rng.uniform(0, 1.1))
        _, a = polca_step(p, st, CFG)
        if any(k == CAP_HP for k, _ in acts(a)):
            assert st.t2cap


def test_brake_dominates():
    for st in VALID_STATES:
        _, a = polca_step(1.0001, st, CFG)
        assert (CAP_ALL, 288.0) in acts(a)


def test_idempotent_release_within_two_steps():
    for st in VALID_STATES:
        s = st
        for _ in range(2):
            s, _ = polca_step(0.5, s, CFG)
        assert not (s.t1cap or s.t2cap or s.powerbrake or s.hp_capped_at_t2)


def test_no_oscillation_inside_hysteresis_band():
    # once capped at T1, power wandering inside (t1-buffer, t1] leaves the
    # cap in place and emits nothing
    s, _ = polca_step(0.82, state(), CFG)
    for p in (0.79, 0.76, 0.80, 0.755):
        s, a = polca_step(p, s, CFG)
        assert a == []
        assert s.t1cap


# -- oracle equivalence -------------------------------------------------------

def as_flags(s: PolicyState) -> dict:
    return {"t1cap": s.t1cap, "t2cap": s.t2cap, "powerbrake": s.powerbrake,
            "hp_capped_at_t2": s.hp_capped_at_t2}


def run_both(p, s: PolicyState):
    new_state, actions = polca_step(p, s, CFG)
    got = (as_flags(new_state), acts(actions))
    want = oracle_step(p, as_flags(s), CFG.t1, CFG.t2, CFG.t1_buffer,
                       CFG.t2_buffer, CFG.f_lp_t1, CFG.f_lp_t2, CFG.f_hp_t2,
                       CFG.f_brake)
    return got, want


def all_16_states():
    for bits in itertools.product((False, True), repeat=4):
        yield PolicyState(t1cap=bits[0], t2cap=bits[1], powerbrake=bits[2],
                          hp_capped_at_t2=bits[3])


def boundary_powers():
    eps = 1e-6
    pts = [0.0, 0.5]
    for x in (CFG.t1 - CFG.t1_buffer, CFG.t1, CFG.t2 - CFG.t2_buffer, CFG.t2, 1.0):
        pts += [x - eps, x, x + eps]
    return pts


def test_oracle_equivalence_exhaustive_grid():
    for s in all_16_states():
        for p in boundary_powers():
            got, want = run_both(p, s)
            assert got == want, f"divergence at p={p}, state={s}"


def test_oracle_equivalence_randomized():
    rng = np.random.default_rng(1234)
    states = list(all_16_states())
    for _ in range(10_000):
        s = states[rng.integers(len(states))]
        p = float(rng.uniform(0.0, 1.2))
        got, want = run_both(p, s)
        assert got == want


# -- baselines ----------------------------------------------------------------

def test_one_thresh_all_caps_both_pools():
    s, a = baseline_step(ONE_THRESH_ALL, 0.90, BaselineState(), CFG)
    assert acts(a) == [(CAP_LP, 1110.0), (CAP_HP, 1110.0)]
    assert s.capped


def test_no_cap_ignores_budget_breach():
    s, a = baseline_step(NO_CAP, 1.05, BaselineState(), CFG)
    assert a == []
    assert not s.powerbrake


def test_one_thresh_low_pri_below_threshold_noop():
    _, a = baseline_step(ONE_THRESH_LOW_PRI, 0.70, BaselineState(), CFG)
    assert a == []


def test_one_thresh_low_pri_cycle():
    s, a = baseline_step(ONE_THRESH_LOW_PRI, 0.90, BaselineState(), CFG)
    assert acts(a) == [(CAP_LP, 1110.0)]
    s, a = baseline_step(ONE_THRESH_LOW_PRI, 0.86, s, CFG)   # inside band
    assert a == []
    s, a = baseline_step(ONE_THRESH_LOW_PRI, 0.83, s, CFG)
    assert acts(a) == [(UNCAP_LP, None)]
    assert not s.capped


def test_baseline_brake_release_restores_hp():
    s, a = baseline_step(ONE_THRESH_LOW_PRI, 1.01, BaselineState(), CFG)
    assert acts(a) == [(CAP_ALL, 288.0)]
    s, a = baseline_step(ONE_THRESH_LOW_PRI, 0.80, s, CFG)
    assert (UNCAP_HP, None) in acts(a) and (UNCAP_LP, None) in acts(a)


def test_unknown_baseline_rejected():
    with pytest.raises(ValueError, match="unknown baseline"):
        baseline_step("2-thresh", 0.5, BaselineState(), CFG)
    with pytest.raises(ValueError, match="unknown baseline"):
        make_policy("nope", CFG)


def test_make_policy_names():
    for name in ("polca", ONE_THRESH_LOW_PRI, ONE_THRESH_ALL, NO_CAP):
        assert make_policy(name, CFG).name == name
