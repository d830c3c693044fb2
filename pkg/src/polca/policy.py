"""Dual-threshold row power controller and the baseline policies.

polca_step is a pure transcription of the control loop: an emergency brake
above the budget, escalating low-priority then high-priority frequency caps
at the upper threshold, a low-priority cap at the lower threshold, and
hysteresis uncap branches that require power to fall a buffer below the
threshold that triggered the cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .config import PolicyConfig

# action kinds
CAP_LP = "cap_lp"
CAP_HP = "cap_hp"
CAP_ALL = "cap_all"      # powerbrake: fast path, every server
SET_LP = "set_lp"
UNCAP_LP = "uncap_lp"
UNCAP_HP = "uncap_hp"


@dataclass(frozen=True)
class PolicyAction:
    kind: str
    freq: float | None = None    # None for uncaps (restore f_max)

    @property
    def is_brake(self) -> bool:
        return self.kind == CAP_ALL


@dataclass(frozen=True)
class PolicyState:
    t1cap: bool = False
    t2cap: bool = False
    powerbrake: bool = False
    hp_capped_at_t2: bool = False
    last_action_t_s: float = float("-inf")

    def check_invariants(self):
        assert not self.powerbrake or (self.t1cap and self.t2cap)
        assert not self.hp_capped_at_t2 or self.t2cap


def polca_step(p: float, state: PolicyState, cfg: PolicyConfig,
               now_s: float = 0.0) -> tuple[PolicyState, list[PolicyAction]]:
    """One control-loop step on a normalized row power reading."""
    t1cap, t2cap = state.t1cap, state.t2cap
    brake, hp2 = state.powerbrake, state.hp_capped_at_t2
    actions: list[PolicyAction] = []

    if p > 1.0:
        actions.append(PolicyAction(CAP_ALL, cfg.f_brake))
        brake = True
        t1cap = True
        t2cap = True
    elif p > cfg.t2:
        if not t2cap:
            t2cap = True
            actions.append(PolicyAction(CAP_LP, cfg.f_lp_t2))
        else:
            actions.append(PolicyAction(CAP_HP, cfg.f_hp_t2))
            hp2 = True
    elif p > cfg.t1:
        t1cap = True
        if not t2cap:
            # while the stronger T2 cap is live, re-emitting the T1 cap would
            # loosen it, so only the flag is recorded
            actions.append(PolicyAction(CAP_LP, cfg.f_lp_t1))

    if t2cap and p < cfg.t2 - cfg.t2_buffer:
        actions.append(PolicyAction(UNCAP_HP))
        actions.append(PolicyAction(SET_LP, cfg.f_lp_t1))
        t2cap = False
        hp2 = False
        brake = False
        t1cap = True

    if t1cap and p < cfg.t1 - cfg.t1_buffer:
        actions.append(PolicyAction(UNCAP_LP))
        t1cap = False

    new_state = PolicyState(t1cap=t1cap, t2cap=t2cap, powerbrake=brake,
                            hp_capped_at_t2=hp2,
                            last_action_t_s=now_s if actions else state.last_action_t_s)
    return new_state, actions


@dataclass(frozen=True)
class BaselineState:
    capped: bool = False
    powerbrake: bool = False


ONE_THRESH_LOW_PRI = "1-thresh-low-pri"
ONE_THRESH_ALL = "1-thresh-all"
NO_CAP = "no-cap"
POLCA = "polca"

POLICY_NAMES = (POLCA, ONE_THRESH_LOW_PRI, ONE_THRESH_ALL, NO_CAP)


def baseline_step(name: str, p: float, state: BaselineState,
                  cfg: PolicyConfig) -> tuple[BaselineState, list[PolicyAction]]:
    """Single-threshold and no-cap baselines; no-cap has no brake protection."""
    if name not in (ONE_THRESH_LOW_PRI, ONE_THRESH_ALL, NO_CAP):
        raise ValueError(f"unknown baseline policy: {name}")
    if name == NO_CAP:
        return state, []

    capped, brake = state.capped, state.powerbrake
    actions: list[PolicyAction] = []
    if p > 1.0:
        actions.append(PolicyAction(CAP_ALL, cfg.f_brake))
        brake = True
        capped = True
    elif p > cfg.t2 and not capped:
        capped = True
        actions.append(PolicyAction(CAP_LP, cfg.f_lp_t2))
        if name == ONE_THRESH_ALL:
            actions.append(PolicyAction(CAP_HP, cfg.f_lp_t2))

    if capped and p < cfg.t2 - cfg.t2_buffer:
        actions.append(PolicyAction(UNCAP_LP))
        if name == ONE_THRESH_ALL or brake:
            # a brake capped every server, so release must also restore HP
            actions.append(PolicyAction(UNCAP_HP))
        capped = False
        brake = False
    return BaselineState(capped=capped, powerbrake=brake), actions


class PolcaPolicy:
    """Stateful wrapper used by the simulator's control loop."""

    name = POLCA

    def __init__(self, cfg: PolicyConfig):
        self.cfg = cfg
        self.state = PolicyState()

    def step(self, p: float, now_s: float) -> list[PolicyAction]:
        self.state, actions = polca_step(p, self.state, self.cfg, now_s)
        return actions


class BaselinePolicy:
    def __init__(self, name: str, cfg: PolicyConfig):
        if name not in (ONE_THRESH_LOW_PRI, ONE_THRESH_ALL, NO_CAP):
            raise ValueError(f"unknown baseline policy: {name}")
        self.name = name
        self.cfg = cfg
        self.state = BaselineState()

    def step(self, p: float, now_s: float) -> list[PolicyAction]:
        self.state, actions = baseline_step(self.name, p, self.state, self.cfg)
        return actions


class NoCapPolicy(BaselinePolicy):
    def __init__(self, cfg: PolicyConfig | None = None):
        super().__init__(NO_CAP, cfg or PolicyConfig())


def make_policy(name: str, cfg: PolicyConfig):
    if name == POLCA:
        return PolcaPolicy(cfg)
    return BaselinePolicy(name, cfg)
