"""Reference transcription of the dual-threshold control loop, for tests.

Deliberately naive: straight-line conditionals over plain dicts and tuples,
sharing no code with policy.polca_step.  Used only to cross-check the
production step function case by case.
"""

from __future__ import annotations


def oracle_step(p, flags, t1, t2, t1_buffer, t2_buffer,
                f_lp_t1=1275.0, f_lp_t2=1110.0, f_hp_t2=1305.0, f_brake=288.0):
    """One control step.

    flags: dict with keys t1cap, t2cap, powerbrake, hp_capped_at_t2.
    Returns (new_flags_dict, list_of_(kind, freq)_tuples).
    """
    t1cap = bool(flags["t1cap"])
    t2cap = bool(flags["t2cap"])
    powerbrake = bool(flags["powerbrake"])
    hp_capped = bool(flags["hp_capped_at_t2"])
    emitted = []

    if p > 1.0:
        emitted.append(("cap_all", f_brake))
        powerbrake = True
        t1cap = True
        t2cap = True
    else:
        if p > t2:
            if t2cap is False:
                t2cap = True
                emitted.append(("cap_lp", f_lp_t2))
            else:
                emitted.append(("cap_hp", f_hp_t2))
                hp_capped = True
        else:
            if p > t1:
                t1cap = True
                if t2cap is False:
                    emitted.append(("cap_lp", f_lp_t1))

    if t2cap is True:
        if p < t2 - t2_buffer:
            emitted.append(("uncap_hp", None))
            emitted.append(("set_lp", f_lp_t1))
            t2cap = False
            hp_capped = False
            powerbrake = False
            t1cap = True

    if t1cap is True:
        if p < t1 - t1_buffer:
            emitted.append(("uncap_lp", None))
            t1cap = False

    return ({"t1cap": t1cap, "t2cap": t2cap, "powerbrake": powerbrake,
             "hp_capped_at_t2": hp_capped}, emitted)
