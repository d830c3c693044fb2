import math

import pytest
from hypothesis import given, settings, strategies as st

from polca.config import GpuSpec, PowerModelParams, ServerSpec
from polca import power_model as pm
from polca.power_model import (CalibrationError, Phase, apply_power_cap,
                               calibrate, freq_power_scale, gpu_power_fraction,
                               latency_increase, peak_power_reduction,
                               request_latency, server_power)

GPU = GpuSpec()
PARAMS = PowerModelParams()


def bisect_gamma(target_reduction, freq, idle, overshoot, lo=1e-3, hi=50.0):
    """Independent bisection oracle for the frequency-power exponent."""
    x = (freq - GPU.f_min) / (GPU.f_max - GPU.f_min)

    def reduction(g):
        return 1.0 - (idle + (overshoot - idle) * x ** g) / overshoot

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if reduction(mid) < target_reduction:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_scale_identity_at_f_max():
    assert freq_power_scale(GPU.f_max, GPU, PARAMS) == 1.0


def test_scale_zero_at_f_min():
    assert freq_power_scale(GPU.f_min, GPU, PARAMS) == 0.0


def test_scale_out_of_range():
    with pytest.raises(pm.FrequencyRangeError):
        freq_power_scale(100.0, GPU, PARAMS)


def test_gamma_matches_independent_bisection():
    # the 1275 MHz anchor: prompt peak 13% below the uncapped peak
    g = bisect_gamma(0.13, GPU.f_base, GPU.idle_fraction, PARAMS.prompt_overshoot_max)
    assert g == pytest.approx(1.36550, abs=5e-4)
    assert PARAMS.gamma == pytest.approx(g, abs=1e-3)
    assert peak_power_reduction(1275.0, GPU, PARAMS) == pytest.approx(0.13, abs=1e-3)


def test_idle_and_brake_power():
    for phase in (Phase.IDLE, Phase.BRAKE):
        assert gpu_power_fraction(phase, 0, GPU.f_max, GPU, PARAMS) == 0.20
        assert gpu_power_fraction(phase, 0, GPU.f_min, GPU, PARAMS) == 0.20


def test_prompt_saturation_reaches_overshoot():
    frac = gpu_power_fraction(Phase.PROMPT, PARAMS.prompt_saturation_tokens,
                              GPU.f_max, GPU, PARAMS)
    assert frac == PARAMS.prompt_overshoot_max


def test_prompt_power_grows_with_input_size():
    lo = gpu_power_fraction(Phase.PROMPT, 256, GPU.f_max, GPU, PARAMS)
    hi = gpu_power_fraction(Phase.PROMPT, 8192, GPU.f_max, GPU, PARAMS)
    assert hi > lo
    assert lo == PARAMS.p_prompt_base_frac


@given(st.floats(min_value=288.0, max_value=1410.0),
       st.floats(min_value=288.0, max_value=1410.0),
       st.integers(min_value=1, max_value=20000))
@settings(max_examples=200, deadline=None)
def test_power_monotone_in_frequency(f1, f2, tokens):
    if f1 > f2:
        f1, f2 = f2, f1
    for phase in (Phase.TOKEN, Phase.PROMPT):
        p1 = gpu_power_fraction(phase, tokens, f1, GPU, PARAMS)
        p2 = gpu_power_fraction(phase, tokens, f2, GPU, PARAMS)
        assert p1 <= p2 + 1e-12
        assert GPU.idle_fraction - 1e-12 <= p1 <= PARAMS.prompt_overshoot_max + 1e-12


@given(st.floats(min_value=288.0, max_value=1410.0),
       st.floats(min_value=288.0, max_value=1410.0))
@settings(max_examples=100, deadline=None)
def test_latency_monotone_in_frequency(f1, f2):
    if f1 > f2:
        f1, f2 = f2, f1
    slow1, _, _ = request_latency(2048, 256, 1, [(0.0, f1)], GPU, PARAMS)
    slow2, _, _ = request_latency(2048, 256, 1, [(0.0, f2)], GPU, PARAMS)
    assert slow1 >= slow2 - 1e-12


def test_server_power_example():
    spec = ServerSpec(host_power_watts=2200.0)
    assert server_power([0.20] * 8, spec) == pytest.approx(2200 + 8 * 80)


def test_server_power_zero_case():
    spec = ServerSpec(host_power_watts=0.0)
    assert server_power([0.0] * 8, spec) == 0.0


def test_server_power_tdp_sum():
    spec = ServerSpec(host_power_watts=2200.0)
    assert server_power([1.0] * 8, spec) == pytest.approx(2200 + 3200)


def test_server_power_length_mismatch():
    with pytest.raises(ValueError, match="8 GPU fractions"):
        server_power([0.2] * 7, ServerSpec())


def test_latency_zero_output_is_prompt_only():
    total, prompt_s, token_s = request_latency(1024, 0, 1, [(0.0, GPU.f_max)],
                                               GPU, PARAMS)
    assert token_s == 0.0
    assert total == prompt_s == pytest.approx(0.1)


def test_latency_linear_in_output_tokens():
    t1, _, tok1 = request_latency(1024, 100, 1, [(0.0, 1200.0)], GPU, PARAMS)
    t2, _, tok2 = request_latency(1024, 200, 1, [(0.0, 1200.0)], GPU, PARAMS)
    assert tok2 == pytest.approx(2 * tok1)


def test_bloom_like_slowdown_at_base_frequency():
    # (8192 in, 128 out) at a constant 1275 MHz: ~5% end-to-end slowdown
    assert latency_increase(1275.0, GPU, PARAMS) == pytest.approx(0.05, abs=0.01)


def test_piecewise_profile_integration_hand_computed():
    # prompt work 0.4s, token work 5.0s at f_max; frequency drops at t=2.0
    params = PowerModelParams()
    profile = [(0.0, 1410.0), (2.0, 1110.0)]
    total, prompt_s, token_s = request_latency(4096, 100, 1, profile, GPU, params)
    assert prompt_s == pytest.approx(0.4)          # finishes before the change
    # token: 1.6s of work at full speed, remaining 3.4 f_max-seconds slowed
    slow = (1410.0 / 1110.0) ** params.alpha_token
    assert token_s == pytest.approx(1.6 + 3.4 * slow, rel=1e-12)
    assert total == pytest.approx(prompt_s + token_s)


def test_prompt_spike_under_one_second():
    assert pm.prompt_work_s(8192, 1, PARAMS) < 1.0


def test_superlinearity_band():
    for f in range(1100, 1411, 10):
        f = float(f)
        assert peak_power_reduction(f, GPU, PARAMS) >= latency_increase(f, GPU, PARAMS) - 1e-9


def test_calibrate_single_trivial_anchor():
    res = calibrate([(GPU.f_max, 0.0, 0.0)], GPU)
    assert res.within_tolerance


def test_calibrate_hits_first_anchor_exactly():
    res = calibrate([(1275.0, 0.13, 0.05)], GPU)
    assert res.within_tolerance
    assert peak_power_reduction(1275.0, GPU, res.params) == pytest.approx(0.13, abs=1e-9)
    assert latency_increase(1275.0, GPU, res.params) == pytest.approx(0.05, abs=1e-9)


def test_calibrate_reports_residuals_for_paper_pair():
    # the published pair over-constrains a single-exponent model; the second
    # anchor's residuals must be reported rather than silently absorbed
    res = calibrate([(1275.0, 0.13, 0.05), (1110.0, 0.20, 0.07)], GPU)
    assert not res.within_tolerance
    second = res.residuals[1]
    assert second.freq == 1110.0
    assert second.power_error > 0.015
    assert second.perf_error > 0.015
    with pytest.raises(CalibrationError):
        calibrate([(1275.0, 0.13, 0.05), (1110.0, 0.20, 0.07)], GPU, strict=True)


def test_calibrate_infeasible_perf_anchor():
    with pytest.raises(CalibrationError):
        calibrate([(1400.0, 0.005, 0.5)], GPU)


def test_calibrate_dense_sweep_verification():
    res = calibrate([(1275.0, 0.13, 0.05)], GPU)
    for f in range(1120, 1411, 10):
        red = peak_power_reduction(float(f), GPU, res.params)
        direct = 1.0 - (0.2 + (1.05 - 0.2) * freq_power_scale(float(f), GPU, res.params)) / 1.05
        assert red == pytest.approx(direct, abs=1e-12)


def test_power_cap_misses_short_spikes():
    times = [0.0, 10.0, 10.5, 20.0, 40.0]          # spike 10.0-10.5, long overage 20-40
    watts = [300.0, 450.0, 300.0, 450.0, 300.0]
    clipped = apply_power_cap(times, watts, cap_watts=400.0, reaction_s=5.0)
    assert clipped[1] == 450.0                      # sub-reaction spike passes through
    assert clipped[4] == 300.0
    long = apply_power_cap([0.0, 6.0], [450.0, 450.0], 400.0, 5.0)
    assert long[1] == 400.0                         # sustained overage clipped
