"""Two-phase inference power and latency model under GPU frequency caps.

Power: an idle floor plus a dynamic part scaled by s(f), a power law in
normalized SM frequency.  Prompt-phase power rises with total input tokens and
saturates above TDP; token-phase power is flat and low.  Latency: the prompt
phase is compute-bound (slows as f_max/f), the token phase memory-bound (slows
as (f_max/f)^alpha with alpha < 1).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

from scipy.optimize import brentq

from .config import GpuSpec, PowerModelParams, ServerSpec

PROMPT_REFERENCE_TOKENS = 256  # prompt power sits at its base level here


class Phase(enum.Enum):
    IDLE = "idle"
    PROMPT = "prompt"
    TOKEN = "token"
    BRAKE = "brake"


class FrequencyRangeError(ValueError):
    """Requested frequency lies outside [f_min, f_max]."""


def freq_power_scale(f: float, spec: GpuSpec, params: PowerModelParams) -> float:
    """Dynamic-power multiplier s(f), 1.0 at f_max and 0.0 at f_min."""
    if not (spec.f_min <= f <= spec.f_max):
        raise FrequencyRangeError(
            f"frequency {f} MHz outside [{spec.f_min}, {spec.f_max}]")
    x = (f - spec.f_min) / (spec.f_max - spec.f_min)
    return x ** params.gamma


def prompt_power_fraction(effective_tokens: float, params: PowerModelParams) -> float:
    """Uncapped prompt-phase GPU power as a fraction of TDP.

    Piecewise linear from the base level at 256 tokens up to the overshoot
    level at the saturation token count, flat on both sides.
    """
    lo, hi = PROMPT_REFERENCE_TOKENS, params.prompt_saturation_tokens
    if effective_tokens <= lo:
        return params.p_prompt_base_frac
    if effective_tokens >= hi:
        return params.prompt_overshoot_max
    span = params.prompt_overshoot_max - params.p_prompt_base_frac
    return params.p_prompt_base_frac + span * (effective_tokens - lo) / (hi - lo)


def gpu_power_fraction(phase: Phase, effective_tokens: float, f: float,
                       spec: GpuSpec, params: PowerModelParams) -> float:
    """GPU power as a fraction of TDP for one phase at frequency f."""
    idle = spec.idle_fraction
    if phase is Phase.IDLE or phase is Phase.BRAKE:
        return idle
    s = freq_power_scale(f, spec, params)
    if phase is Phase.TOKEN:
        return idle + (params.p_token_frac - idle) * s
    return idle + (prompt_power_fraction(effective_tokens, params) - idle) * s


def server_power(gpu_fractions, spec: ServerSpec) -> float:
    """Total server draw in watts: constant host power plus per-GPU draws."""
    fractions = list(gpu_fractions)
    if len(fractions) != spec.gpus_per_server:
        raise ValueError(
            f"expected {spec.gpus_per_server} GPU fractions, got {len(fractions)}")
    return spec.host_power_watts + sum(fr * spec.gpu.tdp_watts for fr in fractions)


def prompt_work_s(prompt_tokens: int, batch: int, params: PowerModelParams) -> float:
    """Prompt-phase duration at f_max, seconds."""
    return params.prompt_time_per_ktoken_s * (prompt_tokens * batch) / 1024.0


def token_work_s(output_tokens: int, params: PowerModelParams) -> float:
    """Token-phase duration at f_max, seconds."""
    return output_tokens * params.token_time_s


def prompt_slowdown(f: float, spec: GpuSpec, params: PowerModelParams) -> float:
    return spec.f_max / f


def token_slowdown(f: float, spec: GpuSpec, params: PowerModelParams) -> float:
    return (spec.f_max / f) ** params.alpha_token


def _phase_time(work_s: float, profile, t0: float, slowdown) -> tuple[float, float]:
    """Wall time to finish work_s (f_max-seconds) starting at t0 under profile.

    profile is a sorted sequence of (start_s, freq) segments; the last segment
    extends forever.  Returns (end_time, wall_duration).
    """
    if work_s <= 0:
        return t0, 0.0
    segs = list(profile)
    if not segs:
        raise ValueError("frequency profile must contain at least one segment")
    t = t0
    remaining = work_s
    for i, (seg_start, freq) in enumerate(segs):
        seg_end = segs[i + 1][0] if i + 1 < len(segs) else float("inf")
        if seg_end <= t:
            continue
        rate = 1.0 / slowdown(freq)           # f_max-seconds of work per wall second
        span = seg_end - max(t, seg_start)
        done = span * rate
        if done >= remaining:
            t = max(t, seg_start) + remaining / rate
            return t, t - t0
        remaining -= done
        t = seg_end
    raise AssertionError("unreachable: last profile segment is unbounded")


def request_latency(prompt_tokens: int, output_tokens: int, batch: int,
                    freq_profile, spec: GpuSpec, params: PowerModelParams,
                    start_s: float = 0.0):
    """Execution time of one request under a piecewise-constant frequency profile.

    freq_profile: sorted [(start_s, freq), ...]; the request begins its prompt
    phase at start_s.  Returns (total_s, prompt_s, token_s).
    """
    p_work = prompt_work_s(prompt_tokens, batch, params)
    t_work = token_work_s(output_tokens, params)
    t_mid, prompt_s = _phase_time(p_work, freq_profile, start_s,
                                  lambda f: prompt_slowdown(f, spec, params))
    _, token_s = _phase_time(t_work, freq_profile, t_mid,
                             lambda f: token_slowdown(f, spec, params))
    return prompt_s + token_s, prompt_s, token_s


# ---------------------------------------------------------------------------
# Calibration

#: request shape used for latency anchors: the heaviest characterized config
CALIBRATION_PROMPT_TOKENS = 8192
CALIBRATION_OUTPUT_TOKENS = 128


@dataclass(frozen=True)
class AnchorResidual:
    freq: float
    target_power_reduction: float
    achieved_power_reduction: float
    target_perf_reduction: float
    achieved_perf_reduction: float

    @property
    def power_error(self) -> float:
        return self.achieved_power_reduction - self.target_power_reduction

    @property
    def perf_error(self) -> float:
        return self.achieved_perf_reduction - self.target_perf_reduction


@dataclass(frozen=True)
class CalibrationResult:
    params: PowerModelParams
    residuals: tuple[AnchorResidual, ...]
    within_tolerance: bool
    tolerance: float


class CalibrationError(ValueError):
    def __init__(self, message: str, residuals: tuple[AnchorResidual, ...]):
        super().__init__(message)
        self.residuals = residuals


def peak_power_reduction(f: float, spec: GpuSpec, params: PowerModelParams) -> float:
    """Relative prompt-peak power reduction at frequency f vs uncapped."""
    sat = params.prompt_saturation_tokens
    capped = gpu_power_fraction(Phase.PROMPT, sat, f, spec, params)
    uncapped = gpu_power_fraction(Phase.PROMPT, sat, spec.f_max, spec, params)
    return 1.0 - capped / uncapped


def latency_increase(f: float, spec: GpuSpec, params: PowerModelParams) -> float:
    """Relative end-to-end slowdown of the calibration request at frequency f."""
    capped, _, _ = request_latency(CALIBRATION_PROMPT_TOKENS, CALIBRATION_OUTPUT_TOKENS,
                                   1, [(0.0, f)], spec, params)
    base, _, _ = request_latency(CALIBRATION_PROMPT_TOKENS, CALIBRATION_OUTPUT_TOKENS,
                                 1, [(0.0, spec.f_max)], spec, params)
    return capped / base - 1.0


def _evaluate_anchors(anchors, spec, params) -> tuple[AnchorResidual, ...]:
    out = []
    for freq, p_red, perf_red in anchors:
        out.append(AnchorResidual(
            freq=freq,
            target_power_reduction=p_red,
            achieved_power_reduction=peak_power_reduction(freq, spec, params),
            target_perf_reduction=perf_red,
            achieved_perf_reduction=latency_increase(freq, spec, params),
        ))
    return tuple(out)


def calibrate(anchors, spec: GpuSpec | None = None,
              base: PowerModelParams | None = None,
              tolerance: float = 0.01, strict: bool = False) -> CalibrationResult:
    """Fit (gamma, alpha_token) by root-finding on the first anchor.

    anchors: [(freq_mhz, power_reduction, perf_reduction), ...] with at least
    one entry inside the supported frequency range.  The first anchor is hit
    exactly by 1-D bisection in gamma (power) and alpha (latency); every
    anchor is then evaluated and its residuals reported.  With strict=True an
    out-of-tolerance anchor raises CalibrationError carrying the residuals.
    """
    spec = spec or GpuSpec()
    base = base or PowerModelParams()
    if not anchors:
        raise ValueError("at least one anchor is required")
    for freq, _, _ in anchors:
        if not (spec.f_min <= freq <= spec.f_max):
            raise FrequencyRangeError(f"anchor frequency {freq} MHz out of range")

    f0, p_red0, perf_red0 = anchors[0]
    params = base

    if f0 < spec.f_max and p_red0 > 0:
        def power_gap(gamma):
            return peak_power_reduction(f0, spec, replace(params, gamma=gamma)) - p_red0
        if power_gap(50.0) < 0:
            raise CalibrationError(
                f"power reduction {p_red0:.1%} at {f0} MHz exceeds the dynamic-power range",
                _evaluate_anchors(anchors, spec, params))
        gamma = brentq(power_gap, 1e-3, 50.0, xtol=1e-12)
        params = replace(params, gamma=gamma)

    if f0 < spec.f_max and perf_red0 > 0:
        def perf_gap(alpha):
            return latency_increase(f0, spec, replace(params, alpha_token=alpha)) - perf_red0
        if perf_gap(0.0) * perf_gap(1.0) > 0:
            raise CalibrationError(
                f"no alpha_token in [0, 1] reaches a {perf_red0:.1%} slowdown at {f0} MHz",
                _evaluate_anchors(anchors, spec, params))
        alpha = brentq(perf_gap, 0.0, 1.0, xtol=1e-12)
        params = replace(params, alpha_token=alpha)

    residuals = _evaluate_anchors(anchors, spec, params)
    ok = all(abs(r.power_error) <= tolerance and abs(r.perf_error) <= tolerance
             for r in residuals)
    if strict and not ok:
        worst = max(residuals, key=lambda r: max(abs(r.power_error), abs(r.perf_error)))
        raise CalibrationError(
            f"anchor at {worst.freq} MHz infeasible: power error "
            f"{worst.power_error:+.3%}, perf error {worst.perf_error:+.3%}",
            residuals)
    return CalibrationResult(params=params, residuals=residuals,
                             within_tolerance=ok, tolerance=tolerance)


def apply_power_cap(times, watts, cap_watts: float, reaction_s: float):
    """Reactive power-cap post-processor: clips a piecewise-constant series.

    Spikes shorter than reaction_s pass through unclipped, which is why the
    capping policies use frequency caps instead.  Not used by any policy;
    provided to demonstrate the reactive-capping failure mode.
    takes (segment_start_times, watts) and returns a clipped watts list.
    """
    if len(times) != len(watts):
        raise ValueError("times and watts must have equal lengths")
    clipped = list(watts)
    over_since = None
    for i, (t, w) in enumerate(zip(times, watts)):
        if w > cap_watts:
            if over_since is None:
                over_since = t
            if t - over_since >= reaction_s:
                clipped[i] = cap_watts
        else:
            over_since = None
    return clipped
