"""SLO metrics over paired capped/uncapped runs, plus series statistics.

Latency impacts are relative shifts of nearest-rank percentiles between a
capped run and the uncapped run on the identical trace and seed; mixing
traces is a hard error.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import PolicyConfig
from .policy import CAP_ALL, CAP_HP, CAP_LP
from .simulator import SimulationResult

# service-level objectives: max latency impact in percent, per priority
SLO_LIMITS = {
    "high": {"p50": 1.0, "p99": 5.0},
    "low": {"p50": 5.0, "p99": 50.0},
}


def nearest_rank_percentile(values, pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value."""
    if len(values) == 0:
        raise ValueError("empty sample")
    ordered = sorted(values)
    rank = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return ordered[rank - 1]


class PairingError(ValueError):
    """Capped and uncapped results come from different traces or seeds."""


@dataclass
class SloReport:
    policy: str
    p50_impact_pct: dict = field(default_factory=dict)   # priority -> % or None
    p99_impact_pct: dict = field(default_factory=dict)
    throughput_delta_pct: dict = field(default_factory=dict)  # class -> %
    powerbrake_count: int = 0
    budget_breach_count: int = 0
    cap_event_counts: dict = field(default_factory=dict)
    time_capped_s: dict = field(default_factory=dict)

    def slo_pass(self) -> bool:
        if self.powerbrake_count != 0:
            return False
        for prio, limits in SLO_LIMITS.items():
            p50 = self.p50_impact_pct.get(prio)
            p99 = self.p99_impact_pct.get(prio)
            if p50 is not None and p50 >= limits["p50"]:
                return False
            if p99 is not None and p99 >= limits["p99"]:
                return False
        return True

    def failed_slos(self) -> list[str]:
        out = []
        if self.powerbrake_count != 0:
            out.append(f"powerbrakes={self.powerbrake_count}")
        for prio, limits in SLO_LIMITS.items():
            p50 = self.p50_impact_pct.get(prio)
            p99 = self.p99_impact_pct.get(prio)
            if p50 is not None and p50 >= limits["p50"]:
                out.append(f"{prio}.p50={p50:.2f}%")
            if p99 is not None and p99 >= limits["p99"]:
                out.append(f"{prio}.p99={p99:.2f}%")
        return out


def _latencies_by_priority(result: SimulationResult) -> dict:
    out: dict = {"low": [], "high": []}
    for r in result.completed():
        out[r.priority].append(r.latency_s)
    return out


def _counts_by_class(result: SimulationResult) -> dict:
    out: dict = {}
    for r in result.completed():
        out[r.workload] = out.get(r.workload, 0) + 1
    return out


def compute_slo(capped: SimulationResult, uncapped: SimulationResult) -> SloReport:
    """Latency/throughput impact of a capped run against its uncapped pair."""
    if capped.trace_sha256 != uncapped.trace_sha256:
        raise PairingError("capped and uncapped runs used different traces")
    if capped.cluster.total_servers != uncapped.cluster.total_servers:
        raise PairingError("capped and uncapped runs used different server counts")

    report = SloReport(policy=capped.policy_name,
                       powerbrake_count=capped.powerbrake_count,
                       budget_breach_count=capped.budget_breach_count,
                       cap_event_counts=capped.cap_event_counts(),
                       time_capped_s=capped.time_capped_s())
    lat_c = _latencies_by_priority(capped)
    lat_u = _latencies_by_priority(uncapped)
    for prio in ("low", "high"):
        if not lat_c[prio] or not lat_u[prio]:
            report.p50_impact_pct[prio] = None
            report.p99_impact_pct[prio] = None
            continue
        for pct, store in ((50.0, report.p50_impact_pct), (99.0, report.p99_impact_pct)):
            base = nearest_rank_percentile(lat_u[prio], pct)
            now = nearest_rank_percentile(lat_c[prio], pct)
            store[prio] = (now - base) / base * 100.0

    hours = capped.duration_s / 3600.0
    cnt_c = _counts_by_class(capped)
    cnt_u = _counts_by_class(uncapped)
    for cls in sorted(set(cnt_c) | set(cnt_u)):
        base = cnt_u.get(cls, 0) / hours
        now = cnt_c.get(cls, 0) / hours
        report.throughput_delta_pct[cls] = (
            None if base == 0 else (now - base) / base * 100.0)
    return report


# ---------------------------------------------------------------------------
# Series statistics

def max_rise(t, v, window_s: float) -> float:
    """Largest increase v[j] - v[i] with 0 <= t[j] - t[i] <= window_s.

    Monotonic-deque sweep, O(n): the deque holds candidate minima whose
    values increase left to right.
    """
    best = 0.0
    window: deque = deque()
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    for j in range(len(v)):
        while window and t[j] - t[window[0]] > window_s:
            window.popleft()
        if window:
            best = max(best, v[j] - v[window[0]])
        while window and v[window[-1]] >= v[j]:
            window.pop()
        window.append(j)
    return float(best)


def peak_power_norm(result: SimulationResult, bin_s: float = 300.0) -> float:
    """Highest bin-mean normalized power (the utilization 'peak')."""
    _, mean, _ = result.power_series(bin_s)
    return float(np.max(mean))


# ---------------------------------------------------------------------------
# Mechanical hysteresis audit (from the action log and readings)

_UNCAP_LEVEL = {"uncap_lp": "t1", "uncap_hp": "t2"}


def _cap_level(kind, freq, cfg: PolicyConfig):
    if kind == CAP_LP:
        return "t2" if freq == cfg.f_lp_t2 else "t1"
    if kind == CAP_HP:
        return "t2"
    if kind == CAP_ALL:
        return "brake"
    return None


def hysteresis_violations(result: SimulationResult, cfg: PolicyConfig) -> list:
    """Cap actions that re-fired within one control period of the matching
    uncap without an intervening reading above the threshold."""
    thresholds = {"t1": cfg.t1, "t2": cfg.t2, "brake": 1.0}
    readings = sorted(result.readings, key=lambda r: r.delivered_at_s)
    delivered = np.array([r.delivered_at_s for r in readings])
    powers = np.array([r.power_norm for r in readings])
    last_uncap = {"t1": None, "t2": None}
    violations = []
    for t, kind, target, freq in result.actions:
        level = _UNCAP_LEVEL.get(kind)
        if level is not None:
            last_uncap[level] = t
            continue
        level = _cap_level(kind, freq, cfg)
        if level in (None, "brake"):
            continue
        tu = last_uncap.get(level)
        if tu is None or t - tu > cfg.control_period_s:
            continue
        lo = np.searchsorted(delivered, tu, side="right")
        hi = np.searchsorted(delivered, t, side="right")
        if not np.any(powers[lo:hi] > thresholds[level]):
            violations.append((t, kind, level))
    return violations
