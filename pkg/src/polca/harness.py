"""Experiment drivers: paired runs, parameter sweeps, policy comparisons.

A run is keyed by (seed, server count, power scale, policy); per-server load
is held constant when servers are added, so the arrival rate scales with the
row size while the power budget stays at the baseline provisioning.  Every
impact metric pairs a capped run with the uncapped run of the same seed,
trace, and server count.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .config import (ClusterConfig, DiurnalProfile, PolicyConfig,
                     PowerModelParams, SimConfig, WorkloadClass,
                     PRIORITY_HIGH, PRIORITY_LOW, PRIORITY_SPLIT)
from .metrics import SloReport, compute_slo
from .policy import (NO_CAP, POLCA, BaselinePolicy, NoCapPolicy, PolcaPolicy,
                     make_policy)
from .simulator import SimulationResult, run_simulation
from .workload import generate_trace

DEFAULT_SEEDS = (1, 2, 3)
ADDED_30PCT = 0.30


def scaled_cluster(cluster: ClusterConfig, added_fraction: float,
                   seed: int | None = None, duration_s: float | None = None) -> ClusterConfig:
    """Cluster with added servers; the budget stays at baseline provisioning."""
    added = int(round(cluster.baseline_servers * added_fraction))
    out = replace(cluster, added_servers=added)
    if seed is not None:
        out = replace(out, rng_seed=seed)
    if duration_s is not None:
        out = replace(out, sim_duration_s=duration_s)
    return out


def trace_for(cluster: ClusterConfig, profile: DiurnalProfile):
    """Generate the request trace for a cluster; load scales with row size."""
    scale = cluster.total_servers / cluster.baseline_servers
    prof = replace(profile, base_rate=profile.base_rate * scale)
    rng = np.random.Generator(np.random.PCG64(cluster.rng_seed))
    return generate_trace(prof, cluster.workloads, cluster.sim_duration_s, rng)


@dataclass
class PairedRunner:
    """Runs and caches one seed's paired simulations."""

    sim_cfg: SimConfig
    added_fraction: float = ADDED_30PCT
    seed: int = 1
    duration_s: float | None = None
    _trace: list = field(default_factory=list, repr=False)
    _uncapped: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.cluster = scaled_cluster(self.sim_cfg.cluster, self.added_fraction,
                                      self.seed, self.duration_s)
        self._trace = trace_for(self.cluster, self.sim_cfg.profile)

    @property
    def trace(self):
        return self._trace

    def uncapped(self, power_scale: float = 1.0) -> SimulationResult:
        if power_scale not in self._uncapped:
            self._uncapped[power_scale] = run_simulation(
                self.cluster, self.sim_cfg.policy, self._trace, NoCapPolicy(),
                self.sim_cfg.power, power_scale)
        return self._uncapped[power_scale]

    def run_policy(self, policy_name: str, power_scale: float = 1.0,
                   policy_cfg: PolicyConfig | None = None) -> SimulationResult:
        cfg = policy_cfg or self.sim_cfg.policy
        return run_simulation(self.cluster, cfg, self._trace,
                              make_policy(policy_name, cfg),
                              self.sim_cfg.power, power_scale)

    def slo_report(self, policy_name: str, power_scale: float = 1.0,
                   policy_cfg: PolicyConfig | None = None) -> tuple[SloReport, SimulationResult]:
        capped = self.run_policy(policy_name, power_scale, policy_cfg)
        report = compute_slo(capped, self.uncapped(power_scale))
        return report, capped


# ---------------------------------------------------------------------------
# Sweeps

SWEEP_VARIABLES = ("t1_t2_pair", "added_server_fraction", "f_lp_t1",
                   "lp_fraction", "power_scale")


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple
    seeds: tuple = DEFAULT_SEEDS
    repetitions: int = 1

    def validate(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"unknown sweep variable {self.variable!r}")
        for v in self.values:
            if self.variable == "t1_t2_pair":
                t1, t2 = v
                if not (0 < t1 < t2 <= 1):
                    raise ValueError(f"invalid threshold pair {v}")
            elif self.variable == "lp_fraction":
                if not (0 < v <= 1):
                    raise ValueError(f"lp_fraction {v} outside (0, 1]")
            elif v <= 0:
                raise ValueError(f"sweep value {v} must be positive")


def parse_threshold_pair(text: str) -> tuple[float, float]:
    """'80/89' -> (0.80, 0.89)."""
    a, b = text.split("/")
    return float(a) / 100.0, float(b) / 100.0


def _policy_cfg_for(base: PolicyConfig, variable: str, value) -> PolicyConfig:
    if variable == "t1_t2_pair":
        t1, t2 = value
        return replace(base, t1=t1, t2=t2)
    if variable == "f_lp_t1":
        # keep the ordering invariant f_lp_t2 < f_lp_t1 when sweeping low
        return replace(base, f_lp_t1=float(value),
                       f_lp_t2=min(base.f_lp_t2, float(value) - 1.0))
    return base


def run_sweep(spec: SweepSpec, sim_cfg: SimConfig,
              added_fraction: float = ADDED_30PCT,
              duration_s: float | None = None, power_scale: float = 1.0,
              progress=None) -> list[dict]:
    """Cross product of sweep values and seeds; one trace per (seed, size).

    Returns one row per (value, seed) with the SLO report fields; failures of
    individual runs are recorded in the row and the sweep continues.
    """
    spec.validate()
    rows = []
    for seed in spec.seeds:
        for rep in range(spec.repetitions):
            rep_seed = seed + 1_000_003 * rep
            base_runner = None
            for value in spec.values:
                frac = added_fraction
                scale = power_scale
                cfg_kwargs = {}
                if spec.variable == "added_server_fraction":
                    frac = float(value)
                elif spec.variable == "power_scale":
                    scale = float(value)
                row = {"variable": spec.variable, "value": value, "seed": rep_seed}
                try:
                    if spec.variable == "lp_fraction":
                        report, capped = _lp_ratio_run(sim_cfg, float(value),
                                                       rep_seed, frac, duration_s)
                    else:
                        if base_runner is None or spec.variable == "added_server_fraction":
                            base_runner = PairedRunner(sim_cfg, frac, rep_seed,
                                                       duration_s)
                        pol_cfg = _policy_cfg_for(sim_cfg.policy, spec.variable, value)
                        report, capped = base_runner.slo_report(POLCA, scale, pol_cfg)
                    row.update(_report_row(report, capped))
                except Exception as exc:  # record and continue
                    row["error"] = f"{type(exc).__name__}: {exc}"
                rows.append(row)
                if progress:
                    progress(row)
    return rows


def _report_row(report: SloReport, capped: SimulationResult) -> dict:
    return {
        "policy": report.policy,
        "hp_p50_impact_pct": report.p50_impact_pct.get("high"),
        "hp_p99_impact_pct": report.p99_impact_pct.get("high"),
        "lp_p50_impact_pct": report.p50_impact_pct.get("low"),
        "lp_p99_impact_pct": report.p99_impact_pct.get("low"),
        "powerbrakes": report.powerbrake_count,
        "budget_breaches": report.budget_breach_count,
        "slo_pass": report.slo_pass(),
        "failed": ";".join(report.failed_slos()),
        "max_reading": capped.max_reading(),
        "first_cap_s": capped.first_cap_time(),
        "cap_events": sum(report.cap_event_counts.values()),
    }


def summarize_sweep(rows: list[dict]) -> dict:
    """Per-value pass counts; for server sweeps, the max size with 0 brakes."""
    by_value: dict = {}
    for row in rows:
        key = str(row["value"])
        agg = by_value.setdefault(key, {"runs": 0, "passes": 0, "brakes": 0})
        agg["runs"] += 1
        agg["passes"] += bool(row.get("slo_pass"))
        agg["brakes"] += row.get("powerbrakes", 0) or 0
    summary = {"by_value": by_value}
    if rows and rows[0]["variable"] == "added_server_fraction":
        brake_free: dict = {}
        for row in rows:
            v = float(row["value"])
            ok = not row.get("error") and (row.get("powerbrakes") or 0) == 0
            brake_free[v] = brake_free.get(v, True) and ok
        ok_values = [v for v, good in brake_free.items() if good]
        summary["max_added_fraction_without_brakes"] = max(ok_values) if ok_values else None
    return summary


# ---------------------------------------------------------------------------
# Policy comparison and LP-ratio rebalancing

def compare_policies(policies, sim_cfg: SimConfig, power_scale: float = 1.0,
                     seeds=DEFAULT_SEEDS, added_fraction: float = ADDED_30PCT,
                     duration_s: float | None = None, progress=None) -> list[dict]:
    """All policies on identical per-seed traces at one power scale."""
    rows = []
    for seed in seeds:
        runner = PairedRunner(sim_cfg, added_fraction, seed, duration_s)
        for name in policies:
            report, capped = runner.slo_report(name, power_scale)
            row = {"policy": name, "seed": seed, "power_scale": power_scale}
            row.update(_report_row(report, capped))
            rows.append(row)
            if progress:
                progress(row)
    return rows


def rebalanced_workloads(lp_fraction: float) -> tuple[WorkloadClass, ...]:
    """Workload mix with an overall low-priority request share of lp_fraction.

    Scales the dedicated low- and high-priority classes and the chat split so
    the aggregate low share equals lp_fraction; lp_fraction=0.5 reproduces
    the default mix exactly.
    """
    if not (0.0 < lp_fraction <= 1.0):
        raise ValueError("lp_fraction must be in (0, 1]")
    f = lp_fraction
    classes = []
    if f > 0:
        classes.append(WorkloadClass("summarize", (2048, 8192), (256, 512),
                                     0.5 * f, PRIORITY_LOW))
    if f < 1:
        classes.append(WorkloadClass("search", (512, 2048), (1024, 2048),
                                     0.5 * (1.0 - f), PRIORITY_HIGH))
    classes.append(WorkloadClass("chat", (2048, 4096), (128, 2048), 0.5,
                                 PRIORITY_SPLIT, low_fraction=f))
    return tuple(classes)


def _lp_ratio_run(sim_cfg: SimConfig, lp_fraction: float, seed: int,
                  added_fraction: float, duration_s: float | None):
    cfg = replace(sim_cfg, cluster=replace(
        sim_cfg.cluster, workloads=rebalanced_workloads(lp_fraction)))
    runner = PairedRunner(cfg, added_fraction, seed, duration_s)
    return runner.slo_report(POLCA)


def lp_ratio_sweep(fractions, sim_cfg: SimConfig, seeds=DEFAULT_SEEDS,
                   added_fraction: float = ADDED_30PCT,
                   duration_s: float | None = None, progress=None) -> list[dict]:
    """POLCA SLO status as the low-priority share of the mix varies."""
    rows = []
    for seed in seeds:
        for f in fractions:
            report, capped = _lp_ratio_run(sim_cfg, f, seed, added_fraction,
                                           duration_s)
            hp_caps = report.cap_event_counts.get("cap_hp", 0)
            row = {"lp_fraction": f, "seed": seed, "hp_cap_events": hp_caps}
            row.update(_report_row(report, capped))
            rows.append(row)
            if progress:
                progress(row)
    return rows


# ---------------------------------------------------------------------------
# Report emission (CSV tables + deterministic SVG plots)

def _configure_matplotlib():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "polca"
    return plt


def write_rows_csv(rows: list[dict], path: str):
    import io
    keys: list[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    buf.write(",".join(keys) + "\n")
    for row in rows:
        buf.write(",".join("" if row.get(k) is None else str(row.get(k, ""))
                           for k in keys) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def emit_report(rows: list[dict], out_dir: str, power_series=None,
                policy_cfg: PolicyConfig | None = None) -> list[str]:
    """Write results.csv and SVG charts; byte-identical across re-runs."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    csv_path = os.path.join(out_dir, "results.csv")
    write_rows_csv(rows, csv_path)
    written.append(csv_path)
    if not rows and not power_series:
        return written

    plt = _configure_matplotlib()
    meta = {"Date": None}

    if power_series:
        fig, ax = plt.subplots(figsize=(8, 3.2))
        for label, t, p in power_series:
            ax.plot(np.asarray(t) / 3600.0, p, lw=0.7, label=label)
        if policy_cfg is not None:
            ax.axhline(policy_cfg.t1, color="tab:orange", ls="--", lw=0.8,
                       label=f"T1={policy_cfg.t1:.2f}")
            ax.axhline(policy_cfg.t2, color="tab:red", ls="--", lw=0.8,
                       label=f"T2={policy_cfg.t2:.2f}")
        ax.axhline(1.0, color="black", ls=":", lw=0.8, label="budget")
        ax.set_xlabel("hours")
        ax.set_ylabel("row power / budget")
        ax.legend(loc="lower right", fontsize=7)
        fig.tight_layout()
        path = os.path.join(out_dir, "power_timeseries.svg")
        fig.savefig(path, metadata=meta)
        plt.close(fig)
        written.append(path)

    impact_rows = [r for r in rows if r.get("hp_p99_impact_pct") is not None
                   or r.get("lp_p99_impact_pct") is not None]
    if impact_rows:
        labels = [f"{r.get('policy', r.get('value', '?'))}/s{r.get('seed', '?')}"
                  for r in impact_rows]
        fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(labels)), 3.2))
        x = np.arange(len(impact_rows))
        for off, key in ((-0.3, "hp_p50_impact_pct"), (-0.1, "hp_p99_impact_pct"),
                         (0.1, "lp_p50_impact_pct"), (0.3, "lp_p99_impact_pct")):
            vals = [r.get(key) or 0.0 for r in impact_rows]
            ax.bar(x + off, vals, width=0.2, label=key.replace("_impact_pct", ""))
        ax.set_xticks(x, labels, rotation=45, ha="right", fontsize=6)
        ax.set_ylabel("latency impact %")
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = os.path.join(out_dir, "slo_impacts.svg")
        fig.savefig(path, metadata=meta)
        plt.close(fig)
        written.append(path)

        fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(labels)), 2.8))
        ax.bar(x, [r.get("powerbrakes") or 0 for r in impact_rows],
               width=0.5, color="tab:red")
        ax.set_xticks(x, labels, rotation=45, ha="right", fontsize=6)
        ax.set_ylabel("powerbrakes")
        fig.tight_layout()
        path = os.path.join(out_dir, "powerbrakes.svg")
        fig.savefig(path, metadata=meta)
        plt.close(fig)
        written.append(path)
    return written
