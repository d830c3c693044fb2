"""Domain types, defaults, validation, and config-file I/O.

All tunable simulation parameters live in dataclasses defined here and can be
overridden through a flat sectioned key-value file (INI syntax) with sections
[cluster], [policy], [workload.<name>], [power_model], and [profile].  Every
dataclass validates its own invariants; violation messages always name the
offending key.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace

SECONDS_PER_DAY = 86400.0
SECONDS_PER_WEEK = 7 * 86400.0


class ConfigError(ValueError):
    """Config file failed to parse or a parameter invariant is violated."""


def _check(ok: bool, key: str, rule: str):
    if not ok:
        raise ConfigError(f"{key}: {rule} violated")


@dataclass(frozen=True)
class GpuSpec:
    """One A100-class GPU: TDP, clock range, and idle draw."""

    tdp_watts: float = 400.0
    f_max: float = 1410.0
    f_base: float = 1275.0
    f_min: float = 288.0
    idle_fraction: float = 0.20

    def validate(self):
        _check(self.tdp_watts > 0, "gpu.tdp_watts", "tdp_watts > 0")
        _check(0 < self.f_min <= self.f_base, "gpu.f_min", "0 < f_min <= f_base")
        _check(self.f_base <= self.f_max, "gpu.f_base", "f_base <= f_max")
        _check(0 < self.idle_fraction < 1, "gpu.idle_fraction", "0 < idle_fraction < 1")


@dataclass(frozen=True)
class ServerSpec:
    """A DGX-class server: GPU complement plus constant host power.

    provisioned_watts is the per-server peak the facility provisions for;
    the row budget defaults to baseline_servers * provisioned_watts.
    """

    gpus_per_server: int = 8
    gpu: GpuSpec = field(default_factory=GpuSpec)
    gpu_power_share: float = 0.60
    host_power_watts: float = 2200.0
    provisioned_watts: float = 5030.0

    def validate(self):
        _check(self.gpus_per_server >= 1, "server.gpus_per_server", "gpus_per_server >= 1")
        _check(0 < self.gpu_power_share < 1, "server.gpu_power_share", "0 < gpu_power_share < 1")
        _check(self.host_power_watts >= 0, "server.host_power_watts", "host_power_watts >= 0")
        _check(self.provisioned_watts > 0, "server.provisioned_watts", "provisioned_watts > 0")
        self.gpu.validate()

    @property
    def idle_watts(self) -> float:
        return self.host_power_watts + self.gpus_per_server * self.gpu.idle_fraction * self.gpu.tdp_watts


PRIORITY_LOW = "low"
PRIORITY_HIGH = "high"
PRIORITY_SPLIT = "split"


@dataclass(frozen=True)
class WorkloadClass:
    """One service type: token ranges, share of traffic, and priority rule."""

    name: str
    prompt_range: tuple[int, int]
    output_range: tuple[int, int]
    mix_ratio: float
    priority_rule: str
    low_fraction: float = 0.5
    batch: int = 1

    def validate(self):
        key = f"workload.{self.name}"
        _check(self.prompt_range[0] >= 1 and self.prompt_range[0] <= self.prompt_range[1],
               f"{key}.prompt_range", "1 <= prompt_min <= prompt_max")
        _check(self.output_range[0] >= 1 and self.output_range[0] <= self.output_range[1],
               f"{key}.output_range", "1 <= output_min <= output_max")
        _check(0 < self.mix_ratio <= 1, f"{key}.mix_ratio", "0 < mix_ratio <= 1")
        _check(self.priority_rule in (PRIORITY_LOW, PRIORITY_HIGH, PRIORITY_SPLIT),
               f"{key}.priority", "priority in {low, high, split}")
        if self.priority_rule == PRIORITY_SPLIT:
            _check(0 <= self.low_fraction <= 1, f"{key}.low_fraction", "0 <= low_fraction <= 1")
        _check(self.batch >= 1, f"{key}.batch", "batch >= 1")

    def low_priority_share(self) -> float:
        """Fraction of this class's requests that are low priority."""
        if self.priority_rule == PRIORITY_LOW:
            return 1.0
        if self.priority_rule == PRIORITY_HIGH:
            return 0.0
        return self.low_fraction


# Workload mix for a BLOOM-176B serving row: summarize / search / chat.
DEFAULT_WORKLOADS: tuple[WorkloadClass, ...] = (
    WorkloadClass("summarize", (2048, 8192), (256, 512), 0.25, PRIORITY_LOW),
    WorkloadClass("search", (512, 2048), (1024, 2048), 0.25, PRIORITY_HIGH),
    WorkloadClass("chat", (2048, 4096), (128, 2048), 0.50, PRIORITY_SPLIT, low_fraction=0.5),
)


@dataclass(frozen=True)
class PolicyConfig:
    """Dual-threshold controller parameters and actuation latencies."""

    t1: float = 0.80
    t2: float = 0.89
    t1_buffer: float = 0.05
    t2_buffer: float = 0.05
    f_lp_t1: float = 1275.0
    f_lp_t2: float = 1110.0
    f_hp_t2: float = 1305.0
    f_brake: float = 288.0
    telemetry_delay_s: float = 2.0
    oob_latency_s: float = 40.0
    brake_latency_s: float = 5.0
    control_period_s: float = 2.0

    def validate(self, gpu: GpuSpec | None = None):
        _check(0 < self.t1 < self.t2 <= 1.0, "policy.t1", "0 < t1 < t2 <= 1.0")
        _check(self.t1_buffer > 0, "policy.t1_buffer", "t1_buffer > 0")
        _check(self.t2_buffer > 0, "policy.t2_buffer", "t2_buffer > 0")
        _check(self.t1 - self.t1_buffer > 0, "policy.t1_buffer", "t1 - t1_buffer > 0")
        _check(self.t2 - self.t2_buffer > self.t1, "policy.t2_buffer", "t2 - t2_buffer > t1")
        _check(self.f_brake < self.f_lp_t2 < self.f_lp_t1,
               "policy.f_lp_t2", "f_brake < f_lp_t2 < f_lp_t1")
        if gpu is not None:
            _check(self.f_lp_t1 <= gpu.f_base, "policy.f_lp_t1", "f_lp_t1 <= f_base")
            _check(self.f_hp_t2 <= gpu.f_max, "policy.f_hp_t2", "f_hp_t2 <= f_max")
        for key in ("telemetry_delay_s", "oob_latency_s", "brake_latency_s", "control_period_s"):
            _check(getattr(self, key) > 0, f"policy.{key}", f"{key} > 0")


@dataclass(frozen=True)
class PowerModelParams:
    """Calibrated two-phase power/latency model parameters.

    gamma and alpha_token are calibration outputs (see power_model.calibrate):
    gamma makes the prompt-phase peak at 1275 MHz sit 13% below the uncapped
    peak; alpha_token makes a (8192 in, 128 out) request slow down 5% there.
    """

    p_token_frac: float = 0.55
    p_prompt_base_frac: float = 0.75
    prompt_overshoot_max: float = 1.05
    prompt_saturation_tokens: int = 8192
    gamma: float = 1.3655
    prompt_time_per_ktoken_s: float = 0.1
    token_time_s: float = 0.05
    alpha_token: float = 0.4185

    def validate(self, gpu: GpuSpec | None = None):
        idle = gpu.idle_fraction if gpu is not None else 0.0
        _check(idle <= self.p_token_frac, "power_model.p_token_frac", "idle_fraction <= p_token_frac")
        _check(self.p_token_frac < self.p_prompt_base_frac,
               "power_model.p_prompt_base_frac", "p_token_frac < p_prompt_base_frac")
        _check(self.p_prompt_base_frac <= self.prompt_overshoot_max,
               "power_model.prompt_overshoot_max", "p_prompt_base_frac <= prompt_overshoot_max")
        _check(self.prompt_saturation_tokens > 256,
               "power_model.prompt_saturation_tokens", "prompt_saturation_tokens > 256")
        _check(self.gamma > 0, "power_model.gamma", "gamma > 0")
        _check(0 <= self.alpha_token <= 1, "power_model.alpha_token", "0 <= alpha_token <= 1")
        _check(self.prompt_time_per_ktoken_s > 0,
               "power_model.prompt_time_per_ktoken_s", "prompt_time_per_ktoken_s > 0")
        _check(self.token_time_s > 0, "power_model.token_time_s", "token_time_s > 0")


@dataclass(frozen=True)
class DiurnalProfile:
    """Sinusoidal arrival-rate profile with block-resampled lognormal noise."""

    base_rate: float = 0.374
    amplitude: float = 0.36
    period_s: float = SECONDS_PER_DAY
    phase_s: float = 28800.0
    noise_sigma: float = 0.05
    noise_block_s: float = 300.0

    def validate(self):
        _check(self.base_rate >= 0, "profile.base_rate", "base_rate >= 0")
        _check(0 <= self.amplitude < 1, "profile.amplitude", "0 <= amplitude < 1")
        _check(self.period_s > 0, "profile.period_s", "period_s > 0")
        _check(self.noise_sigma >= 0, "profile.noise_sigma", "noise_sigma >= 0")
        _check(self.noise_block_s > 0, "profile.noise_block_s", "noise_block_s > 0")

    def rate_at(self, t: float) -> float:
        """Deterministic (noise-free) rate at time t, requests/s."""
        import math
        return self.base_rate * (1.0 + self.amplitude * math.sin(
            2.0 * math.pi * (t - self.phase_s) / self.period_s))


# Reference profile that generated the shipped diurnal target (seed below).
GOLDEN_PROFILE = DiurnalProfile()
GOLDEN_REFERENCE_SEED = 42


@dataclass(frozen=True)
class ClusterConfig:
    """Row-level deployment: server counts, power budget, workloads, horizon."""

    baseline_servers: int = 40
    added_servers: int = 0
    server: ServerSpec = field(default_factory=ServerSpec)
    budget_watts: float = 0.0          # 0 -> baseline_servers * provisioned_watts
    workloads: tuple[WorkloadClass, ...] = DEFAULT_WORKLOADS
    rng_seed: int = GOLDEN_REFERENCE_SEED
    sim_duration_s: float = SECONDS_PER_WEEK
    power_sample_period_s: float = 0.1

    def __post_init__(self):
        if self.budget_watts == 0.0:
            object.__setattr__(self, "budget_watts",
                               self.baseline_servers * self.server.provisioned_watts)

    def validate(self):
        _check(self.baseline_servers >= 1, "cluster.baseline_servers", "baseline_servers >= 1")
        _check(self.added_servers >= 0, "cluster.added_servers", "added_servers >= 0")
        _check(self.budget_watts > 0, "cluster.budget_watts", "budget_watts > 0")
        _check(self.sim_duration_s > 0, "cluster.sim_duration_s", "sim_duration_s > 0")
        _check(self.power_sample_period_s > 0,
               "cluster.power_sample_period_s", "power_sample_period_s > 0")
        self.server.validate()
        _check(len(self.workloads) >= 1, "cluster.workloads", "at least one workload class")
        total = sum(w.mix_ratio for w in self.workloads)
        _check(abs(total - 1.0) <= 1e-9, "workload.mix_ratio", "sum of mix_ratio == 1.0")
        for w in self.workloads:
            w.validate()

    @property
    def total_servers(self) -> int:
        return self.baseline_servers + self.added_servers


@dataclass(frozen=True)
class SimConfig:
    """Everything load_config returns: cluster + policy + power model (+ profile)."""

    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    power: PowerModelParams = field(default_factory=PowerModelParams)
    profile: DiurnalProfile = GOLDEN_PROFILE

    def validate(self):
        self.cluster.validate()
        self.policy.validate(self.cluster.server.gpu)
        self.power.validate(self.cluster.server.gpu)
        self.profile.validate()


def default_config() -> SimConfig:
    cfg = SimConfig()
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# File I/O

_CLUSTER_KEYS = {
    "baseline_servers": int, "added_servers": int, "budget_watts": float,
    "rng_seed": int, "sim_duration_s": float, "power_sample_period_s": float,
    "gpus_per_server": int, "gpu_tdp_watts": float, "f_max": float,
    "f_base": float, "f_min": float, "idle_fraction": float,
    "gpu_power_share": float, "host_power_watts": float, "provisioned_watts": float,
}
_POLICY_KEYS = {
    "t1": float, "t2": float, "t1_buffer": float, "t2_buffer": float,
    "f_lp_t1": float, "f_lp_t2": float, "f_hp_t2": float, "f_brake": float,
    "telemetry_delay_s": float, "oob_latency_s": float, "brake_latency_s": float,
    "control_period_s": float,
}
_POWER_KEYS = {
    "p_token_frac": float, "p_prompt_base_frac": float, "prompt_overshoot_max": float,
    "prompt_saturation_tokens": int, "gamma": float,
    "prompt_time_per_ktoken_s": float, "token_time_s": float, "alpha_token": float,
}
_WORKLOAD_KEYS = {
    "prompt_min": int, "prompt_max": int, "output_min": int, "output_max": int,
    "mix_ratio": float, "priority": str, "low_fraction": float, "batch": int,
}
_PROFILE_KEYS = {
    "base_rate": float, "amplitude": float, "period_s": float, "phase_s": float,
    "noise_sigma": float, "noise_block_s": float,
}


def _coerce(section: str, key: str, raw: str, typ):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw.strip().lower()
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {typ.__name__}") from exc


def _read_section(parser, section: str, known: dict) -> dict:
    out = {}
    if not parser.has_section(section):
        return out
    for key, raw in parser.items(section):
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown key")
        out[key] = _coerce(section, key, raw, known[key])
    return out


def load_config(path: str | os.PathLike) -> SimConfig:
    """Load a sectioned key-value config file; unspecified keys keep defaults.

    Raises ConfigError on parse failure or any invariant violation; the
    POLCA_SEED environment variable, when set, overrides cluster.rng_seed.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except configparser.Error as exc:
        raise ConfigError(f"parse error in {path}: {exc}") from exc

    for section in parser.sections():
        if section not in ("cluster", "policy", "power_model", "profile") \
                and not section.startswith("workload."):
            raise ConfigError(f"{section}: unknown section")

    cl = _read_section(parser, "cluster", _CLUSTER_KEYS)
    gpu = GpuSpec(
        tdp_watts=cl.pop("gpu_tdp_watts", 400.0),
        f_max=cl.pop("f_max", 1410.0),
        f_base=cl.pop("f_base", 1275.0),
        f_min=cl.pop("f_min", 288.0),
        idle_fraction=cl.pop("idle_fraction", 0.20),
    )
    server = ServerSpec(
        gpus_per_server=cl.pop("gpus_per_server", 8),
        gpu=gpu,
        gpu_power_share=cl.pop("gpu_power_share", 0.60),
        host_power_watts=cl.pop("host_power_watts", 2200.0),
        provisioned_watts=cl.pop("provisioned_watts", 5075.0),
    )

    workloads = []
    for section in parser.sections():
        if not section.startswith("workload."):
            continue
        name = section.split(".", 1)[1]
        wl = _read_section(parser, section, _WORKLOAD_KEYS)
        for req in ("prompt_min", "prompt_max", "output_min", "output_max", "mix_ratio"):
            if req not in wl:
                raise ConfigError(f"{section}.{req}: required key missing")
        workloads.append(WorkloadClass(
            name=name,
            prompt_range=(wl["prompt_min"], wl["prompt_max"]),
            output_range=(wl["output_min"], wl["output_max"]),
            mix_ratio=wl["mix_ratio"],
            priority_rule=wl.get("priority", PRIORITY_LOW),
            low_fraction=wl.get("low_fraction", 0.5),
            batch=wl.get("batch", 1),
        ))

    cluster = ClusterConfig(
        baseline_servers=cl.get("baseline_servers", 40),
        added_servers=cl.get("added_servers", 0),
        server=server,
        budget_watts=cl.get("budget_watts", 0.0),
        workloads=tuple(workloads) if workloads else DEFAULT_WORKLOADS,
        rng_seed=cl.get("rng_seed", GOLDEN_REFERENCE_SEED),
        sim_duration_s=cl.get("sim_duration_s", SECONDS_PER_WEEK),
        power_sample_period_s=cl.get("power_sample_period_s", 0.1),
    )
    if "POLCA_SEED" in os.environ:
        try:
            seed = int(os.environ["POLCA_SEED"])
        except ValueError as exc:
            raise ConfigError(f"POLCA_SEED: cannot parse {os.environ['POLCA_SEED']!r} as int") from exc
        cluster = replace(cluster, rng_seed=seed)

    policy = PolicyConfig(**_read_section(parser, "policy", _POLICY_KEYS))
    power = PowerModelParams(**_read_section(parser, "power_model", _POWER_KEYS))
    profile = DiurnalProfile(**_read_section(parser, "profile", _PROFILE_KEYS))

    cfg = SimConfig(cluster=cluster, policy=policy, power=power, profile=profile)
    cfg.validate()
    return cfg


def save_config(cfg: SimConfig, path: str | os.PathLike):
    """Write cfg so that load_config(path) round-trips to an identical config."""
    parser = configparser.ConfigParser()
    cl, srv, gpu = cfg.cluster, cfg.cluster.server, cfg.cluster.server.gpu
    parser["cluster"] = {
        "baseline_servers": repr(cl.baseline_servers),
        "added_servers": repr(cl.added_servers),
        "budget_watts": repr(cl.budget_watts),
        "rng_seed": repr(cl.rng_seed),
        "sim_duration_s": repr(cl.sim_duration_s),
        "power_sample_period_s": repr(cl.power_sample_period_s),
        "gpus_per_server": repr(srv.gpus_per_server),
        "gpu_tdp_watts": repr(gpu.tdp_watts),
        "f_max": repr(gpu.f_max),
        "f_base": repr(gpu.f_base),
        "f_min": repr(gpu.f_min),
        "idle_fraction": repr(gpu.idle_fraction),
        "gpu_power_share": repr(srv.gpu_power_share),
        "host_power_watts": repr(srv.host_power_watts),
        "provisioned_watts": repr(srv.provisioned_watts),
    }
    parser["policy"] = {k: repr(getattr(cfg.policy, k)) for k in _POLICY_KEYS}
    parser["power_model"] = {k: repr(getattr(cfg.power, k)) for k in _POWER_KEYS}
    parser["profile"] = {k: repr(getattr(cfg.profile, k)) for k in _PROFILE_KEYS}
    for w in cl.workloads:
        parser[f"workload.{w.name}"] = {
            "prompt_min": repr(w.prompt_range[0]),
            "prompt_max": repr(w.prompt_range[1]),
            "output_min": repr(w.output_range[0]),
            "output_max": repr(w.output_range[1]),
            "mix_ratio": repr(w.mix_ratio),
            "priority": w.priority_rule,
            "low_fraction": repr(w.low_fraction),
            "batch": repr(w.batch),
        }
    with open(path, "w") as fh:
        parser.write(fh)
