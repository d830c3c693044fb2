"""Row-level power-oversubscription simulator for LLM inference clusters."""

from .config import (ClusterConfig, ConfigError, DiurnalProfile, GpuSpec,
                     PolicyConfig, PowerModelParams, ServerSpec, SimConfig,
                     WorkloadClass, default_config, load_config, save_config)
from .power_model import (Phase, calibrate, freq_power_scale,
                          gpu_power_fraction, request_latency, server_power)
from .policy import (NO_CAP, ONE_THRESH_ALL, ONE_THRESH_LOW_PRI, POLCA,
                     PolicyAction, PolicyState, baseline_step, make_policy,
                     polca_step)
from .simulator import SimulationResult, run_simulation
from .workload import (InferenceRequest, fit_to_reference, generate_arrivals,
                       generate_trace, load_shipped_reference, mape,
                       read_trace, sample_request, write_trace)
from .metrics import SloReport, compute_slo, hysteresis_violations, max_rise
from .harness import (SweepSpec, compare_policies, emit_report, lp_ratio_sweep,
                      run_sweep)

__version__ = "0.1.0"
