# Dev-only operating-point probe; not part of the package.
import sys
import time
import numpy as np
from dataclasses import replace
from polca.config import default_config, DiurnalProfile, PolicyConfig
from polca.harness import PairedRunner, trace_for
from polca.policy import NoCapPolicy, POLCA, ONE_THRESH_ALL, ONE_THRESH_LOW_PRI, NO_CAP
from polca.simulator import run_simulation
from polca.metrics import max_rise

cfg0 = default_config()
candidates = [
    (0.35, 0.60, 0.03),
    (0.36, 0.55, 0.03),
    (0.37, 0.52, 0.03),
]
seeds = (1, 2, 3)

for base, amp, noise in candidates:
    cfg = replace(cfg0, profile=DiurnalProfile(base_rate=base, amplitude=amp,
                                               noise_sigma=noise))
    t0 = time.time()
    print(f"\n=== base={base} amp={amp} noise={noise}", flush=True)
    for seed in seeds:
        cl = replace(cfg.cluster, rng_seed=seed)
        tr = trace_for(cl, cfg.profile)
        res = run_simulation(cl, cfg.policy, tr, NoCapPolicy(), cfg.power)
        _, m5, _ = res.power_series(300.0)
        t10, m10, _ = res.power_series(10.0)
        print(f"  40srv s{seed}: peak={m5.max():.4f} trough={m5.min():.3f} "
              f"rise10={max_rise(t10, m10, 40.0):.4f}", flush=True)
    for seed in seeds:
        runner = PairedRunner(cfg, 0.30, seed)
        line = f"  52 s{seed}:"
        for name, scale, pcfg in [
                (POLCA, 1.0, None), (POLCA, 1.05, None),
                (POLCA, 1.0, replace(cfg.policy, t1=0.75, t2=0.85)),
                (POLCA, 1.0, replace(cfg.policy, t1=0.85, t2=0.95)),
                (POLCA, 1.05, replace(cfg.policy, t1=0.85, t2=0.95)),
                (ONE_THRESH_ALL, 1.0, None), (NO_CAP, 1.05, None)]:
            rep, capped = runner.slo_report(name, scale, pcfg)
            tag = name if pcfg is None else f"{name}[{pcfg.t1:.2f}/{pcfg.t2:.2f}]"
            tc = capped.time_capped_s()["low"]
            d1110 = tc.get(1110.0, 0.0) / capped.duration_s * 100
            line += (f"\n    {tag}@{scale}: brakes={rep.powerbrake_count} "
                     f"breach={rep.budget_breach_count} maxr={capped.max_reading():.3f} "
                     f"hp50={rep.p50_impact_pct['high']:.2f} hp99={rep.p99_impact_pct['high']:.2f} "
                     f"lp50={rep.p50_impact_pct['low']:.2f} lp99={rep.p99_impact_pct['low']:.2f} "
                     f"d1110={d1110:.0f}% pass={rep.slo_pass()}")
        print(line, flush=True)
    print(f"  wall: {time.time()-t0:.0f}s", flush=True)
