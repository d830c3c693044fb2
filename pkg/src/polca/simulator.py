"""Deterministic discrete-event engine for a row of inference servers.

Each server runs one request at a time (a request occupies every GPU), holds
a one-request buffer, and receives delayed frequency-cap commands.  Row power
is maintained as a piecewise-constant segment series updated at every state
change, so any sampling grid can be derived exactly after the run.  Event
ordering is total: (time, kind rank, sequence number).
"""

from __future__ import annotations

import hashlib
import heapq
import io
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import ClusterConfig, PolicyConfig, PowerModelParams
from . import power_model
from .power_model import Phase
from .policy import CAP_ALL, CAP_HP, CAP_LP, SET_LP, UNCAP_HP, UNCAP_LP
from .workload import InferenceRequest, trace_to_csv_bytes

# event ranks: commands apply before completions, completions free servers
# before arrivals claim them, telemetry reads settled state last
EV_COMMAND = 0
EV_PHASE_DONE = 1
EV_ARRIVAL = 2
EV_TELEMETRY = 3
EV_POLICY = 4

TARGET_LOW = "low"
TARGET_HIGH = "high"
TARGET_ALL = "all"

_ACTION_TARGETS = {
    CAP_LP: TARGET_LOW, SET_LP: TARGET_LOW, UNCAP_LP: TARGET_LOW,
    CAP_HP: TARGET_HIGH, UNCAP_HP: TARGET_HIGH, CAP_ALL: TARGET_ALL,
}


@dataclass(frozen=True)
class RowPowerReading:
    measured_at_s: float
    delivered_at_s: float
    power_norm: float


@dataclass(frozen=True)
class CapCommand:
    issued_at_s: float
    target: str          # low | high | all
    freq: float
    kind: str            # oob | brake
    effective_at_s: float


@dataclass
class RequestRecord:
    id: int
    workload: str
    priority: str
    arrival_s: float
    server: int = -1
    start_s: float | None = None
    prompt_end_s: float | None = None
    completion_s: float | None = None
    prompt_tokens_eff: int = 0
    token_work: float = 0.0
    freq_episodes: list = field(default_factory=list)   # [(t, freq), ...]

    @property
    def queue_delay_s(self) -> float | None:
        return None if self.start_s is None else self.start_s - self.arrival_s

    @property
    def latency_s(self) -> float | None:
        return None if self.completion_s is None else self.completion_s - self.arrival_s


class _Server:
    __slots__ = ("id", "priority", "phase", "freq", "watts", "req", "remaining",
                 "last_update", "epoch", "buffer", "slowdown")

    def __init__(self, sid: int, priority: str, f_max: float, idle_watts: float):
        self.id = sid
        self.priority = priority
        self.phase = Phase.IDLE
        self.freq = f_max
        self.watts = idle_watts
        self.req: RequestRecord | None = None
        self.remaining = 0.0         # f_max-seconds of the current phase
        self.last_update = 0.0
        self.epoch = 0
        self.buffer: InferenceRequest | None = None
        self.slowdown = 1.0          # wall seconds per f_max-second, current phase


# Low-priority work runs under caps most of the time once the row is
# oversubscribed, so pools are sized by expected work share inflated by the
# worst per-pool cap slowdown; both pools then saturate together.
LP_CAP_HEADROOM = 1.105   # token+prompt slowdown at the deep LP cap
HP_CAP_HEADROOM = 1.033   # slowdown at the mild HP cap


def lp_server_count(n_servers: int, workloads, params: PowerModelParams) -> int:
    """Servers bound to the low-priority pool, by cap-adjusted work share."""
    lp_work = 0.0
    total_work = 0.0
    for w in workloads:
        prompt_mid = 0.5 * (w.prompt_range[0] + w.prompt_range[1])
        output_mid = 0.5 * (w.output_range[0] + w.output_range[1])
        work = w.mix_ratio * (power_model.prompt_work_s(prompt_mid, w.batch, params)
                              + power_model.token_work_s(output_mid, params))
        total_work += work
        lp_work += work * w.low_priority_share()
    if total_work <= 0:
        return 0
    lp = lp_work * LP_CAP_HEADROOM
    hp = (total_work - lp_work) * HP_CAP_HEADROOM
    share = lp / (lp + hp)
    k = round(n_servers * share)
    if share > 0.0:
        k = max(k, 1)
    if share < 1.0:
        k = min(k, n_servers - 1)
    return int(min(max(k, 0), n_servers))


def remaining_wall_s(server: _Server, now_s: float) -> float:
    """Wall time left for the active request at the current frequency."""
    if server.req is None:
        return 0.0
    settled = server.remaining - max(0.0, now_s - server.last_update) / server.slowdown
    wall = max(0.0, settled) * server.slowdown
    if server.phase is Phase.PROMPT:
        wall += server.req.token_work * server.slowdown  # token phase still ahead
    return wall


def choose_server(servers, now_s: float):
    """Routing rule for one pool: idle first, else the emptiest buffer.

    servers: the candidate pool (same priority).  Returns ("start", server),
    ("buffer", server), or ("overflow", None).  Ties break on lowest id.
    """
    idle_pick = None
    for s in servers:
        if s.req is None and s.buffer is None:
            if idle_pick is None or s.id < idle_pick.id:
                idle_pick = s
    if idle_pick is not None:
        return "start", idle_pick
    best = None
    best_work = 0.0
    for s in servers:
        if s.buffer is not None or s.req is None:
            continue
        work = remaining_wall_s(s, now_s)
        if best is None or work < best_work - 1e-12:
            best, best_work = s, work
    if best is not None:
        return "buffer", best
    return "overflow", None


def row_power(servers, budget_watts: float) -> tuple[float, float]:
    """Exact row draw: sum of per-server watts, plus budget-normalized value."""
    watts = 0.0
    for s in servers:
        watts += s.watts
    return watts, watts / budget_watts


class TraceError(ValueError):
    """Trace is unsorted or references an unknown workload class."""


class SimulationResult:
    """Everything one run produced; power series derived from segments."""

    def __init__(self, cluster, policy_name, power_scale, trace_sha256,
                 seg_t, seg_w, requests, readings, actions, commands,
                 pool_freq_episodes, powerbrake_count, budget_breach_count,
                 lp_servers, duration_s):
        self.cluster = cluster
        self.policy_name = policy_name
        self.power_scale = power_scale
        self.trace_sha256 = trace_sha256
        self.seg_t = seg_t                      # segment start times
        self.seg_w = seg_w                      # row watts per segment
        self.requests = requests                # list[RequestRecord]
        self.readings = readings                # list[RowPowerReading]
        self.actions = actions                  # list[(t, kind, target, freq)]
        self.commands = commands                # list[CapCommand]
        self.pool_freq_episodes = pool_freq_episodes
        self.powerbrake_count = powerbrake_count
        self.budget_breach_count = budget_breach_count
        self.lp_servers = lp_servers
        self.duration_s = duration_s

    @property
    def budget_watts(self) -> float:
        return self.cluster.budget_watts

    def instantaneous_watts(self, t) -> np.ndarray:
        idx = np.clip(np.searchsorted(self.seg_t, np.asarray(t, dtype=float),
                                      side="right") - 1, 0, len(self.seg_t) - 1)
        return self.seg_w[idx]

    def power_series(self, period_s: float | None = None):
        """(t, mean_norm, max_norm) per sample bin; mean is time-weighted."""
        period = period_s or self.cluster.power_sample_period_s
        n_bins = max(1, int(round(self.duration_s / period)))
        edges = np.arange(n_bins + 1) * period
        ts, ws = self.seg_t, self.seg_w
        bounds = np.append(ts, max(self.duration_s, ts[-1]))
        cum = np.concatenate(([0.0], np.cumsum(ws * np.diff(bounds))))

        def integral(x):
            i = np.clip(np.searchsorted(ts, x, side="right") - 1, 0, len(ts) - 1)
            return cum[i] + ws[i] * (x - ts[i])

        means = np.diff(integral(edges)) / period
        starts = np.clip(np.searchsorted(ts, edges[:-1], side="right") - 1,
                         0, len(ts) - 1)
        maxima = np.maximum.reduceat(ws, starts)
        if n_bins > 1:
            # the segment active at each interior boundary also overlaps the
            # earlier bin unless it starts exactly on the boundary
            nxt = starts[1:]
            overlap = ts[nxt] < edges[1:-1]
            maxima[:-1] = np.where(overlap, np.maximum(maxima[:-1], ws[nxt]),
                                   maxima[:-1])
        budget = self.budget_watts
        return edges[:-1], means / budget, maxima / budget

    def completed(self):
        return [r for r in self.requests if r.completion_s is not None]

    def max_reading(self) -> float:
        if not self.readings:
            return 0.0
        return max(r.power_norm for r in self.readings)

    def time_capped_s(self) -> dict:
        """Wall seconds each pool spent at each commanded frequency."""
        out = {}
        for pool, eps in self.pool_freq_episodes.items():
            durs: dict = {}
            for i, (t, f) in enumerate(eps):
                end = eps[i + 1][0] if i + 1 < len(eps) else self.duration_s
                durs[f] = durs.get(f, 0.0) + (end - t)
            out[pool] = durs
        return out

    def cap_event_counts(self) -> dict:
        counts: dict = {}
        for _, kind, _, _ in self.actions:
            counts[kind] = counts.get(kind, 0) + 1
        return counts

    def first_cap_time(self) -> float:
        for t, kind, _, _ in self.actions:
            if kind in (CAP_LP, CAP_HP, CAP_ALL):
                return t
        return float("inf")

    # -- result files ------------------------------------------------------

    def power_csv(self, period_s: float | None = None) -> str:
        t, mean, mx = self.power_series(period_s)
        buf = io.StringIO()
        buf.write("t_s,power_norm_mean,power_norm_max\n")
        for a, b, c in zip(t, mean, mx):
            buf.write(f"{a!r},{b!r},{c!r}\n")
        return buf.getvalue()

    def requests_csv(self) -> str:
        buf = io.StringIO()
        buf.write("id,class,priority,server,arrival_s,start_s,prompt_end_s,"
                  "completion_s,queue_delay_s,latency_s,min_freq,n_freq_changes\n")
        for r in self.requests:
            fmin = min(f for _, f in r.freq_episodes) if r.freq_episodes else ""
            cells = [r.id, r.workload, r.priority, r.server,
                     repr(r.arrival_s),
                     "" if r.start_s is None else repr(r.start_s),
                     "" if r.prompt_end_s is None else repr(r.prompt_end_s),
                     "" if r.completion_s is None else repr(r.completion_s),
                     "" if r.queue_delay_s is None else repr(r.queue_delay_s),
                     "" if r.latency_s is None else repr(r.latency_s),
                     fmin, max(0, len(r.freq_episodes) - 1)]
            buf.write(",".join(str(x) for x in cells) + "\n")
        return buf.getvalue()

    def actions_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t_s,action,target,freq\n")
        for t, kind, target, freq in self.actions:
            buf.write(f"{t!r},{kind},{target},{'' if freq is None else repr(freq)}\n")
        return buf.getvalue()

    def write_outputs(self, out_dir, power_period_s: float | None = None):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "power.csv"), "w") as fh:
            fh.write(self.power_csv(power_period_s))
        with open(os.path.join(out_dir, "requests.csv"), "w") as fh:
            fh.write(self.requests_csv())
        with open(os.path.join(out_dir, "actions.csv"), "w") as fh:
            fh.write(self.actions_csv())

    def output_sha256(self, power_period_s: float = 1.0) -> str:
        h = hashlib.sha256()
        h.update(self.power_csv(power_period_s).encode())
        h.update(self.requests_csv().encode())
        h.update(self.actions_csv().encode())
        return h.hexdigest()


def run_simulation(cluster: ClusterConfig, policy_cfg: PolicyConfig, trace,
                   policy, power: PowerModelParams | None = None,
                   power_scale: float = 1.0) -> SimulationResult:
    """Simulate the trace on the row under the given capping policy.

    Identical inputs produce identical results; event ties break on
    (time, kind rank, insertion sequence).
    """
    params = power or PowerModelParams()
    srv_spec = cluster.server
    gpu = srv_spec.gpu
    n = cluster.total_servers
    budget = cluster.budget_watts
    duration = cluster.sim_duration_s
    n_gpus = srv_spec.gpus_per_server
    known = {w.name for w in cluster.workloads}
    f_max = gpu.f_max

    last_arrival = -1.0
    for r in trace:
        if r.workload not in known:
            raise TraceError(f"trace references unknown workload class {r.workload!r}")
        if r.arrival_s < last_arrival:
            raise TraceError("trace is not sorted by arrival time")
        last_arrival = r.arrival_s

    idle_watts = srv_spec.host_power_watts + n_gpus * gpu.idle_fraction * gpu.tdp_watts

    def server_watts(phase: Phase, tokens: float, f: float) -> float:
        frac = power_model.gpu_power_fraction(phase, tokens, f, gpu, params)
        dyn = (frac - gpu.idle_fraction) * power_scale
        return srv_spec.host_power_watts + n_gpus * (gpu.idle_fraction + dyn) * gpu.tdp_watts

    n_lp = lp_server_count(n, cluster.workloads, params)
    servers = [_Server(i, "low" if i < n_lp else "high", f_max, idle_watts)
               for i in range(n)]
    pools = {"low": servers[:n_lp], "high": servers[n_lp:]}
    overflow: dict[str, deque] = {"low": deque(), "high": deque()}

    heap: list = []
    seq = 0

    def push(t, rank, payload):
        nonlocal seq
        heapq.heappush(heap, (t, rank, seq, payload))
        seq += 1

    seg_t = [0.0]
    seg_w = [n * idle_watts]
    row_watts_now = n * idle_watts

    def change_watts(server: _Server, new_watts: float, t: float):
        nonlocal row_watts_now
        delta = new_watts - server.watts
        if delta == 0.0:
            return
        server.watts = new_watts
        row_watts_now += delta
        if seg_t[-1] == t:
            seg_w[-1] = row_watts_now
        else:
            seg_t.append(t)
            seg_w.append(row_watts_now)

    readings: list[RowPowerReading] = []
    actions_log: list = []
    commands: list[CapCommand] = []
    pool_freq_episodes = {"low": [(0.0, f_max)], "high": [(0.0, f_max)]}
    powerbrake_count = 0
    brake_active = False
    breach_count = 0
    breach_active = False

    def slowdown_for(phase: Phase, f: float) -> float:
        if phase is Phase.PROMPT:
            return power_model.prompt_slowdown(f, gpu, params)
        return power_model.token_slowdown(f, gpu, params)

    def settle(server: _Server, t: float):
        if server.req is not None and t > server.last_update:
            server.remaining -= (t - server.last_update) / server.slowdown
            if server.remaining < 0.0:
                server.remaining = 0.0
        server.last_update = t

    def schedule_phase_done(server: _Server, t: float):
        server.epoch += 1
        push(t + server.remaining * server.slowdown, EV_PHASE_DONE,
             (server.id, server.epoch))

    rec_by_id: dict[int, tuple[InferenceRequest, RequestRecord]] = {}
    records: list[RequestRecord] = []
    for req in trace:
        rec = RequestRecord(id=req.id, workload=req.workload,
                            priority=req.priority, arrival_s=req.arrival_s,
                            prompt_tokens_eff=req.prompt_tokens * req.batch,
                            token_work=power_model.token_work_s(req.output_tokens, params))
        if req.id in rec_by_id:
            raise TraceError(f"duplicate request id {req.id}")
        rec_by_id[req.id] = (req, rec)
        records.append(rec)
        if req.arrival_s < duration:
            push(req.arrival_s, EV_ARRIVAL, req.id)

    def start_request(server: _Server, req: InferenceRequest, t: float):
        rec = rec_by_id[req.id][1]
        rec.server = server.id
        rec.start_s = t
        rec.freq_episodes.append((t, server.freq))
        server.req = rec
        server.phase = Phase.PROMPT
        server.remaining = power_model.prompt_work_s(req.prompt_tokens, req.batch, params)
        server.last_update = t
        server.slowdown = slowdown_for(Phase.PROMPT, server.freq)
        change_watts(server, server_watts(Phase.PROMPT, rec.prompt_tokens_eff,
                                          server.freq), t)
        schedule_phase_done(server, t)

    def set_frequency(server: _Server, freq: float, t: float):
        if server.freq == freq:
            return
        settle(server, t)
        server.freq = freq
        if server.req is not None:
            server.slowdown = slowdown_for(server.phase, freq)
            server.req.freq_episodes.append((t, freq))
            tokens = server.req.prompt_tokens_eff if server.phase is Phase.PROMPT else 0
            change_watts(server, server_watts(server.phase, tokens, freq), t)
            schedule_phase_done(server, t)
        # idle servers draw idle power at any frequency: no power change

    policy_dt = policy_cfg.control_period_s
    push(policy_dt, EV_TELEMETRY, None)

    while heap:
        t, rank, _, payload = heapq.heappop(heap)
        if t > duration:
            break

        if rank == EV_COMMAND:
            cmd: CapCommand = payload
            pool_names = (TARGET_LOW, TARGET_HIGH) if cmd.target == TARGET_ALL \
                else (cmd.target,)
            for pname in pool_names:
                eps = pool_freq_episodes[pname]
                if eps[-1][1] == cmd.freq:
                    continue    # pool already at this cap: repeated command
                eps.append((t, cmd.freq))
                for s in pools[pname]:
                    set_frequency(s, cmd.freq, t)

        elif rank == EV_PHASE_DONE:
            sid, epoch = payload
            server = servers[sid]
            if server.epoch != epoch or server.req is None:
                continue
            settle(server, t)
            rec = server.req
            if server.phase is Phase.PROMPT:
                rec.prompt_end_s = t
                server.phase = Phase.TOKEN
                server.remaining = rec.token_work
                server.slowdown = slowdown_for(Phase.TOKEN, server.freq)
                change_watts(server, server_watts(Phase.TOKEN, 0, server.freq), t)
                schedule_phase_done(server, t)
            else:
                rec.completion_s = t
                server.req = None
                server.phase = Phase.IDLE
                server.epoch += 1
                change_watts(server, idle_watts, t)
                nxt = server.buffer
                q = overflow[server.priority]
                if nxt is not None:
                    server.buffer = None
                    start_request(server, nxt, t)
                    if q:
                        server.buffer = q.popleft()
                elif q:
                    start_request(server, q.popleft(), t)

        elif rank == EV_ARRIVAL:
            req = rec_by_id[payload][0]
            pool = pools[req.priority]
            if not pool:
                raise TraceError(f"no servers in the {req.priority}-priority pool")
            outcome, server = choose_server(pool, t)
            if outcome == "start":
                start_request(server, req, t)
            elif outcome == "buffer":
                server.buffer = req
            else:
                overflow[req.priority].append(req)

        elif rank == EV_TELEMETRY:
            row_watts_now = row_power(servers, budget)[0]  # drift resync
            p = row_watts_now / budget
            readings.append(RowPowerReading(t, t + policy_cfg.telemetry_delay_s, p))
            if p > 1.0:
                if not breach_active:
                    breach_count += 1
                breach_active = True
            else:
                breach_active = False
            push(t + policy_cfg.telemetry_delay_s, EV_POLICY, p)
            if t + policy_dt <= duration:
                push(t + policy_dt, EV_TELEMETRY, None)

        else:  # EV_POLICY
            p = payload
            for action in policy.step(p, t):
                target = _ACTION_TARGETS[action.kind]
                freq = f_max if action.freq is None else action.freq
                kind = "brake" if action.kind == CAP_ALL else "oob"
                latency = (policy_cfg.brake_latency_s if kind == "brake"
                           else policy_cfg.oob_latency_s)
                cmd = CapCommand(issued_at_s=t, target=target, freq=freq,
                                 kind=kind, effective_at_s=t + latency)
                commands.append(cmd)
                actions_log.append((t, action.kind, target, action.freq))
                push(cmd.effective_at_s, EV_COMMAND, cmd)
            now_braked = bool(getattr(getattr(policy, "state", None),
                                      "powerbrake", False))
            if now_braked and not brake_active:
                powerbrake_count += 1
            brake_active = now_braked

    if seg_t[-1] < duration:
        seg_t.append(duration)
        seg_w.append(row_watts_now)

    return SimulationResult(
        cluster=cluster, policy_name=getattr(policy, "name", "unknown"),
        power_scale=power_scale,
        trace_sha256=hashlib.sha256(trace_to_csv_bytes(trace)).hexdigest(),
        seg_t=np.array(seg_t), seg_w=np.array(seg_w),
        requests=records, readings=readings, actions=actions_log,
        commands=commands, pool_freq_episodes=pool_freq_episodes,
        powerbrake_count=powerbrake_count, budget_breach_count=breach_count,
        lp_servers=n_lp, duration_s=duration)
