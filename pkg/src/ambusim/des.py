"""Discrete-event simulation of patient arrival, dispatch, queueing, and service.

One run is strictly sequential (a single event clock); runs are independent and
deterministic given (scenario, profile, seed), so replications can be executed
in parallel and merged by value.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import Scenario, sample_locations
from .stochastic import stream, PROCESS_ARRIVALS, PROCESS_LOCATIONS, PROCESS_SERVICE

ACCEPT = "A"
REDIRECT = "R"

_ARRIVE = 0     # patient reaches the hospital door
_DEPART = 1     # service completion


def parse_profile(profile, k: int) -> tuple:
    """Normalize a strategy profile ('AR', ['A','R'], ...) to a tuple of length k."""
    actions = tuple(str(a).upper() for a in profile)
    if len(actions) != k:
        raise ValueError(f"profile length {len(actions)} != hospital count {k}")
    if any(a not in (ACCEPT, REDIRECT) for a in actions):
        raise ValueError(f"profile actions must be A or R, got {actions}")
    return actions


@dataclass
class HospitalMetrics:
    hospital_id: int
    n_served: int = 0
    n_assigned: int = 0
    t_travel: float = 0.0     # mean hours over served patients
    t_queue: float = 0.0
    t_service: float = 0.0
    effective_rate: float = 0.0  # assigned patients per post-warmup hour

    @property
    def t_total(self) -> float:
        return self.t_travel + self.t_queue + self.t_service

    @property
    def score(self) -> float | None:
        """Served patients per hour of average total patient time; None if unserved."""
        if self.n_served == 0 or self.t_total <= 0:
            return None
        return self.n_served / self.t_total


@dataclass
class SimulationResult:
    hospitals: list
    total_arrivals: int
    redirects: int
    forced_assignments: int
    served: int
    in_system_at_end: int
    in_transit_at_end: int
    queue_quarters: list          # time-averaged total queue length per horizon quarter
    t_global: float | None
    t_global_weighted: float | None
    trace: list | None = None

    @property
    def scores(self) -> list:
        return [h.score for h in self.hospitals]


def t_global(hospitals, mode: str = "printed") -> float | None:
    """System-level time indicator over hospitals with served patients.

    "printed" uses sum(T_j * lam_j) / sum(T_j); "weighted" uses the
    arrival-weighted mean sum(T_j * lam_j) / sum(lam_j).
    """
    active = [h for h in hospitals if h.n_served > 0 and h.t_total > 0]
    if not active:
        return None
    num = sum(h.t_total * h.effective_rate for h in active)
    if mode == "printed":
        denom = sum(h.t_total for h in active)
    elif mode == "weighted":
        denom = sum(h.effective_rate for h in active)
    else:
        raise ValueError(f"unknown t_global mode {mode!r}")
    return num / denom if denom > 0 else None


def _arrival_times(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    """Poisson request times over [0, horizon), hourly-scaled by thinning."""
    lam_max = scenario.arrivals.peak_rate
    times = []
    t = 0.0
    homogeneous = all(s == scenario.arrivals.hourly_scale[0] for s in scenario.arrivals.hourly_scale)
    while True:
        t += rng.exponential(1.0 / lam_max)
        if t >= scenario.horizon:
            break
        if homogeneous or rng.uniform() * lam_max <= scenario.arrivals.rate_at(t):
            times.append(t)
    return np.asarray(times)


class _Hospital:
    __slots__ = ("spec", "capacity", "busy", "queue", "in_transit", "mean_service",
                 "sum_travel", "sum_queue", "sum_service", "n_served", "n_assigned")

    def __init__(self, spec, mean_service):
        self.spec = spec
        self.capacity = spec.capacity
        self.busy = 0
        self.queue = []          # FIFO of (patient index, arrival-at-door time)
        self.in_transit = 0
        self.mean_service = mean_service
        self.sum_travel = 0.0
        self.sum_queue = 0.0
        self.sum_service = 0.0
        self.n_served = 0
        self.n_assigned = 0

    def admitted(self, count_in_transit: bool) -> int:
        n = self.busy + len(self.queue)
        return n + self.in_transit if count_in_transit else n


def dispatch(origin, t: float, actions, hospitals, scenario: Scenario,
             count_in_transit: bool = False):
    """Choose the destination hospital for a request at `origin` at time t.

    Walks hospitals in ascending travel time: a hospital takes the patient when
    its action is Accept, or when its action is Redirect but it is still under
    its capacity threshold. If every hospital rejects, the patient is forcibly
    assigned to the hospital minimizing estimated travel + waiting + service time.

    Returns (index into `hospitals`, travel hours, n_rejections, forced flag).
    """
    order = sorted(range(len(hospitals)),
                   key=lambda j: (scenario.travel.travel_hours(origin, hospitals[j].spec.location, t),
                                  hospitals[j].spec.id))
    travel = {j: scenario.travel.travel_hours(origin, hospitals[j].spec.location, t) for j in order}
    rejections = 0
    for j in order:
        h = hospitals[j]
        if actions[j] == ACCEPT or h.admitted(count_in_transit) < h.capacity:
            return j, travel[j], rejections, False
        rejections += 1
    # All redirected at capacity: minimize estimated total time.
    j = min(order, key=lambda j: (travel[j]
                                  + len(hospitals[j].queue) * hospitals[j].mean_service / hospitals[j].spec.servers
                                  + hospitals[j].mean_service, hospitals[j].spec.id))
    return j, travel[j], rejections, True


def run_simulation(scenario: Scenario, profile, seed: int,
                   collect_trace: bool = False) -> SimulationResult:
    """Run one seeded replication of the dispatch process under a strategy profile."""
    actions = parse_profile(profile, scenario.k)
    rng_arr = stream(seed, PROCESS_ARRIVALS)
    rng_loc = stream(seed, PROCESS_LOCATIONS)
    service_rngs = [stream(seed, PROCESS_SERVICE, j) for j in range(scenario.k)]

    request_times = _arrival_times(scenario, rng_arr)
    n_patients = request_times.size
    origins = sample_locations(scenario, rng_loc, n_patients) if n_patients else []

    hospitals = [_Hospital(h, scenario.service_of(h).mean_hours) for h in scenario.hospitals]
    services = [scenario.service_of(h.spec) for h in hospitals]
    count_in_transit = scenario.count_in_transit

    # Pre-drawn service times per hospital, consumed in service-start order.
    svc_buffers = [list(services[j].sample_hours(service_rngs[j], max(16, n_patients)))
                   for j in range(scenario.k)]

    def next_service(j):
        buf = svc_buffers[j]
        if not buf:
            svc_buffers[j] = list(services[j].sample_hours(service_rngs[j], 64))
            buf = svc_buffers[j]
        return buf.pop()

    heap = []
    seq = 0
    # patient bookkeeping: travel, door arrival, service start, assigned hospital
    p_travel = np.empty(n_patients)
    p_door = np.empty(n_patients)
    p_start = np.full(n_patients, math.nan)
    p_hosp = np.full(n_patients, -1, dtype=int)
    p_reject = np.zeros(n_patients, dtype=int)
    p_service = np.full(n_patients, math.nan)
    p_done = np.zeros(n_patients, dtype=bool)

    redirects = 0
    forced = 0

    # queue-length time integral per horizon quarter
    quarter = scenario.horizon / 4.0
    q_integral = [0.0, 0.0, 0.0, 0.0]
    q_level = 0
    q_last = 0.0

    def queue_change(t, delta):
        nonlocal q_level, q_last
        t = min(t, scenario.horizon)
        t0 = q_last
        while t0 < t:
            qi = min(int(t0 / quarter), 3)
            t1 = min((qi + 1) * quarter, t)
            q_integral[qi] += q_level * (t1 - t0)
            t0 = t1
        q_last = t
        q_level += delta

    for i in range(n_patients):
        t = float(request_times[i])
        # Drain events up to this request so dispatch sees current occupancy.
        while heap and heap[0][0] <= t:
            _step(heap, hospitals, p_start, p_service, p_done, next_service, queue_change)
        j, tau, nrej, was_forced = dispatch(origins[i], t, actions, hospitals, scenario,
                                            count_in_transit)
        redirects += nrej
        forced += int(was_forced)
        p_travel[i] = tau
        p_hosp[i] = j
        p_reject[i] = nrej
        hospitals[j].in_transit += 1
        hospitals[j].n_assigned += 1
        door = t + tau
        p_door[i] = door
        heapq.heappush(heap, (door, seq, _ARRIVE, i, j))
        seq += 1

    while heap and heap[0][0] <= scenario.horizon:
        _step(heap, hospitals, p_start, p_service, p_done, next_service, queue_change)
    queue_change(scenario.horizon, 0)

    in_transit_at_end = sum(1 for i in range(n_patients)
                            if not p_done[i] and p_door[i] > scenario.horizon)
    in_system_at_end = int(n_patients - p_done.sum() - in_transit_at_end)

    post = (request_times >= scenario.warmup) & p_done
    span = scenario.horizon - scenario.warmup
    metrics = []
    for j, h in enumerate(hospitals):
        mask = post & (p_hosp == j)
        n = int(mask.sum())
        m = HospitalMetrics(hospital_id=h.spec.id, n_served=n)
        m.n_assigned = int(((request_times >= scenario.warmup) & (p_hosp == j)).sum())
        m.effective_rate = m.n_assigned / span
        if n:
            m.t_travel = float(p_travel[mask].mean())
            m.t_queue = float((p_start[mask] - p_door[mask]).mean())
            m.t_service = float(p_service[mask].mean())
        metrics.append(m)

    trace = None
    if collect_trace:
        trace = [{
            "patient_id": i,
            "request_time": float(request_times[i]),
            "hospital_id": hospitals[p_hosp[i]].spec.id,
            "n_rejections": int(p_reject[i]),
            "travel": float(p_travel[i]),
            "queue": float(p_start[i] - p_door[i]) if p_done[i] else math.nan,
            "service": float(p_service[i]) if p_done[i] else math.nan,
            "completed": bool(p_done[i]),
        } for i in range(n_patients)]

    return SimulationResult(
        hospitals=metrics,
        total_arrivals=n_patients,
        redirects=redirects,
        forced_assignments=forced,
        served=int(p_done.sum()),
        in_system_at_end=in_system_at_end,
        in_transit_at_end=in_transit_at_end,
        queue_quarters=[q / quarter for q in q_integral],
        t_global=t_global(metrics, "printed"),
        t_global_weighted=t_global(metrics, "weighted"),
        trace=trace,
    )


def _step(heap, hospitals, p_start, p_service, p_done, next_service, queue_change):
    t, _, kind, i, j = heapq.heappop(heap)
    h = hospitals[j]
    if kind == _ARRIVE:
        h.in_transit -= 1
        if h.busy < h.spec.servers:
            h.busy += 1
            _begin_service(heap, t, i, j, p_start, p_service, next_service)
        else:
            h.queue.append((i, t))
            queue_change(t, +1)
    else:  # _DEPART
        p_done[i] = True
        h.n_served += 1
        if h.queue:
            nxt, _door = h.queue.pop(0)
            queue_change(t, -1)
            _begin_service(heap, t, nxt, j, p_start, p_service, next_service)
        else:
            h.busy -= 1


_seq_counter = 1 << 40  # departures after arrivals at identical times


def _begin_service(heap, t, i, j, p_start, p_service, next_service):
    global _seq_counter
    s = next_service(j)
    p_start[i] = t
    p_service[i] = s
    _seq_counter += 1
    heapq.heappush(heap, (t + s, _seq_counter, _DEPART, i, j))


# ---------------------------------------------------------------------------
# Replication


@dataclass
class ReplicationSummary:
    results: list
    seeds: list
    means: dict = field(default_factory=dict)
    ci_half: dict = field(default_factory=dict)

    def metric(self, name: str):
        return self.means.get(name), self.ci_half.get(name)


def _normal_ci(values) -> tuple:
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    if not vals:
        return None, None
    mean = float(np.mean(vals))
    if len(vals) < 2:
        return mean, None
    half = 1.96 * float(np.std(vals, ddof=1)) / math.sqrt(len(vals))
    return mean, half


def replicate(scenario: Scenario, profile, seeds, collect_trace: bool = False) -> ReplicationSummary:
    """Run the simulation once per seed; per-metric mean and 95% normal CI."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    results = [run_simulation(scenario, profile, s, collect_trace=collect_trace) for s in seeds]
    summary = ReplicationSummary(results=results, seeds=seeds)
    k = scenario.k
    per_metric = {
        "t_global": [r.t_global for r in results],
        "t_global_weighted": [r.t_global_weighted for r in results],
        "total_arrivals": [float(r.total_arrivals) for r in results],
        "redirects": [float(r.redirects) for r in results],
    }
    for j in range(k):
        hid = scenario.hospitals[j].id
        per_metric[f"score_{hid}"] = [r.hospitals[j].score for r in results]
        per_metric[f"t_queue_{hid}"] = [r.hospitals[j].t_queue if r.hospitals[j].n_served else None
                                        for r in results]
        per_metric[f"t_total_{hid}"] = [r.hospitals[j].t_total if r.hospitals[j].n_served else None
                                        for r in results]
        per_metric[f"n_served_{hid}"] = [float(r.hospitals[j].n_served) for r in results]
    for name, vals in per_metric.items():
        mean, half = _normal_ci(vals)
        summary.means[name] = mean
        summary.ci_half[name] = half
    return summary


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "request_time", "hospital_id", "n_rejections",
                         "travel", "queue", "service"])
        for row in trace:
            writer.writerow([row["patient_id"], repr(row["request_time"]), row["hospital_id"],
                             row["n_rejections"], repr(row["travel"]),
                             repr(row["queue"]), repr(row["service"])])
