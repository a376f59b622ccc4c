"""Analytical M/M/c/N steady-state metrics, used as an oracle for the simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class QueueParams:
    """Parameters of an M/M/c/N station (N = servers + waiting room)."""

    arrival_rate: float   # offered arrival rate (per hour)
    service_rate: float   # per-server service rate (per hour)
    servers: int
    capacity: int         # total places incl. servers; use a large N for ~unbounded

    def __post_init__(self):
        if self.servers < 1:
            raise ValueError("servers must be >= 1")
        if self.capacity < self.servers:
            raise ValueError(f"capacity {self.capacity} < servers {self.servers}")
        if self.arrival_rate < 0 or self.service_rate <= 0:
            raise ValueError("rates must be non-negative (service rate positive)")

    @property
    def offered_load(self) -> float:
        return self.arrival_rate / self.service_rate

    @property
    def utilization(self) -> float:
        return self.arrival_rate / (self.servers * self.service_rate)


def _log_unnormalized(params: QueueParams) -> list[float]:
    """log of the unnormalized stationary probabilities pi_n, n = 0..N."""
    a = params.offered_load
    rho = params.utilization
    c, n_cap = params.servers, params.capacity
    logs = [0.0]
    if a == 0:
        return logs + [-math.inf] * n_cap
    la, lrho = math.log(a), math.log(rho)
    for n in range(1, n_cap + 1):
        if n <= c:
            logs.append(n * la - math.lgamma(n + 1))
        else:
            logs.append(c * la - math.lgamma(c + 1) + (n - c) * lrho)
    return logs


def stationary_distribution(params: QueueParams):
    """Full stationary distribution (p_0..p_N) of the birth-death chain."""
    logs = _log_unnormalized(params)
    m = max(logs)
    w = [math.exp(v - m) if v > -math.inf else 0.0 for v in logs]
    total = sum(w)
    return [v / total for v in w]


def empty_probability(params: QueueParams) -> float:
    return stationary_distribution(params)[0]


def blocking_probability(params: QueueParams) -> float:
    """Probability an arrival finds the system full (state N)."""
    return stationary_distribution(params)[-1]


def effective_arrival_rate(params: QueueParams) -> float:
    """Arrival rate actually admitted: offered rate times (1 - blocking)."""
    return params.arrival_rate * (1.0 - blocking_probability(params))


def lq(params: QueueParams) -> float:
    """Expected queue length of the M/M/c/N station.

    Computed from the stationary distribution, which equals the closed-form
    P0 a^c rho / (c! (1-rho)^2) * [1 - rho^(N-c) - (N-c) rho^(N-c) (1-rho)]
    for rho != 1 and handles the rho = 1 limit without a special case.
    """
    p = stationary_distribution(params)
    c = params.servers
    return sum((n - c) * p[n] for n in range(c + 1, params.capacity + 1))


def wq(params: QueueParams) -> float:
    """Expected queueing delay: Lq over the effective arrival rate."""
    lam_e = effective_arrival_rate(params)
    if lam_e <= 0:
        raise ValueError("effective arrival rate is zero; Wq undefined")
    return lq(params) / lam_e


def mmc_lq(arrival_rate: float, service_rate: float, servers: int) -> float:
    """Erlang-C queue length of the unbounded M/M/c queue (requires rho < 1)."""
    rho = arrival_rate / (servers * service_rate)
    if rho >= 1:
        raise ValueError("unbounded M/M/c requires utilization < 1")
    a = arrival_rate / service_rate
    log_terms = [n * math.log(a) - math.lgamma(n + 1) for n in range(servers)]
    log_tail = servers * math.log(a) - math.lgamma(servers + 1) - math.log(1 - rho)
    m = max(log_terms + [log_tail])
    denom = sum(math.exp(v - m) for v in log_terms) + math.exp(log_tail - m)
    erlang_c = math.exp(log_tail - m) / denom
    return erlang_c * rho / (1 - rho)


def system_utilization(arrival_rate: float, service_rates, servers) -> float:
    """Citywide load ratio lambda / sum_j c_j mu_j."""
    total = sum(c * m for c, m in zip(servers, service_rates, strict=True))
    if total <= 0:
        raise ValueError("total service capacity must be positive")
    return arrival_rate / total


def stability(params: QueueParams) -> bool:
    """True iff the station is stable when the buffer is unbounded (rho < 1)."""
    return params.utilization < 1.0
