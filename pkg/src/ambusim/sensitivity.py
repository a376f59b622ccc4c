"""Sobol global sensitivity analysis with Saltelli N(d+2) sampling.

First-order indices use the Saltelli (2010) estimator, total-order indices the
Jansen estimator; confidence intervals come from bootstrap resampling of the
N sample rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .des import run_simulation
from .scenario import (ArrivalProfile, HospitalSpec, Scenario, ServiceModel,
                       TravelModel)


@dataclass(frozen=True)
class FactorSpace:
    names: tuple
    bounds: tuple      # per-factor (low, high)

    def __post_init__(self):
        if len(self.names) != len(self.bounds) or not self.names:
            raise ValueError("need one (low, high) bound per factor, at least one factor")
        for name, (lo, hi) in zip(self.names, self.bounds):
            if not lo < hi:
                raise ValueError(f"factor {name}: degenerate range ({lo}, {hi})")

    @property
    def d(self) -> int:
        return len(self.names)

    def scale(self, unit: np.ndarray) -> np.ndarray:
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return lo + unit * (hi - lo)


@dataclass(frozen=True)
class SobolIndices:
    names: tuple
    first: np.ndarray
    first_ci: np.ndarray     # bootstrap 95% half-widths
    total: np.ndarray
    total_ci: np.ndarray
    n: int


def saltelli_sample(space: FactorSpace, n: int, seed: int = 0) -> np.ndarray:
    """Sobol-sequence A, B and A_B^i matrices stacked into N(d+2) rows.

    Row layout: rows [0, N) are A, rows [N, 2N) are B, and rows
    [(2+i)N, (3+i)N) are A with column i replaced from B.
    """
    if n < 1 or n & (n - 1):
        raise ValueError(f"base sample size must be a power of two, got {n}")
    d = space.d
    engine = qmc.Sobol(d=2 * d, scramble=True, seed=seed)
    ab = engine.random(n)
    a_mat, b_mat = ab[:, :d], ab[:, d:]
    blocks = [a_mat, b_mat]
    for i in range(d):
        abi = a_mat.copy()
        abi[:, i] = b_mat[:, i]
        blocks.append(abi)
    return space.scale(np.vstack(blocks))


def _indices_from_blocks(f_a, f_b, f_ab):
    var = np.var(np.concatenate([f_a, f_b]), ddof=1)
    if var <= 0:
        d = f_ab.shape[0]
        return np.zeros(d), np.zeros(d)
    first = np.array([np.mean(f_b * (f_ab[i] - f_a)) / var for i in range(f_ab.shape[0])])
    total = np.array([np.mean((f_a - f_ab[i]) ** 2) / (2 * var) for i in range(f_ab.shape[0])])
    return first, total


def sobol_indices(model, space: FactorSpace, n: int, seed: int = 0,
                  bootstrap_n: int = 100, bootstrap_seed: int = 1,
                  impute=None) -> SobolIndices:
    """First- and total-order Sobol indices of `model` over `space`.

    `model` maps a length-d factor vector to a scalar; non-finite outputs are
    imputed with `impute` (a callable of the factor vector, or a constant)
    when given, otherwise raise.
    """
    x = saltelli_sample(space, n, seed=seed)
    y = np.array([model(row) for row in x], dtype=float)
    bad = ~np.isfinite(y)
    if bad.any():
        if impute is None:
            raise ValueError(f"model returned {bad.sum()} non-finite values; supply `impute`")
        if callable(impute):
            y[bad] = [impute(row) for row in x[bad]]
        else:
            y[bad] = impute
    d = space.d
    f_a, f_b = y[:n], y[n:2 * n]
    f_ab = np.stack([y[(2 + i) * n:(3 + i) * n] for i in range(d)])
    first, total = _indices_from_blocks(f_a, f_b, f_ab)

    rng = np.random.default_rng(bootstrap_seed)
    boot_first = np.empty((bootstrap_n, d))
    boot_total = np.empty((bootstrap_n, d))
    for b in range(bootstrap_n):
        idx = rng.integers(0, n, size=n)
        s1, st = _indices_from_blocks(f_a[idx], f_b[idx], f_ab[:, idx])
        boot_first[b] = s1
        boot_total[b] = st
    first_ci = (np.quantile(boot_first, 0.975, axis=0) - np.quantile(boot_first, 0.025, axis=0)) / 2
    total_ci = (np.quantile(boot_total, 0.975, axis=0) - np.quantile(boot_total, 0.025, axis=0)) / 2
    return SobolIndices(names=space.names, first=first, first_ci=first_ci,
                        total=total, total_ci=total_ci, n=n)


def convergence_study(model, space: FactorSpace, sizes, factor: int = 0,
                      seed: int = 0, bootstrap_n: int = 100,
                      target_half_width: float | None = None) -> dict:
    """Total-order index of one factor with its CI half-width per sample size.

    Returns {"sizes": [...], "total": [...], "ci": [...], "achieved_at": size or None}.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    totals, cis = [], []
    achieved = None
    for n in sizes:
        idx = sobol_indices(model, space, n, seed=seed, bootstrap_n=bootstrap_n)
        totals.append(float(idx.total[factor]))
        cis.append(float(idx.total_ci[factor]))
        if target_half_width is not None and achieved is None and cis[-1] <= target_half_width:
            achieved = n
    return {"sizes": sizes, "total": totals, "ci": cis, "achieved_at": achieved}


# ---------------------------------------------------------------------------
# The dispatch-model factor space (d = 9)


def dispatch_factor_space() -> FactorSpace:
    """Default 9-factor space for the three-hospital 2D dispatch model:
    arrival rate, per-server service rate, ambulance velocity, and the three
    hospitals' server counts and buffer sizes (integer factors are rounded)."""
    return FactorSpace(
        names=("arrival_rate", "service_rate", "velocity",
               "servers_1", "servers_2", "servers_3",
               "buffer_1", "buffer_2", "buffer_3"),
        bounds=((0.5, 3.0), (0.5, 3.0), (20.0, 80.0),
                (1.0, 4.0), (1.0, 4.0), (1.0, 4.0),
                (0.0, 4.0), (0.0, 4.0), (0.0, 4.0)),
    )


def triangle_scenario(arrival_rate: float = 1.5, service_rate: float = 1.0,
                      velocity: float = 40.0, servers=(2, 2, 2), buffers=(0, 0, 0),
                      horizon: float = 240.0, side_km: float = 10.0) -> Scenario:
    """Three hospitals on an equilateral triangle inside a square region."""
    r = side_km / math.sqrt(3.0)
    cx = cy = side_km / 2.0
    locs = [(cx + r * math.cos(a), cy + r * math.sin(a))
            for a in (math.pi / 2, math.pi / 2 + 2 * math.pi / 3, math.pi / 2 + 4 * math.pi / 3)]
    hospitals = tuple(
        HospitalSpec(id=j, location=(round(x, 6), round(y, 6)), servers=int(servers[j]),
                     queue_buffer=int(buffers[j]),
                     service=ServiceModel(kind="exponential", rate=service_rate))
        for j, (x, y) in enumerate(locs))
    return Scenario(
        hospitals=hospitals,
        arrivals=ArrivalProfile(base_rate=arrival_rate),
        travel=TravelModel(kind="euclidean", velocity_kmh=velocity,
                           region=((0.0, 0.0), (side_km, side_km))),
        horizon=horizon,
        name="triangle-2d",
    )


def dispatch_model(seed: int = 0, horizon: float = 240.0, profile: str | None = None):
    """Model closure for SA: factor vector -> mean hospital Score.

    The DES seed is fixed, so the model is a deterministic function of the
    factors and index estimates are reproducible.
    """
    def evaluate(x):
        servers = [max(1, round(v)) for v in x[3:6]]
        buffers = [max(0, round(v)) for v in x[6:9]]
        sc = triangle_scenario(arrival_rate=float(x[0]), service_rate=float(x[1]),
                               velocity=float(x[2]), servers=servers, buffers=buffers,
                               horizon=horizon)
        prof = profile or "".join(h.default_strategy for h in sc.hospitals)
        result = run_simulation(sc, prof, seed)
        scores = [s for s in result.scores if s is not None]
        return float(np.mean(scores)) if scores else 0.0
    return evaluate


def write_indices(indices: SobolIndices, path) -> None:
    """Delimited output: factor, S1, S1_ci, ST, ST_ci."""
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["factor", "S1", "S1_ci", "ST", "ST_ci"])
        for i, name in enumerate(indices.names):
            writer.writerow([name, repr(float(indices.first[i])), repr(float(indices.first_ci[i])),
                             repr(float(indices.total[i])), repr(float(indices.total_ci[i]))])
