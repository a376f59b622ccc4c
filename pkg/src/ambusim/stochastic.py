"""Seeded random streams, arrival/service distributions, KDE fitting and KS tests.

All random draws in the package go through :func:`stream`, which derives an
independent Philox (counter-based) substream from a root seed and a tuple of
integer ids, e.g. ``stream(seed, replication, hospital, PROCESS_SERVICE)``.
Same ids always give the same stream; distinct ids give independent streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import kolmogorov, ndtr

# Process ids used when splitting streams inside a simulation run.
PROCESS_ARRIVALS = 0
PROCESS_LOCATIONS = 1
PROCESS_SERVICE = 2

RNG_ALGORITHM = "Philox"


def stream(seed: int, *ids: int) -> np.random.Generator:
    """Derive a deterministic, independent random stream from (seed, *ids)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in ids))
    return np.random.Generator(np.random.Philox(ss))


def exp_interarrival_cdf(t: float, rate: float) -> float:
    """P(inter-arrival <= t) for a Poisson arrival process: 1 - exp(-rate * t)."""
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    return -math.expm1(-rate * t)


def poisson_pmf(x: int, rate: float, t: float) -> float:
    """Probability of exactly x arrivals in t hours at the given hourly rate."""
    if x < 0 or int(x) != x:
        raise ValueError(f"x must be a non-negative integer, got {x}")
    if rate < 0 or t < 0:
        raise ValueError("rate and t must be non-negative")
    m = rate * t
    if m == 0:
        return 1.0 if x == 0 else 0.0
    return math.exp(x * math.log(m) - m - math.lgamma(x + 1))


def fit_exponential(samples) -> float:
    """Maximum-likelihood rate estimate 1/mean for positive inter-arrival samples."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 samples to fit an exponential")
    if np.any(x <= 0):
        raise ValueError("inter-arrival samples must be positive")
    return 1.0 / float(x.mean())


def scott_bandwidth(samples: np.ndarray) -> float:
    """Scott's rule for a 1-D Gaussian KDE: std * n^(-1/5)."""
    x = np.asarray(samples, dtype=float)
    sd = float(x.std(ddof=1)) if x.size > 1 else 1.0
    if sd == 0.0:
        sd = max(abs(float(x[0])), 1.0) * 1e-3
    return sd * x.size ** (-1.0 / 5.0)


@dataclass(frozen=True)
class KdeFit:
    """Gaussian-kernel density estimate over a 1-D sample."""

    points: np.ndarray
    bandwidth: float

    @property
    def n(self) -> int:
        return self.points.size

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.points) / self.bandwidth
        out = np.exp(-0.5 * z * z).sum(axis=-1) / (self.n * self.bandwidth * math.sqrt(2 * math.pi))
        return out if out.shape else float(out)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.points) / self.bandwidth
        out = ndtr(z).mean(axis=-1)
        return out if out.shape else float(out)

    def sample(self, rng: np.random.Generator, size: int = 1, non_negative: bool = True) -> np.ndarray:
        """Draw from the KDE: pick a sample point uniformly, add Gaussian noise of
        scale h; rejection-sample to non-negative values (durations are physical)."""
        out = np.empty(size)
        filled = 0
        while filled < size:
            need = size - filled
            centers = self.points[rng.integers(0, self.n, size=need)]
            draws = centers + self.bandwidth * rng.standard_normal(need)
            if non_negative:
                draws = draws[draws >= 0]
            out[filled:filled + draws.size] = draws
            filled += draws.size
        return out


def kde_fit(samples, bandwidth: float | None = None) -> KdeFit:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("cannot fit a KDE to an empty sample")
    if bandwidth is None:
        bandwidth = scott_bandwidth(x)
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    return KdeFit(points=x.copy(), bandwidth=float(bandwidth))


def kde_pdf(fit: KdeFit, x):
    return fit.pdf(x)


def kde_cdf(fit: KdeFit, x):
    return fit.cdf(x)


def kde_sample(fit: KdeFit, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    return fit.sample(rng, size=size)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n: int


def ks_test(samples, cdf) -> KsResult:
    """One-sample Kolmogorov-Smirnov test of `samples` against a reference CDF.

    D is the sup over order statistics of max(|i/n - F(x_(i))|, |(i-1)/n - F(x_(i))|);
    the p-value uses the asymptotic Kolmogorov distribution.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 1:
        raise ValueError("need at least one sample")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d = float(np.max(np.maximum(np.abs(i / n - f), np.abs((i - 1) / n - f))))
    p = float(kolmogorov(math.sqrt(n) * d))
    return KsResult(statistic=d, p_value=min(max(p, 0.0), 1.0), n=n)
