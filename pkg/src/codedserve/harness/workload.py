import math

import numpy as np


def generate_poisson(qps, n, seed=0):
    """Arrival times (seconds, starting after 0) of a Poisson process with rate ``qps``."""
    if not qps > 0 or math.isinf(qps):
        raise ValueError(f"qps must be positive and finite, got {qps}")
    rng = np.random.default_rng(seed)
    return np.cumsum(rng.exponential(1.0 / qps, size=int(n)))


def percentile(samples, q):
    """Nearest-rank percentile: element ``ceil(q * n)`` (1-based) of the sorted samples.

    ``q`` is a fraction in [0, 1].
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be a fraction in [0, 1], got {q}")
    data = np.sort(np.asarray(samples, dtype=np.float64))
    if data.size == 0:
        raise ValueError("percentile of an empty sample")
    # round first so 0.999 * 1000 lands on 999, not 1000
    rank = math.ceil(round(q * data.size, 9))
    return float(data[min(max(rank, 1), data.size) - 1])


LATENCY_KEYS = ("median", "mean", "p99", "p99.5", "p99.9")


def latency_summary(latencies_ms):
    lat = np.asarray(latencies_ms, dtype=np.float64)
    return {
        "median": percentile(lat, 0.5),
        "mean": float(lat.mean()),
        "p99": percentile(lat, 0.99),
        "p99.5": percentile(lat, 0.995),
        "p99.9": percentile(lat, 0.999),
    }
