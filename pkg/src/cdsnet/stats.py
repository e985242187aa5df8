"""Small statistics toolbox: permutation tests, histograms, and a dip
statistic used to flag bimodal loss distributions."""

from __future__ import annotations

import numpy as np

__all__ = [
    "permutation_pvalue",
    "fixed_histogram",
    "dip_statistic",
    "dip_pvalue",
]


def permutation_pvalue(
    a,
    b,
    n_perm: int = 2000,
    seed: int = 0,
) -> float:
    """One-sided permutation p-value for H1: mean(a) < mean(b).

    Labels are reshuffled `n_perm` times; returns the fraction of
    permutations whose mean difference is at least the observed one
    (add-one smoothed).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    observed = b.mean() - a.mean()
    pooled = np.concatenate([a, b])
    rng = np.random.default_rng(seed)
    n_a = len(a)
    count = 0
    for _ in range(n_perm):
        perm = rng.permutation(pooled)
        diff = perm[n_a:].mean() - perm[:n_a].mean()
        if diff >= observed:
            count += 1
    return (count + 1) / (n_perm + 1)


def fixed_histogram(values, lo: float, hi: float, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Histogram with fixed edges over [lo, hi]; values above hi land in the
    last bin so counts always sum to len(values)."""
    values = np.asarray(values, dtype=float)
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    clipped = np.clip(values, lo, np.nextafter(hi, lo))
    counts, _ = np.histogram(clipped, bins=edges)
    return edges, counts


def _convex_minorant(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Greatest convex minorant of points (x, y), evaluated at every x."""
    hull = [0]
    for j in range(1, len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b if it lies above the chord a -> j
            if (y[b] - y[a]) * (x[j] - x[b]) >= (y[j] - y[b]) * (x[b] - x[a]):
                hull.pop()
            else:
                break
        hull.append(j)
    return np.interp(x, x[hull], y[hull])


def dip_statistic(samples) -> float:
    """Distance of the empirical cdf from the nearest unimodal cdf.

    For every candidate mode position the ecdf is fitted by a convex
    minorant on the left and a concave majorant on the right; the dip is
    half the smallest worst-case deviation over mode positions.  Zero for
    degenerate or very small samples.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n < 4 or x[0] == x[-1]:
        return 0.0
    x = x + np.arange(n) * 1e-12 * max(1.0, abs(x[-1]))  # break ties
    ecdf = (np.arange(n) + 1.0) / n
    best = np.inf
    for m in range(n):
        left_dev = 0.0
        if m > 0:
            fit = _convex_minorant(x[: m + 1], ecdf[: m + 1])
            left_dev = float(np.max(np.abs(ecdf[: m + 1] - fit)))
        right_dev = 0.0
        if m < n - 1:
            # concave majorant via the convex minorant of the flipped tail
            xr = -x[m:][::-1]
            yr = -ecdf[m:][::-1]
            fit = -_convex_minorant(xr, yr)[::-1]
            right_dev = float(np.max(np.abs(ecdf[m:] - fit)))
        best = min(best, max(left_dev, right_dev))
    return 0.5 * best


def dip_pvalue(samples, n_boot: int = 200, seed: int = 0) -> float:
    """Monte Carlo p-value of the dip statistic against the uniform null."""
    d = dip_statistic(samples)
    n = len(np.asarray(samples))
    rng = np.random.default_rng(seed)
    count = 0
    for _ in range(n_boot):
        if dip_statistic(rng.uniform(size=n)) >= d:
            count += 1
    return (count + 1) / (n_boot + 1)
