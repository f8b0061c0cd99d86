"""Effective sample size and Monte Carlo standard errors for single chains."""

from __future__ import annotations

import numpy as np


def autocorrelation(x) -> np.ndarray:
    """Sample autocorrelation at all lags via FFT (biased estimator, rho[0] = 1)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] == 0:
        return np.zeros(n)
    return acov / acov[0]


def ess(x) -> float:
    """Effective sample size using Geyer's initial monotone sequence.

    A constant chain has no information about its variance; it returns the
    chain length so downstream standard errors come out as zero.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    rho = autocorrelation(x)
    if not rho.any():
        return float(n)
    m = (n - 1) // 2
    pairs = rho[0 : 2 * m : 2] + rho[1 : 2 * m : 2]
    # truncate at the first non-positive pair, then enforce monotone decrease
    neg = np.flatnonzero(pairs <= 0)
    if neg.size:
        pairs = pairs[: neg[0]]
    if pairs.size == 0:
        return float(n)
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    return float(n / max(tau, 1.0 / np.log10(max(n, 10))))


def mcse_mean(x) -> float:
    """Monte Carlo standard error of the sample mean."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float("nan")
    return float(x.std(ddof=1) / np.sqrt(ess(x)))


def batch_means_se(x, n_batches: int = 20) -> float:
    """Standard error of the mean from non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    b = x.size // n_batches
    if b < 1:
        raise ValueError("chain shorter than the number of batches")
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def label_ess(labels) -> np.ndarray:
    """ESS of the non-null indicator per gene (columns of an iterations x genes array)."""
    labels = np.asarray(labels)
    return np.array([ess(labels[:, j] != 1) for j in range(labels.shape[1])])
