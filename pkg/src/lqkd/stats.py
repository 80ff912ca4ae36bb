"""Small statistics helpers for checking simulated keys."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats


def mutual_information(x: np.ndarray, y: np.ndarray) -> float:
    """Plug-in mutual information in bits between two discrete sample arrays.

    Rows of 2-d inputs are treated as joint symbols.
    """
    x = _symbols(x)
    y = _symbols(y)
    if len(x) != len(y):
        raise ValueError("samples must have equal length")
    if len(x) == 0:
        return 0.0
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    joint = np.zeros((xi.max() + 1, yi.max() + 1))
    np.add.at(joint, (xi.ravel(), yi.ravel()), 1)
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log2(joint[nz] / (px @ py)[nz])))


def _symbols(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 1:
        return a
    _, inv = np.unique(a, axis=0, return_inverse=True)
    return inv.reshape(-1)


def chi2_uniform_pvalue(samples: np.ndarray, alphabet: int) -> float:
    """p-value of Pearson's chi-squared test that samples are uniform on range(alphabet)."""
    counts = np.bincount(np.asarray(samples, dtype=np.int64), minlength=alphabet)
    return float(stats.chisquare(counts).pvalue)


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)


def total_variation(counts: np.ndarray, probs: np.ndarray) -> float:
    freq = np.asarray(counts, dtype=float) / np.sum(counts)
    return 0.5 * float(np.abs(freq - np.asarray(probs)).sum())
