"""Interval-wise permutation testing of two groups of aligned curves.

For every contiguous interval of days the statistic is the integrated
absolute difference between the two group means, summed day by day.  All
intervals are tested against one shared stream of label permutations, and
the adjusted p-value at day ``t`` and scale ``w`` is the largest raw p-value
among intervals of length ``<= w`` that contain ``t``.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .fdcore import format_float

__all__ = ["IntervalTestResult", "interval_p", "iwt", "EXACT_LIMIT"]

EXACT_LIMIT = 10_000
_CHUNK = 250


@dataclass(frozen=True)
class IntervalTestResult:
    """Raw and adjusted p-values of an interval-wise test.

    Attributes
    ----------
    raw_p : ndarray, shape (T, T)
        ``raw_p[a, L - 1]`` is the p-value of the interval of length ``L``
        starting at day ``a``; NaN where the interval would leave the grid.
    adjusted_p : ndarray, shape (T, T)
        ``adjusted_p[t, w - 1]`` is the adjusted p-value at day ``t`` and
        scale ``w``.
    n_permutations : int
        Number of arrangements the p-values are based on (all of them when
        ``exact``).
    """

    raw_p: np.ndarray
    adjusted_p: np.ndarray
    n_permutations: int
    exact: bool
    statistic: str = "mean"

    @property
    def T(self) -> int:
        return self.adjusted_p.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return np.arange(1, self.T + 1)

    @property
    def scales(self) -> np.ndarray:
        return np.arange(1, self.T + 1)

    def interval(self, start: int, stop: int) -> float:
        """Raw p-value of days ``start .. stop - 1``."""
        return float(self.raw_p[start, stop - start - 1])

    def significant(self, scale: int, level: float = 0.05) -> np.ndarray:
        """Boolean mask of days with adjusted p below ``level`` at ``scale``."""
        return self.adjusted_p[:, scale - 1] < level

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "w", "p"])
        for t in range(self.T):
            for s in range(self.T):
                w.writerow([t + 1, s + 1, format_float(self.adjusted_p[t, s])])


def _check(a, b, n_perm):
    A = np.atleast_2d(np.asarray(a, dtype=float))
    B = np.atleast_2d(np.asarray(b, dtype=float))
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("both groups must be non-empty")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"groups live on different grids: {A.shape[1]} vs {B.shape[1]} days")
    if n_perm < 100:
        raise ValueError(f"B={n_perm} permutations is too few (need >= 100)")
    return A, B


def _canonical(A, B):
    # the test is symmetric in its groups; fix an order so swapping arguments is a no-op
    key = lambda X: (X.shape[0], X.tobytes())
    return (A, B) if key(A) <= key(B) else (B, A)


def _abs_diffs(pooled, first):
    """|mean of rows in ``first`` - mean of the rest| for each arrangement.

    ``first`` is a boolean matrix (arrangements x n).
    """
    m = first.sum(axis=1, keepdims=True)
    f = first.astype(float)
    total = pooled.sum(axis=0)
    s1 = f @ pooled
    return np.abs(s1 / m - (total - s1) / (pooled.shape[0] - m))


def _interval_stats(absdiff):
    """Stats of every interval; entry ``L - 1`` has shape (..., T - L + 1)."""
    T = absdiff.shape[-1]
    cs = np.concatenate([np.zeros(absdiff.shape[:-1] + (1,)), np.cumsum(absdiff, axis=-1)], axis=-1)
    return [cs[..., L:] - cs[..., : T - L + 1] for L in range(1, T + 1)]


def _arrangements(n, m, n_perm, seed, n_jobs, method):
    """Boolean arrangement blocks, and whether they enumerate every arrangement."""
    total = math.comb(n, m)
    if method == "exact" or (method == "auto" and total <= EXACT_LIMIT):
        rows = np.zeros((total, n), dtype=bool)
        for r, idx in enumerate(itertools.combinations(range(n), m)):
            rows[r, list(idx)] = True
        return [rows], True
    n_chunks = -(-n_perm // _CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)

    def chunk(c):
        rng = np.random.default_rng(children[c])
        size = min(_CHUNK, n_perm - c * _CHUNK)
        perms = rng.permuted(np.tile(np.arange(n), (size, 1)), axis=1)
        return perms < m

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            blocks = list(pool.map(chunk, range(n_chunks)))
    else:
        blocks = [chunk(c) for c in range(n_chunks)]
    return blocks, False


def _tol(obs):
    return 1e-12 * np.maximum(1.0, np.abs(obs))


def _raw_pvalues(A, B, n_perm, seed, n_jobs, method="auto"):
    # A, B already in canonical order
    pooled = np.vstack([A, B])
    n, m, T = pooled.shape[0], A.shape[0], pooled.shape[1]
    obs_first = np.zeros((1, n), dtype=bool)
    obs_first[0, :m] = True
    observed = _interval_stats(_abs_diffs(pooled, obs_first)[0])
    blocks, exact = _arrangements(n, m, n_perm, seed, n_jobs, method)
    counts = [np.zeros(T - L + 1) for L in range(1, T + 1)]
    for first in blocks:
        stats = _interval_stats(_abs_diffs(pooled, first))
        for L in range(T):
            counts[L] += np.sum(stats[L] >= observed[L] - _tol(observed[L]), axis=0)
    raw = np.full((T, T), np.nan)
    if exact:
        n_arr = math.comb(n, m)
        for L in range(T):
            raw[: T - L, L] = counts[L] / n_arr
    else:
        n_arr = n_perm
        for L in range(T):
            raw[: T - L, L] = (1.0 + counts[L]) / (n_perm + 1.0)
    return raw, n_arr, exact


def _adjust(raw):
    T = raw.shape[0]
    adj = np.empty((T, T))
    running = np.zeros(T)
    for L in range(1, T + 1):
        p = raw[: T - L + 1, L - 1]
        # max over the starts a with a <= t <= a + L - 1
        cover = np.full(T, -np.inf)
        for off in range(L):
            np.maximum(cover[off : off + T - L + 1], p, out=cover[off : off + T - L + 1])
        running = np.maximum(running, cover)
        adj[:, L - 1] = running
    return adj


def iwt(group_a, group_b, B: int = 1000, seed: int = 0, n_jobs: int = 1,
        method: str = "auto") -> IntervalTestResult:
    """Interval-wise test of the mean difference between two curve groups.

    Parameters
    ----------
    group_a, group_b : array_like, shape (n_a, T) and (n_b, T)
        Aligned curves (rows) on a common grid.
    B : int
        Monte-Carlo permutations; ignored when the number of distinct label
        arrangements is at most ``EXACT_LIMIT``, in which case all of them are
        enumerated.
    seed : int
        Seed of the permutation stream.  Chunks of permutations draw from
        indexed children of ``SeedSequence(seed)``, so ``n_jobs`` does not
        change the result.
    method : {"auto", "exact", "mc"}
        Force full enumeration or Monte-Carlo sampling instead of choosing
        by ``EXACT_LIMIT``.
    """
    if method not in ("auto", "exact", "mc"):
        raise ValueError(f"unknown method {method!r}")
    A, Bm = _check(group_a, group_b, B)
    raw, n_arr, exact = _raw_pvalues(*_canonical(A, Bm), B, seed, n_jobs, method)
    return IntervalTestResult(raw, _adjust(raw), n_arr, exact)


def interval_p(group_a, group_b, interval, B: int = 1000, seed: int = 0) -> float:
    """Permutation p-value of one interval ``(start, stop)`` (stop exclusive).

    Uses the same permutation stream as :func:`iwt`, so the value equals the
    corresponding raw p-value of a full test with the same seed.
    """
    A, Bm = _check(group_a, group_b, B)
    start, stop = (int(v) for v in interval)
    T = A.shape[1]
    if not 0 <= start < stop <= T:
        raise ValueError(f"interval {interval} outside the grid of {T} days")
    A, Bm = _canonical(A, Bm)
    raw, _, _ = _raw_pvalues(A[:, start:stop], Bm[:, start:stop], B, seed, 1)
    return float(raw[0, stop - start - 1])
