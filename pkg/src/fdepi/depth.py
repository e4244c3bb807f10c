"""Modified band depth, functional boxplots and signed depth rankings."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .fdcore import FunctionalDataset, format_float

__all__ = ["DepthReport", "band_counts", "modified_band_depth", "functional_boxplot",
           "signed_ranking", "FENCE_FACTOR"]

FENCE_FACTOR = 1.5


def band_counts(Y) -> np.ndarray:
    """Integer count, per curve and day, of pairs ``j < k`` whose band holds the curve.

    Pairs range over all curves, including those that contain the curve
    itself.  A curve at a day is outside the band of a pair exactly when both
    members lie strictly below it or both strictly above it.
    """
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    order = np.sort(Y, axis=0)
    below = np.empty(Y.shape, dtype=np.int64)
    above = np.empty(Y.shape, dtype=np.int64)
    for t in range(Y.shape[1]):
        below[:, t] = np.searchsorted(order[:, t], Y[:, t], side="left")
        above[:, t] = n - np.searchsorted(order[:, t], Y[:, t], side="right")
    return n * (n - 1) // 2 - below * (below - 1) // 2 - above * (above - 1) // 2


def _mbd(Y):
    n, T = Y.shape
    total = band_counts(Y).sum(axis=1)
    return total / (math.comb(n, 2) * T)


def modified_band_depth(data) -> np.ndarray:
    """Modified band depth (bands of two curves) of every curve.

    Parameters
    ----------
    data : FunctionalDataset or array_like, shape (n, T)

    Returns
    -------
    ndarray, shape (n,)
        For each curve, the average over all pairs of the fraction of days on
        which the curve lies inside the pair's band.
    """
    Y = np.asarray(data.values if isinstance(data, FunctionalDataset) else data, dtype=float)
    if Y.ndim != 2 or Y.shape[0] < 3:
        raise ValueError(f"band depth needs at least 3 curves, got {Y.shape[0] if Y.ndim == 2 else Y.ndim}")
    return _mbd(Y)


@dataclass(frozen=True)
class DepthReport:
    """Depth-based summaries of a set of curves.

    ``central_region`` and ``fence`` are ``(lower, upper)`` curve pairs.  The
    signed fields are ``None`` until :func:`signed_ranking` fills them.
    ``ranking`` lists region names from most extreme above the median to most
    extreme below.
    """

    names: tuple
    depths: np.ndarray
    median_index: int
    central_indices: np.ndarray
    central_region: tuple
    fence: tuple
    outlier_indices: np.ndarray
    above_share: np.ndarray | None = None
    signed_depths: np.ndarray | None = None
    ranking: tuple | None = None

    @property
    def median(self) -> str:
        return self.names[self.median_index]

    @property
    def outliers(self) -> list:
        return [self.names[i] for i in self.outlier_indices]

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "depth", "above_share", "sign", "rank", "outlier"])
        rank = {name: r + 1 for r, name in enumerate(self.ranking)}
        out = set(self.outlier_indices.tolist())
        for i in sorted(range(len(self.names)), key=lambda i: rank[self.names[i]]):
            sign = 1 if self.signed_depths[i] > 0 else -1
            w.writerow([self.names[i], format_float(self.depths[i]), format_float(self.above_share[i]),
                        sign, rank[self.names[i]], int(i in out)])


def _depth_order(depths, names):
    # deepest first; name order breaks ties
    return sorted(range(len(names)), key=lambda i: (-depths[i], names[i]))


def functional_boxplot(data: FunctionalDataset, factor: float = FENCE_FACTOR) -> DepthReport:
    """Functional boxplot built from modified band depth.

    The central region is the pointwise envelope of the ``ceil(n / 2)``
    deepest curves; the fences inflate it by ``factor`` times its pointwise
    range.  A curve crossing a fence on any day is an outlier.
    """
    Y = np.asarray(data.values, dtype=float)
    n = Y.shape[0]
    if n < 4:
        raise ValueError(f"functional boxplot needs at least 4 curves, got {n}")
    depths = _mbd(Y)
    order = _depth_order(depths, data.names)
    central = np.array(sorted(order[: math.ceil(n / 2)]))
    lower, upper = Y[central].min(axis=0), Y[central].max(axis=0)
    spread = upper - lower
    f_lo, f_hi = lower - factor * spread, upper + factor * spread
    outliers = np.flatnonzero(np.any((Y < f_lo) | (Y > f_hi), axis=1))
    return DepthReport(data.names, depths, order[0], central, (lower, upper), (f_lo, f_hi), outliers)


def signed_ranking(data: FunctionalDataset, report: DepthReport | None = None) -> DepthReport:
    """Rank curves by depth, signed by their position relative to the median.

    A curve is above the median (sign +1) when it exceeds the median curve on
    more than half of the days and below it (sign -1) otherwise.  The ranking
    sorts the key ``sign * (1 - depth)`` in decreasing order, so the most
    extreme curves above the median come first and the most extreme below
    come last.
    """
    if report is None:
        report = functional_boxplot(data)
    Y = np.asarray(data.values, dtype=float)
    med = report.median_index
    share = np.mean(Y - Y[med] > 0, axis=1)
    sign = np.where(share > 0.5, 1.0, -1.0)
    for i in np.flatnonzero(share == 0.5):
        if i != med:
            warnings.warn(f"{data.names[i]} lies above the median on exactly half the days; "
                          "treated as above", RuntimeWarning, stacklevel=2)
    sign[share == 0.5] = 1.0
    sign[med] = 1.0
    key = sign * (1.0 - report.depths)
    order = sorted(range(len(data.names)), key=lambda i: (-key[i], data.names[i]))
    ranking = tuple(data.names[i] for i in order)
    return DepthReport(report.names, report.depths, med, report.central_indices,
                       report.central_region, report.fence, report.outlier_indices,
                       share, sign * report.depths, ranking)
