"""Curve containers, daily grids, quadrature and penalized B-spline smoothing.

Every curve in the package lives on a uniform daily grid.  Smoothing uses a
cubic B-spline basis with a knot at every day and a roughness penalty on the
second derivative; the shared smoothing parameter is picked by the mean
generalized cross-validation score across curves.
"""

from __future__ import annotations

import csv
import datetime as dt
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

__all__ = [
    "TimeGrid",
    "FunctionalDataset",
    "BSplineBasis",
    "SmoothModel",
    "build_basis",
    "smooth",
    "select_lambda",
    "integrate",
    "trapezoid_weights",
    "default_lambda_grid",
    "read_curves_csv",
    "write_curves_csv",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform daily grid starting at ``start_day`` with ``length`` days."""

    start_day: dt.date
    length: int

    def __post_init__(self):
        if int(self.length) != self.length or self.length < 2:
            raise ValueError(f"grid length must be an integer >= 2, got {self.length}")

    @classmethod
    def between(cls, first: dt.date, last: dt.date) -> "TimeGrid":
        return cls(first, (last - first).days + 1)

    @property
    def labels(self) -> np.ndarray:
        return np.arange(self.length)

    @property
    def dates(self) -> list[dt.date]:
        return [self.start_day + dt.timedelta(days=int(k)) for k in range(self.length)]

    @property
    def span(self) -> float:
        return float(self.length - 1)

    def index_of(self, day: dt.date) -> int:
        k = (day - self.start_day).days
        if not 0 <= k < self.length:
            raise ValueError(f"{day} is outside the grid {self.start_day} + {self.length} days")
        return k


@dataclass(frozen=True)
class FunctionalDataset:
    """``n`` named curves sampled on a shared daily grid.

    ``values`` is stored as a read-only ``(n, T)`` float array.  ``shifts``
    optionally records the integer window start used to cut each curve out
    of a longer one (see :func:`fdepi.motifs.apply_shifts`).
    """

    grid: TimeGrid
    names: tuple
    values: np.ndarray
    shifts: np.ndarray | None = field(default=None)

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be a 2-D (curves x days) array")
        if values.shape[0] != len(names):
            raise ValueError(f"{len(names)} names for {values.shape[0]} curves")
        if values.shape[1] != self.grid.length:
            raise ValueError(
                f"curves have {values.shape[1]} samples but the grid has {self.grid.length} days"
            )
        if len(set(names)) != len(names):
            raise ValueError("curve names must be unique")
        if not np.all(np.isfinite(values)):
            raise ValueError("curves contain missing or non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)
        if self.shifts is not None:
            shifts = np.array(self.shifts, dtype=int)
            if shifts.shape != (len(names),):
                raise ValueError("shifts must hold one integer per curve")
            shifts.flags.writeable = False
            object.__setattr__(self, "shifts", shifts)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def with_values(self, values) -> "FunctionalDataset":
        return FunctionalDataset(self.grid, self.names, values, self.shifts)

    def subset(self, names: Sequence[str]) -> "FunctionalDataset":
        idx = [self.names.index(n) for n in names]
        shifts = None if self.shifts is None else self.shifts[idx]
        return FunctionalDataset(self.grid, tuple(names), self.values[idx], shifts)

    def reorder(self, names: Sequence[str]) -> "FunctionalDataset":
        if sorted(names) != sorted(self.names):
            missing = sorted(set(names) ^ set(self.names))
            raise ValueError(f"region sets differ: {missing}")
        return self.subset(names)

    def curve(self, name: str) -> np.ndarray:
        return self.values[self.names.index(name)]


def trapezoid_weights(length: int, spacing: float = 1.0) -> np.ndarray:
    """Trapezoid-rule weights for ``length`` equally spaced samples."""
    if length < 2:
        raise ValueError("need at least two samples for the trapezoid rule")
    w = np.full(length, spacing, dtype=float)
    w[0] = w[-1] = spacing / 2
    return w


def integrate(samples, grid=None) -> float | np.ndarray:
    """Trapezoidal integral of ``samples`` over the grid span.

    ``grid`` may be a :class:`TimeGrid` (unit spacing), an array of sample
    positions, or None for unit spacing.  A 2-D input integrates each row.
    """
    y = np.asarray(samples, dtype=float)
    if grid is None:
        x = None
        length = y.shape[-1]
    elif isinstance(grid, TimeGrid):
        x = None
        length = grid.length
    else:
        x = np.asarray(grid, dtype=float)
        length = x.size
    if y.shape[-1] != length:
        raise ValueError(f"samples have length {y.shape[-1]} but the grid has {length} points")
    if x is None:
        return y @ trapezoid_weights(length)
    return np.trapezoid(y, x, axis=-1)


class BSplineBasis:
    """Cubic B-spline basis on ``[lo, hi]`` with the given breakpoints.

    Parameters
    ----------
    breakpoints : array_like
        Strictly increasing knot locations, including both ends.
    """

    order = 4

    def __init__(self, breakpoints):
        bp = np.asarray(breakpoints, dtype=float)
        if bp.ndim != 1 or bp.size < 2 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        self.breakpoints = bp
        k = self.order - 1
        self.knots = np.concatenate([np.repeat(bp[0], k), bp, np.repeat(bp[-1], k)])
        self.n_basis = self.knots.size - self.order
        self._spline = BSpline(self.knots, np.eye(self.n_basis), k, extrapolate=False)
        self._penalty = None
        self._gram = None

    @classmethod
    def uniform(cls, lo: float, hi: float, n_basis: int) -> "BSplineBasis":
        """Basis with ``n_basis`` functions and equally spaced knots."""
        if n_basis < 4:
            raise ValueError("a cubic basis needs at least 4 functions")
        return cls(np.linspace(lo, hi, n_basis - 2))

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.breakpoints[0]), float(self.breakpoints[-1])

    def evaluate(self, x, deriv: int = 0) -> np.ndarray:
        """Design matrix of shape ``(len(x), n_basis)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi = self.domain
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            raise ValueError(f"evaluation points outside [{lo}, {hi}]")
        x = np.clip(x, lo, hi)
        spl = self._spline if deriv == 0 else self._spline.derivative(deriv)
        out = spl(x)
        return np.nan_to_num(out, nan=0.0)

    def _gauss_integral(self, deriv: int) -> np.ndarray:
        # 5-point Gauss-Legendre per knot interval: exact through degree 9,
        # products of cubics have degree 6.
        nodes, weights = np.polynomial.legendre.leggauss(5)
        a, b = self.breakpoints[:-1], self.breakpoints[1:]
        half = (b - a) / 2
        x = ((a + b) / 2)[:, None] + half[:, None] * nodes[None, :]
        w = half[:, None] * weights[None, :]
        B = self.evaluate(x.ravel(), deriv)
        return B.T @ (B * w.ravel()[:, None])

    def penalty(self) -> np.ndarray:
        """Matrix of integrated products of second derivatives."""
        if self._penalty is None:
            R = self._gauss_integral(2)
            self._penalty = (R + R.T) / 2
        return self._penalty

    def gram(self) -> np.ndarray:
        """Matrix of integrated products of basis functions."""
        if self._gram is None:
            G = self._gauss_integral(0)
            self._gram = (G + G.T) / 2
        return self._gram


def build_basis(grid: TimeGrid) -> BSplineBasis:
    """Cubic B-spline basis with a knot at every grid day (``T + 2`` functions)."""
    if grid.length < 4:
        raise ValueError("insufficient grid for cubic basis (need at least 4 days)")
    return BSplineBasis(np.arange(grid.length, dtype=float))


def default_lambda_grid() -> np.ndarray:
    return np.logspace(-4, 8, 41)


def _penalty_root(R: np.ndarray) -> np.ndarray:
    evals, evecs = linalg.eigh(R)
    keep = evals > evals.max() * 1e-12
    return np.sqrt(evals[keep])[:, None] * evecs[:, keep].T


def _fit_one_lambda(Phi, root, lam, Y):
    """Coefficients and smoother trace for a single smoothing parameter.

    Solves the stacked least-squares problem ``[Phi; sqrt(lam) L] c = [y; 0]``
    by QR, which stays well conditioned for very large ``lam``.
    """
    T = Phi.shape[0]
    if lam == 0:
        coef, *_ = linalg.lstsq(Phi, Y)
        return coef, float(np.linalg.matrix_rank(Phi))
    M = np.vstack([Phi, np.sqrt(lam) * root])
    Q, Rq = linalg.qr(M, mode="economic")
    Q1 = Q[:T]
    coef = linalg.solve_triangular(Rq, Q1.T @ Y)
    return coef, float(np.sum(Q1 * Q1))


@dataclass(frozen=True)
class SmoothModel:
    """Penalized B-spline fit of every curve in a dataset with one lambda."""

    data: FunctionalDataset
    basis: BSplineBasis
    penalty: np.ndarray
    lam: float
    coefficients: np.ndarray
    df: float
    gcv_per_curve: np.ndarray
    gcv_mean: float

    def evaluate(self, x=None, deriv: int = 0) -> np.ndarray:
        """Fitted curves (rows) at ``x``; defaults to the daily grid."""
        if x is None:
            x = self.data.grid.labels
        return (self.basis.evaluate(x, deriv) @ self.coefficients).T

    def fitted(self) -> np.ndarray:
        return self.evaluate()

    def to_dataset(self) -> FunctionalDataset:
        return self.data.with_values(self.fitted())

    def smoother_matrix(self) -> np.ndarray:
        Phi = self.basis.evaluate(self.data.grid.labels)
        coef, _ = _fit_one_lambda(Phi, _penalty_root(self.penalty), self.lam, np.eye(self.data.T))
        return Phi @ coef


def _gcv(Y, fitted, df):
    T = Y.shape[1]
    rss = np.sum((Y - fitted) ** 2, axis=1)
    denom = (T - df) ** 2
    return T * rss / denom


def smooth(data: FunctionalDataset, lam: float) -> SmoothModel:
    """Smooth every curve with roughness penalty weight ``lam``.

    Each curve's coefficients minimize the residual sum of squares on the
    grid plus ``lam`` times the integrated squared second derivative.
    """
    if not np.isfinite(lam) or lam < 0:
        raise ValueError(f"lambda must be a finite value >= 0, got {lam}")
    basis = build_basis(data.grid)
    Phi = basis.evaluate(data.grid.labels)
    R = basis.penalty()
    Y = data.values.T
    coef, df = _fit_one_lambda(Phi, _penalty_root(R), float(lam), Y)
    fitted = (Phi @ coef).T
    T = data.T
    if T - df <= 1e-8 * T:
        gcv = np.full(data.n, np.inf)
    else:
        gcv = _gcv(data.values, fitted, df)
    return SmoothModel(data, basis, R, float(lam), coef, df, gcv, float(np.mean(gcv)))


def select_lambda(data: FunctionalDataset, lambdas=None) -> tuple[float, SmoothModel]:
    """Pick the lambda minimizing mean GCV across curves.

    Candidates whose effective degrees of freedom reach the number of grid
    points are skipped with a warning.  Ties go to the larger lambda.
    """
    lambdas = default_lambda_grid() if lambdas is None else np.asarray(lambdas, dtype=float).ravel()
    if lambdas.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(lambdas < 0) or not np.all(np.isfinite(lambdas)):
        raise ValueError("lambda candidates must be finite and >= 0")
    best = None
    for lam in sorted(set(lambdas.tolist())):
        model = smooth(data, lam)
        if not np.isfinite(model.gcv_mean):
            warnings.warn(
                f"lambda={lam:g} skipped: effective degrees of freedom {model.df:.6g} "
                f"reach the {data.T} grid points",
                stacklevel=2,
            )
            continue
        # ascending order, so <= hands ties to the larger lambda
        if best is None or model.gcv_mean <= best.gcv_mean:
            best = model
    if best is None:
        raise ValueError("no lambda candidate yields a finite GCV score")
    return best.lam, best


def read_curves_csv(path, start_day: dt.date | None = None) -> FunctionalDataset:
    """Read a curve matrix CSV (``region,d000,d001,...``)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "region":
            raise ValueError(f"{path}: first column must be 'region'")
        names, rows = [], []
        for row in reader:
            if not row:
                continue
            names.append(row[0])
            rows.append([float(v) for v in row[1:]])
    T = len(header) - 1
    grid = TimeGrid(start_day or dt.date(2020, 2, 16), T)
    return FunctionalDataset(grid, tuple(names), np.array(rows, dtype=float).reshape(len(names), T))


def format_float(x: float) -> str:
    return f"{x:.12g}"


def write_curves_csv(data: FunctionalDataset, fh) -> None:
    """Write ``data`` as a curve matrix CSV to an open text handle."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["region"] + [f"d{k:03d}" for k in range(data.T)])
    for name, row in zip(data.names, data.values):
        writer.writerow([name] + [format_float(v) for v in row])
