"""Penalized function-on-function and function-on-scalar regression.

The model for a response curve ``y_i(t)`` is

    y_i(t) = alpha(t) + sum_l int beta_l(s, t) x_il(s) ds + sum_j beta_j(t) z_ij + eps_i(t)

Surfaces ``beta_l`` live in a tensor-product cubic B-spline basis, curves
``beta_j`` in the same univariate basis on the response grid.  Each surface
carries two second-derivative penalties (one per margin), each curve one.
The intercept ``alpha`` is a free (unpenalized) value per day, or per day and
group, and is profiled out by centering.  Integrals use the trapezoid rule
on the daily grid.  Smoothing parameters default to REML.
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy import linalg, optimize, stats

from .fdcore import BSplineBasis, FunctionalDataset, format_float, trapezoid_weights

__all__ = ["FunRegSpec", "FunRegFit", "FitMetrics", "fit", "predict", "r_squared",
           "loocv_r_squared", "partial_r_squared", "effect_sign_bands", "metrics",
           "DEFAULT_N_BASIS"]

DEFAULT_N_BASIS = 15
_RHO_BOUND = 18.0
_BAD = 1e100  # finite stand-in for an infeasible REML evaluation


@dataclass(frozen=True)
class FunRegSpec:
    """Data of one regression model.

    Parameters
    ----------
    response : FunctionalDataset
    functional_predictors : mapping of name -> FunctionalDataset
        Each on the response grid and region set; reordered to the response.
    scalar_covariates : mapping of name -> array of length n
    intercept_mode : {"single", "per-group"}
    groups : array of length n, required for ``"per-group"``
    n_basis : int, optional
        Basis functions per margin; defaults to ``min(15, T)``.
    """

    response: FunctionalDataset
    functional_predictors: Mapping[str, FunctionalDataset] = field(default_factory=dict)
    scalar_covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    intercept_mode: str = "single"
    groups: np.ndarray | None = None
    n_basis: int | None = None

    def __post_init__(self):
        names = self.response.names
        T = self.response.T
        if self.n_basis is None:
            object.__setattr__(self, "n_basis", min(DEFAULT_N_BASIS, T))
        preds = {}
        for key, ds in self.functional_predictors.items():
            if ds.T != T:
                raise ValueError(f"predictor {key!r} has {ds.T} days, response has {T}")
            if set(ds.names) != set(names):
                raise ValueError(f"predictor {key!r} covers different regions than the response")
            preds[key] = ds.reorder(names)
        object.__setattr__(self, "functional_predictors", preds)
        scal = {}
        for key, v in self.scalar_covariates.items():
            v = np.asarray(v, dtype=float)
            if v.shape != (len(names),):
                raise ValueError(f"covariate {key!r} must have one value per region")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"covariate {key!r} has non-finite values")
            scal[key] = v
        object.__setattr__(self, "scalar_covariates", scal)
        dup = set(preds) & set(scal)
        if dup:
            raise ValueError(f"term names used twice: {sorted(dup)}")
        if self.intercept_mode not in ("single", "per-group"):
            raise ValueError(f"intercept_mode must be 'single' or 'per-group', got {self.intercept_mode!r}")
        if self.intercept_mode == "per-group":
            if self.groups is None:
                raise ValueError("per-group intercepts need group labels")
            g = np.asarray(self.groups)
            if g.shape != (len(names),):
                raise ValueError("groups must have one label per region")
            object.__setattr__(self, "groups", g)
        if self.n_basis < 4 or self.n_basis > T:
            raise ValueError(f"n_basis={self.n_basis} must lie in [4, {T}]")

    @property
    def terms(self) -> list:
        return list(self.functional_predictors) + list(self.scalar_covariates)

    def group_labels(self) -> np.ndarray:
        if self.intercept_mode == "single":
            return np.zeros(self.response.n, dtype=int)
        return self.groups

    def without(self, term: str) -> "FunRegSpec":
        if term not in self.terms:
            raise KeyError(f"no term named {term!r}; terms are {self.terms}")
        fp = {k: v for k, v in self.functional_predictors.items() if k != term}
        sc = {k: v for k, v in self.scalar_covariates.items() if k != term}
        return replace(self, functional_predictors=fp, scalar_covariates=sc)

    def subset(self, index) -> "FunRegSpec":
        index = np.asarray(index)
        names = [self.response.names[i] for i in index]
        return replace(
            self,
            response=self.response.subset(names),
            functional_predictors={k: v.subset(names) for k, v in self.functional_predictors.items()},
            scalar_covariates={k: v[index] for k, v in self.scalar_covariates.items()},
            groups=None if self.groups is None else self.groups[index],
        )


class _Design:
    """Basis evaluations, raw design rows and penalty structure of a spec."""

    def __init__(self, spec: FunRegSpec):
        T = spec.response.T
        K = spec.n_basis
        self.T, self.K = T, K
        self.w = trapezoid_weights(T)
        basis = BSplineBasis.uniform(0.0, T - 1.0, K)
        self.C = basis.evaluate(np.arange(T, dtype=float))
        self.G = basis.gram()
        self.Pm = basis.penalty()
        d, U = linalg.eigh(self.Pm, self.G)
        d[d < d.max() * 1e-10] = 0.0
        self.gen_eig = d
        self.quad = self.w[:, None] * self.C  # maps x(s) samples to basis integrals
        self.fun_terms = list(spec.functional_predictors)
        self.scalar_terms = list(spec.scalar_covariates)
        self.scalar_mean = {}
        self.scalar_sd = {}
        for key, v in spec.scalar_covariates.items():
            sd = v.std(ddof=1) if v.size > 1 else 0.0
            if not sd > 0:
                raise ValueError(f"covariate {key!r} is constant; its effect is not identifiable")
            self.scalar_mean[key] = v.mean()
            self.scalar_sd[key] = sd
        # parameter rows of Theta: K per functional term, one per scalar term
        self.rows = {}
        a = 0
        for key in self.fun_terms:
            self.rows[key] = np.arange(a, a + K)
            a += K
        for key in self.scalar_terms:
            self.rows[key] = np.array([a])
            a += 1
        self.P = a

    def raw_rows(self, spec: FunRegSpec) -> np.ndarray:
        n = spec.response.n
        D = np.empty((n, self.P))
        for key in self.fun_terms:
            D[:, self.rows[key]] = np.asarray(spec.functional_predictors[key].values) @ self.quad
        for key in self.scalar_terms:
            D[:, self.rows[key][0]] = (spec.scalar_covariates[key] - self.scalar_mean[key]) / self.scalar_sd[key]
        return D

    def penalties(self):
        """List of (name, term, matrix) over vec(Theta) with index a + P * b."""
        out = []
        P = self.P
        for key in self.fun_terms:
            E = np.zeros((P, P))
            r = self.rows[key]
            Es, Et = E.copy(), E.copy()
            Es[np.ix_(r, r)] = self.Pm
            Et[np.ix_(r, r)] = self.G
            out.append((f"{key}:s", key, np.kron(self.G, Es)))
            out.append((f"{key}:t", key, np.kron(self.Pm, Et)))
        for key in self.scalar_terms:
            E = np.zeros((P, P))
            j = self.rows[key][0]
            E[j, j] = 1.0
            out.append((key, key, np.kron(self.Pm, E)))
        return out

    def log_pdet(self, lams) -> tuple[float, int]:
        """log pseudo-determinant of the total penalty (up to a constant) and its null dimension."""
        d = self.gen_eig
        total, null, i = 0.0, 0, 0
        for _ in self.fun_terms:
            ls, lt = lams[i], lams[i + 1]
            i += 2
            vals = ls * d[:, None] + lt * d[None, :]
            pos = vals > 0
            total += np.log(vals[pos]).sum()
            null += int((~pos).sum())
        for _ in self.scalar_terms:
            pos = d > 0
            total += pos.sum() * np.log(lams[i])
            null += int((~pos).sum())
            i += 1
        return total, null


def _group_means(X, labels):
    out = np.empty_like(X, dtype=float)
    means = {}
    for g in np.unique(labels):
        m = labels == g
        means[g] = X[m].mean(axis=0)
        out[m] = means[g]
    return out, means


@dataclass(frozen=True)
class FunRegFit:
    """A fitted regression.

    Coefficient estimates are in original covariate units.  Surfaces are
    indexed ``[s, t]`` (predictor day, response day).  ``intercepts`` maps
    group label to its intercept curve (a single key ``0`` in single mode).
    """

    spec: FunRegSpec
    lambdas: dict
    theta: np.ndarray
    intercepts: dict
    surfaces: dict
    surface_se: dict
    curves: dict
    curve_se: dict
    fitted: np.ndarray
    residuals: np.ndarray
    edf: float
    sigma2: float
    r2: float
    reml_score: float
    _design: _Design = field(repr=False, compare=False)
    _ybar: dict = field(repr=False, compare=False)
    _dbar: dict = field(repr=False, compare=False)

    @property
    def intercept(self) -> np.ndarray:
        """Intercept curve; the first group's in per-group mode."""
        return next(iter(self.intercepts.values()))

    def write_surface_csv(self, term: str, fh) -> None:
        est, se = self.surfaces[term], self.surface_se[term]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "t", "estimate", "se"])
        for s in range(est.shape[0]):
            for t in range(est.shape[1]):
                w.writerow([s, t, format_float(est[s, t]), format_float(se[s, t])])

    def write_curve_csv(self, term: str, fh, level: float = 0.95) -> None:
        est, se = self.curves[term], self.curve_se[term]
        sign = effect_sign_bands(self, term, level)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "estimate", "se", "sign"])
        for t in range(est.size):
            w.writerow([t, format_float(est[t]), format_float(se[t]), int(sign[t])])


def _ss(Y, w):
    return float(np.sum((Y * Y) @ w))


def _r2(Y, fitted, w):
    ybar = Y.mean(axis=0)
    ss_reg = _ss(fitted - ybar, w)
    ss_res = _ss(Y - fitted, w)
    denom = ss_reg + ss_res
    return ss_reg / denom if denom > 0 else 1.0


class _Problem:
    """Centered normal equations and REML criterion for one spec."""

    def __init__(self, spec: FunRegSpec):
        self.spec = spec
        self.des = des = _Design(spec)
        Y = np.asarray(spec.response.values, dtype=float)
        labels = spec.group_labels()
        self.n_groups = len(np.unique(labels))
        n = Y.shape[0]
        if n <= len(spec.terms) + self.n_groups:
            raise ValueError(f"{n} curves cannot support {len(spec.terms)} terms and {self.n_groups} intercepts")
        D = des.raw_rows(spec)
        Ybar_rows, self.ybar = _group_means(Y, labels)
        Dbar_rows, self.dbar = _group_means(D, labels)
        self.Y, self.Yc, self.Dc = Y, Y - Ybar_rows, D - Dbar_rows
        self.Ybar_rows = Ybar_rows
        W = des.w
        G_w = des.C.T @ (W[:, None] * des.C)
        self.XtWX = np.kron(G_w, self.Dc.T @ self.Dc)
        self.XtWy = (self.Dc.T @ (self.Yc * W) @ des.C).ravel(order="F")
        self.yWy = _ss(self.Yc, W)
        self.pen = des.penalties()
        self.N = n * des.T - self.n_groups * des.T
        # scale of each penalty relative to the data, for a sensible search origin
        self.scale = np.array([
            max(np.trace(self.XtWX), 1e-300) / max(np.trace(S), 1e-300) for _, _, S in self.pen
        ])

    def _system(self, lams):
        S = np.zeros_like(self.XtWX)
        for lam, (_, _, Sk) in zip(lams, self.pen):
            S += lam * Sk
        return self.XtWX + S, S

    def _factor(self, A):
        try:
            return linalg.cho_factor(A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            return None

    def _diagnose(self, lams):
        A, _ = self._system(lams)
        K = self.des.K
        for term in self.spec.terms:
            rows = self.des.rows[term]
            idx = (rows[:, None] + self.des.P * np.arange(K)[None, :]).ravel()
            if self._factor(A[np.ix_(idx, idx)]) is None:
                return term
        return None

    def solve(self, lams):
        A, S = self._system(lams)
        cf = self._factor(A)
        if cf is None:
            term = self._diagnose(lams)
            where = f" (term {term!r})" if term else ""
            raise np.linalg.LinAlgError(f"rank-deficient penalized design{where}")
        theta = linalg.cho_solve(cf, self.XtWy, check_finite=False)
        rss = self.yWy - 2 * theta @ self.XtWy + theta @ self.XtWX @ theta
        pen = theta @ S @ theta
        logdet = 2 * np.log(np.diag(cf[0])).sum()
        return theta, cf, max(rss, 0.0), pen, logdet

    def reml(self, rho):
        lams = self.scale * np.exp(rho)
        try:
            _, _, rss, pen, logdet = self.solve(lams)
        except np.linalg.LinAlgError:
            return _BAD
        lpd, null = self.des.log_pdet(lams)
        dof = self.N - null
        if dof <= 0 or rss + pen <= 0:
            return _BAD
        return dof * np.log(rss + pen) + logdet - lpd

    def select(self):
        m = len(self.pen)
        if m == 0:
            return np.zeros(0), float("nan")
        starts = [np.full(m, c) for c in (-6.0, -3.0, 0.0, 3.0, 6.0)]
        vals = [self.reml(r) for r in starts]
        x0 = starts[int(np.argmin(vals))]
        res = optimize.minimize(self.reml, x0, method="L-BFGS-B",
                                bounds=[(-_RHO_BOUND, _RHO_BOUND)] * m,
                                options={"maxiter": 200})
        rho = res.x if res.fun <= min(vals) else x0
        return self.scale * np.exp(rho), float(min(res.fun, min(vals)))


def _lambda_vector(problem: _Problem, lambdas):
    names = [name for name, _, _ in problem.pen]
    if np.isscalar(lambdas):
        lam = float(lambdas)
        if lam < 0:
            raise ValueError("smoothing parameters must be >= 0")
        return np.full(len(names), lam)
    out = []
    for name, term, _ in problem.pen:
        if name in lambdas:
            v = lambdas[name]
        elif term in lambdas:
            v = lambdas[term]
            if isinstance(v, (tuple, list)):
                v = v[0] if name.endswith(":s") else v[1]
        else:
            raise ValueError(f"no smoothing parameter given for {name!r}")
        if v < 0:
            raise ValueError(f"smoothing parameter for {name!r} must be >= 0")
        out.append(float(v))
    return np.array(out)


def fit(spec: FunRegSpec, lambdas=None) -> FunRegFit:
    """Fit the penalized regression.

    Parameters
    ----------
    spec : FunRegSpec
    lambdas : None, float or mapping
        ``None`` selects all smoothing parameters by REML.  A float fixes every
        penalty to that value; a mapping gives values per penalty name
        (``"<term>:s"`` / ``"<term>:t"`` for surfaces, ``"<term>"`` for curves)
        or per term (a ``(lambda_s, lambda_t)`` pair for surfaces).
    """
    prob = _Problem(spec)
    if lambdas is None:
        lams, score = prob.select()
    else:
        lams, score = _lambda_vector(prob, lambdas), float("nan")
    return _assemble(prob, lams, score)


def _assemble(prob: _Problem, lams, score) -> FunRegFit:
    des = prob.des
    K, P, T = des.K, des.P, des.T
    theta, cf, rss, pen, _ = prob.solve(lams)
    Theta = theta.reshape((P, K), order="F")
    fitted_c = prob.Dc @ Theta @ des.C.T
    fitted = prob.Ybar_rows + fitted_c
    residuals = prob.Y - fitted
    Ainv = linalg.cho_solve(cf, np.eye(theta.size), check_finite=False)
    edf = float(np.sum(Ainv * prob.XtWX))
    dof = prob.N - edf
    sigma2 = rss / dof if dof > 0 else float("nan")
    V = sigma2 * Ainv
    surfaces, surface_se, curves, curve_se = {}, {}, {}, {}
    M = np.kron(des.C, des.C) if des.fun_terms else None
    for key in des.fun_terms:
        r = des.rows[key]
        Th = Theta[r]  # (K_s, K_t)
        surfaces[key] = des.C @ Th @ des.C.T
        idx = (r[:, None] + P * np.arange(K)[None, :]).ravel(order="F")
        Vb = V[np.ix_(idx, idx)]
        # idx runs over (a, b) with a fastest, matching row t * T + s of kron(C, C)
        var = np.einsum("ij,jk,ik->i", M, Vb, M)
        surface_se[key] = np.sqrt(np.maximum(var, 0)).reshape((T, T)).T
    for key in des.scalar_terms:
        j = des.rows[key][0]
        sd = des.scalar_sd[key]
        curves[key] = des.C @ Theta[j] / sd
        idx = j + P * np.arange(K)
        Vb = V[np.ix_(idx, idx)]
        curve_se[key] = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", des.C, Vb, des.C), 0)) / sd
    intercepts = {g: prob.ybar[g] - prob.dbar[g] @ Theta @ des.C.T for g in prob.ybar}
    lam_map = {name: float(l) for (name, _, _), l in zip(prob.pen, lams)}
    return FunRegFit(prob.spec, lam_map, Theta, intercepts, surfaces, surface_se, curves, curve_se,
                     fitted, residuals, edf, sigma2, _r2(prob.Y, fitted, des.w), score,
                     des, prob.ybar, prob.dbar)


def predict(result: FunRegFit, spec: FunRegSpec) -> np.ndarray:
    """Predicted response curves for the regions of ``spec``.

    ``spec`` must have the terms of the fitted model; its response values
    are ignored.  In per-group mode each region uses its group's intercept.
    """
    des = result._design
    if spec.terms != result.spec.terms:
        raise ValueError(f"terms {spec.terms} differ from the fitted model's {result.spec.terms}")
    D = des.raw_rows(spec)
    labels = spec.group_labels()
    out = np.empty((D.shape[0], des.T))
    for i, g in enumerate(labels):
        if g not in result._ybar:
            raise ValueError(f"group {g!r} was not present when fitting")
        out[i] = result._ybar[g] + (D[i] - result._dbar[g]) @ result.theta @ des.C.T
    return out


def r_squared(result: FunRegFit) -> float:
    """``SS_reg / (SS_reg + SS_res)`` with integrated sums of squares."""
    return result.r2


def _map(fn, items, n_jobs):
    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def loocv_r_squared(spec: FunRegSpec, lambdas=None, n_jobs: int = 1) -> float:
    """Leave-one-out R^2, ``1 - SS_pred / SS_tot``.

    Every held-out curve is predicted by a model fitted without it (smoothing
    parameters re-selected unless fixed by ``lambdas``).
    """
    n = spec.response.n
    if n < 3:
        raise ValueError("leave-one-out needs at least 3 curves")
    Y = np.asarray(spec.response.values, dtype=float)
    w = trapezoid_weights(spec.response.T)

    def one(i):
        keep = np.delete(np.arange(n), i)
        res = fit(spec.subset(keep), lambdas)
        return predict(res, spec.subset([i]))[0]

    pred = np.array(_map(one, range(n), n_jobs))
    ss_pred = _ss(Y - pred, w)
    ss_tot = _ss(Y - Y.mean(axis=0), w)
    return 1.0 - ss_pred / ss_tot


def partial_r_squared(spec: FunRegSpec, term: str, lambdas=None, full: FunRegFit | None = None) -> float:
    """``(R^2 - R^2_red) / (1 - R^2_red)`` against the model without ``term``."""
    full = full if full is not None else fit(spec, lambdas)
    reduced_spec = spec.without(term)
    if lambdas is not None and not np.isscalar(lambdas):
        lambdas = {k: v for k, v in lambdas.items() if k.split(":")[0] != term}
    if reduced_spec.terms:
        r2_red = fit(reduced_spec, lambdas).r2
    else:
        r2_red = 0.0  # intercept only: fitted values are the group means
        if spec.intercept_mode == "per-group":
            prob = _Problem(reduced_spec)
            r2_red = _r2(prob.Y, prob.Ybar_rows, prob.des.w)
    if r2_red >= 1.0 - 1e-12:
        raise ValueError(f"reduced model without {term!r} fits perfectly; partial R^2 undefined")
    return (full.r2 - r2_red) / (1.0 - r2_red)


def effect_sign_bands(result: FunRegFit, term: str, level: float = 0.95) -> np.ndarray:
    """Per-day sign of a scalar covariate's effect curve.

    Returns +1 where the pointwise ``level`` band lies entirely above zero, -1
    where it lies entirely below, and 0 where it contains zero.
    """
    if term not in result.curves:
        raise KeyError(f"{term!r} is not a scalar-covariate term of this fit")
    z = stats.norm.ppf(0.5 + level / 2)
    est, se = result.curves[term], result.curve_se[term]
    lo, hi = est - z * se, est + z * se
    return np.where(lo > 0, 1, np.where(hi < 0, -1, 0))


@dataclass(frozen=True)
class FitMetrics:
    r2: float
    loocv_r2: float
    partial_r2: dict


def metrics(spec: FunRegSpec, lambdas=None, n_jobs: int = 1, result: FunRegFit | None = None) -> FitMetrics:
    """In-sample, leave-one-out and partial R^2 of every term."""
    result = result if result is not None else fit(spec, lambdas)
    partial = {}
    for term in spec.terms:
        try:
            partial[term] = partial_r_squared(spec, term, lambdas, full=result)
        except ValueError as exc:
            warnings.warn(str(exc), RuntimeWarning, stacklevel=2)
            partial[term] = float("nan")
    return FitMetrics(result.r2, loocv_r_squared(spec, lambdas, n_jobs), partial)
