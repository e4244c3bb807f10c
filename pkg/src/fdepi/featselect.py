"""Covariate selection for function-on-scalar regression.

The response curves are summarized by their functional principal component
scores; covariates are then selected with a group elastic net in which each
covariate's coefficients across all score responses form one group.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .fdcore import FunctionalDataset, format_float, trapezoid_weights

__all__ = ["FpcExpansion", "fpc", "standardize_design", "group_enet_objective", "kkt_violation",
           "solve_bcd", "solve_proximal", "lambda_max", "SelectionPath", "select"]


@dataclass(frozen=True)
class FpcExpansion:
    """Functional principal components of a set of curves.

    Eigenfunctions are orthonormal under the trapezoid inner product on the
    grid.  All ``T`` eigenpairs are kept; ``n_components`` is the number
    needed to reach the requested share of variance.
    """

    mean: np.ndarray
    eigenfunctions: np.ndarray  # (T, T), column k is phi_k
    eigenvalues: np.ndarray
    scores_all: np.ndarray  # (n, T)
    n_components: int
    weights: np.ndarray

    @property
    def variance_explained(self) -> np.ndarray:
        lam = np.clip(self.eigenvalues, 0, None)
        return np.cumsum(lam) / lam.sum()

    @property
    def scores(self) -> np.ndarray:
        return self.scores_all[:, : self.n_components]

    def reconstruct(self, k: int | None = None) -> np.ndarray:
        k = self.n_components if k is None else k
        return self.mean + self.scores_all[:, :k] @ self.eigenfunctions[:, :k].T


def fpc(data, variance_target: float = 0.95) -> FpcExpansion:
    """Quadrature-weighted principal components of curves on a daily grid.

    Solves ``W^(1/2) C W^(1/2) u = lambda u`` with ``C`` the sample covariance
    and ``W`` the trapezoid weights, and returns ``phi = W^(-1/2) u``.  Each
    eigenfunction's sign makes its largest-magnitude value positive.
    """
    if not 0 < variance_target <= 1:
        raise ValueError(f"variance_target must lie in (0, 1], got {variance_target}")
    Y = np.asarray(data.values if isinstance(data, FunctionalDataset) else data, dtype=float)
    n, T = Y.shape
    if n < 3:
        raise ValueError(f"FPC needs at least 3 curves, got {n}")
    w = trapezoid_weights(T)
    mean = Y.mean(axis=0)
    Yc = Y - mean
    sw = np.sqrt(w)
    C = Yc.T @ Yc / (n - 1)
    lam, U = linalg.eigh(sw[:, None] * C * sw[None, :])
    lam, U = lam[::-1], U[:, ::-1]
    phi = U / sw[:, None]
    for k in range(T):
        if phi[np.argmax(np.abs(phi[:, k])), k] < 0:
            phi[:, k] = -phi[:, k]
    scores = (Yc * w) @ phi
    lam_pos = np.clip(lam, 0, None)
    cum = np.cumsum(lam_pos) / lam_pos.sum() if lam_pos.sum() > 0 else np.ones(T)
    M = int(np.searchsorted(cum, variance_target - 1e-12) + 1)
    return FpcExpansion(mean, phi, lam, scores, min(M, T), w)


def standardize_design(X) -> np.ndarray:
    """Center columns and scale to unit population standard deviation."""
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    if np.any(~(sd > 0)):
        raise ValueError(f"column {int(np.flatnonzero(~(sd > 0))[0])} has zero variance")
    return (X - X.mean(axis=0)) / sd


def _check_design(X):
    sd = X.std(axis=0)
    bad = np.flatnonzero(np.abs(sd - 1) > 1e-6)
    if bad.size:
        raise ValueError(f"covariates must be standardized; column {int(bad[0])} has sd {sd[bad[0]]:.6g}")
    mu = X.mean(axis=0)
    bad = np.flatnonzero(np.abs(mu) > 1e-6)
    if bad.size:
        raise ValueError(f"covariates must be centered; column {int(bad[0])} has mean {mu[bad[0]]:.6g}")


def group_enet_objective(Xi, X, B, lam, alpha) -> float:
    n = X.shape[0]
    R = Xi - X @ B
    norms = np.linalg.norm(B, axis=1)
    return float(0.5 / n * np.sum(R * R) + lam * (alpha * norms.sum() + 0.5 * (1 - alpha) * np.sum(norms**2)))


def kkt_violation(Xi, X, B, lam, alpha) -> float:
    """Largest violation of the optimality conditions over all groups."""
    n = X.shape[0]
    G = X.T @ (Xi - X @ B) / n  # negative gradient of the loss, per group row
    nb = np.linalg.norm(B, axis=1)
    active = nb > 0
    safe = np.where(active, nb, 1.0)[:, None]
    act = np.linalg.norm(G - lam * alpha * B / safe - lam * (1 - alpha) * B, axis=1)
    inact = np.maximum(0.0, np.linalg.norm(G, axis=1) - lam * alpha)
    v = np.where(active, act, inact)
    return float(v.max()) if v.size else 0.0


def _group_prox(z, tau, shrink):
    nz = np.linalg.norm(z)
    if nz <= tau:
        return np.zeros_like(z)
    return (1 - tau / nz) * z / shrink


def solve_bcd(Xi, X, lam, alpha, B0=None, tol=1e-8, max_sweeps=100_000):
    """Block coordinate descent; each block update is exact (``X_j'X_j / n = 1``)."""
    n, p = X.shape
    B = np.zeros((p, Xi.shape[1])) if B0 is None else B0.copy()
    R = Xi - X @ B
    for sweep in range(max_sweeps):
        for j in range(p):
            z = B[j] + X[:, j] @ R / n
            new = _group_prox(z, lam * alpha, 1 + lam * (1 - alpha))
            delta = new - B[j]
            if np.any(delta):
                R -= np.outer(X[:, j], delta)
                B[j] = new
        if kkt_violation(Xi, X, B, lam, alpha) <= tol:
            return B
    warnings.warn(f"coordinate descent stopped after {max_sweeps} sweeps at lambda={lam:.3g}",
                  RuntimeWarning, stacklevel=2)
    return B


def solve_proximal(Xi, X, lam, alpha, tol=1e-10, max_iter=1_000_000):
    """Accelerated proximal gradient; slow reference solver."""
    n, p = X.shape
    L = np.linalg.norm(X, 2) ** 2 / n
    t = 1.0 / L
    B = np.zeros((p, Xi.shape[1]))
    Yk, theta = B.copy(), 1.0
    for it in range(max_iter):
        grad = -X.T @ (Xi - X @ Yk) / n
        V = Yk - t * grad
        new = np.vstack([_group_prox(V[j], t * lam * alpha, 1 + t * lam * (1 - alpha)) for j in range(p)])
        theta_new = (1 + np.sqrt(1 + 4 * theta**2)) / 2
        Yk = new + (theta - 1) / theta_new * (new - B)
        step = np.max(np.abs(new - B))
        B, theta = new, theta_new
        if step < tol and kkt_violation(Xi, X, B, lam, alpha) <= tol:
            break
    return B


def lambda_max(Xi, X, alpha) -> float:
    n = X.shape[0]
    return float(np.max(np.linalg.norm(X.T @ Xi, axis=1)) / (n * alpha))


@dataclass(frozen=True)
class SelectionPath:
    """Group elastic-net path over a decreasing sequence of lambdas."""

    names: tuple
    lambdas: np.ndarray
    coefficients: np.ndarray  # (n_lambda, p, M)
    alpha: float

    @property
    def group_norms(self) -> np.ndarray:
        return np.linalg.norm(self.coefficients, axis=2)

    @property
    def active_sets(self) -> list:
        return [tuple(self.names[j] for j in np.flatnonzero(row > 0)) for row in self.group_norms]

    def entry_index(self) -> dict:
        out = {}
        norms = self.group_norms
        for j, name in enumerate(self.names):
            hit = np.flatnonzero(norms[:, j] > 0)
            if hit.size:
                out[name] = int(hit[0])
        return out

    @property
    def entry_order(self) -> list:
        """Covariates by first activation; simultaneous entries by group norm there."""
        idx = self.entry_index()
        norms = self.group_norms
        j_of = {name: j for j, name in enumerate(self.names)}
        return sorted(idx, key=lambda nm: (idx[nm], -norms[idx[nm], j_of[nm]], nm))

    def top(self, k: int) -> list:
        return self.entry_order[:k]

    def write_path_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda_index", "lambda", "covariate", "group_norm"])
        norms = self.group_norms
        for i, lam in enumerate(self.lambdas):
            for j, name in enumerate(self.names):
                w.writerow([i + 1, format_float(lam), name, format_float(norms[i, j])])

    def write_top_csv(self, fh, k: int = 5) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "covariate", "entry_lambda"])
        idx = self.entry_index()
        for r, name in enumerate(self.top(k), 1):
            w.writerow([r, name, format_float(self.lambdas[idx[name]])])


def select(scores, X, names=None, alpha: float = 0.5, lambdas=None, n_lambda: int = 100,
           ratio: float = 1e-3, tol: float = 1e-8) -> SelectionPath:
    """Warm-started group elastic-net path.

    Minimizes ``(1/2n) ||Xi - X B||_F^2 + lam * (alpha * sum_j ||B_j|| +
    (1 - alpha)/2 * sum_j ||B_j||^2)`` at each lambda, where ``B_j`` is row
    ``j`` of ``B``.  ``X`` must have centered columns with unit population
    standard deviation.  The default path has ``n_lambda`` log-spaced values
    from ``lambda_max`` down to ``ratio * lambda_max``.
    """
    Xi = np.atleast_2d(np.asarray(scores, dtype=float))
    if Xi.shape[0] == 1 and np.ndim(scores) == 1:
        Xi = Xi.T
    X = np.asarray(X, dtype=float)
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if X.shape[0] != Xi.shape[0]:
        raise ValueError("scores and covariates have different numbers of rows")
    _check_design(X)
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    if lambdas is None:
        lmax = lambda_max(Xi, X, alpha)
        lambdas = lmax * np.logspace(0, np.log10(ratio), n_lambda)
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(np.diff(lambdas) > 0):
        raise ValueError("lambda path must be decreasing")
    coefs = np.empty((lambdas.size, X.shape[1], Xi.shape[1]))
    B = None
    for i, lam in enumerate(lambdas):
        B = solve_bcd(Xi, X, lam, alpha, B0=B, tol=tol)
        coefs[i] = B
    return SelectionPath(names, lambdas, coefs, alpha)
