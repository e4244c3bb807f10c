"""Probabilistic K-means with local alignment (motif discovery in curves).

Each of ``K`` motifs is a curve of ``c`` days.  Every curve ``i`` carries a
membership probability ``p[i, k]`` and a window start ``s[i, k]`` for every
motif; the fit minimizes

    J = sum_i sum_k p[i, k]**2 * d(x_i[s[i, k] : s[i, k] + c], v_k)

where ``d`` is the mean squared L2 distance over the window.  The three
blocks (motifs, shifts, memberships) are updated in turn, each by its exact
minimizer with the other two held fixed, so ``J`` never increases.  When
the block updates stall, a joint translation of one motif's windows is tried
and kept only if it lowers ``J``.
"""

from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .fdcore import FunctionalDataset, TimeGrid, format_float, trapezoid_weights

__all__ = ["MotifModel", "l2_distance", "prob_kma", "apply_shifts", "kma_objective"]


def _window_weights(c: int) -> np.ndarray:
    # normalized so that a constant unit difference has distance exactly 1
    if c == 1:
        return np.ones(1)
    return trapezoid_weights(c) / (c - 1)


def l2_distance(portion, motif) -> float:
    """Mean squared L2 distance between two equally long curve pieces.

    The squared difference is integrated with the trapezoid rule and divided
    by the length of the integration domain.
    """
    x = np.asarray(portion, dtype=float)
    v = np.asarray(motif, dtype=float)
    if x.shape != v.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {v.shape}")
    return float(_window_weights(x.size) @ (x - v) ** 2)


@dataclass(frozen=True)
class MotifModel:
    """Result of :func:`prob_kma`.

    Attributes
    ----------
    motifs : ndarray, shape (K, c)
    memberships : ndarray, shape (n, K)
        Rows sum to one.
    shifts : ndarray of int, shape (n, K)
        Window start of curve ``i`` for motif ``k``.
    distances : ndarray, shape (n, K)
        Distances at the final shifts.
    objective_trace : ndarray
        ``J`` after every iteration of the winning restart.
    hard_labels : ndarray of int, shape (n,)
        ``argmax_k p[i, k]``, lowest index on ties.
    """

    names: tuple
    grid: TimeGrid
    motif_length: int
    motifs: np.ndarray
    memberships: np.ndarray
    shifts: np.ndarray
    distances: np.ndarray
    objective_trace: np.ndarray
    hard_labels: np.ndarray
    restart: int
    use_derivative: bool = False

    @property
    def K(self) -> int:
        return self.motifs.shape[0]

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])

    def relabeled(self, order) -> "MotifModel":
        """Same model with cluster ``order[k]`` renamed to cluster ``k``."""
        order = np.asarray(order, dtype=int)
        if sorted(order.tolist()) != list(range(self.K)):
            raise ValueError(f"order must be a permutation of 0..{self.K - 1}")
        inverse = np.argsort(order)
        return dataclasses.replace(
            self, motifs=self.motifs[order], memberships=self.memberships[:, order],
            shifts=self.shifts[:, order], distances=self.distances[:, order],
            hard_labels=inverse[self.hard_labels])

    def assigned_shifts(self) -> np.ndarray:
        """Shift of every curve for its hard-assigned motif."""
        return self.shifts[np.arange(len(self.names)), self.hard_labels]

    def write_csvs(self, out) -> dict:
        """Write memberships/shifts/motifs/objective_trace CSVs into ``out``.

        ``out`` is a callable ``out(filename) -> context manager yielding a
        text handle`` (see :func:`fdepi.cli.atomic_writer`).
        """
        K = self.K
        with out("memberships.csv") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["region"] + [f"p_{k + 1}" for k in range(K)] + ["hard_label"])
            for name, p, lab in zip(self.names, self.memberships, self.hard_labels):
                w.writerow([name] + [format_float(v) for v in p] + [int(lab) + 1])
        with out("shifts.csv") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["region"] + [f"s_{k + 1}" for k in range(K)] + ["assigned_shift"])
            for name, s, a in zip(self.names, self.shifts, self.assigned_shifts()):
                w.writerow([name] + [int(v) for v in s] + [int(a)])
        with out("motifs.csv") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["day"] + [f"v_{k + 1}" for k in range(K)])
            for day in range(self.motif_length):
                w.writerow([day] + [format_float(v) for v in self.motifs[:, day]])
        with out("objective_trace.csv") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "J"])
            for it, J in enumerate(self.objective_trace, 1):
                w.writerow([it, format_float(J)])


def _windows(X: np.ndarray, c: int) -> np.ndarray:
    """All length-``c`` windows: shape (n, n_shifts, c)."""
    return sliding_window_view(X, c, axis=1)


def _all_distances(W: np.ndarray, V: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Distances of every window to every motif: shape (n, K, n_shifts)."""
    diff = W[:, None, :, :] - V[None, :, None, :]
    return np.einsum("nksc,c->nks", diff * diff, w)


def _memberships(D: np.ndarray) -> np.ndarray:
    """Exact minimizer of sum_k p_k**2 D_k subject to sum_k p_k = 1."""
    zero = D <= 0
    if not zero.any():
        inv = 1.0 / D
        return inv / inv.sum(axis=1, keepdims=True)
    P = np.empty_like(D)
    exact = zero.any(axis=1)
    if np.any(~exact):
        inv = 1.0 / D[~exact]
        P[~exact] = inv / inv.sum(axis=1, keepdims=True)
    if np.any(exact):
        Z = zero[exact].astype(float)
        P[exact] = Z / Z.sum(axis=1, keepdims=True)
    return P


def _motifs(W: np.ndarray, P: np.ndarray, S: np.ndarray, K: int) -> np.ndarray:
    n = W.shape[0]
    V = np.empty((K, W.shape[2]))
    for k in range(K):
        wts = P[:, k] ** 2
        portions = W[np.arange(n), S[:, k]]
        total = wts.sum()
        if total <= 0:
            V[k] = portions.mean(axis=0)
        else:
            V[k] = wts @ portions / total
    return V


def kma_objective(D: np.ndarray, P: np.ndarray) -> float:
    return float(np.sum(P * P * D))


def _step(W, K, w, P, S):
    V = _motifs(W, P, S, K)
    Dall = _all_distances(W, V, w)
    S = np.argmin(Dall, axis=2)
    D = np.take_along_axis(Dall, S[:, :, None], axis=2)[:, :, 0]
    P = _memberships(D)
    return V, P, S, D, kma_objective(D, P)


def _screen(W, K, w, P, Sb):
    """Approximate objective after one update, for a batch of shift states.

    Motifs are weighted sums of windows, so ``|x - v|^2 = |x|^2 - 2 x.v + |v|^2``
    follows from the Gram matrix of the windows; only used to rank candidates.
    """
    n, n_shifts, c = W.shape
    B = Sb.shape[0]
    wts = P * P
    total = wts.sum(axis=0)
    # weighted window sums as one-hot selections times the stacked windows
    flat = (np.arange(n)[None, :, None] * n_shifts + Sb).transpose(0, 2, 1).reshape(B * K, n)
    onehot = np.zeros(B * K * n * n_shifts)
    onehot[(np.arange(B * K) * (n * n_shifts))[:, None] + flat] = np.tile(
        wts.T / np.where(total > 0, total, 1.0)[:, None], (B, 1))
    onehot = onehot.reshape(B * K, n * n_shifts)
    Wf = np.ascontiguousarray(W).reshape(n * n_shifts, c)
    G = (Wf * w) @ Wf.T  # weighted inner products of all windows
    cross = onehot @ G  # <motif, window> for every candidate motif
    Dall = cross * -2.0
    Dall += np.diag(G)[None, :]
    Dall += np.einsum("ij,ij->i", cross, onehot)[:, None]
    Dv = Dall.reshape(B, K, n, n_shifts)
    D = Dv[..., 0].copy()
    for s in range(1, n_shifts):
        np.minimum(D, Dv[..., s], out=D)
    D = D.transpose(0, 2, 1)
    np.maximum(D, 0.0, out=D)
    P1 = _memberships(D.reshape(B * n, K)).reshape(B, n, K)
    return np.sum(P1 * P1 * D, axis=(1, 2))


def _translate(W, K, w, P, S, J):
    """Best relocation of one motif's windows, if it lowers ``J``.

    Alternating updates cannot move all windows of a cluster at once, so a
    fit can settle on a motif that is offset from the shared shape by a few
    days.  Candidates shift every window of one motif by ``delta`` (clipped
    to the admissible range), or move a single window anywhere; the best
    one gets a full update.
    """
    n, n_shifts = W.shape[:2]
    cands = []
    for k in range(K):
        deltas = np.arange(-(n_shifts - 1), n_shifts)
        moved = np.repeat(S[None], deltas.size, axis=0)
        moved[:, :, k] = np.clip(S[None, :, k] + deltas[:, None], 0, n_shifts - 1)
        cands.append(moved)
        # single windows too: the motif then moves toward the relocated window
        single = np.repeat(S[None], n * n_shifts, axis=0).reshape(n, n_shifts, n, K)
        single[np.arange(n), :, np.arange(n), k] = np.arange(n_shifts)
        cands.append(single.reshape(n * n_shifts, n, K))
    cands = np.concatenate(cands)
    cands = cands[np.any(cands != S[None], axis=(1, 2))]
    if not cands.size:
        return None
    scores = _screen(W, K, w, P, cands)
    res = _step(W, K, w, P, cands[int(np.argmin(scores))])
    if not res[4] < J * (1 - 1e-12):
        return None
    return res


def _run(W, K, w, P, S, max_iter, tol):
    trace = []
    V = D = None
    while len(trace) < max_iter:
        V, P, S, D, J = _step(W, K, w, P, S)
        trace.append(J)
        if len(trace) > 1:
            prev = trace[-2]
            if prev <= 0 or abs(prev - J) / prev < tol:
                moved = _translate(W, K, w, P, S, J) if len(trace) < max_iter else None
                if moved is None:
                    break
                V, P, S, D, J = moved
                trace.append(J)
    return V, P, S, D, np.array(trace)


def _initial_state(rng: np.random.Generator, n: int, K: int, n_shifts: int):
    P = rng.dirichlet(np.ones(K), size=n)
    S = rng.integers(0, n_shifts, size=(n, K))
    return P, S


def prob_kma(data: FunctionalDataset, K: int = 2, c: int = 65, restarts: int = 20, seed: int = 0,
             max_iter: int = 200, tol: float = 1e-6, use_derivative: bool = False,
             n_jobs: int = 1) -> MotifModel:
    """Fit ``K`` motifs of length ``c`` with soft memberships and integer shifts.

    Parameters
    ----------
    data : FunctionalDataset
        Curves to cluster (typically smoothed mortality curves).
    K : int
        Number of motifs.
    c : int
        Motif length in days; shifts range over ``0 .. T - c``.
    restarts : int
        Independent random initializations; the lowest final objective wins
        (ties go to the lowest restart index).
    seed : int
        Master seed.  Restart ``r`` draws from the ``r``-th child of
        ``numpy.random.SeedSequence(seed)``, so results do not depend on
        ``n_jobs``.
    use_derivative : bool
        Measure distances between first differences of the curves instead of
        their levels.
    """
    X = np.asarray(data.values, dtype=float)
    n, T = X.shape
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > n:
        raise ValueError(f"K={K} exceeds the number of curves ({n})")
    if c > T or c < 2:
        raise ValueError(f"motif length {c} must lie in [2, {T}]")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if use_derivative:
        X = np.diff(X, axis=1)
        c_eff = c - 1
    else:
        c_eff = c
    W = _windows(X, c_eff)
    w = _window_weights(c_eff)
    children = np.random.SeedSequence(seed).spawn(restarts)

    def one(r):
        rng = np.random.default_rng(children[r])
        P0, S0 = _initial_state(rng, n, K, W.shape[1])
        return _run(W, K, w, P0, S0, max_iter, tol)

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, range(restarts)))
    else:
        results = [one(r) for r in range(restarts)]
    finals = [res[4][-1] for res in results]
    best = int(np.argmin(finals))
    V, P, S, D, trace = results[best]
    if use_derivative:
        # report motifs on the level scale: weighted mean of the aligned level windows
        V = _motifs(_windows(np.asarray(data.values, dtype=float), c), P, S, K)
    labels = np.argmax(P, axis=1)
    return MotifModel(data.names, data.grid, c, V, P, S, D, trace, labels, best, use_derivative)


def apply_shifts(model: MotifModel, companion: FunctionalDataset) -> FunctionalDataset:
    """Cut every companion curve to the motif window of its hard-assigned cluster."""
    if set(companion.names) != set(model.names):
        diff = sorted(set(companion.names) ^ set(model.names))
        raise ValueError(f"region mismatch between model and companion data: {diff}")
    if companion.grid.length != model.grid.length:
        raise ValueError("companion data must share the grid the motifs were fitted on")
    companion = companion.reorder(model.names)
    c = model.motif_length
    shifts = model.assigned_shifts()
    out = np.stack([row[s : s + c] for row, s in zip(companion.values, shifts)])
    grid = TimeGrid(companion.grid.start_day, c)
    return FunctionalDataset(grid, model.names, out, shifts)
