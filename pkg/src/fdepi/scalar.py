"""Multivariate tools for the region x covariate matrix.

Hierarchical clustering with correlation distance, principal components,
variance inflation factors, and Cheng-Church biclustering scored by the
(size-adjusted) mean squared residue around column means.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.cluster import hierarchy
from scipy.spatial.distance import pdist

from .fdcore import format_float

__all__ = ["standardize", "Dendrogram", "hcluster", "h_score", "h_correction", "adjusted_h_score",
           "Bicluster", "cheng_church", "PCAResult", "pca", "vif"]


def standardize(X, names=None) -> np.ndarray:
    """Center columns and scale them to unit (sample) standard deviation."""
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0, ddof=1)
    bad = np.flatnonzero(~(sd > 0))
    if bad.size:
        label = names[bad[0]] if names is not None else f"column {bad[0]}"
        raise ValueError(f"{label} has zero variance")
    return (X - X.mean(axis=0)) / sd


@dataclass(frozen=True)
class Dendrogram:
    """Complete-linkage merge tree.

    ``linkage`` is the scipy linkage matrix; ``heights`` its merge distances.
    """

    labels: tuple
    linkage: np.ndarray
    axis: str

    @property
    def heights(self) -> np.ndarray:
        return self.linkage[:, 2]

    @property
    def leaf_order(self) -> list:
        return [self.labels[i] for i in hierarchy.leaves_list(self.linkage)]

    def merge_height(self, a: str, b: str) -> float:
        """Height at which items ``a`` and ``b`` first share a cluster."""
        coph = hierarchy.cophenet(self.linkage)
        n = len(self.labels)
        i, j = sorted((self.labels.index(a), self.labels.index(b)))
        return float(coph[n * i - i * (i + 1) // 2 + (j - i - 1)])

    def write_csv(self, fh) -> None:
        n = len(self.labels)
        names = list(self.labels)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "left", "right", "height", "size"])
        for k, (a, b, h, size) in enumerate(self.linkage):
            label = lambda c: names[int(c)] if c < n else f"#{int(c) - n + 1}"
            w.writerow([k + 1, label(a), label(b), format_float(h), int(size)])


def hcluster(matrix, labels, axis: str = "columns", row_labels=None) -> Dendrogram:
    """Complete-linkage clustering with distance ``1 - corr``.

    Parameters
    ----------
    matrix : array_like, shape (n, p)
        Raw covariate matrix; columns are standardized first.
    labels : sequence
        Names of the items being clustered (columns or rows per ``axis``).
    axis : {"columns", "rows"}
    """
    X = np.asarray(matrix, dtype=float)
    if axis == "columns":
        items = standardize(X, labels).T
    elif axis == "rows":
        items = standardize(X, row_labels)
    else:
        raise ValueError(f"axis must be 'columns' or 'rows', got {axis!r}")
    if items.shape[0] != len(labels):
        raise ValueError(f"{len(labels)} labels for {items.shape[0]} items")
    if items.shape[0] < 2:
        raise ValueError("need at least 2 items to cluster")
    sd = items.std(axis=1)
    flat = np.flatnonzero(~(sd > 1e-12))
    if flat.size:
        raise ValueError(f"{labels[flat[0]]} is constant; correlation distance undefined")
    dist = np.clip(pdist(items, "correlation"), 0.0, 2.0)
    return Dendrogram(tuple(labels), hierarchy.linkage(dist, method="complete"), axis)


def _residues(sub):
    return sub - sub.mean(axis=0)


def h_score(matrix, rows, cols) -> float:
    """Mean squared residue of a submatrix around its column means."""
    rows, cols = np.asarray(rows, dtype=int), np.asarray(cols, dtype=int)
    if rows.size == 0 or cols.size == 0:
        raise ValueError("bicluster needs at least one row and one column")
    sub = np.asarray(matrix, dtype=float)[np.ix_(rows, cols)]
    return float(np.mean(_residues(sub) ** 2))


def h_correction(n_rows: int, n_cols: int) -> float:
    """Size-bias factor ``prod_{r=2}^{I-1} r^2/(r^2-1) * prod_{q=2}^{J-1} q^2/(q^2-1)``."""
    f = 1.0
    for r in range(2, n_rows):
        f *= r * r / (r * r - 1.0)
    for q in range(2, n_cols):
        f *= q * q / (q * q - 1.0)
    return f


def adjusted_h_score(matrix, rows, cols) -> float:
    return h_score(matrix, rows, cols) / h_correction(len(rows), len(cols))


@dataclass(frozen=True)
class Bicluster:
    rows: tuple
    cols: tuple
    h_score: float
    adjusted_h_score: float


def _h_adj(X, rows, cols):
    return adjusted_h_score(X, rows, cols)


def _deletion(X, rows, cols, delta, alpha, multi_min):
    """Multiple- then single-node deletion until ``H_adj <= delta``.

    Batch deletion of rows (columns) only runs while at least ``multi_min``
    of them remain; below that, nodes are removed one at a time.
    """
    rows, cols = list(rows), list(cols)
    # multiple node deletion
    while _h_adj(X, rows, cols) > delta:
        sub = X[np.ix_(rows, cols)]
        R2 = _residues(sub) ** 2
        H = R2.mean()
        drop_r = (R2.mean(axis=1) > alpha * H) & (len(rows) >= multi_min)
        changed = False
        if drop_r.any() and len(rows) - drop_r.sum() >= 2:
            rows = [r for r, d in zip(rows, drop_r) if not d]
            changed = True
            sub = X[np.ix_(rows, cols)]
            R2 = _residues(sub) ** 2
            H = R2.mean()
        if _h_adj(X, rows, cols) <= delta:
            break
        drop_c = (R2.mean(axis=0) > alpha * H) & (len(cols) >= multi_min)
        if drop_c.any() and len(cols) - drop_c.sum() >= 1:
            cols = [c for c, d in zip(cols, drop_c) if not d]
            changed = True
        if not changed:
            break
    # single node deletion
    while _h_adj(X, rows, cols) > delta:
        sub = X[np.ix_(rows, cols)]
        R2 = _residues(sub) ** 2
        dr, dc = R2.mean(axis=1), R2.mean(axis=0)
        can_r, can_c = len(rows) > 2, len(cols) > 1
        if not (can_r or can_c):
            return None
        best_r = int(np.argmax(dr)) if can_r else -1
        best_c = int(np.argmax(dc)) if can_c else -1
        if can_r and (not can_c or dr[best_r] >= dc[best_c]):
            del rows[best_r]
        else:
            del cols[best_c]
    return rows, cols


def _addition(X, rows, cols, delta):
    """Add rows and columns, lowest residue first, while ``H_adj <= delta`` holds."""
    n, p = X.shape
    rows, cols = list(rows), list(cols)
    while True:
        sub = X[np.ix_(rows, cols)]
        mu = sub.mean(axis=0)
        cand = []
        for c in range(p):
            if c not in cols:
                v = X[rows, c]
                cand.append((float(np.mean((v - v.mean()) ** 2)), 0, c))
        for r in range(n):
            if r not in rows:
                cand.append((float(np.mean((X[r, cols] - mu) ** 2)), 1, r))
        for _, kind, idx in sorted(cand):
            new_rows = sorted(rows + [idx]) if kind else rows
            new_cols = cols if kind else sorted(cols + [idx])
            if _h_adj(X, new_rows, new_cols) <= delta:
                rows, cols = new_rows, new_cols
                break
        else:
            return rows, cols


def cheng_church(matrix, delta: float, max_biclusters: int = 2, alpha: float = 1.2,
                 row_labels=None, col_labels=None, seed: int = 0, multi_min: int = 100) -> list:
    """Greedy extraction of constant-column biclusters with ``H_adj <= delta``.

    Each round starts from the full (masked) matrix, applies multiple-node
    deletion (factor ``alpha``, used while a dimension has at least
    ``multi_min`` nodes), single-node deletion and node addition.  Cells
    of an accepted bicluster are then overwritten with standard normal draws
    from a generator seeded by ``seed``, so the output is deterministic.
    (Overwriting with column means would leave an exact zero-residue block
    behind, which the next round would find again.)  Extraction stops when no
    bicluster of at least 2 x 2 satisfies the threshold.
    """
    if not delta > 0:
        raise ValueError("delta must be > 0")
    X = np.array(matrix, dtype=float)
    n, p = X.shape
    rng = np.random.default_rng(seed)
    row_labels = tuple(row_labels) if row_labels is not None else tuple(range(n))
    col_labels = tuple(col_labels) if col_labels is not None else tuple(range(p))
    out = []
    for _ in range(max_biclusters):
        found = _deletion(X, range(n), range(p), delta, alpha, multi_min)
        if found is None:
            break
        rows, cols = _addition(X, sorted(found[0]), sorted(found[1]), delta)
        if len(rows) < 2 or len(cols) < 2:
            break
        H = h_score(X, rows, cols)
        Hadj = H / h_correction(len(rows), len(cols))
        assert Hadj <= delta
        out.append(Bicluster(tuple(row_labels[r] for r in rows), tuple(col_labels[c] for c in cols), H, Hadj))
        X[np.ix_(rows, cols)] = rng.standard_normal((len(rows), len(cols)))
    return out


@dataclass(frozen=True)
class PCAResult:
    columns: tuple
    loadings: np.ndarray  # (p, k), orthonormal columns
    scores: np.ndarray  # (n, k)
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray


def pca(matrix, columns) -> PCAResult:
    """Principal components of the standardized columns.

    Each component's sign is fixed so that its loading on the first listed
    column is positive (the first non-zero loading when that one vanishes).
    """
    X = np.asarray(matrix, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("PCA needs at least 2 columns")
    Z = standardize(X, columns)
    _, s, Vt = np.linalg.svd(Z, full_matrices=False)
    V = Vt.T
    for k in range(V.shape[1]):
        nz = np.flatnonzero(np.abs(V[:, k]) > 1e-12)
        if nz.size and V[nz[0], k] < 0:
            V[:, k] = -V[:, k]
    var = s**2 / (X.shape[0] - 1)
    return PCAResult(tuple(columns), V, Z @ V, var, var / var.sum())


def vif(matrix) -> np.ndarray:
    """Variance inflation factors ``1 / (1 - R^2_j)``; ``inf`` under perfect collinearity."""
    X = np.asarray(matrix, dtype=float)
    n, p = X.shape
    if n <= p:
        raise ValueError(f"VIF needs more rows than columns ({n} <= {p})")
    Xc = X - X.mean(axis=0)
    out = np.empty(p)
    for j in range(p):
        y = Xc[:, j]
        others = np.delete(Xc, j, axis=1)
        # centered normal equations: orthogonal columns give a zero right-hand
        # side exactly, hence VIF exactly 1
        coef, *_ = np.linalg.lstsq(others.T @ others, others.T @ y, rcond=None)
        resid = y - others @ coef
        sst = y @ y
        if not sst > 0:
            raise ValueError(f"column {j} has zero variance")
        one_minus = (resid @ resid) / sst
        out[j] = np.inf if one_minus < 1e-10 else 1.0 / one_minus
    return out
