"""SVG figures for the pipeline artifacts.

Every figure is written with a fixed hash salt and no timestamp, so the same
inputs always give byte-identical SVG files.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy.cluster import hierarchy  # noqa: E402

__all__ = ["svg_bytes", "plot_curves", "plot_motifs", "plot_iwt", "plot_boxplot", "plot_surface",
           "plot_effect_curve", "plot_residuals", "plot_heatmap", "plot_selection_path", "plot_pca"]

_RC = {"svg.hashsalt": "fdepi", "svg.fonttype": "none", "font.size": 8, "axes.titlesize": 9}
_GROUP_COLORS = ("tab:red", "tab:blue", "tab:green", "tab:purple", "tab:orange")


def svg_bytes(fig) -> bytes:
    """Render ``fig`` to deterministic SVG bytes and close it."""
    buf = io.BytesIO()
    with matplotlib.rc_context(_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def _fig(*args, **kw):
    with matplotlib.rc_context(_RC):
        return plt.subplots(*args, **kw)


def plot_curves(data, title: str = "", ylabel: str = "") -> bytes:
    fig, ax = _fig(figsize=(7, 4))
    x = np.arange(data.T)
    for name, row in zip(data.names, data.values):
        ax.plot(x, row, lw=0.8, label=name)
    ax.set_xlabel(f"days since {data.grid.start_day.isoformat()}")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=5, ncol=2, loc="upper left")
    return svg_bytes(fig)


def plot_motifs(data, model) -> bytes:
    """Curves with their motif windows on top; aligned portions per group below."""
    fig, axes = _fig(2, max(model.K, 2), figsize=(8, 6))
    top = axes[0, 0]
    c = model.motif_length
    shifts = model.assigned_shifts()
    for row, lab, s in zip(data.values, model.hard_labels, shifts):
        col = _GROUP_COLORS[lab % len(_GROUP_COLORS)]
        top.plot(row, color="0.75", lw=0.6)
        top.plot(np.arange(s, s + c), row[s : s + c], color=col, lw=0.9)
    top.set_title("curves and motif windows")
    ax = axes[0, 1]
    ax.barh(np.arange(len(data.names)), shifts,
            color=[_GROUP_COLORS[k % len(_GROUP_COLORS)] for k in model.hard_labels])
    ax.set_yticks(np.arange(len(data.names)), data.names, fontsize=5)
    ax.invert_yaxis()
    ax.set_title("shifts (days)")
    for extra in axes[0, 2:]:
        extra.axis("off")
    for k in range(model.K):
        ax = axes[1, k]
        members = np.flatnonzero(model.hard_labels == k)
        for i in members:
            s = shifts[i]
            ax.plot(data.values[i, s : s + c], color=_GROUP_COLORS[k % len(_GROUP_COLORS)], lw=0.7)
        if members.size:
            ax.plot(np.mean([data.values[i, shifts[i] : shifts[i] + c] for i in members], axis=0),
                    color="k", lw=1.5)
        ax.set_title(f"group {k + 1} ({members.size} curves)")
    for extra in axes[1, model.K:]:
        extra.axis("off")
    fig.tight_layout()
    return svg_bytes(fig)


def plot_iwt(result, group_a, group_b, level: float = 0.05) -> bytes:
    """Adjusted p-value pyramid, full-scale row and the tested curves."""
    fig, axes = _fig(3, 1, figsize=(7, 8), gridspec_kw={"height_ratios": [3, 1, 2]})
    T = result.T
    ax = axes[0]
    img = np.full((T, T), np.nan)
    for w in range(T):
        img[w, : T] = result.adjusted_p[:, w]
    im = ax.imshow(img, origin="lower", aspect="auto", cmap="viridis_r", vmin=0, vmax=1,
                   extent=(0.5, T + 0.5, 0.5, T + 0.5))
    fig.colorbar(im, ax=ax, label="adjusted p")
    ax.set_ylabel("scale (days)")
    ax.set_title("interval-wise adjusted p-values")
    full = result.adjusted_p[:, T - 1]
    sig = full < level
    ax = axes[1]
    ax.plot(np.arange(1, T + 1), full, "k.-", lw=0.8)
    ax.axhline(level, color="r", lw=0.6, ls="--")
    _shade(ax, sig)
    ax.set_ylabel("p (full scale)")
    ax = axes[2]
    for row in group_a:
        ax.plot(np.arange(1, T + 1), row, color=_GROUP_COLORS[0], lw=0.7)
    for row in group_b:
        ax.plot(np.arange(1, T + 1), row, color=_GROUP_COLORS[1], lw=0.7)
    _shade(ax, sig)
    ax.set_xlabel("aligned day")
    fig.tight_layout()
    return svg_bytes(fig)


def _shade(ax, mask):
    for t in np.flatnonzero(mask):
        ax.axvspan(t + 0.5, t + 1.5, color="0.85", lw=0, zorder=0)


def plot_boxplot(data, report) -> bytes:
    fig, ax = _fig(figsize=(7, 4))
    x = np.arange(data.T)
    lo, hi = report.central_region
    ax.fill_between(x, lo, hi, color="tab:purple", alpha=0.35, lw=0, label="50% central region")
    f_lo, f_hi = report.fence
    inner = [i for i in range(data.n) if i not in set(report.outlier_indices.tolist())]
    env_lo = np.min(data.values[inner], axis=0)
    env_hi = np.max(data.values[inner], axis=0)
    ax.plot(x, env_lo, color="tab:blue", lw=1)
    ax.plot(x, env_hi, color="tab:blue", lw=1, label="max non-outlying envelope")
    ax.plot(x, data.values[report.median_index], color="k", lw=1.5, label=f"median ({report.median})")
    for i in report.outlier_indices:
        ax.plot(x, data.values[i], color="tab:red", ls="--", lw=0.9)
        ax.annotate(data.names[i], (x[-1], data.values[i, -1]), fontsize=6, color="tab:red")
    ax.legend(fontsize=6)
    ax.set_title("functional boxplot")
    return svg_bytes(fig)


def plot_surface(estimate, title: str = "") -> bytes:
    fig, ax = _fig(figsize=(5, 4.5))
    S, T = estimate.shape
    lim = float(np.max(np.abs(estimate))) or 1.0
    cs = ax.contourf(np.arange(T), np.arange(S), estimate, levels=21, cmap="RdBu_r", vmin=-lim, vmax=lim)
    ax.contour(np.arange(T), np.arange(S), estimate, levels=[0.0], colors="k", linewidths=0.6)
    fig.colorbar(cs, ax=ax)
    ax.set_xlabel("t (response day)")
    ax.set_ylabel("s (predictor day)")
    ax.set_title(title)
    return svg_bytes(fig)


def plot_effect_curve(estimate, se, sign, title: str = "", z: float = 1.959963984540054) -> bytes:
    fig, ax = _fig(figsize=(5, 3))
    t = np.arange(estimate.size)
    ax.plot(t, estimate, color="k", lw=1.2)
    ax.plot(t, estimate - z * se, "k--", lw=0.6)
    ax.plot(t, estimate + z * se, "k--", lw=0.6)
    ax.axhline(0, color="0.5", lw=0.5)
    for k, col in ((1, "tab:red"), (-1, "tab:blue")):
        for d in np.flatnonzero(sign == k):
            ax.axvspan(d - 0.5, d + 0.5, color=col, alpha=0.15, lw=0)
    ax.set_title(title)
    ax.set_xlabel("aligned day")
    return svg_bytes(fig)


def plot_residuals(names, integrated, groups=None) -> bytes:
    fig, ax = _fig(figsize=(7, 3))
    order = np.argsort(-np.asarray(integrated), kind="stable")
    cols = ["0.5"] * len(names) if groups is None else [_GROUP_COLORS[g % 5] for g in groups]
    ax.bar(np.arange(len(names)), np.asarray(integrated)[order], color=[cols[i] for i in order])
    ax.set_xticks(np.arange(len(names)), [names[i] for i in order], rotation=90, fontsize=6)
    ax.axhline(0, color="k", lw=0.5)
    ax.set_ylabel("integrated residual")
    fig.tight_layout()
    return svg_bytes(fig)


def plot_heatmap(Z, row_labels, col_labels, row_tree, col_tree, biclusters=()) -> bytes:
    """Standardized matrix with row and column dendrograms and bicluster frames."""
    fig = plt.figure(figsize=(8, 8))
    ax_top = fig.add_axes((0.3, 0.78, 0.6, 0.15))
    ax_left = fig.add_axes((0.05, 0.1, 0.2, 0.65))
    ax = fig.add_axes((0.3, 0.1, 0.6, 0.65))
    dc = hierarchy.dendrogram(col_tree.linkage, ax=ax_top, no_labels=True, color_threshold=0)
    dr = hierarchy.dendrogram(row_tree.linkage, ax=ax_left, orientation="left", no_labels=True,
                              color_threshold=0)
    ax_top.axis("off")
    ax_left.axis("off")
    ci, ri = dc["leaves"], dr["leaves"][::-1]
    ax.imshow(Z[np.ix_(ri, ci)], aspect="auto", cmap="RdBu_r", vmin=-3, vmax=3)
    ax.set_xticks(np.arange(len(ci)), [col_labels[j] for j in ci], rotation=90, fontsize=6)
    ax.set_yticks(np.arange(len(ri)), [row_labels[i] for i in ri], fontsize=6)
    ax.yaxis.tick_right()
    for b, col in zip(biclusters, ("k", "tab:green")):
        rset, cset = set(b.rows), set(b.cols)
        for y, i in enumerate(ri):
            for x, j in enumerate(ci):
                if row_labels[i] in rset and col_labels[j] in cset:
                    ax.add_patch(plt.Rectangle((x - 0.5, y - 0.5), 1, 1, fill=False, ec=col, lw=1.2))
    return svg_bytes(fig)


def plot_selection_path(path) -> bytes:
    fig, ax = _fig(figsize=(6, 4))
    norms = path.group_norms
    x = np.log10(path.lambdas)
    for j, name in enumerate(path.names):
        ax.plot(x, norms[:, j], lw=0.9, label=name)
    ax.invert_xaxis()
    ax.set_xlabel("log10 lambda")
    ax.set_ylabel("group norm")
    ax.legend(fontsize=5)
    return svg_bytes(fig)


def plot_pca(result) -> bytes:
    fig, ax = _fig(figsize=(5, 3))
    ax.bar(np.arange(len(result.columns)), result.loadings[:, 0], color="tab:gray")
    ax.set_xticks(np.arange(len(result.columns)), result.columns, rotation=60, ha="right", fontsize=6)
    ax.axhline(0, color="k", lw=0.5)
    ax.set_title(f"pc1 loadings ({result.explained_variance_ratio[0]:.0%} of variance)")
    fig.tight_layout()
    return svg_bytes(fig)
