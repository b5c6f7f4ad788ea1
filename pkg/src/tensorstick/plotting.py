"""Figure export for reports.  Everything renders with the Agg backend to PNG
files with fixed metadata, so reruns produce identical bytes."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_METADATA = {"Software": None}
RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}


def _save(fig, path) -> None:
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    plt.close(fig)


def quantile_ecdf_figure(phi, path, title="Posterior predictive quantiles") -> None:
    phi = np.sort(np.asarray(phi, float).ravel())
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 4))
        steps = np.arange(phi.size + 1) / phi.size
        ax.step(np.concatenate([[0.0], phi, [1.0]]), np.concatenate([steps, [1.0]]), where="post", color="k", lw=1)
        ax.plot([0, 1], [0, 1], ls="--", color="0.5", lw=0.8)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_xlabel("x")
        ax.set_ylabel("empirical P(quantile < x)")
        ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)


def proportion_histogram_figure(y_draws, Y, n, path) -> None:
    """Pooled predictive proportions against observed proportions."""
    n = np.asarray(n)
    ok = n > 0
    obs = np.asarray(Y)[ok] / n[ok]
    sim = (np.asarray(y_draws)[:, ok] / n[ok][None]).ravel()
    bins = np.linspace(0, 1, 26)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.hist(sim, bins=bins, density=True, color="0.7", label="predictive")
        ax.hist(obs, bins=bins, density=True, histtype="step", color="k", lw=1.2, label="observed")
        ax.set_xlabel("proportion of successes")
        ax.set_ylabel("density")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def loadings_figure(summary: dict, path) -> None:
    """Posterior means and 95% intervals of covariate and type loadings."""
    panels = [k for k in ("B1", "B2") if k in summary]
    if not panels:
        return
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.2), squeeze=False)
        for ax, key in zip(axes[0], panels):
            block = summary[key]
            names = block["names"]
            mean = np.asarray(block["mean"])
            lo, hi = np.asarray(block["lower"]), np.asarray(block["upper"])
            R = mean.shape[1]
            x = np.arange(len(names))
            for r in range(R):
                off = (r - (R - 1) / 2) * 0.2
                ax.errorbar(x + off, mean[:, r], yerr=[mean[:, r] - lo[:, r], hi[:, r] - mean[:, r]],
                            fmt="o", ms=3, capsize=2, label=f"r={r + 1}")
            ax.axhline(0, color="0.6", lw=0.7)
            ax.set_xticks(x)
            ax.set_xticklabels(names, rotation=45, ha="right")
            ax.set_title("covariate loadings" if key == "B1" else "type loadings")
            if R > 1:
                ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def predictive_histograms_figure(profile: dict, type_names, path) -> None:
    types = profile["types"]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(types), figsize=(2.6 * len(types), 2.6), squeeze=False)
        for ax, name, t in zip(axes[0], type_names, types):
            h = np.asarray(t["count_histogram"])
            ax.bar(np.arange(h.size), h, width=1.0, color="0.5")
            ax.set_title(name)
            ax.set_xlabel("count")
        axes[0][0].set_ylabel("predictive probability")
        fig.tight_layout()
        _save(fig, path)


def lppl_grid_figure(result, path) -> None:
    from tensorstick.simstudy import COEF_ROWS, COL_LABELS, ERROR_COLS, ROW_LABELS

    M = np.array([[np.nan if result.psb(c, r, e) is None else result.psb(c, r, e) for e in ERROR_COLS]
                  for c, r in COEF_ROWS])
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        im = ax.imshow(M, cmap="viridis", aspect="auto")
        for a in range(M.shape[0]):
            for b in range(M.shape[1]):
                if np.isfinite(M[a, b]):
                    ax.text(b, a, f"{M[a, b]:.0f}", ha="center", va="center", color="w", fontsize=8)
        ax.set_xticks(range(len(ERROR_COLS)))
        ax.set_xticklabels([COL_LABELS[e] for e in ERROR_COLS])
        ax.set_yticks(range(len(COEF_ROWS)))
        ax.set_yticklabels([ROW_LABELS[k] for k in COEF_ROWS])
        fig.colorbar(im, ax=ax, label="LPPL")
        fig.tight_layout()
        _save(fig, path)
