"""Matplotlib figures written next to the CSV outputs (Agg backend, no display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_regret_curves(runs: dict, summary: dict, path) -> None:
    """Cumulative regret per run plus the per-episode median and interquartile band."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for run_id, (episodes, cum) in runs.items():
        ax.plot(episodes, cum, color="0.7", lw=0.8)
    ep = summary["episode"]
    ax.fill_between(ep, summary["q25"], summary["q75"], color="C0", alpha=0.25, label="interquartile")
    ax.plot(ep, summary["median"], color="C0", lw=2, label="median")
    ax.set_xlabel("episode")
    ax.set_ylabel("cumulative regret")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bench(rows, path) -> None:
    """Kernel error against feature count and lemma lhs against rhs, whichever are present."""
    kernel = [(int(r.check.rsplit("D", 1)[1]), r.lhs) for r in rows
              if r.suite == "kernel" and r.check.startswith("max_abs_error_D")]
    lemma = [r for r in rows if r.suite == "lemmas" and r.kind == "instance"]
    panels = [p for p, ok in (("kernel", kernel), ("lemmas", lemma)) if ok]
    if not panels:
        panels = ["checks"]
    fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 4), squeeze=False)
    for ax, panel in zip(axes[0], panels):
        if panel == "kernel":
            D, err = zip(*sorted(kernel))
            ax.loglog(D, err, "o-", label="max abs error")
            ax.loglog(D, err[0] * np.sqrt(D[0] / np.asarray(D)), "--", color="0.5", label="D^-1/2 reference")
            ax.set_xlabel("feature count D")
            ax.set_ylabel("kernel error")
            ax.legend()
        elif panel == "lemmas":
            for name, color in (("simulation_lemma", "C0"), ("expectation_gap", "C1")):
                pts = [(r.rhs, r.lhs) for r in lemma if r.check.startswith(name)]
                if pts:
                    x, y = zip(*pts)
                    ax.scatter(x, y, s=6, color=color, label=name)
            hi = max(max(r.rhs for r in lemma), 1e-9)
            ax.plot([0, hi], [0, hi], color="0.4", lw=0.8)
            ax.set_xlabel("bound (rhs)")
            ax.set_ylabel("gap (lhs)")
            ax.legend()
        else:
            checks = [r for r in rows if r.kind == "check"]
            ax.barh([r.check for r in checks], [1 if r.passed else 0 for r in checks])
            ax.set_xlabel("passed")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
