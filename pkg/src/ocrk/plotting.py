"""Report figures written next to the CSV / JSON outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def plot_curriculum_trace(history, path) -> None:
    """Learning rate, image width and length cap per epoch, warm-up shaded."""
    epochs = [h.epoch for h in history]
    warm = [h.epoch for h in history if h.phase == "warmup"]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, sharex=True, figsize=(6.4, 6.0))
        series = [
            ("learning rate", [h.lr for h in history], True),
            ("image width (px)", [h.width for h in history], False),
            ("max word length", [h.max_len for h in history], False),
        ]
        for ax, (label, values, logy) in zip(axes, series):
            ax.step(epochs, values, where="post", color="C0")
            ax.plot(epochs, values, "o", ms=3, color="C0")
            if logy:
                ax.set_yscale("log")
            if warm:
                ax.axvspan(min(warm) - 0.5, max(warm) + 0.5, color="C1", alpha=0.12, lw=0)
            ax.set_ylabel(label)
        axes[0].set_title("curriculum schedule (shaded: warm-up)")
        axes[-1].set_xlabel("epoch")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_pr_curves(curves: dict, path) -> None:
    """``curves`` maps IoU threshold -> list of PrPoint."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 4.2))
        for thr, points in sorted(curves.items()):
            recall = [0.0] + [p.recall for p in points]
            precision = [points[0].precision if points else 0.0] + [p.precision for p in points]
            ax.step(recall, precision, where="post", label=f"IoU {thr:.2f}")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.legend(fontsize=7, ncol=2)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_stage_timings(rows, path) -> None:
    """Per-image detection / recognition time against detected word count."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        words = [r["words"] for r in rows]
        ax.plot(words, [r["detect_ms"] for r in rows], "o", ms=4, label="detect")
        ax.plot(words, [r["recognize_ms"] for r in rows], "s", ms=4, label="recognize")
        ax.set_xlabel("detected words")
        ax.set_ylabel("ms per image")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
