"""Figure rendering for the report path. Everything writes straight to files."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path) -> str:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return os.fspath(path)


def spectrogram_figure(freqs, times, before_db, after_db, diff_db, path):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, figsize=(6.0, 6.5), sharex=True)
        extent = [times[0] if len(times) else 0, times[-1] if len(times) else 1, freqs[0] / 1000, freqs[-1] / 1000]
        vmin = min(before_db.min(), after_db.min())
        vmax = max(before_db.max(), after_db.max())
        for ax, data, title in ((axes[0], before_db, "before"), (axes[1], after_db, "after")):
            im = ax.imshow(data, origin="lower", aspect="auto", extent=extent, cmap="magma", vmin=vmin, vmax=vmax)
            ax.set_title(title)
            ax.set_ylabel("kHz")
            fig.colorbar(im, ax=ax, label="dB")
        lim = max(float(np.abs(diff_db).max()), 1e-6)
        im = axes[2].imshow(diff_db, origin="lower", aspect="auto", extent=extent, cmap="RdBu_r", vmin=-lim, vmax=lim)
        axes[2].set_title("after - before")
        axes[2].set_ylabel("kHz")
        axes[2].set_xlabel("time (s)")
        fig.colorbar(im, ax=axes[2], label="dB")
        return _save(fig, path)


def score_histogram(groups: dict, path, thresholds: dict | None = None, title: str = ""):
    """Overlaid score histograms, one per named group, with optional threshold lines."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        bins = np.linspace(0, 1, 41)
        for name, scores in groups.items():
            ax.hist(np.asarray(scores), bins=bins, alpha=0.5, label=name)
        for name, t in (thresholds or {}).items():
            ax.axvline(t, color="k", linestyle="--", linewidth=0.8)
            ax.text(t, ax.get_ylim()[1] * 0.95, f" {name}", fontsize=7, va="top")
        ax.set_xlabel("P(target)")
        ax.set_ylabel("count")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def training_curves(rows: list[dict], path, keys=("L", "L_A", "L_R", "L_s")):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(keys) + 1, 1, figsize=(6.0, 1.6 * (len(keys) + 1)), sharex=True)
        steps = [r["step"] for r in rows]
        for ax, key in zip(axes, keys):
            ax.plot(steps, [r[key] for r in rows], linewidth=0.7)
            ax.set_ylabel(key)
        axes[-1].step(steps, [r["lr"] for r in rows], where="post", linewidth=0.8)
        axes[-1].set_ylabel("lr")
        axes[-1].set_yscale("log")
        axes[-1].set_xlabel("step")
        return _save(fig, path)


def mt_scatter(speech, silence, path):
    """Per-utterance mean M_t over speech frames (x) against silence frames (y)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.5, 3.5))
        speech, silence = np.asarray(speech, float), np.asarray(silence, float)
        ax.scatter(speech, silence, s=8)
        hi = max(float(np.nanmax(speech)) if speech.size else 1.0,
                 float(np.nanmax(silence)) if silence.size else 1.0, 1e-6)
        ax.plot([0, hi], [0, hi], color="grey", linewidth=0.8, linestyle=":")
        ax.set_xlabel("mean M_t, speech")
        ax.set_ylabel("mean M_t, silence")
        return _save(fig, path)
