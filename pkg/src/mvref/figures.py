"""Matplotlib figures rendered next to the delimited report outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import ConcentrationSeries


def loss_curve_figure(losses: list[float], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(len(losses)), losses, lw=1.0, color="#2b6cb0")
    ax.set_xlabel("step")
    ax.set_ylabel("flow loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def concentration_figure(series: ConcentrationSeries, path) -> None:
    latents = np.arange(series.fractions.shape[0])
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    bottom = np.zeros(len(latents))
    for j in range(series.fractions.shape[1]):
        ax0.bar(latents, series.fractions[:, j], bottom=bottom, label=f"ref {j}")
        bottom += series.fractions[:, j]
    ax0.set_ylabel("attention fraction")
    ax0.legend(fontsize=8)
    ax1.plot(latents, series.entropy, marker="o", color="#e03131")
    ax1.set_xlabel("video latent index")
    ax1.set_ylabel("entropy (nats)")
    ax1.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def mvrc_figure(frame_scores: list[tuple[int, float | None]], path) -> None:
    xs = [i for i, s in frame_scores if s is not None]
    ys = [s for _, s in frame_scores if s is not None]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(xs, ys, marker="o", lw=1.0, color="#2f9e44")
    ax.set_xlabel("frame")
    ax.set_ylabel("multi-view consistency")
    ax.set_ylim(-1.05, 1.05)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
