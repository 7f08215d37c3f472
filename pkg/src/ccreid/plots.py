"""CMC curves and attention heatmaps as PNG files.

Outputs are byte-for-byte reproducible: matplotlib runs on the Agg backend
and PNG metadata (software tag, timestamps) is stripped. Heatmaps use a fixed
[0, 1] colour scale, so the colour of a cell is a function of its raw
attention value alone and maps of different models can be compared directly.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_cmc(reports: Sequence[dict], labels: Sequence[str], path: str | os.PathLike) -> Path:
    """One CMC line per report, points at k = 1 .. len(cmc_curve)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for rep, label in zip(reports, labels):
        curve = np.asarray(rep["cmc_curve"], dtype=float)
        ks = np.arange(1, len(curve) + 1)
        ax.plot(ks, curve, marker=".", markersize=3, linewidth=1, label=f"{label} (mAP {rep['mAP']:.3f})")
    ax.set_xlabel("rank k")
    ax.set_ylabel("CMC(k)")
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, linewidth=0.3)
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    return _save(fig, Path(path))


def plot_attention(images: np.ndarray, attention: np.ndarray, path: str | os.PathLike,
                   titles: Sequence[str] | None = None) -> Path:
    """Input images (N, H, W, 3) above their attention maps (N, h, w) on a fixed [0, 1] scale."""
    n = len(images)
    fig, axes = plt.subplots(2, n, figsize=(1.2 * n + 0.6, 4.2), squeeze=False)
    im = None
    for i in range(n):
        axes[0, i].imshow(np.clip(images[i], 0, 1), interpolation="nearest")
        im = axes[1, i].imshow(attention[i], vmin=0.0, vmax=1.0, cmap="viridis", interpolation="nearest")
        if titles is not None:
            axes[0, i].set_title(titles[i], fontsize=6)
        for ax in axes[:, i]:
            ax.set_xticks([])
            ax.set_yticks([])
    fig.colorbar(im, ax=axes[1, :].tolist(), fraction=0.05)
    return _save(fig, Path(path))
