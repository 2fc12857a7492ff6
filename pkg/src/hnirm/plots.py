"""Static SVG scatter plots with byte-stable output."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "hnirm"
matplotlib.rcParams["svg.fonttype"] = "none"

_PALETTE = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"]


def _color_index(values):
    order: dict = {}
    return [order.setdefault(v, len(order)) for v in values], list(order)


def scatter_svg(path, positions, labels=None, groups=None, title: str = "", markers=None) -> None:
    """Scatter ``positions`` (r, >=2) with text labels, coloured by ``groups``.

    ``markers`` optionally gives one marker style per point (used for the
    item/school overlay).
    """
    P = np.asarray(positions, dtype=float)
    if P.shape[1] == 1:
        P = np.column_stack([P[:, 0], np.zeros(len(P))])
    groups = list(groups) if groups is not None else ["all"] * len(P)
    idx, names = _color_index(groups)
    markers = list(markers) if markers is not None else ["o"] * len(P)
    fig, ax = plt.subplots(figsize=(6, 6))
    for g, name in enumerate(names):
        for mk in sorted(set(markers)):
            sel = [r for r in range(len(P)) if idx[r] == g and markers[r] == mk]
            if sel:
                ax.scatter(P[sel, 0], P[sel, 1], c=_PALETTE[g % len(_PALETTE)], marker=mk,
                           label=str(name) if mk == markers[sel[0]] else None, s=30)
    if labels is not None:
        for r, lab in enumerate(labels):
            ax.annotate(str(lab), (P[r, 0], P[r, 1]), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("dimension 1")
    ax.set_ylabel("dimension 2")
    if title:
        ax.set_title(title)
    if len(names) > 1:
        ax.legend(loc="best", fontsize=8)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
