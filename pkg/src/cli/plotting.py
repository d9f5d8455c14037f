"""Minimal SVG line plots of the curves a sub-command writes."""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

# fixed so repeated runs give identical files
matplotlib.rcParams["svg.hashsalt"] = "superres"
matplotlib.rcParams["svg.fonttype"] = "none"


@dataclass
class Curve:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    style: str = "-"


@dataclass
class Figure:
    xlabel: str
    ylabel: str
    curves: List[Curve] = field(default_factory=list)
    logx: bool = False
    logy: bool = False
    title: Optional[str] = None

    def add(self, label: str, x, y, style: str = "-") -> "Figure":
        self.curves.append(Curve(label, list(x), list(y), style))
        return self


def render_svg(figure: Figure, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    try:
        for curve in figure.curves:
            ax.plot(curve.x, curve.y, curve.style, label=curve.label, linewidth=1.4)
        if figure.logx:
            ax.set_xscale("log")
        if figure.logy:
            ax.set_yscale("log")
        ax.set_xlabel(figure.xlabel)
        ax.set_ylabel(figure.ylabel)
        if figure.title:
            ax.set_title(figure.title)
        ax.grid(True, which="both", ls="-", alpha=0.3)
        if figure.curves:
            ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    logger.info(f"PLOT: wrote {len(figure.curves)} curve(s) to {path}")
