"""Static SVG figures: regret curves and estimator clouds.

The SVG backend is pinned (fixed hash salt, no date metadata) so identical
input always produces an identical file.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from hyran.errors import InvalidArgument  # noqa: E402
from hyran.harness import CurveStats  # noqa: E402

MAX_POINTS = 1000
LINE_STYLES = ["-", "--", "-.", ":", (0, (5, 1, 1, 1)), (0, (3, 1, 1, 1, 1, 1))]
MARKERS = ["", "o", "s", "^", "v", "D"]

_RC = {
    "svg.hashsalt": "hyran",
    "svg.fonttype": "none",
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}


def downsample_index(n: int, max_points: int = MAX_POINTS) -> np.ndarray:
    """Evenly spaced indices over ``0..n-1``, both ends kept, at most ``max_points`` of them."""
    if n <= max_points:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, max_points).round().astype(np.int64))


def _label(c: CurveStats) -> str:
    if c.hyper_name == "none":
        return c.algo
    return f"{c.algo} ({c.hyper_name}={c.hyper_value:g})"


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def emit_plot(curves: Sequence[CurveStats], path: Path, title: str | None = None) -> Path:
    """Mean cumulative regret against round with a shaded one-std band per curve."""
    curves = list(curves)
    if not curves:
        raise InvalidArgument("emit_plot needs at least one curve")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for k, c in enumerate(curves):
            n = c.mean.size
            idx = downsample_index(n)
            x = idx + 1
            mean = c.mean[idx]
            std = c.std[idx] if c.std.size == n else np.zeros_like(mean)
            style = LINE_STYLES[k % len(LINE_STYLES)]
            marker = MARKERS[(k // len(LINE_STYLES)) % len(MARKERS)]
            (line,) = ax.plot(x, mean, linestyle=style, marker=marker or None, markevery=max(1, len(x) // 10),
                              linewidth=1.4, label=_label(c))
            ax.fill_between(x, mean - std, mean + std, color=line.get_color(), alpha=0.2, linewidth=0)
        ax.set_xlabel("round t")
        ax.set_ylabel("cumulative regret")
        if title:
            ax.set_title(title)
        ax.legend(loc="upper left")
        fig.tight_layout()
        return _save(fig, path)


def emit_cloud_plot(clouds: dict[float, np.ndarray], beta_star: np.ndarray, path: Path, dims=(0, 1)) -> Path:
    """Scatter of replayed estimates, one colour per hybridization probability."""
    if not clouds:
        raise InvalidArgument("emit_cloud_plot needs at least one cloud")
    i, j = dims
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        for k, (p, cloud) in enumerate(sorted(clouds.items())):
            ax.scatter(cloud[:, i], cloud[:, j], s=4, alpha=0.5, marker="os^D"[k % 4], label=f"p={p:g}")
        ax.scatter([beta_star[i]], [beta_star[j]], s=60, marker="*", color="black", label="true parameter")
        ax.set_xlabel(f"coordinate {i + 1}")
        ax.set_ylabel(f"coordinate {j + 1}")
        ax.legend(loc="best")
        fig.tight_layout()
        return _save(fig, path)
