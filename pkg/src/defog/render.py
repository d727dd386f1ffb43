"""Grid renderings: ascii glyphs, PGM grayscale, and matplotlib figures.

Every renderer is a pure function of the channel stack it is given.  Counts
are rounded to the nearest integer first, so fractional predictions render
the same way they are scored by the existence metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .schema import ChannelSchema

__all__ = [
    "RenderSpec",
    "side_totals",
    "render_ascii",
    "render_pgm",
    "figure_prediction",
    "figure_training",
    "figure_metrics",
]

# frame kinds and the channel ranges each one carries
_KINDS = ("truth", "partial", "accumulated")


@dataclass(frozen=True)
class RenderSpec:
    """How to draw a grid: glyphs or grayscale, and cell magnification."""

    mode: str = "ascii"
    scale: int = 1

    def __post_init__(self) -> None:
        if self.mode not in ("ascii", "pgm"):
            raise ValueError(f"render mode must be ascii or pgm, got {self.mode!r}")
        if self.scale < 1:
            raise ValueError("scale must be >= 1")


def side_totals(arr: np.ndarray, schema: ChannelSchema,
                kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Split a channel stack into per-cell friendly and enemy totals."""
    if kind not in _KINDS:
        raise DataError(f"unknown frame kind {kind!r} (have {_KINDS})")
    expected = {
        "truth": schema.c_truth,
        "partial": schema.c_partial,
        "accumulated": schema.c_accumulated,
    }[kind]
    if arr.ndim != 3 or arr.shape[0] != expected:
        raise DataError(
            f"{kind} frame should have {expected} channels, got shape {arr.shape}")
    if kind == "accumulated":
        friendly = np.zeros(arr.shape[1:], dtype=np.float64)
        enemy = arr.sum(axis=0, dtype=np.float64)
    else:
        friendly = arr[: schema.n_friendly].sum(axis=0, dtype=np.float64)
        enemy = arr[schema.n_friendly :].sum(axis=0, dtype=np.float64)
    return friendly, enemy


def _levels(totals: np.ndarray) -> np.ndarray:
    # round half up; predictions below 0.5 disappear, like the metrics
    return np.floor(totals + 0.5).astype(np.int64)


def render_ascii(friendly: np.ndarray, enemy: np.ndarray, scale: int = 1) -> str:
    """Glyph grid: f/e one unit, F/E several, x/X mixed cells, '.' empty."""
    f = _levels(friendly)
    e = _levels(enemy)
    if f.shape != e.shape or f.ndim != 2:
        raise DataError(f"totals must share a 2-d shape, got {f.shape} vs {e.shape}")
    rows = []
    for r in range(f.shape[0]):
        chars = []
        for c in range(f.shape[1]):
            nf, ne = f[r, c], e[r, c]
            if nf > 0 and ne > 0:
                ch = "x" if nf + ne <= 2 else "X"
            elif nf > 0:
                ch = "f" if nf == 1 else "F"
            elif ne > 0:
                ch = "e" if ne == 1 else "E"
            else:
                ch = "."
            chars.append(ch * scale)
        row = "".join(chars)
        rows.extend([row] * scale)
    return "\n".join(rows)


# grayscale bands: white empty, bright band friendly, dark band enemy,
# a fixed mid-gray for contested cells; denser cells move deeper into
# their band (three steps)
_PGM_EMPTY = 255
_PGM_MIXED = 120
_PGM_FRIENDLY = 200
_PGM_ENEMY = 70
_PGM_STEP = 15


def render_pgm(friendly: np.ndarray, enemy: np.ndarray, scale: int = 1) -> str:
    """Plain (P2) PGM text for the same banding as the ascii mode."""
    f = _levels(friendly)
    e = _levels(enemy)
    if f.shape != e.shape or f.ndim != 2:
        raise DataError(f"totals must share a 2-d shape, got {f.shape} vs {e.shape}")
    img = np.full(f.shape, _PGM_EMPTY, dtype=np.int64)
    depth_f = np.minimum(np.maximum(f - 1, 0), 3)
    depth_e = np.minimum(np.maximum(e - 1, 0), 3)
    img = np.where((f > 0) & (e == 0), _PGM_FRIENDLY - _PGM_STEP * depth_f, img)
    img = np.where((e > 0) & (f == 0), _PGM_ENEMY - _PGM_STEP * depth_e, img)
    img = np.where((f > 0) & (e > 0), _PGM_MIXED, img)
    img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    lines = [f"P2", f"{img.shape[1]} {img.shape[0]}", "255"]
    lines += [" ".join(str(v) for v in row) for row in img]
    return "\n".join(lines) + "\n"


def render_grid(arr: np.ndarray, schema: ChannelSchema, kind: str,
                spec: RenderSpec) -> str:
    friendly, enemy = side_totals(arr, schema, kind)
    if spec.mode == "ascii":
        return render_ascii(friendly, enemy, spec.scale)
    return render_pgm(friendly, enemy, spec.scale)


# ---------------------------------------------------------------------------
# matplotlib figures
# ---------------------------------------------------------------------------

def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _panel_rgb(friendly: np.ndarray, enemy: np.ndarray) -> np.ndarray:
    """Friendly mass on the green channel, enemy on the red one."""
    peak = max(1.0, float(friendly.max()), float(enemy.max()))
    rgb = np.zeros(friendly.shape + (3,), dtype=np.float64)
    rgb[..., 0] = enemy / peak
    rgb[..., 1] = friendly / peak
    return rgb


def figure_prediction(xtilde: np.ndarray, xbar: np.ndarray, pred: np.ndarray,
                      truth: np.ndarray, schema: ChannelSchema,
                      path: str) -> None:
    """Four panels in a fixed order: accumulated, partial, predicted, truth."""
    plt = _plt()
    panels = [
        ("accumulated input", side_totals(xtilde, schema, "accumulated")),
        ("partial input", side_totals(xbar, schema, "partial")),
        ("prediction", side_totals(pred, schema, "truth")),
        ("ground truth", side_totals(truth, schema, "truth")),
    ]
    fig, axes = plt.subplots(1, 4, figsize=(13, 3.6))
    for ax, (title, (friendly, enemy)) in zip(axes, panels):
        ax.imshow(_panel_rgb(friendly, enemy), interpolation="nearest")
        ax.set_title(title, fontsize=10)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def figure_training(epochs: list[int], loss_d: list[float], loss_g: list[float],
                    loss_rec: list[float], loss_adv: list[float],
                    val_epochs: list[int], val_mse: list[float],
                    path: str) -> None:
    """Loss curves beside the CSV log: objectives left, validation right."""
    plt = _plt()
    fig, (ax_l, ax_v) = plt.subplots(1, 2, figsize=(10, 4))
    ax_l.plot(epochs, loss_g, label="generator")
    ax_l.plot(epochs, loss_rec, label="reconstruction")
    if any(v != 0.0 for v in loss_adv):
        ax_l.plot(epochs, loss_adv, label="adversarial")
    if any(v != 0.0 for v in loss_d):
        ax_l.plot(epochs, loss_d, label="discriminator")
    ax_l.set_xlabel("epoch")
    ax_l.set_ylabel("loss")
    ax_l.set_yscale("log")
    ax_l.legend(fontsize=8)
    if val_epochs:
        ax_v.plot(val_epochs, val_mse, marker="o")
        ax_v.set_yscale("log")
    ax_v.set_xlabel("epoch")
    ax_v.set_ylabel("validation MSE")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def figure_metrics(named_reports: list[tuple[str, dict]], path: str) -> None:
    """MSE and the existence scores for each evaluated row."""
    plt = _plt()
    names = [name for name, _ in named_reports]
    fig, (ax_m, ax_s) = plt.subplots(1, 2, figsize=(10, 4))
    mses = [rep["mse"] for _, rep in named_reports]
    ax_m.bar(names, mses, color="#557")
    ax_m.set_ylabel("MSE")
    ax_m.tick_params(axis="x", rotation=20)
    width = 0.2
    ticks = np.arange(len(names))
    for off, key in enumerate(("accuracy", "f1", "recall", "precision")):
        vals = [rep[key] for _, rep in named_reports]
        ax_s.bar(ticks + (off - 1.5) * width, vals, width, label=key)
    ax_s.set_xticks(ticks)
    ax_s.set_xticklabels(names, rotation=20)
    ax_s.set_ylim(0.0, 1.05)
    ax_s.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
