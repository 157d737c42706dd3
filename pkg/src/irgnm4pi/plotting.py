"""Image export: 8-bit PGM rasters with a min/max sidecar, and matplotlib figures."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = ["to_slice", "write_pgm", "read_pgm", "save_image", "plot_trace", "plot_psf_panel"]


def to_slice(values: np.ndarray, axis: int = 1, index: int | None = None) -> np.ndarray:
    """2-D view of a field: the array itself in 2-D, a central slice in 3-D.

    For 3-D fields ``axis`` selects the sliced axis (default the second, so
    the result keeps the lateral and optical axes).
    """
    a = np.asarray(values)
    if a.ndim == 1:
        return a[None, :]
    if a.ndim == 2:
        return a
    if a.ndim == 3:
        idx = a.shape[axis] // 2 if index is None else index
        return np.take(a, idx, axis=axis)
    raise ValueError(f"cannot display a {a.ndim}-D field")


def _suffixed(path, ext: str) -> Path:
    """``path`` with ``ext`` appended unless already present; dots in the stem are kept."""
    p = Path(path)
    return p if p.name.endswith(ext) else p.with_name(p.name + ext)


def write_pgm(path, image: np.ndarray, vmin: float | None = None,
              vmax: float | None = None) -> tuple[Path, Path]:
    """Binary 8-bit PGM, rows = first array axis; ``<stem>.colorbar.txt`` records min/max."""
    a = np.asarray(image, dtype=float)
    if a.ndim != 2:
        raise ValueError("PGM export needs a 2-D array")
    lo = float(np.min(a)) if vmin is None else float(vmin)
    hi = float(np.max(a)) if vmax is None else float(vmax)
    span = hi - lo
    scaled = np.zeros_like(a) if span <= 0 else np.clip((a - lo) / span, 0.0, 1.0)
    pix = np.round(scaled * 255).astype(np.uint8)
    p = _suffixed(path, ".pgm")
    p.parent.mkdir(parents=True, exist_ok=True)
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii")
    p.write_bytes(header + pix.tobytes())
    side = p.with_name(p.name[: -len(".pgm")] + ".colorbar.txt")
    side.write_text(f"min\t{lo!r}\nmax\t{hi!r}\nlevels\t256\n")
    return p, side


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def _figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def save_image(path, image: np.ndarray, spacing: Sequence[float], title: str = "",
               cmap: str = "gray", scale_bar_nm: float | None = None) -> Path:
    """PNG with a colorbar; the optical axis (last array axis) runs vertically."""
    plt = _figure()
    a = np.asarray(image, dtype=float)
    ext = [0, a.shape[0] * spacing[0], 0, a.shape[1] * spacing[1]]
    fig, ax = plt.subplots(figsize=(4, 4 * a.shape[1] / max(a.shape[0], 1) + 0.5))
    im = ax.imshow(a.T, origin="lower", extent=ext, cmap=cmap, aspect="equal")
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_xlabel("lateral (nm)")
    ax.set_ylabel("optical axis (nm)")
    if scale_bar_nm:
        x0, y0 = 0.05 * ext[1], 0.05 * ext[3]
        ax.plot([x0, x0 + scale_bar_nm], [y0, y0], color="w", lw=3)
        ax.text(x0, y0 * 1.6, f"{scale_bar_nm:g} nm", color="w", fontsize=8)
    if title:
        ax.set_title(title)
    p = _suffixed(path, ".png")
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(p, dpi=100, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return p


def plot_trace(path, columns: dict[str, np.ndarray], title: str = "") -> Path:
    """Log-scale curves over the iteration index (residual, errors, ...)."""
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, vals in columns.items():
        v = np.asarray(vals, dtype=float)
        n = np.arange(v.size)
        ok = np.isfinite(v) & (v > 0)
        if ok.any():
            ax.semilogy(n[ok], v[ok], marker="o", ms=3, label=name)
    ax.set_xlabel("iteration n")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    p = _suffixed(path, ".png")
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(p, dpi=100, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return p


def plot_rate(path, abscissa, values, slope: float, intercept: float,
              xlabel: str, ylabel: str) -> Path:
    """Log-log scatter with the fitted line."""
    plt = _figure()
    x, y = np.asarray(abscissa, float), np.asarray(values, float)
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(x, y, "o", ms=4, label="measured")
    ax.loglog(x, np.exp(intercept) * x ** slope, "-", label=f"fit, slope {slope:.3f}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    p = _suffixed(path, ".png")
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(p, dpi=100, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return p


def plot_psf_panel(path, images: Sequence[np.ndarray], labels: Sequence[str],
                   spacing: Sequence[float], scale_bar_nm: float | None = None) -> Path:
    """Side-by-side psf slices sharing one grey scale."""
    plt = _figure()
    lo = min(float(np.min(a)) for a in images)
    hi = max(float(np.max(a)) for a in images)
    fig, axes = plt.subplots(1, len(images), figsize=(3 * len(images), 4), squeeze=False)
    for ax, a, lab in zip(axes[0], images, labels):
        ext = [0, a.shape[0] * spacing[0], 0, a.shape[1] * spacing[1]]
        im = ax.imshow(np.asarray(a).T, origin="lower", extent=ext, cmap="gray", vmin=lo, vmax=hi)
        ax.set_title(lab)
        ax.set_xticks([])
        ax.set_yticks([])
        if scale_bar_nm:
            x0, y0 = 0.05 * ext[1], 0.05 * ext[3]
            ax.plot([x0, x0 + scale_bar_nm], [y0, y0], color="w", lw=3)
    fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8)
    p = _suffixed(path, ".png")
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(p, dpi=100, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return p
