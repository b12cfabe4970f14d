"""Rendering of interpolated maps: raw P6 pixmaps and matplotlib figures.

The pixmap writer is self-contained and byte-deterministic: a linear color
ramp between fixed stops, gray for unserved cells, image row 0 at the
largest y (map-style orientation). Scale limits and the ramp are written to
a sidecar text file next to the image.
"""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from canyonwave.mapping import Raster

# Linear ramp stops (position in [0,1], rgb 0-255).
COLOR_STOPS = (
    (0.00, (20, 24, 88)),
    (0.33, (0, 156, 168)),
    (0.66, (233, 213, 2)),
    (1.00, (208, 22, 22)),
)
UNSERVED_RGB = (128, 128, 128)


def _ramp(t: np.ndarray) -> np.ndarray:
    """Map t in [0,1] to RGB via piecewise-linear interpolation of the stops."""
    t = np.clip(t, 0.0, 1.0)
    rgb = np.zeros(t.shape + (3,))
    for (p0, c0), (p1, c1) in zip(COLOR_STOPS[:-1], COLOR_STOPS[1:]):
        mask = (t >= p0) & (t <= p1)
        local = (t[mask] - p0) / (p1 - p0)
        for ch in range(3):
            rgb[mask, ch] = c0[ch] + local * (c1[ch] - c0[ch])
    return np.round(rgb).astype(np.uint8)


def write_ppm(raster: Raster, path, config_hash: str = "") -> None:
    """Binary P6 pixmap of the raster plus a `<path>.txt` sidecar."""
    values = raster.values
    finite = values[~np.isnan(values)]
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 0.0
    span = hi - lo
    t = (values - lo) / span if span > 0.0 else np.zeros_like(values)

    pixels = _ramp(np.nan_to_num(t, nan=0.0))
    pixels[np.isnan(values)] = UNSERVED_RGB
    pixels = pixels[::-1, :, :]  # row 0 of the image = largest y

    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n")
        fh.write(f"# config_hash={config_hash}\n".encode())
        fh.write(f"{w} {h}\n255\n".encode())
        fh.write(pixels.tobytes())

    stops = ", ".join(f"{p:.2f}->rgb{c}" for p, c in COLOR_STOPS)
    with open(f"{path}.txt", "w") as fh:
        fh.write(f"quantity: {raster.quantity}\n")
        fh.write(f"min: {lo!r}\n")
        fh.write(f"max: {hi!r}\n")
        fh.write("scale: linear\n")
        fh.write(f"color_stops: {stops}\n")
        fh.write(f"unserved_rgb: {UNSERVED_RGB}\n")
        fh.write("orientation: image row 0 at maximum y\n")
        fh.write(f"config_hash: {config_hash}\n")


_UNIT_LABEL = {"rate": "rate [bits/s]", "energy-efficiency": "energy efficiency [bits/J]"}


def render_heatmap_png(raster: Raster, path, title: str = "", scene=None, config_hash: str = "") -> None:
    """Matplotlib rendering of the raster with colorbar and BS markers."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    extent = (
        float(raster.x_coords[0]),
        float(raster.x_coords[-1]),
        float(raster.y_coords[0]),
        float(raster.y_coords[-1]),
    )
    im = ax.imshow(
        raster.values, origin="lower", extent=extent, aspect="equal",
        cmap="viridis", interpolation="nearest",
    )
    fig.colorbar(im, ax=ax, label=_UNIT_LABEL.get(raster.quantity, raster.quantity))
    if scene is not None:
        for b in scene.buildings:
            ax.add_patch(
                plt.Rectangle(
                    (b.min_x, b.min_y), b.max_x - b.min_x, b.max_y - b.min_y,
                    fill=False, edgecolor="black", linewidth=0.8,
                )
            )
        for o in scene.obstacles:
            x0, y0, _, x1, y1, _ = o.box
            ax.add_patch(
                plt.Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False,
                              edgecolor="dimgray", linestyle="--", linewidth=0.8)
            )
        bx = [b.position[0] for b in scene.bases]
        by = [b.position[1] for b in scene.bases]
        ax.plot(bx, by, "^", color="lime", markeredgecolor="black", markersize=9, label="BS")
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata={"Software": f"config_hash={config_hash}"})
    plt.close(fig)
