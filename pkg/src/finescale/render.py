"""Choropleth SVG output: one path per region, darker fill for higher values."""

from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np

from finescale.geo import Partition

N_RAMP_STEPS = 256
# single-hue blue ramp endpoints (light -> dark)
_LIGHT = np.array([239, 243, 255])
_DARK = np.array([8, 48, 107])


def ramp_color(t: float) -> str:
    """Hex color at normalized position t in [0, 1], quantized to 256 steps."""
    step = min(int(np.clip(t, 0.0, 1.0) * N_RAMP_STEPS), N_RAMP_STEPS - 1)
    u = step / (N_RAMP_STEPS - 1)
    rgb = np.round(_LIGHT + u * (_DARK - _LIGHT)).astype(int)
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _path_d(geometry, sx, sy, tx, ty) -> str:
    parts = []
    for rings in geometry:
        for ring in rings:
            r = np.asarray(ring, dtype=float)
            pts = [f"{x * sx + tx:.4f},{y * sy + ty:.4f}" for x, y in r]
            parts.append("M" + " L".join(pts) + " Z")
    return " ".join(parts)


def choropleth_svg(partition: Partition, values, width: int = 640) -> str:
    """Render polygons filled on a min-max-normalized sequential ramp."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != len(partition):
        raise ValueError("one value per region required")
    lo, hi = float(values.min()), float(values.max())
    norm = np.zeros_like(values) if hi == lo else (values - lo) / (hi - lo)

    xs, ys = [], []
    for r in partition.regions:
        for rings in r.geometry:
            for ring in rings:
                arr = np.asarray(ring, dtype=float)
                xs.extend(arr[:, 0])
                ys.extend(arr[:, 1])
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    span_x = (x1 - x0) or 1.0
    span_y = (y1 - y0) or 1.0
    height = int(round(width * span_y / span_x))
    sx = width / span_x
    sy = -height / span_y  # flip: SVG y grows downward
    tx, ty = -x0 * sx, height - y0 * sy

    svg = ET.Element(
        "svg",
        {
            "xmlns": "http://www.w3.org/2000/svg",
            "version": "1.1",
            "width": str(width),
            "height": str(height),
            "viewBox": f"0 0 {width} {height}",
        },
    )
    for region, t in zip(partition.regions, norm):
        ET.SubElement(
            svg,
            "path",
            {
                "id": region.id,
                "d": _path_d(region.geometry, sx, sy, tx, ty),
                "fill": ramp_color(float(t)),
                "stroke": "#ffffff",
                "stroke-width": "0.5",
            },
        )
    return ET.tostring(svg, encoding="unicode", xml_declaration=True)
