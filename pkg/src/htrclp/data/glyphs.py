"""Stroke skeletons for the two built-in hands.

Glyph coordinates are in em units with the baseline at y=0 and y pointing
up.  A glyph is ``(advance_width, strokes)`` where each stroke is an (n, 2)
polyline.  Hand "A" is a round upright script; hand "B" uses angular bowls,
a taller x-height, narrower letters and a few alternative letter forms
(two-storey a, looped g, hooked y...).
"""
from __future__ import annotations

import math

import numpy as np

LETTERS = "abcdefghijklmnopqrstuvwxyz"


def _arc(cx, cy, rx, ry, a0, a1, n):
    ts = np.linspace(math.radians(a0), math.radians(a1), n)
    return np.stack([cx + rx * np.cos(ts), cy + ry * np.sin(ts)], axis=1)


def _seg(*pts):
    return np.asarray(pts, dtype=float)


def _glyphs(xh: float, asc: float, desc: float, n: int, narrow: float, variant: str) -> dict:
    r = xh / 2
    w = 0.5 * narrow
    rx = w / 2
    bowl = lambda cx: _arc(cx, r, rx, r, 0, 360, n + 1)  # noqa: E731
    arch = lambda x0, x1: _arc((x0 + x1) / 2, xh - r * 0.8, (x1 - x0) / 2, r * 0.8, 180, 0, n // 2 + 2)  # noqa: E731
    g = {}
    if variant == "A":
        g["a"] = (w, [_arc(rx, r, rx, r, 20, 380, n + 1), _seg((w, xh), (w, 0))])
        g["g"] = (w, [bowl(rx), _seg((w, xh), (w, desc * 0.6)),
                      _arc(rx, desc * 0.6, rx, -desc * 0.4, 0, -180, n // 2 + 2)])
        g["y"] = (w, [_seg((0, xh), (w / 2, 0.03)), _seg((w, xh), (w * 0.15, desc))])
        g["k"] = (w * 0.9, [_seg((0, asc), (0, 0)), _seg((w * 0.8, xh), (0, xh * 0.4)),
                            _seg((w * 0.2, xh * 0.52), (w * 0.9, 0))])
        g["t"] = (w * 0.7, [_seg((w * 0.3, asc * 0.85), (w * 0.3, 0.1)),
                            _arc(w * 0.5, 0.1, w * 0.2, 0.1, 180, 270, 3), _seg((0, xh), (w * 0.7, xh))])
    else:
        g["a"] = (w, [_arc(rx, r * 0.75, rx, r * 0.75, 90, 450, n + 1),
                      _arc(rx, xh * 0.85, rx, xh * 0.25, 160, 0, n // 2 + 2), _seg((w, xh * 0.85), (w, 0))])
        g["g"] = (w, [_arc(rx, xh * 0.7, rx * 0.8, xh * 0.3, 0, 360, n + 1),
                      _seg((rx, xh * 0.4), (rx, xh * 0.15)),
                      _arc(rx, desc * 0.4, rx, xh * 0.55 + desc * -0.1, 90, 450, n + 1)])
        g["y"] = (w, [_seg((0, xh), (0, xh * 0.3), (w * 0.3, 0), (w, xh * 0.2)),
                      _seg((w, xh), (w, desc * 0.5), (w * 0.3, desc), (0, desc * 0.7))])
        g["k"] = (w * 0.9, [_seg((0, asc), (0, 0)), _seg((0, xh * 0.35), (w * 0.6, xh), (w * 0.7, xh * 0.7),
                                                        (0, xh * 0.35)), _seg((w * 0.35, xh * 0.45), (w * 0.9, 0))])
        g["t"] = (w * 0.7, [_seg((w * 0.3, asc * 0.75), (w * 0.3, 0)), _seg((0, xh * 0.9), (w * 0.75, xh * 0.9))])
    g["b"] = (w, [_seg((0, asc), (0, 0)), bowl(rx)])
    g["c"] = (w * 0.9, [_arc(rx, r, rx, r, 45, 315, n)])
    g["d"] = (w, [bowl(rx), _seg((w, asc), (w, 0))])
    g["e"] = (w, [_seg((0, r), (w, r)), _arc(rx, r, rx, r, 0, 320, n + 1)])
    g["f"] = (w * 0.7, [_seg((w * 0.25, 0), (w * 0.25, asc * 0.80)),
                        _arc(w * 0.5, asc * 0.80, w * 0.25, asc * 0.12, 180, 20, n // 2 + 2),
                        _seg((0, xh), (w * 0.6, xh))])
    g["h"] = (w, [_seg((0, asc), (0, 0)), arch(0, w), _seg((w, xh - r * 0.8), (w, 0))])
    g["i"] = (w * 0.35, [_seg((w * 0.15, xh), (w * 0.15, 0)), _seg((w * 0.15, xh + 0.17), (w * 0.15, xh + 0.22))])
    g["j"] = (w * 0.5, [_seg((w * 0.35, xh), (w * 0.35, desc * 0.5)),
                        _arc(w * 0.1, desc * 0.5, w * 0.25, -desc * 0.5, 0, -150, n // 2 + 2),
                        _seg((w * 0.35, xh + 0.17), (w * 0.35, xh + 0.22))])
    g["l"] = (w * 0.35, [_seg((w * 0.15, asc), (w * 0.15, 0))])
    g["m"] = (w * 1.45, [_seg((0, xh), (0, 0)), arch(0, w * 0.72), _seg((w * 0.72, xh - r * 0.8), (w * 0.72, 0)),
                         arch(w * 0.72, w * 1.45), _seg((w * 1.45, xh - r * 0.8), (w * 1.45, 0))])
    g["n"] = (w, [_seg((0, xh), (0, 0)), arch(0, w), _seg((w, xh - r * 0.8), (w, 0))])
    g["o"] = (w, [bowl(rx)])
    g["p"] = (w, [_seg((0, xh), (0, desc)), bowl(rx)])
    g["q"] = (w, [bowl(rx), _seg((w, xh), (w, desc))])
    g["r"] = (w * 0.7, [_seg((0, xh), (0, 0)), _arc(w * 0.45, xh * 0.55, w * 0.45, xh * 0.45, 180, 60, n // 2 + 2)])
    g["s"] = (w * 0.85, [np.concatenate([_arc(w * 0.42, xh * 0.75, w * 0.4, xh * 0.25, 20, 270, n // 2 + 2),
                                         _arc(w * 0.42, xh * 0.25, w * 0.4, xh * 0.25, 90, -160, n // 2 + 2)])])
    g["u"] = (w, [np.concatenate([_seg((0, xh)), _arc(rx, r * 0.9, rx, r * 0.9, 180, 360, n // 2 + 2)]),
                  _seg((w, xh), (w, 0))])
    g["v"] = (w, [_seg((0, xh), (w / 2, 0), (w, xh))])
    g["w"] = (w * 1.4, [_seg((0, xh), (w * 0.35, 0), (w * 0.7, xh * 0.7), (w * 1.05, 0), (w * 1.4, xh))])
    g["x"] = (w * 0.9, [_seg((0, xh), (w * 0.9, 0)), _seg((w * 0.9, xh), (0, 0))])
    g["z"] = (w * 0.9, [_seg((0, xh), (w * 0.9, xh), (0, 0), (w * 0.9, 0))])
    g[" "] = (w * 0.8, [])
    return g


ATLASES = {
    "A": _glyphs(xh=0.48, asc=0.92, desc=-0.32, n=14, narrow=1.0, variant="A"),
    "B": _glyphs(xh=0.56, asc=0.92, desc=-0.30, n=5, narrow=0.85, variant="B"),
}


def atlas(name: str) -> dict:
    try:
        return ATLASES[name]
    except KeyError:
        raise ValueError(f"unknown glyph atlas {name!r}; available: {sorted(ATLASES)}") from None


def atlas_charset(name: str) -> str:
    return "".join(sorted(atlas(name)))
