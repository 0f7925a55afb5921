"""Color-space conversions and material measurement extraction.

Material properties are read off the bispectral reflectance color: composition
is its HSV hue, concentration its BT.601 luminance, and the shape-detail term
its HSV value component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from matplotlib import colors as _mcolors

YUV_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class MaterialSample:
    """Per-vertex material measurements, each in the unit interval."""
    composition: float
    concentration: float
    detail: float

    def __post_init__(self):
        for name in ("composition", "concentration", "detail"):
            x = getattr(self, name)
            if not 0.0 <= x <= 1.0:
                raise ValueError(f"{name} = {x} outside [0, 1]")


@dataclass(frozen=True)
class FluorescenceParams:
    """Coefficients of the linear emission model I_f = k*I_o*phi*eps*b*c."""
    k: float = 1.0
    i_o: float = 1.0
    phi: float = 1.0
    epsilon: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        for name in ("k", "i_o", "phi", "epsilon", "b"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.phi > 1.0:
            raise ValueError("quantum yield phi must be <= 1")


def fluorescent_intensity(params, c):
    """Emitted fluorescent intensity; linear in concentration c."""
    return params.k * params.i_o * params.phi * params.epsilon * params.b * np.asarray(c, dtype=np.float64)


def rgb_to_hsv(rgb):
    """RGB -> HSV on triples or (N, 3) arrays, hexcone convention, h=0 for gray."""
    arr = np.asarray(rgb, dtype=np.float64)
    out = _mcolors.rgb_to_hsv(arr)
    return out


def hsv_to_rgb(hsv):
    arr = np.asarray(hsv, dtype=np.float64)
    return _mcolors.hsv_to_rgb(arr)


def rgb_to_yuv_luminance(rgb):
    """BT.601 luminance Y = 0.299 r + 0.587 g + 0.114 b."""
    arr = np.asarray(rgb, dtype=np.float64)
    return arr @ YUV_WEIGHTS


def circular_hue_distance(h1, h2):
    """Wraparound-aware hue distance: min(|d|, 1 - |d|)."""
    d = np.abs(np.asarray(h1, dtype=np.float64) - np.asarray(h2, dtype=np.float64))
    return np.minimum(d, 1.0 - d)


def circular_mean(h, weights=None):
    """Mean of circular values in [0, 1)."""
    ang = 2.0 * np.pi * np.asarray(h, dtype=np.float64)
    if weights is None:
        s, c = np.sin(ang).mean(), np.cos(ang).mean()
    else:
        w = np.asarray(weights, dtype=np.float64)
        tot = w.sum()
        if tot <= 0:
            raise ValueError("weights must have positive sum")
        s, c = (w * np.sin(ang)).sum() / tot, (w * np.cos(ang)).sum() / tot
    return float(np.arctan2(s, c) / (2.0 * np.pi) % 1.0)


def extract_measurements(mesh, color_attr="bispectral_rgb"):
    """Append composition/concentration/value channels computed from the
    bispectral color channel.  Pure and idempotent; returns the mesh."""
    if color_attr not in mesh.attributes:
        raise KeyError(f"mesh has no '{color_attr}' channel")
    rgb = np.asarray(mesh.attributes[color_attr], dtype=np.float64)
    hsv = rgb_to_hsv(rgb)
    mesh.set_attribute("composition", hsv[:, 0].copy())
    mesh.set_attribute("concentration", rgb_to_yuv_luminance(rgb))
    mesh.set_attribute("value", hsv[:, 2].copy())
    return mesh
