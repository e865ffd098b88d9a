"""sRGB <-> CIELAB conversion and the CIEDE2000 perceptual color difference.

All perceptual math in this package runs in CIELAB (D65 illuminant, 2
degree observer, the sRGB standard). The white point is taken as the
image of linear RGB (1,1,1) under the sRGB->XYZ matrix, so pure white
maps to exactly L=100, a=0, b=0 and round trips are stable.

Distances use the full CIEDE2000 formula including the G chroma
correction, the T hue weighting, and the blue-region rotation term R_T,
with parametric factors kL = kC = kH = 1.

Everything here is a pure function; arrays in, arrays out. Scalar
wrappers operate on the small color value types used at API boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# sRGB -> XYZ matrix for D65 / 2 degree observer (sRGB primaries).
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
], dtype=np.float64)

_XYZ_TO_RGB = np.array([
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
], dtype=np.float64)

# White point = image of (1,1,1); numerically the D65 reference white.
_WHITE = _RGB_TO_XYZ.sum(axis=1)

# CIE f(t) breakpoints.
_EPSILON = 216.0 / 24389.0
_KAPPA = 24389.0 / 27.0

_POW25_7 = 25.0 ** 7


@dataclass(frozen=True)
class SrgbColor:
    """8-bit sRGB color; channels are integers in [0, 255]."""

    r: int
    g: int
    b: int

    def __post_init__(self) -> None:
        for name in ("r", "g", "b"):
            v = getattr(self, name)
            if not (0 <= v <= 255):
                raise ValueError(f"channel {name}={v} outside [0, 255]")

    @classmethod
    def from_hex(cls, text: str) -> "SrgbColor":
        """Parse '#rrggbb' (case-insensitive)."""
        s = text.strip().lstrip("#")
        if len(s) != 6:
            raise ValueError(f"not a #rrggbb color: {text!r}")
        return cls(int(s[0:2], 16), int(s[2:4], 16), int(s[4:6], 16))

    def to_hex(self) -> str:
        return f"#{self.r:02x}{self.g:02x}{self.b:02x}"


@dataclass(frozen=True)
class LabColor:
    """CIELAB color; L in [0, 100], a/b real-valued opponent axes."""

    L: float
    a: float
    b: float

    def __post_init__(self) -> None:
        for name in ("L", "a", "b"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite Lab component {name}")


def srgb_array_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert 8-bit sRGB values, shape (..., 3), to CIELAB.

    Channels may be any numeric dtype; they are interpreted on the
    0..255 scale.
    """
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    linear = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB_TO_XYZ.T
    t = xyz / _WHITE
    f = np.where(t > _EPSILON, np.cbrt(t), (_KAPPA * t + 16.0) / 116.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_array_to_srgb(lab: np.ndarray) -> np.ndarray:
    """Convert CIELAB values, shape (..., 3), to 8-bit sRGB.

    Out-of-gamut values are clamped per channel; that clamp is the only
    lossy step. Returns uint8.
    """
    lab = np.asarray(lab, dtype=np.float64)
    L, a, b = lab[..., 0], lab[..., 1], lab[..., 2]
    fy = (L + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0

    def inv_f(f: np.ndarray) -> np.ndarray:
        f3 = f ** 3
        return np.where(f3 > _EPSILON, f3, (116.0 * f - 16.0) / _KAPPA)

    xr = inv_f(fx)
    yr = np.where(L > _KAPPA * _EPSILON, ((L + 16.0) / 116.0) ** 3, L / _KAPPA)
    zr = inv_f(fz)
    xyz = np.stack([xr, yr, zr], axis=-1) * _WHITE
    linear = xyz @ _XYZ_TO_RGB.T
    linear = np.clip(linear, 0.0, None)
    c = np.where(
        linear <= 0.0031308,
        12.92 * linear,
        1.055 * linear ** (1.0 / 2.4) - 0.055,
    )
    c = np.clip(c, 0.0, 1.0)
    return np.round(c * 255.0).astype(np.uint8)


def srgb_to_lab(color: SrgbColor) -> LabColor:
    """Convert one 8-bit sRGB color to CIELAB."""
    lab = srgb_array_to_lab(np.array([color.r, color.g, color.b]))
    return LabColor(float(lab[0]), float(lab[1]), float(lab[2]))


def lab_to_srgb(color: LabColor) -> SrgbColor:
    """Convert one CIELAB color back to 8-bit sRGB (gamut-clamped)."""
    rgb = lab_array_to_srgb(np.array([color.L, color.a, color.b]))
    return SrgbColor(int(rgb[0]), int(rgb[1]), int(rgb[2]))


def ciede2000_arrays(lab1: np.ndarray, lab2: np.ndarray) -> np.ndarray:
    """CIEDE2000 between broadcastable Lab arrays of shape (..., 3)."""
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    L1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    L2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    C1 = np.hypot(a1, b1)
    C2 = np.hypot(a2, b2)
    C_bar = 0.5 * (C1 + C2)
    C_bar7 = C_bar ** 7
    G = 0.5 * (1.0 - np.sqrt(C_bar7 / (C_bar7 + _POW25_7)))

    a1p = (1.0 + G) * a1
    a2p = (1.0 + G) * a2
    C1p = np.hypot(a1p, b1)
    C2p = np.hypot(a2p, b2)

    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0
    # atan2(0, 0) is defined as 0 here, matching the standard's convention.

    dLp = L2 - L1
    dCp = C2p - C1p

    prod_zero = (C1p * C2p) == 0.0
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, dh)
    dh = np.where(dh < -180.0, dh + 360.0, dh)
    dh = np.where(prod_zero, 0.0, dh)
    dHp = 2.0 * np.sqrt(C1p * C2p) * np.sin(np.radians(dh) / 2.0)

    Lbp = 0.5 * (L1 + L2)
    Cbp = 0.5 * (C1p + C2p)

    hsum = h1p + h2p
    habs = np.abs(h1p - h2p)
    hbp = np.where(habs <= 180.0, 0.5 * hsum,
                   np.where(hsum < 360.0, 0.5 * (hsum + 360.0),
                            0.5 * (hsum - 360.0)))
    hbp = np.where(prod_zero, hsum, hbp)

    T = (1.0
         - 0.17 * np.cos(np.radians(hbp - 30.0))
         + 0.24 * np.cos(np.radians(2.0 * hbp))
         + 0.32 * np.cos(np.radians(3.0 * hbp + 6.0))
         - 0.20 * np.cos(np.radians(4.0 * hbp - 63.0)))

    Sl = 1.0 + 0.015 * (Lbp - 50.0) ** 2 / np.sqrt(20.0 + (Lbp - 50.0) ** 2)
    Sc = 1.0 + 0.045 * Cbp
    Sh = 1.0 + 0.015 * Cbp * T

    Cbp7 = Cbp ** 7
    Rc = 2.0 * np.sqrt(Cbp7 / (Cbp7 + _POW25_7))
    dtheta = 30.0 * np.exp(-(((hbp - 275.0) / 25.0) ** 2))
    Rt = -np.sin(np.radians(2.0 * dtheta)) * Rc

    tL = dLp / Sl
    tC = dCp / Sc
    tH = dHp / Sh
    return np.sqrt(tL ** 2 + tC ** 2 + tH ** 2 + Rt * tC * tH)


def ciede2000(c1: LabColor, c2: LabColor) -> float:
    """CIEDE2000 distance between two Lab colors (kL = kC = kH = 1)."""
    d = ciede2000_arrays(
        np.array([c1.L, c1.a, c1.b]), np.array([c2.L, c2.a, c2.b])
    )
    return float(d)


def ciede2000_pairwise(lab: np.ndarray) -> np.ndarray:
    """Symmetric n x n CIEDE2000 distance matrix for n Lab rows."""
    lab = np.asarray(lab, dtype=np.float64)
    return ciede2000_arrays(lab[:, None, :], lab[None, :, :])
