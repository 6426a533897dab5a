"""55-color NES-style palette and perceptual (CIELAB) nearest-color quantization.

The palette ships as a versioned data file; token ids elsewhere in the
package depend on the file's line order, so the file must never be
reordered, only replaced wholesale with a new version.
"""

from dataclasses import dataclass
from importlib import resources

import numpy as np

PALETTE_SIZE = 55

# D65 reference white (2 degree observer).
_REF_WHITE = np.array([0.95047, 1.00000, 1.08883])

_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])


def rgb_to_lab(rgb):
    """Convert 8-bit sRGB values to CIE L*a*b* (D65).

    Accepts a single (r, g, b) triple or an array whose last axis has
    size 3; returns floats of the same leading shape.
    """
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.shape[-1] != 3:
        raise ValueError("last axis must hold 3 channels")
    c = arr / 255.0
    # sRGB gamma expansion
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB_TO_XYZ.T
    t = xyz / _REF_WHITE
    eps = 0.008856
    f = np.where(t > eps, np.cbrt(t), 7.787 * t + 16.0 / 116.0)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    lab = np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)
    return lab


@dataclass(frozen=True)
class Palette:
    """Ordered color table; index == token value offset for pixel tokens."""

    rgb: np.ndarray  # (55, 3) uint8
    lab: np.ndarray  # (55, 3) float64

    def __post_init__(self):
        if self.rgb.shape != (PALETTE_SIZE, 3):
            raise ValueError(f"palette must hold exactly {PALETTE_SIZE} colors")
        if len({tuple(c) for c in self.rgb.tolist()}) != PALETTE_SIZE:
            raise ValueError("palette colors must be pairwise distinct")

    def __len__(self):
        return PALETTE_SIZE


def load_palette(path=None) -> Palette:
    """Load the palette data file (`index R G B` per line, 55 lines)."""
    if path is None:
        text = resources.files("pxby.data").joinpath("nes_palette_55.txt").read_text()
    else:
        with open(path) as f:
            text = f.read()
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        idx, r, g, b = (int(v) for v in line.split())
        rows.append((idx, r, g, b))
    rows.sort()
    if [i for i, *_ in rows] != list(range(PALETTE_SIZE)):
        raise ValueError("palette file must enumerate indices 0..54 exactly")
    rgb = np.array([c[1:] for c in rows], dtype=np.uint8)
    return Palette(rgb=rgb, lab=rgb_to_lab(rgb))


def nearest_palette_index(rgb, palette: Palette) -> int:
    """Index of the perceptually nearest palette color (CIE76 distance).

    Exact distance ties resolve to the lowest index.
    """
    lab = rgb_to_lab(np.asarray(rgb, dtype=np.float64))
    d2 = np.sum((palette.lab - lab) ** 2, axis=1)
    return int(np.argmin(d2))  # argmin takes the first (lowest) index on ties


def quantize_frames(frames, palette: Palette):
    """Map a T x H x W x 3 stack of 8-bit RGB frames to palette indices."""
    arr = np.asarray(frames)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError("expected a T x H x W x 3 array")
    if arr.size == 0:
        raise ValueError("empty frame stack")
    lab = rgb_to_lab(arr.astype(np.float64))  # (T,H,W,3)
    # (T,H,W,1,3) - (55,3) -> squared distance over the color axis
    d2 = np.sum((lab[..., None, :] - palette.lab) ** 2, axis=-1)
    return np.argmin(d2, axis=-1).astype(np.int64)


def indices_to_rgb(indices, palette: Palette):
    """Expand palette indices back to their RGB triples."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= PALETTE_SIZE):
        raise ValueError("not a palette index")
    return palette.rgb[idx]
