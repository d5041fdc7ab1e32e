"""On-the-fly line image augmentation: random affine maps and random warp grids.

Images are float arrays with 1.0 as background.  Both transforms resample
bilinearly with background fill, keep the height, and never make a line
narrower, so a transcript that fits the original width still fits.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .rng import substream

log = logging.getLogger(__name__)

KINDS = ("affine", "rwgd", "both")
MAX_SCALE_DRAWS = 16


@dataclass(frozen=True)
class AugmentSpec:
    kind: str = "both"
    rotation_deg: float = 3.0           # +- range
    shear_deg: float = 8.0              # +- range
    scale_range: tuple = (0.9, 1.1)
    translate_px: float = 2.0           # +- range, both axes
    grid_px: int = 16
    sigma_px: float = 1.2
    probability: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(float(s) for s in self.scale_range))
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}; choose from {KINDS}")
        values = (self.rotation_deg, self.shear_deg, *self.scale_range, self.translate_px,
                  self.sigma_px, self.probability)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("augmentation ranges must be finite")
        if min(self.rotation_deg, self.shear_deg, self.translate_px, self.sigma_px) < 0:
            raise ValueError("augmentation ranges must be nonnegative")
        if len(self.scale_range) != 2 or self.scale_range[0] > self.scale_range[1] or self.scale_range[1] <= 0:
            raise ValueError(f"invalid scale range {self.scale_range}")
        if abs(self.shear_deg) >= 90 or int(self.grid_px) != self.grid_px or self.grid_px < 2:
            raise ValueError("shear must be below 90 degrees and grid spacing an integer >= 2 px")
        if not 0 <= self.probability <= 1:
            raise ValueError("probability must lie in [0, 1]")

    @classmethod
    def identity(cls, kind: str = "both") -> "AugmentSpec":
        return cls(kind=kind, rotation_deg=0.0, shear_deg=0.0, scale_range=(1.0, 1.0),
                   translate_px=0.0, sigma_px=0.0)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return substream(seed, "augment")


def _check(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"expected a nonempty 2-D line image, got shape {image.shape}")
    return image


def affine_matrix(rotation_deg: float, shear_deg: float, scale: float) -> np.ndarray:
    """2x2 map in (x, y) pixel coordinates, y pointing down: rotate . shear . scale."""
    th = math.radians(rotation_deg)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    shear = np.array([[1.0, -math.tan(math.radians(shear_deg))], [0.0, 1.0]])
    return rot @ shear @ (scale * np.eye(2))


def warp_affine(image: np.ndarray, matrix: np.ndarray, shift=(0.0, 0.0), expand: bool = True) -> np.ndarray:
    """Apply ``matrix`` about the image center, then translate by ``shift`` (dx, dy).

    With ``expand`` the output is widened to hold the whole mapped image
    (never narrower than the input); otherwise the input shape is kept.
    """
    image = _check(image)
    h, w = image.shape
    c_in = np.array([(w - 1) / 2, (h - 1) / 2])
    out_w = w
    if expand:
        corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=float) - c_in
        xs = corners @ matrix.T
        out_w = max(w, int(math.ceil(xs[:, 0].max() - xs[:, 0].min())) + 1)
    c_out = np.array([(out_w - 1) / 2, (h - 1) / 2]) + np.asarray(shift, dtype=float)
    inv = np.linalg.inv(matrix)
    # input (row, col) = inv @ (q - c_out) + c_in, written as an affine map on (row, col)
    inv_rc = inv[::-1, ::-1]
    offset = c_in[::-1] - inv_rc @ c_out[::-1]
    out = ndimage.affine_transform(image.astype(np.float64), inv_rc, offset=offset,
                                   output_shape=(h, out_w), order=1, mode="constant", cval=1.0)
    return np.clip(out, 0.0, 1.0).astype(image.dtype if image.dtype.kind == "f" else np.float32)


def sample_affine(spec: AugmentSpec, rng: np.random.Generator) -> dict:
    rot = rng.uniform(-spec.rotation_deg, spec.rotation_deg)
    shear = rng.uniform(-spec.shear_deg, spec.shear_deg)
    for _ in range(MAX_SCALE_DRAWS):
        scale = rng.uniform(*spec.scale_range)
        if scale > 0:
            break
    else:
        log.warning("no positive scale in %d draws from %s; using 1.0", MAX_SCALE_DRAWS, spec.scale_range)
        scale = 1.0
    tx, ty = rng.uniform(-spec.translate_px, spec.translate_px, size=2)
    return {"rotation_deg": rot, "shear_deg": shear, "scale": scale, "tx": tx, "ty": ty}


def affine(image: np.ndarray, spec: AugmentSpec, seed) -> np.ndarray:
    """Random rotation, shear, scale and translation drawn from ``spec``'s ranges."""
    image = _check(image)
    p = sample_affine(spec, _as_rng(seed))
    if p["rotation_deg"] == 0 and p["shear_deg"] == 0 and p["scale"] == 1 and p["tx"] == 0 and p["ty"] == 0:
        return image.copy()
    m = affine_matrix(p["rotation_deg"], p["shear_deg"], p["scale"])
    return warp_affine(image, m, (p["tx"], p["ty"]))


def rwgd(image: np.ndarray, spec: AugmentSpec, seed) -> np.ndarray:
    """Random warp grid distortion.

    Control points every ``grid_px`` pixels get N(0, sigma^2) offsets in x
    and y; the dense offset field is their bilinear interpolation.
    """
    image = _check(image)
    h, w = image.shape
    g = int(spec.grid_px)
    rng = _as_rng(seed)
    if h <= g or w <= g:
        log.warning("image %dx%d is not larger than one %d px grid cell; left unchanged", h, w, g)
        return image.copy()
    ny, nx = -(-(h - 1) // g) + 1, -(-(w - 1) // g) + 1
    disp = rng.normal(0.0, 1.0, size=(2, ny, nx)) * spec.sigma_px
    if spec.sigma_px == 0:
        return image.copy()
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    grid_pos = np.stack([rows / g, cols / g])
    dy = ndimage.map_coordinates(disp[0], grid_pos, order=1, mode="nearest")
    dx = ndimage.map_coordinates(disp[1], grid_pos, order=1, mode="nearest")
    out = ndimage.map_coordinates(image.astype(np.float64), np.stack([rows + dy, cols + dx]),
                                  order=1, mode="constant", cval=1.0)
    return np.clip(out, 0.0, 1.0).astype(image.dtype if image.dtype.kind == "f" else np.float32)


def apply(image: np.ndarray, spec: AugmentSpec, seed) -> np.ndarray:
    """Augment one training image (with probability ``spec.probability``)."""
    rng = _as_rng(seed)
    if spec.probability < 1 and rng.random() >= spec.probability:
        return np.asarray(image).copy()
    out = image
    if spec.kind in ("affine", "both"):
        out = affine(out, spec, rng)
    if spec.kind in ("rwgd", "both"):
        out = rwgd(out, spec, rng)
    return out
