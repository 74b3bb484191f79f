"""Word-image preprocessing and augmentation.

Images are 2-D grayscale arrays with intensities in ``[0, 255]`` (ink dark,
paper white). Augmentations run on raw crops before resizing and return
float64 arrays of the same shape.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

CANVAS_HEIGHT = 50
CANVAS_WIDTH = 200
WHITE = 255.0

KINDS = ("cutout_h", "cutout_v", "gaussian_noise", "shift_scale_rotate",
         "optical_distortion", "grid_distortion", "affine_jitter")


# -- reshape and normalize ----------------------------------------------------

def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic linear-interpolation weights, half-pixel centers."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize(image, height: int, width: int) -> np.ndarray:
    """Bilinear resample to ``(height, width)`` without preserving aspect."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {image.shape}")
    rows = _interp_matrix(image.shape[0], height)
    cols = _interp_matrix(image.shape[1], width)
    return rows @ image @ cols.T


def resize_to_canvas(image) -> np.ndarray:
    return resize(image, CANVAS_HEIGHT, CANVAS_WIDTH)


def normalize(image) -> np.ndarray:
    """Map intensities ``[0, 255]`` onto ``[-1, 1]``."""
    return np.asarray(image, dtype=np.float64) / 127.5 - 1.0


def preprocess(image) -> np.ndarray:
    """Raw crop -> normalized 50x200 network input."""
    return normalize(np.clip(resize_to_canvas(image), 0.0, 255.0))


# -- sampling helpers ---------------------------------------------------------

def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def remap(image, rows, cols) -> np.ndarray:
    """Bilinear sample ``image`` at fractional ``(rows, cols)``, white outside."""
    return ndimage.map_coordinates(np.asarray(image, dtype=np.float64), [rows, cols],
                                   order=1, mode="grid-constant", cval=WHITE)


def _warp(image, dy, dx):
    image = np.asarray(image, dtype=np.float64)
    yy, xx = np.indices(image.shape, dtype=np.float64)
    return remap(image, yy + dy, xx + dx)


# -- augmentations -------------------------------------------------------------

def cutout(image, orientation: str = "horizontal", count=(1, 3),
           frac=(0.05, 0.2), seed=None) -> np.ndarray:
    """Black out random bands.

    Horizontal bands span the full width with a thickness drawn as a
    fraction of the height; vertical bands are the transpose. ``count`` and
    ``frac`` are inclusive ``(low, high)`` ranges.
    """
    rng = _rng(seed)
    out = np.array(image, dtype=np.float64)
    horizontal = orientation in ("horizontal", "h")
    if not horizontal and orientation not in ("vertical", "v"):
        raise ValueError(f"unknown orientation {orientation!r}")
    span = out.shape[0] if horizontal else out.shape[1]
    n = int(rng.integers(count[0], count[1] + 1))
    for _ in range(n):
        size = int(round(rng.uniform(frac[0], frac[1]) * span))
        size = min(max(size, 1), span)
        start = int(rng.integers(0, span - size + 1))
        if horizontal:
            out[start:start + size, :] = 0.0
        else:
            out[:, start:start + size] = 0.0
    return out


def gaussian_noise(image, sigma: float, seed=None) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return image.copy()
    noise = _rng(seed).normal(0.0, sigma, size=image.shape)
    return np.clip(image + noise, 0.0, 255.0)


def shift_scale_rotate(image, shift=(0.0, 0.0), scale: float = 1.0,
                       angle: float = 0.0) -> np.ndarray:
    """Affine warp about the image center.

    ``shift`` is ``(dy, dx)`` as fractions of height and width (a scalar
    applies to both); ``angle`` is in degrees, counter-clockwise.
    """
    image = np.asarray(image, dtype=np.float64)
    if np.isscalar(shift):
        shift = (shift, shift)
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(angle)
    cos, sin = math.cos(theta), math.sin(theta)
    yy, xx = np.indices(image.shape, dtype=np.float64)
    # inverse map: output pixel -> source pixel
    y = yy - cy - shift[0] * h
    x = xx - cx - shift[1] * w
    src_x = (cos * x - sin * y) / scale + cx
    src_y = (sin * x + cos * y) / scale + cy
    return remap(image, src_y, src_x)


def optical_field(shape, k: float):
    """Radial lens displacement ``r' = r (1 + k r^2)`` in normalized radius."""
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.indices(shape, dtype=np.float64)
    norm = max(cy, cx, 1.0)
    ny, nx = (yy - cy) / norm, (xx - cx) / norm
    factor = k * (nx * nx + ny * ny)
    return ny * factor * norm, nx * factor * norm


def optical_distortion(image, k: float) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if k == 0:
        return image.copy()
    return _warp(image, *optical_field(image.shape, k))


def _interpolate_knots(knots, shape):
    """Bilinearly spread a coarse knot grid over the full image."""
    gy = np.linspace(0, knots.shape[0] - 1, shape[0])
    gx = np.linspace(0, knots.shape[1] - 1, shape[1])
    yy, xx = np.meshgrid(gy, gx, indexing="ij")
    return ndimage.map_coordinates(knots, [yy, xx], order=1, mode="nearest")


def grid_field(shape, cells: int, magnitude: float, seed=None):
    """Uniform random knot offsets in ``[-magnitude, magnitude]`` on a cell grid."""
    rng = _rng(seed)
    knots = rng.uniform(-magnitude, magnitude, size=(2, cells + 1, cells + 1))
    knots[:, [0, -1], :] = 0.0  # pin the border so the word stays in frame
    knots[:, :, [0, -1]] = 0.0
    return _interpolate_knots(knots[0], shape), _interpolate_knots(knots[1], shape)


def grid_distortion(image, cells: int = 4, magnitude: float = 8.0, seed=None) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if magnitude == 0:
        return image.copy()
    return _warp(image, *grid_field(image.shape, cells, magnitude, seed))


def jitter_field(shape, grid_step: int, sigma: float, seed=None):
    """Gaussian offsets on knots every ``grid_step`` pixels, clipped at 3 sigma."""
    rng = _rng(seed)
    ny = max(2, int(math.ceil((shape[0] - 1) / grid_step)) + 1)
    nx = max(2, int(math.ceil((shape[1] - 1) / grid_step)) + 1)
    knots = np.clip(rng.normal(0.0, sigma, size=(2, ny, nx)), -3 * sigma, 3 * sigma)
    return _interpolate_knots(knots[0], shape), _interpolate_knots(knots[1], shape)


def affine_jitter(image, grid_step: int = 25, sigma: float = 3.0, seed=None) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if sigma == 0:
        return image.copy()
    return _warp(image, *jitter_field(image.shape, grid_step, sigma, seed))


# -- policies ------------------------------------------------------------------

DEFAULT_PARAMS = {
    "cutout_h": {"count": [1, 3], "frac": [0.05, 0.2]},
    "cutout_v": {"count": [1, 3], "frac": [0.05, 0.2]},
    "gaussian_noise": {"sigma": [5.0, 15.0]},
    "shift_scale_rotate": {"shift": 0.06, "scale": [0.9, 1.1], "angle": 5.0},
    "optical_distortion": {"k": 0.05},
    "grid_distortion": {"cells": 4, "magnitude": 8.0},
    "affine_jitter": {"grid_step": 25, "sigma": 3.0},
}

_LIMITS = {"frac": (0.0, 1.0), "shift": (0.0, 0.5), "angle": (0.0, 180.0),
           "k": (0.0, 1.0), "magnitude": (0.0, 50.0), "sigma": (0.0, 100.0)}


@dataclass
class AugmentPolicy:
    """One augmentation kind, its parameter ranges and firing probability.

    Scalar ranges such as ``shift``, ``angle``, ``k`` and ``magnitude`` are
    symmetric bounds; a draw lands uniformly in ``[-v, v]`` (``[0, v]`` for
    ``magnitude``). Pairs are explicit ``[low, high]`` ranges.
    """

    kind: str
    params: dict = field(default_factory=dict)
    probability: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        self.params = {**DEFAULT_PARAMS[self.kind], **self.params}
        for name, value in self.params.items():
            if name in _LIMITS:
                lo, hi = _LIMITS[name]
                for v in np.atleast_1d(value):
                    if not lo <= abs(v) <= hi:
                        raise ValueError(f"{self.kind}.{name}={value} outside [{lo}, {hi}]")

    def apply(self, image, rng: np.random.Generator) -> np.ndarray:
        p = self.params
        if self.kind in ("cutout_h", "cutout_v"):
            return cutout(image, "horizontal" if self.kind == "cutout_h" else "vertical",
                          count=p["count"], frac=p["frac"], seed=rng)
        if self.kind == "gaussian_noise":
            return gaussian_noise(image, _draw(rng, p["sigma"]), seed=rng)
        if self.kind == "shift_scale_rotate":
            shift = (_draw_sym(rng, p["shift"]), _draw_sym(rng, p["shift"]))
            return shift_scale_rotate(image, shift=shift, scale=_draw(rng, p["scale"]),
                                      angle=_draw_sym(rng, p["angle"]))
        if self.kind == "optical_distortion":
            return optical_distortion(image, _draw_sym(rng, p["k"]))
        if self.kind == "grid_distortion":
            return grid_distortion(image, int(p["cells"]),
                                   _draw(rng, [0.0, p["magnitude"]]), seed=rng)
        return affine_jitter(image, int(p["grid_step"]),
                             _draw(rng, [0.0, p["sigma"]]), seed=rng)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params, "probability": self.probability}


def _draw(rng, value) -> float:
    if np.isscalar(value):
        return float(value)
    lo, hi = value
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _draw_sym(rng, bound) -> float:
    bound = float(bound)
    return float(rng.uniform(-bound, bound)) if bound > 0 else 0.0


def default_policies(probability: float = 0.5) -> list[AugmentPolicy]:
    return [AugmentPolicy(kind, probability=probability) for kind in KINDS]


def identity_policies() -> list[AugmentPolicy]:
    """Every kind with its null parameters; always fires and changes nothing."""
    null = {
        "cutout_h": {"count": [0, 0]},
        "cutout_v": {"count": [0, 0]},
        "gaussian_noise": {"sigma": [0.0, 0.0]},
        "shift_scale_rotate": {"shift": 0.0, "scale": [1.0, 1.0], "angle": 0.0},
        "optical_distortion": {"k": 0.0},
        "grid_distortion": {"magnitude": 0.0},
        "affine_jitter": {"sigma": 0.0},
    }
    return [AugmentPolicy(kind, null[kind], probability=1.0) for kind in KINDS]


def compose_augmentations(policies, image, seed=None) -> np.ndarray:
    """Apply ``policies`` in order, each firing independently with its probability."""
    rng = _rng(seed)
    out = np.asarray(image, dtype=np.float64)
    for policy in policies:
        if rng.random() < policy.probability:
            out = policy.apply(out, rng)
    return out


def load_policies(path) -> list[AugmentPolicy]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValueError(f"{path}: policy file must hold a JSON list")
    return [AugmentPolicy(item["kind"], item.get("params", {}), item.get("probability", 0.5))
            for item in raw]


def save_policies(policies, path) -> None:
    Path(path).write_text(json.dumps([p.to_dict() for p in policies], indent=2),
                          encoding="utf-8")
