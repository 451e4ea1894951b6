"""Full-range BT.601 RGB <-> YCbCr conversion (the JPEG convention).

Only the luma plane is ever filtered, so the backward pass needs just the
luma column of the inverse transform, which is all ones.
"""

from typing import NamedTuple

import numpy as np

RGB_TO_YCBCR = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])

YCBCR_TO_RGB = np.array([
    [1.0, 0.0, 1.402],
    [1.0, -0.344136, -0.714136],
    [1.0, 1.772, 0.0],
])


class PlanarYCbCr(NamedTuple):
    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray


def rgb_to_ycbcr(image):
    image = np.asarray(image)
    m = RGB_TO_YCBCR.astype(image.dtype, copy=False)
    out = image @ m.T
    return PlanarYCbCr(out[..., 0], out[..., 1], out[..., 2])


def ycbcr_to_rgb_unclamped(planes):
    y, cb, cr = planes
    stacked = np.stack([y, cb, cr], axis=-1)
    return stacked @ YCBCR_TO_RGB.astype(stacked.dtype, copy=False).T


def ycbcr_to_rgb(planes):
    """Convert back to RGB, clamping to ``[0, 1]``.

    Returns ``(image, active)`` where ``active`` flags values that were not
    clamped; saturated values get zero gradient in :func:`luma_gradient`.
    """
    y, cb, cr = planes
    if not (np.shape(y) == np.shape(cb) == np.shape(cr)):
        raise ValueError("Y, Cb and Cr planes must share dimensions")
    raw = ycbcr_to_rgb_unclamped(planes)
    active = (raw >= 0.0) & (raw <= 1.0)
    return np.clip(raw, 0.0, 1.0), active


def luma_gradient(grad_rgb, clamp_mask):
    grad_rgb = np.asarray(grad_rgb)
    clamp_mask = np.asarray(clamp_mask, dtype=bool)
    if grad_rgb.shape != clamp_mask.shape or grad_rgb.shape[-1] != 3:
        raise ValueError(f"shape mismatch: grad {grad_rgb.shape}, mask {clamp_mask.shape}")
    return np.where(clamp_mask, grad_rgb, 0).sum(axis=-1)
