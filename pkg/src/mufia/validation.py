"""Input validation helpers shared by the estimators and the functional core."""

import numpy as np


def check_image(image, *, name="image", dtype=None):
    """Return ``image`` as an ``(H, W, 3)`` float array.

    Values are not clamped; callers that need ``[0, 1]`` use
    :func:`check_unit_range`.
    """
    arr = np.asarray(image, dtype=dtype)
    if arr.dtype.kind not in "fiu":
        raise TypeError(f"{name} must be numeric, got dtype {arr.dtype}")
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be at least 1x1, got {arr.shape[:2]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_images(images, *, name="X", dtype=None):
    """Return a batch of images as an ``(n, H, W, 3)`` float array."""
    arr = np.asarray(images, dtype=dtype)
    if arr.dtype.kind not in "fiu":
        raise TypeError(f"{name} must be numeric, got dtype {arr.dtype}")
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ValueError(f"{name} must have shape (n, H, W, 3), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_unit_range(arr, *, name="image", atol=1e-9):
    if arr.size and (arr.min() < -atol or arr.max() > 1 + atol):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_labels(labels, n_samples, n_classes=None, *, name="y"):
    """Return integer class indices of length ``n_samples``."""
    arr = np.asarray(labels)
    if arr.ndim != 1 or arr.shape[0] != n_samples:
        raise ValueError(f"{name} must be 1-D with {n_samples} entries, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        if not np.all(arr == np.round(arr)):
            raise ValueError(f"{name} must hold integer class indices")
    elif arr.dtype.kind not in "iu":
        raise TypeError(f"{name} must hold integer class indices")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError(f"{name} contains negative class indices")
    if n_classes is not None and arr.size and arr.max() >= n_classes:
        raise ValueError(f"{name} contains class index >= {n_classes}")
    return arr


def check_block_size(height, width, block_size):
    if int(block_size) != block_size or block_size < 2:
        raise ValueError(f"block size must be an integer >= 2, got {block_size}")
    if height % block_size or width % block_size:
        raise ValueError(
            f"image of size {height}x{width} is not divisible into {block_size}x{block_size} blocks"
        )
    return int(block_size)


def check_square_matrix(arr, *, name="matrix"):
    arr = np.asarray(arr)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    return arr
