"""Filter-bank statistics, heatmap rendering and report summaries."""

import math

import numpy as np

from .validation import check_image

# diverging colormap anchors at -1, 0, +1
ATTENUATE_RGB = np.array([0.8, 0.1, 0.0])
UNCHANGED_RGB = np.array([0.0, 0.7, 0.2])
AMPLIFY_RGB = np.array([0.5, 0.2, 0.7])

UNCHANGED_TOLERANCE = 0.05


def median_filter_bank(filters):
    """Elementwise median; an even count averages the two middle values."""
    filters = [np.asarray(f, dtype=np.float64) for f in filters]
    if not filters:
        raise ValueError("need at least one filter bank")
    shapes = {f.shape for f in filters}
    if len(shapes) != 1:
        raise ValueError(f"filter banks have mixed sizes: {sorted(shapes)}")
    shape = shapes.pop()
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ValueError(f"filter banks must be square, got {shape}")
    return np.median(np.stack(filters), axis=0)


def heatmap_transform(q):
    return np.tanh(np.asarray(q, dtype=np.float64) - 1.0)


def colormap(values):
    """Map values in ``[-1, 1]`` to RGB by piecewise-linear interpolation."""
    t = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)[..., None]
    neg = UNCHANGED_RGB + (UNCHANGED_RGB - ATTENUATE_RGB) * t
    pos = UNCHANGED_RGB + (AMPLIFY_RGB - UNCHANGED_RGB) * t
    return np.where(t < 0, neg, pos)


def render_heatmap(matrix, cell_pixels=16):
    if cell_pixels < 1:
        raise ValueError(f"cell_pixels must be >= 1, got {cell_pixels}")
    rgb = colormap(matrix)
    return np.repeat(np.repeat(rgb, cell_pixels, axis=0), cell_pixels, axis=1)


def psnr(a, b):
    """Peak signal-to-noise ratio in dB with peak 1.0; ``inf`` for identical images."""
    a = check_image(a, name="a", dtype=np.float64)
    b = check_image(b, name="b", dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def frequency_bands(n):
    """Boolean masks ``(low, high)`` splitting an ``n x n`` bank at ``u + v = n/2``."""
    u, v = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    low = (u + v) < n / 2
    return low, ~low


def band_statistics(q, tolerance=UNCHANGED_TOLERANCE):
    """Fraction of entries left (nearly) unchanged in the low and high bands."""
    heat = heatmap_transform(q)
    unchanged = np.abs(heat) < tolerance
    low, high = frequency_bands(heat.shape[0])
    return {
        "low_band_unchanged_fraction": float(unchanged[low].mean()),
        "high_band_unchanged_fraction": float(unchanged[high].mean()),
        "low_band_mean_heat": float(heat[low].mean()),
        "high_band_mean_heat": float(heat[high].mean()),
        "tolerance": tolerance,
    }


def _mean_or_none(values):
    return float(np.mean(values)) if len(values) else None


def summarize_report(report, clean_accuracy=None):
    """Plain-dict summary with a fixed key order, ready for JSON."""
    results = report.results
    psnrs = [r.psnr for r in results]
    finite = [p for p in psnrs if math.isfinite(p)]
    n = len(results)
    return {
        "n_images": n,
        "clean_accuracy": float(report.clean_accuracy if clean_accuracy is None else clean_accuracy),
        "robust_accuracy": float(report.robust_accuracy),
        "success_rate": float(sum(r.success for r in results) / n) if n else 0.0,
        "mean_sim_loss": _mean_or_none([r.sim_loss for r in results]),
        "mean_sim_cosine": _mean_or_none([1.0 - r.sim_loss for r in results]),
        "mean_psnr": _mean_or_none(finite),
        "n_infinite_psnr": len(psnrs) - len(finite),
        "config": report.config.to_dict(),
    }
