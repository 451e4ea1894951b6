"""Image and dataset I/O: PNG files, CIFAR-10 binary batches and synthetic data.

Images are ``(H, W, 3)`` float arrays in ``[0, 1]`` with channel order RGB.
"""

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from sklearn.model_selection import train_test_split

from .validation import check_image, check_images, check_labels

CIFAR10_RECORD_BYTES = 1 + 3 * 32 * 32
CIFAR10_CLASSES = 10
NOISE_AMPLITUDE = 0.05
CONTRAST_RANGE = (0.1, 0.1)

TEMPLATES = ("constant", "horizontal", "vertical", "diagonal", "checkerboard")


@dataclass
class LabeledDataset:
    """Images with integer class labels.

    ``images`` has shape ``(n, H, W, 3)`` and ``labels`` shape ``(n,)``.
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.images = check_images(self.images, name="images")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        self.labels = check_labels(self.labels, len(self.images), self.num_classes, name="labels")

    def __len__(self):
        return len(self.labels)

    @property
    def side(self):
        return self.images.shape[1]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[indices], self.labels[indices], self.num_classes)

    def split(self, test_size=0.2, seed=0):
        """Stratified, seeded split into ``(train, test)``."""
        idx = np.arange(len(self))
        train_idx, test_idx = train_test_split(
            idx, test_size=test_size, random_state=seed, stratify=self.labels
        )
        return self.subset(np.sort(train_idx)), self.subset(np.sort(test_idx))


def _atomic_write(path, write):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_png(path):
    """Read an 8-bit RGB or RGBA PNG into an ``(H, W, 3)`` float array.

    Alpha is discarded.
    """
    try:
        with PILImage.open(path) as im:
            if im.format != "PNG":
                raise ValueError(f"{path}: not a PNG file")
            if im.mode not in ("RGB", "RGBA"):
                raise ValueError(f"{path}: unsupported PNG mode {im.mode!r}; need 8-bit RGB or RGBA")
            data = np.asarray(im, dtype=np.uint8)
    except OSError as exc:
        raise ValueError(f"cannot read PNG {path}: {exc}") from exc
    return data[..., :3].astype(np.float64) / 255.0


def to_bytes(image):
    """Clamp to ``[0, 1]`` and quantize with round-half-up to ``uint8``."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def save_png(image, path):
    image = check_image(image)
    data = to_bytes(image)
    _atomic_write(path, lambda tmp: PILImage.fromarray(data).save(tmp, format="PNG"))


def load_cifar10_binary(path):
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR10_RECORD_BYTES:
        raise ValueError(
            f"{path}: length {raw.size} is not a positive multiple of {CIFAR10_RECORD_BYTES}"
        )
    records = raw.reshape(-1, CIFAR10_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= CIFAR10_CLASSES:
        raise ValueError(f"{path}: label byte {labels.max()} out of range")
    # planes are stored R, G, B, each 32x32 row-major
    images = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1) / 255.0
    return LabeledDataset(images, labels, CIFAR10_CLASSES)


def load_png_dir(root):
    """Load ``root/<class index>/*.png`` into a dataset.

    The number of classes is one more than the largest class directory.
    """
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"{root}: not a directory")
    class_dirs = sorted((d for d in root.iterdir() if d.is_dir() and d.name.isdigit()),
                        key=lambda d: int(d.name))
    images, labels = [], []
    for d in class_dirs:
        for f in sorted(d.glob("*.png")):
            images.append(load_png(f))
            labels.append(int(d.name))
    if not images:
        raise ValueError(f"{root}: no PNG files found under class directories")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"{root}: images have mixed sizes {sorted(shapes)}")
    return LabeledDataset(np.stack(images), np.array(labels), max(max(labels) + 1, 2))


def class_template(label, side, phase=0.0):
    """Zero-mean pattern in ``[-1, 1]`` for ``label`` on a ``side x side`` grid.

    Templates cycle every five classes; each further cycle doubles,
    triples, ... the spatial frequency.
    """
    kind = TEMPLATES[label % len(TEMPLATES)]
    mult = label // len(TEMPLATES) + 1
    i, j = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    omega = 2 * np.pi * mult / 8.0  # base period of 8 pixels
    if kind == "constant":
        return np.zeros((side, side))
    if kind == "horizontal":
        return np.sin(omega * i + phase)
    if kind == "vertical":
        return np.sin(omega * j + phase)
    if kind == "diagonal":
        return np.sin(omega * (i + j) / np.sqrt(2) + phase)
    cell = 2 * mult
    return np.where(((i // cell) + (j // cell)) % 2 == 0, 1.0, -1.0)


def generate_synthetic_dataset(num_classes, samples_per_class, side, seed, *,
                               noise=NOISE_AMPLITUDE, contrast=CONTRAST_RANGE):
    """Seeded dataset of frequency-differentiated patterns.

    Each sample is a random base colour in ``[0.3, 0.7]^3`` plus the class
    template scaled by a contrast drawn uniformly from ``contrast`` (added
    equally to all channels) plus uniform per-pixel noise in
    ``[-noise, noise]``.  The default contrast is a fixed 0.1, twice the
    noise amplitude, so classes stay separable without sitting far from
    each other's decision boundaries.
    """
    if num_classes < 2 or samples_per_class < 1 or side < 8:
        raise ValueError("need num_classes >= 2, samples_per_class >= 1 and side >= 8")
    rng = np.random.default_rng(seed)
    images = np.empty((num_classes * samples_per_class, side, side, 3))
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    for n, label in enumerate(labels):
        base = rng.uniform(0.3, 0.7, size=3)
        phase = rng.uniform(0.0, 2 * np.pi)
        amplitude = rng.uniform(*contrast)
        pattern = class_template(int(label), side, phase)
        jitter = rng.uniform(-noise, noise, size=(side, side, 3)) if noise else 0.0
        images[n] = np.clip(base + amplitude * pattern[..., None] + jitter, 0.0, 1.0)
    return LabeledDataset(images, labels, num_classes)
